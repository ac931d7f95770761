// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/cli.hpp"

int main(int argc, char** argv) { return mapprior::cli_main(argc, argv); }
