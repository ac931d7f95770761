// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mapprior/io.hpp"
#include "mapprior/trainer.hpp"

#include <string>
#include <vector>

namespace mapprior {

    enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

    /// Training and model settings from the [model], [train] and [augment] sections.
    TrainConfig train_config_from(const Config& cfg);
    /// Dataset settings from the [data], [scene] and [maps] sections; the grid follows [model].
    BenchmarkConfig benchmark_config_from(const Config& cfg);
    SceneSpec scene_spec_from(const Config& cfg);

    int cli_main(int argc, const char* const* argv);
    int cli_main(const std::vector<std::string>& args);

} // namespace mapprior
