// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

namespace mapprior {

    /// Row-major dense matrix; rows are points or voxels, columns are channels.
    using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

} // namespace mapprior
