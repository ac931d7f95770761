// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mapprior/nn.hpp"
#include "mapprior/trainer.hpp"

#include <cstdint>

namespace mapprior {

    /// Finite-difference check of gated fusion on random rows: every fusion MLP parameter and all
    /// three inputs, against the scalar loss sum(W ⊙ f_fused) for a random W.
    GradCheckReport fusion_gradcheck(std::uint64_t seed, Eigen::Index rows = 5, Eigen::Index d = 6);

    /// Finite-difference check of total_loss with respect to random head outputs with real targets.
    GradCheckReport head_loss_gradcheck(std::uint64_t seed);

    /// Small random sample with every modality present and a labeled box.
    Sample gradcheck_sample(std::uint64_t seed);

    /// Finite-difference check of the full sample loss with respect to every trainable parameter.
    GradCheckReport model_gradcheck(std::uint64_t seed, FusionStrategy fusion = FusionStrategy::Gated);

    /// Same problem as model_gradcheck, probed along random unit directions instead of coordinates.
    GradCheckReport model_directional_check(std::uint64_t seed, FusionStrategy fusion = FusionStrategy::Gated,
                                            std::size_t directions = 8);

} // namespace mapprior
