// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mapprior/matrix.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mapprior {

    double sigmoid(double x);
    double swish(double x);
    /// d swish / dx = s + x s (1 - s) with s = sigmoid(x).
    double swish_grad(double x);
    /// log(1 + exp(x)) without overflow.
    double softplus(double x);

    enum class Activation : std::uint8_t { None = 0, Swish = 1 };

    struct Dense {
        Matrix weight;  // in x out
        RowVector bias; // out, unused when !has_bias
        bool has_bias = true;
        Activation activation = Activation::None;

        Eigen::Index in_dim() const { return weight.rows(); }
        Eigen::Index out_dim() const { return weight.cols(); }
    };

    struct MlpParams {
        std::vector<Dense> layers;

        Eigen::Index in_dim() const;
        Eigen::Index out_dim() const;
        std::size_t parameter_count() const;
        /// Throws ShapeError if consecutive layers do not chain.
        void validate() const;
    };

    struct MlpSpec {
        std::vector<Eigen::Index> dims;          // in, hidden..., out
        bool bias = true;
        Activation hidden_activation = Activation::Swish;
        Activation output_activation = Activation::None;
    };

    /// Glorot-uniform weights drawn from a counter-based stream, zero bias.
    MlpParams make_mlp(const MlpSpec& spec, std::uint64_t seed);
    MlpParams zeros_like(const MlpParams& p);

    struct MlpCache {
        std::vector<Matrix> inputs;
        std::vector<Matrix> pre_activations;
    };

    /// Per layer y = act(x W + b). Fills `cache` for the backward pass when given.
    Matrix mlp_forward(const MlpParams& p, const Matrix& x, MlpCache* cache = nullptr);

    /// Accumulates parameter gradients into `grads` and returns dL/dx.
    Matrix mlp_backward(const MlpParams& p, const MlpCache& cache, const Matrix& grad_out, MlpParams& grads);

    /// Flat views over every weight and bias, in declaration order.
    std::vector<std::span<double>> parameter_spans(MlpParams& p);
    std::vector<std::span<const double>> parameter_spans(const MlpParams& p);

    struct SgdState {
        std::vector<double> velocity;
    };

    /// v <- momentum v + g; p <- p - lr v.
    void sgd_step(std::span<double> params, std::span<const double> grads, SgdState& state, double lr,
                  double momentum);

    /// Cosine decay from `initial` at step 0 to zero at `total_steps`.
    double cosine_lr(double initial, std::size_t step, std::size_t total_steps);

    /// Scales `grads` so its L2 norm is at most `max_norm`; returns the norm before clipping.
    double clip_grad_norm(std::span<double> grads, double max_norm);

    /// Loss at `x`; when `grad` is non-empty it receives the analytic gradient.
    using LossWithGrad = std::function<double(std::span<const double> x, std::span<double> grad)>;

    struct GradCheckReport {
        double max_rel_error = 0.0;
        std::size_t worst_index = 0;
        double worst_analytic = 0.0;
        double worst_numeric = 0.0;
        std::size_t checked = 0;
    };

    /// Central differences on every coordinate; relative error |a-n| / max(|a|, |n|, 1e-8).
    /// Throws NumericError if the loss is not finite.
    GradCheckReport finite_diff_check(const LossWithGrad& loss, std::span<const double> x0, double h = 1e-5);

    /// Central differences along `directions` random unit vectors, compared with grad . v using the
    /// same relative error. Insensitive to individual near-zero gradient entries.
    GradCheckReport directional_diff_check(const LossWithGrad& loss, std::span<const double> x0,
                                           std::size_t directions, std::uint64_t seed, double h = 1e-5);

} // namespace mapprior
