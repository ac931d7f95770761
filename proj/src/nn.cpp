// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/nn.hpp"
#include "mapprior/errors.hpp"
#include "mapprior/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mapprior {

    double sigmoid(double x) {
        if (x >= 0.0) {
            return 1.0 / (1.0 + std::exp(-x));
        }
        const double e = std::exp(x);
        return e / (1.0 + e);
    }

    double swish(double x) { return x * sigmoid(x); }

    double swish_grad(double x) {
        const double s = sigmoid(x);
        return s + x * s * (1.0 - s);
    }

    double softplus(double x) {
        if (x > 0.0) {
            return x + std::log1p(std::exp(-x));
        }
        return std::log1p(std::exp(x));
    }

    Eigen::Index MlpParams::in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }

    Eigen::Index MlpParams::out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

    std::size_t MlpParams::parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) {
            n += static_cast<std::size_t>(l.weight.size());
            if (l.has_bias) {
                n += static_cast<std::size_t>(l.bias.size());
            }
        }
        return n;
    }

    void MlpParams::validate() const {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            if (l.has_bias && l.bias.size() != l.out_dim()) {
                throw ShapeError(fmt::format("layer {}: bias length {} != output dim {}", i, l.bias.size(), l.out_dim()));
            }
            if (i > 0 && layers[i - 1].out_dim() != l.in_dim()) {
                throw ShapeError(fmt::format("layer {}: input dim {} does not chain with previous output {}", i,
                                             l.in_dim(), layers[i - 1].out_dim()));
            }
        }
    }

    MlpParams make_mlp(const MlpSpec& spec, std::uint64_t seed) {
        if (spec.dims.size() < 2) {
            throw ShapeError("an MLP needs at least input and output dims");
        }
        MlpParams p;
        std::uint64_t counter = 0;
        for (std::size_t i = 0; i + 1 < spec.dims.size(); ++i) {
            const Eigen::Index fan_in = spec.dims[i];
            const Eigen::Index fan_out = spec.dims[i + 1];
            Dense layer;
            layer.weight.resize(fan_in, fan_out);
            const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            for (Eigen::Index k = 0; k < layer.weight.size(); ++k) {
                layer.weight.data()[k] = a * (2.0 * counter_uniform(seed, counter++) - 1.0);
            }
            layer.has_bias = spec.bias;
            layer.bias = RowVector::Zero(fan_out);
            const bool last = i + 2 == spec.dims.size();
            layer.activation = last ? spec.output_activation : spec.hidden_activation;
            p.layers.push_back(std::move(layer));
        }
        return p;
    }

    MlpParams zeros_like(const MlpParams& p) {
        MlpParams z = p;
        for (auto& l : z.layers) {
            l.weight.setZero();
            l.bias.setZero();
        }
        return z;
    }

    Matrix mlp_forward(const MlpParams& p, const Matrix& x, MlpCache* cache) {
        if (!p.layers.empty() && x.cols() != p.in_dim()) {
            throw ShapeError(fmt::format("mlp_forward: input has {} columns, MLP expects {}", x.cols(), p.in_dim()));
        }
        if (cache) {
            cache->inputs.clear();
            cache->pre_activations.clear();
        }
        Matrix h = x;
        for (const auto& l : p.layers) {
            Matrix z = h * l.weight;
            if (l.has_bias) {
                z.rowwise() += l.bias;
            }
            if (cache) {
                cache->inputs.push_back(std::move(h));
            }
            if (l.activation == Activation::Swish) {
                h = z.unaryExpr([](double v) { return swish(v); });
            } else {
                h = z;
            }
            if (cache) {
                cache->pre_activations.push_back(std::move(z));
            }
        }
        return h;
    }

    Matrix mlp_backward(const MlpParams& p, const MlpCache& cache, const Matrix& grad_out, MlpParams& grads) {
        if (cache.inputs.size() != p.layers.size()) {
            throw ShapeError("mlp_backward: cache does not match the MLP");
        }
        Matrix g = grad_out;
        for (std::size_t k = p.layers.size(); k-- > 0;) {
            const auto& l = p.layers[k];
            auto& gl = grads.layers[k];
            if (l.activation == Activation::Swish) {
                g = g.cwiseProduct(cache.pre_activations[k].unaryExpr([](double v) { return swish_grad(v); }));
            }
            gl.weight.noalias() += cache.inputs[k].transpose() * g;
            if (l.has_bias) {
                gl.bias += g.colwise().sum();
            }
            g = g * l.weight.transpose();
        }
        return g;
    }

    std::vector<std::span<double>> parameter_spans(MlpParams& p) {
        std::vector<std::span<double>> out;
        for (auto& l : p.layers) {
            out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
            if (l.has_bias) {
                out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
            }
        }
        return out;
    }

    std::vector<std::span<const double>> parameter_spans(const MlpParams& p) {
        std::vector<std::span<const double>> out;
        for (const auto& l : p.layers) {
            out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
            if (l.has_bias) {
                out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
            }
        }
        return out;
    }

    void sgd_step(std::span<double> params, std::span<const double> grads, SgdState& state, double lr,
                  double momentum) {
        if (params.size() != grads.size()) {
            throw ShapeError(fmt::format("sgd_step: {} params but {} grads", params.size(), grads.size()));
        }
        if (state.velocity.size() != params.size()) {
            state.velocity.assign(params.size(), 0.0);
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.velocity[i] = momentum * state.velocity[i] + grads[i];
            params[i] -= lr * state.velocity[i];
        }
    }

    double cosine_lr(double initial, std::size_t step, std::size_t total_steps) {
        if (total_steps == 0) {
            return initial;
        }
        const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
        return initial * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    }

    double clip_grad_norm(std::span<double> grads, double max_norm) {
        double sq = 0.0;
        for (const double g : grads) {
            sq += g * g;
        }
        const double norm = std::sqrt(sq);
        if (max_norm > 0.0 && norm > max_norm) {
            const double s = max_norm / norm;
            for (double& g : grads) {
                g *= s;
            }
        }
        return norm;
    }

    GradCheckReport finite_diff_check(const LossWithGrad& loss, std::span<const double> x0, double h) {
        std::vector<double> x(x0.begin(), x0.end());
        std::vector<double> analytic(x.size(), 0.0);
        const double base = loss(x, analytic);
        if (!std::isfinite(base)) {
            throw NumericError(fmt::format("finite_diff_check: loss at the base point is {}", base));
        }
        GradCheckReport report;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (!std::isfinite(analytic[i])) {
                throw NumericError(fmt::format("finite_diff_check: analytic gradient {} is {}", i, analytic[i]));
            }
            const double saved = x[i];
            x[i] = saved + h;
            const double up = loss(x, {});
            x[i] = saved - h;
            const double down = loss(x, {});
            x[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError(fmt::format("finite_diff_check: loss not finite when perturbing parameter {}", i));
            }
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (rel > report.max_rel_error || report.checked == 0) {
                report.max_rel_error = rel;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
            ++report.checked;
        }
        return report;
    }

    GradCheckReport directional_diff_check(const LossWithGrad& loss, std::span<const double> x0,
                                           std::size_t directions, std::uint64_t seed, double h) {
        std::vector<double> analytic(x0.size(), 0.0);
        const double base = loss(x0, analytic);
        if (!std::isfinite(base)) {
            throw NumericError(fmt::format("directional_diff_check: loss at the base point is {}", base));
        }
        Rng rng(seed);
        GradCheckReport report;
        std::vector<double> v(x0.size());
        std::vector<double> x(x0.size());
        for (std::size_t k = 0; k < directions; ++k) {
            double norm = 0.0;
            for (auto& vi : v) {
                vi = rng.normal();
                norm += vi * vi;
            }
            norm = std::sqrt(norm);
            double a = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) {
                v[i] /= norm;
                a += analytic[i] * v[i];
            }
            for (std::size_t i = 0; i < x.size(); ++i) {
                x[i] = x0[i] + h * v[i];
            }
            const double up = loss(x, {});
            for (std::size_t i = 0; i < x.size(); ++i) {
                x[i] = x0[i] - h * v[i];
            }
            const double down = loss(x, {});
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError(fmt::format("directional_diff_check: loss not finite along direction {}", k));
            }
            const double numeric = (up - down) / (2.0 * h);
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (rel > report.max_rel_error || report.checked == 0) {
                report.max_rel_error = rel;
                report.worst_index = k;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
            ++report.checked;
        }
        return report;
    }

} // namespace mapprior
