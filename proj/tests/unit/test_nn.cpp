// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/errors.hpp"
#include "mapprior/nn.hpp"
#include "mapprior/random.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mapprior;

TEST(Swish, ValuesAndAsymptote) {
    EXPECT_EQ(swish(0.0), 0.0);
    EXPECT_NEAR(swish(20.0), 20.0, 1e-6);
    EXPECT_NEAR(swish(-40.0), 0.0, 1e-14);
    EXPECT_NEAR(swish(1.0), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
}

TEST(Swish, GradientMatchesCentralDifference) {
    Rng rng(21);
    for (int i = 0; i < 17; ++i) {
        const double x = rng.uniform(-8.0, 8.0);
        const double h = 1e-5;
        const double numeric = (swish(x + h) - swish(x - h)) / (2 * h);
        const double a = swish_grad(x);
        EXPECT_LT(std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8}), 1e-6) << "x=" << x;
    }
}

TEST(Softplus, StableAtExtremes) {
    EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
    EXPECT_NEAR(softplus(800.0), 800.0, 1e-12);
    EXPECT_NEAR(softplus(-800.0), 0.0, 1e-300);
    EXPECT_TRUE(std::isfinite(softplus(1e6)));
}

TEST(Mlp, IdentityLayerAndZeroInput) {
    MlpParams p;
    Dense l;
    l.weight = Matrix::Identity(3, 3);
    l.bias = RowVector::Zero(3);
    l.activation = Activation::None;
    p.layers.push_back(l);
    Matrix x(2, 3);
    x << 1, 2, 3, -4, 5, 6;
    EXPECT_EQ(mlp_forward(p, x), x);

    const MlpParams nobias = make_mlp({{4, 5, 3}, false, Activation::Swish, Activation::Swish}, 7);
    EXPECT_EQ(mlp_forward(nobias, Matrix::Zero(6, 4)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, ShapeErrors) {
    const MlpParams p = make_mlp({{4, 5, 3}}, 1);
    EXPECT_THROW(mlp_forward(p, Matrix::Zero(2, 3)), ShapeError);
    MlpParams broken = p;
    broken.layers[1].weight = Matrix::Zero(4, 3);
    EXPECT_THROW(broken.validate(), ShapeError);
}

TEST(Mlp, InitIsReproducibleAndGlorotBounded) {
    const MlpParams a = make_mlp({{6, 8, 2}}, 99);
    const MlpParams b = make_mlp({{6, 8, 2}}, 99);
    const MlpParams c = make_mlp({{6, 8, 2}}, 100);
    EXPECT_EQ(a.layers[0].weight, b.layers[0].weight);
    EXPECT_NE(a.layers[0].weight, c.layers[0].weight);
    const double bound = std::sqrt(6.0 / (6 + 8));
    EXPECT_LE(a.layers[0].weight.cwiseAbs().maxCoeff(), bound);
    EXPECT_EQ(a.layers[0].bias.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
    Rng rng(22);
    for (int trial = 0; trial < 5; ++trial) {
        MlpParams p = make_mlp({{3, 5, 2}, true, Activation::Swish, Activation::Swish}, 30 + trial);
        for (auto s : parameter_spans(p)) {
            for (auto& v : s) {
                v += 0.3 * rng.normal();
            }
        }
        Matrix x(4, 3);
        Matrix w(4, 2);
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            x.data()[i] = rng.normal();
        }
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            w.data()[i] = rng.normal();
        }
        std::vector<double> x0;
        for (auto s : parameter_spans(std::as_const(p))) {
            x0.insert(x0.end(), s.begin(), s.end());
        }
        x0.insert(x0.end(), x.data(), x.data() + x.size());
        const LossWithGrad loss = [&](std::span<const double> v, std::span<double> grad) {
            MlpParams q = p;
            std::size_t k = 0;
            for (auto s : parameter_spans(q)) {
                for (auto& e : s) {
                    e = v[k++];
                }
            }
            Matrix xi(4, 3);
            for (Eigen::Index i = 0; i < xi.size(); ++i) {
                xi.data()[i] = v[k++];
            }
            MlpCache cache;
            const Matrix y = mlp_forward(q, xi, &cache);
            if (!grad.empty()) {
                MlpParams g = zeros_like(q);
                const Matrix gx = mlp_backward(q, cache, w, g);
                std::size_t j = 0;
                for (auto s : parameter_spans(std::as_const(g))) {
                    for (double e : s) {
                        grad[j++] = e;
                    }
                }
                for (Eigen::Index i = 0; i < gx.size(); ++i) {
                    grad[j++] = gx.data()[i];
                }
            }
            return (y.array() * w.array()).sum();
        };
        EXPECT_LT(finite_diff_check(loss, x0).max_rel_error, 1e-4);
    }
}

TEST(FiniteDiffCheck, QuadraticAndConstant) {
    const LossWithGrad quad = [](std::span<const double> x, std::span<double> g) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            s += 0.5 * x[i] * x[i];
            if (!g.empty()) {
                g[i] = x[i];
            }
        }
        return s;
    };
    const std::vector<double> x0{0.3, -1.2, 2.5, 4.0};
    EXPECT_LT(finite_diff_check(quad, x0).max_rel_error, 1e-9);
    const LossWithGrad constant = [](std::span<const double>, std::span<double> g) {
        std::fill(g.begin(), g.end(), 0.0);
        return 3.0;
    };
    const auto r = finite_diff_check(constant, x0);
    EXPECT_EQ(r.max_rel_error, 0.0);
    EXPECT_EQ(r.worst_numeric, 0.0);
    EXPECT_EQ(r.checked, x0.size());
}

TEST(FiniteDiffCheck, NonFiniteLossAborts) {
    const LossWithGrad bad = [](std::span<const double> x, std::span<double>) { return std::log(x[0]); };
    const std::vector<double> x0{-1.0};
    EXPECT_THROW(finite_diff_check(bad, x0), NumericError);
}

TEST(FiniteDiffCheck, DirectionalAgreesOnQuadratic) {
    const LossWithGrad quad = [](std::span<const double> x, std::span<double> g) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            s += (i + 1.0) * x[i] * x[i];
            if (!g.empty()) {
                g[i] = 2.0 * (i + 1.0) * x[i];
            }
        }
        return s;
    };
    const std::vector<double> x0{1.0, -2.0, 0.5};
    EXPECT_LT(directional_diff_check(quad, x0, 10, 3).max_rel_error, 1e-9);
}

TEST(Sgd, UpdateRule) {
    std::vector<double> p{1.0, 2.0};
    const std::vector<double> g{0.5, -1.0};
    SgdState st;
    sgd_step(p, g, st, 1.0, 0.0);
    EXPECT_EQ(p, (std::vector<double>{0.5, 3.0}));

    std::vector<double> q{1.0, 2.0};
    const std::vector<double> zero{0.0, 0.0};
    SgdState st2;
    sgd_step(q, zero, st2, 0.1, 0.9);
    EXPECT_EQ(q, (std::vector<double>{1.0, 2.0}));

    // Momentum: v1 = g, v2 = m g + g.
    std::vector<double> r{0.0};
    const std::vector<double> one{1.0};
    SgdState st3;
    sgd_step(r, one, st3, 0.1, 0.5);
    sgd_step(r, one, st3, 0.1, 0.5);
    EXPECT_DOUBLE_EQ(r[0], -0.1 - 0.15);
}

TEST(Sgd, QuadraticDescentBelowStabilityBound) {
    // f(x) = 0.5 a x^2 is stable for plain gradient descent when lr < 2 / a.
    const double a = 4.0;
    for (double lr : {0.05, 0.2, 0.45}) {
        std::vector<double> x{3.0};
        SgdState st;
        double prev = 0.5 * a * x[0] * x[0];
        for (int step = 0; step < 2; ++step) {
            const std::vector<double> g{a * x[0]};
            sgd_step(x, g, st, lr, 0.0);
            const double cur = 0.5 * a * x[0] * x[0];
            EXPECT_LT(cur, prev) << "lr=" << lr;
            prev = cur;
        }
    }
}

TEST(Schedule, CosineAndClip) {
    EXPECT_DOUBLE_EQ(cosine_lr(0.1, 0, 100), 0.1);
    EXPECT_NEAR(cosine_lr(0.1, 50, 100), 0.05, 1e-15);
    EXPECT_NEAR(cosine_lr(0.1, 100, 100), 0.0, 1e-15);
    std::vector<double> g{3.0, 4.0};
    EXPECT_DOUBLE_EQ(clip_grad_norm(g, 1.0), 5.0);
    EXPECT_NEAR(g[0], 0.6, 1e-15);
    EXPECT_NEAR(g[1], 0.8, 1e-15);
    std::vector<double> small{0.1};
    clip_grad_norm(small, 1.0);
    EXPECT_EQ(small[0], 0.1);
}
