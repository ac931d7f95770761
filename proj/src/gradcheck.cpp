// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/gradcheck.hpp"
#include "mapprior/errors.hpp"

#include <array>
#include <memory>

namespace mapprior {

    namespace {

        Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale) {
            Matrix m(r, c);
            for (Eigen::Index i = 0; i < r; ++i) {
                for (Eigen::Index j = 0; j < c; ++j) {
                    m(i, j) = scale * rng.normal();
                }
            }
            return m;
        }

        std::vector<MlpParams*> fusion_blocks(FusionParams& p) {
            return {&p.sigma_in, &p.sigma_surfel, &p.sigma_inter, &p.sigma_gaussian, &p.phi_surfel, &p.phi_gaussian};
        }

        std::size_t total_size(const std::vector<MlpParams*>& blocks) {
            std::size_t n = 0;
            for (auto* b : blocks) {
                n += b->parameter_count();
            }
            return n;
        }

        void read_from(std::vector<MlpParams*> blocks, std::span<const double> x, std::size_t& at) {
            for (auto* b : blocks) {
                for (auto s : parameter_spans(*b)) {
                    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(at), s.size(), s.begin());
                    at += s.size();
                }
            }
        }

        void write_to(std::vector<MlpParams*> blocks, std::span<double> x, std::size_t& at) {
            for (auto* b : blocks) {
                for (auto s : parameter_spans(*b)) {
                    std::copy(s.begin(), s.end(), x.begin() + static_cast<std::ptrdiff_t>(at));
                    at += s.size();
                }
            }
        }

        void copy_matrix_in(Matrix& m, std::span<const double> x, std::size_t& at) {
            std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(at), m.size(), m.data());
            at += static_cast<std::size_t>(m.size());
        }

        void copy_matrix_out(const Matrix& m, std::span<double> x, std::size_t& at) {
            std::copy_n(m.data(), m.size(), x.begin() + static_cast<std::ptrdiff_t>(at));
            at += static_cast<std::size_t>(m.size());
        }

    } // namespace

    GradCheckReport fusion_gradcheck(std::uint64_t seed, Eigen::Index rows, Eigen::Index d) {
        Rng rng(derive_seed(seed, 501));
        FusionParams base = FusionParams::make(d, kLidarFeatureDim, derive_seed(seed, 502));
        // Non-zero biases so the checked point is generic.
        for (auto* b : fusion_blocks(base)) {
            for (auto& l : b->layers) {
                if (l.has_bias) {
                    l.bias = random_matrix(rng, 1, l.out_dim(), 0.3);
                }
            }
        }
        const Matrix lidar = random_matrix(rng, rows, d, 1.0);
        const Matrix surfel = random_matrix(rng, rows, d, 1.0);
        const Matrix gaussian = random_matrix(rng, rows, d, 1.0);
        const Matrix w = random_matrix(rng, rows, d, 1.0);

        std::vector<double> x0(total_size(fusion_blocks(base)) + 3 * static_cast<std::size_t>(rows * d));
        {
            std::size_t at = 0;
            write_to(fusion_blocks(base), x0, at);
            copy_matrix_out(lidar, x0, at);
            copy_matrix_out(surfel, x0, at);
            copy_matrix_out(gaussian, x0, at);
        }

        const LossWithGrad loss = [&](std::span<const double> x, std::span<double> grad) {
            FusionParams p = base;
            Matrix l = lidar, s = surfel, g = gaussian;
            std::size_t at = 0;
            read_from(fusion_blocks(p), x, at);
            copy_matrix_in(l, x, at);
            copy_matrix_in(s, x, at);
            copy_matrix_in(g, x, at);
            GatedFusionCache cache;
            const Matrix fused = gated_fuse(l, s, g, p, &cache);
            if (!grad.empty()) {
                FusionParams gp = p;
                for (auto* b : fusion_blocks(gp)) {
                    *b = zeros_like(*b);
                }
                const FusionInputGrads gi = gated_fuse_backward(p, cache, w, gp);
                std::size_t out = 0;
                write_to(fusion_blocks(gp), grad, out);
                copy_matrix_out(gi.lidar, grad, out);
                copy_matrix_out(gi.surfel, grad, out);
                copy_matrix_out(gi.gaussian, grad, out);
            }
            return fused.cwiseProduct(w).sum();
        };
        return finite_diff_check(loss, x0);
    }

    GradCheckReport head_loss_gradcheck(std::uint64_t seed) {
        Rng rng(derive_seed(seed, 511));
        GridConfig grid;
        grid.voxel_size = 0.5;
        const HeadLayout layout{2, 12};
        std::vector<BevKey> keys;
        for (int ix = -6; ix < 6; ++ix) {
            for (int iy = -6; iy < 6; ++iy) {
                if (rng.bernoulli(0.8)) {
                    keys.push_back({ix, iy});
                }
            }
        }
        std::vector<LabeledBox> boxes;
        for (int b = 0; b < 3; ++b) {
            const Box3D box{Vec3(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(0.5, 1.0)),
                            Vec3(rng.uniform(1.0, 2.5), rng.uniform(0.8, 1.5), rng.uniform(1.0, 2.0)),
                            normalize_angle(rng.uniform(-kPi, kPi))};
            boxes.push_back({box, static_cast<int>(rng.uniform_index(2))});
        }
        TargetConfig tc;
        tc.num_classes = 2;
        const Targets targets = make_targets(boxes, keys, grid, tc);
        HeadOutput head;
        head.layout = layout;
        head.keys = keys;
        head.values = random_matrix(rng, static_cast<Eigen::Index>(keys.size()), layout.width(), 0.7);
        // Keep predicted log-dims near the targets so the IoU term is active.
        for (const auto& pos : targets.positives) {
            for (int k = 0; k < 6; ++k) {
                head.values(static_cast<Eigen::Index>(pos.row), layout.box(k)) =
                    pos.box[static_cast<std::size_t>(k)] + 0.2 * rng.normal();
            }
        }
        const LossConfig cfg;
        std::vector<double> x0(head.values.data(), head.values.data() + head.values.size());
        const LossWithGrad loss = [&](std::span<const double> x, std::span<double> grad) {
            HeadOutput h = head;
            std::copy(x.begin(), x.end(), h.values.data());
            Matrix g;
            const double v = total_loss(h, targets, grid, cfg, grad.empty() ? nullptr : &g).total;
            if (!grad.empty()) {
                std::copy_n(g.data(), g.size(), grad.begin());
            }
            return v;
        };
        return finite_diff_check(loss, x0);
    }

    Sample gradcheck_sample(std::uint64_t seed) {
        // Five occupied pillars in a plus shape around the origin (voxel size 0.4); every modality
        // stays inside them so the row set is exactly five voxels.
        constexpr double kVoxel = 0.4;
        const std::array<Vec2, 5> centers = {Vec2(0.2, 0.2), Vec2(0.6, 0.2), Vec2(-0.2, 0.2), Vec2(0.2, 0.6),
                                             Vec2(0.2, -0.2)};
        Rng rng(derive_seed(seed, 521));
        const auto in_pillar = [&](std::size_t k, double zlo, double zhi) {
            const double h = 0.45 * kVoxel;
            return Vec3(centers[k].x() + rng.uniform(-h, h), centers[k].y() + rng.uniform(-h, h), rng.uniform(zlo, zhi));
        };
        Sample s;
        s.id = "gradcheck";
        const Box3D box{Vec3(0.2, 0.2, 0.8), Vec3(1.1, 0.9, 1.4), normalize_angle(rng.uniform(-kPi, kPi))};
        s.boxes.push_back({box, 0});
        for (int i = 0; i < 40; ++i) {
            Point p;
            p.position = in_pillar(static_cast<std::size_t>(i) % centers.size(), 0.0, 1.5);
            p.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
            p.intensity = rng.uniform();
            s.lidar.points.push_back(p);
        }
        SurfelMap sm;
        GaussianMap gm;
        for (int i = 0; i < 15; ++i) {
            Surfel sf;
            sf.position = in_pillar(static_cast<std::size_t>(i) % centers.size(), 0.0, 1.5);
            sf.normal = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
            sf.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
            sf.support = 3 + static_cast<std::uint32_t>(rng.uniform_index(20));
            sm.surfels.push_back(sf);

            Gaussian3D g;
            g.mean = sf.position;
            g.rotation = Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
            g.scale = Vec3(rng.uniform(0.02, 0.2), rng.uniform(0.02, 0.2), rng.uniform(0.02, 0.2));
            g.opacity = rng.uniform(0.1, 0.9);
            g.sh0 = Vec3(rng.normal(), rng.normal(), rng.normal());
            for (int k = 0; k < 9; ++k) {
                g.sh1(k / 3, k % 3) = 0.3 * rng.normal();
            }
            gm.gaussians.push_back(g);
        }
        s.surfel = sm;
        s.gaussian = gm;
        s.camera.features.resize(15, 3);
        for (int i = 0; i < 15; ++i) {
            s.camera.positions.push_back(in_pillar(static_cast<std::size_t>(i) % centers.size(), 0.5, 1.5));
            s.camera.features.row(i) << rng.uniform(), rng.uniform(), rng.uniform();
        }
        return s;
    }

    namespace {

        struct ModelProblem {
            TrainConfig cfg;
            Sample sample;
            DetectorParams base;
        };

        std::pair<LossWithGrad, std::vector<double>> model_problem(std::uint64_t seed, FusionStrategy fusion) {
            auto prob = std::make_shared<ModelProblem>();
            TrainConfig& cfg = prob->cfg;
            cfg.model.grid.voxel_size = 0.4;
            cfg.model.grid.range = 10.0;
            cfg.model.d = 4;
            cfg.model.head_hidden = 3;
            cfg.model.fusion = fusion;
            cfg.model.seed = derive_seed(seed, 531);
            cfg.min_points = 1;
            prob->sample = gradcheck_sample(seed);
            prob->base = DetectorParams::make(cfg.model);
            // Redraw every trainable weight at 1.5 / sqrt(fan_in) with zero biases. The zero-initialized
            // merge layers and the small prior projections would otherwise leave whole branches with
            // near-zero gradients, and larger scales blow the loss up past finite-difference resolution.
            // The scale was chosen on seeds 101-140, disjoint from the seeds the checks report on.
            Rng rng(derive_seed(seed, 532));
            for (auto* b : prob->base.trainable()) {
                for (auto& l : b->layers) {
                    const double scale = 1.5 / std::sqrt(static_cast<double>(l.weight.rows()));
                    for (Eigen::Index k = 0; k < l.weight.size(); ++k) {
                        l.weight.data()[k] = scale * rng.normal();
                    }
                    if (l.has_bias) {
                        l.bias.setZero();
                    }
                }
            }
            LossWithGrad loss = [prob](std::span<const double> x, std::span<double> grad) {
                DetectorParams p = prob->base;
                p.unflatten(x);
                if (grad.empty()) {
                    return sample_loss(p, prob->sample, {}, prob->cfg, nullptr).total;
                }
                DetectorParams g = p.zeros();
                const double v = sample_loss(p, prob->sample, {}, prob->cfg, &g).total;
                const auto flat = g.flatten();
                std::copy(flat.begin(), flat.end(), grad.begin());
                return v;
            };
            return {std::move(loss), prob->base.flatten()};
        }

    } // namespace

    GradCheckReport model_gradcheck(std::uint64_t seed, FusionStrategy fusion) {
        const auto [loss, x0] = model_problem(seed, fusion);
        return finite_diff_check(loss, x0);
    }

    GradCheckReport model_directional_check(std::uint64_t seed, FusionStrategy fusion, std::size_t directions) {
        const auto [loss, x0] = model_problem(seed, fusion);
        return directional_diff_check(loss, x0, directions, derive_seed(seed, 533));
    }

} // namespace mapprior
