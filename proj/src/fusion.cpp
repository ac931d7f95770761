// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/fusion.hpp"
#include "mapprior/errors.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace mapprior {

    namespace {

        Matrix swish_of(const Matrix& m) {
            return m.unaryExpr([](double v) { return swish(v); });
        }

        Matrix swish_grad_of(const Matrix& m) {
            return m.unaryExpr([](double v) { return swish_grad(v); });
        }

        void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
            if (a.rows() != b.rows() || a.cols() != b.cols()) {
                throw AlignmentError(fmt::format("{}: shape {}x{} does not match {}x{}", what, b.rows(), b.cols(),
                                                 a.rows(), a.cols()));
            }
        }

        // The sigma and phi maps are single d x d layers. The gate equations apply the Swish
        // themselves, and stacking more nonlinear layers here shrinks the prior contribution at init
        // to a product of small factors that training does not escape.
        MlpParams gate_map(Eigen::Index d, bool bias, std::uint64_t seed) {
            return make_mlp({{d, d}, bias, Activation::None, Activation::None}, seed);
        }

    } // namespace

    Matrix localize_features(const FeaturePoints& points, std::span<const std::size_t> point_index,
                             std::span<const BevKey> keys, const GridConfig& grid) {
        Matrix out(static_cast<Eigen::Index>(point_index.size()), points.features.cols());
        for (std::size_t k = 0; k < point_index.size(); ++k) {
            const auto r = static_cast<Eigen::Index>(k);
            const auto src = static_cast<Eigen::Index>(point_index[k]);
            out.row(r) = points.features.row(src);
            if (out.cols() >= 3) {
                const Vec2 c = grid.center_of(keys[k]);
                const Vec3& p = points.positions[point_index[k]];
                out(r, 0) = (p.x() - c.x()) / grid.voxel_size;
                out(r, 1) = (p.y() - c.y()) / grid.voxel_size;
                out(r, 2) = p.z() - grid.z_reference;
            }
        }
        return out;
    }

    BevFeatureGrid aggregate_modality(const FeaturePoints& points, const GridConfig& grid,
                                      const MlpParams& projection, const AggregateOptions& options,
                                      AggregationCache* cache) {
        if (static_cast<std::size_t>(points.features.rows()) != points.positions.size()) {
            throw ShapeError("aggregate_modality: positions and feature rows differ");
        }
        if (projection.in_dim() != points.features.cols()) {
            throw ShapeError(fmt::format("aggregate_modality: projection expects {} raw dims, points have {}",
                                         projection.in_dim(), points.features.cols()));
        }
        AggregationCache local;
        AggregationCache& c = cache ? *cache : local;
        c.vox = dynamic_voxelize(points.positions, grid);

        Matrix raw;
        if (options.pillar_local) {
            raw = localize_features(points, c.vox.point_index, c.vox.keys, grid);
        } else {
            raw.resize(static_cast<Eigen::Index>(c.vox.point_index.size()), points.features.cols());
            for (std::size_t k = 0; k < c.vox.point_index.size(); ++k) {
                raw.row(static_cast<Eigen::Index>(k)) = points.features.row(static_cast<Eigen::Index>(c.vox.point_index[k]));
            }
        }
        const Matrix projected = mlp_forward(projection, raw, cache ? &c.projection : nullptr);
        c.counts = segment_counts(c.vox.segment_ids, c.vox.unique_keys.size());
        BevFeatureGrid out;
        out.keys = c.vox.unique_keys;
        out.features = segment_reduce(projected, c.vox.segment_ids, out.keys.size(), ReduceMode::Mean);
        return out;
    }

    void aggregate_modality_backward(const MlpParams& projection, const AggregationCache& cache,
                                     const Matrix& grad_grid, MlpParams& grad_projection) {
        const auto n = static_cast<Eigen::Index>(cache.vox.segment_ids.size());
        Matrix grad_points(n, grad_grid.cols());
        for (Eigen::Index i = 0; i < n; ++i) {
            const int s = cache.vox.segment_ids[static_cast<std::size_t>(i)];
            grad_points.row(i) = grad_grid.row(s) / static_cast<double>(cache.counts[static_cast<std::size_t>(s)]);
        }
        mlp_backward(projection, cache.projection, grad_points, grad_projection);
    }

    FusionParams FusionParams::make(Eigen::Index d, Eigen::Index lidar_dim, std::uint64_t seed) {
        FusionParams p;
        p.proj_lidar = make_mlp({{lidar_dim, d, d}, true, Activation::Swish, Activation::None}, derive_seed(seed, 1));
        p.proj_surfel = make_mlp({{10, d, d}, true, Activation::Swish, Activation::None}, derive_seed(seed, 2));
        p.proj_gaussian = make_mlp({{25, d, d}, true, Activation::Swish, Activation::None}, derive_seed(seed, 3));
        p.sigma_in = gate_map(d, true, derive_seed(seed, 4));
        p.sigma_surfel = gate_map(d, false, derive_seed(seed, 5));
        p.sigma_inter = gate_map(d, true, derive_seed(seed, 6));
        p.sigma_gaussian = gate_map(d, false, derive_seed(seed, 7));
        p.phi_surfel = gate_map(d, false, derive_seed(seed, 8));
        p.phi_gaussian = gate_map(d, false, derive_seed(seed, 9));
        return p;
    }

    void FusionParams::validate() const {
        const Eigen::Index d = dim();
        const std::pair<const MlpParams*, const char*> all[] = {
            {&sigma_in, "sigma_in"},       {&sigma_surfel, "sigma_surfel"},     {&sigma_inter, "sigma_inter"},
            {&sigma_gaussian, "sigma_gaussian"}, {&phi_surfel, "phi_surfel"}, {&phi_gaussian, "phi_gaussian"}};
        for (const auto& [mlp, name] : all) {
            mlp->validate();
            if (mlp->in_dim() != d || mlp->out_dim() != d) {
                throw ShapeError(fmt::format("{} must map {} -> {}", name, d, d));
            }
        }
        for (const auto* mlp : {&sigma_surfel, &sigma_gaussian, &phi_surfel, &phi_gaussian}) {
            for (const auto& l : mlp->layers) {
                if (l.has_bias) {
                    throw ConfigError("prior-path fusion MLPs must be bias-free");
                }
                // Every supported activation satisfies f(0) = 0.
            }
        }
        for (const auto* proj : {&proj_lidar, &proj_surfel, &proj_gaussian}) {
            proj->validate();
            if (proj->out_dim() != d) {
                throw ShapeError(fmt::format("input projections must output {} channels", d));
            }
        }
    }

    Matrix gated_fuse(const Matrix& lidar, const Matrix& surfel, const Matrix& gaussian, const FusionParams& p,
                      GatedFusionCache* cache) {
        check_same_shape(lidar, surfel, "gated_fuse surfel");
        check_same_shape(lidar, gaussian, "gated_fuse gaussian");
        if (lidar.cols() != p.dim()) {
            throw ShapeError(fmt::format("gated_fuse: features have {} channels, params expect {}", lidar.cols(), p.dim()));
        }
        GatedFusionCache local;
        GatedFusionCache& c = cache ? *cache : local;

        c.gate_in_pre = mlp_forward(p.sigma_in, lidar, &c.sigma_in);
        c.surfel_val = mlp_forward(p.sigma_surfel, surfel, &c.sigma_surfel);
        const Matrix alpha_surfel = swish_of(c.gate_in_pre).cwiseProduct(c.surfel_val);
        const Matrix inter = mlp_forward(p.phi_surfel, alpha_surfel, &c.phi_surfel) + lidar;

        c.gate_inter_pre = mlp_forward(p.sigma_inter, inter, &c.sigma_inter);
        c.gaussian_val = mlp_forward(p.sigma_gaussian, gaussian, &c.sigma_gaussian);
        const Matrix alpha_gaussian = swish_of(c.gate_inter_pre).cwiseProduct(c.gaussian_val);
        return mlp_forward(p.phi_gaussian, alpha_gaussian, &c.phi_gaussian) + inter;
    }

    FusionInputGrads gated_fuse_backward(const FusionParams& p, const GatedFusionCache& c, const Matrix& grad_fused,
                                         FusionParams& grads) {
        FusionInputGrads out;
        // f_fused = phi_g(alpha_g) + f_inter
        const Matrix d_alpha_g = mlp_backward(p.phi_gaussian, c.phi_gaussian, grad_fused, grads.phi_gaussian);
        const Matrix gate_inter = swish_of(c.gate_inter_pre);
        const Matrix d_gate_inter_pre = d_alpha_g.cwiseProduct(c.gaussian_val).cwiseProduct(swish_grad_of(c.gate_inter_pre));
        out.gaussian = mlp_backward(p.sigma_gaussian, c.sigma_gaussian, d_alpha_g.cwiseProduct(gate_inter),
                                    grads.sigma_gaussian);
        const Matrix d_inter = grad_fused + mlp_backward(p.sigma_inter, c.sigma_inter, d_gate_inter_pre, grads.sigma_inter);

        // f_inter = phi_s(alpha_s) + f_lidar
        const Matrix d_alpha_s = mlp_backward(p.phi_surfel, c.phi_surfel, d_inter, grads.phi_surfel);
        const Matrix gate_in = swish_of(c.gate_in_pre);
        const Matrix d_gate_in_pre = d_alpha_s.cwiseProduct(c.surfel_val).cwiseProduct(swish_grad_of(c.gate_in_pre));
        out.surfel = mlp_backward(p.sigma_surfel, c.sigma_surfel, d_alpha_s.cwiseProduct(gate_in), grads.sigma_surfel);
        out.lidar = d_inter + mlp_backward(p.sigma_in, c.sigma_in, d_gate_in_pre, grads.sigma_in);
        return out;
    }

    void ModalityBundle::validate() const {
        for (const auto* g : {surfel ? &*surfel : nullptr, gaussian ? &*gaussian : nullptr}) {
            if (!g) {
                continue;
            }
            if (g->keys != lidar.keys) {
                throw AlignmentError("prior grid is not aligned on the LiDAR key set");
            }
            if (g->dim() != lidar.dim()) {
                throw ShapeError("prior grid width differs from the LiDAR grid");
            }
        }
        if (camera && camera->dim() != lidar.dim()) {
            throw ShapeError("camera grid width differs from the LiDAR grid");
        }
    }

    Matrix ModalityBundle::surfel_or_zero() const {
        return surfel ? surfel->features : Matrix::Zero(lidar.features.rows(), lidar.features.cols());
    }

    Matrix ModalityBundle::gaussian_or_zero() const {
        return gaussian ? gaussian->features : Matrix::Zero(lidar.features.rows(), lidar.features.cols());
    }

    BevFeatureGrid restrict_to_keys(const BevFeatureGrid& grid, const std::vector<BevKey>& keys) {
        BevFeatureGrid out{keys, Matrix::Zero(static_cast<Eigen::Index>(keys.size()), grid.dim())};
        const auto rows = row_lookup(grid, keys);
        for (std::size_t i = 0; i < keys.size(); ++i) {
            if (rows[i] >= 0) {
                out.features.row(static_cast<Eigen::Index>(i)) = grid.features.row(rows[i]);
            }
        }
        return out;
    }

    BevFeatureGrid concat_camera(const BevFeatureGrid& fused, const BevFeatureGrid* camera) {
        const Eigen::Index d = fused.dim();
        if (!camera) {
            BevFeatureGrid out{fused.keys, Matrix::Zero(fused.features.rows(), 2 * d)};
            out.features.rightCols(d) = fused.features;
            return out;
        }
        if (camera->dim() != d) {
            throw ShapeError(fmt::format("concat_camera: camera width {} != fused width {}", camera->dim(), d));
        }
        const std::vector<BevFeatureGrid> both = {*camera, fused};
        const auto keys = union_keys(both);
        BevFeatureGrid out{keys, Matrix::Zero(static_cast<Eigen::Index>(keys.size()), 2 * d)};
        const auto cam_rows = row_lookup(*camera, keys);
        const auto fused_rows = row_lookup(fused, keys);
        for (std::size_t i = 0; i < keys.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            if (cam_rows[i] >= 0) {
                out.features.row(r).leftCols(d) = camera->features.row(cam_rows[i]);
            }
            if (fused_rows[i] >= 0) {
                out.features.row(r).rightCols(d) = fused.features.row(fused_rows[i]);
            }
        }
        return out;
    }

    BevFeatureGrid concat_camera(const BevFeatureGrid& fused, const BevFeatureGrid& camera) {
        return concat_camera(fused, &camera);
    }

    Matrix concat_camera_backward(const BevFeatureGrid& fused, const BevFeatureGrid& concatenated,
                                  const Matrix& grad_concat) {
        const Eigen::Index d = fused.dim();
        Matrix grad = Matrix::Zero(fused.features.rows(), d);
        const auto rows = row_lookup(concatenated, fused.keys);
        for (std::size_t i = 0; i < fused.keys.size(); ++i) {
            grad.row(static_cast<Eigen::Index>(i)) = grad_concat.row(rows[i]).rightCols(d);
        }
        return grad;
    }

    ModalityBundle apply_modality_dropout(const ModalityBundle& bundle, double p_surfel, double p_gaussian, Rng& rng) {
        if (!(p_surfel >= 0.0 && p_surfel <= 1.0) || !(p_gaussian >= 0.0 && p_gaussian <= 1.0)) {
            throw ConfigError("dropout probabilities must lie in [0, 1]");
        }
        ModalityBundle out = bundle;
        // Both draws happen unconditionally so the random stream does not depend on which priors exist.
        out.drops.surfel_dropped = rng.bernoulli(p_surfel);
        out.drops.gaussian_dropped = rng.bernoulli(p_gaussian);
        if (out.drops.surfel_dropped && out.surfel) {
            out.surfel->features.setZero();
        }
        if (out.drops.gaussian_dropped && out.gaussian) {
            out.gaussian->features.setZero();
        }
        return out;
    }

    const char* to_string(FusionStrategy s) {
        switch (s) {
        case FusionStrategy::Gated: return "gated";
        case FusionStrategy::Concat: return "concat";
        case FusionStrategy::Sum: return "sum";
        case FusionStrategy::Average: return "average";
        }
        return "unknown";
    }

    FusionStrategy parse_fusion_strategy(const std::string& name) {
        for (const auto s : {FusionStrategy::Gated, FusionStrategy::Concat, FusionStrategy::Sum, FusionStrategy::Average}) {
            if (name == to_string(s)) {
                return s;
            }
        }
        throw ConfigError(fmt::format("unknown fusion strategy '{}'", name));
    }

    ConcatFusionParams ConcatFusionParams::make(Eigen::Index d, std::uint64_t seed) {
        ConcatFusionParams p;
        p.merge_surfel = make_mlp({{2 * d, d, d}, true, Activation::Swish, Activation::None}, derive_seed(seed, 21));
        p.merge_gaussian = make_mlp({{2 * d, d, d}, true, Activation::Swish, Activation::None}, derive_seed(seed, 22));
        return p;
    }

    Matrix concat_fuse(const Matrix& lidar, const Matrix& surfel, const Matrix& gaussian, const ConcatFusionParams& p,
                       ConcatFusionCache* cache) {
        check_same_shape(lidar, surfel, "concat_fuse surfel");
        check_same_shape(lidar, gaussian, "concat_fuse gaussian");
        const Eigen::Index d = lidar.cols();
        Matrix x1(lidar.rows(), 2 * d);
        x1 << lidar, surfel;
        const Matrix h = mlp_forward(p.merge_surfel, x1, cache ? &cache->merge_surfel : nullptr);
        Matrix x2(lidar.rows(), 2 * d);
        x2 << h, gaussian;
        return mlp_forward(p.merge_gaussian, x2, cache ? &cache->merge_gaussian : nullptr) + lidar;
    }

    FusionInputGrads concat_fuse_backward(const ConcatFusionParams& p, const ConcatFusionCache& cache,
                                          const Matrix& grad_fused, ConcatFusionParams& grads) {
        const Eigen::Index d = grad_fused.cols();
        const Matrix d_x2 = mlp_backward(p.merge_gaussian, cache.merge_gaussian, grad_fused, grads.merge_gaussian);
        const Matrix d_x1 = mlp_backward(p.merge_surfel, cache.merge_surfel, d_x2.leftCols(d), grads.merge_surfel);
        FusionInputGrads out;
        out.gaussian = d_x2.rightCols(d);
        out.surfel = d_x1.rightCols(d);
        out.lidar = grad_fused + d_x1.leftCols(d);
        return out;
    }

    Matrix sum_fuse(const Matrix& lidar, const Matrix& surfel, const Matrix& gaussian) {
        check_same_shape(lidar, surfel, "sum_fuse surfel");
        check_same_shape(lidar, gaussian, "sum_fuse gaussian");
        return lidar + surfel + gaussian;
    }

    Matrix average_fuse(const Matrix& lidar, const Matrix& surfel, const Matrix& gaussian,
                        std::span<const char> present_surfel, std::span<const char> present_gaussian) {
        Matrix out = sum_fuse(lidar, surfel, gaussian);
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
            const auto i = static_cast<std::size_t>(r);
            const double n = 1.0 + (present_surfel.empty() ? 0 : present_surfel[i]) +
                             (present_gaussian.empty() ? 0 : present_gaussian[i]);
            out.row(r) /= n;
        }
        return out;
    }

} // namespace mapprior
