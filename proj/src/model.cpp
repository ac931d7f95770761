// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/model.hpp"
#include "mapprior/errors.hpp"

#include <fmt/format.h>

#include <array>
#include <unordered_map>

namespace mapprior {

    namespace {

        constexpr std::array<BevKey, 13> kOffsets = {{
            {0, 0},
            {2, 0}, {-2, 0}, {0, 2}, {0, -2},
            {2, 2}, {2, -2}, {-2, 2}, {-2, -2},
            {5, 0}, {-5, 0}, {0, 5}, {0, -5},
        }};

        constexpr double kPriorLogit = -2.19; // sigmoid ~ 0.1 at init

        template <class Self, class Ptr>
        std::vector<Ptr> blocks_of(Self& p, bool with_camera) {
            std::vector<Ptr> out = {&p.fusion.proj_lidar,    &p.fusion.proj_surfel,  &p.fusion.proj_gaussian,
                                    &p.fusion.sigma_in,      &p.fusion.sigma_surfel, &p.fusion.sigma_inter,
                                    &p.fusion.sigma_gaussian, &p.fusion.phi_surfel,  &p.fusion.phi_gaussian,
                                    &p.concat.merge_surfel,  &p.concat.merge_gaussian, &p.head_pre,
                                    &p.head};
            if (with_camera) {
                out.push_back(&p.camera_proj);
            }
            return out;
        }

        // Scatter prior-grid gradients back from the LiDAR rows they were restricted onto.
        Matrix unrestrict(const Matrix& grad_rows, const std::vector<std::ptrdiff_t>& rows, Eigen::Index grid_rows) {
            Matrix out = Matrix::Zero(grid_rows, grad_rows.cols());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (rows[i] >= 0) {
                    out.row(rows[i]) += grad_rows.row(static_cast<Eigen::Index>(i));
                }
            }
            return out;
        }

        Matrix restrict_rows(const BevFeatureGrid& grid, const std::vector<std::ptrdiff_t>& rows, std::vector<char>& present) {
            Matrix out = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), grid.dim());
            present.assign(rows.size(), 0);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (rows[i] >= 0) {
                    out.row(static_cast<Eigen::Index>(i)) = grid.features.row(rows[i]);
                    present[i] = 1;
                }
            }
            return out;
        }

    } // namespace

    void ModelConfig::validate() const {
        grid.validate();
        if (d < 1 || head_hidden < 1) {
            throw ConfigError("model widths must be positive");
        }
        if (num_classes < 1 || heading_bins < 1) {
            throw ConfigError("num_classes and heading_bins must be positive");
        }
    }

    std::span<const BevKey> head_offsets() { return kOffsets; }

    DetectorParams DetectorParams::make(const ModelConfig& cfg) {
        cfg.validate();
        DetectorParams p;
        p.config = cfg;
        const Eigen::Index d = cfg.d;
        const Eigen::Index c = cfg.head_hidden;
        const auto k = static_cast<Eigen::Index>(kOffsets.size());
        p.fusion = FusionParams::make(d, kLidarFeatureDim, cfg.seed);
        p.concat = ConcatFusionParams::make(d, cfg.seed);
        p.head_pre = make_mlp({{2 * d, c}, true, Activation::Swish, Activation::Swish}, derive_seed(cfg.seed, 31));
        p.head = make_mlp({{k * c, c, c, cfg.layout().width()}, true, Activation::Swish, Activation::None},
                          derive_seed(cfg.seed, 32));
        const HeadLayout L = cfg.layout();
        auto& out_bias = p.head.layers.back().bias;
        for (int cls = 0; cls < cfg.num_classes; ++cls) {
            out_bias(L.heatmap(cls)) = kPriorLogit;
            out_bias(L.seg(cls)) = kPriorLogit;
        }
        p.camera_proj = make_mlp({{kCameraRawDim, d}, false, Activation::None, Activation::None}, cfg.camera_seed);
        return p;
    }

    DetectorParams DetectorParams::zeros() const {
        DetectorParams z = *this;
        for (auto* b : z.all_blocks()) {
            *b = zeros_like(*b);
        }
        return z;
    }

    std::vector<MlpParams*> DetectorParams::trainable() { return blocks_of<DetectorParams, MlpParams*>(*this, false); }
    std::vector<const MlpParams*> DetectorParams::trainable() const {
        return blocks_of<const DetectorParams, const MlpParams*>(*this, false);
    }
    std::vector<MlpParams*> DetectorParams::all_blocks() { return blocks_of<DetectorParams, MlpParams*>(*this, true); }
    std::vector<const MlpParams*> DetectorParams::all_blocks() const {
        return blocks_of<const DetectorParams, const MlpParams*>(*this, true);
    }

    std::size_t DetectorParams::trainable_count() const {
        std::size_t n = 0;
        for (const auto* b : trainable()) {
            n += b->parameter_count();
        }
        return n;
    }

    std::vector<double> DetectorParams::flatten() const {
        std::vector<double> out;
        out.reserve(trainable_count());
        for (const auto* b : trainable()) {
            for (const auto s : parameter_spans(*b)) {
                out.insert(out.end(), s.begin(), s.end());
            }
        }
        return out;
    }

    void DetectorParams::unflatten(std::span<const double> values) {
        if (values.size() != trainable_count()) {
            throw ShapeError(fmt::format("unflatten: expected {} values, got {}", trainable_count(), values.size()));
        }
        std::size_t at = 0;
        for (auto* b : trainable()) {
            for (auto s : parameter_spans(*b)) {
                std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(at), s.size(), s.begin());
                at += s.size();
            }
        }
    }

    FeaturePoints lidar_feature_points(const PointCloud& pc) {
        FeaturePoints fp;
        fp.positions.reserve(pc.points.size());
        fp.features.resize(static_cast<Eigen::Index>(pc.points.size()), kLidarFeatureDim);
        for (std::size_t i = 0; i < pc.points.size(); ++i) {
            const Point& p = pc.points[i];
            const auto r = static_cast<Eigen::Index>(i);
            fp.positions.push_back(p.position);
            fp.features.row(r) << p.position.x(), p.position.y(), p.position.z(), p.color.x(), p.color.y(),
                p.color.z(), p.intensity;
        }
        return fp;
    }

    FeaturePoints camera_raw_points(const FeaturePoints& camera, const GridConfig& grid) {
        if (camera.features.cols() != 3) {
            throw ShapeError("camera points carry r, g, b features");
        }
        FeaturePoints out;
        out.positions = camera.positions;
        out.features.resize(camera.features.rows(), kCameraRawDim);
        for (Eigen::Index r = 0; r < camera.features.rows(); ++r) {
            const auto& pos = camera.positions[static_cast<std::size_t>(r)];
            out.features.row(r) << camera.features(r, 0), camera.features(r, 1), camera.features(r, 2),
                pos.z() - grid.z_reference, 1.0;
        }
        return out;
    }

    BevFeatureGrid camera_bev(const FeaturePoints& camera, const GridConfig& grid, const MlpParams& projection) {
        return aggregate_modality(camera_raw_points(camera, grid), grid, projection, {.pillar_local = false});
    }

    HeadOutput model_forward(const DetectorParams& p, const ModalityPoints& in, ForwardCache* cache) {
        ForwardCache local;
        ForwardCache& c = cache ? *cache : local;
        const GridConfig& grid = p.config.grid;
        const AggregateOptions opt{p.config.pillar_local};
        const Eigen::Index d = p.config.d;

        const BevFeatureGrid lidar = aggregate_modality(in.lidar, grid, p.fusion.proj_lidar, opt, &c.lidar_agg);
        const auto rows = static_cast<Eigen::Index>(lidar.size());

        Matrix fs = Matrix::Zero(rows, d);
        Matrix fg = Matrix::Zero(rows, d);
        c.surfel_rows.clear();
        c.gaussian_rows.clear();
        c.present_surfel.assign(lidar.size(), 0);
        c.present_gaussian.assign(lidar.size(), 0);
        if (in.surfel && in.surfel->size() > 0) {
            c.surfel_grid = aggregate_modality(*in.surfel, grid, p.fusion.proj_surfel, opt, &c.surfel_agg);
            c.surfel_rows = row_lookup(c.surfel_grid, lidar.keys);
            if (in.zeroed.surfel_dropped) {
                c.surfel_grid.features.setZero();
                c.surfel_rows.clear();
            } else {
                fs = restrict_rows(c.surfel_grid, c.surfel_rows, c.present_surfel);
            }
        }
        if (in.gaussian && in.gaussian->size() > 0) {
            c.gaussian_grid = aggregate_modality(*in.gaussian, grid, p.fusion.proj_gaussian, opt, &c.gaussian_agg);
            c.gaussian_rows = row_lookup(c.gaussian_grid, lidar.keys);
            if (in.zeroed.gaussian_dropped) {
                c.gaussian_grid.features.setZero();
                c.gaussian_rows.clear();
            } else {
                fg = restrict_rows(c.gaussian_grid, c.gaussian_rows, c.present_gaussian);
            }
        }

        Matrix fused;
        switch (p.config.fusion) {
        case FusionStrategy::Gated: fused = gated_fuse(lidar.features, fs, fg, p.fusion, &c.gated); break;
        case FusionStrategy::Concat: fused = concat_fuse(lidar.features, fs, fg, p.concat, &c.concat); break;
        case FusionStrategy::Sum: fused = sum_fuse(lidar.features, fs, fg); break;
        case FusionStrategy::Average:
            fused = average_fuse(lidar.features, fs, fg, c.present_surfel, c.present_gaussian);
            break;
        }
        c.fused = {lidar.keys, std::move(fused)};

        if (in.camera && in.camera->size() > 0) {
            const BevFeatureGrid cam = camera_bev(*in.camera, grid, p.camera_proj);
            c.concatenated = concat_camera(c.fused, &cam);
        } else {
            c.concatenated = concat_camera(c.fused, nullptr);
        }

        const Matrix h = mlp_forward(p.head_pre, c.concatenated.features, &c.head_pre);
        const auto& keys = c.concatenated.keys;
        std::unordered_map<BevKey, std::ptrdiff_t, BevKeyHash> index;
        index.reserve(keys.size());
        for (std::size_t i = 0; i < keys.size(); ++i) {
            index.emplace(keys[i], static_cast<std::ptrdiff_t>(i));
        }
        const Eigen::Index hc = h.cols();
        const auto k = static_cast<Eigen::Index>(kOffsets.size());
        Matrix gathered = Matrix::Zero(static_cast<Eigen::Index>(keys.size()), k * hc);
        c.neighbors.assign(keys.size() * kOffsets.size(), -1);
        for (std::size_t i = 0; i < keys.size(); ++i) {
            for (std::size_t o = 0; o < kOffsets.size(); ++o) {
                const auto it = index.find({keys[i].ix + kOffsets[o].ix, keys[i].iy + kOffsets[o].iy});
                if (it == index.end()) {
                    continue;
                }
                c.neighbors[i * kOffsets.size() + o] = it->second;
                gathered.row(static_cast<Eigen::Index>(i)).segment(static_cast<Eigen::Index>(o) * hc, hc) =
                    h.row(it->second);
            }
        }

        HeadOutput out;
        out.layout = p.config.layout();
        out.keys = keys;
        out.values = mlp_forward(p.head, gathered, &c.head);
        return out;
    }

    void model_backward(const DetectorParams& p, const ForwardCache& c, const Matrix& grad_values,
                        DetectorParams& grads) {
        const Matrix d_gathered = mlp_backward(p.head, c.head, grad_values, grads.head);
        const Eigen::Index hc = p.head_pre.out_dim();
        const std::size_t k = kOffsets.size();
        const std::size_t rows = c.concatenated.keys.size();
        Matrix d_h = Matrix::Zero(static_cast<Eigen::Index>(rows), hc);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t o = 0; o < k; ++o) {
                const std::ptrdiff_t n = c.neighbors[i * k + o];
                if (n >= 0) {
                    d_h.row(n) += d_gathered.row(static_cast<Eigen::Index>(i)).segment(static_cast<Eigen::Index>(o) * hc, hc);
                }
            }
        }
        const Matrix d_concat = mlp_backward(p.head_pre, c.head_pre, d_h, grads.head_pre);
        const Matrix d_fused = concat_camera_backward(c.fused, c.concatenated, d_concat);

        FusionInputGrads g;
        switch (p.config.fusion) {
        case FusionStrategy::Gated: g = gated_fuse_backward(p.fusion, c.gated, d_fused, grads.fusion); break;
        case FusionStrategy::Concat: g = concat_fuse_backward(p.concat, c.concat, d_fused, grads.concat); break;
        case FusionStrategy::Sum: g = {d_fused, d_fused, d_fused}; break;
        case FusionStrategy::Average: {
            g = {d_fused, d_fused, d_fused};
            for (Eigen::Index r = 0; r < d_fused.rows(); ++r) {
                const auto i = static_cast<std::size_t>(r);
                const double n = 1.0 + c.present_surfel[i] + c.present_gaussian[i];
                g.lidar.row(r) /= n;
                g.surfel.row(r) /= n;
                g.gaussian.row(r) /= n;
            }
            break;
        }
        }

        aggregate_modality_backward(p.fusion.proj_lidar, c.lidar_agg, g.lidar, grads.fusion.proj_lidar);
        if (!c.surfel_rows.empty()) {
            aggregate_modality_backward(p.fusion.proj_surfel, c.surfel_agg,
                                        unrestrict(g.surfel, c.surfel_rows, static_cast<Eigen::Index>(c.surfel_grid.size())),
                                        grads.fusion.proj_surfel);
        }
        if (!c.gaussian_rows.empty()) {
            aggregate_modality_backward(
                p.fusion.proj_gaussian, c.gaussian_agg,
                unrestrict(g.gaussian, c.gaussian_rows, static_cast<Eigen::Index>(c.gaussian_grid.size())),
                grads.fusion.proj_gaussian);
        }
    }

} // namespace mapprior
