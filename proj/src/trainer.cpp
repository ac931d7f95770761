// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/trainer.hpp"
#include "mapprior/errors.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numeric>

namespace mapprior {

    void AugmentConfig::validate() const {
        for (const double p : {p_rotate, p_flip, p_point_drop}) {
            if (!(p >= 0.0 && p <= 1.0)) {
                throw ConfigError("augmentation probabilities must lie in [0, 1]");
            }
        }
        if (!(scale_lo > 0.0 && scale_hi > 0.0)) {
            throw ConfigError("scale range must be positive");
        }
    }

    Mat3 AugmentTransform::linear() const {
        Mat3 a = yaw_matrix(yaw);
        if (flip) {
            a.row(1) *= -1.0;
        }
        return scale * a;
    }

    Box3D AugmentTransform::apply(const Box3D& b) const {
        Box3D out = b;
        out.center = apply(b.center);
        out.dims = scale * b.dims;
        out.yaw = normalize_angle(flip ? -(b.yaw + yaw) : b.yaw + yaw);
        return out;
    }

    AugmentTransform sample_augment_transform(Rng& rng, const AugmentConfig& cfg) {
        cfg.validate();
        // Every draw happens regardless of the outcome so the stream layout is fixed.
        const bool rotate = rng.bernoulli(cfg.p_rotate);
        const double yaw = rng.uniform(-kPi, kPi);
        const bool flip = rng.bernoulli(cfg.p_flip);
        const double u = rng.uniform();
        AugmentTransform t;
        t.yaw = rotate ? yaw : 0.0;
        t.flip = flip;
        t.scale = cfg.scale_hi > cfg.scale_lo ? cfg.scale_lo + (cfg.scale_hi - cfg.scale_lo) * u : 1.0;
        return t;
    }

    Sample apply_augmentation(const Sample& s, const AugmentTransform& t, double p_point_drop, Rng& rng) {
        const Mat3 a = t.linear();
        const Mat3 q = a / t.scale; // orthogonal part
        Sample out;
        out.id = s.id;
        out.lidar.points.reserve(s.lidar.points.size());
        for (const auto& p : s.lidar.points) {
            const bool drop = rng.bernoulli(p_point_drop);
            if (drop) {
                continue;
            }
            Point moved = p;
            moved.position = a * p.position;
            out.lidar.points.push_back(moved);
        }
        out.camera.features = s.camera.features;
        out.camera.positions.reserve(s.camera.positions.size());
        for (const auto& p : s.camera.positions) {
            out.camera.positions.push_back(a * p);
        }
        if (s.surfel) {
            SurfelMap m = *s.surfel;
            for (auto& sf : m.surfels) {
                sf.position = a * sf.position;
                sf.normal = (q * sf.normal).normalized();
            }
            out.surfel = std::move(m);
        }
        if (s.gaussian) {
            GaussianMap m = *s.gaussian;
            Mat3 local_flip = Mat3::Identity();
            if (t.flip) {
                local_flip(1, 1) = -1.0; // keeps the frame proper; the covariance is unchanged
            }
            for (auto& g : m.gaussians) {
                g.mean = a * g.mean;
                const Mat3 r = q * g.rotation.toRotationMatrix() * local_flip;
                Quat qr(r);
                qr.normalize();
                if (qr.w() < 0.0) {
                    qr.coeffs() *= -1.0;
                }
                g.rotation = qr;
                g.scale *= t.scale;
                g.sh1 = rotate_sh1(g.sh1, q);
            }
            out.gaussian = std::move(m);
        }
        out.boxes.reserve(s.boxes.size());
        for (const auto& b : s.boxes) {
            out.boxes.push_back({t.apply(b.box), b.class_id});
        }
        return out;
    }

    Sample augment_sample(const Sample& s, Rng& rng, const AugmentConfig& cfg) {
        const AugmentTransform t = sample_augment_transform(rng, cfg);
        return apply_augmentation(s, t, cfg.p_point_drop, rng);
    }

    ModalityPoints sample_points(const Sample& s, const ModalityFlags& flags) {
        ModalityPoints mp;
        mp.lidar = lidar_feature_points(s.lidar);
        if (flags.surfel && s.surfel) {
            mp.surfel = surfel_to_feature_points(*s.surfel);
        }
        if (flags.gaussian && s.gaussian) {
            mp.gaussian = gaussian_to_feature_points(*s.gaussian);
        }
        if (flags.camera && s.camera.size() > 0) {
            mp.camera = s.camera;
        }
        return mp;
    }

    void TrainConfig::validate() const {
        model.validate();
        loss.validate();
        augment.validate();
        if (steps < 1) {
            throw ConfigError("steps must be at least 1");
        }
        if (!(lr >= 0.0) || !(momentum >= 0.0 && momentum < 1.0)) {
            throw ConfigError("lr must be non-negative and momentum in [0, 1)");
        }
        if (!(p_drop_surfel >= 0.0 && p_drop_surfel <= 1.0) || !(p_drop_gaussian >= 0.0 && p_drop_gaussian <= 1.0)) {
            throw ConfigError("dropout probabilities must lie in [0, 1]");
        }
        if (loss.heading_bins != model.heading_bins) {
            throw ConfigError("loss and model disagree on the heading bin count");
        }
    }

    TargetConfig TrainConfig::targets() const {
        TargetConfig t;
        t.num_classes = model.num_classes;
        t.heading_bins = model.heading_bins;
        t.min_radius_cells = min_radius_cells;
        t.min_overlap = min_overlap;
        t.min_points = min_points;
        return t;
    }

    LossBreakdown sample_loss(const DetectorParams& p, const Sample& s, const ModalityFlags& flags,
                              const TrainConfig& cfg, DetectorParams* grads) {
        ForwardCache cache;
        const HeadOutput head = model_forward(p, sample_points(s, flags), &cache);
        const std::vector<int> counts = count_points_in_boxes(s.lidar, s.boxes);
        const Targets targets = make_targets(s.boxes, head.keys, p.config.grid, cfg.targets(), counts);
        Matrix grad;
        const LossBreakdown loss = total_loss(head, targets, p.config.grid, cfg.loss, grads ? &grad : nullptr);
        if (grads) {
            model_backward(p, cache, grad, *grads);
        }
        return loss;
    }

    TrainResult train_toy(const std::vector<Sample>& dataset, const TrainConfig& cfg) {
        cfg.validate();
        if (dataset.empty()) {
            throw InputError("train_toy: empty dataset");
        }
        ModelConfig mc = cfg.model;
        mc.seed = cfg.seed;
        TrainResult res{DetectorParams::make(mc), {}};
        DetectorParams& params = res.params;

        Rng rng(derive_seed(cfg.seed, 77));
        std::vector<std::size_t> order(dataset.size());
        std::size_t cursor = order.size();
        std::vector<double> flat = params.flatten();
        SgdState state;

        for (std::size_t step = 0; step < cfg.steps; ++step) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), std::size_t{0});
                for (std::size_t i = order.size(); i > 1; --i) {
                    std::swap(order[i - 1], order[rng.uniform_index(i)]);
                }
                cursor = 0;
            }
            const Sample& base = dataset[order[cursor++]];
            const Sample aug = augment_sample(base, rng, cfg.augment);
            DropRecord drops;
            drops.surfel_dropped = rng.bernoulli(cfg.p_drop_surfel);
            drops.gaussian_dropped = rng.bernoulli(cfg.p_drop_gaussian);
            const ModalityFlags flags{!drops.surfel_dropped, !drops.gaussian_dropped, cfg.use_camera};

            DetectorParams grads = params.zeros();
            const LossBreakdown loss = sample_loss(params, aug, flags, cfg, &grads);
            if (!std::isfinite(loss.total)) {
                throw NumericError(fmt::format("non-finite loss at step {} on sample '{}'", step, base.id));
            }
            std::vector<double> g = grads.flatten();
            if (cfg.clip_norm > 0.0) {
                clip_grad_norm(g, cfg.clip_norm);
            }
            const double lr = cosine_lr(cfg.lr, step, cfg.steps);
            sgd_step(flat, g, state, lr, cfg.momentum);
            params.unflatten(flat);
            res.log.push_back({step, loss, lr, base.id, drops});
        }
        return res;
    }

    std::string loss_log_csv(const std::vector<StepLog>& log) {
        std::string out = "step,total,hm,bbox,seg\n";
        for (const auto& s : log) {
            out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", s.step, s.loss.total, s.loss.heatmap,
                               s.loss.bbox, s.loss.seg);
        }
        return out;
    }

    std::vector<Detection> run_inference(const Sample& s, const DetectorParams& p, const ModalityFlags& flags,
                                         const InferenceConfig& cfg) {
        if (s.lidar.points.empty()) {
            throw InputError(fmt::format("sample '{}' has no LiDAR points", s.id));
        }
        const HeadOutput head = model_forward(p, sample_points(s, flags));
        return nms_bev(decode_boxes(head, p.config.grid, cfg.score_threshold), cfg.nms_iou);
    }

    std::pair<SurfelMap, GaussianMap> build_prior_maps(const std::vector<PointCloud>& clouds,
                                                       const std::vector<std::vector<Box3D>>& boxes,
                                                       const SensorOrigins& origins, const MapBuildConfig& cfg) {
        if (boxes.size() != clouds.size()) {
            throw ShapeError("build_prior_maps: one box list per cloud is required");
        }
        PointCloud merged;
        for (std::size_t i = 0; i < clouds.size(); ++i) {
            const PointCloud kept = remove_dynamic_points(clouds[i], boxes[i], cfg.removal_margin);
            merged.points.insert(merged.points.end(), kept.points.begin(), kept.points.end());
        }
        SurfelBuildOptions so;
        so.voxel_size = cfg.voxel_size;
        so.min_support = cfg.min_support;
        so.origins = origins;
        GaussianInitOptions go;
        go.voxel_size = cfg.voxel_size;
        go.min_support = cfg.min_support;
        return {build_surfels(merged, so), init_gaussians_from_lidar(merged, go)};
    }

    TwoPassResult two_pass_inference(const std::vector<Sample>& sequence, const DetectorParams& p,
                                     const SensorOrigins& origins, const MapBuildConfig& maps,
                                     const InferenceConfig& cfg, double mask_score, double mask_margin) {
        if (!(mask_margin >= 0.0) || !std::isfinite(mask_margin)) {
            throw ConfigError("mask margin must be a finite non-negative length");
        }
        TwoPassResult res;
        std::vector<Box3D> pooled;
        for (const auto& s : sequence) {
            res.pass1.push_back(run_inference(s, p, {false, false, true}, cfg));
            for (const auto& d : res.pass1.back()) {
                if (d.score >= mask_score) {
                    Box3D grown = d.box;
                    grown.dims.array() += 2.0 * mask_margin;
                    pooled.push_back(grown);
                }
            }
        }
        std::vector<PointCloud> clouds;
        for (const auto& s : sequence) {
            clouds.push_back(s.lidar);
        }
        auto [surfel, gaussian] =
            build_prior_maps(clouds, std::vector<std::vector<Box3D>>(clouds.size(), pooled), origins, maps);
        for (const auto& s : sequence) {
            Sample with = s;
            with.surfel = surfel;
            with.gaussian = gaussian;
            res.pass2.push_back(run_inference(with, p, {true, true, true}, cfg));
        }
        res.surfel = std::move(surfel);
        res.gaussian = std::move(gaussian);
        return res;
    }

    std::vector<Sample> make_scene_samples(const Scene& scene, const GridConfig& grid, const MapBuildConfig& maps,
                                           const std::string& prefix) {
        const int frames = scene.spec.traversals;
        std::vector<PointCloud> clouds;
        std::vector<std::vector<Box3D>> boxes;
        SensorOrigins origins;
        for (int f = 0; f < frames; ++f) {
            clouds.push_back(simulate_lidar_scan(scene, f));
            std::vector<Box3D> bf;
            for (const auto& b : scene.boxes_at(f)) {
                bf.push_back(b.box);
            }
            boxes.push_back(std::move(bf));
            origins.by_traversal[static_cast<std::uint16_t>(f)] = scene.sensor_origins[static_cast<std::size_t>(f)];
        }
        auto [surfel, gaussian] = build_prior_maps(clouds, boxes, origins, maps);
        std::vector<Sample> out;
        for (int f = 0; f < frames; ++f) {
            Sample s;
            s.id = fmt::format("{}/{}", prefix, f);
            s.lidar = std::move(clouds[static_cast<std::size_t>(f)]);
            s.camera = synth_camera_points(scene, f, grid);
            s.surfel = surfel;
            s.gaussian = gaussian;
            s.boxes = scene.boxes_at(f);
            out.push_back(std::move(s));
        }
        return out;
    }

    BenchmarkData make_benchmark(const BenchmarkConfig& cfg) {
        BenchmarkData data;
        for (int i = 0; i < cfg.train_scenes + cfg.eval_scenes; ++i) {
            const bool train = i < cfg.train_scenes;
            SceneSpec spec = cfg.scene;
            spec.seed = derive_seed(cfg.data_seed, static_cast<std::uint64_t>(i));
            Scene scene = generate_scene(spec);
            auto samples = make_scene_samples(scene, cfg.grid, cfg.maps, fmt::format("{}{}", train ? "train" : "eval", i));
            auto& dst = train ? data.train : data.eval;
            for (auto& s : samples) {
                dst.push_back(std::move(s));
            }
            if (!train) {
                data.eval_scenes.push_back(std::move(scene));
            }
        }
        return data;
    }

    std::vector<LabeledBox> evaluation_boxes(const Sample& s, int min_points) {
        const auto counts = count_points_in_boxes(s.lidar, s.boxes);
        std::vector<LabeledBox> out;
        for (std::size_t i = 0; i < s.boxes.size(); ++i) {
            if (counts[i] >= min_points) {
                out.push_back(s.boxes[i]);
            }
        }
        return out;
    }

} // namespace mapprior
