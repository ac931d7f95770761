// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mapprior/detection.hpp"
#include "mapprior/gaussian_map.hpp"
#include "mapprior/model.hpp"
#include "mapprior/random.hpp"
#include "mapprior/scene_synth.hpp"
#include "mapprior/surfel_map.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mapprior {

    /// One training or evaluation frame. Everything is expressed in the same frame.
    struct Sample {
        std::string id;
        PointCloud lidar;
        FeaturePoints camera; // r, g, b per point
        std::optional<SurfelMap> surfel;
        std::optional<GaussianMap> gaussian;
        std::vector<LabeledBox> boxes;
    };

    struct AugmentConfig {
        double p_rotate = 0.74;
        double p_flip = 0.5;
        double scale_lo = 0.95;
        double scale_hi = 1.05; // scaling is disabled when scale_hi <= scale_lo
        double p_point_drop = 0.05;

        void validate() const;
        static AugmentConfig disabled() { return {0.0, 0.0, 1.0, 1.0, 0.0}; }
    };

    /// p -> scale * F * Rz(yaw) * p with F = diag(1, -1, 1) when flipping.
    struct AugmentTransform {
        double yaw = 0.0;
        bool flip = false;
        double scale = 1.0;

        Mat3 linear() const;
        Vec3 apply(const Vec3& p) const { return linear() * p; }
        Box3D apply(const Box3D& b) const;
    };

    AugmentTransform sample_augment_transform(Rng& rng, const AugmentConfig& cfg);

    /// Applies `t` to every modality and the boxes, then drops LiDAR points with probability
    /// `p_point_drop`. Priors are never thinned.
    Sample apply_augmentation(const Sample& s, const AugmentTransform& t, double p_point_drop, Rng& rng);
    Sample augment_sample(const Sample& s, Rng& rng, const AugmentConfig& cfg);

    struct ModalityFlags {
        bool surfel = true;
        bool gaussian = true;
        bool camera = true;
    };

    /// Feature points of the modalities that are both available and flagged.
    ModalityPoints sample_points(const Sample& s, const ModalityFlags& flags = {});

    struct TrainConfig {
        ModelConfig model;
        LossConfig loss;
        AugmentConfig augment;
        std::size_t steps = 1000;
        double lr = 0.02;
        double momentum = 0.9;
        double clip_norm = 5.0; // <= 0 disables clipping
        std::uint64_t seed = 0;
        double p_drop_surfel = 0.3;
        double p_drop_gaussian = 0.3;
        bool use_camera = true;
        int min_points = 5;
        double min_overlap = 0.1;
        double min_radius_cells = 2.0;

        void validate() const;
        TargetConfig targets() const;
    };

    struct StepLog {
        std::size_t step = 0;
        LossBreakdown loss;
        double lr = 0.0;
        std::string sample_id;
        DropRecord drops;
    };

    struct TrainResult {
        DetectorParams params;
        std::vector<StepLog> log;
    };

    /// Loss and gradient of one (already augmented) sample.
    LossBreakdown sample_loss(const DetectorParams& p, const Sample& s, const ModalityFlags& flags,
                              const TrainConfig& cfg, DetectorParams* grads);

    /// SGD with momentum and cosine decay, one sample per step, per-sample modality dropout.
    /// Throws NumericError naming the step and sample when the loss is not finite.
    TrainResult train_toy(const std::vector<Sample>& dataset, const TrainConfig& cfg);

    /// Writes "step,total,hm,bbox,seg" rows.
    std::string loss_log_csv(const std::vector<StepLog>& log);

    struct InferenceConfig {
        double score_threshold = 0.1;
        double nms_iou = 0.2;
    };

    /// Throws InputError if the sample carries no LiDAR points.
    std::vector<Detection> run_inference(const Sample& s, const DetectorParams& p, const ModalityFlags& flags,
                                         const InferenceConfig& cfg = {});

    struct MapBuildConfig {
        double voxel_size = 0.25;
        std::size_t min_support = 3;
        double removal_margin = 0.1;
    };

    /// Surfel and Gaussian maps from the union of `clouds`, each first cleared of the points inside its
    /// own entry of `boxes` (one box list per cloud).
    std::pair<SurfelMap, GaussianMap> build_prior_maps(const std::vector<PointCloud>& clouds,
                                                       const std::vector<std::vector<Box3D>>& boxes,
                                                       const SensorOrigins& origins, const MapBuildConfig& cfg);

    struct TwoPassResult {
        std::vector<std::vector<Detection>> pass1;
        std::vector<std::vector<Detection>> pass2;
        SurfelMap surfel;
        GaussianMap gaussian;
    };

    /// Map-free first pass on every frame, pooled predictions with score at least `mask_score` mask
    /// the accumulated clouds, maps are rebuilt, and a second pass runs with the new priors.
    /// Predicted boxes are grown by `mask_margin` on every side before masking, on top of the
    /// removal margin in `maps`, since map-free localization is looser than ground truth.
    TwoPassResult two_pass_inference(const std::vector<Sample>& sequence, const DetectorParams& p,
                                     const SensorOrigins& origins, const MapBuildConfig& maps,
                                     const InferenceConfig& cfg = {}, double mask_score = 0.3,
                                     double mask_margin = 0.5);

    struct BenchmarkConfig {
        std::uint64_t data_seed = 7;
        int train_scenes = 20;
        int eval_scenes = 10;
        SceneSpec scene;
        GridConfig grid;
        MapBuildConfig maps;
    };

    /// All traversal frames of a scene, each with maps built from every traversal after removing
    /// the ground-truth objects.
    std::vector<Sample> make_scene_samples(const Scene& scene, const GridConfig& grid, const MapBuildConfig& maps,
                                           const std::string& prefix);

    struct BenchmarkData {
        std::vector<Sample> train;
        std::vector<Sample> eval;
        std::vector<Scene> eval_scenes;
    };

    BenchmarkData make_benchmark(const BenchmarkConfig& cfg);

    /// Ground truth of a sample restricted to boxes with at least `min_points` LiDAR points.
    std::vector<LabeledBox> evaluation_boxes(const Sample& s, int min_points = 5);

} // namespace mapprior
