// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mapprior/detection.hpp"
#include "mapprior/fusion.hpp"
#include "mapprior/gaussian_map.hpp"
#include "mapprior/surfel_map.hpp"

#include <optional>
#include <span>
#include <vector>

namespace mapprior {

    inline constexpr Eigen::Index kLidarFeatureDim = 7;  // x, y, z, r, g, b, intensity
    inline constexpr Eigen::Index kCameraRawDim = 5;     // r, g, b, height, occupancy

    struct ModelConfig {
        GridConfig grid;
        Eigen::Index d = 32;
        Eigen::Index head_hidden = 32;
        int num_classes = 1;
        int heading_bins = 12;
        FusionStrategy fusion = FusionStrategy::Gated;
        std::uint64_t seed = 0;
        std::uint64_t camera_seed = 0x5eed; // fixed camera stub projection, never trained
        bool pillar_local = true;

        void validate() const;
        HeadLayout layout() const { return {num_classes, heading_bins}; }
    };

    /// Pillar offsets gathered by the head around every row, self first.
    std::span<const BevKey> head_offsets();

    struct DetectorParams {
        ModelConfig config;
        FusionParams fusion;
        ConcatFusionParams concat;
        MlpParams head_pre; // 2d -> head_hidden, applied per row before the neighborhood gather
        MlpParams head;     // offsets * head_hidden -> head_hidden -> head_hidden -> layout width
        MlpParams camera_proj;

        static DetectorParams make(const ModelConfig& cfg);
        DetectorParams zeros() const;

        /// Learned blocks in serialization order. The camera projection is excluded.
        std::vector<MlpParams*> trainable();
        std::vector<const MlpParams*> trainable() const;
        /// Every block including the camera projection, in file order.
        std::vector<MlpParams*> all_blocks();
        std::vector<const MlpParams*> all_blocks() const;

        std::size_t trainable_count() const;
        std::vector<double> flatten() const;
        void unflatten(std::span<const double> values);
    };

    /// Raw per-modality points of one sample. Absent priors stay empty.
    struct ModalityPoints {
        FeaturePoints lidar;
        std::optional<FeaturePoints> surfel;
        std::optional<FeaturePoints> gaussian;
        std::optional<FeaturePoints> camera; // features r, g, b
        /// Priors that are present but whose aggregated features are set to zero.
        DropRecord zeroed;
    };

    FeaturePoints lidar_feature_points(const PointCloud& pc);
    /// Camera raw feature rows [r, g, b, z - z_ref, 1].
    FeaturePoints camera_raw_points(const FeaturePoints& camera, const GridConfig& grid);
    /// Pillar-mean of the camera raw features through the fixed projection.
    BevFeatureGrid camera_bev(const FeaturePoints& camera, const GridConfig& grid, const MlpParams& projection);

    struct ForwardCache {
        AggregationCache lidar_agg, surfel_agg, gaussian_agg;
        BevFeatureGrid surfel_grid, gaussian_grid;
        std::vector<std::ptrdiff_t> surfel_rows, gaussian_rows; // per lidar row
        std::vector<char> present_surfel, present_gaussian;
        GatedFusionCache gated;
        ConcatFusionCache concat;
        BevFeatureGrid fused;
        BevFeatureGrid concatenated;
        MlpCache head_pre;
        std::vector<std::ptrdiff_t> neighbors; // rows x offsets, -1 when missing
        MlpCache head;
    };

    /// Full forward pass to per-row head outputs on the union of LiDAR and camera pillars.
    HeadOutput model_forward(const DetectorParams& p, const ModalityPoints& in, ForwardCache* cache = nullptr);

    /// Accumulates dL/dparams into `grads` given dL/d(head values).
    void model_backward(const DetectorParams& p, const ForwardCache& cache, const Matrix& grad_values,
                        DetectorParams& grads);

} // namespace mapprior
