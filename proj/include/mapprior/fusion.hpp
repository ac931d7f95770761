// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mapprior/nn.hpp"
#include "mapprior/random.hpp"
#include "mapprior/voxel_grid.hpp"

#include <optional>
#include <vector>

namespace mapprior {

    // ---------------------------------------------------------------------------------------------
    // Per-modality aggregation
    // ---------------------------------------------------------------------------------------------

    struct AggregateOptions {
        /// Replace the leading (x, y, z) feature columns by pillar-relative coordinates
        /// ((x - cx) / voxel, (y - cy) / voxel, z - z_reference) before projection.
        bool pillar_local = true;
    };

    struct AggregationCache {
        VoxelizationResult vox;
        MlpCache projection;
        std::vector<int> counts;
    };

    /// Projects every point's raw feature with `projection`, voxelizes, and segment-means per pillar.
    BevFeatureGrid aggregate_modality(const FeaturePoints& points, const GridConfig& grid,
                                      const MlpParams& projection, const AggregateOptions& options = {},
                                      AggregationCache* cache = nullptr);

    /// Accumulates projection gradients given dL/d(grid features).
    void aggregate_modality_backward(const MlpParams& projection, const AggregationCache& cache,
                                     const Matrix& grad_grid, MlpParams& grad_projection);

    /// Raw features with the leading xyz columns made pillar-relative.
    Matrix localize_features(const FeaturePoints& points, std::span<const std::size_t> point_index,
                             std::span<const BevKey> keys, const GridConfig& grid);

    // ---------------------------------------------------------------------------------------------
    // Gated fusion
    // ---------------------------------------------------------------------------------------------

    /// Learnable fusion weights. The prior paths (sigma_surfel, sigma_gaussian, phi_surfel,
    /// phi_gaussian) are bias-free with zero-preserving activations, so an all-zero prior row leaves
    /// the LiDAR row untouched for any weight values.
    struct FusionParams {
        MlpParams proj_lidar;
        MlpParams proj_surfel;
        MlpParams proj_gaussian;
        MlpParams sigma_in;
        MlpParams sigma_surfel;
        MlpParams sigma_inter;
        MlpParams sigma_gaussian;
        MlpParams phi_surfel;
        MlpParams phi_gaussian;

        static FusionParams make(Eigen::Index d, Eigen::Index lidar_dim, std::uint64_t seed);

        Eigen::Index dim() const { return sigma_in.out_dim(); }
        /// Throws ShapeError or ConfigError if the structural constraints are broken.
        void validate() const;
    };

    struct FusionInputs {
        const Matrix& lidar;
        const Matrix& surfel;
        const Matrix& gaussian;
    };

    struct GatedFusionCache {
        MlpCache sigma_in, sigma_surfel, phi_surfel, sigma_inter, sigma_gaussian, phi_gaussian;
        Matrix gate_in_pre;    // sigma_in(f_lidar)
        Matrix surfel_val;     // sigma_surfel(f_surfel)
        Matrix gate_inter_pre; // sigma_inter(f_inter)
        Matrix gaussian_val;   // sigma_gaussian(f_gaussian)
    };

    /// alpha_s = Swish(sigma_in(f_l)) ⊙ sigma_s(f_s); f_inter = phi_s(alpha_s) + f_l;
    /// alpha_g = Swish(sigma_inter(f_inter)) ⊙ sigma_g(f_g); f_fused = phi_g(alpha_g) + f_inter.
    /// All three inputs must have identical shape (rows aligned on one key set).
    Matrix gated_fuse(const Matrix& lidar, const Matrix& surfel, const Matrix& gaussian, const FusionParams& p,
                      GatedFusionCache* cache = nullptr);

    struct FusionInputGrads {
        Matrix lidar;
        Matrix surfel;
        Matrix gaussian;
    };

    FusionInputGrads gated_fuse_backward(const FusionParams& p, const GatedFusionCache& cache,
                                         const Matrix& grad_fused, FusionParams& grads);

    // ---------------------------------------------------------------------------------------------
    // Modality bundle, camera concatenation, dropout
    // ---------------------------------------------------------------------------------------------

    struct DropRecord {
        bool surfel_dropped = false;
        bool gaussian_dropped = false;
    };

    /// Aggregated per-modality features. lidar, surfel and gaussian share the LiDAR key set; the
    /// camera grid may cover different keys.
    struct ModalityBundle {
        BevFeatureGrid lidar;
        std::optional<BevFeatureGrid> surfel;
        std::optional<BevFeatureGrid> gaussian;
        std::optional<BevFeatureGrid> camera;
        DropRecord drops;

        /// Throws AlignmentError or ShapeError.
        void validate() const;
        /// Prior features on the LiDAR rows; zero when absent.
        Matrix surfel_or_zero() const;
        Matrix gaussian_or_zero() const;
    };

    /// Restricts `grid` to `keys`: rows for keys missing from `grid` are zero, rows of `grid` outside
    /// `keys` are discarded.
    BevFeatureGrid restrict_to_keys(const BevFeatureGrid& grid, const std::vector<BevKey>& keys);

    /// [camera | fused] over the union of both key sets, zero-filled where a side is missing.
    BevFeatureGrid concat_camera(const BevFeatureGrid& fused, const BevFeatureGrid* camera);
    BevFeatureGrid concat_camera(const BevFeatureGrid& fused, const BevFeatureGrid& camera);

    /// dL/d(fused rows) from dL/d(concatenated rows).
    Matrix concat_camera_backward(const BevFeatureGrid& fused, const BevFeatureGrid& concatenated,
                                  const Matrix& grad_concat);

    /// Independently zeroes the surfel and Gaussian features with the given probabilities.
    /// LiDAR and camera are never dropped.
    ModalityBundle apply_modality_dropout(const ModalityBundle& bundle, double p_surfel, double p_gaussian, Rng& rng);

    // ---------------------------------------------------------------------------------------------
    // Comparison strategies for ablations. Only gated fusion is a supported production path.
    // ---------------------------------------------------------------------------------------------

    enum class FusionStrategy : std::uint8_t { Gated = 0, Concat = 1, Sum = 2, Average = 3 };

    const char* to_string(FusionStrategy s);
    FusionStrategy parse_fusion_strategy(const std::string& name);

    /// Hierarchical concatenation: h = M1([f_l, f_s]); f = M2([h, f_g]) + f_l.
    struct ConcatFusionParams {
        MlpParams merge_surfel;
        MlpParams merge_gaussian;

        static ConcatFusionParams make(Eigen::Index d, std::uint64_t seed);
    };

    struct ConcatFusionCache {
        MlpCache merge_surfel, merge_gaussian;
    };

    Matrix concat_fuse(const Matrix& lidar, const Matrix& surfel, const Matrix& gaussian,
                       const ConcatFusionParams& p, ConcatFusionCache* cache = nullptr);
    FusionInputGrads concat_fuse_backward(const ConcatFusionParams& p, const ConcatFusionCache& cache,
                                          const Matrix& grad_fused, ConcatFusionParams& grads);

    /// Element-wise sum or average of the modality rows. `present_*` flags which prior rows exist.
    Matrix sum_fuse(const Matrix& lidar, const Matrix& surfel, const Matrix& gaussian);
    Matrix average_fuse(const Matrix& lidar, const Matrix& surfel, const Matrix& gaussian,
                        std::span<const char> present_surfel, std::span<const char> present_gaussian);

} // namespace mapprior
