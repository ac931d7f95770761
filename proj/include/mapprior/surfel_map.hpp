// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mapprior/geom.hpp"
#include "mapprior/voxel_grid.hpp"

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace mapprior {

    struct VoxelKey3 {
        std::int32_t ix = 0;
        std::int32_t iy = 0;
        std::int32_t iz = 0;

        auto operator<=>(const VoxelKey3&) const = default;
    };

    VoxelKey3 voxel_key3(const Vec3& p, double voxel_size);

    struct Surfel {
        Vec3 position = Vec3::Zero(); // mean of the voxel's points
        Vec3 normal = Vec3::UnitZ();  // unit length
        Vec3 color = Vec3::Zero();    // mean color
        std::uint32_t support = 0;    // contributing points
    };

    struct SurfelMap {
        double voxel_size = 0.25;
        std::vector<Surfel> surfels; // voxel-key order

        std::size_t size() const noexcept { return surfels.size(); }
    };

    /// Sensor position per traversal id, used to orient normals. Ids without an entry use `fallback`.
    struct SensorOrigins {
        Vec3 fallback = Vec3::Zero();
        std::map<std::uint16_t, Vec3> by_traversal;

        SensorOrigins() = default;
        SensorOrigins(const Vec3& origin) : fallback(origin) {} // NOLINT(google-explicit-constructor)

        const Vec3& origin_for(std::uint16_t traversal_id) const;
    };

    struct SurfelBuildOptions {
        double voxel_size = 0.25;
        std::size_t min_support = 3;
        SensorOrigins origins;
    };

    struct SurfelBuildReport {
        std::size_t occupied_voxels = 0;
        std::size_t below_support = 0;
        std::size_t degenerate = 0;
        std::size_t surfels = 0;

        SurfelBuildReport& operator+=(const SurfelBuildReport& o);
    };

    /// Keeps points outside every box dilated by `margin`, in input order.
    PointCloud remove_dynamic_points(const PointCloud& pc, std::span<const Box3D> boxes, double margin = 0.1);

    /// Smallest-eigenvalue eigenvector of the point covariance, oriented toward `reference_origin`.
    /// Throws InsufficientSupportError or DegenerateGeometryError.
    Vec3 estimate_normal(std::span<const Vec3> points, const Vec3& reference_origin, std::size_t min_support = 3);

    SurfelMap build_surfels(const PointCloud& pc, const SurfelBuildOptions& options,
                            SurfelBuildReport* report = nullptr);

    /// Same result as build_surfels, computed per tile on up to `jobs` threads. `tile_size` must be a
    /// whole multiple of the voxel size.
    SurfelMap build_surfels_tiled(const PointCloud& pc, const SurfelBuildOptions& options, double tile_size,
                                  unsigned jobs = 1, SurfelBuildReport* report = nullptr);

    inline constexpr Eigen::Index kSurfelFeatureDim = 10;

    /// One pseudo-point per surfel with features [x(3), n(3), c(3), log(support)].
    FeaturePoints surfel_to_feature_points(const SurfelMap& map);

} // namespace mapprior

namespace mapprior {

    struct VoxelGroup {
        VoxelKey3 key;
        std::vector<std::size_t> indices; // input order
    };

    /// Points binned by 3D voxel, groups in key order.
    std::vector<VoxelGroup> group_by_voxel3(const PointCloud& pc, double voxel_size);

} // namespace mapprior
