// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mapprior/geom.hpp"
#include "mapprior/matrix.hpp"

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace mapprior {

    /// Pillar index on the shared BEV grid.
    struct BevKey {
        std::int32_t ix = 0;
        std::int32_t iy = 0;

        auto operator<=>(const BevKey&) const = default;
    };

    struct BevKeyHash {
        std::size_t operator()(const BevKey& k) const noexcept {
            const auto a = static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.ix));
            const auto b = static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.iy));
            return std::hash<std::uint64_t>{}((a << 32) | b);
        }
    };

    struct GridConfig {
        double voxel_size = 0.2;        // meters
        double range = 75.0;            // points with |x| or |y| beyond this are dropped
        std::size_t max_voxels = 250000;
        double z_reference = 0.0;       // box z offsets are relative to this height

        void validate() const;
        BevKey key_of(double x, double y) const;
        Vec2 center_of(const BevKey& key) const;
        std::int32_t index_bound() const;
    };

    struct VoxelizationResult {
        std::vector<std::size_t> point_index; // input index of every kept point
        std::vector<BevKey> keys;             // per kept point
        std::vector<int> segment_ids;         // per kept point, into unique_keys
        std::vector<BevKey> unique_keys;      // lexicographic order
        std::size_t dropped_out_of_range = 0;
        std::size_t dropped_overflow = 0;
    };

    VoxelizationResult dynamic_voxelize(std::span<const Vec3> positions, const GridConfig& cfg);
    VoxelizationResult dynamic_voxelize(const PointCloud& pc, const GridConfig& cfg);

    enum class ReduceMode { Mean, Sum, Max };

    /// Row-wise reduction of `features` grouped by segment id. Empty segments are zero rows.
    Matrix segment_reduce(const Matrix& features, std::span<const int> segment_ids, std::size_t num_segments,
                          ReduceMode mode);

    /// Number of rows per segment.
    std::vector<int> segment_counts(std::span<const int> segment_ids, std::size_t num_segments);

    struct BevFeatureGrid {
        std::vector<BevKey> keys; // sorted, unique
        Matrix features;          // keys.size() x d

        std::size_t size() const noexcept { return keys.size(); }
        Eigen::Index dim() const noexcept { return features.cols(); }
        /// Row index of `key`, or -1.
        std::ptrdiff_t find(const BevKey& key) const;

        static BevFeatureGrid empty(Eigen::Index dim);
    };

    /// Sorted union of the key sets.
    std::vector<BevKey> union_keys(std::span<const BevFeatureGrid> grids);

    /// Re-indexes `grid` onto `keys` (which must contain every key of `grid`); missing rows are zero.
    BevFeatureGrid scatter_to_keys(const BevFeatureGrid& grid, const std::vector<BevKey>& keys);

    /// For each key in `keys`, its row in `grid` or -1.
    std::vector<std::ptrdiff_t> row_lookup(const BevFeatureGrid& grid, const std::vector<BevKey>& keys);

    /// All grids re-indexed onto the union of their keys. Throws ShapeError on mismatched widths.
    std::vector<BevFeatureGrid> align_grids(std::span<const BevFeatureGrid> grids);

} // namespace mapprior

namespace mapprior {

    /// Pseudo-points: a position per row plus a raw feature row.
    struct FeaturePoints {
        std::vector<Vec3> positions;
        Matrix features;

        std::size_t size() const noexcept { return positions.size(); }
    };

} // namespace mapprior
