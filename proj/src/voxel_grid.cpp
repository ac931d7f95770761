// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/voxel_grid.hpp"
#include "mapprior/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <limits>
#include <cmath>
#include <numeric>

namespace mapprior {

    void GridConfig::validate() const {
        if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) {
            throw ConfigError(fmt::format("voxel_size must be positive, got {}", voxel_size));
        }
        if (!(range > 0.0) || !std::isfinite(range)) {
            throw ConfigError(fmt::format("range must be positive, got {}", range));
        }
        if (max_voxels == 0) {
            throw ConfigError("max_voxels must be at least 1");
        }
    }

    BevKey GridConfig::key_of(double x, double y) const {
        return {static_cast<std::int32_t>(std::floor(x / voxel_size)),
                static_cast<std::int32_t>(std::floor(y / voxel_size))};
    }

    Vec2 GridConfig::center_of(const BevKey& key) const {
        return {(key.ix + 0.5) * voxel_size, (key.iy + 0.5) * voxel_size};
    }

    std::int32_t GridConfig::index_bound() const {
        return static_cast<std::int32_t>(std::ceil(range / voxel_size));
    }

    VoxelizationResult dynamic_voxelize(std::span<const Vec3> positions, const GridConfig& cfg) {
        cfg.validate();
        VoxelizationResult out;

        struct Entry {
            BevKey key;
            std::size_t index;
        };
        std::vector<Entry> entries;
        entries.reserve(positions.size());
        for (std::size_t i = 0; i < positions.size(); ++i) {
            const Vec3& p = positions[i];
            if (!(std::abs(p.x()) <= cfg.range && std::abs(p.y()) <= cfg.range)) {
                ++out.dropped_out_of_range;
                continue;
            }
            entries.push_back({cfg.key_of(p.x(), p.y()), i});
        }
        std::stable_sort(entries.begin(), entries.end(),
                         [](const Entry& a, const Entry& b) { return a.key < b.key; });

        struct Run {
            BevKey key;
            std::size_t count;
        };
        std::vector<Run> runs;
        for (const auto& e : entries) {
            if (runs.empty() || runs.back().key != e.key) {
                runs.push_back({e.key, 1});
            } else {
                ++runs.back().count;
            }
        }

        if (runs.size() > cfg.max_voxels) {
            // keep the densest voxels, ties by key order, then restore key order
            std::vector<Run> ranked = runs;
            std::stable_sort(ranked.begin(), ranked.end(),
                             [](const Run& a, const Run& b) { return a.count > b.count; });
            ranked.resize(cfg.max_voxels);
            std::sort(ranked.begin(), ranked.end(), [](const Run& a, const Run& b) { return a.key < b.key; });
            runs = std::move(ranked);
        }

        out.unique_keys.reserve(runs.size());
        for (const auto& r : runs) {
            out.unique_keys.push_back(r.key);
        }

        // restore input order among kept points
        std::vector<std::pair<std::size_t, int>> kept;
        kept.reserve(entries.size());
        for (const auto& e : entries) {
            const auto it = std::lower_bound(out.unique_keys.begin(), out.unique_keys.end(), e.key);
            if (it == out.unique_keys.end() || *it != e.key) {
                ++out.dropped_overflow;
                continue;
            }
            kept.emplace_back(e.index, static_cast<int>(it - out.unique_keys.begin()));
        }
        std::sort(kept.begin(), kept.end());
        out.point_index.reserve(kept.size());
        out.keys.reserve(kept.size());
        out.segment_ids.reserve(kept.size());
        for (const auto& [index, seg] : kept) {
            out.point_index.push_back(index);
            out.keys.push_back(out.unique_keys[static_cast<std::size_t>(seg)]);
            out.segment_ids.push_back(seg);
        }
        return out;
    }

    VoxelizationResult dynamic_voxelize(const PointCloud& pc, const GridConfig& cfg) {
        std::vector<Vec3> positions;
        positions.reserve(pc.size());
        for (const auto& p : pc.points) {
            positions.push_back(p.position);
        }
        return dynamic_voxelize(positions, cfg);
    }

    namespace {
        // IEEE total order, so NaN and signed zeros still give a strict weak ordering.
        std::int64_t total_order_key(double v) {
            const auto bits = std::bit_cast<std::int64_t>(v);
            return bits < 0 ? bits ^ std::numeric_limits<std::int64_t>::max() : bits;
        }
        bool total_order_less(double a, double b) { return total_order_key(a) < total_order_key(b); }
    }  // namespace

    std::vector<int> segment_counts(std::span<const int> segment_ids, std::size_t num_segments) {
        std::vector<int> counts(num_segments, 0);
        for (std::size_t i = 0; i < segment_ids.size(); ++i) {
            const int s = segment_ids[i];
            if (s < 0 || static_cast<std::size_t>(s) >= num_segments) {
                throw IndexError(fmt::format("segment id {} at row {} outside [0, {})", s, i, num_segments));
            }
            ++counts[static_cast<std::size_t>(s)];
        }
        return counts;
    }

    Matrix segment_reduce(const Matrix& features, std::span<const int> segment_ids, std::size_t num_segments,
                          ReduceMode mode) {
        if (static_cast<std::size_t>(features.rows()) != segment_ids.size()) {
            throw ShapeError(fmt::format("segment_reduce: {} feature rows but {} segment ids", features.rows(),
                                         segment_ids.size()));
        }
        const std::vector<int> counts = segment_counts(segment_ids, num_segments);
        const Eigen::Index d = features.cols();
        Matrix out = Matrix::Zero(static_cast<Eigen::Index>(num_segments), d);

        if (mode == ReduceMode::Max) {
            std::vector<char> seen(num_segments, 0);
            for (std::size_t i = 0; i < segment_ids.size(); ++i) {
                const auto s = static_cast<Eigen::Index>(segment_ids[i]);
                const auto row = features.row(static_cast<Eigen::Index>(i));
                if (!seen[static_cast<std::size_t>(s)]) {
                    out.row(s) = row;
                    seen[static_cast<std::size_t>(s)] = 1;
                } else {
                    out.row(s) = out.row(s).cwiseMax(row);
                }
            }
            return out;
        }

        // Each segment is summed in ascending value order so the result does not depend on row order.
        std::vector<std::size_t> start(num_segments + 1, 0);
        for (std::size_t s = 0; s < num_segments; ++s) {
            start[s + 1] = start[s] + static_cast<std::size_t>(counts[s]);
        }
        std::vector<std::size_t> members(segment_ids.size());
        {
            std::vector<std::size_t> fill(start.begin(), start.end() - 1);
            for (std::size_t i = 0; i < segment_ids.size(); ++i) {
                members[fill[static_cast<std::size_t>(segment_ids[i])]++] = i;
            }
        }
        std::vector<double> buf;
        for (std::size_t s = 0; s < num_segments; ++s) {
            const std::size_t n = start[s + 1] - start[s];
            if (n == 0) {
                continue;
            }
            for (Eigen::Index c = 0; c < d; ++c) {
                buf.clear();
                for (std::size_t k = start[s]; k < start[s + 1]; ++k) {
                    buf.push_back(features(static_cast<Eigen::Index>(members[k]), c));
                }
                std::sort(buf.begin(), buf.end(), total_order_less);
                double acc = 0.0;
                for (const double v : buf) {
                    acc += v;
                }
                out(static_cast<Eigen::Index>(s), c) = mode == ReduceMode::Mean ? acc / static_cast<double>(n) : acc;
            }
        }
        return out;
    }

    std::ptrdiff_t BevFeatureGrid::find(const BevKey& key) const {
        const auto it = std::lower_bound(keys.begin(), keys.end(), key);
        if (it == keys.end() || *it != key) {
            return -1;
        }
        return it - keys.begin();
    }

    BevFeatureGrid BevFeatureGrid::empty(Eigen::Index dim) {
        return {{}, Matrix::Zero(0, dim)};
    }

    std::vector<BevKey> union_keys(std::span<const BevFeatureGrid> grids) {
        std::vector<BevKey> all;
        for (const auto& g : grids) {
            all.insert(all.end(), g.keys.begin(), g.keys.end());
        }
        std::sort(all.begin(), all.end());
        all.erase(std::unique(all.begin(), all.end()), all.end());
        return all;
    }

    std::vector<std::ptrdiff_t> row_lookup(const BevFeatureGrid& grid, const std::vector<BevKey>& keys) {
        std::vector<std::ptrdiff_t> rows(keys.size(), -1);
        std::size_t j = 0;
        for (std::size_t i = 0; i < keys.size(); ++i) {
            while (j < grid.keys.size() && grid.keys[j] < keys[i]) {
                ++j;
            }
            if (j < grid.keys.size() && grid.keys[j] == keys[i]) {
                rows[i] = static_cast<std::ptrdiff_t>(j);
            }
        }
        return rows;
    }

    BevFeatureGrid scatter_to_keys(const BevFeatureGrid& grid, const std::vector<BevKey>& keys) {
        BevFeatureGrid out{keys, Matrix::Zero(static_cast<Eigen::Index>(keys.size()), grid.dim())};
        const auto rows = row_lookup(grid, keys);
        std::size_t placed = 0;
        for (std::size_t i = 0; i < keys.size(); ++i) {
            if (rows[i] >= 0) {
                out.features.row(static_cast<Eigen::Index>(i)) = grid.features.row(rows[i]);
                ++placed;
            }
        }
        if (placed != grid.size()) {
            throw AlignmentError("scatter_to_keys: target key set does not cover the grid");
        }
        return out;
    }

    std::vector<BevFeatureGrid> align_grids(std::span<const BevFeatureGrid> grids) {
        if (grids.empty()) {
            return {};
        }
        const Eigen::Index d = grids.front().dim();
        for (const auto& g : grids) {
            if (g.dim() != d) {
                throw ShapeError(fmt::format("align_grids: feature widths differ ({} vs {})", d, g.dim()));
            }
            if (static_cast<std::size_t>(g.features.rows()) != g.keys.size()) {
                throw ShapeError("align_grids: grid has mismatched key and row counts");
            }
        }
        const auto keys = union_keys(grids);
        std::vector<BevFeatureGrid> out;
        out.reserve(grids.size());
        for (const auto& g : grids) {
            out.push_back(scatter_to_keys(g, keys));
        }
        return out;
    }

} // namespace mapprior
