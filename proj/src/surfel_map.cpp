// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/surfel_map.hpp"
#include "mapprior/errors.hpp"
#include "mapprior/parallel.hpp"

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace mapprior {

    namespace {

        std::int32_t floor_div(std::int32_t a, std::int32_t b) {
            std::int32_t q = a / b;
            if ((a % b != 0) && ((a < 0) != (b < 0))) {
                --q;
            }
            return q;
        }

        using KeyedSurfel = std::pair<VoxelKey3, Surfel>;

        std::vector<KeyedSurfel> build_keyed(const PointCloud& pc, const SurfelBuildOptions& options,
                                             SurfelBuildReport& report) {
            std::vector<KeyedSurfel> out;
            std::vector<Vec3> positions;
            for (const auto& group : group_by_voxel3(pc, options.voxel_size)) {
                ++report.occupied_voxels;
                const std::size_t n = group.indices.size();
                if (n < options.min_support) {
                    ++report.below_support;
                    continue;
                }
                positions.clear();
                Vec3 sum_pos = Vec3::Zero();
                Vec3 sum_col = Vec3::Zero();
                std::set<std::uint16_t> traversals;
                for (const std::size_t i : group.indices) {
                    const Point& p = pc.points[i];
                    positions.push_back(p.position);
                    sum_pos += p.position;
                    sum_col += p.color;
                    traversals.insert(p.traversal_id);
                }
                Vec3 origin = Vec3::Zero();
                for (const auto t : traversals) {
                    origin += options.origins.origin_for(t);
                }
                origin /= static_cast<double>(traversals.size());

                Surfel s;
                try {
                    s.normal = estimate_normal(positions, origin, options.min_support);
                } catch (const DegenerateGeometryError&) {
                    ++report.degenerate;
                    continue;
                }
                s.position = sum_pos / static_cast<double>(n);
                s.color = sum_col / static_cast<double>(n);
                s.support = static_cast<std::uint32_t>(n);
                out.emplace_back(group.key, s);
                ++report.surfels;
            }
            return out;
        }

    } // namespace

    VoxelKey3 voxel_key3(const Vec3& p, double voxel_size) {
        return {static_cast<std::int32_t>(std::floor(p.x() / voxel_size)),
                static_cast<std::int32_t>(std::floor(p.y() / voxel_size)),
                static_cast<std::int32_t>(std::floor(p.z() / voxel_size))};
    }

    const Vec3& SensorOrigins::origin_for(std::uint16_t traversal_id) const {
        const auto it = by_traversal.find(traversal_id);
        return it == by_traversal.end() ? fallback : it->second;
    }

    SurfelBuildReport& SurfelBuildReport::operator+=(const SurfelBuildReport& o) {
        occupied_voxels += o.occupied_voxels;
        below_support += o.below_support;
        degenerate += o.degenerate;
        surfels += o.surfels;
        return *this;
    }

    std::vector<VoxelGroup> group_by_voxel3(const PointCloud& pc, double voxel_size) {
        if (!(voxel_size > 0.0)) {
            throw ConfigError(fmt::format("voxel size must be positive, got {}", voxel_size));
        }
        std::vector<std::pair<VoxelKey3, std::size_t>> keyed;
        keyed.reserve(pc.size());
        for (std::size_t i = 0; i < pc.size(); ++i) {
            keyed.emplace_back(voxel_key3(pc.points[i].position, voxel_size), i);
        }
        std::stable_sort(keyed.begin(), keyed.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<VoxelGroup> groups;
        for (const auto& [key, index] : keyed) {
            if (groups.empty() || groups.back().key != key) {
                groups.push_back({key, {}});
            }
            groups.back().indices.push_back(index);
        }
        return groups;
    }

    PointCloud remove_dynamic_points(const PointCloud& pc, std::span<const Box3D> boxes, double margin) {
        if (margin < 0.0) {
            throw ConfigError("box margin must be non-negative");
        }
        PointCloud out;
        out.points.reserve(pc.size());
        for (const auto& p : pc.points) {
            const bool inside = std::any_of(boxes.begin(), boxes.end(),
                                            [&](const Box3D& b) { return point_in_box(p.position, b, margin); });
            if (!inside) {
                out.points.push_back(p);
            }
        }
        return out;
    }

    Vec3 estimate_normal(std::span<const Vec3> points, const Vec3& reference_origin, std::size_t min_support) {
        if (points.size() < std::max<std::size_t>(min_support, 1)) {
            throw InsufficientSupportError(
                fmt::format("normal estimation needs {} points, got {}", min_support, points.size()));
        }
        Vec3 mean = Vec3::Zero();
        for (const auto& p : points) {
            mean += p;
        }
        mean /= static_cast<double>(points.size());
        Mat3 cov = Mat3::Zero();
        for (const auto& p : points) {
            const Vec3 d = p - mean;
            cov += d * d.transpose();
        }
        cov /= static_cast<double>(points.size());

        const Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
        const Vec3 evals = solver.eigenvalues();
        if (std::abs(evals[1] - evals[0]) <= 1e-12) {
            throw DegenerateGeometryError("smallest covariance eigenvalue is not unique");
        }
        Vec3 n = solver.eigenvectors().col(0).normalized();
        if (n.dot(reference_origin - mean) < 0.0) {
            n = -n;
        }
        return n;
    }

    SurfelMap build_surfels(const PointCloud& pc, const SurfelBuildOptions& options, SurfelBuildReport* report) {
        SurfelBuildReport local;
        auto keyed = build_keyed(pc, options, local);
        SurfelMap map;
        map.voxel_size = options.voxel_size;
        map.surfels.reserve(keyed.size());
        for (auto& [key, s] : keyed) {
            map.surfels.push_back(s);
        }
        if (report) {
            *report = local;
        }
        return map;
    }

    SurfelMap build_surfels_tiled(const PointCloud& pc, const SurfelBuildOptions& options, double tile_size,
                                  unsigned jobs, SurfelBuildReport* report) {
        if (!(options.voxel_size > 0.0)) {
            throw ConfigError("voxel size must be positive");
        }
        const double ratio = tile_size / options.voxel_size;
        const double whole = std::round(ratio);
        if (!(tile_size > 0.0) || whole < 1.0 || std::abs(ratio - whole) > 1e-9 * whole) {
            throw ConfigError(fmt::format("tile size {} is not a whole multiple of voxel size {}", tile_size,
                                          options.voxel_size));
        }
        const auto cells = static_cast<std::int32_t>(whole);

        // Tiles are assigned from the voxel key so tile borders coincide with voxel borders.
        std::map<std::pair<std::int32_t, std::int32_t>, PointCloud> tiles;
        for (const auto& p : pc.points) {
            const VoxelKey3 k = voxel_key3(p.position, options.voxel_size);
            tiles[{floor_div(k.ix, cells), floor_div(k.iy, cells)}].points.push_back(p);
        }
        std::vector<const PointCloud*> work;
        work.reserve(tiles.size());
        for (const auto& [tile, cloud] : tiles) {
            work.push_back(&cloud);
        }

        std::vector<std::vector<KeyedSurfel>> results(work.size());
        std::vector<SurfelBuildReport> reports(work.size());
        parallel_for(work.size(), jobs, [&](std::size_t i) { results[i] = build_keyed(*work[i], options, reports[i]); });

        std::vector<KeyedSurfel> merged;
        SurfelBuildReport total;
        for (std::size_t i = 0; i < work.size(); ++i) {
            merged.insert(merged.end(), results[i].begin(), results[i].end());
            total += reports[i];
        }
        std::sort(merged.begin(), merged.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

        SurfelMap map;
        map.voxel_size = options.voxel_size;
        map.surfels.reserve(merged.size());
        for (auto& [key, s] : merged) {
            map.surfels.push_back(s);
        }
        if (report) {
            *report = total;
        }
        return map;
    }

    FeaturePoints surfel_to_feature_points(const SurfelMap& map) {
        FeaturePoints fp;
        fp.positions.reserve(map.size());
        fp.features.resize(static_cast<Eigen::Index>(map.size()), kSurfelFeatureDim);
        for (std::size_t i = 0; i < map.size(); ++i) {
            const Surfel& s = map.surfels[i];
            const auto r = static_cast<Eigen::Index>(i);
            fp.positions.push_back(s.position);
            fp.features.block<1, 3>(r, 0) = s.position.transpose();
            fp.features.block<1, 3>(r, 3) = s.normal.transpose();
            fp.features.block<1, 3>(r, 6) = s.color.transpose();
            fp.features(r, 9) = std::log(static_cast<double>(std::max<std::uint32_t>(s.support, 1)));
        }
        return fp;
    }

} // namespace mapprior
