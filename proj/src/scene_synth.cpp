// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/scene_synth.hpp"
#include "mapprior/errors.hpp"
#include "mapprior/model.hpp"
#include "mapprior/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>

namespace mapprior {

    namespace {

        const Vec3 kPalette[] = {
            {0.80, 0.10, 0.10}, {0.10, 0.20, 0.70}, {0.90, 0.90, 0.90}, {0.10, 0.10, 0.10}, {0.60, 0.60, 0.65},
        };

        bool footprints_overlap(const Box3D& a, const Box3D& b, double margin) {
            Box3D ga = a;
            Box3D gb = b;
            ga.dims.x() += 2.0 * margin;
            ga.dims.y() += 2.0 * margin;
            gb.dims.x() += 2.0 * margin;
            gb.dims.y() += 2.0 * margin;
            return iou_bev_rotated(ga, gb) > 0.0;
        }

        bool boxes_overlap(const Box3D& a, const Box3D& b) { return iou_3d_rotated(a, b) > 0.0; }

        bool bev_inside(const Box3D& box, double x, double y) {
            const double dx = x - box.center.x();
            const double dy = y - box.center.y();
            const double c = std::cos(box.yaw);
            const double s = std::sin(box.yaw);
            return std::abs(c * dx + s * dy) <= 0.5 * box.dims.x() && std::abs(-s * dx + c * dy) <= 0.5 * box.dims.y();
        }

        Box3D vehicle_box(Rng& rng, double x, double y, double yaw) {
            const double l = rng.uniform(3.8, 5.0);
            const double w = rng.uniform(1.7, 2.1);
            const double h = rng.uniform(1.4, 1.8);
            return {Vec3(x, y, 0.5 * h), Vec3(l, w, h), normalize_angle(yaw)};
        }

        struct Face {
            Vec3 center, u, v, normal;
            double half_u, half_v;
        };

        // Top and four side faces; the bottom is never visible from above ground.
        std::vector<Face> box_faces(const Box3D& b) {
            const Mat3 r = yaw_matrix(b.yaw);
            const Vec3 ex = r.col(0), ey = r.col(1), ez = Vec3::UnitZ();
            const double hl = 0.5 * b.dims.x(), hw = 0.5 * b.dims.y(), hh = 0.5 * b.dims.z();
            return {
                {b.center + hh * ez, ex, ey, ez, hl, hw},
                {b.center + hl * ex, ey, ez, ex, hw, hh},
                {b.center - hl * ex, ey, ez, -ex, hw, hh},
                {b.center + hw * ey, ex, ez, ey, hl, hh},
                {b.center - hw * ey, ex, ez, -ey, hl, hh},
            };
        }

        class Sampler {
        public:
            Sampler(const SceneSpec& spec, const Vec3& origin, std::uint16_t traversal, Rng& rng, PointCloud& out)
                : spec_(spec), origin_(origin), traversal_(traversal), rng_(rng), out_(out) {}

            template <class Keep>
            void face(const Face& f, const Vec3& color, double intensity, Keep&& keep) {
                if (f.normal.dot(origin_ - f.center) <= 0.0) {
                    return;
                }
                const double spacing = 1.0 / std::sqrt(spec_.point_density);
                const auto nu = static_cast<int>(std::ceil(2.0 * f.half_u / spacing));
                const auto nv = static_cast<int>(std::ceil(2.0 * f.half_v / spacing));
                for (int i = 0; i < nu; ++i) {
                    for (int j = 0; j < nv; ++j) {
                        const double a = -f.half_u + 2.0 * f.half_u * (i + rng_.uniform()) / nu;
                        const double b = -f.half_v + 2.0 * f.half_v * (j + rng_.uniform()) / nv;
                        const Vec3 p = f.center + a * f.u + b * f.v;
                        const double r = (p - origin_).head<2>().norm();
                        const double accept = r <= spec_.density_range ? 1.0 : std::pow(spec_.density_range / r, 2);
                        if (!rng_.bernoulli(accept) || !keep(p)) {
                            continue;
                        }
                        Point pt;
                        pt.position = p;
                        if (spec_.noise_sigma > 0.0) {
                            pt.position += spec_.noise_sigma * Vec3(rng_.normal(), rng_.normal(), rng_.normal());
                        }
                        pt.color = color;
                        pt.intensity = intensity;
                        pt.traversal_id = traversal_;
                        out_.points.push_back(pt);
                    }
                }
            }

        private:
            const SceneSpec& spec_;
            Vec3 origin_;
            std::uint16_t traversal_;
            Rng& rng_;
            PointCloud& out_;
        };

    } // namespace

    Box3D ObjectTrack::at(double t) const {
        Box3D b = start;
        b.center += velocity * t;
        return b;
    }

    void SceneSpec::validate() const {
        if (!(extent > 0.0 && extent <= 75.0)) {
            throw SpecError(fmt::format("extent {} outside (0, 75]", extent));
        }
        if (traversals < 1) {
            throw SpecError("at least one traversal is required");
        }
        if (!(point_density > 0.0) || !(density_range > 0.0) || noise_sigma < 0.0 || frame_dt < 0.0) {
            throw SpecError("sampling parameters must be positive");
        }
        if (num_distractors < 0 || num_walls < 0 || num_parked < 0 || num_moving < 0) {
            throw SpecError("primitive counts must be non-negative");
        }
        for (const auto& o : obstacles) {
            o.box.validate();
        }
        for (const auto& o : objects) {
            o.start.validate();
        }
    }

    std::vector<LabeledBox> Scene::boxes_at(int frame) const {
        std::vector<LabeledBox> out;
        out.reserve(objects.size());
        for (const auto& o : objects) {
            out.push_back({o.at(time_of(frame)), o.class_id});
        }
        return out;
    }

    Scene generate_scene(const SceneSpec& spec) {
        spec.validate();
        Scene scene;
        scene.spec = spec;

        const auto inside = [&](const Box3D& b) {
            for (const auto& c : box_corners_bev(b)) {
                if (std::abs(c.x()) > spec.extent || std::abs(c.y()) > spec.extent) {
                    return false;
                }
            }
            return true;
        };

        // Explicit primitives must be consistent as given.
        for (std::size_t i = 0; i < spec.obstacles.size(); ++i) {
            if (!inside(spec.obstacles[i].box)) {
                throw SpecError(fmt::format("obstacle {} leaves the scene extent", i));
            }
            for (std::size_t j = 0; j < i; ++j) {
                if (boxes_overlap(spec.obstacles[i].box, spec.obstacles[j].box)) {
                    throw SpecError(fmt::format("obstacles {} and {} overlap", j, i));
                }
            }
        }
        for (std::size_t i = 0; i < spec.objects.size(); ++i) {
            for (int f = 0; f < spec.traversals; ++f) {
                const Box3D b = spec.objects[i].at(f * spec.frame_dt);
                if (!inside(b)) {
                    throw SpecError(fmt::format("object {} leaves the scene extent at frame {}", i, f));
                }
                for (std::size_t j = 0; j < spec.obstacles.size(); ++j) {
                    if (boxes_overlap(b, spec.obstacles[j].box)) {
                        throw SpecError(fmt::format("object {} overlaps obstacle {} at frame {}", i, j, f));
                    }
                }
                for (std::size_t j = 0; j < i; ++j) {
                    if (boxes_overlap(b, spec.objects[j].at(f * spec.frame_dt))) {
                        throw SpecError(fmt::format("objects {} and {} overlap at frame {}", j, i, f));
                    }
                }
            }
        }
        scene.statics = spec.obstacles;
        scene.objects = spec.objects;

        Rng rng(derive_seed(spec.seed, 1));
        const double reach = spec.extent - 3.0;
        constexpr int kAttempts = 200;
        constexpr double kGap = 0.5;

        const auto free_at = [&](const Box3D& b, double t) {
            if (!inside(b) || b.center.head<2>().norm() < 3.0 + 0.5 * b.dims.x()) {
                return false;
            }
            for (const auto& s : scene.statics) {
                if (footprints_overlap(b, s.box, kGap)) {
                    return false;
                }
            }
            for (const auto& o : scene.objects) {
                if (footprints_overlap(b, o.at(t), kGap)) {
                    return false;
                }
            }
            return true;
        };
        const auto track_free = [&](const ObjectTrack& tr) {
            for (int f = 0; f < spec.traversals; ++f) {
                if (!free_at(tr.at(f * spec.frame_dt), f * spec.frame_dt)) {
                    return false;
                }
            }
            return true;
        };

        for (int k = 0; k < spec.num_walls; ++k) {
            for (int a = 0; a < kAttempts; ++a) {
                const double x = rng.uniform(-reach, reach), y = rng.uniform(-reach, reach), yaw = rng.uniform(-kPi, kPi);
                const double l = rng.uniform(5.0, 9.0), w = rng.uniform(0.3, 0.5), h = rng.uniform(2.0, 3.0);
                const StaticBox s{{Vec3(x, y, 0.5 * h), Vec3(l, w, h), normalize_angle(yaw)}, Vec3(0.7, 0.65, 0.55), 0.3};
                if (track_free({s.box})) {
                    scene.statics.push_back(s);
                    break;
                }
            }
        }
        for (int k = 0; k < spec.num_distractors; ++k) {
            for (int a = 0; a < kAttempts; ++a) {
                const double x = rng.uniform(-reach, reach), y = rng.uniform(-reach, reach), yaw = rng.uniform(-kPi, kPi);
                StaticBox s{vehicle_box(rng, x, y, yaw), kPalette[rng.uniform_index(std::size(kPalette))],
                            rng.uniform(0.4, 0.8)};
                if (track_free({s.box})) {
                    scene.statics.push_back(s);
                    break;
                }
            }
        }
        for (int k = 0; k < spec.num_parked + spec.num_moving; ++k) {
            const bool moving = k >= spec.num_parked;
            for (int a = 0; a < kAttempts; ++a) {
                const double x = rng.uniform(-reach, reach), y = rng.uniform(-reach, reach), yaw = rng.uniform(-kPi, kPi);
                ObjectTrack tr;
                tr.start = vehicle_box(rng, x, y, yaw);
                tr.color = kPalette[rng.uniform_index(std::size(kPalette))];
                tr.intensity = rng.uniform(0.4, 0.8);
                if (moving) {
                    const double speed = rng.uniform(1.0, std::max(1.0, spec.max_speed));
                    tr.velocity = speed * Vec3(std::cos(tr.start.yaw), std::sin(tr.start.yaw), 0.0);
                }
                if (track_free(tr)) {
                    scene.objects.push_back(tr);
                    break;
                }
            }
        }

        Rng ego(derive_seed(spec.seed, 2));
        for (int f = 0; f < spec.traversals; ++f) {
            scene.sensor_origins.emplace_back(ego.uniform(-spec.ego_jitter, spec.ego_jitter),
                                              ego.uniform(-spec.ego_jitter, spec.ego_jitter), spec.sensor_height);
        }
        return scene;
    }

    PointCloud simulate_lidar_scan(const Scene& scene, int frame, const Vec3& sensor_origin, std::uint16_t traversal_id) {
        const SceneSpec& spec = scene.spec;
        Rng rng(derive_seed(spec.seed, 1000 + static_cast<std::uint64_t>(frame)));
        PointCloud pc;
        Sampler sampler(spec, sensor_origin, traversal_id, rng, pc);
        const auto boxes = scene.boxes_at(frame);

        if (spec.ground) {
            std::vector<Box3D> footprints;
            for (const auto& s : scene.statics) {
                footprints.push_back(s.box);
            }
            for (const auto& b : boxes) {
                footprints.push_back(b.box);
            }
            const Face ground{Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ(), spec.extent, spec.extent};
            sampler.face(ground, spec.ground_color, spec.ground_intensity, [&](const Vec3& p) {
                return std::none_of(footprints.begin(), footprints.end(),
                                    [&](const Box3D& b) { return bev_inside(b, p.x(), p.y()); });
            });
        }
        const auto always = [](const Vec3&) { return true; };
        for (const auto& s : scene.statics) {
            for (const auto& f : box_faces(s.box)) {
                sampler.face(f, s.color, s.intensity, always);
            }
        }
        for (std::size_t i = 0; i < scene.objects.size(); ++i) {
            for (const auto& f : box_faces(boxes[i].box)) {
                sampler.face(f, scene.objects[i].color, scene.objects[i].intensity, always);
            }
        }
        return pc;
    }

    PointCloud simulate_lidar_scan(const Scene& scene, int frame) {
        if (frame < 0 || frame >= static_cast<int>(scene.sensor_origins.size())) {
            throw InputError(fmt::format("frame {} outside [0, {})", frame, scene.sensor_origins.size()));
        }
        return simulate_lidar_scan(scene, frame, scene.sensor_origins[static_cast<std::size_t>(frame)],
                                   static_cast<std::uint16_t>(frame));
    }

    FeaturePoints synth_camera_points(const Scene& scene, int frame, const GridConfig& grid) {
        grid.validate();
        const double s = 0.5 * grid.voxel_size;
        struct Cell {
            double z;
            Vec3 color;
        };
        std::map<std::pair<long, long>, Cell> cells;
        const auto raster = [&](const Box3D& b, const Vec3& color) {
            const auto corners = box_corners_bev(b);
            double x0 = corners[0].x(), x1 = x0, y0 = corners[0].y(), y1 = y0;
            for (const auto& c : corners) {
                x0 = std::min(x0, c.x());
                x1 = std::max(x1, c.x());
                y0 = std::min(y0, c.y());
                y1 = std::max(y1, c.y());
            }
            const double top = b.center.z() + 0.5 * b.dims.z();
            for (long i = static_cast<long>(std::floor(x0 / s)); i <= static_cast<long>(std::floor(x1 / s)); ++i) {
                for (long j = static_cast<long>(std::floor(y0 / s)); j <= static_cast<long>(std::floor(y1 / s)); ++j) {
                    const double x = (static_cast<double>(i) + 0.5) * s;
                    const double y = (static_cast<double>(j) + 0.5) * s;
                    if (!bev_inside(b, x, y)) {
                        continue;
                    }
                    auto [it, fresh] = cells.try_emplace({i, j}, Cell{top, color});
                    if (!fresh && top > it->second.z) {
                        it->second = {top, color};
                    }
                }
            }
        };
        for (const auto& st : scene.statics) {
            raster(st.box, st.color);
        }
        const auto boxes = scene.boxes_at(frame);
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            raster(boxes[i].box, scene.objects[i].color);
        }

        FeaturePoints fp;
        fp.features.resize(static_cast<Eigen::Index>(cells.size()), 3);
        Eigen::Index r = 0;
        for (const auto& [ij, cell] : cells) {
            fp.positions.emplace_back((static_cast<double>(ij.first) + 0.5) * s,
                                      (static_cast<double>(ij.second) + 0.5) * s, cell.z);
            fp.features.row(r++) = cell.color.transpose();
        }
        return fp;
    }

    BevFeatureGrid synth_camera_bev(const Scene& scene, int frame, const GridConfig& grid, Eigen::Index d,
                                    std::uint64_t seed) {
        const MlpParams proj = make_mlp({{kCameraRawDim, d}, false, Activation::None, Activation::None}, seed);
        return camera_bev(synth_camera_points(scene, frame, grid), grid, proj);
    }

} // namespace mapprior
