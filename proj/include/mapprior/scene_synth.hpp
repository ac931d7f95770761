// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mapprior/detection.hpp"
#include "mapprior/geom.hpp"
#include "mapprior/voxel_grid.hpp"

#include <cstdint>
#include <vector>

namespace mapprior {

    struct StaticBox {
        Box3D box;
        Vec3 color = Vec3::Constant(0.5);
        double intensity = 0.5;
    };

    /// Object moving at constant velocity; zero velocity means parked.
    struct ObjectTrack {
        Box3D start;
        Vec3 velocity = Vec3::Zero(); // m/s
        Vec3 color = Vec3::Constant(0.5);
        double intensity = 0.5;
        int class_id = 0;

        Box3D at(double t) const;
        bool parked() const { return velocity.isZero(0.0); }
    };

    struct SceneSpec {
        std::uint64_t seed = 7;
        double extent = 12.8;              // half width of the square world, meters
        bool ground = true;
        Vec3 ground_color{0.35, 0.35, 0.35};
        double ground_intensity = 0.2;

        // Randomly placed primitives, in addition to the explicit lists below.
        int num_distractors = 4;           // static boxes shaped and colored like vehicles
        int num_walls = 1;
        int num_parked = 3;
        int num_moving = 1;
        double max_speed = 3.0;

        std::vector<StaticBox> obstacles;
        std::vector<ObjectTrack> objects;

        int traversals = 4;
        double frame_dt = 1.0;             // seconds between traversal frames

        double point_density = 20.0;       // surface points per square meter within density_range
        double density_range = 6.0;        // beyond this, density falls off as (density_range / r)^2
        double noise_sigma = 0.01;
        double sensor_height = 2.0;
        double ego_jitter = 1.0;

        /// Throws SpecError.
        void validate() const;
    };

    struct Scene {
        SceneSpec spec;
        std::vector<StaticBox> statics;
        std::vector<ObjectTrack> objects;
        std::vector<Vec3> sensor_origins; // one per traversal frame

        double time_of(int frame) const { return frame * spec.frame_dt; }
        std::vector<LabeledBox> boxes_at(int frame) const;
    };

    /// Deterministic from `spec.seed`. Throws SpecError when explicit primitives overlap.
    Scene generate_scene(const SceneSpec& spec);

    /// Surface samples of every primitive facing the sensor (ground, static boxes, objects at this
    /// frame) in world coordinates. No occlusion between primitives.
    PointCloud simulate_lidar_scan(const Scene& scene, int frame, const Vec3& sensor_origin,
                                   std::uint16_t traversal_id);
    PointCloud simulate_lidar_scan(const Scene& scene, int frame);

    /// Color samples on a grid of half-voxel spacing over the footprints of all elevated primitives
    /// at this frame (top face height, highest primitive wins). Features are r, g, b.
    FeaturePoints synth_camera_points(const Scene& scene, int frame, const GridConfig& grid);

    /// Camera stub features: the camera points pillar-averaged and projected to `d` channels by a
    /// fixed linear map seeded with `seed`.
    BevFeatureGrid synth_camera_bev(const Scene& scene, int frame, const GridConfig& grid, Eigen::Index d,
                                    std::uint64_t seed);

} // namespace mapprior
