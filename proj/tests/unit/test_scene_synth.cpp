// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/errors.hpp"
#include "mapprior/io.hpp"
#include "mapprior/scene_synth.hpp"
#include "mapprior/surfel_map.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace mapprior;

namespace {

    SceneSpec empty_spec() {
        SceneSpec s;
        s.num_distractors = s.num_walls = s.num_parked = s.num_moving = 0;
        return s;
    }

    Box3D box_at(double x, double y, double l, double w, double h, double yaw) {
        Box3D b;
        b.center = Vec3(x, y, 0.5 * h);
        b.dims = Vec3(l, w, h);
        b.yaw = yaw;
        return b;
    }

} // namespace

TEST(SceneSynth, DeterministicFromSeed) {
    SceneSpec spec;
    spec.seed = 3;
    const Scene a = generate_scene(spec);
    const Scene b = generate_scene(spec);
    ASSERT_EQ(a.statics.size(), b.statics.size());
    ASSERT_EQ(a.objects.size(), b.objects.size());
    for (int f = 0; f < spec.traversals; ++f) {
        EXPECT_EQ(encode_pointcloud(simulate_lidar_scan(a, f)), encode_pointcloud(simulate_lidar_scan(b, f)));
    }
    spec.seed = 4;
    EXPECT_NE(encode_pointcloud(simulate_lidar_scan(generate_scene(spec), 0)),
              encode_pointcloud(simulate_lidar_scan(a, 0)));
}

TEST(SceneSynth, ZeroObjectsIsStaticOnly) {
    SceneSpec spec;
    spec.num_parked = spec.num_moving = 0;
    const Scene s = generate_scene(spec);
    EXPECT_TRUE(s.objects.empty());
    EXPECT_TRUE(s.boxes_at(2).empty());
    EXPECT_FALSE(s.statics.empty());
}

TEST(SceneSynth, KinematicsOracle) {
    SceneSpec spec;
    spec.num_moving = 3;
    spec.traversals = 5;
    spec.frame_dt = 0.5;
    const Scene s = generate_scene(spec);
    int moving = 0;
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
        const auto& o = s.objects[i];
        const Box3D first = s.boxes_at(0)[i].box;
        const Box3D last = s.boxes_at(4)[i].box;
        const double duration = 4 * 0.5;
        EXPECT_NEAR((last.center - first.center).norm(), o.velocity.norm() * duration, 1e-12);
        EXPECT_EQ(first.dims, last.dims);
        EXPECT_EQ(first.yaw, last.yaw);
        moving += o.parked() ? 0 : 1;
    }
    EXPECT_GT(moving, 0);
}

TEST(SceneSynth, OverlappingPrimitivesRejected) {
    SceneSpec spec = empty_spec();
    spec.obstacles.push_back({box_at(0, 0, 4, 2, 1.5, 0)});
    spec.obstacles.push_back({box_at(1, 0.5, 4, 2, 1.5, 0.3)});
    EXPECT_THROW(generate_scene(spec), SpecError);
    SceneSpec far = empty_spec();
    far.objects.push_back({box_at(12.5, 0, 4, 2, 1.5, 0)});
    EXPECT_THROW(generate_scene(far), SpecError);
    SceneSpec big;
    big.extent = 80.0;
    EXPECT_THROW(generate_scene(big), SpecError);
}

TEST(LidarScan, NoiselessGroundLiesOnPlane) {
    SceneSpec spec = empty_spec();
    spec.noise_sigma = 0.0;
    const Scene s = generate_scene(spec);
    const PointCloud pc = simulate_lidar_scan(s, 1);
    ASSERT_GT(pc.points.size(), 1000U);
    for (const auto& p : pc.points) {
        EXPECT_LE(std::abs(p.position.z()), 1e-9);
        EXPECT_EQ(p.traversal_id, 1);
    }
}

TEST(LidarScan, DensityFallsWithRange) {
    SceneSpec spec = empty_spec();
    spec.extent = 50.0;
    spec.ego_jitter = 0.0;
    spec.noise_sigma = 0.0;
    const Scene s = generate_scene(spec);
    const PointCloud pc = simulate_lidar_scan(s, 0);
    int near = 0, far = 0;
    for (const auto& p : pc.points) {
        const double x = p.position.x(), y = p.position.y();
        near += std::abs(x - 10) < 2 && std::abs(y) < 2 ? 1 : 0;
        far += std::abs(x - 40) < 2 && std::abs(y) < 2 ? 1 : 0;
    }
    EXPECT_GT(near, 0);
    EXPECT_LT(far, near);
}

TEST(LidarScan, NothingVisibleGivesEmptyCloud) {
    SceneSpec spec = empty_spec();
    spec.ground = false;
    EXPECT_TRUE(simulate_lidar_scan(generate_scene(spec), 0).points.empty());
}

TEST(LidarScan, GtRemovalLeavesNoDynamicPoints) {
    SceneSpec spec;
    spec.noise_sigma = 0.0;
    spec.num_parked = 4;
    spec.num_moving = 2;
    const Scene s = generate_scene(spec);
    for (int f = 0; f < spec.traversals; ++f) {
        const PointCloud pc = simulate_lidar_scan(s, f);
        std::vector<Box3D> boxes;
        for (const auto& b : s.boxes_at(f)) {
            boxes.push_back(b.box);
        }
        // Object samples lie exactly on the box faces, so the default removal margin is used and the
        // check allows for rounding on the boundary.
        const PointCloud cleaned = remove_dynamic_points(pc, boxes);
        for (const auto& p : cleaned.points) {
            for (const auto& b : boxes) {
                EXPECT_FALSE(point_in_box(p.position, b, 1e-6));
            }
        }
        // Every object surface point was sampled on a box face, so the sample count really drops.
        EXPECT_LT(cleaned.points.size(), pc.points.size());
    }
}

TEST(CameraStub, EmptySceneAndDeterminism) {
    GridConfig grid;
    const Scene empty = generate_scene(empty_spec());
    EXPECT_EQ(synth_camera_bev(empty, 0, grid, 8, 1).size(), 0U);
    const Scene s = generate_scene(SceneSpec{});
    const BevFeatureGrid a = synth_camera_bev(s, 1, grid, 8, 1);
    const BevFeatureGrid b = synth_camera_bev(s, 1, grid, 8, 1);
    EXPECT_EQ(a.keys, b.keys);
    EXPECT_EQ(a.features, b.features);
}

TEST(CameraStub, OccupiedPillarsMatchGeometryRaster) {
    GridConfig grid;
    const Scene s = generate_scene(SceneSpec{});
    const int frame = 2;
    std::vector<Box3D> boxes;
    for (const auto& st : s.statics) {
        boxes.push_back(st.box);
    }
    for (const auto& b : s.boxes_at(frame)) {
        boxes.push_back(b.box);
    }
    // A pillar is occupied when any of its four half-voxel sample centers falls in a footprint.
    std::set<BevKey> expected;
    const double v = grid.voxel_size;
    const int n = static_cast<int>(std::ceil(s.spec.extent / v)) + 2;
    for (int ix = -n; ix < n; ++ix) {
        for (int iy = -n; iy < n; ++iy) {
            bool hit = false;
            for (double fx : {0.25, 0.75}) {
                for (double fy : {0.25, 0.75}) {
                    const Vec3 p((ix + fx) * v, (iy + fy) * v, 0.0);
                    for (const auto& b : boxes) {
                        Box3D flat = b;
                        flat.center.z() = 0.0;
                        hit = hit || point_in_box(p, flat);
                    }
                }
            }
            if (hit) {
                expected.insert({ix, iy});
            }
        }
    }
    const BevFeatureGrid g = synth_camera_bev(s, frame, grid, 4, 9);
    EXPECT_EQ(std::set<BevKey>(g.keys.begin(), g.keys.end()), expected);
}
