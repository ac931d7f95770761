// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace mapprior {

    using Vec2 = Eigen::Vector2d;
    using Vec3 = Eigen::Vector3d;
    using Mat3 = Eigen::Matrix3d;
    using Quat = Eigen::Quaterniond;

    inline constexpr double kPi = std::numbers::pi;
    inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

    struct Point {
        Vec3 position = Vec3::Zero();
        Vec3 color = Vec3::Zero(); // rgb in [0,1]
        double intensity = 0.0;    // [0,1]
        std::uint16_t traversal_id = 0;
    };

    struct PointCloud {
        std::vector<Point> points;

        std::size_t size() const noexcept { return points.size(); }
        bool empty() const noexcept { return points.empty(); }
    };

    /// Throws InputError when a point violates the finiteness or range invariants.
    void validate_point(const Point& p);

    struct RigidTransform {
        Mat3 rotation = Mat3::Identity();
        Vec3 translation = Vec3::Zero();

        static RigidTransform identity() { return {}; }
        static RigidTransform from_yaw(double yaw, const Vec3& translation = Vec3::Zero());

        Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

        // Throws InvalidTransformError unless R^T R = I and det R = +1 within 1e-9.
        void validate() const;
    };

    /// outer ∘ inner, i.e. the transform that applies `inner` first.
    RigidTransform compose(const RigidTransform& outer, const RigidTransform& inner);

    /// Oriented box; yaw is counterclockwise about +z with zero along +x.
    struct Box3D {
        Vec3 center = Vec3::Zero();
        Vec3 dims = Vec3::Ones(); // (l, w, h)
        double yaw = 0.0;

        void validate() const;
    };

    /// Wraps to (-pi, pi].
    double normalize_angle(double theta);

    Mat3 yaw_matrix(double yaw);

    PointCloud transform_points(const PointCloud& pc, const RigidTransform& t);

    bool point_in_box(const Vec3& p, const Box3D& box, double margin = 0.0);

    /// Box footprint corners in counterclockwise order.
    std::array<Vec2, 4> box_corners_bev(const Box3D& box);

    /// Applies a yaw-only rigid transform to a box. Throws InvalidTransformError if the
    /// rotation is not a pure rotation about z.
    Box3D transform_box(const Box3D& box, const RigidTransform& t);

    /// First two columns of a rotation matrix, column-major.
    using Rot6D = std::array<double, 6>;

    Rot6D matrix_to_rot6d(const Mat3& r);
    Rot6D quat_to_rot6d(const Quat& q);
    /// Gram-Schmidt decode. Throws DegenerateRotationError for zero or parallel columns.
    Mat3 rot6d_to_matrix(const Rot6D& r);

} // namespace mapprior
