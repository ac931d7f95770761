// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/geom.hpp"
#include "mapprior/errors.hpp"

#include <cmath>
#include <fmt/format.h>

namespace mapprior {

    void validate_point(const Point& p) {
        if (!p.position.allFinite()) {
            throw InputError("point position is not finite");
        }
        for (int i = 0; i < 3; ++i) {
            if (!(p.color[i] >= 0.0 && p.color[i] <= 1.0)) {
                throw InputError(fmt::format("point color channel {} out of [0,1]: {}", i, p.color[i]));
            }
        }
        if (!(p.intensity >= 0.0 && p.intensity <= 1.0)) {
            throw InputError(fmt::format("point intensity out of [0,1]: {}", p.intensity));
        }
    }

    RigidTransform RigidTransform::from_yaw(double yaw, const Vec3& translation) {
        return RigidTransform{yaw_matrix(yaw), translation};
    }

    void RigidTransform::validate() const {
        if (!rotation.allFinite() || !translation.allFinite()) {
            throw InvalidTransformError("transform has non-finite entries");
        }
        const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
        if (ortho > 1e-9) {
            throw InvalidTransformError(fmt::format("rotation is not orthonormal (max |R^T R - I| = {:g})", ortho));
        }
        const double det = rotation.determinant();
        if (std::abs(det - 1.0) > 1e-9) {
            throw InvalidTransformError(fmt::format("rotation determinant is {:g}, expected +1", det));
        }
    }

    RigidTransform compose(const RigidTransform& outer, const RigidTransform& inner) {
        return RigidTransform{outer.rotation * inner.rotation, outer.rotation * inner.translation + outer.translation};
    }

    void Box3D::validate() const {
        if (!center.allFinite() || !dims.allFinite() || !std::isfinite(yaw)) {
            throw InputError("box has non-finite fields");
        }
        if ((dims.array() <= 0.0).any()) {
            throw InputError("box dims must be strictly positive");
        }
    }

    double normalize_angle(double theta) {
        double r = std::remainder(theta, kTwoPi);
        if (r <= -kPi) {
            r += kTwoPi;
        }
        return r;
    }

    Mat3 yaw_matrix(double yaw) {
        const double c = std::cos(yaw);
        const double s = std::sin(yaw);
        Mat3 r;
        r << c, -s, 0.0,
            s, c, 0.0,
            0.0, 0.0, 1.0;
        return r;
    }

    PointCloud transform_points(const PointCloud& pc, const RigidTransform& t) {
        t.validate();
        PointCloud out;
        out.points.reserve(pc.size());
        for (const auto& p : pc.points) {
            Point q = p;
            q.position = t.apply(p.position);
            out.points.push_back(q);
        }
        return out;
    }

    bool point_in_box(const Vec3& p, const Box3D& box, double margin) {
        const Vec3 d = p - box.center;
        const double c = std::cos(box.yaw);
        const double s = std::sin(box.yaw);
        // rotate by -yaw into the box frame
        const double x = c * d.x() + s * d.y();
        const double y = -s * d.x() + c * d.y();
        return std::abs(x) <= 0.5 * box.dims.x() + margin &&
               std::abs(y) <= 0.5 * box.dims.y() + margin &&
               std::abs(d.z()) <= 0.5 * box.dims.z() + margin;
    }

    std::array<Vec2, 4> box_corners_bev(const Box3D& box) {
        const double c = std::cos(box.yaw);
        const double s = std::sin(box.yaw);
        const double hl = 0.5 * box.dims.x();
        const double hw = 0.5 * box.dims.y();
        const std::array<Vec2, 4> local = {Vec2(hl, hw), Vec2(-hl, hw), Vec2(-hl, -hw), Vec2(hl, -hw)};
        std::array<Vec2, 4> out;
        for (std::size_t i = 0; i < 4; ++i) {
            out[i] = Vec2(box.center.x() + c * local[i].x() - s * local[i].y(),
                          box.center.y() + s * local[i].x() + c * local[i].y());
        }
        return out;
    }

    Box3D transform_box(const Box3D& box, const RigidTransform& t) {
        t.validate();
        const Mat3& r = t.rotation;
        if (std::abs(r(2, 2) - 1.0) > 1e-9 || std::abs(r(0, 2)) > 1e-9 || std::abs(r(1, 2)) > 1e-9) {
            throw InvalidTransformError("box transforms support yaw-only rotations");
        }
        Box3D out = box;
        out.center = t.apply(box.center);
        out.yaw = normalize_angle(box.yaw + std::atan2(r(1, 0), r(0, 0)));
        return out;
    }

    Rot6D matrix_to_rot6d(const Mat3& r) {
        return {r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1)};
    }

    Rot6D quat_to_rot6d(const Quat& q) {
        if (std::abs(q.norm() - 1.0) > 1e-6) {
            throw DegenerateRotationError(fmt::format("quaternion is not unit length (|q| = {:g})", q.norm()));
        }
        return matrix_to_rot6d(q.toRotationMatrix());
    }

    Mat3 rot6d_to_matrix(const Rot6D& r) {
        const Vec3 a(r[0], r[1], r[2]);
        const Vec3 b(r[3], r[4], r[5]);
        if (!a.allFinite() || !b.allFinite()) {
            throw DegenerateRotationError("rot6d has non-finite entries");
        }
        const double na = a.norm();
        if (na < 1e-12) {
            throw DegenerateRotationError("rot6d first column has zero norm");
        }
        const Vec3 c1 = a / na;
        const Vec3 b_perp = b - c1.dot(b) * c1;
        const double nb = b_perp.norm();
        if (nb < 1e-12 * std::max(1.0, b.norm())) {
            throw DegenerateRotationError("rot6d columns are parallel");
        }
        const Vec3 c2 = b_perp / nb;
        Mat3 m;
        m.col(0) = c1;
        m.col(1) = c2;
        m.col(2) = c1.cross(c2);
        return m;
    }

} // namespace mapprior
