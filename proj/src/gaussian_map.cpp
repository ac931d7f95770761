// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/gaussian_map.hpp"
#include "mapprior/errors.hpp"
#include "mapprior/surfel_map.hpp"

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace mapprior {

    void Gaussian3D::validate(double quat_tol) const {
        if (!mean.allFinite() || !scale.allFinite() || !sh0.allFinite() || !sh1.allFinite() ||
            !rotation.coeffs().allFinite() || !std::isfinite(opacity)) {
            throw InputError("gaussian has non-finite fields");
        }
        if (std::abs(rotation.norm() - 1.0) > quat_tol) {
            throw InputError(fmt::format("gaussian rotation is not unit length (|q| = {:.9g})", rotation.norm()));
        }
        if ((scale.array() <= 0.0).any()) {
            throw InputError("gaussian scales must be positive");
        }
        if (!(opacity > 0.0 && opacity <= 1.0)) {
            throw InputError(fmt::format("gaussian opacity {} outside (0, 1]", opacity));
        }
    }

    Mat3 proper_eigenbasis(const Mat3& symmetric, Vec3* eigenvalues) {
        const Eigen::SelfAdjointEigenSolver<Mat3> solver(symmetric);
        Mat3 r = solver.eigenvectors();
        if (r.determinant() < 0.0) {
            r.col(2) = -r.col(2);
        }
        if (eigenvalues) {
            *eigenvalues = solver.eigenvalues();
        }
        return r;
    }

    GaussianMap init_gaussians_from_lidar(const PointCloud& pc, const GaussianInitOptions& options) {
        GaussianMap map;
        for (const auto& group : group_by_voxel3(pc, options.voxel_size)) {
            const std::size_t n = group.indices.size();
            if (n < options.min_support) {
                continue;
            }
            Vec3 mean = Vec3::Zero();
            Vec3 color = Vec3::Zero();
            for (const std::size_t i : group.indices) {
                mean += pc.points[i].position;
                color += pc.points[i].color;
            }
            mean /= static_cast<double>(n);
            color /= static_cast<double>(n);
            Mat3 cov = Mat3::Zero();
            for (const std::size_t i : group.indices) {
                const Vec3 d = pc.points[i].position - mean;
                cov += d * d.transpose();
            }
            cov /= static_cast<double>(n);

            Vec3 evals;
            const Mat3 basis = proper_eigenbasis(cov, &evals);
            Gaussian3D g;
            g.mean = mean;
            Quat q(basis);
            q.normalize();
            if (q.w() < 0.0) {
                q.coeffs() = -q.coeffs();
            }
            g.rotation = q;
            for (int k = 0; k < 3; ++k) {
                g.scale[k] = std::max(std::sqrt(std::max(evals[k], 0.0)), options.scale_floor);
            }
            g.opacity = options.opacity_init;
            g.sh0 = (color.array() - 0.5) / kShC0;
            g.sh1.setZero();
            map.gaussians.push_back(g);
        }
        return map;
    }

    FeaturePoints gaussian_to_feature_points(const GaussianMap& map) {
        FeaturePoints fp;
        fp.positions.reserve(map.size());
        fp.features.resize(static_cast<Eigen::Index>(map.size()), kGaussianFeatureDim);
        for (std::size_t i = 0; i < map.size(); ++i) {
            const Gaussian3D& g = map.gaussians[i];
            const auto r = static_cast<Eigen::Index>(i);
            const Rot6D rot = quat_to_rot6d(g.rotation);
            fp.positions.push_back(g.mean);
            fp.features.block<1, 3>(r, 0) = g.mean.transpose();
            for (int k = 0; k < 6; ++k) {
                fp.features(r, 3 + k) = rot[static_cast<std::size_t>(k)];
            }
            for (int k = 0; k < 3; ++k) {
                fp.features(r, 9 + k) = std::log(g.scale[k]);
            }
            const double a = std::clamp(g.opacity, 1e-6, 1.0 - 1e-6);
            fp.features(r, 12) = std::log(a / (1.0 - a));
            fp.features.block<1, 3>(r, 13) = g.sh0.transpose();
            for (int c = 0; c < 3; ++c) {
                for (int k = 0; k < 3; ++k) {
                    fp.features(r, 16 + 3 * c + k) = g.sh1(c, k);
                }
            }
        }
        return fp;
    }

    Mat3 rotate_sh1(const Mat3& sh1, const Mat3& rotation) {
        Mat3 out;
        for (int c = 0; c < 3; ++c) {
            const Vec3 v(sh1(c, 2), sh1(c, 0), sh1(c, 1)); // (x, y, z)
            const Vec3 w = rotation * v;
            out(c, 0) = w.y();
            out(c, 1) = w.z();
            out(c, 2) = w.x();
        }
        return out;
    }

    Vec3 eval_sh_color(const Vec3& sh0, const Mat3& sh1, const Vec3& dir) {
        const Vec3 basis(dir.y(), dir.z(), dir.x());
        return (kShC0 * sh0 + kShC1 * sh1 * basis).array() + 0.5;
    }

} // namespace mapprior
