// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mapprior/geom.hpp"
#include "mapprior/voxel_grid.hpp"

#include <vector>

namespace mapprior {

    inline constexpr double kShC0 = 0.28209479177387814;
    inline constexpr double kShC1 = 0.4886025119029199;

    /// Anisotropic Gaussian. Color is c(d) = C0 sh0 + C1 (sh1[:,0] d_y + sh1[:,1] d_z + sh1[:,2] d_x) + 0.5,
    /// i.e. the degree-1 coefficients of each channel are stored in (y, z, x) order.
    struct Gaussian3D {
        Vec3 mean = Vec3::Zero();
        Quat rotation = Quat::Identity(); // stored (w, x, y, z) on disk
        Vec3 scale = Vec3::Constant(0.02);
        double opacity = 0.5;             // (0, 1]
        Vec3 sh0 = Vec3::Zero();
        Mat3 sh1 = Mat3::Zero();          // row = color channel, col = (y, z, x)

        /// Throws InputError on invariant violations (|q| = 1 within `quat_tol`, scales > 0, opacity in (0,1]).
        void validate(double quat_tol = 1e-6) const;
    };

    struct GaussianMap {
        std::vector<Gaussian3D> gaussians; // voxel-key order of initialization

        std::size_t size() const noexcept { return gaussians.size(); }
    };

    struct GaussianInitOptions {
        double voxel_size = 0.25;
        std::size_t min_support = 3;
        double opacity_init = 0.5;
        double scale_floor = 0.02; // meters
    };

    /// One Gaussian per voxel with at least `min_support` points; shape from the point covariance.
    GaussianMap init_gaussians_from_lidar(const PointCloud& pc, const GaussianInitOptions& options = {});

    inline constexpr Eigen::Index kGaussianFeatureDim = 25;

    /// Features [mu(3), rot6d(6), log scale(3), logit opacity(1), sh0(3), sh1(9)] per Gaussian.
    /// Throws DegenerateRotationError for non-unit quaternions.
    FeaturePoints gaussian_to_feature_points(const GaussianMap& map);

    /// Degree-1 coefficients rotated so that the rotated function at d equals the original at R^T d.
    Mat3 rotate_sh1(const Mat3& sh1, const Mat3& rotation);

    /// Color of a Gaussian seen along unit direction `dir`.
    Vec3 eval_sh_color(const Vec3& sh0, const Mat3& sh1, const Vec3& dir);

    /// Rotation whose columns are the eigenvectors of a symmetric matrix in ascending eigenvalue order,
    /// with the last column flipped if needed to make it proper.
    Mat3 proper_eigenbasis(const Mat3& symmetric, Vec3* eigenvalues = nullptr);

} // namespace mapprior
