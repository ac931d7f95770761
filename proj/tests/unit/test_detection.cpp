// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/detection.hpp"
#include "mapprior/errors.hpp"
#include "mapprior/gradcheck.hpp"
#include "mapprior/nn.hpp"
#include "mapprior/random.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace mapprior;

namespace {

    Box3D make_box(double x, double y, double z, double l, double w, double h, double yaw) {
        Box3D b;
        b.center = Vec3(x, y, z);
        b.dims = Vec3(l, w, h);
        b.yaw = yaw;
        return b;
    }

    Box3D random_box(Rng& rng, double spread) {
        return make_box(rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(0.5, 1.0),
                        rng.uniform(0.5, 5.0), rng.uniform(0.5, 3.0), rng.uniform(1.0, 2.0), rng.uniform(-kPi, kPi));
    }

    bool in_footprint(const Box3D& b, double x, double y) {
        const double c = std::cos(b.yaw), s = std::sin(b.yaw);
        const double dx = x - b.center.x(), dy = y - b.center.y();
        const double u = c * dx + s * dy;
        const double v = -s * dx + c * dy;
        return std::abs(u) <= 0.5 * b.dims.x() && std::abs(v) <= 0.5 * b.dims.y();
    }

    // Midpoint-sampled BEV IoU on an n x n raster over the joint bounding square.
    double raster_iou(const Box3D& a, const Box3D& b, int n) {
        double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
        for (const Box3D* box : {&a, &b}) {
            for (const Vec2& c : box_corners_bev(*box)) {
                lo_x = std::min(lo_x, c.x());
                hi_x = std::max(hi_x, c.x());
                lo_y = std::min(lo_y, c.y());
                hi_y = std::max(hi_y, c.y());
            }
        }
        const double sx = (hi_x - lo_x) / n, sy = (hi_y - lo_y) / n;
        long inter = 0, uni = 0;
        for (int i = 0; i < n; ++i) {
            const double x = lo_x + (i + 0.5) * sx;
            for (int j = 0; j < n; ++j) {
                const double y = lo_y + (j + 0.5) * sy;
                const bool ia = in_footprint(a, x, y), ib = in_footprint(b, x, y);
                inter += ia && ib ? 1 : 0;
                uni += ia || ib ? 1 : 0;
            }
        }
        return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }

    Detection det_of(const Box3D& b, double score, int key) {
        Detection d;
        d.box = b;
        d.score = score;
        d.key = {key, 0};
        return d;
    }

    template <class F>
    GradCheckReport check(F f, std::vector<double> x0) {
        return finite_diff_check(
            [&](std::span<const double> x, std::span<double> g) { return f(x, g); }, x0);
    }

} // namespace

TEST(Targets, BoxOnVoxelCenterGivesUnitPeakAndZeroOffsets) {
    GridConfig grid;
    std::vector<BevKey> keys;
    for (int ix = -10; ix < 10; ++ix) {
        for (int iy = -10; iy < 10; ++iy) {
            keys.push_back({ix, iy});
        }
    }
    const std::vector<LabeledBox> boxes = {{make_box(0.3, 0.5, 0.8, 1.0, 0.6, 1.6, 0.4), 0}};
    const Targets t = make_targets(boxes, keys, grid, {});
    ASSERT_EQ(t.positives.size(), 1U);
    const auto& p = t.positives[0];
    EXPECT_EQ(keys[p.row], (BevKey{1, 2}));
    EXPECT_EQ(t.heatmap(static_cast<Eigen::Index>(p.row), 0), 1.0);
    EXPECT_NEAR(p.box[0], 0.0, 1e-12);
    EXPECT_NEAR(p.box[1], 0.0, 1e-12);
    EXPECT_NEAR(p.box[2], 0.8, 1e-12);
    EXPECT_NEAR(p.box[3], std::log(1.0), 1e-12);
    EXPECT_EQ(t.heatmap.maxCoeff(), 1.0);
    int peaks = 0;
    for (Eigen::Index r = 0; r < t.heatmap.rows(); ++r) {
        peaks += t.heatmap(r, 0) == 1.0 ? 1 : 0;
    }
    EXPECT_EQ(peaks, 1);
}

TEST(Targets, NoBoxesAllZero) {
    const std::vector<BevKey> keys = {{0, 0}, {1, 1}};
    const Targets t = make_targets({}, keys, GridConfig{}, {});
    EXPECT_EQ(t.heatmap, Matrix::Zero(2, 1));
    EXPECT_EQ(t.seg, Matrix::Zero(2, 1));
    EXPECT_TRUE(t.positives.empty());
}

TEST(Targets, SparseBoxesIgnored) {
    const std::vector<BevKey> keys = {{0, 0}};
    const std::vector<LabeledBox> boxes = {{make_box(0.1, 0.1, 0.5, 1, 1, 1, 0), 0}};
    const std::vector<int> counts = {4};
    const Targets t = make_targets(boxes, keys, GridConfig{}, {}, counts);
    EXPECT_EQ(t.ignored_boxes, 1U);
    EXPECT_TRUE(t.positives.empty());
    EXPECT_EQ(t.heatmap(0, 0), 0.0);
}

TEST(Targets, SegMatchesContainmentLoop) {
    Rng rng(71);
    GridConfig grid;
    grid.voxel_size = 0.2;
    std::vector<BevKey> keys;
    for (int ix = -30; ix < 30; ++ix) {
        for (int iy = -30; iy < 30; ++iy) {
            if (rng.bernoulli(0.7)) {
                keys.push_back({ix, iy});
            }
        }
    }
    std::vector<LabeledBox> boxes;
    for (int b = 0; b < 6; ++b) {
        boxes.push_back({random_box(rng, 4.0), b % 2});
    }
    TargetConfig cfg;
    cfg.num_classes = 2;
    const Targets t = make_targets(boxes, keys, grid, cfg);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const double cx = (keys[i].ix + 0.5) * 0.2, cy = (keys[i].iy + 0.5) * 0.2;
        for (int c = 0; c < 2; ++c) {
            bool inside = false;
            for (const auto& b : boxes) {
                inside = inside || (b.class_id == c && in_footprint(b.box, cx, cy));
            }
            EXPECT_EQ(t.seg(static_cast<Eigen::Index>(i), c), inside ? 1.0 : 0.0) << i << " " << c;
        }
    }
    EXPECT_GE(t.heatmap.minCoeff(), 0.0);
    EXPECT_LE(t.heatmap.maxCoeff(), 1.0);
}

TEST(Targets, RadiusFloor) {
    EXPECT_GT(gaussian_radius(20, 10, 0.1), 2.0);
    EXPECT_LT(gaussian_radius(1, 1, 0.1), 2.0);
}

TEST(FocalLoss, HandValues) {
    const double logits[] = {0.0};
    const double peak[] = {1.0};
    EXPECT_NEAR(focal_heatmap_loss(logits, peak, 2, 4), -0.25 * std::log(0.5), 1e-12);
    EXPECT_NEAR(focal_heatmap_loss(logits, peak, 2, 4), 0.1733, 1e-4);
    const double confident[] = {40.0};
    EXPECT_LT(focal_heatmap_loss(confident, peak, 2, 4), 1e-30);
    // Background with target t contributes -(1-t)^4 p^2 log(1-p), normalized by max(peaks, 1) = 1.
    const double bg[] = {0.0};
    const double t[] = {0.5};
    EXPECT_NEAR(focal_heatmap_loss(bg, t, 2, 4), std::pow(0.5, 4) * 0.25 * std::log(2.0), 1e-12);
}

TEST(FocalLoss, GradientFiniteDifference) {
    Rng rng(72);
    std::vector<double> x(30), tgt(30);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = rng.normal(0, 2);
        tgt[i] = i % 7 == 0 ? 1.0 : rng.uniform(0, 0.9);
    }
    const auto r = check([&](std::span<const double> v, std::span<double> g) {
        return focal_heatmap_loss(v, tgt, 2, 4, g);
    }, x);
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(SegLoss, HandValuesAndGradient) {
    const std::vector<double> zero(4, 0.0);
    const std::vector<double> balanced = {1, 0, 1, 0};
    EXPECT_NEAR(seg_focal_loss(zero, balanced, 2), 0.25 * std::log(2.0), 1e-12);
    const std::vector<double> perfect = {30, -30, 30, -30};
    EXPECT_LT(seg_focal_loss(perfect, balanced, 2), 1e-6);
    Rng rng(73);
    std::vector<double> x(20), t(20);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = rng.normal(0, 2);
        t[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
    }
    const auto r = check([&](std::span<const double> v, std::span<double> g) { return seg_focal_loss(v, t, 2, g); }, x);
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(SmoothL1, ValuesAndGradient) {
    const double z[] = {0.0};
    const double h[] = {0.5};
    const double big[] = {3.0};
    EXPECT_EQ(smooth_l1(z, z, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(smooth_l1(h, z, 1.0), 0.125);
    EXPECT_DOUBLE_EQ(smooth_l1(big, z, 1.0), 2.5);
    EXPECT_THROW(smooth_l1(z, z, 0.0), ConfigError);
    Rng rng(74);
    std::vector<double> x(12), t(12);
    for (std::size_t i = 0; i < x.size(); ++i) {
        t[i] = rng.normal();
        double d = rng.uniform(-3, 3);
        if (std::abs(std::abs(d) - 1.0) < 0.05) {
            d = 0.5;
        }
        x[i] = t[i] + d;
    }
    const auto r = check([&](std::span<const double> v, std::span<double> g) { return smooth_l1(v, t, 1.0, g); }, x);
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Heading, BinsAndRoundTrip) {
    EXPECT_EQ(encode_heading(0.0, 12).bin, 0);
    EXPECT_EQ(encode_heading(0.0, 12).residual, 0.0);
    const HeadingTarget one = encode_heading(2 * kPi / 12, 12);
    EXPECT_EQ(one.bin, 1);
    EXPECT_NEAR(one.residual, 0.0, 1e-15);
    EXPECT_EQ(encode_heading(-2 * kPi / 12, 12).bin, 11);
    Rng rng(75);
    for (int i = 0; i < 1000; ++i) {
        const double th = rng.uniform(-kPi, kPi);
        const HeadingTarget h = encode_heading(th, 12);
        EXPECT_LE(std::abs(h.residual), kPi / 12 + 1e-12);
        EXPECT_NEAR(normalize_angle(decode_heading(h.bin, h.residual, 12) - th), 0.0, 1e-12);
    }
}

TEST(Heading, PerfectPredictionHasOnlyCrossEntropy) {
    std::vector<double> logits(12, -50.0);
    logits[3] = 50.0;
    const double th = 3 * 2 * kPi / 12 + 0.1;
    EXPECT_LT(heading_bin_loss(logits, 0.1, th, 12, 1.0), 1e-12);
    Rng rng(76);
    std::vector<double> x(13);
    for (auto& v : x) {
        v = rng.normal();
    }
    const auto r = check([&](std::span<const double> v, std::span<double> g) {
        if (g.empty()) {
            return heading_bin_loss(v.first(12), v[12], 1.0, 12, 1.0);
        }
        double gr = 0;
        const double l = heading_bin_loss(v.first(12), v[12], 1.0, 12, 1.0, g.first(12), &gr);
        g[12] = gr;
        return l;
    }, x);
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(IouLoss, ValuesAndGradient) {
    const AxisBox a{1, 2, 3, 1.5};
    EXPECT_NEAR(iou_loss(a, a), 0.0, 1e-15);
    EXPECT_EQ(iou_loss(a, {10, 10, 1, 1}), 1.0);
    EXPECT_NEAR(iou_loss({0, 0, 2, 2}, {1, 1, 2, 2}), 1.0 - 1.0 / 7.0, 1e-15);
    Rng rng(77);
    int checked = 0;
    while (checked < 20) {
        const AxisBox gt{rng.normal(), rng.normal(), rng.uniform(1, 4), rng.uniform(1, 3)};
        std::vector<double> x = {gt.cx + rng.normal(0, 0.5), gt.cy + rng.normal(0, 0.5), gt.l * rng.uniform(0.6, 1.4),
                                 gt.w * rng.uniform(0.6, 1.4)};
        // Skip near-coincident edges where the loss is not differentiable.
        const double edges[] = {x[0] + x[2] / 2 - gt.cx - gt.l / 2, x[0] - x[2] / 2 - gt.cx + gt.l / 2,
                                x[1] + x[3] / 2 - gt.cy - gt.w / 2, x[1] - x[3] / 2 - gt.cy + gt.w / 2};
        if (std::any_of(std::begin(edges), std::end(edges), [](double e) { return std::abs(e) < 1e-3; }) ||
            iou_loss({x[0], x[1], x[2], x[3]}, gt) >= 1.0) {
            continue;
        }
        const auto r = check([&](std::span<const double> v, std::span<double> g) {
            return iou_loss({v[0], v[1], v[2], v[3]}, gt, g);
        }, x);
        EXPECT_LT(r.max_rel_error, 1e-4);
        ++checked;
    }
}

namespace {

    struct HeadFixture {
        GridConfig grid;
        std::vector<BevKey> keys;
        Targets targets;
        HeadOutput head;

        explicit HeadFixture(std::uint64_t seed) {
            Rng rng(seed);
            for (int ix = -8; ix < 8; ++ix) {
                for (int iy = -8; iy < 8; ++iy) {
                    keys.push_back({ix, iy});
                }
            }
            const std::vector<LabeledBox> boxes = {{make_box(0.31, -0.22, 0.7, 1.0, 0.8, 1.5, 0.3), 0},
                                                   {make_box(-0.9, 0.75, 0.9, 1.2, 0.6, 1.4, -2.0), 0}};
            targets = make_targets(boxes, keys, grid, {});
            head.layout = HeadLayout{1, 12};
            head.keys = keys;
            head.values.resize(static_cast<Eigen::Index>(keys.size()), head.layout.width());
            for (Eigen::Index i = 0; i < head.values.size(); ++i) {
                head.values.data()[i] = rng.normal();
            }
        }
    };

} // namespace

TEST(TotalLoss, ZeroLambdaAndComponentSum) {
    HeadFixture f(78);
    LossConfig zero;
    zero.lambda_hm = zero.lambda_bbox = zero.lambda_seg = 0.0;
    EXPECT_EQ(total_loss(f.head, f.targets, f.grid, zero).total, 0.0);

    const LossConfig cfg;
    const LossBreakdown b = total_loss(f.head, f.targets, f.grid, cfg);
    const auto& L = f.head.layout;
    const auto col = [&](const Matrix& m, int c) {
        std::vector<double> v(static_cast<std::size_t>(m.rows()));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            v[static_cast<std::size_t>(r)] = m(r, c);
        }
        return v;
    };
    const double hm = focal_heatmap_loss(col(f.head.values, L.heatmap(0)), col(f.targets.heatmap, 0), 2, 4);
    const double seg = seg_focal_loss(col(f.head.values, L.seg(0)), col(f.targets.seg, 0), 2);
    double bbox = 0.0;
    ASSERT_EQ(f.targets.positives.size(), 2U);
    for (const auto& p : f.targets.positives) {
        const auto r = static_cast<Eigen::Index>(p.row);
        std::vector<double> pred(6), bins(12);
        for (int k = 0; k < 6; ++k) {
            pred[static_cast<std::size_t>(k)] = f.head.values(r, L.box(k));
        }
        for (int k = 0; k < 12; ++k) {
            bins[static_cast<std::size_t>(k)] = f.head.values(r, L.bin(k));
        }
        const Vec2 vc = f.grid.center_of(f.keys[p.row]);
        bbox += 0.5 * (smooth_l1(pred, p.box, 1.0) +
                       heading_bin_loss(bins, f.head.values(r, L.residual()), p.gt.yaw, 12, 1.0) +
                       iou_loss({vc.x() + pred[0], vc.y() + pred[1], std::exp(pred[3]), std::exp(pred[4])},
                                {p.gt.center.x(), p.gt.center.y(), p.gt.dims.x(), p.gt.dims.y()}));
    }
    EXPECT_NEAR(b.heatmap, hm, 1e-12);
    EXPECT_NEAR(b.seg, seg, 1e-12);
    EXPECT_NEAR(b.bbox, bbox, 1e-12);
    EXPECT_NEAR(b.total, hm + 2 * bbox + seg, 1e-12);
    EXPECT_GT(b.total, 0.0);
}

TEST(TotalLoss, HugeLogDimsKeepGradientFinite) {
    HeadFixture f(85);
    const auto& L = f.head.layout;
    for (const auto& p : f.targets.positives) {
        f.head.values(static_cast<Eigen::Index>(p.row), L.box(3)) = 900.0;
        f.head.values(static_cast<Eigen::Index>(p.row), L.box(4)) = -900.0;
    }
    Matrix grad;
    const LossBreakdown b = total_loss(f.head, f.targets, f.grid, LossConfig{}, &grad);
    EXPECT_TRUE(std::isfinite(b.total));
    EXPECT_TRUE(grad.allFinite());
    const auto dets = decode_boxes(f.head, f.grid, 0.0);
    for (const auto& d : dets) {
        EXPECT_LE(d.box.dims.maxCoeff(), 1e3);
        EXPECT_GE(d.box.dims.minCoeff(), 1e-3);
    }
}

TEST(TotalLoss, GradientFiniteDifference) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const GradCheckReport r = head_loss_gradcheck(seed);
        EXPECT_LT(r.max_rel_error, 1e-4) << seed;
    }
}

TEST(Decode, VoxelCenterConventionAndEmpty) {
    HeadOutput head;
    head.layout = HeadLayout{1, 12};
    head.keys = {{0, 0}};
    head.values = Matrix::Zero(1, head.layout.width());
    head.values(0, head.layout.heatmap(0)) = 3.0;
    const auto dets = decode_boxes(head, GridConfig{}, 0.1);
    ASSERT_EQ(dets.size(), 1U);
    EXPECT_NEAR(dets[0].box.center.x(), 0.1, 1e-15);
    EXPECT_NEAR(dets[0].box.center.y(), 0.1, 1e-15);
    EXPECT_EQ(dets[0].box.dims, Vec3::Ones());
    head.values(0, head.layout.heatmap(0)) = -30.0;
    EXPECT_TRUE(decode_boxes(head, GridConfig{}, 0.1).empty());
}

TEST(Decode, EncodeDecodeRoundTrip) {
    Rng rng(79);
    GridConfig grid;
    std::vector<BevKey> keys;
    for (int ix = -60; ix < 60; ++ix) {
        for (int iy = -60; iy < 60; ++iy) {
            keys.push_back({ix, iy});
        }
    }
    std::vector<LabeledBox> boxes;
    for (int i = 0; i < 5; ++i) {
        boxes.push_back({make_box(-10 + 4.5 * i + rng.uniform(0, 0.5), rng.uniform(-10, 10), rng.uniform(0.5, 1.5),
                                  rng.uniform(1, 5), rng.uniform(0.5, 2), rng.uniform(1, 2), rng.uniform(-kPi, kPi)),
                         0});
    }
    const Targets t = make_targets(boxes, keys, grid, {});
    ASSERT_EQ(t.positives.size(), boxes.size());
    HeadOutput head;
    head.layout = HeadLayout{1, 12};
    head.keys = keys;
    head.values = Matrix::Constant(static_cast<Eigen::Index>(keys.size()), head.layout.width(), -20.0);
    for (const auto& p : t.positives) {
        const auto r = static_cast<Eigen::Index>(p.row);
        head.values(r, 0) = 5.0;
        for (int k = 0; k < 6; ++k) {
            head.values(r, head.layout.box(k)) = p.box[static_cast<std::size_t>(k)];
        }
        head.values(r, head.layout.bin(p.bin)) = 10.0;
        head.values(r, head.layout.residual()) = p.residual;
    }
    const auto dets = decode_boxes(head, grid, 0.5);
    ASSERT_EQ(dets.size(), boxes.size());
    for (const auto& d : dets) {
        const auto it = std::find_if(boxes.begin(), boxes.end(), [&](const LabeledBox& b) {
            return (b.box.center - d.box.center).norm() < 1e-9;
        });
        ASSERT_NE(it, boxes.end());
        EXPECT_LT((it->box.dims - d.box.dims).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_NEAR(normalize_angle(it->box.yaw - d.box.yaw), 0.0, 1e-9);
    }
}

TEST(RotatedIou, AnalyticCases) {
    const Box3D a = make_box(0, 0, 0, 2, 2, 1, 0);
    EXPECT_NEAR(iou_bev_rotated(a, a), 1.0, 1e-15);
    EXPECT_EQ(iou_bev_rotated(a, make_box(5, 5, 0, 2, 2, 1, 0)), 0.0);
    EXPECT_NEAR(iou_bev_rotated(a, make_box(1, 1, 0, 2, 2, 1, 0)), 1.0 / 7.0, 1e-15);
    // Half the height overlapping: inter 2, union 6.
    EXPECT_NEAR(iou_3d_rotated(a, make_box(0, 0, 0.5, 2, 2, 1, 0)), 1.0 / 3.0, 1e-15);
    EXPECT_EQ(iou_3d_rotated(a, make_box(0, 0, 3, 2, 2, 1, 0)), 0.0);
}

TEST(RotatedIou, RasterizationOracle) {
    Rng rng(80);
    for (int i = 0; i < 200; ++i) {
        const Box3D a = random_box(rng, 1.5);
        const Box3D b = random_box(rng, 1.5);
        EXPECT_NEAR(iou_bev_rotated(a, b), raster_iou(a, b, 1000), 2e-3) << i;
    }
}

TEST(RotatedIou, SymmetryAndInvariance) {
    Rng rng(81);
    for (int i = 0; i < 100; ++i) {
        const Box3D a = random_box(rng, 2.0);
        const Box3D b = random_box(rng, 2.0);
        const double base = iou_bev_rotated(a, b);
        EXPECT_NEAR(iou_bev_rotated(b, a), base, 1e-9);
        const RigidTransform t = RigidTransform::from_yaw(rng.uniform(-kPi, kPi), Vec3(rng.normal(0, 20), rng.normal(0, 20), 0));
        EXPECT_NEAR(iou_bev_rotated(transform_box(a, t), transform_box(b, t)), base, 1e-9);
        EXPECT_GE(base, 0.0);
        EXPECT_LE(base, 1.0);
    }
}

TEST(Nms, TrivialCases) {
    const Box3D a = make_box(0, 0, 0, 2, 1, 1, 0.2);
    EXPECT_EQ(nms_bev({det_of(a, 0.5, 0)}).size(), 1U);
    const auto kept = nms_bev({det_of(a, 0.5, 1), det_of(a, 0.5, 0)});
    ASSERT_EQ(kept.size(), 1U);
    EXPECT_EQ(kept[0].key.ix, 0);
}

TEST(Nms, MatchesReferenceLoop) {
    Rng rng(82);
    std::vector<Detection> dets;
    for (int i = 0; i < 50; ++i) {
        dets.push_back(det_of(random_box(rng, 3.0), std::round(rng.uniform() * 10) / 10, i));
        dets.back().class_id = static_cast<int>(rng.uniform_index(2));
    }
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return dets[x].score != dets[y].score ? dets[x].score > dets[y].score : dets[x].key < dets[y].key;
    });
    std::vector<char> removed(dets.size(), 0);
    std::vector<int> expected;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (removed[order[i]]) {
            continue;
        }
        expected.push_back(dets[order[i]].key.ix);
        for (std::size_t j = i + 1; j < order.size(); ++j) {
            const auto& p = dets[order[i]];
            const auto& q = dets[order[j]];
            if (p.class_id == q.class_id && iou_bev_rotated(p.box, q.box) > 0.5) {
                removed[order[j]] = 1;
            }
        }
    }
    const auto kept = nms_bev(dets, 0.5);
    std::vector<int> got;
    for (const auto& d : kept) {
        got.push_back(d.key.ix);
    }
    EXPECT_EQ(got, expected);
}

TEST(Ap, PerfectAndEmpty) {
    Rng rng(83);
    std::vector<Box3D> gts;
    std::vector<Detection> dets;
    for (int i = 0; i < 4; ++i) {
        gts.push_back(make_box(5.0 * i, 0, 1, 2, 1, 1.5, rng.uniform(-kPi, kPi)));
        dets.push_back(det_of(gts.back(), 0.9 - 0.1 * i, i));
    }
    const ApResult perfect = evaluate_ap(dets, gts, 0.7);
    EXPECT_DOUBLE_EQ(perfect.ap, 1.0);
    EXPECT_DOUBLE_EQ(perfect.aph, 1.0);
    const ApResult none = evaluate_ap(std::span<const Detection>{}, gts, 0.7);
    EXPECT_EQ(none.ap, 0.0);
    EXPECT_EQ(none.num_gt, 4U);
}

namespace {

    // Greedy score-ordered matching (IoU here is either 1 or 0, so greedy is optimal) and AP as the
    // area under the precision envelope max_{k' >= k} P(k'), summed at each recall increment.
    std::pair<double, double> ap_oracle(const std::vector<Detection>& dets, const std::vector<int>& target,
                                        const std::vector<Box3D>& gts) {
        std::vector<std::size_t> order(dets.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return dets[x].score > dets[y].score; });
        std::vector<char> used(gts.size(), 0);
        std::vector<double> prec, prec_h;
        std::vector<char> tp;
        double n_tp = 0, n_tp_h = 0;
        for (std::size_t k = 0; k < order.size(); ++k) {
            const int t = target[order[k]];
            const bool hit = t >= 0 && !used[static_cast<std::size_t>(t)];
            if (hit) {
                used[static_cast<std::size_t>(t)] = 1;
                n_tp += 1;
                const double dth = std::abs(std::remainder(dets[order[k]].box.yaw - gts[static_cast<std::size_t>(t)].yaw, 2 * kPi));
                n_tp_h += 1 - dth / kPi;
            }
            tp.push_back(hit);
            prec.push_back(n_tp / double(k + 1));
            prec_h.push_back(n_tp_h / double(k + 1));
        }
        double ap = 0, aph = 0;
        for (std::size_t k = 0; k < order.size(); ++k) {
            if (!tp[k]) {
                continue;
            }
            ap += *std::max_element(prec.begin() + static_cast<long>(k), prec.end()) / double(gts.size());
            aph += *std::max_element(prec_h.begin() + static_cast<long>(k), prec_h.end()) / double(gts.size());
        }
        return {ap, aph};
    }

} // namespace

TEST(Ap, HandConstructedCaseMatchesOracle) {
    std::vector<Box3D> gts;
    for (int i = 0; i < 5; ++i) {
        gts.push_back(make_box(6.0 * i, 0, 1, 2, 2, 1.5, 0.3 * i));
    }
    // target gt index per detection, -1 for a false positive far from everything
    const std::vector<int> target = {0, 1, -1, 1, 2, -1, 3, -1, 0, -1};
    const std::vector<double> scores = {0.95, 0.9, 0.85, 0.8, 0.7, 0.65, 0.6, 0.5, 0.4, 0.3};
    // Square footprints: quarter and half turns change the heading but not the box.
    const std::vector<double> yaw_err = {0.0, kPi / 2, 0.0, 0.0, -kPi / 2, 0.0, kPi, 0.0, 0.0, 0.0};
    std::vector<Detection> dets;
    for (std::size_t i = 0; i < target.size(); ++i) {
        Box3D b = target[i] >= 0 ? gts[static_cast<std::size_t>(target[i])] : make_box(100.0 + 10.0 * i, 50, 1, 2, 2, 1.5, 0);
        b.yaw = normalize_angle(b.yaw + yaw_err[i]);
        dets.push_back(det_of(b, scores[i], static_cast<int>(i)));
    }
    const ApResult r = evaluate_ap(dets, gts, 0.7);
    const auto [ap, aph] = ap_oracle(dets, target, gts);
    EXPECT_NEAR(r.ap, ap, 1e-12);
    EXPECT_NEAR(r.aph, aph, 1e-12);
    EXPECT_EQ(r.true_positives, 4U);
    EXPECT_EQ(r.false_positives, 6U);
    EXPECT_LE(r.aph, r.ap);
}

TEST(Ap, RandomBoundsProperty) {
    Rng rng(84);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<Box3D> gts;
        std::vector<Detection> dets;
        for (int i = 0; i < 6; ++i) {
            gts.push_back(random_box(rng, 6.0));
        }
        for (int i = 0; i < 10; ++i) {
            Box3D b = rng.bernoulli(0.6) ? gts[rng.uniform_index(gts.size())] : random_box(rng, 6.0);
            b.center.x() += rng.normal(0, 0.1);
            b.yaw = normalize_angle(b.yaw + rng.normal(0, 1.0));
            dets.push_back(det_of(b, rng.uniform(), i));
        }
        const ApResult r = evaluate_ap(dets, gts, 0.5);
        EXPECT_GE(r.aph, 0.0);
        EXPECT_LE(r.aph, r.ap + 1e-15);
        EXPECT_LE(r.ap, 1.0 + 1e-15);
    }
}
