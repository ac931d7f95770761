// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mapprior/geom.hpp"
#include "mapprior/matrix.hpp"
#include "mapprior/voxel_grid.hpp"

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace mapprior {

    struct LabeledBox {
        Box3D box;
        int class_id = 0;
    };

    struct Detection {
        Box3D box;
        double score = 0.0; // sigmoid of the heatmap logit
        int class_id = 0;
        BevKey key;         // source pillar, used for deterministic ordering
    };

    struct LossConfig {
        double lambda_hm = 1.0;
        double lambda_bbox = 2.0;
        double lambda_seg = 1.0;
        double focal_alpha = 2.0;
        double focal_beta = 4.0;
        double seg_gamma = 2.0;
        int heading_bins = 12;
        double smooth_l1_beta = 1.0;

        void validate() const;
    };

    /// Column layout of the per-voxel head output.
    struct HeadLayout {
        int num_classes = 1;
        int heading_bins = 12;

        static constexpr int kBoxParams = 6; // dx, dy, dz, log l, log w, log h

        int heatmap(int c) const { return c; }
        int box(int k) const { return num_classes + k; }
        int bin(int k) const { return num_classes + kBoxParams + k; }
        int residual() const { return num_classes + kBoxParams + heading_bins; }
        int seg(int c) const { return num_classes + kBoxParams + heading_bins + 1 + c; }
        int width() const { return 2 * num_classes + kBoxParams + heading_bins + 1; }
    };

    struct HeadOutput {
        HeadLayout layout;
        std::vector<BevKey> keys; // row order of `values`
        Matrix values;            // keys.size() x layout.width()
    };

    struct TargetConfig {
        int num_classes = 1;
        int heading_bins = 12;
        double min_radius_cells = 2.0;
        double min_overlap = 0.1;
        int min_points = 5; // boxes with fewer interior points are ignored
    };

    struct PositiveTarget {
        std::size_t row = 0;
        int class_id = 0;
        std::array<double, 6> box{}; // dx, dy, dz, log l, log w, log h
        int bin = 0;
        double residual = 0.0;
        Box3D gt;
    };

    struct Targets {
        Matrix heatmap; // rows x classes
        Matrix seg;     // rows x classes
        std::vector<PositiveTarget> positives;
        std::size_t ignored_boxes = 0;  // too few interior points
        std::size_t missing_centers = 0; // center pillar not among the rows
    };

    /// CenterNet radius for a footprint of `l` x `w` cells at the given minimum overlap.
    double gaussian_radius(double l_cells, double w_cells, double min_overlap);

    /// Interior point count per box.
    std::vector<int> count_points_in_boxes(const PointCloud& pc, std::span<const LabeledBox> boxes);

    /// Heatmap, box and segmentation targets on the given rows. `interior_points` (one per box)
    /// enables the minimum-point filter; pass an empty span to keep every box.
    Targets make_targets(std::span<const LabeledBox> boxes, const std::vector<BevKey>& keys, const GridConfig& grid,
                         const TargetConfig& cfg, std::span<const int> interior_points = {});

    struct HeadingTarget {
        int bin = 0;
        double residual = 0.0;
    };

    /// Bins of width 2pi/n centered on 2pi k/n.
    HeadingTarget encode_heading(double theta, int n_bins);
    double decode_heading(int bin, double residual, int n_bins);

    // Losses. A non-empty gradient span receives the gradient with respect to the first argument(s).

    /// Penalty-reduced focal loss over one class channel, normalized by the number of peaks (min 1).
    double focal_heatmap_loss(std::span<const double> logits, std::span<const double> target, double alpha,
                              double beta, std::span<double> grad = {});

    /// Binary focal loss averaged over rows.
    double seg_focal_loss(std::span<const double> logits, std::span<const double> target, double gamma,
                          std::span<double> grad = {});

    /// Summed smooth-L1.
    double smooth_l1(std::span<const double> pred, std::span<const double> target, double beta,
                     std::span<double> grad = {});

    /// Cross-entropy on the true bin plus smooth-L1 on its residual.
    double heading_bin_loss(std::span<const double> bin_logits, double residual_pred, double theta_gt, int n_bins,
                            double beta, std::span<double> grad_logits = {}, double* grad_residual = nullptr);

    struct AxisBox {
        double cx, cy, l, w;
    };

    /// 1 - IoU of axis-aligned footprints (yaw ignored). `grad` receives d/d(cx, cy, l, w) of `pred`.
    double iou_loss(const AxisBox& pred, const AxisBox& gt, std::span<double> grad = {});

    struct LossBreakdown {
        double total = 0.0;
        double heatmap = 0.0; // unweighted, summed over classes
        double bbox = 0.0;
        double seg = 0.0;
    };

    /// sum_c (l_hm L_hm^c + l_bbox L_bbox^c + l_seg L_seg^c); box terms only at positive rows.
    /// `grad` (if given) is resized to the head output shape.
    LossBreakdown total_loss(const HeadOutput& head, const Targets& targets, const GridConfig& grid,
                             const LossConfig& cfg, Matrix* grad = nullptr);

    /// Detections above `score_threshold`, ordered by descending score then key then class.
    std::vector<Detection> decode_boxes(const HeadOutput& head, const GridConfig& grid, double score_threshold);

    // Rotated-box geometry.
    using Polygon = std::vector<Vec2>;
    double polygon_area(const Polygon& poly);
    /// Sutherland-Hodgman clip of `subject` by the convex counterclockwise polygon `clip`.
    Polygon clip_convex(const Polygon& subject, const Polygon& clip);
    double iou_bev_rotated(const Box3D& a, const Box3D& b);
    double iou_3d_rotated(const Box3D& a, const Box3D& b);

    /// Greedy class-aware NMS on rotated BEV IoU; input order is re-sorted by score then key.
    std::vector<Detection> nms_bev(std::vector<Detection> dets, double iou_threshold = 0.5);

    struct ApResult {
        double ap = 0.0;
        double aph = 0.0;
        std::size_t true_positives = 0;
        std::size_t false_positives = 0;
        std::size_t num_gt = 0;
    };

    /// AP and heading-weighted APH at a rotated 3D IoU threshold over several frames, for one class.
    ApResult evaluate_ap(std::span<const std::vector<Detection>> dets, std::span<const std::vector<LabeledBox>> gts,
                         int class_id, double iou_threshold);
    /// Single-frame convenience overload; every box is treated as the same class.
    ApResult evaluate_ap(std::span<const Detection> dets, std::span<const Box3D> gts, double iou_threshold);

    /// Heading accuracy weight max(0, 1 - |dtheta| / pi) with dtheta wrapped to [-pi, pi].
    double heading_weight(double predicted, double truth);

} // namespace mapprior
