// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/detection.hpp"
#include "mapprior/errors.hpp"
#include "mapprior/nn.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace mapprior {

    namespace {

        // Decoded box dimensions are kept in [1 mm, 1 km]; the log-dim gradient is zero outside.
        constexpr double kMinDim = 1e-3;
        constexpr double kMaxDim = 1e3;

        double clamp_dim(double v) { return std::clamp(v, kMinDim, kMaxDim); }
        bool dim_in_range(double v) { return v > kMinDim && v < kMaxDim; }

        // log sigmoid(x) and log(1 - sigmoid(x))
        double log_p(double x) { return -softplus(-x); }
        double log_1mp(double x) { return -softplus(x); }

        bool bev_contains(const Box3D& box, double x, double y) {
            const double dx = x - box.center.x();
            const double dy = y - box.center.y();
            const double c = std::cos(box.yaw);
            const double s = std::sin(box.yaw);
            return std::abs(c * dx + s * dy) <= 0.5 * box.dims.x() && std::abs(-s * dx + c * dy) <= 0.5 * box.dims.y();
        }

        std::vector<double> column(const Matrix& m, int c) {
            std::vector<double> out(static_cast<std::size_t>(m.rows()));
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                out[static_cast<std::size_t>(r)] = m(r, c);
            }
            return out;
        }

        bool det_before(const Detection& a, const Detection& b) {
            if (a.score != b.score) {
                return a.score > b.score;
            }
            if (a.key != b.key) {
                return a.key < b.key;
            }
            return a.class_id < b.class_id;
        }

    } // namespace

    void LossConfig::validate() const {
        if (!(lambda_hm >= 0.0 && lambda_bbox >= 0.0 && lambda_seg >= 0.0)) {
            throw ConfigError("loss weights must be non-negative");
        }
        if (heading_bins < 1) {
            throw ConfigError("heading_bins must be at least 1");
        }
        if (!(smooth_l1_beta > 0.0)) {
            throw ConfigError("smooth_l1_beta must be positive");
        }
    }

    double gaussian_radius(double l_cells, double w_cells, double min_overlap) {
        const double h = l_cells;
        const double w = w_cells;
        const double b1 = h + w;
        const double c1 = w * h * (1.0 - min_overlap) / (1.0 + min_overlap);
        const double r1 = (b1 + std::sqrt(b1 * b1 - 4.0 * c1)) / 2.0;
        const double b2 = 2.0 * (h + w);
        const double c2 = (1.0 - min_overlap) * w * h;
        const double r2 = (b2 + std::sqrt(b2 * b2 - 16.0 * c2)) / 2.0;
        const double a3 = 4.0 * min_overlap;
        const double b3 = -2.0 * min_overlap * (h + w);
        const double c3 = (min_overlap - 1.0) * w * h;
        const double r3 = (b3 + std::sqrt(b3 * b3 - 4.0 * a3 * c3)) / 2.0;
        return std::min({r1, r2, r3});
    }

    std::vector<int> count_points_in_boxes(const PointCloud& pc, std::span<const LabeledBox> boxes) {
        std::vector<int> counts(boxes.size(), 0);
        for (std::size_t b = 0; b < boxes.size(); ++b) {
            for (const auto& p : pc.points) {
                if (point_in_box(p.position, boxes[b].box, 0.0)) {
                    ++counts[b];
                }
            }
        }
        return counts;
    }

    HeadingTarget encode_heading(double theta, int n_bins) {
        const double width = kTwoPi / n_bins;
        const double t = normalize_angle(theta);
        const auto k = static_cast<long>(std::lround(t / width));
        HeadingTarget out;
        out.bin = static_cast<int>(((k % n_bins) + n_bins) % n_bins);
        out.residual = normalize_angle(t - out.bin * width);
        return out;
    }

    double decode_heading(int bin, double residual, int n_bins) {
        return normalize_angle(bin * (kTwoPi / n_bins) + residual);
    }

    Targets make_targets(std::span<const LabeledBox> boxes, const std::vector<BevKey>& keys, const GridConfig& grid,
                         const TargetConfig& cfg, std::span<const int> interior_points) {
        if (!interior_points.empty() && interior_points.size() != boxes.size()) {
            throw ShapeError("make_targets: one interior point count per box is required");
        }
        Targets t;
        const auto rows = static_cast<Eigen::Index>(keys.size());
        t.heatmap = Matrix::Zero(rows, cfg.num_classes);
        t.seg = Matrix::Zero(rows, cfg.num_classes);

        std::unordered_map<BevKey, std::size_t, BevKeyHash> index;
        index.reserve(keys.size());
        for (std::size_t i = 0; i < keys.size(); ++i) {
            index.emplace(keys[i], i);
        }
        std::vector<char> taken(keys.size() * static_cast<std::size_t>(cfg.num_classes), 0);
        const double v = grid.voxel_size;

        for (std::size_t b = 0; b < boxes.size(); ++b) {
            const LabeledBox& lb = boxes[b];
            if (lb.class_id < 0 || lb.class_id >= cfg.num_classes) {
                throw InputError(fmt::format("box class {} outside [0, {})", lb.class_id, cfg.num_classes));
            }
            if (!interior_points.empty() && interior_points[b] < cfg.min_points) {
                ++t.ignored_boxes;
                continue;
            }
            const Box3D& box = lb.box;
            const BevKey center = grid.key_of(box.center.x(), box.center.y());
            const double radius = std::max(
                cfg.min_radius_cells, std::floor(gaussian_radius(box.dims.x() / v, box.dims.y() / v, cfg.min_overlap)));
            const int r = static_cast<int>(radius);
            const double sigma = (2.0 * radius + 1.0) / 6.0;
            for (int dx = -r; dx <= r; ++dx) {
                for (int dy = -r; dy <= r; ++dy) {
                    const auto it = index.find({center.ix + dx, center.iy + dy});
                    if (it == index.end()) {
                        continue;
                    }
                    const double val = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                    auto& cell = t.heatmap(static_cast<Eigen::Index>(it->second), lb.class_id);
                    cell = std::max(cell, val);
                }
            }

            const auto corners = box_corners_bev(box);
            double min_x = corners[0].x(), max_x = min_x, min_y = corners[0].y(), max_y = min_y;
            for (const auto& c : corners) {
                min_x = std::min(min_x, c.x());
                max_x = std::max(max_x, c.x());
                min_y = std::min(min_y, c.y());
                max_y = std::max(max_y, c.y());
            }
            const BevKey lo = grid.key_of(min_x, min_y);
            const BevKey hi = grid.key_of(max_x, max_y);
            for (int ix = lo.ix; ix <= hi.ix; ++ix) {
                for (int iy = lo.iy; iy <= hi.iy; ++iy) {
                    const auto it = index.find({ix, iy});
                    if (it == index.end()) {
                        continue;
                    }
                    const Vec2 c = grid.center_of({ix, iy});
                    if (bev_contains(box, c.x(), c.y())) {
                        t.seg(static_cast<Eigen::Index>(it->second), lb.class_id) = 1.0;
                    }
                }
            }

            const auto it = index.find(center);
            if (it == index.end()) {
                ++t.missing_centers;
                continue;
            }
            const std::size_t slot = it->second * static_cast<std::size_t>(cfg.num_classes) + static_cast<std::size_t>(lb.class_id);
            if (taken[slot]) {
                continue;
            }
            taken[slot] = 1;
            const Vec2 vc = grid.center_of(center);
            PositiveTarget pos;
            pos.row = it->second;
            pos.class_id = lb.class_id;
            pos.box = {box.center.x() - vc.x(), box.center.y() - vc.y(), box.center.z() - grid.z_reference,
                       std::log(box.dims.x()), std::log(box.dims.y()), std::log(box.dims.z())};
            const HeadingTarget h = encode_heading(box.yaw, cfg.heading_bins);
            pos.bin = h.bin;
            pos.residual = h.residual;
            pos.gt = box;
            t.positives.push_back(pos);
        }
        return t;
    }

    double focal_heatmap_loss(std::span<const double> logits, std::span<const double> target, double alpha,
                              double beta, std::span<double> grad) {
        if (logits.size() != target.size() || (!grad.empty() && grad.size() != logits.size())) {
            throw ShapeError("focal_heatmap_loss: size mismatch");
        }
        std::size_t peaks = 0;
        for (const double t : target) {
            if (t == 1.0) {
                ++peaks;
            }
        }
        const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(peaks, 1));
        double loss = 0.0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            const double x = logits[i];
            const double p = sigmoid(x);
            double l = 0.0;
            double g = 0.0;
            if (target[i] == 1.0) {
                const double q = std::pow(1.0 - p, alpha);
                l = -q * log_p(x);
                g = q * (alpha * p * log_p(x) - (1.0 - p));
            } else {
                const double w = std::pow(1.0 - target[i], beta);
                const double q = std::pow(p, alpha);
                l = -w * q * log_1mp(x);
                g = w * q * (p - alpha * (1.0 - p) * log_1mp(x));
            }
            loss += l;
            if (!grad.empty()) {
                grad[i] = g * norm;
            }
        }
        return loss * norm;
    }

    double seg_focal_loss(std::span<const double> logits, std::span<const double> target, double gamma,
                          std::span<double> grad) {
        if (logits.size() != target.size() || (!grad.empty() && grad.size() != logits.size())) {
            throw ShapeError("seg_focal_loss: size mismatch");
        }
        if (logits.empty()) {
            return 0.0;
        }
        const double norm = 1.0 / static_cast<double>(logits.size());
        double loss = 0.0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            const double x = logits[i];
            const double p = sigmoid(x);
            const double t = target[i];
            const double qp = std::pow(1.0 - p, gamma);
            const double qn = std::pow(p, gamma);
            loss += -t * qp * log_p(x) - (1.0 - t) * qn * log_1mp(x);
            if (!grad.empty()) {
                grad[i] = norm * (t * qp * (gamma * p * log_p(x) - (1.0 - p)) +
                                  (1.0 - t) * qn * (p - gamma * (1.0 - p) * log_1mp(x)));
            }
        }
        return loss * norm;
    }

    double smooth_l1(std::span<const double> pred, std::span<const double> target, double beta,
                     std::span<double> grad) {
        if (pred.size() != target.size() || (!grad.empty() && grad.size() != pred.size())) {
            throw ShapeError("smooth_l1: size mismatch");
        }
        if (!(beta > 0.0)) {
            throw ConfigError("smooth_l1 beta must be positive");
        }
        double loss = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double x = pred[i] - target[i];
            const double ax = std::abs(x);
            if (ax < beta) {
                loss += 0.5 * x * x / beta;
                if (!grad.empty()) {
                    grad[i] = x / beta;
                }
            } else {
                loss += ax - 0.5 * beta;
                if (!grad.empty()) {
                    grad[i] = x > 0.0 ? 1.0 : -1.0;
                }
            }
        }
        return loss;
    }

    double heading_bin_loss(std::span<const double> bin_logits, double residual_pred, double theta_gt, int n_bins,
                            double beta, std::span<double> grad_logits, double* grad_residual) {
        if (static_cast<int>(bin_logits.size()) != n_bins) {
            throw ShapeError("heading_bin_loss: logits size differs from bin count");
        }
        const HeadingTarget t = encode_heading(theta_gt, n_bins);
        const double m = *std::max_element(bin_logits.begin(), bin_logits.end());
        double z = 0.0;
        for (const double l : bin_logits) {
            z += std::exp(l - m);
        }
        const double lse = m + std::log(z);
        double loss = lse - bin_logits[static_cast<std::size_t>(t.bin)];
        if (!grad_logits.empty()) {
            for (std::size_t k = 0; k < bin_logits.size(); ++k) {
                grad_logits[k] = std::exp(bin_logits[k] - lse) - (static_cast<int>(k) == t.bin ? 1.0 : 0.0);
            }
        }
        double gr = 0.0;
        const double pred[] = {residual_pred};
        const double tgt[] = {t.residual};
        loss += smooth_l1(pred, tgt, beta, std::span<double>(&gr, 1));
        if (grad_residual) {
            *grad_residual = gr;
        }
        return loss;
    }

    double iou_loss(const AxisBox& a, const AxisBox& b, std::span<double> grad) {
        if (!grad.empty()) {
            std::fill(grad.begin(), grad.end(), 0.0);
        }
        const double a_r = a.cx + 0.5 * a.l, b_r = b.cx + 0.5 * b.l;
        const double a_l = a.cx - 0.5 * a.l, b_l = b.cx - 0.5 * b.l;
        const double a_t = a.cy + 0.5 * a.w, b_t = b.cy + 0.5 * b.w;
        const double a_b = a.cy - 0.5 * a.w, b_b = b.cy - 0.5 * b.w;
        const double ix = std::min(a_r, b_r) - std::max(a_l, b_l);
        const double iy = std::min(a_t, b_t) - std::max(a_b, b_b);
        if (ix <= 0.0 || iy <= 0.0) {
            return 1.0;
        }
        const double inter = ix * iy;
        const double uni = a.l * a.w + b.l * b.w - inter;
        const double iou = inter / uni;
        if (!grad.empty()) {
            // d ix / d(cx, l) of a; subgradient picks `a` on ties.
            const double dix_dcx = (a_r <= b_r ? 1.0 : 0.0) - (a_l >= b_l ? 1.0 : 0.0);
            const double dix_dl = (a_r <= b_r ? 0.5 : 0.0) + (a_l >= b_l ? 0.5 : 0.0);
            const double diy_dcy = (a_t <= b_t ? 1.0 : 0.0) - (a_b >= b_b ? 1.0 : 0.0);
            const double diy_dw = (a_t <= b_t ? 0.5 : 0.0) + (a_b >= b_b ? 0.5 : 0.0);
            const double d_inter = (uni + inter) / (uni * uni); // d iou / d inter
            const double d_uni = -inter / (uni * uni);          // d iou / d union (direct)
            grad[0] = -(d_inter * dix_dcx * iy);
            grad[1] = -(d_inter * diy_dcy * ix);
            grad[2] = -(d_inter * dix_dl * iy + d_uni * a.w);
            grad[3] = -(d_inter * diy_dw * ix + d_uni * a.l);
        }
        return 1.0 - iou;
    }

    LossBreakdown total_loss(const HeadOutput& head, const Targets& targets, const GridConfig& grid,
                             const LossConfig& cfg, Matrix* grad) {
        const HeadLayout& L = head.layout;
        const Eigen::Index rows = head.values.rows();
        if (head.values.cols() != L.width() || targets.heatmap.rows() != rows || targets.seg.rows() != rows ||
            targets.heatmap.cols() != L.num_classes || L.heading_bins != cfg.heading_bins) {
            throw ShapeError("total_loss: head output and targets are not aligned");
        }
        if (grad) {
            grad->setZero(rows, L.width());
        }
        LossBreakdown out;
        std::vector<double> g(static_cast<std::size_t>(rows));
        for (int c = 0; c < L.num_classes; ++c) {
            const auto logits = column(head.values, L.heatmap(c));
            const auto tgt = column(targets.heatmap, c);
            const double hm = focal_heatmap_loss(logits, tgt, cfg.focal_alpha, cfg.focal_beta, grad ? std::span<double>(g) : std::span<double>{});
            if (grad) {
                for (Eigen::Index r = 0; r < rows; ++r) {
                    (*grad)(r, L.heatmap(c)) += cfg.lambda_hm * g[static_cast<std::size_t>(r)];
                }
            }
            const auto seg_logits = column(head.values, L.seg(c));
            const auto seg_tgt = column(targets.seg, c);
            const double seg = seg_focal_loss(seg_logits, seg_tgt, cfg.seg_gamma, grad ? std::span<double>(g) : std::span<double>{});
            if (grad) {
                for (Eigen::Index r = 0; r < rows; ++r) {
                    (*grad)(r, L.seg(c)) += cfg.lambda_seg * g[static_cast<std::size_t>(r)];
                }
            }

            std::size_t n_pos = 0;
            for (const auto& p : targets.positives) {
                n_pos += p.class_id == c ? 1 : 0;
            }
            double bbox = 0.0;
            if (n_pos > 0) {
                const double w = 1.0 / static_cast<double>(n_pos);
                for (const auto& p : targets.positives) {
                    if (p.class_id != c) {
                        continue;
                    }
                    const auto r = static_cast<Eigen::Index>(p.row);
                    std::array<double, 6> pred{};
                    for (int k = 0; k < 6; ++k) {
                        pred[static_cast<std::size_t>(k)] = head.values(r, L.box(k));
                    }
                    std::array<double, 6> g_box{};
                    double term = smooth_l1(pred, p.box, cfg.smooth_l1_beta, g_box);

                    std::vector<double> bins(static_cast<std::size_t>(L.heading_bins));
                    for (int k = 0; k < L.heading_bins; ++k) {
                        bins[static_cast<std::size_t>(k)] = head.values(r, L.bin(k));
                    }
                    std::vector<double> g_bins(bins.size());
                    double g_res = 0.0;
                    term += heading_bin_loss(bins, head.values(r, L.residual()), p.gt.yaw, L.heading_bins,
                                             cfg.smooth_l1_beta, g_bins, &g_res);

                    const Vec2 vc = grid.center_of(head.keys[p.row]);
                    const double l = std::exp(pred[3]);
                    const double wd = std::exp(pred[4]);
                    const AxisBox pb{vc.x() + pred[0], vc.y() + pred[1], clamp_dim(l), clamp_dim(wd)};
                    const AxisBox gb{p.gt.center.x(), p.gt.center.y(), p.gt.dims.x(), p.gt.dims.y()};
                    std::array<double, 4> g_iou{};
                    term += iou_loss(pb, gb, g_iou);
                    bbox += w * term;

                    if (grad) {
                        const double s = cfg.lambda_bbox * w;
                        g_box[0] += g_iou[0];
                        g_box[1] += g_iou[1];
                        g_box[3] += dim_in_range(l) ? g_iou[2] * l : 0.0;
                        g_box[4] += dim_in_range(wd) ? g_iou[3] * wd : 0.0;
                        for (int k = 0; k < 6; ++k) {
                            (*grad)(r, L.box(k)) += s * g_box[static_cast<std::size_t>(k)];
                        }
                        for (int k = 0; k < L.heading_bins; ++k) {
                            (*grad)(r, L.bin(k)) += s * g_bins[static_cast<std::size_t>(k)];
                        }
                        (*grad)(r, L.residual()) += s * g_res;
                    }
                }
            }
            out.heatmap += hm;
            out.seg += seg;
            out.bbox += bbox;
            out.total += cfg.lambda_hm * hm + cfg.lambda_bbox * bbox + cfg.lambda_seg * seg;
        }
        return out;
    }

    std::vector<Detection> decode_boxes(const HeadOutput& head, const GridConfig& grid, double score_threshold) {
        const HeadLayout& L = head.layout;
        std::vector<Detection> dets;
        for (Eigen::Index r = 0; r < head.values.rows(); ++r) {
            for (int c = 0; c < L.num_classes; ++c) {
                const double score = sigmoid(head.values(r, L.heatmap(c)));
                if (!(score > score_threshold)) {
                    continue;
                }
                const BevKey key = head.keys[static_cast<std::size_t>(r)];
                const Vec2 vc = grid.center_of(key);
                Detection d;
                d.key = key;
                d.class_id = c;
                d.score = score;
                d.box.center = Vec3(vc.x() + head.values(r, L.box(0)), vc.y() + head.values(r, L.box(1)),
                                    grid.z_reference + head.values(r, L.box(2)));
                for (int k = 0; k < 3; ++k) {
                    d.box.dims[k] = clamp_dim(std::exp(head.values(r, L.box(3 + k))));
                }
                int best = 0;
                for (int k = 1; k < L.heading_bins; ++k) {
                    if (head.values(r, L.bin(k)) > head.values(r, L.bin(best))) {
                        best = k;
                    }
                }
                d.box.yaw = decode_heading(best, head.values(r, L.residual()), L.heading_bins);
                dets.push_back(d);
            }
        }
        std::sort(dets.begin(), dets.end(), det_before);
        return dets;
    }

    double polygon_area(const Polygon& poly) {
        double a = 0.0;
        for (std::size_t i = 0; i < poly.size(); ++i) {
            const Vec2& p = poly[i];
            const Vec2& q = poly[(i + 1) % poly.size()];
            a += p.x() * q.y() - q.x() * p.y();
        }
        return 0.5 * std::abs(a);
    }

    Polygon clip_convex(const Polygon& subject, const Polygon& clip) {
        Polygon out = subject;
        for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
            const Vec2& a = clip[e];
            const Vec2& b = clip[(e + 1) % clip.size()];
            const Vec2 edge = b - a;
            const auto side = [&](const Vec2& p) { return edge.x() * (p.y() - a.y()) - edge.y() * (p.x() - a.x()); };
            const Polygon in = std::move(out);
            out.clear();
            for (std::size_t i = 0; i < in.size(); ++i) {
                const Vec2& p = in[i];
                const Vec2& q = in[(i + 1) % in.size()];
                const double sp = side(p);
                const double sq = side(q);
                if (sp >= 0.0) {
                    out.push_back(p);
                }
                if ((sp >= 0.0) != (sq >= 0.0)) {
                    const double t = sp / (sp - sq);
                    out.push_back(p + t * (q - p));
                }
            }
        }
        return out;
    }

    double iou_bev_rotated(const Box3D& a, const Box3D& b) {
        const auto ca = box_corners_bev(a);
        const auto cb = box_corners_bev(b);
        const Polygon pa(ca.begin(), ca.end());
        const Polygon pb(cb.begin(), cb.end());
        const double inter = polygon_area(clip_convex(pa, pb));
        const double area_a = a.dims.x() * a.dims.y();
        const double area_b = b.dims.x() * b.dims.y();
        const double uni = area_a + area_b - inter;
        return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
    }

    double iou_3d_rotated(const Box3D& a, const Box3D& b) {
        const double top = std::min(a.center.z() + 0.5 * a.dims.z(), b.center.z() + 0.5 * b.dims.z());
        const double bottom = std::max(a.center.z() - 0.5 * a.dims.z(), b.center.z() - 0.5 * b.dims.z());
        const double dz = top - bottom;
        if (dz <= 0.0) {
            return 0.0;
        }
        const auto ca = box_corners_bev(a);
        const auto cb = box_corners_bev(b);
        const double inter_bev = polygon_area(clip_convex(Polygon(ca.begin(), ca.end()), Polygon(cb.begin(), cb.end())));
        const double inter = inter_bev * dz;
        const double uni = a.dims.prod() + b.dims.prod() - inter;
        return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
    }

    std::vector<Detection> nms_bev(std::vector<Detection> dets, double iou_threshold) {
        std::sort(dets.begin(), dets.end(), det_before);
        std::vector<Detection> kept;
        for (const auto& d : dets) {
            const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
                return k.class_id == d.class_id && iou_bev_rotated(k.box, d.box) > iou_threshold;
            });
            if (!suppressed) {
                kept.push_back(d);
            }
        }
        return kept;
    }

    double heading_weight(double predicted, double truth) {
        const double d = std::abs(normalize_angle(predicted - truth));
        return std::max(0.0, 1.0 - d / kPi);
    }

    ApResult evaluate_ap(std::span<const std::vector<Detection>> dets, std::span<const std::vector<LabeledBox>> gts,
                         int class_id, double iou_threshold) {
        if (dets.size() != gts.size()) {
            throw ShapeError("evaluate_ap: detections and ground truth cover different frame counts");
        }
        struct Ranked {
            const Detection* det;
            std::size_t frame;
        };
        std::vector<Ranked> ranked;
        ApResult res;
        std::vector<std::vector<char>> matched(gts.size());
        for (std::size_t f = 0; f < gts.size(); ++f) {
            matched[f].assign(gts[f].size(), 0);
            for (const auto& g : gts[f]) {
                res.num_gt += g.class_id == class_id ? 1 : 0;
            }
            for (const auto& d : dets[f]) {
                if (d.class_id == class_id) {
                    ranked.push_back({&d, f});
                }
            }
        }
        std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
            if (a.det->score != b.det->score) {
                return a.det->score > b.det->score;
            }
            if (a.frame != b.frame) {
                return a.frame < b.frame;
            }
            return a.det->key < b.det->key;
        });
        if (res.num_gt == 0) {
            res.false_positives = ranked.size();
            return res;
        }

        std::vector<double> precision, precision_h;
        std::vector<char> is_tp;
        double tp = 0.0, tp_h = 0.0;
        for (std::size_t k = 0; k < ranked.size(); ++k) {
            const auto& [det, f] = ranked[k];
            double best_iou = iou_threshold;
            std::ptrdiff_t best = -1;
            for (std::size_t j = 0; j < gts[f].size(); ++j) {
                if (matched[f][j] || gts[f][j].class_id != class_id) {
                    continue;
                }
                const double iou = iou_3d_rotated(det->box, gts[f][j].box);
                if (iou >= best_iou && (best < 0 || iou > best_iou)) {
                    best_iou = iou;
                    best = static_cast<std::ptrdiff_t>(j);
                }
            }
            if (best >= 0) {
                matched[f][static_cast<std::size_t>(best)] = 1;
                tp += 1.0;
                tp_h += heading_weight(det->box.yaw, gts[f][static_cast<std::size_t>(best)].box.yaw);
                ++res.true_positives;
                is_tp.push_back(1);
            } else {
                ++res.false_positives;
                is_tp.push_back(0);
            }
            precision.push_back(tp / static_cast<double>(k + 1));
            precision_h.push_back(tp_h / static_cast<double>(k + 1));
        }
        // all-point interpolation: running max of precision from the right
        for (std::size_t k = ranked.size(); k-- > 1;) {
            precision[k - 1] = std::max(precision[k - 1], precision[k]);
            precision_h[k - 1] = std::max(precision_h[k - 1], precision_h[k]);
        }
        const double step = 1.0 / static_cast<double>(res.num_gt);
        for (std::size_t k = 0; k < ranked.size(); ++k) {
            if (is_tp[k]) {
                res.ap += step * precision[k];
                res.aph += step * precision_h[k];
            }
        }
        return res;
    }

    ApResult evaluate_ap(std::span<const Detection> dets, std::span<const Box3D> gts, double iou_threshold) {
        std::vector<std::vector<Detection>> d(1);
        std::vector<std::vector<LabeledBox>> g(1);
        for (const auto& det : dets) {
            Detection copy = det;
            copy.class_id = 0;
            d[0].push_back(copy);
        }
        for (const auto& b : gts) {
            g[0].push_back({b, 0});
        }
        return evaluate_ap(d, g, 0, iou_threshold);
    }

} // namespace mapprior
