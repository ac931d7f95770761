// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/cli.hpp"
#include "mapprior/detection.hpp"
#include "mapprior/errors.hpp"
#include "mapprior/fusion.hpp"
#include "mapprior/gaussian_map.hpp"
#include "mapprior/gradcheck.hpp"
#include "mapprior/io.hpp"
#include "mapprior/scene_synth.hpp"
#include "mapprior/surfel_map.hpp"
#include "mapprior/trainer.hpp"
#include "mapprior/voxel_grid.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fmt/format.h>

namespace py = pybind11;
using namespace mapprior;

namespace {

    using Rows3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
    using Boxes = Eigen::Matrix<double, Eigen::Dynamic, 7, Eigen::RowMajor>;

    // Boxes cross the boundary as rows of (cx, cy, cz, l, w, h, yaw).
    Box3D box_from(const Eigen::Ref<const Eigen::Matrix<double, 1, 7>>& r) {
        Box3D b;
        b.center = Vec3(r(0), r(1), r(2));
        b.dims = Vec3(r(3), r(4), r(5));
        b.yaw = r(6);
        return b;
    }

    Eigen::Matrix<double, 1, 7> box_row(const Box3D& b) {
        Eigen::Matrix<double, 1, 7> r;
        r << b.center.x(), b.center.y(), b.center.z(), b.dims.x(), b.dims.y(), b.dims.z(), b.yaw;
        return r;
    }

    std::vector<Box3D> boxes_from(const Boxes& m) {
        std::vector<Box3D> out;
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            out.push_back(box_from(m.row(i)));
        }
        return out;
    }

    std::vector<Vec3> vec3s(const Rows3& m) {
        std::vector<Vec3> out(static_cast<std::size_t>(m.rows()));
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            out[static_cast<std::size_t>(i)] = m.row(i).transpose();
        }
        return out;
    }

    PointCloud cloud_from(const Rows3& positions, const std::optional<Rows3>& colors) {
        if (colors && colors->rows() != positions.rows()) {
            throw ShapeError(fmt::format("{} positions but {} colors", positions.rows(), colors->rows()));
        }
        PointCloud pc;
        pc.points.resize(static_cast<std::size_t>(positions.rows()));
        for (Eigen::Index i = 0; i < positions.rows(); ++i) {
            auto& p = pc.points[static_cast<std::size_t>(i)];
            p.position = positions.row(i).transpose();
            p.color = colors ? Vec3(colors->row(i).transpose()) : Vec3::Constant(0.5);
        }
        return pc;
    }

    py::dict cloud_dict(const PointCloud& pc) {
        Rows3 pos(static_cast<Eigen::Index>(pc.size()), 3), col(static_cast<Eigen::Index>(pc.size()), 3);
        std::vector<double> intensity;
        std::vector<std::uint16_t> traversal;
        for (std::size_t i = 0; i < pc.size(); ++i) {
            pos.row(static_cast<Eigen::Index>(i)) = pc.points[i].position.transpose();
            col.row(static_cast<Eigen::Index>(i)) = pc.points[i].color.transpose();
            intensity.push_back(pc.points[i].intensity);
            traversal.push_back(pc.points[i].traversal_id);
        }
        py::dict d;
        d["positions"] = pos;
        d["colors"] = col;
        d["intensity"] = py::array(py::cast(intensity));
        d["traversal_id"] = py::array(py::cast(traversal));
        return d;
    }

    py::dict surfel_dict(const SurfelMap& m) {
        const auto n = static_cast<Eigen::Index>(m.size());
        Rows3 pos(n, 3), nrm(n, 3), col(n, 3);
        std::vector<std::uint32_t> support;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& s = m.surfels[static_cast<std::size_t>(i)];
            pos.row(i) = s.position.transpose();
            nrm.row(i) = s.normal.transpose();
            col.row(i) = s.color.transpose();
            support.push_back(s.support);
        }
        py::dict d;
        d["positions"] = pos;
        d["normals"] = nrm;
        d["colors"] = col;
        d["support"] = py::array(py::cast(support));
        d["voxel_size"] = m.voxel_size;
        return d;
    }

    Matrix detections_matrix(const std::vector<Detection>& dets) {
        Matrix m(static_cast<Eigen::Index>(dets.size()), 9);
        for (std::size_t i = 0; i < dets.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            m.block(r, 0, 1, 7) = box_row(dets[i].box);
            m(r, 7) = dets[i].score;
            m(r, 8) = dets[i].class_id;
        }
        return m;
    }

    ReduceMode reduce_mode(const std::string& name) {
        if (name == "mean") {
            return ReduceMode::Mean;
        }
        if (name == "sum") {
            return ReduceMode::Sum;
        }
        if (name == "max") {
            return ReduceMode::Max;
        }
        throw ConfigError(fmt::format("unknown reduce mode '{}', expected mean, sum or max", name));
    }

    py::dict report_dict(const GradCheckReport& r) {
        py::dict d;
        d["max_rel_error"] = r.max_rel_error;
        d["worst_index"] = r.worst_index;
        d["worst_analytic"] = r.worst_analytic;
        d["worst_numeric"] = r.worst_numeric;
        d["checked"] = r.checked;
        return d;
    }

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "BEV detection with mapping priors: voxelization, surfel and Gaussian maps, gated fusion";

    // Every library error derives from mapprior.Error, itself a ValueError.
    static py::exception<Error> base(m, "Error", PyExc_ValueError);
    static py::exception<DecodeError> decode(m, "DecodeError", base.ptr());
    static py::exception<NumericError> numeric(m, "NumericError", base.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) {
                std::rethrow_exception(p);
            }
        } catch (const DecodeError& e) {
            PyErr_SetString(decode.ptr(), e.what());
        } catch (const NumericError& e) {
            PyErr_SetString(numeric.ptr(), e.what());
        } catch (const Error& e) {
            PyErr_SetString(base.ptr(), e.what());
        }
    });

    m.def(
        "dynamic_voxelize",
        [](const Rows3& positions, double voxel_size, double range, std::size_t max_voxels) {
            GridConfig g;
            g.voxel_size = voxel_size;
            g.range = range;
            g.max_voxels = max_voxels;
            const auto pts = vec3s(positions);
            const VoxelizationResult r = dynamic_voxelize(pts, g);
            Eigen::Matrix<std::int32_t, Eigen::Dynamic, 2, Eigen::RowMajor> keys(
                static_cast<Eigen::Index>(r.unique_keys.size()), 2);
            for (std::size_t i = 0; i < r.unique_keys.size(); ++i) {
                keys(static_cast<Eigen::Index>(i), 0) = r.unique_keys[i].ix;
                keys(static_cast<Eigen::Index>(i), 1) = r.unique_keys[i].iy;
            }
            py::dict d;
            d["keys"] = keys;
            d["segment_ids"] = py::array(py::cast(r.segment_ids));
            d["point_index"] = py::array(py::cast(r.point_index));
            d["dropped_out_of_range"] = r.dropped_out_of_range;
            d["dropped_overflow"] = r.dropped_overflow;
            return d;
        },
        py::arg("positions"), py::arg("voxel_size"), py::arg("range") = 75.0, py::arg("max_voxels") = 250000,
        "Group points into BEV pillars. Returns unique keys and a segment id per kept point.");

    m.def(
        "segment_reduce",
        [](const Matrix& features, const std::vector<int>& segment_ids, std::size_t num_segments,
           const std::string& mode) { return segment_reduce(features, segment_ids, num_segments, reduce_mode(mode)); },
        py::arg("features"), py::arg("segment_ids"), py::arg("num_segments"), py::arg("mode") = "mean");

    m.def(
        "estimate_normal",
        [](const Rows3& points, const Vec3& origin) {
            const auto pts = vec3s(points);
            return Vec3(estimate_normal(pts, origin));
        },
        py::arg("points"), py::arg("origin"));

    m.def(
        "build_surfels",
        [](const Rows3& positions, const std::optional<Rows3>& colors, double voxel_size, std::size_t min_support,
           const Vec3& origin, unsigned jobs, double tile_size) {
            SurfelBuildOptions opt;
            opt.voxel_size = voxel_size;
            opt.min_support = min_support;
            opt.origins = SensorOrigins(origin);
            const PointCloud pc = cloud_from(positions, colors);
            if (jobs > 1) {
                return surfel_dict(build_surfels_tiled(pc, opt, tile_size, jobs));
            }
            return surfel_dict(build_surfels(pc, opt));
        },
        py::arg("positions"), py::arg("colors") = py::none(), py::arg("voxel_size") = 0.25,
        py::arg("min_support") = 3, py::arg("origin") = Vec3(0, 0, 2), py::arg("jobs") = 1,
        py::arg("tile_size") = 4.0);

    m.def(
        "init_gaussians",
        [](const Rows3& positions, const std::optional<Rows3>& colors, double voxel_size, std::size_t min_support) {
            GaussianInitOptions opt;
            opt.voxel_size = voxel_size;
            opt.min_support = min_support;
            const GaussianMap map = init_gaussians_from_lidar(cloud_from(positions, colors), opt);
            return gaussian_to_feature_points(map).features;
        },
        py::arg("positions"), py::arg("colors") = py::none(), py::arg("voxel_size") = 0.25,
        py::arg("min_support") = 3,
        "Gaussian map initialized from points, returned as the 25-column feature matrix.");

    m.def(
        "gated_fuse",
        [](const Matrix& lidar, const Matrix& surfel, const Matrix& gaussian, std::uint64_t seed) {
            const FusionParams p = FusionParams::make(lidar.cols(), 7, seed);
            return gated_fuse(lidar, surfel, gaussian, p);
        },
        py::arg("lidar"), py::arg("surfel"), py::arg("gaussian"), py::arg("seed") = 0,
        "Gated fusion with freshly initialized weights drawn from `seed`.");

    m.def(
        "iou_bev",
        [](const Eigen::Matrix<double, 1, 7>& a, const Eigen::Matrix<double, 1, 7>& b) {
            return iou_bev_rotated(box_from(a), box_from(b));
        },
        py::arg("a"), py::arg("b"));
    m.def(
        "iou_3d",
        [](const Eigen::Matrix<double, 1, 7>& a, const Eigen::Matrix<double, 1, 7>& b) {
            return iou_3d_rotated(box_from(a), box_from(b));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "nms",
        [](const Boxes& boxes, const std::vector<double>& scores, double iou_threshold) {
            if (scores.size() != static_cast<std::size_t>(boxes.rows())) {
                throw ShapeError(fmt::format("{} boxes but {} scores", boxes.rows(), scores.size()));
            }
            std::vector<Detection> dets;
            for (Eigen::Index i = 0; i < boxes.rows(); ++i) {
                Detection d;
                d.box = box_from(boxes.row(i));
                d.score = scores[static_cast<std::size_t>(i)];
                d.key = {static_cast<std::int32_t>(i), 0};
                dets.push_back(d);
            }
            std::vector<int> kept;
            for (const auto& d : nms_bev(dets, iou_threshold)) {
                kept.push_back(d.key.ix);
            }
            return kept;
        },
        py::arg("boxes"), py::arg("scores"), py::arg("iou_threshold") = 0.5, "Indices of the kept boxes.");

    m.def(
        "evaluate_ap",
        [](const std::vector<Matrix>& detections, const std::vector<Boxes>& truths, double iou_threshold) {
            if (detections.size() != truths.size()) {
                throw ShapeError(fmt::format("{} detection frames but {} ground-truth frames", detections.size(),
                                             truths.size()));
            }
            std::vector<std::vector<Detection>> dets(detections.size());
            std::vector<std::vector<LabeledBox>> gts(truths.size());
            for (std::size_t f = 0; f < detections.size(); ++f) {
                const Matrix& m = detections[f];
                if (m.rows() > 0 && m.cols() != 8) {
                    throw ShapeError("detection rows must be (cx, cy, cz, l, w, h, yaw, score)");
                }
                for (Eigen::Index i = 0; i < m.rows(); ++i) {
                    Detection d;
                    d.box = box_from(m.block(i, 0, 1, 7));
                    d.score = m(i, 7);
                    d.key = {static_cast<std::int32_t>(i), 0};
                    dets[f].push_back(d);
                }
                for (const auto& b : boxes_from(truths[f])) {
                    gts[f].push_back({b, 0});
                }
            }
            const ApResult r = evaluate_ap(dets, gts, 0, iou_threshold);
            py::dict d;
            d["ap"] = r.ap;
            d["aph"] = r.aph;
            d["true_positives"] = r.true_positives;
            d["false_positives"] = r.false_positives;
            d["num_gt"] = r.num_gt;
            return d;
        },
        py::arg("detections"), py::arg("truths"), py::arg("iou_threshold") = 0.5);

    m.def(
        "synth_scan",
        [](std::uint64_t seed, int frame, double extent) {
            SceneSpec spec;
            spec.seed = seed;
            spec.extent = extent;
            const Scene scene = generate_scene(spec);
            py::dict d = cloud_dict(simulate_lidar_scan(scene, frame));
            Boxes boxes(static_cast<Eigen::Index>(scene.boxes_at(frame).size()), 7);
            Eigen::Index i = 0;
            for (const auto& b : scene.boxes_at(frame)) {
                boxes.row(i++) = box_row(b.box);
            }
            d["boxes"] = boxes;
            d["sensor_origin"] = scene.sensor_origins.at(static_cast<std::size_t>(frame));
            return d;
        },
        py::arg("seed") = 7, py::arg("frame") = 0, py::arg("extent") = 12.8,
        "LiDAR scan and ground-truth boxes of one frame of a synthetic scene.");

    m.def(
        "remove_dynamic_points",
        [](const Rows3& positions, const Boxes& boxes, double margin) {
            const auto bs = boxes_from(boxes);
            const py::dict d = cloud_dict(remove_dynamic_points(cloud_from(positions, std::nullopt), bs, margin));
            return py::object(d["positions"]);
        },
        py::arg("positions"), py::arg("boxes"), py::arg("margin") = 0.1);

    m.def(
        "fusion_gradcheck", [](std::uint64_t seed) { return report_dict(fusion_gradcheck(seed)); },
        py::arg("seed"));
    m.def(
        "model_directional_check",
        [](std::uint64_t seed, const std::string& fusion) {
            return report_dict(model_directional_check(seed, parse_fusion_strategy(fusion)));
        },
        py::arg("seed"), py::arg("fusion") = "gated");

    m.def(
        "pointcloud_roundtrip",
        [](const Rows3& positions, const std::optional<Rows3>& colors) {
            const std::string bytes = encode_pointcloud(cloud_from(positions, colors));
            return py::make_tuple(py::bytes(bytes), cloud_dict(decode_pointcloud(bytes)));
        },
        py::arg("positions"), py::arg("colors") = py::none(),
        "Encodes a cloud to the binary point cloud format and decodes it again.");
    m.def(
        "decode_pointcloud", [](const py::bytes& b) { return cloud_dict(decode_pointcloud(std::string(b))); },
        py::arg("data"));
    m.def("fnv1a64", [](const py::bytes& b) { return fnv1a64(std::string(b)); }, py::arg("data"));

    m.def(
        "run_inference_demo",
        [](std::uint64_t seed, std::size_t steps) {
            BenchmarkConfig bc;
            bc.data_seed = seed;
            bc.train_scenes = 2;
            bc.eval_scenes = 1;
            bc.scene.extent = 8.0;
            bc.scene.traversals = 2;
            bc.grid.range = 8.0;
            const BenchmarkData data = make_benchmark(bc);
            TrainConfig tc;
            tc.model.grid = bc.grid;
            tc.model.d = 8;
            tc.model.head_hidden = 8;
            tc.steps = steps;
            tc.seed = seed;
            const TrainResult r = train_toy(data.train, tc);
            std::vector<double> losses;
            for (const auto& s : r.log) {
                losses.push_back(s.loss.total);
            }
            py::dict d;
            d["losses"] = losses;
            d["detections"] = detections_matrix(run_inference(data.eval.front(), r.params, {}));
            return d;
        },
        py::arg("seed") = 1, py::arg("steps") = 20,
        "Trains a tiny detector on two synthetic scenes and detects on a third. Rows are "
        "(cx, cy, cz, l, w, h, yaw, score, class).");

    m.def(
        "cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "mapprior");
            py::gil_scoped_release release;
            return cli_main(args);
        },
        py::arg("args"), "Runs the command-line tool in-process and returns its exit code.");
}
