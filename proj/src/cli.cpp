// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/cli.hpp"
#include "mapprior/errors.hpp"
#include "mapprior/gradcheck.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <iostream>
#include <limits>
#include <sstream>

namespace mapprior {

    namespace fs = std::filesystem;

    namespace {

        Vec3 parse_vec3(const std::string& text) {
            Vec3 v;
            char c1 = 0, c2 = 0;
            std::istringstream in(text);
            if (!(in >> v.x() >> c1 >> v.y() >> c2 >> v.z()) || c1 != ',' || c2 != ',') {
                throw ConfigError(fmt::format("'{}' is not an x,y,z triple", text));
            }
            return v;
        }

        SensorOrigins load_origins(const std::string& path) {
            SensorOrigins o(Vec3(0.0, 0.0, 2.0));
            if (path.empty()) {
                return o;
            }
            const Config cfg = Config::load(path);
            for (const auto& [key, value] : cfg.values()) {
                const std::string prefix = "origins.";
                if (key.rfind(prefix, 0) != 0) {
                    continue;
                }
                const std::string id = key.substr(prefix.size());
                if (id == "fallback") {
                    o.fallback = parse_vec3(value);
                } else {
                    o.by_traversal[static_cast<std::uint16_t>(std::stoi(id))] = parse_vec3(value);
                }
            }
            return o;
        }

        std::vector<std::vector<Box3D>> boxes_per_cloud(const std::string& path, std::size_t clouds) {
            std::vector<std::vector<Box3D>> out(clouds);
            if (path.empty()) {
                return out;
            }
            const auto frames = boxes_from_jsonl(read_file(path));
            for (std::size_t f = 0; f < frames.size() && f < clouds; ++f) {
                for (const auto& b : frames[f]) {
                    out[f].push_back(b.box);
                }
            }
            return out;
        }

        PointCloud merged_without_boxes(const std::vector<std::string>& clouds, const std::string& boxes_path,
                                        double margin) {
            const auto boxes = boxes_per_cloud(boxes_path, clouds.size());
            PointCloud merged;
            for (std::size_t i = 0; i < clouds.size(); ++i) {
                const PointCloud kept = remove_dynamic_points(read_pointcloud(clouds[i]), boxes[i], margin);
                merged.points.insert(merged.points.end(), kept.points.begin(), kept.points.end());
            }
            return merged;
        }

        FeaturePoints camera_from_cloud(const PointCloud& pc) {
            FeaturePoints fp;
            fp.features.resize(static_cast<Eigen::Index>(pc.points.size()), 3);
            for (std::size_t i = 0; i < pc.points.size(); ++i) {
                fp.positions.push_back(pc.points[i].position);
                fp.features.row(static_cast<Eigen::Index>(i)) = pc.points[i].color.transpose();
            }
            return fp;
        }

        PointCloud cloud_from_camera(const FeaturePoints& fp, std::uint16_t traversal) {
            PointCloud pc;
            for (std::size_t i = 0; i < fp.size(); ++i) {
                Point p;
                p.position = fp.positions[i];
                p.color = fp.features.row(static_cast<Eigen::Index>(i)).transpose();
                p.intensity = 0.0;
                p.traversal_id = traversal;
                pc.points.push_back(p);
            }
            return pc;
        }

        template <class It>
        void print_bbox(It begin, It end) {
            Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
            Vec3 hi = -lo;
            for (auto it = begin; it != end; ++it) {
                lo = lo.cwiseMin(*it);
                hi = hi.cwiseMax(*it);
            }
            if (begin == end) {
                fmt::print("bbox: empty\n");
                return;
            }
            fmt::print("bbox: [{:.3f}, {:.3f}, {:.3f}] - [{:.3f}, {:.3f}, {:.3f}]\n", lo.x(), lo.y(), lo.z(), hi.x(),
                       hi.y(), hi.z());
        }

        int inspect(const std::string& path) {
            const std::string bytes = read_file(path);
            const FileInfo info = peek_header(bytes);
            fmt::print("file: {}\nmagic: {}\nversion: {}\n", path, info.magic, info.version);
            if (info.magic == "MPPC") {
                const PointCloud pc = decode_pointcloud(bytes);
                std::vector<Vec3> pos;
                for (const auto& p : pc.points) {
                    pos.push_back(p.position);
                }
                fmt::print("points: {}\n", pc.points.size());
                print_bbox(pos.begin(), pos.end());
            } else if (info.magic == "MPSF") {
                const SurfelMap m = decode_surfelmap(bytes);
                std::vector<Vec3> pos;
                for (const auto& s : m.surfels) {
                    pos.push_back(s.position);
                }
                fmt::print("surfels: {}\nvoxel_size: {}\n", m.size(), m.voxel_size);
                print_bbox(pos.begin(), pos.end());
            } else if (info.magic == "MPGS") {
                const GaussianMap m = decode_gaussianmap(bytes);
                std::vector<Vec3> pos;
                for (const auto& g : m.gaussians) {
                    pos.push_back(g.mean);
                }
                fmt::print("gaussians: {}\n", m.size());
                print_bbox(pos.begin(), pos.end());
            } else if (info.magic == "MPWT") {
                const DetectorParams p = decode_model(bytes);
                fmt::print("weights: {}\nd: {}\nhead_hidden: {}\nclasses: {}\nfusion: {}\nvoxel_size: {}\n", info.count,
                           p.config.d, p.config.head_hidden, p.config.num_classes, to_string(p.config.fusion),
                           p.config.grid.voxel_size);
            } else {
                throw DecodeError(fmt::format("unknown magic '{}'", info.magic), 0);
            }
            fmt::print("fnv1a64: {:016x}\n", fnv1a64(bytes));
            return kExitOk;
        }

    } // namespace

    TrainConfig train_config_from(const Config& c) {
        TrainConfig t;
        t.model.d = c.get_int("model.d", 16);
        t.model.head_hidden = c.get_int("model.head_hidden", t.model.d);
        t.model.num_classes = static_cast<int>(c.get_int("model.classes", 1));
        t.model.heading_bins = static_cast<int>(c.get_int("model.heading_bins", 12));
        t.model.fusion = parse_fusion_strategy(c.get_string("model.fusion", "gated"));
        t.model.grid.voxel_size = c.get_double("model.voxel_size", 0.4);
        t.model.grid.range = c.get_double("model.range", 75.0);
        t.model.grid.max_voxels = static_cast<std::size_t>(c.get_int("model.max_voxels", 250000));
        t.model.pillar_local = c.get_bool("model.pillar_local", true);
        t.loss.heading_bins = t.model.heading_bins;
        t.loss.lambda_hm = c.get_double("loss.lambda_hm", 1.0);
        t.loss.lambda_bbox = c.get_double("loss.lambda_bbox", 2.0);
        t.loss.lambda_seg = c.get_double("loss.lambda_seg", 1.0);
        t.steps = static_cast<std::size_t>(c.get_int("train.steps", 200));
        t.lr = c.get_double("train.lr", 0.02);
        t.momentum = c.get_double("train.momentum", 0.9);
        t.clip_norm = c.get_double("train.clip_norm", 5.0);
        t.seed = static_cast<std::uint64_t>(c.get_int("train.seed", 0));
        t.p_drop_surfel = c.get_double("train.p_drop_surfel", 0.3);
        t.p_drop_gaussian = c.get_double("train.p_drop_gaussian", 0.3);
        t.use_camera = c.get_bool("train.use_camera", true);
        t.augment.p_rotate = c.get_double("augment.p_rotate", 0.74);
        t.augment.p_flip = c.get_double("augment.p_flip", 0.5);
        t.augment.scale_lo = c.get_double("augment.scale_lo", 0.95);
        t.augment.scale_hi = c.get_double("augment.scale_hi", 1.05);
        t.augment.p_point_drop = c.get_double("augment.p_point_drop", 0.05);
        return t;
    }

    SceneSpec scene_spec_from(const Config& c) {
        SceneSpec s;
        s.seed = static_cast<std::uint64_t>(c.get_int("scene.seed", 7));
        s.extent = c.get_double("scene.extent", s.extent);
        s.num_distractors = static_cast<int>(c.get_int("scene.distractors", s.num_distractors));
        s.num_walls = static_cast<int>(c.get_int("scene.walls", s.num_walls));
        s.num_parked = static_cast<int>(c.get_int("scene.parked", s.num_parked));
        s.num_moving = static_cast<int>(c.get_int("scene.moving", s.num_moving));
        s.traversals = static_cast<int>(c.get_int("scene.traversals", s.traversals));
        s.point_density = c.get_double("scene.density", s.point_density);
        s.density_range = c.get_double("scene.density_range", s.density_range);
        s.noise_sigma = c.get_double("scene.noise", s.noise_sigma);
        return s;
    }

    BenchmarkConfig benchmark_config_from(const Config& c) {
        BenchmarkConfig b;
        b.data_seed = static_cast<std::uint64_t>(c.get_int("data.seed", 7));
        b.train_scenes = static_cast<int>(c.get_int("data.train_scenes", 4));
        b.eval_scenes = static_cast<int>(c.get_int("data.eval_scenes", 2));
        b.scene = scene_spec_from(c);
        b.grid = train_config_from(c).model.grid;
        b.maps.voxel_size = c.get_double("maps.voxel_size", 0.25);
        b.maps.min_support = static_cast<std::size_t>(c.get_int("maps.min_support", 3));
        b.maps.removal_margin = c.get_double("maps.margin", 0.1);
        return b;
    }

    int cli_main(int argc, const char* const* argv) {
        CLI::App app{"Mapping-prior BEV detection toolkit"};
        app.require_subcommand(1);

        // synth
        auto* synth = app.add_subcommand("synth", "Generate a synthetic scene: clouds, camera points, boxes");
        std::string synth_config, synth_out;
        std::int64_t synth_seed = -1;
        synth->add_option("--config", synth_config, "Config file with a [scene] section");
        synth->add_option("--seed", synth_seed, "Scene seed (overrides the config)");
        synth->add_option("--out", synth_out, "Output directory")->required();

        // build-surfel
        auto* bsurf = app.add_subcommand("build-surfel", "Build a surfel map from point clouds");
        std::vector<std::string> bs_clouds;
        std::string bs_boxes, bs_out, bs_origins;
        double bs_voxel = 0.25, bs_tile = 4.0, bs_margin = 0.1;
        std::size_t bs_support = 3;
        unsigned bs_jobs = 1;
        bsurf->add_option("clouds", bs_clouds, "Input MPPC clouds, one per traversal")->required();
        bsurf->add_option("--boxes", bs_boxes, "Dynamic object boxes (JSONL, frame = cloud index)");
        bsurf->add_option("--out", bs_out, "Output MPSF file")->required();
        bsurf->add_option("--voxel-size", bs_voxel, "Surfel voxel size in meters");
        bsurf->add_option("--tile-size", bs_tile, "Tile size in meters (multiple of the voxel size)");
        bsurf->add_option("--margin", bs_margin, "Box dilation for dynamic point removal");
        bsurf->add_option("--min-support", bs_support, "Minimum points per surfel");
        bsurf->add_option("--jobs", bs_jobs, "Tile worker threads")->check(CLI::PositiveNumber);
        bsurf->add_option("--origins", bs_origins, "Sensor origins file ([origins] id = x,y,z)");

        // build-gaussian
        auto* bgs = app.add_subcommand("build-gaussian", "Initialize a Gaussian map from point clouds");
        std::vector<std::string> bg_clouds;
        std::string bg_boxes, bg_out;
        double bg_voxel = 0.25, bg_margin = 0.1, bg_opacity = 0.5, bg_floor = 0.02;
        std::size_t bg_support = 3;
        bgs->add_option("clouds", bg_clouds, "Input MPPC clouds")->required();
        bgs->add_option("--boxes", bg_boxes, "Dynamic object boxes (JSONL)");
        bgs->add_option("--out", bg_out, "Output MPGS file")->required();
        bgs->add_option("--voxel-size", bg_voxel, "Voxel size in meters");
        bgs->add_option("--margin", bg_margin, "Box dilation for dynamic point removal");
        bgs->add_option("--min-support", bg_support, "Minimum points per Gaussian");
        bgs->add_option("--opacity", bg_opacity, "Initial opacity");
        bgs->add_option("--scale-floor", bg_floor, "Minimum scale in meters");

        // train
        auto* train = app.add_subcommand("train", "Train the toy detector on synthetic scenes");
        std::string tr_config, tr_out, tr_log;
        std::int64_t tr_seed = -1, tr_steps = -1;
        train->add_option("--config", tr_config, "Config file");
        train->add_option("--seed", tr_seed, "Training seed");
        train->add_option("--steps", tr_steps, "Number of SGD steps");
        train->add_option("--out", tr_out, "Output MPWT model")->required();
        train->add_option("--log", tr_log, "Loss log CSV (default: <out>.csv)");

        // infer
        auto* infer = app.add_subcommand("infer", "Detect objects in one frame");
        std::string in_model, in_cloud, in_camera, in_surfel, in_gaussian, in_out;
        bool in_with_surfel = false, in_with_gaussian = false;
        double in_score = 0.1, in_nms = 0.2;
        infer->add_option("--model", in_model, "MPWT model")->required();
        infer->add_option("--cloud", in_cloud, "LiDAR MPPC cloud")->required();
        infer->add_option("--camera", in_camera, "Camera stub points (MPPC)");
        infer->add_option("--surfel", in_surfel, "Surfel map (MPSF)");
        infer->add_option("--gaussian", in_gaussian, "Gaussian map (MPGS)");
        infer->add_flag("--with-surfel", in_with_surfel, "Use the surfel prior");
        infer->add_flag("--with-gaussian", in_with_gaussian, "Use the Gaussian prior");
        infer->add_option("--score", in_score, "Score threshold");
        infer->add_option("--nms", in_nms, "NMS IoU threshold");
        infer->add_option("--out", in_out, "Detections JSONL (default: stdout)");

        // two-pass
        auto* twopass = app.add_subcommand("two-pass", "Map-free pass, on-the-fly maps, then a prior-aware pass");
        std::string tp_model, tp_out, tp_out1, tp_origins;
        std::vector<std::string> tp_clouds, tp_cameras;
        double tp_mask = 0.3;
        double tp_margin = 0.5;
        twopass->add_option("--model", tp_model, "MPWT model")->required();
        twopass->add_option("clouds", tp_clouds, "LiDAR MPPC clouds of one static scene")->required();
        twopass->add_option("--camera", tp_cameras, "Camera stub points per cloud");
        twopass->add_option("--origins", tp_origins, "Sensor origins file");
        twopass->add_option("--mask-score", tp_mask, "Minimum pass-1 score used for masking");
        twopass->add_option("--mask-margin", tp_margin, "Growth of pass-1 boxes on every side before masking")
            ->check(CLI::NonNegativeNumber);
        twopass->add_option("--out", tp_out, "Pass-2 detections JSONL")->required();
        twopass->add_option("--out-pass1", tp_out1, "Pass-1 detections JSONL");

        // eval
        auto* eval = app.add_subcommand("eval", "AP and APH of detections against ground truth");
        std::string ev_dets, ev_gt;
        double ev_iou = 0.7;
        int ev_class = 0;
        eval->add_option("--dets", ev_dets, "Detections JSONL")->required();
        eval->add_option("--gt", ev_gt, "Ground truth JSONL")->required();
        eval->add_option("--iou", ev_iou, "3D IoU threshold");
        eval->add_option("--class", ev_class, "Class id");

        // check-grad
        auto* check = app.add_subcommand("check-grad", "Finite-difference check of every backward pass");
        std::uint64_t cg_seed = 0;
        int cg_configs = 3;
        double cg_tol = 1e-4;
        check->add_option("--seed", cg_seed, "First seed");
        check->add_option("--configs", cg_configs, "Number of random configurations")->check(CLI::PositiveNumber);
        check->add_option("--tolerance", cg_tol, "Maximum relative error");

        // inspect
        auto* insp = app.add_subcommand("inspect", "Describe a binary file");
        std::string insp_path;
        insp->add_option("file", insp_path, "MPPC, MPSF, MPGS or MPWT file")->required();

        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e) == 0 ? kExitOk : kExitUsage;
        } catch (const CLI::ParseError& e) {
            app.exit(e);
            return kExitUsage;
        }

        try {
            if (*synth) {
                Config cfg = synth_config.empty() ? Config{} : Config::load(synth_config);
                SceneSpec spec = scene_spec_from(cfg);
                if (synth_seed >= 0) {
                    spec.seed = static_cast<std::uint64_t>(synth_seed);
                }
                const GridConfig grid = train_config_from(cfg).model.grid;
                const Scene scene = generate_scene(spec);
                fs::create_directories(synth_out);
                std::vector<std::vector<LabeledBox>> gt;
                std::string origins = "[origins]\n";
                for (int f = 0; f < spec.traversals; ++f) {
                    write_pointcloud(fs::path(synth_out) / fmt::format("cloud_{}.mppc", f), simulate_lidar_scan(scene, f));
                    write_pointcloud(fs::path(synth_out) / fmt::format("camera_{}.mppc", f),
                                     cloud_from_camera(synth_camera_points(scene, f, grid), static_cast<std::uint16_t>(f)));
                    gt.push_back(scene.boxes_at(f));
                    const Vec3& o = scene.sensor_origins[static_cast<std::size_t>(f)];
                    origins += fmt::format("{} = {:.17g},{:.17g},{:.17g}\n", f, o.x(), o.y(), o.z());
                }
                write_file(fs::path(synth_out) / "gt.jsonl", boxes_to_jsonl(gt));
                write_file(fs::path(synth_out) / "origins.cfg", origins);
                fmt::print("wrote {} frames, {} objects, {} static primitives to {}\n", spec.traversals,
                           scene.objects.size(), scene.statics.size(), synth_out);
                return kExitOk;
            }
            if (*bsurf) {
                const PointCloud merged = merged_without_boxes(bs_clouds, bs_boxes, bs_margin);
                SurfelBuildOptions opts;
                opts.voxel_size = bs_voxel;
                opts.min_support = bs_support;
                opts.origins = load_origins(bs_origins);
                SurfelBuildReport report;
                const SurfelMap map = build_surfels_tiled(merged, opts, bs_tile, bs_jobs, &report);
                write_surfelmap(bs_out, map);
                fmt::print("surfels: {} (voxels {}, below support {}, degenerate {})\n", map.size(),
                           report.occupied_voxels, report.below_support, report.degenerate);
                return kExitOk;
            }
            if (*bgs) {
                const PointCloud merged = merged_without_boxes(bg_clouds, bg_boxes, bg_margin);
                GaussianInitOptions opts;
                opts.voxel_size = bg_voxel;
                opts.min_support = bg_support;
                opts.opacity_init = bg_opacity;
                opts.scale_floor = bg_floor;
                const GaussianMap map = init_gaussians_from_lidar(merged, opts);
                write_gaussianmap(bg_out, map);
                fmt::print("gaussians: {}\n", map.size());
                return kExitOk;
            }
            if (*train) {
                const Config cfg = tr_config.empty() ? Config{} : Config::load(tr_config);
                TrainConfig tc = train_config_from(cfg);
                if (tr_seed >= 0) {
                    tc.seed = static_cast<std::uint64_t>(tr_seed);
                }
                if (tr_steps > 0) {
                    tc.steps = static_cast<std::size_t>(tr_steps);
                }
                BenchmarkConfig bc = benchmark_config_from(cfg);
                bc.eval_scenes = 0;
                const BenchmarkData data = make_benchmark(bc);
                const TrainResult res = train_toy(data.train, tc);
                write_model(tr_out, res.params);
                write_file(tr_log.empty() ? tr_out + ".csv" : tr_log, loss_log_csv(res.log));
                fmt::print("trained {} steps on {} samples, final loss {:.6f}\n", tc.steps, data.train.size(),
                           res.log.back().loss.total);
                return kExitOk;
            }
            if (*infer) {
                const DetectorParams p = read_model(in_model);
                Sample s;
                s.id = in_cloud;
                s.lidar = read_pointcloud(in_cloud);
                if (!in_camera.empty()) {
                    s.camera = camera_from_cloud(read_pointcloud(in_camera));
                }
                if (in_with_surfel) {
                    if (in_surfel.empty()) {
                        throw ConfigError("--with-surfel needs --surfel");
                    }
                    s.surfel = read_surfelmap(in_surfel);
                }
                if (in_with_gaussian) {
                    if (in_gaussian.empty()) {
                        throw ConfigError("--with-gaussian needs --gaussian");
                    }
                    s.gaussian = read_gaussianmap(in_gaussian);
                }
                const auto dets = run_inference(s, p, {in_with_surfel, in_with_gaussian, true}, {in_score, in_nms});
                const std::string text = detections_to_jsonl({dets});
                if (in_out.empty()) {
                    std::cout << text;
                } else {
                    write_file(in_out, text);
                    fmt::print("detections: {}\n", dets.size());
                }
                return kExitOk;
            }
            if (*twopass) {
                const DetectorParams p = read_model(tp_model);
                std::vector<Sample> seq;
                for (std::size_t i = 0; i < tp_clouds.size(); ++i) {
                    Sample s;
                    s.id = tp_clouds[i];
                    s.lidar = read_pointcloud(tp_clouds[i]);
                    if (i < tp_cameras.size()) {
                        s.camera = camera_from_cloud(read_pointcloud(tp_cameras[i]));
                    }
                    seq.push_back(std::move(s));
                }
                const TwoPassResult res = two_pass_inference(seq, p, load_origins(tp_origins), {}, {}, tp_mask, tp_margin);
                write_file(tp_out, detections_to_jsonl(res.pass2));
                if (!tp_out1.empty()) {
                    write_file(tp_out1, detections_to_jsonl(res.pass1));
                }
                fmt::print("frames: {}, surfels: {}, gaussians: {}\n", seq.size(), res.surfel.size(), res.gaussian.size());
                return kExitOk;
            }
            if (*eval) {
                auto dets = detections_from_jsonl(read_file(ev_dets));
                auto gt = boxes_from_jsonl(read_file(ev_gt));
                const std::size_t n = std::max(dets.size(), gt.size());
                dets.resize(n);
                gt.resize(n);
                const ApResult r = evaluate_ap(dets, gt, ev_class, ev_iou);
                fmt::print("AP {:.6f}\nAPH {:.6f}\nTP {}\nFP {}\nGT {}\n", r.ap, r.aph, r.true_positives,
                           r.false_positives, r.num_gt);
                return kExitOk;
            }
            if (*check) {
                double worst = 0.0;
                for (int k = 0; k < cg_configs; ++k) {
                    const std::uint64_t seed = cg_seed + static_cast<std::uint64_t>(k);
                    const double f = fusion_gradcheck(seed).max_rel_error;
                    const double h = head_loss_gradcheck(seed).max_rel_error;
                    const double m = model_gradcheck(seed).max_rel_error;
                    fmt::print("seed {}: fusion {:.3e} loss {:.3e} model {:.3e}\n", seed, f, h, m);
                    worst = std::max({worst, f, h, m});
                }
                fmt::print("max rel err {:.3e}\n", worst);
                return worst > cg_tol ? kExitNumeric : kExitOk;
            }
            if (*insp) {
                return inspect(insp_path);
            }
        } catch (const NumericError& e) {
            fmt::print(stderr, "numeric failure: {}\n", e.what());
            return kExitNumeric;
        } catch (const ConfigError& e) {
            fmt::print(stderr, "usage error: {}\n", e.what());
            return kExitUsage;
        } catch (const std::exception& e) {
            fmt::print(stderr, "error: {}\n", e.what());
            return kExitData;
        }
        return kExitUsage;
    }

    int cli_main(const std::vector<std::string>& args) {
        std::vector<const char*> argv;
        argv.reserve(args.size() + 1);
        for (const auto& a : args) {
            argv.push_back(a.c_str());
        }
        argv.push_back(nullptr);
        return cli_main(static_cast<int>(args.size()), argv.data());
    }

} // namespace mapprior
