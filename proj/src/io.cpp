// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#include "mapprior/io.hpp"
#include "mapprior/errors.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mapprior {

    namespace {

        static_assert(std::endian::native == std::endian::little, "formats are written with native little-endian stores");

        class Writer {
        public:
            template <class T>
            void put(T v) {
                char b[sizeof(T)];
                std::memcpy(b, &v, sizeof(T));
                buf_.append(b, sizeof(T));
            }
            void f32(double v) { put(static_cast<float>(v)); }
            void u8_color(double c) { put(static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0))); }
            void header(const char* magic, std::uint64_t count) {
                buf_.append(magic, 4);
                put(kFormatVersion);
                put(count);
            }
            std::string take() { return std::move(buf_); }

        private:
            std::string buf_;
        };

        class Reader {
        public:
            explicit Reader(const std::string& b) : b_(b) {}

            template <class T>
            T get(const char* what) {
                if (pos_ + sizeof(T) > b_.size()) {
                    throw DecodeError(fmt::format("truncated input while reading {}", what), pos_);
                }
                T v;
                std::memcpy(&v, b_.data() + pos_, sizeof(T));
                pos_ += sizeof(T);
                return v;
            }

            double f32(const char* what) {
                const std::size_t at = pos_;
                const float v = get<float>(what);
                if (!std::isfinite(v)) {
                    throw DecodeError(fmt::format("non-finite {}", what), at);
                }
                return static_cast<double>(v);
            }

            double color(const char* what) { return get<std::uint8_t>(what) / 255.0; }

            FileInfo header(const char* magic) {
                if (b_.size() < 4) {
                    throw DecodeError("truncated input while reading magic", 0);
                }
                FileInfo info;
                info.magic = b_.substr(0, 4);
                if (info.magic != magic) {
                    throw DecodeError(fmt::format("bad magic, expected '{}'", magic), 0);
                }
                pos_ = 4;
                const std::size_t at = pos_;
                info.version = get<std::uint16_t>("version");
                if (info.version != kFormatVersion) {
                    throw DecodeError(fmt::format("unsupported version {}", info.version), at);
                }
                info.count = get<std::uint64_t>("record count");
                return info;
            }

            /// Fails before allocation when `count` records cannot fit in the remaining bytes.
            void require(std::uint64_t count, std::size_t record_bytes) const {
                const std::size_t left = b_.size() - pos_;
                if (record_bytes > 0 && count > left / record_bytes) {
                    throw DecodeError(fmt::format("truncated input: {} records of {} bytes declared, {} bytes left",
                                                  count, record_bytes, left),
                                      pos_);
                }
            }

            void finish() const {
                if (pos_ != b_.size()) {
                    throw DecodeError("trailing bytes after the last record", pos_);
                }
            }

            std::size_t pos() const { return pos_; }
            void skip(std::size_t n, const char* what) {
                if (pos_ + n > b_.size()) {
                    throw DecodeError(fmt::format("truncated input while skipping {}", what), pos_);
                }
                pos_ += n;
            }

        private:
            const std::string& b_;
            std::size_t pos_ = 0;
        };

        constexpr std::size_t kPointRecord = 3 * 4 + 3 + 4 + 2;
        constexpr std::size_t kSurfelRecord = 6 * 4 + 3 + 4;
        constexpr std::size_t kGaussianFloats = 3 + 4 + 3 + 1 + 3 + 9;
        constexpr double kUnitTolerance = 1e-5; // float storage

        struct LayerShape {
            std::uint32_t in, out;
            std::uint8_t has_bias, activation;
            bool operator==(const LayerShape&) const = default;
        };

        nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

        Vec3 json_vec(const nlohmann::json& j, const char* key, std::size_t line) {
            const auto& a = j.at(key);
            if (!a.is_array() || a.size() != 3) {
                throw InputError(fmt::format("line {}: '{}' must be a 3-element array", line, key));
            }
            return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
        }

        template <class Fn>
        void each_json_line(const std::string& text, Fn&& fn) {
            std::istringstream in(text);
            std::string line;
            std::size_t n = 0;
            while (std::getline(in, line)) {
                ++n;
                if (line.find_first_not_of(" \t\r") == std::string::npos) {
                    continue;
                }
                try {
                    const auto j = nlohmann::json::parse(line);
                    const int frame = j.value("frame", 0);
                    if (frame < 0) {
                        throw InputError(fmt::format("line {}: negative frame", n));
                    }
                    Box3D box{json_vec(j, "center", n), json_vec(j, "dims", n), normalize_angle(j.at("yaw").get<double>())};
                    box.validate();
                    fn(frame, box, j.value("class", 0), j.value("score", 1.0));
                } catch (const nlohmann::json::exception& e) {
                    throw InputError(fmt::format("line {}: {}", n, e.what()));
                } catch (const InputError&) {
                    throw;
                } catch (const Error& e) {
                    throw InputError(fmt::format("line {}: {}", n, e.what()));
                }
            }
        }

        template <class T>
        void grow(std::vector<std::vector<T>>& frames, int frame) {
            if (static_cast<std::size_t>(frame) >= frames.size()) {
                frames.resize(static_cast<std::size_t>(frame) + 1);
            }
        }

        std::string trim(const std::string& s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) {
                return {};
            }
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        }

    } // namespace

    std::string encode_pointcloud(const PointCloud& pc) {
        Writer w;
        w.header("MPPC", pc.points.size());
        for (const auto& p : pc.points) {
            validate_point(p);
            for (int k = 0; k < 3; ++k) {
                w.f32(p.position[k]);
            }
            for (int k = 0; k < 3; ++k) {
                w.u8_color(p.color[k]);
            }
            w.f32(p.intensity);
            w.put(p.traversal_id);
        }
        return w.take();
    }

    PointCloud decode_pointcloud(const std::string& bytes) {
        Reader r(bytes);
        const FileInfo info = r.header("MPPC");
        r.require(info.count, kPointRecord);
        PointCloud pc;
        pc.points.resize(info.count);
        for (auto& p : pc.points) {
            for (int k = 0; k < 3; ++k) {
                p.position[k] = r.f32("position");
            }
            for (int k = 0; k < 3; ++k) {
                p.color[k] = r.color("color");
            }
            const std::size_t at = r.pos();
            p.intensity = r.f32("intensity");
            if (p.intensity < 0.0 || p.intensity > 1.0) {
                throw DecodeError("intensity outside [0, 1]", at);
            }
            p.traversal_id = r.get<std::uint16_t>("traversal id");
        }
        r.finish();
        return pc;
    }

    std::string encode_surfelmap(const SurfelMap& map) {
        Writer w;
        w.header("MPSF", map.surfels.size());
        w.f32(map.voxel_size);
        for (const auto& s : map.surfels) {
            for (int k = 0; k < 3; ++k) {
                w.f32(s.position[k]);
            }
            for (int k = 0; k < 3; ++k) {
                w.f32(s.normal[k]);
            }
            for (int k = 0; k < 3; ++k) {
                w.u8_color(s.color[k]);
            }
            w.put(s.support);
        }
        return w.take();
    }

    SurfelMap decode_surfelmap(const std::string& bytes) {
        Reader r(bytes);
        const FileInfo info = r.header("MPSF");
        const std::size_t at_voxel = r.pos();
        SurfelMap map;
        map.voxel_size = r.f32("voxel size");
        if (!(map.voxel_size > 0.0)) {
            throw DecodeError("voxel size must be positive", at_voxel);
        }
        r.require(info.count, kSurfelRecord);
        map.surfels.resize(info.count);
        for (auto& s : map.surfels) {
            const std::size_t at = r.pos();
            for (int k = 0; k < 3; ++k) {
                s.position[k] = r.f32("surfel position");
            }
            for (int k = 0; k < 3; ++k) {
                s.normal[k] = r.f32("surfel normal");
            }
            if (std::abs(s.normal.norm() - 1.0) > kUnitTolerance) {
                throw DecodeError("surfel normal is not unit length", at);
            }
            for (int k = 0; k < 3; ++k) {
                s.color[k] = r.color("surfel color");
            }
            s.support = r.get<std::uint32_t>("surfel support");
            if (s.support < 1) {
                throw DecodeError("surfel support must be at least 1", at);
            }
        }
        r.finish();
        return map;
    }

    std::string encode_gaussianmap(const GaussianMap& map) {
        Writer w;
        w.header("MPGS", map.gaussians.size());
        w.put(std::uint16_t{0});
        for (const auto& g : map.gaussians) {
            for (int k = 0; k < 3; ++k) {
                w.f32(g.mean[k]);
            }
            w.f32(g.rotation.w());
            w.f32(g.rotation.x());
            w.f32(g.rotation.y());
            w.f32(g.rotation.z());
            for (int k = 0; k < 3; ++k) {
                w.f32(g.scale[k]);
            }
            w.f32(g.opacity);
            for (int k = 0; k < 3; ++k) {
                w.f32(g.sh0[k]);
            }
            for (int c = 0; c < 3; ++c) {
                for (int k = 0; k < 3; ++k) {
                    w.f32(g.sh1(c, k));
                }
            }
        }
        return w.take();
    }

    GaussianMap decode_gaussianmap(const std::string& bytes) {
        Reader r(bytes);
        const FileInfo info = r.header("MPGS");
        const auto sh_rest = r.get<std::uint16_t>("sh_rest");
        r.require(info.count, (kGaussianFloats + sh_rest) * 4);
        GaussianMap map;
        map.gaussians.resize(info.count);
        for (auto& g : map.gaussians) {
            const std::size_t at = r.pos();
            for (int k = 0; k < 3; ++k) {
                g.mean[k] = r.f32("mean");
            }
            const double qw = r.f32("quaternion");
            const double qx = r.f32("quaternion");
            const double qy = r.f32("quaternion");
            const double qz = r.f32("quaternion");
            g.rotation = Quat(qw, qx, qy, qz);
            for (int k = 0; k < 3; ++k) {
                g.scale[k] = r.f32("scale");
            }
            g.opacity = r.f32("opacity");
            for (int k = 0; k < 3; ++k) {
                g.sh0[k] = r.f32("sh0");
            }
            for (int c = 0; c < 3; ++c) {
                for (int k = 0; k < 3; ++k) {
                    g.sh1(c, k) = r.f32("sh1");
                }
            }
            r.skip(std::size_t{sh_rest} * 4, "higher-order SH");
            try {
                g.validate(kUnitTolerance);
            } catch (const Error& e) {
                throw DecodeError(e.what(), at);
            }
        }
        r.finish();
        return map;
    }

    std::string encode_model(const DetectorParams& params) {
        const ModelConfig& c = params.config;
        const auto blocks = params.all_blocks();
        std::uint64_t count = 0;
        for (const auto* b : blocks) {
            count += b->parameter_count();
        }
        Writer w;
        w.header("MPWT", count);
        w.put(static_cast<std::uint32_t>(c.d));
        w.put(static_cast<std::uint32_t>(c.head_hidden));
        w.put(static_cast<std::uint32_t>(c.num_classes));
        w.put(static_cast<std::uint32_t>(c.heading_bins));
        w.put(static_cast<std::uint8_t>(c.fusion));
        w.put(static_cast<std::uint8_t>(c.pillar_local ? 1 : 0));
        w.put(c.grid.voxel_size);
        w.put(c.grid.range);
        w.put(static_cast<std::uint64_t>(c.grid.max_voxels));
        w.put(c.grid.z_reference);
        w.put(c.seed);
        w.put(c.camera_seed);
        w.put(static_cast<std::uint32_t>(blocks.size()));
        for (const auto* b : blocks) {
            w.put(static_cast<std::uint32_t>(b->layers.size()));
            for (const auto& l : b->layers) {
                w.put(static_cast<std::uint32_t>(l.in_dim()));
                w.put(static_cast<std::uint32_t>(l.out_dim()));
                w.put(static_cast<std::uint8_t>(l.has_bias ? 1 : 0));
                w.put(static_cast<std::uint8_t>(l.activation));
            }
        }
        for (const auto* b : blocks) {
            for (const auto s : parameter_spans(*b)) {
                for (const double v : s) {
                    w.f32(v);
                }
            }
        }
        return w.take();
    }

    DetectorParams decode_model(const std::string& bytes) {
        Reader r(bytes);
        const FileInfo info = r.header("MPWT");
        const std::size_t at_cfg = r.pos();
        ModelConfig c;
        c.d = r.get<std::uint32_t>("d");
        c.head_hidden = r.get<std::uint32_t>("head width");
        c.num_classes = static_cast<int>(r.get<std::uint32_t>("class count"));
        c.heading_bins = static_cast<int>(r.get<std::uint32_t>("heading bins"));
        const auto fusion = r.get<std::uint8_t>("fusion strategy");
        if (fusion > static_cast<std::uint8_t>(FusionStrategy::Average)) {
            throw DecodeError(fmt::format("unknown fusion strategy {}", fusion), r.pos() - 1);
        }
        c.fusion = static_cast<FusionStrategy>(fusion);
        c.pillar_local = r.get<std::uint8_t>("pillar flag") != 0;
        c.grid.voxel_size = r.get<double>("voxel size");
        c.grid.range = r.get<double>("range");
        c.grid.max_voxels = r.get<std::uint64_t>("max voxels");
        c.grid.z_reference = r.get<double>("z reference");
        c.seed = r.get<std::uint64_t>("seed");
        c.camera_seed = r.get<std::uint64_t>("camera seed");
        if (c.d > 4096 || c.head_hidden > 4096 || c.num_classes > 64 || c.heading_bins > 360) {
            throw DecodeError("model dimensions out of range", at_cfg);
        }
        DetectorParams p;
        try {
            p = DetectorParams::make(c);
        } catch (const Error& e) {
            throw DecodeError(e.what(), at_cfg);
        }
        auto blocks = p.all_blocks();
        const std::size_t at_table = r.pos();
        if (r.get<std::uint32_t>("block count") != blocks.size()) {
            throw DecodeError("layer table does not match the model layout", at_table);
        }
        std::uint64_t expected = 0;
        for (auto* b : blocks) {
            const std::size_t at = r.pos();
            if (r.get<std::uint32_t>("layer count") != b->layers.size()) {
                throw DecodeError("layer table does not match the model layout", at);
            }
            for (auto& l : b->layers) {
                const std::size_t at_layer = r.pos();
                LayerShape got{};
                got.in = r.get<std::uint32_t>("layer input width");
                got.out = r.get<std::uint32_t>("layer output width");
                got.has_bias = r.get<std::uint8_t>("bias flag");
                got.activation = r.get<std::uint8_t>("activation");
                const LayerShape want{static_cast<std::uint32_t>(l.in_dim()), static_cast<std::uint32_t>(l.out_dim()),
                                      static_cast<std::uint8_t>(l.has_bias ? 1 : 0),
                                      static_cast<std::uint8_t>(l.activation)};
                if (!(got == want)) {
                    throw DecodeError("layer table does not match the model layout", at_layer);
                }
            }
            expected += b->parameter_count();
        }
        if (info.count != expected) {
            throw DecodeError(fmt::format("weight count {} differs from layout {}", info.count, expected), 6);
        }
        r.require(info.count, 4);
        for (auto* b : blocks) {
            for (auto s : parameter_spans(*b)) {
                for (double& v : s) {
                    v = r.f32("weight");
                }
            }
        }
        r.finish();
        try {
            p.fusion.validate();
        } catch (const Error& e) {
            throw DecodeError(e.what(), at_table);
        }
        return p;
    }

    FileInfo peek_header(const std::string& bytes) {
        if (bytes.size() < 14) {
            throw DecodeError("truncated header", bytes.size());
        }
        FileInfo info;
        info.magic = bytes.substr(0, 4);
        std::memcpy(&info.version, bytes.data() + 4, 2);
        std::memcpy(&info.count, bytes.data() + 6, 8);
        return info;
    }

    std::string read_file(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw InputError(fmt::format("cannot open '{}'", path.string()));
        }
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    void write_file(const std::filesystem::path& path, const std::string& bytes) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw InputError(fmt::format("cannot write '{}'", path.string()));
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw InputError(fmt::format("write to '{}' failed", path.string()));
        }
    }

    void write_pointcloud(const std::filesystem::path& path, const PointCloud& pc) { write_file(path, encode_pointcloud(pc)); }
    PointCloud read_pointcloud(const std::filesystem::path& path) { return decode_pointcloud(read_file(path)); }
    void write_surfelmap(const std::filesystem::path& path, const SurfelMap& map) { write_file(path, encode_surfelmap(map)); }
    SurfelMap read_surfelmap(const std::filesystem::path& path) { return decode_surfelmap(read_file(path)); }
    void write_gaussianmap(const std::filesystem::path& path, const GaussianMap& map) {
        write_file(path, encode_gaussianmap(map));
    }
    GaussianMap read_gaussianmap(const std::filesystem::path& path) { return decode_gaussianmap(read_file(path)); }
    void write_model(const std::filesystem::path& path, const DetectorParams& params) {
        write_file(path, encode_model(params));
    }
    DetectorParams read_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

    std::uint64_t fnv1a64(const std::string& bytes) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const char ch : bytes) {
            h ^= static_cast<std::uint8_t>(ch);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    std::string detections_to_jsonl(const std::vector<std::vector<Detection>>& frames) {
        std::string out;
        for (std::size_t f = 0; f < frames.size(); ++f) {
            for (const auto& d : frames[f]) {
                nlohmann::json j = {{"frame", f},           {"center", vec_json(d.box.center)},
                                    {"dims", vec_json(d.box.dims)}, {"yaw", d.box.yaw},
                                    {"class", d.class_id},  {"score", d.score}};
                out += j.dump() + "\n";
            }
        }
        return out;
    }

    std::string boxes_to_jsonl(const std::vector<std::vector<LabeledBox>>& frames) {
        std::string out;
        for (std::size_t f = 0; f < frames.size(); ++f) {
            for (const auto& b : frames[f]) {
                nlohmann::json j = {{"frame", f}, {"center", vec_json(b.box.center)}, {"dims", vec_json(b.box.dims)},
                                    {"yaw", b.box.yaw}, {"class", b.class_id}};
                out += j.dump() + "\n";
            }
        }
        return out;
    }

    std::vector<std::vector<Detection>> detections_from_jsonl(const std::string& text) {
        std::vector<std::vector<Detection>> frames;
        each_json_line(text, [&](int frame, const Box3D& box, int cls, double score) {
            grow(frames, frame);
            Detection d;
            d.box = box;
            d.class_id = cls;
            d.score = score;
            frames[static_cast<std::size_t>(frame)].push_back(d);
        });
        return frames;
    }

    std::vector<std::vector<LabeledBox>> boxes_from_jsonl(const std::string& text) {
        std::vector<std::vector<LabeledBox>> frames;
        each_json_line(text, [&](int frame, const Box3D& box, int cls, double) {
            grow(frames, frame);
            frames[static_cast<std::size_t>(frame)].push_back({box, cls});
        });
        return frames;
    }

    Config Config::parse(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        std::string section;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            const auto hash = line.find_first_of("#;");
            if (hash != std::string::npos) {
                line.erase(hash);
            }
            line = trim(line);
            if (line.empty()) {
                continue;
            }
            if (line.front() == '[') {
                if (line.back() != ']' || line.size() < 3) {
                    throw ConfigError(fmt::format("config line {}: malformed section header", n));
                }
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(fmt::format("config line {}: expected key = value", n));
            }
            const std::string key = trim(line.substr(0, eq));
            if (key.empty()) {
                throw ConfigError(fmt::format("config line {}: empty key", n));
            }
            cfg.values_[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
        }
        return cfg;
    }

    Config Config::load(const std::filesystem::path& path) {
        try {
            return parse(read_file(path));
        } catch (const InputError& e) {
            throw ConfigError(e.what());
        }
    }

    std::string Config::get_string(const std::string& key, const std::string& fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double Config::get_double(const std::string& key, double fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) {
            return fallback;
        }
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(it->second, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != it->second.size() || !std::isfinite(v)) {
            throw ConfigError(fmt::format("config key '{}': '{}' is not a number", key, it->second));
        }
        return v;
    }

    std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) {
            return fallback;
        }
        std::size_t used = 0;
        std::int64_t v = 0;
        try {
            v = std::stoll(it->second, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != it->second.size()) {
            throw ConfigError(fmt::format("config key '{}': '{}' is not an integer", key, it->second));
        }
        return v;
    }

    bool Config::get_bool(const std::string& key, bool fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) {
            return fallback;
        }
        if (it->second == "true" || it->second == "1" || it->second == "yes") {
            return true;
        }
        if (it->second == "false" || it->second == "0" || it->second == "no") {
            return false;
        }
        throw ConfigError(fmt::format("config key '{}': '{}' is not a boolean", key, it->second));
    }

} // namespace mapprior
