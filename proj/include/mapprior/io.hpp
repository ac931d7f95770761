// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mapprior/detection.hpp"
#include "mapprior/gaussian_map.hpp"
#include "mapprior/model.hpp"
#include "mapprior/surfel_map.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mapprior {

    // Binary formats. Every file starts with a 4-byte magic, a u16 version and a u64 record count,
    // little-endian throughout. Readers validate every record and throw DecodeError with the byte
    // offset of the first problem; nothing is returned on failure.

    inline constexpr std::uint16_t kFormatVersion = 1;

    struct FileInfo {
        std::string magic;
        std::uint16_t version = 0;
        std::uint64_t count = 0;
    };

    std::string encode_pointcloud(const PointCloud& pc);
    PointCloud decode_pointcloud(const std::string& bytes);

    std::string encode_surfelmap(const SurfelMap& map);
    SurfelMap decode_surfelmap(const std::string& bytes);

    /// Header carries a u16 count of extra SH floats per record (always 0 on write, skipped on read).
    std::string encode_gaussianmap(const GaussianMap& map);
    GaussianMap decode_gaussianmap(const std::string& bytes);

    std::string encode_model(const DetectorParams& params);
    DetectorParams decode_model(const std::string& bytes);

    FileInfo peek_header(const std::string& bytes);

    std::string read_file(const std::filesystem::path& path);
    void write_file(const std::filesystem::path& path, const std::string& bytes);

    void write_pointcloud(const std::filesystem::path& path, const PointCloud& pc);
    PointCloud read_pointcloud(const std::filesystem::path& path);
    void write_surfelmap(const std::filesystem::path& path, const SurfelMap& map);
    SurfelMap read_surfelmap(const std::filesystem::path& path);
    void write_gaussianmap(const std::filesystem::path& path, const GaussianMap& map);
    GaussianMap read_gaussianmap(const std::filesystem::path& path);
    void write_model(const std::filesystem::path& path, const DetectorParams& params);
    DetectorParams read_model(const std::filesystem::path& path);

    /// 64-bit FNV-1a, used for reproducibility checks.
    std::uint64_t fnv1a64(const std::string& bytes);

    // Detections and ground truth as line-delimited JSON: {"frame", "center", "dims", "yaw", "class", "score"}.

    struct FrameDetection {
        int frame = 0;
        Detection det;
    };

    std::string detections_to_jsonl(const std::vector<std::vector<Detection>>& frames);
    std::string boxes_to_jsonl(const std::vector<std::vector<LabeledBox>>& frames);
    /// Records grouped by frame index; missing frames are empty. Throws InputError on malformed lines.
    std::vector<std::vector<Detection>> detections_from_jsonl(const std::string& text);
    std::vector<std::vector<LabeledBox>> boxes_from_jsonl(const std::string& text);

    /// Flat key = value text with [section] headers. Keys are stored as "section.key".
    class Config {
    public:
        static Config parse(const std::string& text);
        static Config load(const std::filesystem::path& path);

        bool has(const std::string& key) const { return values_.count(key) > 0; }
        std::string get_string(const std::string& key, const std::string& fallback) const;
        double get_double(const std::string& key, double fallback) const;
        std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
        bool get_bool(const std::string& key, bool fallback) const;
        void set(const std::string& key, const std::string& value) { values_[key] = value; }
        const std::map<std::string, std::string>& values() const { return values_; }

    private:
        std::map<std::string, std::string> values_;
    };

} // namespace mapprior
