#pragma once

// Epoch archive: a directory holding manifest.json and one binary file per
// (subject, activity). Each binary file stores the trials as little-endian
// float64 in C order (trial, channel, time), followed by one unsigned byte
// label per trial. Lengths are declared in the manifest and checked on read.

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fastbci/binary_io.hpp"
#include "fastbci/dataset.hpp"
#include "json.hpp"

namespace fastbci {

inline constexpr int kArchiveFormatVersion = 1;

struct ArchiveInfo {
    double sampling_rate = kSamplingRate;
    std::size_t channels = kChannels;
    std::size_t time_points = kTimePoints;
    nlohmann::json filter = nlohmann::json::object();  // provenance of the preprocessing filter
    std::string config_hash;
};

struct ArchiveEntry {
    int subject = 0;
    int activity = 0;
    std::string file;
    std::size_t trials = 0;
    std::array<std::size_t, 2> class_counts{0, 0};
};

struct Manifest {
    ArchiveInfo info;
    std::vector<ArchiveEntry> entries;

    const ArchiveEntry* find(int subject, int activity) const {
        for (const auto& e : entries) {
            if (e.subject == subject && e.activity == activity) {
                return &e;
            }
        }
        return nullptr;
    }

    std::vector<int> subjects(int activity) const {
        std::vector<int> ids;
        for (const auto& e : entries) {
            if (e.activity == activity) {
                ids.push_back(e.subject);
            }
        }
        std::ranges::sort(ids);
        return ids;
    }
};

struct TrialStore {
    ArchiveInfo info;
    std::map<std::pair<int, int>, SubjectDataset> datasets;  // (subject, activity)

    void add(SubjectDataset ds) {
        const auto key = std::make_pair(ds.subject, ds.activity);
        datasets[key] = std::move(ds);
    }

    ActivityData activity(int activity) const {
        ActivityData out;
        out.activity = activity;
        out.channels = info.channels;
        out.time_points = info.time_points;
        for (const auto& [key, ds] : datasets) {
            if (key.second == activity) {
                out.subjects.emplace(key.first, ds);
            }
        }
        return out;
    }
};

inline std::string archive_file_name(int subject, int activity) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "S%03d_A%d.bin", subject, activity);
    return buf;
}

namespace archive_detail {

inline std::uintmax_t payload_bytes(std::size_t trials, const ArchiveInfo& info) {
    return static_cast<std::uintmax_t>(trials) * (info.channels * info.time_points * 8 + 1);
}

inline nlohmann::json manifest_json(const Manifest& m) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : m.entries) {
        entries.push_back({{"subject", e.subject},
                           {"activity", e.activity},
                           {"file", e.file},
                           {"trials", e.trials},
                           {"class_counts", e.class_counts},
                           {"bytes", payload_bytes(e.trials, m.info)}});
    }
    return {{"format", "fastbci-epochs"},
            {"format_version", kArchiveFormatVersion},
            {"fs", m.info.sampling_rate},
            {"shape", {m.info.channels, m.info.time_points}},
            {"layout", "float64 LE (trial, channel, time) then uint8 labels"},
            {"label_map", {{"T1", 0}, {"T2", 1}}},
            {"filter", m.info.filter},
            {"config_hash", m.info.config_hash},
            {"entries", entries}};
}

}  // namespace archive_detail

inline void write_dataset_file(const std::filesystem::path& path, const SubjectDataset& ds, const ArchiveInfo& info) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    const std::size_t per_trial = info.channels * info.time_points;
    std::vector<unsigned char> bytes(per_trial * 8);
    for (const auto& t : ds.trials) {
        if (t.data.size() != per_trial) {
            throw DataError("trial shape does not match archive shape");
        }
        io::encode_f64(t.data.data(), per_trial, bytes.data());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    for (const auto& t : ds.trials) {
        if (t.label < 0 || t.label > 255) {
            throw DataError("label outside byte range");
        }
        out.put(static_cast<char>(t.label));
    }
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

/// Incremental writer: datasets go to disk as they are added (thread-safe),
/// and the manifest is written last via a temporary file, so a partially
/// written archive never carries a valid manifest.
class ArchiveWriter {
public:
    ArchiveWriter(std::filesystem::path dir, ArchiveInfo info) : dir_(std::move(dir)) {
        manifest_.info = std::move(info);
        std::filesystem::create_directories(dir_);
        // Overwriting an earlier archive: drop the files its manifest listed.
        std::ifstream old(dir_ / "manifest.json");
        if (old) {
            const auto j = nlohmann::json::parse(old, nullptr, false);
            if (j.is_object() && j.contains("entries") && j["entries"].is_array()) {
                for (const auto& e : j["entries"]) {
                    if (e.contains("file") && e["file"].is_string()) {
                        std::filesystem::remove(dir_ / std::filesystem::path(e["file"].get<std::string>()).filename());
                    }
                }
            }
            old.close();
        }
        std::filesystem::remove(dir_ / "manifest.json");
    }

    void add(const SubjectDataset& ds) {
        ArchiveEntry e;
        e.subject = ds.subject;
        e.activity = ds.activity;
        e.file = archive_file_name(ds.subject, ds.activity);
        e.trials = ds.trials.size();
        e.class_counts = ds.class_counts();
        write_dataset_file(dir_ / e.file, ds, manifest_.info);
        std::lock_guard lock(mutex_);
        if (manifest_.find(e.subject, e.activity)) {
            throw DataError("dataset for subject " + std::to_string(e.subject) + " activity " +
                            std::to_string(e.activity) + " added twice");
        }
        manifest_.entries.push_back(std::move(e));
    }

    Manifest finish() {
        std::lock_guard lock(mutex_);
        std::ranges::sort(manifest_.entries, {}, [](const ArchiveEntry& e) { return std::pair(e.subject, e.activity); });
        const auto tmp = dir_ / "manifest.json.tmp";
        {
            std::ofstream out(tmp, std::ios::trunc);
            out << archive_detail::manifest_json(manifest_).dump(2) << '\n';
            if (!out) {
                throw std::runtime_error("cannot write manifest in " + dir_.string());
            }
        }
        std::filesystem::rename(tmp, dir_ / "manifest.json");
        return manifest_;
    }

private:
    std::filesystem::path dir_;
    Manifest manifest_;
    std::mutex mutex_;
};

inline Manifest write_archive(const std::filesystem::path& dir, const TrialStore& store) {
    ArchiveWriter writer(dir, store.info);
    for (const auto& [key, ds] : store.datasets) {
        writer.add(ds);
    }
    return writer.finish();
}

/// Parses and validates manifest.json against the files in `dir`.
inline Manifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) {
        throw FormatError("no manifest.json in " + dir.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt manifest: ") + e.what());
    }
    Manifest m;
    try {
        const int version = j.at("format_version").get<int>();
        if (version != kArchiveFormatVersion) {
            throw FormatError("unsupported archive format version " + std::to_string(version));
        }
        m.info.sampling_rate = j.at("fs").get<double>();
        const auto shape = j.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2 || shape[0] == 0 || shape[1] == 0) {
            throw FormatError("manifest shape must be [channels, time_points]");
        }
        m.info.channels = shape[0];
        m.info.time_points = shape[1];
        m.info.filter = j.value("filter", nlohmann::json::object());
        m.info.config_hash = j.value("config_hash", std::string{});
        for (const auto& je : j.at("entries")) {
            ArchiveEntry e;
            e.subject = je.at("subject").get<int>();
            e.activity = je.at("activity").get<int>();
            e.file = je.at("file").get<std::string>();
            e.trials = je.at("trials").get<std::size_t>();
            e.class_counts = je.at("class_counts").get<std::array<std::size_t, 2>>();
            if (e.class_counts[0] + e.class_counts[1] != e.trials) {
                throw FormatError("class counts do not sum to the trial count for " + e.file);
            }
            if (je.contains("bytes") && je.at("bytes").get<std::uintmax_t>() != archive_detail::payload_bytes(e.trials, m.info)) {
                throw FormatError("declared byte length inconsistent with trial count for " + e.file);
            }
            m.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed manifest: ") + e.what());
    }
    std::set<std::string> listed;
    for (const auto& e : m.entries) {
        if (!listed.insert(e.file).second) {
            throw FormatError("file listed twice in manifest: " + e.file);
        }
        const auto path = dir / e.file;
        if (!std::filesystem::exists(path)) {
            throw FormatError("manifest lists missing file " + e.file);
        }
        if (std::filesystem::file_size(path) != archive_detail::payload_bytes(e.trials, m.info)) {
            throw FormatError("size of " + e.file + " does not match its declared trial count");
        }
    }
    for (const auto& f : std::filesystem::directory_iterator(dir)) {
        if (f.path().extension() == ".bin" && !listed.contains(f.path().filename().string())) {
            throw FormatError("data file not listed in manifest: " + f.path().filename().string());
        }
    }
    return m;
}

inline SubjectDataset read_dataset_file(const std::filesystem::path& dir, const Manifest& m, const ArchiveEntry& e) {
    std::ifstream in(dir / e.file, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + e.file);
    }
    SubjectDataset ds;
    ds.subject = e.subject;
    ds.activity = e.activity;
    ds.trials.resize(e.trials);
    const std::size_t per_trial = m.info.channels * m.info.time_points;
    std::vector<unsigned char> bytes(per_trial * 8);
    for (auto& t : ds.trials) {
        io::read_exact(in, reinterpret_cast<char*>(bytes.data()), bytes.size(), "trial payload");
        t.data.resize(per_trial);
        io::decode_f64(bytes.data(), per_trial, t.data.data());
        t.subject = e.subject;
        t.activity = e.activity;
    }
    std::array<std::size_t, 2> counts{0, 0};
    for (auto& t : ds.trials) {
        const int label = in.get();
        if (label != 0 && label != 1) {
            throw FormatError("corrupt label byte in " + e.file);
        }
        t.label = label;
        ++counts[static_cast<std::size_t>(label)];
    }
    if (counts != e.class_counts) {
        throw FormatError("class counts in " + e.file + " disagree with the manifest");
    }
    return ds;
}

/// Loads one activity, optionally restricted to `subjects` (all when empty).
/// Subjects listed but absent from the archive are skipped.
inline ActivityData read_activity(const std::filesystem::path& dir, const Manifest& m, int activity,
                                  std::span<const int> subjects = {}) {
    ActivityData out;
    out.activity = activity;
    out.channels = m.info.channels;
    out.time_points = m.info.time_points;
    for (const auto& e : m.entries) {
        if (e.activity != activity) {
            continue;
        }
        if (!subjects.empty() && std::ranges::find(subjects, e.subject) == subjects.end()) {
            continue;
        }
        out.subjects.emplace(e.subject, read_dataset_file(dir, m, e));
    }
    return out;
}

inline TrialStore read_archive(const std::filesystem::path& dir) {
    const Manifest m = read_manifest(dir);
    TrialStore store;
    store.info = m.info;
    for (const auto& e : m.entries) {
        store.add(read_dataset_file(dir, m, e));
    }
    return store;
}

}  // namespace fastbci
