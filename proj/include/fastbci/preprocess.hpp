#pragma once

// Raw EDF tree -> filtered, epoched archive.

#include <filesystem>
#include <functional>
#include <iterator>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "fastbci/archive.hpp"
#include "fastbci/dataset.hpp"
#include "fastbci/edf.hpp"
#include "fastbci/fir.hpp"
#include "fastbci/parallel.hpp"

namespace fastbci {

struct PreprocessOptions {
    FilterMode mode = FilterMode::band_stop;
    double low_hz = 7.0;
    double high_hz = 30.0;
    double transition_hz = 2.0;
    int first_subject = 1;
    int last_subject = 109;
    EpochWindow window{};
    std::size_t threads = 1;
    std::string config_hash;
    std::function<void(const std::string&)> log;
};

struct RejectedRecording {
    std::filesystem::path path;
    std::string reason;
};

struct PreprocessReport {
    Manifest manifest;
    std::size_t recordings = 0;
    std::size_t epochs_kept = 0;
    std::size_t epochs_dropped = 0;
    std::vector<RejectedRecording> rejected;
};

inline nlohmann::json filter_provenance(const FirFilter& f) {
    return {{"mode", to_string(f.mode)},
            {"low_hz", f.low_hz},
            {"high_hz", f.high_hz},
            {"transition_hz", f.transition_hz},
            {"sampling_rate", f.sampling_rate},
            {"window", f.window},
            {"taps", f.taps.size()},
            {"group_delay_compensated", true}};
}

/// Checks the retained-recording invariants: 160 Hz and 64 channels.
inline void validate_recording(const RawRecording& r) {
    if (r.sampling_rate != kSamplingRate) {
        throw DataError("sampling rate " + std::to_string(r.sampling_rate) + " Hz, expected 160");
    }
    if (r.channels() != kChannels) {
        throw DataError(std::to_string(r.channels()) + " channels, expected 64");
    }
}

inline PreprocessReport preprocess(const std::filesystem::path& raw_dir, const std::filesystem::path& out_dir,
                                   const PreprocessOptions& opts = {}) {
    if (!std::filesystem::is_directory(raw_dir)) {
        throw DataError("raw directory " + raw_dir.string() + " does not exist");
    }
    const FirFilter filter = design_fir(opts.mode, opts.low_hz, opts.high_hz, kSamplingRate, opts.transition_hz);

    // subject -> activity -> run files (sorted for a stable trial order)
    std::map<int, std::map<int, std::vector<std::filesystem::path>>> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(raw_dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".edf") {
            continue;
        }
        const auto [subject, run] = subject_run_from_filename(entry.path());
        const int activity = activity_for_run(run);
        if (subject < opts.first_subject || subject > opts.last_subject || activity == 0) {
            continue;
        }
        files[subject][activity].push_back(entry.path());
    }
    for (auto& [s, by_activity] : files) {
        for (auto& [a, paths] : by_activity) {
            std::ranges::sort(paths);
        }
    }
    if (files.empty()) {
        throw DataError("no task-run EDF files found under " + raw_dir.string());
    }

    ArchiveInfo info;
    info.time_points = opts.window.length;
    info.filter = filter_provenance(filter);
    info.config_hash = opts.config_hash;
    ArchiveWriter writer(out_dir, info);

    std::vector<int> subjects;
    for (const auto& [s, _] : files) {
        subjects.push_back(s);
    }
    PreprocessReport report;
    std::mutex mutex;
    parallel_for(subjects.size(), opts.threads, [&](std::size_t i) {
        const int subject = subjects[i];
        for (const auto& [activity, paths] : files.at(subject)) {
            SubjectDataset ds;
            ds.subject = subject;
            ds.activity = activity;
            EpochReport epochs;
            std::vector<RejectedRecording> rejected;
            for (const auto& path : paths) {
                try {
                    const RawRecording raw = parse_edf(path);
                    validate_recording(raw);
                    const RawRecording filtered = filter_apply(raw, filter);
                    const auto events = extract_events(filtered, activity);
                    auto trials = epoch_extract(filtered, events, activity, opts.window, &epochs);
                    std::ranges::move(trials, std::back_inserter(ds.trials));
                } catch (const std::runtime_error& e) {
                    rejected.push_back({path, e.what()});
                }
            }
            if (!ds.trials.empty()) {
                writer.add(ds);
            }
            std::lock_guard lock(mutex);
            report.recordings += paths.size() - rejected.size();
            report.epochs_kept += epochs.kept;
            report.epochs_dropped += epochs.dropped;
            for (auto& r : rejected) {
                if (opts.log) {
                    opts.log("rejected " + r.path.filename().string() + ": " + r.reason);
                }
                report.rejected.push_back(std::move(r));
            }
            if (opts.log && !ds.trials.empty()) {
                const auto c = ds.class_counts();
                opts.log("subject " + std::to_string(subject) + " activity " + std::to_string(activity) + ": " +
                         std::to_string(c[0]) + "/" + std::to_string(c[1]) + " trials per class");
            }
        }
    });
    std::ranges::sort(report.rejected, {}, [](const RejectedRecording& r) { return r.path; });
    report.manifest = writer.finish();
    return report;
}

}  // namespace fastbci
