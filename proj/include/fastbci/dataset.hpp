#pragma once

// Trials, per-subject datasets, subject splits and n-way k-shot episodes for
// the motor movement/imagery recordings.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fastbci/edf.hpp"
#include "fastbci/rng.hpp"
#include "fastbci/tensor.hpp"

namespace fastbci {

inline constexpr int kNumActivities = 4;
inline constexpr double kSamplingRate = 160.0;
inline constexpr std::size_t kChannels = 64;
inline constexpr std::size_t kTimePoints = 321;

/// Runs 3,7,11 -> activity 1; 4,8,12 -> 2; 5,9,13 -> 3; 6,10,14 -> 4.
/// Baseline runs 1 and 2 (and anything else) map to 0.
constexpr int activity_for_run(int run) {
    if (run < 3 || run > 14) {
        return 0;
    }
    return (run - 3) % 4 + 1;
}

constexpr std::array<int, 3> runs_for_activity(int activity) {
    return {activity + 2, activity + 6, activity + 10};
}

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InsufficientTrialsError : public DataError {
public:
    using DataError::DataError;
};

struct Event {
    std::size_t onset_sample = 0;
    int label = 0;

    bool operator==(const Event&) const = default;
};

/// T1 -> class 0, T2 -> class 1; T0 (rest) is dropped.
inline std::vector<Event> extract_events(const RawRecording& recording, int activity) {
    if (activity < 1 || activity > kNumActivities) {
        throw std::invalid_argument("activity must be 1..4, got " + std::to_string(activity));
    }
    if (activity_for_run(recording.run) != activity) {
        throw DataError("run " + std::to_string(recording.run) + " does not belong to activity " +
                        std::to_string(activity));
    }
    std::vector<Event> events;
    for (const auto& a : recording.annotations) {
        if (a.text == "T0") {
            continue;
        }
        int label = 0;
        if (a.text == "T1") {
            label = 0;
        } else if (a.text == "T2") {
            label = 1;
        } else {
            throw DataError("unknown annotation code '" + a.text + "'");
        }
        const double sample = std::round(a.onset * recording.sampling_rate);
        if (sample < 0) {
            throw DataError("annotation before recording start");
        }
        events.push_back({static_cast<std::size_t>(sample), label});
    }
    return events;
}

struct Trial {
    std::vector<double> data;  // channels x time, row-major
    int label = 0;
    int subject = 0;
    int activity = 0;
};

struct EpochWindow {
    std::size_t pre_samples = 160;  // one second before onset
    std::size_t length = kTimePoints;
};

struct EpochReport {
    std::size_t kept = 0;
    std::size_t dropped = 0;
};

/// Cuts [onset - pre, onset - pre + length) for each event; windows that
/// fall outside the recording are dropped and counted.
inline std::vector<Trial> epoch_extract(const RawRecording& recording, std::span<const Event> events, int activity,
                                        const EpochWindow& window = {}, EpochReport* report = nullptr) {
    std::vector<Trial> trials;
    EpochReport local;
    for (const Event& e : events) {
        if (e.onset_sample < window.pre_samples || e.onset_sample - window.pre_samples + window.length > recording.samples) {
            ++local.dropped;
            continue;
        }
        const std::size_t start = e.onset_sample - window.pre_samples;
        Trial t;
        t.label = e.label;
        t.subject = recording.subject;
        t.activity = activity;
        t.data.resize(recording.channels() * window.length);
        for (std::size_t c = 0; c < recording.channels(); ++c) {
            std::copy_n(recording.signal.begin() + static_cast<std::ptrdiff_t>(c * recording.samples + start),
                        window.length, t.data.begin() + static_cast<std::ptrdiff_t>(c * window.length));
        }
        trials.push_back(std::move(t));
        ++local.kept;
    }
    if (report) {
        report->kept += local.kept;
        report->dropped += local.dropped;
    }
    return trials;
}

struct SubjectDataset {
    int subject = 0;
    int activity = 0;
    std::vector<Trial> trials;

    std::vector<std::size_t> class_indices(int label) const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < trials.size(); ++i) {
            if (trials[i].label == label) {
                idx.push_back(i);
            }
        }
        return idx;
    }

    std::array<std::size_t, 2> class_counts() const {
        std::array<std::size_t, 2> counts{0, 0};
        for (const auto& t : trials) {
            ++counts[static_cast<std::size_t>(t.label)];
        }
        return counts;
    }

    std::size_t min_class_count() const {
        const auto c = class_counts();
        return std::min(c[0], c[1]);
    }
};

struct SubjectSplits {
    std::vector<int> train;
    std::vector<int> validation;
    std::vector<int> test;
    std::vector<int> missing;  // expected ids 1..109 absent from the input
};

enum class SplitRole { train, validation, test, none };

constexpr SplitRole split_role(int subject) {
    if (subject >= 1 && subject <= 87) {
        return SplitRole::train;
    }
    if (subject >= 88 && subject <= 98) {
        return SplitRole::validation;
    }
    if (subject >= 99 && subject <= 109) {
        return SplitRole::test;
    }
    return SplitRole::none;
}

/// Partitions subject ids into training (1-87), validation (88-98) and
/// test (99-109) and reports which expected ids are absent.
inline SubjectSplits build_splits(std::span<const int> subjects) {
    SubjectSplits s;
    std::vector<int> sorted(subjects.begin(), subjects.end());
    std::ranges::sort(sorted);
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (int id : sorted) {
        switch (split_role(id)) {
            case SplitRole::train: s.train.push_back(id); break;
            case SplitRole::validation: s.validation.push_back(id); break;
            case SplitRole::test: s.test.push_back(id); break;
            case SplitRole::none: throw DataError("subject id " + std::to_string(id) + " outside 1..109");
        }
    }
    for (int id = 1; id <= 109; ++id) {
        if (!std::ranges::binary_search(sorted, id)) {
            s.missing.push_back(id);
        }
    }
    return s;
}

/// Inputs plus labels for one forward pass.
struct LabeledBatch {
    Tensor inputs;  // (B, channels, time)
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

/// Batch from trials referenced across datasets; all trials must share a shape.
inline LabeledBatch make_batch(std::span<const Trial* const> trials, std::size_t channels, std::size_t time_points) {
    if (trials.empty()) {
        throw DataError("cannot build an empty batch");
    }
    std::vector<double> values;
    values.reserve(trials.size() * channels * time_points);
    LabeledBatch b;
    for (const Trial* t : trials) {
        if (t->data.size() != channels * time_points) {
            throw DataError("trial shape does not match (" + std::to_string(channels) + ", " +
                            std::to_string(time_points) + ")");
        }
        values.insert(values.end(), t->data.begin(), t->data.end());
        b.labels.push_back(t->label);
    }
    b.inputs = Tensor({trials.size(), channels, time_points}, std::move(values));
    return b;
}

struct Episode {
    int subject = 0;
    LabeledBatch support;  // k_support per class, class 0 first
    LabeledBatch query;    // k_query per class, class 0 first
    std::vector<std::size_t> support_indices;  // into the subject's trial list
    std::vector<std::size_t> query_indices;
};

/// Class-balanced support/query draw without replacement.
inline Episode sample_episode(const SubjectDataset& dataset, std::size_t k_support, std::size_t k_query, Rng& rng,
                              std::size_t channels, std::size_t time_points) {
    Episode ep;
    ep.subject = dataset.subject;
    for (int label : {0, 1}) {
        std::vector<std::size_t> pool = dataset.class_indices(label);
        if (pool.size() < k_support + k_query) {
            throw InsufficientTrialsError("subject " + std::to_string(dataset.subject) + " has " +
                                          std::to_string(pool.size()) + " trials of class " + std::to_string(label) +
                                          ", need " + std::to_string(k_support + k_query));
        }
        // Partial Fisher-Yates: the first k_support + k_query slots are the draw.
        for (std::size_t i = 0; i < k_support + k_query; ++i) {
            const std::size_t j = i + rng.below(pool.size() - i);
            std::swap(pool[i], pool[j]);
        }
        ep.support_indices.insert(ep.support_indices.end(), pool.begin(),
                                  pool.begin() + static_cast<std::ptrdiff_t>(k_support));
        ep.query_indices.insert(ep.query_indices.end(), pool.begin() + static_cast<std::ptrdiff_t>(k_support),
                                pool.begin() + static_cast<std::ptrdiff_t>(k_support + k_query));
    }
    auto gather = [&](const std::vector<std::size_t>& idx) {
        std::vector<const Trial*> ptrs;
        for (std::size_t i : idx) {
            ptrs.push_back(&dataset.trials[i]);
        }
        return make_batch(ptrs, channels, time_points);
    };
    ep.support = gather(ep.support_indices);
    ep.query = gather(ep.query_indices);
    return ep;
}

/// All trials of one activity, keyed by subject id.
struct ActivityData {
    int activity = 0;
    std::size_t channels = kChannels;
    std::size_t time_points = kTimePoints;
    std::map<int, SubjectDataset> subjects;

    const SubjectDataset& subject(int id) const {
        auto it = subjects.find(id);
        if (it == subjects.end()) {
            throw DataError("no data for subject " + std::to_string(id) + " in activity " + std::to_string(activity));
        }
        return it->second;
    }
};

}  // namespace fastbci
