#pragma once

// Synthetic two-class cohorts for tests and the normalization study.
//
// A trial is band-limited alpha-like activity (around `freq_hz`) whose power
// is lateralized: class 0 is strong on the first half of the channels and
// weak on the second, class 1 the reverse, plus white noise. Each subject
// then applies its own per-channel gain and offset. Test subjects can be given
// a much smaller global gain than training subjects, which leaves the class
// structure intact but moves every activation statistic away from what a
// batch-norm model accumulated during pretraining.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "fastbci/archive.hpp"
#include "fastbci/dataset.hpp"
#include "fastbci/rng.hpp"

namespace fastbci {

struct SubjectShift {
    double global_gain = 1.0;
    double channel_gain_lo = 0.8;  // per-channel gain drawn uniformly in [lo, hi]
    double channel_gain_hi = 1.25;
    double offset_sd = 0.2;        // per-channel offset, in units of signal amplitude, times global gain
};

struct SyntheticConfig {
    std::vector<int> train_subjects;
    std::vector<int> validation_subjects;
    std::vector<int> test_subjects;
    int activity = 1;
    std::size_t channels = 8;
    std::size_t time_points = 161;
    double sampling_rate = kSamplingRate;
    std::size_t trials_per_class = 30;
    double freq_hz = 10.0;
    double freq_jitter_hz = 1.0;
    double strong_amplitude = 1.0;
    double weak_amplitude = 0.5;
    double noise_sd = 1.0;
    SubjectShift train_shift{};
    SubjectShift test_shift{};
    std::uint64_t seed = 0;
};

/// 20 training (1-20), 5 validation (88-92) and 5 test (99-103) subjects;
/// test subjects shrink to 5-10 % of the training amplitude.
inline SyntheticConfig domain_shift_config(std::uint64_t seed) {
    SyntheticConfig c;
    for (int i = 1; i <= 20; ++i) {
        c.train_subjects.push_back(i);
    }
    c.validation_subjects = {88, 89, 90, 91, 92};
    c.test_subjects = {99, 100, 101, 102, 103};
    c.test_shift.global_gain = 0.075;
    c.seed = seed;
    return c;
}

inline SubjectDataset synthetic_subject(const SyntheticConfig& cfg, int subject, const SubjectShift& shift) {
    Rng rng(derive_seed(cfg.seed, 0x5eed, static_cast<std::uint64_t>(subject)));
    // Small per-subject variation of the global gain keeps subjects distinct.
    const double g = shift.global_gain * rng.uniform(0.8, 1.25);
    std::vector<double> gain(cfg.channels), offset(cfg.channels);
    for (std::size_t c = 0; c < cfg.channels; ++c) {
        gain[c] = g * rng.uniform(shift.channel_gain_lo, shift.channel_gain_hi);
        offset[c] = g * rng.normal(0.0, shift.offset_sd);
    }
    SubjectDataset ds;
    ds.subject = subject;
    ds.activity = cfg.activity;
    const std::size_t half = cfg.channels / 2;
    for (std::size_t i = 0; i < 2 * cfg.trials_per_class; ++i) {
        Trial t;
        t.label = static_cast<int>(i % 2);
        t.subject = subject;
        t.activity = cfg.activity;
        t.data.resize(cfg.channels * cfg.time_points);
        const double f = cfg.freq_hz + rng.uniform(-cfg.freq_jitter_hz, cfg.freq_jitter_hz);
        for (std::size_t c = 0; c < cfg.channels; ++c) {
            const bool first_half = c < half;
            const bool strong = (t.label == 0) == first_half;
            const double amp = strong ? cfg.strong_amplitude : cfg.weak_amplitude;
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            for (std::size_t k = 0; k < cfg.time_points; ++k) {
                const double time = static_cast<double>(k) / cfg.sampling_rate;
                const double s = amp * std::sin(2.0 * std::numbers::pi * f * time + phase) + rng.normal(0.0, cfg.noise_sd);
                t.data[c * cfg.time_points + k] = gain[c] * s + offset[c];
            }
        }
        ds.trials.push_back(std::move(t));
    }
    return ds;
}

inline TrialStore synthetic_cohort(const SyntheticConfig& cfg) {
    TrialStore store;
    store.info.channels = cfg.channels;
    store.info.time_points = cfg.time_points;
    store.info.sampling_rate = cfg.sampling_rate;
    store.info.filter = {{"mode", "none"}, {"source", "synthetic"}};
    for (const auto* ids : {&cfg.train_subjects, &cfg.validation_subjects}) {
        for (int s : *ids) {
            store.add(synthetic_subject(cfg, s, cfg.train_shift));
        }
    }
    for (int s : cfg.test_subjects) {
        store.add(synthetic_subject(cfg, s, cfg.test_shift));
    }
    return store;
}

}  // namespace fastbci
