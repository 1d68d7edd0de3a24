#pragma once

// Windowed-sinc linear-phase FIR design (Hamming window) and zero-delay
// application to multichannel recordings.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fastbci/edf.hpp"

namespace fastbci {

enum class FilterMode { band_stop, band_pass };

inline std::string_view to_string(FilterMode m) { return m == FilterMode::band_stop ? "band_stop" : "band_pass"; }

inline FilterMode parse_filter_mode(std::string_view text) {
    if (text == "band_stop") {
        return FilterMode::band_stop;
    }
    if (text == "band_pass") {
        return FilterMode::band_pass;
    }
    throw std::invalid_argument("unknown filter mode '" + std::string(text) + "' (expected band_stop|band_pass)");
}

struct FirFilter {
    std::vector<double> taps;  // odd length, even-symmetric
    FilterMode mode = FilterMode::band_stop;
    double low_hz = 0.0;
    double high_hz = 0.0;
    double sampling_rate = 0.0;
    double transition_hz = 0.0;
    std::string window = "hamming";

    std::size_t group_delay() const { return (taps.size() - 1) / 2; }
};

/// Tap count for a Hamming window with the given transition width: the
/// standard 3.3 / (transition / fs) estimate rounded up to the next odd value.
inline std::size_t hamming_tap_count(double sampling_rate, double transition_hz) {
    auto n = static_cast<std::size_t>(std::ceil(3.3 * sampling_rate / transition_hz));
    if (n % 2 == 0) {
        ++n;
    }
    return n;
}

inline FirFilter design_fir(FilterMode mode, double low_hz, double high_hz, double sampling_rate,
                            double transition_hz = 2.0) {
    if (!(sampling_rate > 0.0) || !(low_hz > 0.0) || !(low_hz < high_hz) || !(high_hz < sampling_rate / 2.0)) {
        throw std::invalid_argument("design_fir: need 0 < low < high < fs/2 (got low=" + std::to_string(low_hz) +
                                    ", high=" + std::to_string(high_hz) + ", fs=" + std::to_string(sampling_rate) +
                                    ")");
    }
    if (!(transition_hz > 0.0)) {
        throw std::invalid_argument("design_fir: transition width must be positive");
    }
    const std::size_t n = hamming_tap_count(sampling_rate, transition_hz);
    const double center = 0.5 * static_cast<double>(n - 1);
    const double fl = low_hz / sampling_rate;   // cycles per sample
    const double fh = high_hz / sampling_rate;
    auto sinc = [](double x) { return x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x); };

    std::vector<double> bp(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double m = static_cast<double>(i) - center;
        const double ideal = 2.0 * fh * sinc(2.0 * fh * m) - 2.0 * fl * sinc(2.0 * fl * m);
        const double w = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
        bp[i] = ideal * w;
    }
    // Unity gain at the passband center.
    const double fc = 0.5 * (fl + fh);
    double gain = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        gain += bp[i] * std::cos(2.0 * std::numbers::pi * fc * (static_cast<double>(i) - center));
    }
    for (double& t : bp) {
        t /= gain;
    }

    FirFilter f;
    f.mode = mode;
    f.low_hz = low_hz;
    f.high_hz = high_hz;
    f.sampling_rate = sampling_rate;
    f.transition_hz = transition_hz;
    if (mode == FilterMode::band_pass) {
        f.taps = std::move(bp);
    } else {
        // Spectral complement: delta at the center minus the band-pass.
        f.taps.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            f.taps[i] = -bp[i];
        }
        f.taps[n / 2] += 1.0;
    }
    return f;
}

/// Complex frequency response at `hz`.
inline std::complex<double> frequency_response(std::span<const double> taps, double hz, double sampling_rate) {
    std::complex<double> acc = 0.0;
    const double omega = 2.0 * std::numbers::pi * hz / sampling_rate;
    for (std::size_t i = 0; i < taps.size(); ++i) {
        acc += taps[i] * std::polar(1.0, -omega * static_cast<double>(i));
    }
    return acc;
}

inline double magnitude_db(std::span<const double> taps, double hz, double sampling_rate) {
    return 20.0 * std::log10(std::abs(frequency_response(taps, hz, sampling_rate)));
}

/// Filters one channel; output[n] = sum_k taps[k] * x[n + delay - k], with
/// zeros outside the signal, so the output is aligned with the input.
inline void filter_signal(std::span<const double> taps, std::span<const double> x, std::span<double> y) {
    const auto N = static_cast<std::ptrdiff_t>(x.size());
    const auto K = static_cast<std::ptrdiff_t>(taps.size());
    const std::ptrdiff_t delay = (K - 1) / 2;
    for (std::ptrdiff_t n = 0; n < N; ++n) {
        // need 0 <= n + delay - k < N
        const std::ptrdiff_t k_lo = std::max<std::ptrdiff_t>(0, n + delay - (N - 1));
        const std::ptrdiff_t k_hi = std::min<std::ptrdiff_t>(K - 1, n + delay);
        double acc = 0.0;
        for (std::ptrdiff_t k = k_lo; k <= k_hi; ++k) {
            acc += taps[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(n + delay - k)];
        }
        y[static_cast<std::size_t>(n)] = acc;
    }
}

inline RawRecording filter_apply(const RawRecording& recording, const FirFilter& filter) {
    if (std::abs(recording.sampling_rate - filter.sampling_rate) > 1e-9) {
        throw std::invalid_argument("filter designed for " + std::to_string(filter.sampling_rate) +
                                    " Hz applied to a " + std::to_string(recording.sampling_rate) + " Hz recording");
    }
    RawRecording out = recording;
    for (std::size_t c = 0; c < recording.channels(); ++c) {
        const std::span<const double> x(recording.signal.data() + c * recording.samples, recording.samples);
        const std::span<double> y(out.signal.data() + c * recording.samples, recording.samples);
        filter_signal(filter.taps, x, y);
    }
    return out;
}

}  // namespace fastbci
