#pragma once

// EDF / EDF+ reader: 256-byte fixed header, 256 bytes of header per signal,
// 16-bit little-endian two's-complement samples grouped in data records, and
// an "EDF Annotations" signal holding time-stamped annotation lists (TALs).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <regex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fastbci {

class EdfError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EdfSignalHeader {
    std::string label;
    std::string transducer;
    std::string physical_dimension;
    double physical_min = 0.0;
    double physical_max = 0.0;
    int digital_min = 0;
    int digital_max = 0;
    std::string prefiltering;
    int samples_per_record = 0;

    bool is_annotation() const { return label == "EDF Annotations"; }
};

struct EdfHeader {
    std::string version;
    std::string patient;
    std::string recording;
    std::string start_date;
    std::string start_time;
    int header_bytes = 0;
    std::string reserved;
    int num_records = 0;
    double record_duration = 0.0;
    std::vector<EdfSignalHeader> signals;

    int record_bytes() const {
        int n = 0;
        for (const auto& s : signals) {
            n += 2 * s.samples_per_record;
        }
        return n;
    }
    std::uintmax_t expected_file_size() const {
        return static_cast<std::uintmax_t>(header_bytes) +
               static_cast<std::uintmax_t>(num_records) * static_cast<std::uintmax_t>(record_bytes());
    }
};

struct Annotation {
    double onset = 0.0;     // seconds from recording start
    double duration = 0.0;  // seconds; 0 when absent
    std::string text;
};

struct RawRecording {
    int subject = 0;  // 0 when the file name carries no id
    int run = 0;
    double sampling_rate = 0.0;
    std::vector<std::string> channel_labels;
    std::size_t samples = 0;
    std::vector<double> signal;  // channels x samples, physical units
    std::vector<Annotation> annotations;

    std::size_t channels() const { return channel_labels.size(); }
    double at(std::size_t channel, std::size_t sample) const { return signal[channel * samples + sample]; }
};

namespace edf_detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline double to_double(std::string_view field, const char* what) {
    const std::string t = trim(field);
    try {
        std::size_t used = 0;
        const double v = std::stod(t, &used);
        if (used != t.size()) {
            throw std::invalid_argument(t);
        }
        return v;
    } catch (const std::exception&) {
        throw EdfError(std::string("malformed header field '") + what + "': \"" + t + "\"");
    }
}

inline int to_int(std::string_view field, const char* what) {
    const double v = to_double(field, what);
    if (v != std::floor(v) || std::abs(v) > 2147483647.0) {
        throw EdfError(std::string("header field '") + what + "' is not an integer");
    }
    return static_cast<int>(v);
}

inline std::string take(const std::string& block, std::size_t& pos, std::size_t n) {
    std::string out = block.substr(pos, n);
    pos += n;
    return out;
}

}  // namespace edf_detail

inline EdfHeader parse_edf_header(std::istream& in, std::uintmax_t file_size) {
    using namespace edf_detail;
    std::string fixed(256, '\0');
    in.read(fixed.data(), 256);
    if (in.gcount() != 256) {
        throw EdfError("file shorter than the 256-byte EDF header");
    }
    EdfHeader h;
    std::size_t pos = 0;
    h.version = trim(take(fixed, pos, 8));
    h.patient = trim(take(fixed, pos, 80));
    h.recording = trim(take(fixed, pos, 80));
    h.start_date = trim(take(fixed, pos, 8));
    h.start_time = trim(take(fixed, pos, 8));
    h.header_bytes = to_int(take(fixed, pos, 8), "header bytes");
    h.reserved = trim(take(fixed, pos, 44));
    h.num_records = to_int(take(fixed, pos, 8), "number of records");
    h.record_duration = to_double(take(fixed, pos, 8), "record duration");
    const int ns = to_int(take(fixed, pos, 4), "number of signals");
    if (h.version != "0") {
        throw EdfError("unsupported EDF version field \"" + h.version + "\"");
    }
    if (ns <= 0 || ns > 4096) {
        throw EdfError("implausible signal count " + std::to_string(ns));
    }
    if (h.header_bytes != 256 * (ns + 1)) {
        throw EdfError("header byte count " + std::to_string(h.header_bytes) + " inconsistent with " +
                       std::to_string(ns) + " signals");
    }
    if (!(h.record_duration > 0.0)) {
        throw EdfError("record duration must be positive");
    }
    std::string block(static_cast<std::size_t>(256 * ns), '\0');
    in.read(block.data(), static_cast<std::streamsize>(block.size()));
    if (static_cast<std::size_t>(in.gcount()) != block.size()) {
        throw EdfError("truncated signal headers");
    }
    h.signals.resize(static_cast<std::size_t>(ns));
    // Signal headers are stored field-major: all labels, then all transducers, ...
    pos = 0;
    for (auto& s : h.signals) s.label = trim(take(block, pos, 16));
    for (auto& s : h.signals) s.transducer = trim(take(block, pos, 80));
    for (auto& s : h.signals) s.physical_dimension = trim(take(block, pos, 8));
    for (auto& s : h.signals) s.physical_min = to_double(take(block, pos, 8), "physical minimum");
    for (auto& s : h.signals) s.physical_max = to_double(take(block, pos, 8), "physical maximum");
    for (auto& s : h.signals) s.digital_min = to_int(take(block, pos, 8), "digital minimum");
    for (auto& s : h.signals) s.digital_max = to_int(take(block, pos, 8), "digital maximum");
    for (auto& s : h.signals) s.prefiltering = trim(take(block, pos, 80));
    for (auto& s : h.signals) s.samples_per_record = to_int(take(block, pos, 8), "samples per record");
    for (const auto& s : h.signals) {
        if (s.samples_per_record <= 0) {
            throw EdfError("signal '" + s.label + "' has no samples per record");
        }
        if (s.digital_max <= s.digital_min) {
            throw EdfError("signal '" + s.label + "' has an empty digital range");
        }
        if (s.physical_max == s.physical_min) {
            throw EdfError("signal '" + s.label + "' has an empty physical range");
        }
    }
    const std::uintmax_t data_bytes = file_size - static_cast<std::uintmax_t>(h.header_bytes);
    if (h.num_records == -1) {
        // Allowed while recording is in progress: derive from the file size.
        h.num_records = static_cast<int>(data_bytes / static_cast<std::uintmax_t>(h.record_bytes()));
    }
    if (h.num_records < 0) {
        throw EdfError("negative record count");
    }
    if (h.expected_file_size() != file_size) {
        throw EdfError("file size " + std::to_string(file_size) + " does not match " +
                       std::to_string(h.num_records) + " records of " + std::to_string(h.record_bytes()) +
                       " bytes (expected " + std::to_string(h.expected_file_size()) + ")");
    }
    return h;
}

inline EdfHeader read_edf_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw EdfError("cannot open " + path.string());
    }
    return parse_edf_header(in, std::filesystem::file_size(path));
}

/// Parses the TALs of one data record's annotation bytes.
inline std::vector<Annotation> parse_tals(std::string_view bytes) {
    std::vector<Annotation> out;
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        if (bytes[pos] == '\0') {
            ++pos;
            continue;
        }
        const std::size_t end = bytes.find('\0', pos);
        const std::string_view tal = bytes.substr(pos, end == std::string_view::npos ? bytes.npos : end - pos);
        pos = end == std::string_view::npos ? bytes.size() : end + 1;
        if (tal.empty() || (tal[0] != '+' && tal[0] != '-')) {
            throw EdfError("malformed annotation: onset must start with '+' or '-'");
        }
        const std::size_t first_sep = tal.find('\x14');
        if (first_sep == std::string_view::npos) {
            throw EdfError("malformed annotation: missing onset terminator");
        }
        const std::string_view timing = tal.substr(0, first_sep);
        Annotation base;
        const std::size_t dur_sep = timing.find('\x15');
        base.onset = edf_detail::to_double(timing.substr(0, dur_sep), "annotation onset");
        if (dur_sep != std::string_view::npos) {
            base.duration = edf_detail::to_double(timing.substr(dur_sep + 1), "annotation duration");
        }
        std::size_t p = first_sep + 1;
        while (p < tal.size()) {
            const std::size_t q = tal.find('\x14', p);
            const std::string_view text = tal.substr(p, q == std::string_view::npos ? tal.npos : q - p);
            if (!text.empty()) {
                Annotation a = base;
                a.text = std::string(text);
                out.push_back(std::move(a));
            }
            if (q == std::string_view::npos) {
                break;
            }
            p = q + 1;
        }
    }
    return out;
}

/// Extracts (subject, run) from names like S001R03.edf.
inline std::pair<int, int> subject_run_from_filename(const std::filesystem::path& path) {
    static const std::regex pattern(R"(S(\d{3})R(\d{2}))", std::regex::icase);
    std::smatch m;
    const std::string name = path.filename().string();
    if (std::regex_search(name, m, pattern)) {
        return {std::stoi(m[1].str()), std::stoi(m[2].str())};
    }
    return {0, 0};
}

/// Reads every ordinary signal (scaled to physical units) and all annotations.
/// Ordinary signals must share one sampling rate.
inline RawRecording parse_edf(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw EdfError("cannot open " + path.string());
    }
    const auto file_size = std::filesystem::file_size(path);
    const EdfHeader h = parse_edf_header(in, file_size);

    RawRecording rec;
    std::tie(rec.subject, rec.run) = subject_run_from_filename(path);
    std::optional<std::size_t> annotation_index;
    std::vector<std::size_t> data_signals;
    for (std::size_t i = 0; i < h.signals.size(); ++i) {
        if (h.signals[i].is_annotation()) {
            if (!annotation_index) {
                annotation_index = i;
            }
        } else {
            data_signals.push_back(i);
        }
    }
    if (!annotation_index) {
        throw EdfError("missing 'EDF Annotations' channel in " + path.string());
    }
    if (data_signals.empty()) {
        throw EdfError("no data signals in " + path.string());
    }
    const int spr = h.signals[data_signals.front()].samples_per_record;
    for (std::size_t i : data_signals) {
        if (h.signals[i].samples_per_record != spr) {
            throw EdfError("inconsistent record sizes: signals sampled at different rates");
        }
        rec.channel_labels.push_back(h.signals[i].label);
    }
    rec.sampling_rate = spr / h.record_duration;
    rec.samples = static_cast<std::size_t>(spr) * static_cast<std::size_t>(h.num_records);
    const std::size_t n_ch = data_signals.size();
    rec.signal.assign(n_ch * rec.samples, 0.0);

    // Per-signal digital -> physical affine maps.
    std::vector<double> gain(h.signals.size()), offset(h.signals.size());
    for (std::size_t i = 0; i < h.signals.size(); ++i) {
        const auto& s = h.signals[i];
        gain[i] = (s.physical_max - s.physical_min) / static_cast<double>(s.digital_max - s.digital_min);
        offset[i] = s.physical_min;
    }

    std::vector<unsigned char> record(static_cast<std::size_t>(h.record_bytes()));
    for (int r = 0; r < h.num_records; ++r) {
        in.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(record.size()));
        if (static_cast<std::size_t>(in.gcount()) != record.size()) {
            throw EdfError("truncated data record " + std::to_string(r));
        }
        std::size_t byte = 0;
        std::size_t ch = 0;
        for (std::size_t i = 0; i < h.signals.size(); ++i) {
            const auto& s = h.signals[i];
            const std::size_t n = static_cast<std::size_t>(s.samples_per_record);
            if (i == *annotation_index) {
                const std::string_view tal_bytes(reinterpret_cast<const char*>(record.data() + byte), 2 * n);
                for (auto& a : parse_tals(tal_bytes)) {
                    rec.annotations.push_back(std::move(a));
                }
            } else if (!s.is_annotation()) {
                double* dst = rec.signal.data() + ch * rec.samples + static_cast<std::size_t>(r) * n;
                for (std::size_t k = 0; k < n; ++k) {
                    const auto lo = record[byte + 2 * k];
                    const auto hi = record[byte + 2 * k + 1];
                    const auto digital = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
                    dst[k] = (static_cast<double>(digital) - s.digital_min) * gain[i] + offset[i];
                }
                ++ch;
            }
            byte += 2 * n;
        }
    }
    return rec;
}

namespace edf_detail {

inline std::string field(const std::string& text, std::size_t width) {
    if (text.size() > width) {
        throw EdfError("value \"" + text + "\" does not fit a " + std::to_string(width) + "-byte header field");
    }
    return text + std::string(width - text.size(), ' ');
}

inline std::string format_number(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace edf_detail

/// Writes an EDF+C file with 1-second records. Each channel's physical range is
/// its data range widened to whole units; values are quantized to 16 bits.
/// All annotations go into the first record's annotation list.
inline void write_edf(const std::filesystem::path& path, const RawRecording& rec) {
    using edf_detail::field;
    using edf_detail::format_number;
    const double fs_rounded = std::round(rec.sampling_rate);
    if (rec.sampling_rate <= 0.0 || fs_rounded != rec.sampling_rate) {
        throw EdfError("write_edf needs an integral sampling rate");
    }
    const auto spr = static_cast<std::size_t>(fs_rounded);
    if (rec.samples == 0 || rec.samples % spr != 0) {
        throw EdfError("write_edf needs a whole number of 1-second records");
    }
    const std::size_t records = rec.samples / spr;
    const std::size_t nch = rec.channels();

    std::vector<std::string> tals(records);
    for (std::size_t r = 0; r < records; ++r) {
        tals[r] = "+" + std::to_string(r) + "\x14\x14" + std::string(1, '\0');
    }
    for (const auto& a : rec.annotations) {
        std::string t = "+" + format_number(a.onset);
        if (a.duration > 0.0) {
            t += "\x15" + format_number(a.duration);
        }
        t += "\x14" + a.text + "\x14" + std::string(1, '\0');
        tals[0] += t;
    }
    std::size_t ann_bytes = 0;
    for (const auto& t : tals) {
        ann_bytes = std::max(ann_bytes, t.size());
    }
    const std::size_t ann_spr = (ann_bytes + 1) / 2;

    struct Scale {
        double pmin, pmax;
    };
    std::vector<Scale> scale(nch);
    for (std::size_t c = 0; c < nch; ++c) {
        const auto first = rec.signal.begin() + static_cast<std::ptrdiff_t>(c * rec.samples);
        const auto [lo, hi] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(rec.samples));
        scale[c] = {std::floor(*lo) - 1.0, std::ceil(*hi) + 1.0};
    }

    const std::size_t ns = nch + 1;
    std::string h;
    h += field("0", 8);
    h += field("X X X X", 80);
    h += field("Startdate X X X X", 80);
    h += field("01.01.09", 8);
    h += field("00.00.00", 8);
    h += field(std::to_string(256 * (ns + 1)), 8);
    h += field("EDF+C", 44);
    h += field(std::to_string(records), 8);
    h += field("1", 8);
    h += field(std::to_string(ns), 4);
    auto per_signal = [&](std::size_t width, auto&& data_value, const std::string& ann_value) {
        for (std::size_t c = 0; c < nch; ++c) {
            h += field(data_value(c), width);
        }
        h += field(ann_value, width);
    };
    per_signal(16, [&](std::size_t c) { return rec.channel_labels[c]; }, "EDF Annotations");
    per_signal(80, [](std::size_t) { return std::string(); }, "");
    per_signal(8, [](std::size_t) { return std::string("uV"); }, "");
    per_signal(8, [&](std::size_t c) { return format_number(scale[c].pmin); }, "-1");
    per_signal(8, [&](std::size_t c) { return format_number(scale[c].pmax); }, "1");
    per_signal(8, [](std::size_t) { return std::string("-32768"); }, "-32768");
    per_signal(8, [](std::size_t) { return std::string("32767"); }, "32767");
    per_signal(80, [](std::size_t) { return std::string(); }, "");
    per_signal(8, [&](std::size_t) { return std::to_string(spr); }, std::to_string(ann_spr));
    per_signal(32, [](std::size_t) { return std::string(); }, "");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw EdfError("cannot write " + path.string());
    }
    out << h;
    std::vector<char> buf;
    for (std::size_t r = 0; r < records; ++r) {
        buf.clear();
        for (std::size_t c = 0; c < nch; ++c) {
            const double g = 65535.0 / (scale[c].pmax - scale[c].pmin);
            for (std::size_t k = 0; k < spr; ++k) {
                const double x = rec.signal[c * rec.samples + r * spr + k];
                const auto d = static_cast<std::int16_t>(std::lround((x - scale[c].pmin) * g - 32768.0));
                const auto u = static_cast<std::uint16_t>(d);
                buf.push_back(static_cast<char>(u & 0xff));
                buf.push_back(static_cast<char>(u >> 8));
            }
        }
        std::string t = tals[r];
        t.resize(2 * ann_spr, '\0');
        buf.insert(buf.end(), t.begin(), t.end());
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
}

}  // namespace fastbci
