#pragma once

// Reading adaptation-report CSVs back, and turning them into SVG line charts
// and a before/after comparison table. Everything here is a pure function of
// the CSV text: no clocks, no locale, fixed number formatting.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "fastbci/binary_io.hpp"
#include "fastbci/evaluation.hpp"

namespace fastbci {

/// One curve: a (source, target, strategy, norm) combination over iterations 0..n.
struct ReportSeries {
    int source_activity = 0;
    int target_activity = 0;
    std::string strategy;
    std::string norm;
    std::size_t runs = 0;
    std::string subjects;
    std::uint64_t seed = 0;
    std::vector<double> mean_test, std_test, mean_train, std_train;

    std::size_t points() const { return mean_test.size(); }
    std::string label() const { return strategy + " / " + norm + "-norm"; }
    bool same_pair(const ReportSeries& o) const {
        return source_activity == o.source_activity && target_activity == o.target_activity;
    }
};

namespace report_detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) {
            return out;
        }
        start = pos + 1;
    }
}

template <class T>
T parse_number(std::string_view s, const std::string& where) {
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
        throw FormatError(where + ": cannot parse number '" + std::string(s) + "'");
    }
    return v;
}

inline double parse_fraction(std::string_view s, const std::string& where, bool is_std) {
    const double v = parse_number<double>(s, where);
    if (!std::isfinite(v) || v < 0.0 || (!is_std && v > 1.0) || (is_std && v > 0.5 + 1e-12)) {
        throw FormatError(where + ": accuracy value out of range: " + std::string(s));
    }
    return v;
}

inline std::string fixed(double v, int precision) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os.setf(std::ios::fixed);
    os.precision(precision);
    os << v;
    return os.str();
}

inline std::string xml_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace report_detail

/// Parses a report CSV (header plus rows, possibly several series). `origin`
/// only labels error messages.
inline std::vector<ReportSeries> parse_report_csv(std::string_view text, const std::string& origin = "report") {
    using report_detail::parse_number;
    std::vector<std::string_view> lines;
    for (auto line : report_detail::split(text, '\n')) {
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (!line.empty()) {
            lines.push_back(line);
        }
    }
    if (lines.empty() || lines.front() != kReportHeader) {
        throw FormatError(origin + ": missing or unexpected header");
    }
    if (lines.size() == 1) {
        throw FormatError(origin + ": no data rows");
    }
    std::vector<ReportSeries> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::string where = origin + ":" + std::to_string(i + 1);
        const auto f = report_detail::split(lines[i], ',');
        if (f.size() != 12) {
            throw FormatError(where + ": expected 12 fields, got " + std::to_string(f.size()));
        }
        ReportSeries key;
        key.source_activity = parse_number<int>(f[0], where);
        key.target_activity = parse_number<int>(f[1], where);
        key.strategy = std::string(f[2]);
        key.norm = std::string(f[3]);
        key.runs = parse_number<std::size_t>(f[9], where);
        key.subjects = std::string(f[10]);
        key.seed = parse_number<std::uint64_t>(f[11], where);
        if (key.source_activity < 1 || key.source_activity > 4 || key.target_activity < 1 ||
            key.target_activity > 4) {
            throw FormatError(where + ": activity ids must be 1..4");
        }
        if (key.strategy != "maml" && key.strategy != "transfer" && key.strategy != "none") {
            throw FormatError(where + ": unknown strategy '" + key.strategy + "'");
        }
        if (key.norm != "batch" && key.norm != "layer") {
            throw FormatError(where + ": unknown norm '" + key.norm + "'");
        }
        if (key.runs == 0 || key.subjects.empty()) {
            throw FormatError(where + ": runs and subjects must be non-empty");
        }
        const auto iteration = parse_number<std::size_t>(f[4], where);
        const bool continues = !out.empty() && iteration != 0;
        if (continues) {
            const auto& cur = out.back();
            if (iteration != cur.points() || !cur.same_pair(key) || cur.strategy != key.strategy ||
                cur.norm != key.norm || cur.runs != key.runs || cur.subjects != key.subjects || cur.seed != key.seed) {
                throw FormatError(where + ": iteration " + std::to_string(iteration) + " does not continue a series");
            }
        } else {
            if (iteration != 0) {
                throw FormatError(where + ": series must start at iteration 0");
            }
            out.push_back(std::move(key));
        }
        auto& s = out.back();
        s.mean_test.push_back(report_detail::parse_fraction(f[5], where, false));
        s.std_test.push_back(report_detail::parse_fraction(f[6], where, true));
        s.mean_train.push_back(report_detail::parse_fraction(f[7], where, false));
        s.std_train.push_back(report_detail::parse_fraction(f[8], where, true));
    }
    return out;
}

inline std::vector<ReportSeries> read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open report " + path.string());
    }
    std::ostringstream os;
    os << in.rdbuf();
    return parse_report_csv(os.str(), path.string());
}

// ---------------------------------------------------------------------------
// SVG plots

struct PlotPanel {
    std::string title;
    std::vector<ReportSeries> series;
};

inline std::string pair_title(int source, int target) {
    return source == target ? "Activity " + std::to_string(source)
                            : "Activity " + std::to_string(source) + " to " + std::to_string(target);
}

/// Groups series into one panel per (source, target) pair, ordered by pair.
inline std::vector<PlotPanel> panels_by_pair(const std::vector<ReportSeries>& all) {
    std::map<std::pair<int, int>, PlotPanel> by_pair;
    for (const auto& s : all) {
        auto& p = by_pair[{s.source_activity, s.target_activity}];
        p.title = pair_title(s.source_activity, s.target_activity);
        p.series.push_back(s);
    }
    std::vector<PlotPanel> out;
    for (auto& [k, p] : by_pair) {
        std::stable_sort(p.series.begin(), p.series.end(), [](const ReportSeries& a, const ReportSeries& b) {
            return std::tie(a.strategy, a.norm) < std::tie(b.strategy, b.norm);
        });
        out.push_back(std::move(p));
    }
    return out;
}

inline constexpr double kPanelWidth = 420.0;
inline constexpr double kPanelHeight = 280.0;

inline const char* series_color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    return palette[i % std::size(palette)];
}

/// One panel as an SVG group placed at (x0, y0). Test accuracy mean with a
/// +-1 std band per series; a single-point series is drawn as a dot.
inline std::string render_panel(const PlotPanel& panel, double x0, double y0) {
    using report_detail::fixed;
    const double left = 52, right = 12, top = 28, bottom = 40;
    const double w = kPanelWidth - left - right, h = kPanelHeight - top - bottom;
    std::size_t last = 0;
    for (const auto& s : panel.series) {
        last = std::max(last, s.points() - 1);
    }
    const double span = last == 0 ? 1.0 : static_cast<double>(last);
    auto px = [&](std::size_t i) { return x0 + left + (last == 0 ? w / 2 : w * static_cast<double>(i) / span); };
    auto py = [&](double acc) { return y0 + top + h * (1.0 - std::clamp(acc, 0.0, 1.0)); };

    std::ostringstream os;
    os << "<g class=\"panel\">\n";
    os << "<text x=\"" << fixed(x0 + kPanelWidth / 2, 1) << "\" y=\"" << fixed(y0 + 18, 1)
       << "\" text-anchor=\"middle\" font-size=\"14\">" << report_detail::xml_escape(panel.title) << "</text>\n";
    os << "<rect x=\"" << fixed(x0 + left, 1) << "\" y=\"" << fixed(y0 + top, 1) << "\" width=\"" << fixed(w, 1)
       << "\" height=\"" << fixed(h, 1) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int tick = 0; tick <= 100; tick += 25) {
        const double y = py(tick / 100.0);
        os << "<line x1=\"" << fixed(x0 + left, 1) << "\" y1=\"" << fixed(y, 1) << "\" x2=\"" << fixed(x0 + left + w, 1)
           << "\" y2=\"" << fixed(y, 1) << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << fixed(x0 + left - 6, 1) << "\" y=\"" << fixed(y + 4, 1)
           << "\" text-anchor=\"end\" font-size=\"10\">" << tick << "</text>\n";
    }
    for (std::size_t i = 0; i <= last; ++i) {
        os << "<text x=\"" << fixed(px(i), 1) << "\" y=\"" << fixed(y0 + top + h + 14, 1)
           << "\" text-anchor=\"middle\" font-size=\"10\">" << i << "</text>\n";
    }
    os << "<text x=\"" << fixed(x0 + left + w / 2, 1) << "\" y=\"" << fixed(y0 + kPanelHeight - 8, 1)
       << "\" text-anchor=\"middle\" font-size=\"11\">fine-tuning iteration</text>\n";
    os << "<text x=\"" << fixed(x0 + 14, 1) << "\" y=\"" << fixed(y0 + top + h / 2, 1)
       << "\" text-anchor=\"middle\" font-size=\"11\" transform=\"rotate(-90 " << fixed(x0 + 14, 1) << ' '
       << fixed(y0 + top + h / 2, 1) << ")\">test accuracy (%)</text>\n";

    for (std::size_t k = 0; k < panel.series.size(); ++k) {
        const auto& s = panel.series[k];
        const char* color = series_color(k);
        os << "<g class=\"series\" data-label=\"" << report_detail::xml_escape(s.label()) << "\">\n";
        if (s.points() > 1) {
            os << "<polygon class=\"band\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
            for (std::size_t i = 0; i < s.points(); ++i) {
                os << fixed(px(i), 2) << ',' << fixed(py(s.mean_test[i] + s.std_test[i]), 2) << ' ';
            }
            for (std::size_t i = s.points(); i-- > 0;) {
                os << fixed(px(i), 2) << ',' << fixed(py(s.mean_test[i] - s.std_test[i]), 2) << ' ';
            }
            os << "\"/>\n<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << color << "\" points=\"";
            for (std::size_t i = 0; i < s.points(); ++i) {
                os << fixed(px(i), 2) << ',' << fixed(py(s.mean_test[i]), 2) << ' ';
            }
            os << "\"/>\n";
        } else {
            const double x = px(0);
            os << "<line class=\"band\" x1=\"" << fixed(x, 2) << "\" y1=\"" << fixed(py(s.mean_test[0] + s.std_test[0]), 2)
               << "\" x2=\"" << fixed(x, 2) << "\" y2=\"" << fixed(py(s.mean_test[0] - s.std_test[0]), 2)
               << "\" stroke=\"" << color << "\" stroke-opacity=\"0.4\" stroke-width=\"6\"/>\n";
        }
        for (std::size_t i = 0; i < s.points(); ++i) {
            os << "<circle cx=\"" << fixed(px(i), 2) << "\" cy=\"" << fixed(py(s.mean_test[i]), 2) << "\" r=\"2.5\" fill=\""
               << color << "\"/>\n";
        }
        const double ly = y0 + top + 14 + 14 * static_cast<double>(k);
        os << "<line x1=\"" << fixed(x0 + left + 8, 1) << "\" y1=\"" << fixed(ly - 4, 1) << "\" x2=\""
           << fixed(x0 + left + 26, 1) << "\" y2=\"" << fixed(ly - 4, 1) << "\" stroke=\"" << color
           << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << fixed(x0 + left + 30, 1) << "\" y=\"" << fixed(ly, 1) << "\" font-size=\"10\">"
           << report_detail::xml_escape(s.label()) << "</text>\n";
        os << "</g>\n";
    }
    os << "</g>\n";
    return os.str();
}

/// A grid of panels, at most four per row.
inline std::string render_svg(const std::vector<PlotPanel>& panels) {
    if (panels.empty()) {
        throw std::invalid_argument("render_svg: nothing to plot");
    }
    const std::size_t cols = std::min<std::size_t>(4, panels.size());
    const std::size_t rows = (panels.size() + cols - 1) / cols;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << report_detail::fixed(kPanelWidth * cols, 0)
       << "\" height=\"" << report_detail::fixed(kPanelHeight * rows, 0) << "\" font-family=\"sans-serif\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t i = 0; i < panels.size(); ++i) {
        os << render_panel(panels[i], kPanelWidth * static_cast<double>(i % cols),
                           kPanelHeight * static_cast<double>(i / cols));
    }
    os << "</svg>\n";
    return os.str();
}

inline std::string plot_file_name(int source, int target) {
    return source == target ? "activity" + std::to_string(source) + ".svg"
                            : "activity" + std::to_string(source) + "_to_" + std::to_string(target) + ".svg";
}

/// Writes one SVG per (source, target) pair, plus `grid.svg` holding every
/// panel when there is more than one pair. Returns the files written, sorted.
inline std::vector<std::filesystem::path> render_plots(const std::vector<ReportSeries>& series,
                                                       const std::filesystem::path& out_dir) {
    const auto panels = panels_by_pair(series);
    if (panels.empty()) {
        throw std::invalid_argument("render_plots: no report series");
    }
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;
    auto put = [&](const std::filesystem::path& path, const std::string& svg) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << svg;
        if (!out) {
            throw std::runtime_error("cannot write " + path.string());
        }
        written.push_back(path);
    };
    for (const auto& p : panels) {
        const auto& s = p.series.front();
        put(out_dir / plot_file_name(s.source_activity, s.target_activity), render_svg({p}));
    }
    if (panels.size() > 1) {
        put(out_dir / "grid.svg", render_svg(panels));
    }
    std::sort(written.begin(), written.end());
    return written;
}

// ---------------------------------------------------------------------------
// Before/after table

struct CompareRow {
    std::string activity;  // "1" or "1 to 3"
    std::string model;
    double before_mean = 0, before_std = 0, after_mean = 0, after_std = 0;  // percent
    bool reference = false;
};

/// Published before/after test accuracy (percent) of a transfer-learned
/// layer-norm model adapted within each activity.
inline std::vector<CompareRow> published_reference_rows() {
    return {
        {"1", "published", 83.18, 0.0, 85.88, 0.6, true},
        {"2", "published", 85.91, 0.0, 86.28, 0.63, true},
        {"3", "published", 72.73, 0.0, 79.81, 1.07, true},
        {"4", "published", 67.73, 0.0, 71.22, 1.2, true},
    };
}

/// One row per series: iteration 0 ("before") and the last iteration
/// ("after"), in percent. All series must share steps, runs and subjects.
inline std::vector<CompareRow> compare_rows(const std::vector<ReportSeries>& series, bool with_reference = false) {
    if (series.empty()) {
        throw std::invalid_argument("compare_table: no reports given");
    }
    const auto& first = series.front();
    for (const auto& s : series) {
        if (s.points() != first.points() || s.runs != first.runs || s.subjects != first.subjects) {
            throw std::invalid_argument("compare_table: reports use different protocols (steps " +
                                        std::to_string(first.points() - 1) + "/" + std::to_string(s.points() - 1) +
                                        ", runs " + std::to_string(first.runs) + "/" + std::to_string(s.runs) +
                                        ", subjects " + first.subjects + "/" + s.subjects + ")");
        }
    }
    std::vector<CompareRow> rows;
    for (const auto& s : series) {
        CompareRow r;
        r.activity = s.source_activity == s.target_activity
                         ? std::to_string(s.source_activity)
                         : std::to_string(s.source_activity) + " to " + std::to_string(s.target_activity);
        r.model = s.label();
        const std::size_t last = s.points() - 1;
        r.before_mean = 100.0 * s.mean_test[0];
        r.before_std = 100.0 * s.std_test[0];
        r.after_mean = 100.0 * s.mean_test[last];
        r.after_std = 100.0 * s.std_test[last];
        rows.push_back(std::move(r));
    }
    if (with_reference) {
        for (auto& r : published_reference_rows()) {
            rows.push_back(std::move(r));
        }
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const CompareRow& a, const CompareRow& b) { return a.activity < b.activity; });
    return rows;
}

inline std::string compare_markdown(const std::vector<CompareRow>& rows) {
    using report_detail::fixed;
    std::ostringstream os;
    os << "| Activity | Model | Before adaptation | After adaptation |\n";
    os << "|---|---|---|---|\n";
    for (const auto& r : rows) {
        os << "| " << r.activity << " | " << r.model << " | " << fixed(r.before_mean, 2) << " ± " << fixed(r.before_std, 2)
           << " | " << fixed(r.after_mean, 2) << " ± " << fixed(r.after_std, 2) << " |\n";
    }
    return os.str();
}

inline std::string compare_csv(const std::vector<CompareRow>& rows) {
    using report_detail::fixed;
    std::ostringstream os;
    os << "activity,model,before_mean,before_std,after_mean,after_std,reference\n";
    for (const auto& r : rows) {
        os << r.activity << ',' << r.model << ',' << fixed(r.before_mean, 4) << ',' << fixed(r.before_std, 4) << ','
           << fixed(r.after_mean, 4) << ',' << fixed(r.after_std, 4) << ',' << (r.reference ? 1 : 0) << '\n';
    }
    return os.str();
}

}  // namespace fastbci
