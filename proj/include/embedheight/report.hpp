#pragma once

// Static report artifacts: the evaluation table as CSV/text, and SVG
// renderings of the loss curves, the inferred-vs-reference scatter and
// the height histograms. Everything is deterministic string assembly so
// re-running a pipeline reproduces each artifact byte for byte.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "embedheight/errors.hpp"
#include "embedheight/metrics.hpp"
#include "embedheight/trainer.hpp"

namespace embedheight {

/// One evaluated series (e.g. "unetpp_test"): correlation metrics plus
/// difference statistics against the reference heights.
struct EvalResult {
    std::string label;
    CorrStats corr;
    DiffStats diff;
};

namespace detail {

inline std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string g6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

/// Pixel coordinate with two decimals; plenty for SVG geometry.
inline std::string px2(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline double eval_stat(const EvalResult& r, std::size_t row) {
    switch (row) {
        case 0: return r.corr.r2;
        case 1: return r.corr.pearson;
        case 2: return r.corr.spearman;
        case 3: return r.diff.mean;
        case 4: return r.diff.median;
        case 5: return r.diff.sd;
        case 6: return r.diff.rmse;
        case 7: return r.diff.nmad;
        case 8: return r.diff.p25;
        case 9: return r.diff.p75;
    }
    throw ValueError("evaluation table has 10 rows");
}

inline constexpr std::array<std::string_view, 10> kEvalRowNames{
    "r2",     "pearson", "spearman", "mean_m", "median_m",
    "sd_m",   "rmse_m",  "nmad_m",   "p25_m",  "p75_m",
};

}  // namespace detail

/// CSV in the published table's layout: one row per statistic, one column
/// per evaluated series. Values are %.17g so the file is value-exact.
inline std::string metrics_report_csv(std::span<const EvalResult> results) {
    if (results.empty()) throw ValueError("metrics report: no results");
    std::string out = "statistic";
    for (const EvalResult& r : results) out += "," + r.label;
    out += '\n';
    for (std::size_t row = 0; row < detail::kEvalRowNames.size(); ++row) {
        out += detail::kEvalRowNames[row];
        for (const EvalResult& r : results) out += "," + detail::g17(detail::eval_stat(r, row));
        out += '\n';
    }
    return out;
}

/// The same table as aligned human-readable text (4 decimal places).
inline std::string metrics_report_text(std::span<const EvalResult> results) {
    if (results.empty()) throw ValueError("metrics report: no results");
    constexpr int kNameWidth = 10;
    constexpr int kColWidth = 14;
    char buf[64];
    std::string out(kNameWidth, ' ');
    for (const EvalResult& r : results) {
        std::snprintf(buf, sizeof buf, " %*s", kColWidth, r.label.c_str());
        out += buf;
    }
    out += '\n';
    for (std::size_t row = 0; row < detail::kEvalRowNames.size(); ++row) {
        std::snprintf(buf, sizeof buf, "%-*s", kNameWidth,
                      std::string(detail::kEvalRowNames[row]).c_str());
        out += buf;
        for (const EvalResult& r : results) {
            std::snprintf(buf, sizeof buf, " %*.4f", kColWidth, detail::eval_stat(r, row));
            out += buf;
        }
        out += '\n';
    }
    return out;
}

/// Histogram as CSV: half-open bin bounds, then one count column per series.
inline std::string histogram_csv(const Histogram& h) {
    std::string out = "bin_start,bin_end";
    for (const std::string& label : h.labels) out += "," + label;
    out += '\n';
    for (std::size_t i = 0; i + 1 < h.edges.size(); ++i) {
        out += detail::g17(h.edges[i]) + "," + detail::g17(h.edges[i + 1]);
        for (const auto& series : h.counts) out += "," + std::to_string(series[i]);
        out += '\n';
    }
    return out;
}

/// Paired reference/inferred values as CSV (the scatter's underlying data).
inline std::string pairs_csv(std::span<const double> ref, std::span<const double> pred) {
    if (ref.size() != pred.size()) throw ValueError("pairs: size mismatch");
    std::string out = "reference_m,inferred_m\n";
    for (std::size_t i = 0; i < ref.size(); ++i)
        out += detail::g17(ref[i]) + "," + detail::g17(pred[i]) + '\n';
    return out;
}

/// Parse the trainer's epoch_log_csv output back into rows.
inline std::vector<EpochLog> parse_epoch_log_csv(std::string_view text) {
    constexpr std::string_view kHeader = "epoch,train_loss,val_loss,lr,is_best";
    std::vector<EpochLog> log;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
        ++line_no;
        const std::size_t eol = std::min(text.find('\n', pos), text.size());
        const std::string line(text.substr(pos, eol - pos));
        pos = eol + 1;
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != kHeader) throw FormatError("epoch log: bad header: " + line);
            continue;
        }
        EpochLog row;
        int best = 0;
        int consumed = 0;
        if (std::sscanf(line.c_str(), "%u,%lf,%lf,%lf,%d%n", &row.epoch, &row.train_loss,
                        &row.val_loss, &row.lr, &best, &consumed) != 5 ||
            consumed != static_cast<int>(line.size()))
            throw FormatError("epoch log: bad row at line " + std::to_string(line_no) + ": " +
                              line);
        row.is_best = best != 0;
        log.push_back(row);
    }
    if (log.empty()) throw FormatError("epoch log: no rows");
    return log;
}

namespace detail {

/// Largest nice step (1/2/5 x 10^k ladder) no bigger than needed to cover
/// the range with about `target` ticks.
inline double nice_step(double range, int target) {
    const double raw = range / std::max(target, 1);
    const double base = std::pow(10.0, std::floor(std::log10(raw)));
    const double m = raw / base;
    if (m <= 1.0) return base;
    if (m <= 2.0) return 2.0 * base;
    if (m <= 5.0) return 5.0 * base;
    return 10.0 * base;
}

inline std::vector<double> nice_ticks(double lo, double hi, int target = 6) {
    const double step = nice_step(hi - lo, target);
    std::vector<double> ticks;
    double t = std::ceil(lo / step - 1e-9) * step;
    for (; t <= hi + step * 1e-9; t += step) ticks.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
    return ticks;
}

inline constexpr std::array<std::string_view, 4> kSeriesColors{
    "#1f77b4",  // blue
    "#ff7f0e",  // orange
    "#2ca02c",  // green
    "#d62728",  // red
};

/// Shared plot frame: fixed canvas, margins, linear or log10 y axis.
struct Frame {
    double width = 640.0;
    double height = 440.0;
    double left = 72.0, right = 24.0, top = 40.0, bottom = 56.0;
    double x_lo = 0.0, x_hi = 1.0;
    double y_lo = 0.0, y_hi = 1.0;
    bool log_y = false;

    double px(double x) const {
        return left + (x - x_lo) / (x_hi - x_lo) * (width - left - right);
    }
    double py(double y) const {
        const double v = log_y ? std::log10(y) : y;
        const double lo = log_y ? std::log10(y_lo) : y_lo;
        const double hi = log_y ? std::log10(y_hi) : y_hi;
        return height - bottom - (v - lo) / (hi - lo) * (height - top - bottom);
    }

    void expand_degenerate() {
        if (x_hi <= x_lo) {
            const double pad = std::max(1.0, std::abs(x_lo) * 0.1);
            x_lo -= pad;
            x_hi += pad;
        }
        if (y_hi <= y_lo) {
            const double pad = std::max(log_y ? std::abs(y_lo) * 0.5 : 1.0,
                                        std::abs(y_lo) * 0.1);
            y_lo -= pad;
            y_hi += pad;
            if (log_y && y_lo <= 0.0) y_lo = y_hi / 10.0;
        }
    }
};

inline std::string svg_open(const Frame& f, std::string_view title) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px2(f.width) +
                    "\" height=\"" + px2(f.height) + "\" viewBox=\"0 0 " + px2(f.width) + " " +
                    px2(f.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + px2(f.width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
         std::string(title) + "</text>\n";
    return s;
}

inline std::string svg_line(double x1, double y1, double x2, double y2, std::string_view stroke,
                            std::string_view extra = "") {
    return "<line x1=\"" + px2(x1) + "\" y1=\"" + px2(y1) + "\" x2=\"" + px2(x2) + "\" y2=\"" +
           px2(y2) + "\" stroke=\"" + std::string(stroke) + "\" " + std::string(extra) + "/>\n";
}

inline std::string svg_text(double x, double y, std::string_view anchor, std::string_view body,
                            std::string_view extra = "") {
    return "<text x=\"" + px2(x) + "\" y=\"" + px2(y) + "\" text-anchor=\"" +
           std::string(anchor) + "\" " + std::string(extra) + ">" + std::string(body) +
           "</text>\n";
}

/// Axes, tick marks, tick labels and axis titles for a frame.
inline std::string svg_axes(const Frame& f, std::string_view x_label, std::string_view y_label) {
    std::string s;
    const double bx = f.height - f.bottom;
    s += "<rect x=\"" + px2(f.left) + "\" y=\"" + px2(f.top) + "\" width=\"" +
         px2(f.width - f.left - f.right) + "\" height=\"" + px2(f.height - f.top - f.bottom) +
         "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (double t : nice_ticks(f.x_lo, f.x_hi)) {
        const double x = f.px(t);
        s += svg_line(x, bx, x, bx + 5, "#333");
        s += svg_text(x, bx + 18, "middle", g6(t));
    }
    if (f.log_y) {
        const int e_lo = static_cast<int>(std::ceil(std::log10(f.y_lo) - 1e-9));
        const int e_hi = static_cast<int>(std::floor(std::log10(f.y_hi) + 1e-9));
        const int step = std::max(1, (e_hi - e_lo) / 8 + ((e_hi - e_lo) % 8 ? 1 : 0));
        for (int e = e_lo; e <= e_hi; e += step) {
            const double y = f.py(std::pow(10.0, e));
            s += svg_line(f.left - 5, y, f.left, y, "#333");
            s += svg_text(f.left - 8, y + 4, "end", "1e" + std::to_string(e));
        }
    } else {
        for (double t : nice_ticks(f.y_lo, f.y_hi)) {
            const double y = f.py(t);
            s += svg_line(f.left - 5, y, f.left, y, "#333");
            s += svg_text(f.left - 8, y + 4, "end", g6(t));
        }
    }
    s += svg_text((f.left + f.width - f.right) / 2, f.height - 14, "middle", x_label);
    s += "<text x=\"18\" y=\"" + px2((f.top + f.height - f.bottom) / 2) +
         "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
         px2((f.top + f.height - f.bottom) / 2) + ")\">" + std::string(y_label) + "</text>\n";
    return s;
}

inline std::string svg_legend(const Frame& f, std::span<const std::string> labels) {
    std::string s;
    double y = f.top + 14;
    const double x = f.width - f.right - 150;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const std::string_view color = kSeriesColors[i % kSeriesColors.size()];
        s += "<rect x=\"" + px2(x) + "\" y=\"" + px2(y - 9) +
             "\" width=\"12\" height=\"12\" fill=\"" + std::string(color) + "\"/>\n";
        s += svg_text(x + 18, y + 1, "start", labels[i]);
        y += 18;
    }
    return s;
}

}  // namespace detail

/// Training/validation loss per epoch. The y axis switches to log10 when
/// the losses are positive and span more than two orders of magnitude.
inline std::string loss_curve_svg(std::span<const EpochLog> log,
                                  std::string_view title = "training and validation loss") {
    if (log.empty()) throw ValueError("loss curve: empty log");
    detail::Frame f;
    f.x_lo = log.front().epoch;
    f.x_hi = log.back().epoch;
    double lo = log[0].val_loss, hi = log[0].val_loss;
    for (const EpochLog& row : log) {
        lo = std::min({lo, row.train_loss, row.val_loss});
        hi = std::max({hi, row.train_loss, row.val_loss});
    }
    f.log_y = lo > 0.0 && hi / lo > 100.0;
    f.y_lo = f.log_y ? lo : std::min(0.0, lo);
    f.y_hi = hi;
    f.expand_degenerate();

    std::string s = detail::svg_open(f, title);
    s += detail::svg_axes(f, "epoch", "masked MSE loss");
    const auto polyline = [&](auto get, std::string_view color) {
        std::string pts;
        for (const EpochLog& row : log)
            pts += detail::px2(f.px(row.epoch)) + "," + detail::px2(f.py(get(row))) + " ";
        s += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + std::string(color) +
             "\" stroke-width=\"1.5\"/>\n";
    };
    polyline([](const EpochLog& r) { return r.train_loss; }, detail::kSeriesColors[0]);
    polyline([](const EpochLog& r) { return r.val_loss; }, detail::kSeriesColors[1]);
    const auto best = std::min_element(log.begin(), log.end(), [](const auto& a, const auto& b) {
        return a.val_loss < b.val_loss;
    });
    s += "<circle cx=\"" + detail::px2(f.px(best->epoch)) + "\" cy=\"" +
         detail::px2(f.py(best->val_loss)) +
         "\" r=\"4\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\"/>\n";
    const std::array<std::string, 2> labels{"train", "validation"};
    s += detail::svg_legend(f, labels);
    s += "</svg>\n";
    return s;
}

/// Inferred vs reference scatter with the identity line (dashed) and the
/// least-squares fit line. Dense inputs are thinned by a fixed stride so
/// the file stays small and the selection stays deterministic.
inline std::string scatter_svg(std::span<const double> ref, std::span<const double> pred,
                               const CorrStats& stats,
                               std::string_view title = "inferred vs reference height",
                               std::size_t max_points = 4000) {
    if (ref.size() != pred.size()) throw ValueError("scatter: size mismatch");
    if (ref.empty()) throw ValueError("scatter: empty input");
    if (max_points == 0) throw ValueError("scatter: max_points must be >= 1");
    detail::Frame f;
    f.height = 560.0;  // roomier square-ish panel for an aspect-true scatter
    double lo = ref[0], hi = ref[0];
    for (std::size_t i = 0; i < ref.size(); ++i) {
        lo = std::min({lo, ref[i], pred[i]});
        hi = std::max({hi, ref[i], pred[i]});
    }
    f.x_lo = f.y_lo = lo;
    f.x_hi = f.y_hi = hi;
    f.expand_degenerate();

    std::string s = detail::svg_open(f, title);
    s += detail::svg_axes(f, "reference height (m)", "inferred height (m)");
    const std::size_t stride = (ref.size() + max_points - 1) / max_points;
    for (std::size_t i = 0; i < ref.size(); i += stride) {
        s += "<circle cx=\"" + detail::px2(f.px(ref[i])) + "\" cy=\"" +
             detail::px2(f.py(pred[i])) + "\" r=\"1.5\" fill=\"#1f77b4\" fill-opacity=\"0.4\"/>\n";
    }
    s += detail::svg_line(f.px(f.x_lo), f.py(f.y_lo), f.px(f.x_hi), f.py(f.y_hi), "#777",
                          "stroke-dasharray=\"5,4\"");
    // Clip the fit line to the frame's x range; its endpoints may still leave
    // the y range for poor fits, so clamp those too.
    const auto fit_y = [&](double x) {
        return std::clamp(stats.fit_slope * x + stats.fit_intercept, f.y_lo, f.y_hi);
    };
    s += detail::svg_line(f.px(f.x_lo), f.py(fit_y(f.x_lo)), f.px(f.x_hi), f.py(fit_y(f.x_hi)),
                          "#d62728");
    s += detail::svg_text(f.left + 10, f.top + 16, "start",
                          "R&#178; = " + detail::g6(stats.r2) +
                              ", Pearson = " + detail::g6(stats.pearson));
    s += "</svg>\n";
    return s;
}

/// Grouped bar chart of per-series height counts over shared bins.
inline std::string histogram_svg(const Histogram& h,
                                 std::string_view title = "height distribution",
                                 std::string_view x_label = "height (m)") {
    if (h.counts.empty() || h.edges.size() < 2) throw ValueError("histogram plot: empty");
    detail::Frame f;
    f.x_lo = h.edges.front();
    f.x_hi = h.edges.back();
    std::size_t max_count = 1;
    for (const auto& series : h.counts)
        for (std::size_t c : series) max_count = std::max(max_count, c);
    f.y_lo = 0.0;
    f.y_hi = static_cast<double>(max_count);
    f.expand_degenerate();

    std::string s = detail::svg_open(f, title);
    s += detail::svg_axes(f, x_label, "pixel count");
    const std::size_t k = h.counts.size();
    for (std::size_t series = 0; series < k; ++series) {
        const std::string_view color =
            detail::kSeriesColors[series % detail::kSeriesColors.size()];
        for (std::size_t bin = 0; bin + 1 < h.edges.size(); ++bin) {
            const std::size_t count = h.counts[series][bin];
            if (count == 0) continue;
            const double w = (h.edges[bin + 1] - h.edges[bin]) / static_cast<double>(k);
            const double x0 = h.edges[bin] + static_cast<double>(series) * w;
            const double top = f.py(static_cast<double>(count));
            s += "<rect x=\"" + detail::px2(f.px(x0)) + "\" y=\"" + detail::px2(top) +
                 "\" width=\"" + detail::px2(f.px(x0 + w) - f.px(x0)) + "\" height=\"" +
                 detail::px2(f.py(0.0) - top) + "\" fill=\"" + std::string(color) +
                 "\" fill-opacity=\"0.85\"/>\n";
        }
    }
    s += detail::svg_legend(f, h.labels);
    s += "</svg>\n";
    return s;
}

}  // namespace embedheight
