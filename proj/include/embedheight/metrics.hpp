#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "embedheight/grid.hpp"

namespace embedheight {

struct KahanSum {
    double sum = 0.0;
    double carry = 0.0;
    void add(double x) {
        const double y = x - carry;
        const double t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    double value() const { return sum; }
};

/// Difference statistics over a masked height-difference sample (m).
struct DiffStats {
    double mean = 0.0;
    double median = 0.0;
    double sd = 0.0;    // sample SD, n-1
    double rmse = 0.0;
    double nmad = 0.0;
    double p25 = 0.0;
    double p75 = 0.0;
    std::size_t n = 0;
};

struct CorrStats {
    double r2 = 0.0;
    double pearson = 0.0;
    double spearman = 0.0;
    double fit_slope = 0.0;
    double fit_intercept = 0.0;  // m
};

struct Histogram {
    double bin_width = 0.0;
    long long first_bin = 0;  // edges[i] = (first_bin + i) * bin_width
    std::vector<double> edges;
    std::vector<std::string> labels;
    std::vector<std::vector<std::size_t>> counts;  // one row per series
};

/// Per-pixel inferred-minus-reference differences over the masked-in pixels.
/// Empty mask means all pixels; a reference nodata value is always excluded.
inline std::vector<double> delta(const Grid& pred, const Grid& ref,
                                 std::span<const std::uint8_t> mask = {}) {
    if (pred.width() != ref.width() || pred.height() != ref.height())
        throw ValueError("delta: grid shapes differ");
    if (!pred.geo().almost_equal(ref.geo(), 1e-6) || pred.crs() != ref.crs())
        throw ValueError("delta: grids are not aligned");
    if (pred.bands() != 1 || ref.bands() != 1) throw ValueError("delta: expects single-band grids");
    if (!mask.empty() && mask.size() != ref.pixel_count())
        throw ValueError("delta: mask size mismatch");

    std::vector<double> out;
    out.reserve(ref.pixel_count());
    for (int y = 0; y < ref.height(); ++y)
        for (int x = 0; x < ref.width(); ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * ref.width() + x;
            if (!mask.empty() && !mask[p]) continue;
            const double g = ref.at(0, y, x);
            if (ref.is_nodata(g)) continue;
            out.push_back(pred.at(0, y, x) - g);
        }
    return out;
}

namespace detail {

/// Percentile via linear interpolation between order statistics (sorted input).
inline double percentile_sorted(std::span<const double> sorted, double pct) {
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = (n - 1) * pct / 100.0;
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= n) return sorted[n - 1];
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double median_sorted(std::span<const double> sorted) {
    return percentile_sorted(sorted, 50.0);
}

/// Average ranks, ties get the mean rank of their run.
inline std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double mean_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

inline double pearson_impl(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    KahanSum sx, sy;
    for (std::size_t i = 0; i < n; ++i) {
        sx.add(x[i]);
        sy.add(y[i]);
    }
    const double mx = sx.value() / n, my = sy.value() / n;
    KahanSum sxy, sxx, syy;
    for (std::size_t i = 0; i < n; ++i) {
        sxy.add((x[i] - mx) * (y[i] - my));
        sxx.add((x[i] - mx) * (x[i] - mx));
        syy.add((y[i] - my) * (y[i] - my));
    }
    return sxy.value() / std::sqrt(sxx.value() * syy.value());
}

}  // namespace detail

inline DiffStats diff_stats(std::span<const double> dh) {
    if (dh.size() < 2) throw ValueError("diff_stats: need at least 2 samples");
    DiffStats s;
    s.n = dh.size();

    // streaming pass: Welford mean/M2 plus compensated sum of squares
    double mean = 0.0, m2 = 0.0;
    KahanSum sq;
    std::size_t k = 0;
    for (double v : dh) {
        ++k;
        const double d1 = v - mean;
        mean += d1 / static_cast<double>(k);
        m2 += d1 * (v - mean);
        sq.add(v * v);
    }
    s.mean = mean;
    s.sd = std::sqrt(m2 / static_cast<double>(s.n - 1));
    s.rmse = std::sqrt(sq.value() / static_cast<double>(s.n));

    std::vector<double> sorted(dh.begin(), dh.end());
    std::sort(sorted.begin(), sorted.end());
    s.median = detail::median_sorted(sorted);
    s.p25 = detail::percentile_sorted(sorted, 25.0);
    s.p75 = detail::percentile_sorted(sorted, 75.0);

    std::vector<double> absdev(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) absdev[i] = std::fabs(sorted[i] - s.median);
    std::sort(absdev.begin(), absdev.end());
    s.nmad = 1.4826 * detail::median_sorted(absdev);
    return s;
}

inline CorrStats corr_stats(std::span<const double> pred, std::span<const double> ref) {
    if (pred.size() != ref.size()) throw ValueError("corr_stats: length mismatch");
    if (pred.size() < 3) throw ValueError("corr_stats: need at least 3 samples");
    const std::size_t n = pred.size();

    KahanSum sp, sr;
    for (std::size_t i = 0; i < n; ++i) {
        sp.add(pred[i]);
        sr.add(ref[i]);
    }
    const double mp = sp.value() / n, mr = sr.value() / n;
    KahanSum sse, svar, cov, pvar;
    for (std::size_t i = 0; i < n; ++i) {
        sse.add((ref[i] - pred[i]) * (ref[i] - pred[i]));
        svar.add((ref[i] - mr) * (ref[i] - mr));
        cov.add((ref[i] - mr) * (pred[i] - mp));
        pvar.add((pred[i] - mp) * (pred[i] - mp));
    }
    if (svar.value() <= 0.0) throw ValueError("corr_stats: reference variance is zero");

    CorrStats c;
    c.r2 = 1.0 - sse.value() / svar.value();
    c.pearson = pvar.value() > 0.0 ? cov.value() / std::sqrt(svar.value() * pvar.value()) : 0.0;
    const std::vector<double> rp = detail::average_ranks(pred);
    const std::vector<double> rr = detail::average_ranks(ref);
    c.spearman = detail::pearson_impl(rp, rr);
    c.fit_slope = cov.value() / svar.value();
    c.fit_intercept = mp - c.fit_slope * mr;
    return c;
}

inline Histogram histogram(std::span<const double> values, double bin_width,
                           const std::string& label = "values") {
    if (!(bin_width > 0.0)) throw ValueError("histogram: bin width must be positive");
    if (values.empty()) throw ValueError("histogram: empty input");
    Histogram h;
    h.bin_width = bin_width;
    long long kmin = static_cast<long long>(std::floor(values[0] / bin_width));
    long long kmax = kmin;
    for (double v : values) {
        const long long k = static_cast<long long>(std::floor(v / bin_width));
        kmin = std::min(kmin, k);
        kmax = std::max(kmax, k);
    }
    h.first_bin = kmin;
    h.edges.resize(static_cast<std::size_t>(kmax - kmin) + 2);
    for (std::size_t i = 0; i < h.edges.size(); ++i)
        h.edges[i] = static_cast<double>(kmin + static_cast<long long>(i)) * bin_width;
    h.labels.push_back(label);
    std::vector<std::size_t> counts(h.edges.size() - 1, 0);
    for (double v : values)
        counts[static_cast<std::size_t>(static_cast<long long>(std::floor(v / bin_width)) - kmin)]++;
    h.counts.push_back(std::move(counts));
    return h;
}

/// Extend a histogram with another series sharing the aligned edges.
inline void add_series(Histogram& h, std::span<const double> values, const std::string& label) {
    if (values.empty()) throw ValueError("histogram: empty input");
    long long kmin = h.first_bin;
    long long kmax = h.first_bin + static_cast<long long>(h.counts[0].size()) - 1;
    for (double v : values) {
        const long long k = static_cast<long long>(std::floor(v / h.bin_width));
        kmin = std::min(kmin, k);
        kmax = std::max(kmax, k);
    }
    const std::size_t nbins = static_cast<std::size_t>(kmax - kmin) + 1;
    const std::size_t shift = static_cast<std::size_t>(h.first_bin - kmin);
    for (auto& series : h.counts) {
        std::vector<std::size_t> grown(nbins, 0);
        std::copy(series.begin(), series.end(), grown.begin() + shift);
        series = std::move(grown);
    }
    h.first_bin = kmin;
    h.edges.resize(nbins + 1);
    for (std::size_t i = 0; i < h.edges.size(); ++i)
        h.edges[i] = static_cast<double>(kmin + static_cast<long long>(i)) * h.bin_width;
    std::vector<std::size_t> counts(nbins, 0);
    for (double v : values)
        counts[static_cast<std::size_t>(static_cast<long long>(std::floor(v / h.bin_width)) - kmin)]++;
    h.labels.push_back(label);
    h.counts.push_back(std::move(counts));
}

}  // namespace embedheight
