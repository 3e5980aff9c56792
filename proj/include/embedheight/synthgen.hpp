#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "embedheight/grid.hpp"
#include "embedheight/indexing.hpp"
#include "embedheight/rng.hpp"

namespace embedheight {

/// Deterministic synthetic scene generator. Heights are a known function of
/// the quantized embedding bands, so every downstream stage can be checked
/// against ground truth at desk scale.
struct SynthSpec {
    enum class Mapping { linear, nonlinear };

    int width = 128;
    int height = 128;
    std::uint64_t seed = 1;
    int smooth_radius = 2;       // box-blur radius applied to the embedding bands
    Mapping mapping = Mapping::linear;
    double noise_sd = 0.0;       // additive height noise (m)
    double height_offset = 80.0; // approximate mean height (m)
    double height_scale = 1.0;   // scales all mapping coefficients
    // Distribution-shift mode: add shift_offset to heights in columns right of
    // floor(shift_fraction * width). Off when shift_offset == 0.
    double shift_offset = 0.0;
    double shift_fraction = 0.7;

    void validate() const {
        if (width < 2 || height < 2) throw ValueError("SynthSpec: degenerate dims");
        if (smooth_radius < 0) throw ValueError("SynthSpec: radius must be >= 0");
        if (noise_sd < 0) throw ValueError("SynthSpec: noise sd must be >= 0");
    }
};

/// Exact description of the embedding->height mapping used by a generated
/// scene. coeff terms with band_b == band_a are squared terms, otherwise
/// products; all terms act on centered normalized bands (xn - 0.5).
struct MappingDescriptor {
    struct Term {
        int band_a;
        int band_b;
        double coeff;
    };

    std::vector<double> w;  // 64 linear coefficients on normalized bands
    double intercept = 0.0;
    std::vector<Term> terms;
    // Curvature of the linear index u = intercept + w·x: adds
    // curve_coeff * (u - curve_center)^2. Equivalent to a rank-one matrix of
    // squared and product terms over all bands, recorded in this compact form.
    double curve_coeff = 0.0;
    double curve_center = 0.0;
    int height_smooth_radius = 0;
    int height_smooth_passes = 0;
    double noise_sd = 0.0;
    double shift_offset = 0.0;
    int shift_column = -1;  // first shifted column, -1 when off

    std::string to_text() const {
        std::string out;
        char buf[96];
        const auto kv = [&](const char* k, double v) {
            std::snprintf(buf, sizeof buf, "%s=%.17g\n", k, v);
            out += buf;
        };
        out += terms.empty() ? "mapping=linear\n" : "mapping=nonlinear\n";
        kv("intercept_m", intercept);
        kv("curve_coeff", curve_coeff);
        kv("curve_center", curve_center);
        kv("noise_sd_m", noise_sd);
        kv("shift_offset_m", shift_offset);
        out += "shift_column=" + std::to_string(shift_column) + "\n";
        out += "height_smooth_radius=" + std::to_string(height_smooth_radius) + "\n";
        out += "height_smooth_passes=" + std::to_string(height_smooth_passes) + "\n";
        for (std::size_t k = 0; k < w.size(); ++k) {
            std::snprintf(buf, sizeof buf, "w_%zu=%.17g\n", k, w[k]);
            out += buf;
        }
        for (const auto& t : terms) {
            std::snprintf(buf, sizeof buf, "term=%s,%d,%d,%.17g\n",
                          t.band_a == t.band_b ? "square" : "product", t.band_a, t.band_b, t.coeff);
            out += buf;
        }
        return out;
    }
};

namespace detail {

/// Separable running-sum box blur with mirrored boundaries.
inline void box_blur(std::vector<double>& field, int w, int h, int radius, int passes) {
    if (radius <= 0 || passes <= 0) return;
    const double inv = 1.0 / (2 * radius + 1);
    std::vector<double> tmp(field.size());
    for (int pass = 0; pass < passes; ++pass) {
        // rows
        for (int y = 0; y < h; ++y) {
            const double* row = field.data() + static_cast<std::size_t>(y) * w;
            double* out = tmp.data() + static_cast<std::size_t>(y) * w;
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) acc += row[reflect_index(k, w)];
            out[0] = acc * inv;
            for (int x = 1; x < w; ++x) {
                acc += row[reflect_index(x + radius, w)] - row[reflect_index(x - 1 - radius, w)];
                out[x] = acc * inv;
            }
        }
        // columns
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k)
                acc += tmp[static_cast<std::size_t>(reflect_index(k, h)) * w + x];
            field[x] = acc * inv;
            for (int y = 1; y < h; ++y) {
                acc += tmp[static_cast<std::size_t>(reflect_index(y + radius, h)) * w + x] -
                       tmp[static_cast<std::size_t>(reflect_index(y - 1 - radius, h)) * w + x];
                field[static_cast<std::size_t>(y) * w + x] = acc * inv;
            }
        }
    }
}

}  // namespace detail

inline constexpr int kSynthBands = 64;

/// Deterministic part of the mapping: linear + nonlinear terms on the
/// normalized bands, then the descriptor's spatial smoothing of the
/// nonlinear component. No noise, no shift.
inline std::vector<double> eval_mapping(const MappingDescriptor& d, const Grid& normalized) {
    if (normalized.bands() != kSynthBands) throw ValueError("eval_mapping: expects 64 bands");
    const int w = normalized.width(), h = normalized.height();
    const std::size_t pixels = normalized.pixel_count();
    std::vector<double> lin(pixels, d.intercept);
    for (int b = 0; b < kSynthBands; ++b) {
        auto band = normalized.band<float>(b);
        const double wb = d.w[b];
        for (std::size_t p = 0; p < pixels; ++p) lin[p] += wb * band[p];
    }
    if (d.curve_coeff != 0.0) {
        for (std::size_t p = 0; p < pixels; ++p) {
            const double centered = lin[p] - d.curve_center;
            lin[p] += d.curve_coeff * centered * centered;
        }
    }
    if (d.terms.empty()) return lin;

    std::vector<double> nl(pixels, 0.0);
    for (const auto& t : d.terms) {
        auto a = normalized.band<float>(t.band_a);
        auto b = normalized.band<float>(t.band_b);
        for (std::size_t p = 0; p < pixels; ++p)
            nl[p] += t.coeff * (a[p] - 0.5) * (b[p] - 0.5);
    }
    detail::box_blur(nl, w, h, d.height_smooth_radius, d.height_smooth_passes);
    for (std::size_t p = 0; p < pixels; ++p) lin[p] += nl[p];
    return lin;
}

struct SynthScene {
    Grid embeddings;  // int8, 64 bands, values in [-127, 127]
    Grid heights;     // float32, 1 band
    MappingDescriptor descriptor;
};

inline SynthScene generate(const SynthSpec& spec) {
    spec.validate();
    const int w = spec.width, h = spec.height;
    const std::size_t pixels = static_cast<std::size_t>(w) * h;
    const GeoTransform geo{0.0, h * 10.0, 10.0, 10.0};
    const std::uint32_t crs = 32631;

    Rng band_rng(mix_seed(spec.seed, 0));
    Rng coeff_rng(mix_seed(spec.seed, 1));
    Rng noise_rng(mix_seed(spec.seed, 2));

    // 64 smoothed noise fields, quantized to int8 with -128 reserved
    std::vector<std::int8_t> q(pixels * kSynthBands);
    std::vector<float> xn(pixels * kSynthBands);  // normalized view of q
    std::vector<double> field(pixels);
    for (int b = 0; b < kSynthBands; ++b) {
        for (auto& v : field) v = band_rng.normal();
        detail::box_blur(field, w, h, spec.smooth_radius, 3);
        double maxabs = 0.0;
        for (double v : field) maxabs = std::max(maxabs, std::fabs(v));
        const double scale = maxabs > 0.0 ? 127.0 / maxabs : 0.0;
        const std::size_t base = static_cast<std::size_t>(b) * pixels;
        for (std::size_t p = 0; p < pixels; ++p) {
            const int qi = std::clamp(static_cast<int>(std::lround(field[p] * scale)), -127, 127);
            q[base + p] = static_cast<std::int8_t>(qi);
            xn[base + p] = (static_cast<float>(qi) + 128.0f) / 256.0f;
        }
    }
    Grid embeddings(w, h, kSynthBands, geo, crs, std::move(q), -128.0);
    Grid normalized(w, h, kSynthBands, geo, crs, std::move(xn));

    MappingDescriptor d;
    d.w.resize(kSynthBands);
    for (auto& wk : d.w) wk = coeff_rng.normal(0.0, 60.0) * spec.height_scale;
    double wsum = 0.0;
    for (double wk : d.w) wsum += wk;
    d.intercept = spec.height_offset - 0.5 * wsum;
    d.noise_sd = spec.noise_sd;

    if (spec.mapping == SynthSpec::Mapping::nonlinear) {
        // fixed designated bands: squares on 0,3,6,...,21 and products on
        // (1,2), (4,5), ..., (22,23), kept at a small variance share
        for (int k = 0; k < 8; ++k) {
            const double cs = coeff_rng.uniform(150.0, 250.0) * (coeff_rng.uniform() < 0.5 ? -1.0 : 1.0);
            d.terms.push_back({3 * k, 3 * k, cs * spec.height_scale});
        }
        for (int k = 0; k < 8; ++k) {
            const double cp = coeff_rng.uniform(150.0, 250.0) * (coeff_rng.uniform() < 0.5 ? -1.0 : 1.0);
            d.terms.push_back({3 * k + 1, 3 * k + 2, cp * spec.height_scale});
        }
        d.height_smooth_radius = 1;
        d.height_smooth_passes = 1;

        // The dominant nonlinearity bends the linear index itself:
        // + curve_coeff * (u - mean(u))^2, scaled so the curvature component
        // has a ~50 m * height_scale sd on this scene. A linear fit cannot
        // see it (u is near-symmetric, so u and (u-c)^2 are uncorrelated),
        // which is what separates the architectures from the ridge baseline.
        double mean_u = 0.0, var_u = 0.0;
        std::vector<double> u(pixels, d.intercept);
        for (int b = 0; b < kSynthBands; ++b) {
            const double wb = d.w[b];
            const std::size_t base = static_cast<std::size_t>(b) * pixels;
            const std::span<const float> nv = normalized.values<float>();
            for (std::size_t p = 0; p < pixels; ++p) u[p] += wb * nv[base + p];
        }
        for (double v : u) mean_u += v;
        mean_u /= static_cast<double>(pixels);
        for (double v : u) var_u += (v - mean_u) * (v - mean_u);
        var_u /= static_cast<double>(pixels);
        const double sign = coeff_rng.uniform() < 0.5 ? -1.0 : 1.0;
        const double curve_sd = 50.0 * spec.height_scale;
        d.curve_center = mean_u;
        d.curve_coeff = var_u > 0.0 ? sign * curve_sd / (std::sqrt(2.0) * var_u) : 0.0;
    }

    std::vector<double> hm = eval_mapping(d, normalized);
    if (spec.noise_sd > 0.0)
        for (auto& v : hm) v += noise_rng.normal(0.0, spec.noise_sd);
    if (spec.shift_offset != 0.0) {
        d.shift_offset = spec.shift_offset;
        d.shift_column = static_cast<int>(std::floor(spec.shift_fraction * w));
        for (int y = 0; y < h; ++y)
            for (int x = d.shift_column; x < w; ++x)
                hm[static_cast<std::size_t>(y) * w + x] += spec.shift_offset;
    }

    std::vector<float> heights(pixels);
    for (std::size_t p = 0; p < pixels; ++p) heights[p] = static_cast<float>(hm[p]);
    return SynthScene{std::move(embeddings), Grid(w, h, 1, geo, crs, std::move(heights)), std::move(d)};
}

/// Set a seeded uniform subset of pixels to the -128 sentinel on all bands.
inline Grid inject_nodata(const Grid& embeddings, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction >= 1.0) throw ValueError("inject_nodata: fraction must be in [0, 1)");
    if (embeddings.dtype() != Dtype::int8) throw ValueError("inject_nodata: expects int8 embeddings");
    auto src = embeddings.values<std::int8_t>();
    std::vector<std::int8_t> out(src.begin(), src.end());
    const std::size_t pixels = embeddings.pixel_count();
    Rng rng(mix_seed(seed, 99));
    for (std::size_t p = 0; p < pixels; ++p) {
        if (rng.uniform() < fraction)
            for (int b = 0; b < embeddings.bands(); ++b) out[static_cast<std::size_t>(b) * pixels + p] = -128;
    }
    return Grid(embeddings.width(), embeddings.height(), embeddings.bands(), embeddings.geo(),
                embeddings.crs(), std::move(out), -128.0);
}

}  // namespace embedheight
