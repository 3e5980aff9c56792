#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "embedheight/grid.hpp"

namespace embedheight {

struct PreprocessReport {
    std::size_t invalid_pixels = 0;
    std::size_t total_pixels = 0;

    double invalid_fraction() const {
        return total_pixels ? static_cast<double>(invalid_pixels) / static_cast<double>(total_pixels) : 0.0;
    }

    std::string to_text() const {
        char frac[64];
        std::snprintf(frac, sizeof frac, "%.4f", 100.0 * invalid_fraction());
        std::string out;
        out += "invalid_pixels=" + std::to_string(invalid_pixels) + "\n";
        out += "total_pixels=" + std::to_string(total_pixels) + "\n";
        out += "invalid_fraction_percent=" + std::string(frac) + "\n";
        return out;
    }
};

/// Paired 64-band input raster and 1-band height target on an identical
/// pixel grid, with a target validity mask.
struct PairedGrid {
    Grid inputs;
    Grid target;
    std::vector<std::uint8_t> mask;  // 1 = target valid, row-major

    std::size_t valid_count() const {
        std::size_t n = 0;
        for (auto m : mask) n += m;
        return n;
    }
};

/// Replace every -128 sentinel with 0. A pixel counts as invalid when any
/// of its bands carries the sentinel.
inline std::pair<Grid, PreprocessReport> remap_nodata(const Grid& g) {
    if (g.dtype() != Dtype::int8) throw ValueError("remap_nodata: expects an int8 grid");
    auto src = g.values<std::int8_t>();
    std::vector<std::int8_t> out(src.begin(), src.end());
    const std::size_t pixels = g.pixel_count();
    std::vector<std::uint8_t> hit(pixels, 0);
    for (int b = 0; b < g.bands(); ++b) {
        const std::size_t base = static_cast<std::size_t>(b) * pixels;
        for (std::size_t p = 0; p < pixels; ++p) {
            if (out[base + p] == -128) {
                out[base + p] = 0;
                hit[p] = 1;
            }
        }
    }
    PreprocessReport report;
    report.total_pixels = pixels;
    for (auto h : hit) report.invalid_pixels += h;
    Grid remapped(g.width(), g.height(), g.bands(), g.geo(), g.crs(), std::move(out), std::nullopt);
    return {std::move(remapped), report};
}

/// (v + 128) / 256, exactly representable in float32 for every int8 value.
inline Grid normalize(const Grid& g) {
    if (g.dtype() != Dtype::int8) throw ValueError("normalize: expects an int8 grid");
    auto src = g.values<std::int8_t>();
    std::vector<float> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i)
        out[i] = (static_cast<float>(src[i]) + 128.0f) / 256.0f;
    return Grid(g.width(), g.height(), g.bands(), g.geo(), g.crs(), std::move(out), std::nullopt);
}

/// Nearest pixel-center resampling onto an explicit target grid. Per-axis
/// nearest with exact .5 ties broken toward the smaller index.
inline Grid resample_nearest(const Grid& g, const GeoTransform& target_geo, int target_w, int target_h,
                             std::uint32_t target_crs) {
    if (target_crs != g.crs()) throw ValueError("resample_nearest: CRS mismatch");
    target_geo.validate();
    if (target_w < 1 || target_h < 1) throw ValueError("resample_nearest: degenerate target");

    // reject empty overlap between the two extents
    const double sx0 = g.geo().origin_x, sx1 = g.geo().origin_x + g.width() * g.geo().px;
    const double sy1 = g.geo().origin_y, sy0 = g.geo().origin_y - g.height() * g.geo().py;
    const double tx0 = target_geo.origin_x, tx1 = target_geo.origin_x + target_w * target_geo.px;
    const double ty1 = target_geo.origin_y, ty0 = target_geo.origin_y - target_h * target_geo.py;
    if (tx1 <= sx0 || tx0 >= sx1 || ty1 <= sy0 || ty0 >= sy1)
        throw ValueError("resample_nearest: source and target extents do not overlap");

    // round-half-down picks the smaller index on exact ties
    const auto nearest = [](double frac_index, int n) {
        long i = static_cast<long>(std::ceil(frac_index - 0.5));
        if (i < 0) i = 0;
        if (i >= n) i = n - 1;
        return static_cast<int>(i);
    };

    std::vector<int> src_x(target_w), src_y(target_h);
    for (int i = 0; i < target_w; ++i) {
        const double cx = target_geo.center_x(i);
        src_x[i] = nearest((cx - g.geo().origin_x) / g.geo().px - 0.5, g.width());
    }
    for (int j = 0; j < target_h; ++j) {
        const double cy = target_geo.center_y(j);
        src_y[j] = nearest((g.geo().origin_y - cy) / g.geo().py - 0.5, g.height());
    }

    const std::size_t spix = g.pixel_count();
    const std::size_t tpix = static_cast<std::size_t>(target_w) * target_h;
    Grid::Storage gathered = std::visit(
        [&](const auto& v) -> Grid::Storage {
            using Vec = std::decay_t<decltype(v)>;
            Vec out(tpix * g.bands());
            std::size_t o = 0;
            for (int b = 0; b < g.bands(); ++b) {
                const std::size_t base = static_cast<std::size_t>(b) * spix;
                for (int j = 0; j < target_h; ++j) {
                    const std::size_t row = base + static_cast<std::size_t>(src_y[j]) * g.width();
                    for (int i = 0; i < target_w; ++i) out[o++] = v[row + src_x[i]];
                }
            }
            return out;
        },
        g.storage());
    return Grid(target_w, target_h, g.bands(), target_geo, g.crs(), std::move(gathered), g.nodata());
}

/// Stack normalized embeddings with the resampled height target.
inline PairedGrid stack_pairs(Grid embeddings, Grid dsm) {
    if (embeddings.width() != dsm.width() || embeddings.height() != dsm.height())
        throw ValueError("stack_pairs: pixel grid shapes differ");
    if (!embeddings.geo().almost_equal(dsm.geo(), 1e-6))
        throw ValueError("stack_pairs: georeference mismatch beyond 1e-6 m");
    if (embeddings.crs() != dsm.crs()) throw ValueError("stack_pairs: CRS mismatch");
    if (dsm.bands() != 1) throw ValueError("stack_pairs: target must be single-band");

    std::vector<std::uint8_t> mask(dsm.pixel_count(), 1);
    if (dsm.nodata()) {
        for (std::size_t p = 0; p < dsm.pixel_count(); ++p) {
            const double v = dsm.at(0, static_cast<int>(p / dsm.width()), static_cast<int>(p % dsm.width()));
            mask[p] = dsm.is_nodata(v) ? 0 : 1;
        }
    }
    return PairedGrid{std::move(embeddings), std::move(dsm), std::move(mask)};
}

/// Vertical cut into contiguous train / test column ranges.
inline std::pair<PairedGrid, PairedGrid> split_aoi(const PairedGrid& pair, int boundary_column) {
    const int w = pair.inputs.width();
    const int h = pair.inputs.height();
    if (boundary_column <= 0 || boundary_column >= w)
        throw ValueError("split_aoi: boundary column must lie strictly inside the grid");

    const auto take = [&](int x0, int cols) {
        PairedGrid part{pair.inputs.window(x0, 0, cols, h), pair.target.window(x0, 0, cols, h), {}};
        part.mask.resize(static_cast<std::size_t>(cols) * h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < cols; ++x)
                part.mask[static_cast<std::size_t>(y) * cols + x] =
                    pair.mask[static_cast<std::size_t>(y) * w + x0 + x];
        return part;
    };
    return {take(0, boundary_column), take(boundary_column, w - boundary_column)};
}

inline int default_boundary_column(int width) { return static_cast<int>(std::floor(0.7 * width)); }

}  // namespace embedheight
