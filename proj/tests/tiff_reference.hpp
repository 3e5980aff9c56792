#pragma once

// Self-contained GeoTIFF writer used as the decode oracle in tests. It lays
// out TIFF 6.0 structures directly (header, ascending-tag IFD, external
// value arrays, strip/tile data, GeoTIFF double tags) and shares no code
// with the library's parser. Knobs exist to emit deliberately malformed
// files for the negative cases.

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

namespace tiffref {

struct RefTiff {
    bool big_endian = false;
    bool tiled = false;
    bool deflate = false;
    enum class Sample { i8, u8, f32, f64 } sample = Sample::f32;
    int width = 0, height = 0, bands = 1;
    int rows_per_strip = 2;
    int tile_w = 16, tile_h = 16;
    double scale_x = 10.0, scale_y = 10.0;
    double tie_raster[3] = {0.0, 0.0, 0.0};
    double tie_world[3] = {0.0, 0.0, 0.0};
    std::uint16_t epsg = 32633;
    std::optional<double> nodata;

    // fault-injection knobs for negative tests
    std::optional<std::uint16_t> compression_override;  // e.g. 7 = JPEG
    std::uint16_t planar_config = 1;
    bool emit_geotags = true;
    bool emit_model_transformation = false;
    bool emit_both_layouts = false;
    bool corrupt_first_chunk_offset = false;
    std::optional<std::uint16_t> bits_override;
};

namespace detail {

struct Writer {
    std::string out;
    bool be;

    void u16(std::uint16_t v) {
        if (be) {
            out.push_back(static_cast<char>(v >> 8));
            out.push_back(static_cast<char>(v));
        } else {
            out.push_back(static_cast<char>(v));
            out.push_back(static_cast<char>(v >> 8));
        }
    }
    void u32(std::uint32_t v) {
        if (be) {
            for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>(v >> (8 * i)));
        } else {
            for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
        }
    }
    void f64(double d) {
        const std::uint64_t v = std::bit_cast<std::uint64_t>(d);
        if (be) {
            for (int i = 7; i >= 0; --i) out.push_back(static_cast<char>(v >> (8 * i)));
        } else {
            for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
        }
    }
    void patch_u32(std::size_t at, std::uint32_t v) {
        for (int i = 0; i < 4; ++i)
            out[at + static_cast<std::size_t>(i)] =
                static_cast<char>(v >> (8 * (be ? 3 - i : i)));
    }
};

struct Entry {
    std::uint16_t tag, type;
    std::uint32_t count;
    std::uint32_t value;        // inline value or offset (filled later for arrays)
    std::string external;       // raw bytes to place outside the IFD, if any
};

inline int sample_bytes(RefTiff::Sample s) {
    switch (s) {
        case RefTiff::Sample::i8:
        case RefTiff::Sample::u8: return 1;
        case RefTiff::Sample::f32: return 4;
        default: return 8;
    }
}

}  // namespace detail

/// `values` is band-major [band][row][col]; tile padding is zero-filled.
inline std::string write_ref_tiff(const RefTiff& spec, const std::vector<double>& values) {
    const int bands = spec.bands;
    const std::size_t plane = static_cast<std::size_t>(spec.width) * spec.height;
    const int per = detail::sample_bytes(spec.sample);

    detail::Writer w{.out = {}, .be = spec.big_endian};
    auto put_sample = [&w, &spec](double v) {
        switch (spec.sample) {
            case RefTiff::Sample::i8:
                w.out.push_back(static_cast<char>(static_cast<std::int8_t>(v)));
                break;
            case RefTiff::Sample::u8:
                w.out.push_back(static_cast<char>(static_cast<std::uint8_t>(v)));
                break;
            case RefTiff::Sample::f32: {
                const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
                w.u32(bits);
                break;
            }
            default:
                w.f64(v);
        }
    };

    // assemble per-chunk interleaved sample data
    std::vector<std::string> chunks;
    auto region = [&](int x0, int y0, int cw, int ch, bool pad) {
        detail::Writer cw_out{.out = {}, .be = spec.big_endian};
        std::swap(w.out, cw_out.out);  // reuse put_sample through w
        for (int y = y0; y < y0 + ch; ++y)
            for (int x = x0; x < x0 + cw; ++x)
                for (int b = 0; b < bands; ++b) {
                    const bool in = x < spec.width && y < spec.height;
                    if (!in && !pad) continue;
                    put_sample(in ? values[static_cast<std::size_t>(b) * plane +
                                           static_cast<std::size_t>(y) * spec.width + x]
                                  : 0.0);
                }
        std::swap(w.out, cw_out.out);
        return cw_out.out;
    };
    if (spec.tiled) {
        for (int ty = 0; ty < spec.height; ty += spec.tile_h)
            for (int tx = 0; tx < spec.width; tx += spec.tile_w)
                chunks.push_back(region(tx, ty, spec.tile_w, spec.tile_h, true));
    } else {
        for (int y0 = 0; y0 < spec.height; y0 += spec.rows_per_strip)
            chunks.push_back(region(0, y0, spec.width,
                                    std::min(spec.rows_per_strip, spec.height - y0), false));
    }
    if (spec.deflate) {
        for (std::string& c : chunks) {
            uLongf cap = compressBound(static_cast<uLong>(c.size()));
            std::string z(cap, '\0');
            compress2(reinterpret_cast<Bytef*>(z.data()), &cap,
                      reinterpret_cast<const Bytef*>(c.data()), static_cast<uLong>(c.size()), 9);
            z.resize(cap);
            c = std::move(z);
        }
    }

    // header
    w.out.append(spec.big_endian ? "MM" : "II");
    w.u16(42);
    const std::size_t ifd_ptr_at = w.out.size();
    w.u32(0);  // patched once the IFD lands

    // chunk data
    std::vector<std::uint32_t> offsets, counts;
    for (const std::string& c : chunks) {
        if (w.out.size() % 2) w.out.push_back('\0');
        offsets.push_back(static_cast<std::uint32_t>(w.out.size()));
        counts.push_back(static_cast<std::uint32_t>(c.size()));
        w.out += c;
    }
    if (spec.corrupt_first_chunk_offset) offsets[0] = 0x7fffffff;

    std::vector<detail::Entry> entries;
    auto shorts = [&](std::uint16_t tag, const std::vector<std::uint16_t>& v) {
        detail::Entry e{tag, 3, static_cast<std::uint32_t>(v.size()), 0, {}};
        detail::Writer tmp{.out = {}, .be = spec.big_endian};
        for (std::uint16_t x : v) tmp.u16(x);
        if (tmp.out.size() <= 4) {
            tmp.out.resize(4, '\0');
            std::memcpy(&e.value, tmp.out.data(), 4);  // raw placement, already file-order
        } else {
            e.external = tmp.out;
        }
        entries.push_back(e);
    };
    auto longs = [&](std::uint16_t tag, const std::vector<std::uint32_t>& v) {
        detail::Entry e{tag, 4, static_cast<std::uint32_t>(v.size()), 0, {}};
        detail::Writer tmp{.out = {}, .be = spec.big_endian};
        for (std::uint32_t x : v) tmp.u32(x);
        if (tmp.out.size() <= 4) {
            std::memcpy(&e.value, tmp.out.data(), 4);
        } else {
            e.external = tmp.out;
        }
        entries.push_back(e);
    };
    auto doubles = [&](std::uint16_t tag, const std::vector<double>& v) {
        detail::Entry e{tag, 12, static_cast<std::uint32_t>(v.size()), 0, {}};
        detail::Writer tmp{.out = {}, .be = spec.big_endian};
        for (double x : v) tmp.f64(x);
        e.external = tmp.out;
        entries.push_back(e);
    };
    auto ascii = [&](std::uint16_t tag, const std::string& s) {
        detail::Entry e{tag, 2, static_cast<std::uint32_t>(s.size() + 1), 0, {}};
        std::string z = s;
        z.push_back('\0');
        if (z.size() <= 4) {
            z.resize(4, '\0');
            std::memcpy(&e.value, z.data(), 4);
        } else {
            e.external = z;
        }
        entries.push_back(e);
    };

    const std::uint16_t bits =
        spec.bits_override.value_or(static_cast<std::uint16_t>(8 * per));
    const std::uint16_t fmt = spec.sample == RefTiff::Sample::i8    ? 2
                              : spec.sample == RefTiff::Sample::u8  ? 1
                                                                    : 3;
    longs(256, {static_cast<std::uint32_t>(spec.width)});
    longs(257, {static_cast<std::uint32_t>(spec.height)});
    shorts(258, std::vector<std::uint16_t>(static_cast<std::size_t>(bands), bits));
    shorts(259, {spec.compression_override.value_or(spec.deflate ? std::uint16_t{8}
                                                                 : std::uint16_t{1})});
    shorts(262, {1});
    if (!spec.tiled || spec.emit_both_layouts) {
        longs(273, offsets);
        longs(278, {static_cast<std::uint32_t>(spec.rows_per_strip)});
        longs(279, counts);
    }
    shorts(277, {static_cast<std::uint16_t>(bands)});
    shorts(284, {spec.planar_config});
    if (spec.tiled) {
        longs(322, {static_cast<std::uint32_t>(spec.tile_w)});
        longs(323, {static_cast<std::uint32_t>(spec.tile_h)});
        longs(324, offsets);
        longs(325, counts);
    }
    shorts(339, std::vector<std::uint16_t>(static_cast<std::size_t>(bands), fmt));
    if (spec.emit_geotags) {
        doubles(33550, {spec.scale_x, spec.scale_y, 0.0});
        doubles(33922, {spec.tie_raster[0], spec.tie_raster[1], spec.tie_raster[2],
                        spec.tie_world[0], spec.tie_world[1], spec.tie_world[2]});
        shorts(34735, {1, 1, 0, 2, 1024, 0, 1, 1, 3072, 0, 1, spec.epsg});
    }
    if (spec.emit_model_transformation)
        doubles(34264, std::vector<double>(16, 0.0));
    if (spec.nodata) ascii(42113, std::to_string(*spec.nodata));

    // TIFF 6.0 requires ascending tag order within an IFD
    std::stable_sort(entries.begin(), entries.end(),
                     [](const detail::Entry& a, const detail::Entry& b) { return a.tag < b.tag; });

    // external arrays, then the IFD itself
    for (detail::Entry& e : entries) {
        if (e.external.empty()) continue;
        if (w.out.size() % 2) w.out.push_back('\0');
        e.value = static_cast<std::uint32_t>(w.out.size());
        // offsets are numbers and honor the byte order (unlike inline values,
        // which were already laid out in file order)
        w.out += e.external;
    }
    if (w.out.size() % 2) w.out.push_back('\0');
    const std::uint32_t ifd_at = static_cast<std::uint32_t>(w.out.size());
    w.u16(static_cast<std::uint16_t>(entries.size()));
    for (const detail::Entry& e : entries) {
        w.u16(e.tag);
        w.u16(e.type);
        w.u32(e.count);
        if (e.external.empty()) {
            // already file-order bytes
            w.out.append(reinterpret_cast<const char*>(&e.value), 4);
        } else {
            w.u32(e.value);
        }
    }
    w.u32(0);  // no further IFDs
    w.patch_u32(ifd_ptr_at, ifd_at);
    return w.out;
}

}  // namespace tiffref
