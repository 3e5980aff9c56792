#pragma once

// GeoTIFF subset decoder: baseline TIFF (both byte orders), strip or tile
// layout, uncompressed or deflate, sample types int8/uint8/float32/float64,
// chunky pixel interleave, first IFD only. Georeferencing comes from
// ModelPixelScale + ModelTiepoint; the full ModelTransformation matrix is
// rejected. Deliberately small: enough for the embedding and DSM products
// while staying auditable.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "embedheight/errors.hpp"
#include "embedheight/grid.hpp"

namespace embedheight {

enum class TiffOrder : std::uint8_t { II, MM };
enum class TiffLayout : std::uint8_t { strips, tiles };

struct TiffInfo {
    TiffOrder order = TiffOrder::II;
    TiffLayout layout = TiffLayout::strips;
    int width = 0, height = 0;
    int samples_per_pixel = 1;
    int bits_per_sample = 0;
    int sample_format = 1;  // 1 unsigned int, 2 signed int, 3 IEEE float
    int compression = 1;    // 1 none, 8/32946 deflate
    int rows_per_strip = 0;
    int tile_width = 0, tile_height = 0;
    std::vector<std::uint64_t> chunk_offsets, chunk_counts;
    std::array<double, 3> pixel_scale{};
    std::array<double, 6> tiepoint{};
    std::uint32_t epsg = 0;  // 0 when no geokey names one
    std::optional<double> nodata;
};

namespace detail {

class TiffReader {
  public:
    TiffReader(std::string_view bytes, TiffOrder order) : bytes_(bytes), order_(order) {}

    std::uint16_t u16(std::uint64_t pos) const {
        check(pos, 2);
        const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos);
        return order_ == TiffOrder::II ? static_cast<std::uint16_t>(p[0] | p[1] << 8)
                                       : static_cast<std::uint16_t>(p[1] | p[0] << 8);
    }
    std::uint32_t u32(std::uint64_t pos) const {
        check(pos, 4);
        const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos);
        return order_ == TiffOrder::II
                   ? p[0] | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
                         std::uint32_t(p[3]) << 24
                   : p[3] | std::uint32_t(p[2]) << 8 | std::uint32_t(p[1]) << 16 |
                         std::uint32_t(p[0]) << 24;
    }
    double f64(std::uint64_t pos) const {
        check(pos, 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            const auto b = static_cast<unsigned char>(bytes_[pos + i]);
            v |= std::uint64_t(b) << (order_ == TiffOrder::II ? 8 * i : 8 * (7 - i));
        }
        return std::bit_cast<double>(v);
    }
    void check(std::uint64_t pos, std::uint64_t n) const {
        if (pos + n > bytes_.size() || pos + n < pos)
            throw FormatError("tiff: offset past end of file");
    }
    std::uint64_t size() const { return bytes_.size(); }

  private:
    std::string_view bytes_;
    TiffOrder order_;
};

struct TiffEntry {
    std::uint16_t tag = 0, type = 0;
    std::uint32_t count = 0;
    std::uint64_t value_pos = 0;  // position of the inline value / offset field
};

inline std::uint32_t tiff_type_size(std::uint16_t type) {
    switch (type) {
        case 1: case 2: case 6: case 7: return 1;  // BYTE/ASCII/SBYTE/UNDEFINED
        case 3: case 8: return 2;                  // SHORT/SSHORT
        case 4: case 9: case 11: return 4;         // LONG/SLONG/FLOAT
        case 5: case 10: case 12: return 8;        // RATIONAL/SRATIONAL/DOUBLE
        default: throw FormatError("tiff: unknown field type " + std::to_string(type));
    }
}

/// Start of an entry's value array: inline when it fits in 4 bytes,
/// otherwise at the stored offset.
inline std::uint64_t tiff_value_start(const TiffReader& r, const TiffEntry& e) {
    const std::uint64_t total = std::uint64_t(tiff_type_size(e.type)) * e.count;
    return total <= 4 ? e.value_pos : r.u32(e.value_pos);
}

inline std::vector<std::uint64_t> tiff_ints(const TiffReader& r, const TiffEntry& e) {
    if (e.type != 3 && e.type != 4)
        throw FormatError("tiff: tag " + std::to_string(e.tag) + " must be SHORT or LONG");
    std::vector<std::uint64_t> out(e.count);
    const std::uint64_t start = tiff_value_start(r, e);
    for (std::uint32_t i = 0; i < e.count; ++i)
        out[i] = e.type == 3 ? r.u16(start + 2ull * i) : r.u32(start + 4ull * i);
    return out;
}

inline std::vector<double> tiff_doubles(const TiffReader& r, const TiffEntry& e) {
    if (e.type != 12) throw FormatError("tiff: tag " + std::to_string(e.tag) + " must be DOUBLE");
    std::vector<double> out(e.count);
    const std::uint64_t start = tiff_value_start(r, e);
    for (std::uint32_t i = 0; i < e.count; ++i) out[i] = r.f64(start + 8ull * i);
    return out;
}

inline std::string inflate_chunk(std::string_view src, std::size_t expected) {
    std::string out(expected, '\0');
    uLongf dest_len = expected;
    const int rc = ::uncompress(reinterpret_cast<Bytef*>(out.data()), &dest_len,
                                reinterpret_cast<const Bytef*>(src.data()),
                                static_cast<uLong>(src.size()));
    if (rc != Z_OK || dest_len != expected)
        throw FormatError("tiff: deflate chunk failed to decompress to the expected size");
    return out;
}

}  // namespace detail

inline TiffInfo parse_tiff_info(std::string_view bytes) {
    if (bytes.size() < 8) throw FormatError("tiff: file shorter than its header");
    TiffOrder order;
    if (bytes.substr(0, 2) == "II")
        order = TiffOrder::II;
    else if (bytes.substr(0, 2) == "MM")
        order = TiffOrder::MM;
    else
        throw FormatError("tiff: bad byte-order mark");
    const detail::TiffReader r(bytes, order);
    if (r.u16(2) != 42) throw FormatError("tiff: bad magic number");
    const std::uint64_t ifd = r.u32(4);
    if (ifd < 8) throw FormatError("tiff: IFD offset inside header");
    const std::uint16_t n_entries = r.u16(ifd);
    if (n_entries == 0) throw FormatError("tiff: empty IFD");

    std::vector<detail::TiffEntry> entries;
    for (std::uint16_t i = 0; i < n_entries; ++i) {
        const std::uint64_t at = ifd + 2 + 12ull * i;
        detail::TiffEntry e;
        e.tag = r.u16(at);
        e.type = r.u16(at + 2);
        e.count = r.u32(at + 4);
        e.value_pos = at + 8;
        r.check(at, 12);
        entries.push_back(e);
    }
    auto find = [&](std::uint16_t tag) -> const detail::TiffEntry* {
        for (const auto& e : entries)
            if (e.tag == tag) return &e;
        return nullptr;
    };
    auto one_int = [&](std::uint16_t tag, std::uint64_t fallback,
                       bool required) -> std::uint64_t {
        const detail::TiffEntry* e = find(tag);
        if (!e) {
            if (required) throw FormatError("tiff: missing tag " + std::to_string(tag));
            return fallback;
        }
        return detail::tiff_ints(r, *e).at(0);
    };

    TiffInfo info;
    info.order = order;
    info.width = static_cast<int>(one_int(256, 0, true));
    info.height = static_cast<int>(one_int(257, 0, true));
    if (info.width < 1 || info.height < 1) throw FormatError("tiff: empty image");
    info.samples_per_pixel = static_cast<int>(one_int(277, 1, false));
    info.compression = static_cast<int>(one_int(259, 1, false));
    if (info.compression != 1 && info.compression != 8 && info.compression != 32946)
        throw FormatError("tiff: unsupported compression " + std::to_string(info.compression) +
                          " (only none and deflate)");
    if (one_int(284, 1, false) != 1)
        throw FormatError("tiff: only chunky planar configuration is supported");

    auto uniform = [&](std::uint16_t tag, std::uint64_t fallback) {
        const detail::TiffEntry* e = find(tag);
        if (!e) return fallback;
        const auto v = detail::tiff_ints(r, *e);
        for (std::uint64_t x : v)
            if (x != v[0])
                throw FormatError("tiff: per-sample values of tag " + std::to_string(tag) +
                                  " must match");
        return v[0];
    };
    info.bits_per_sample = static_cast<int>(uniform(258, 1));
    info.sample_format = static_cast<int>(uniform(339, 1));

    const detail::TiffEntry* strip_off = find(273);
    const detail::TiffEntry* tile_off = find(324);
    if ((strip_off != nullptr) == (tile_off != nullptr))
        throw FormatError("tiff: image must use exactly one of strips or tiles");
    if (strip_off) {
        info.layout = TiffLayout::strips;
        info.rows_per_strip =
            static_cast<int>(one_int(278, static_cast<std::uint64_t>(info.height), false));
        info.chunk_offsets = detail::tiff_ints(r, *strip_off);
        const detail::TiffEntry* cnt = find(279);
        if (!cnt) throw FormatError("tiff: missing strip byte counts");
        info.chunk_counts = detail::tiff_ints(r, *cnt);
    } else {
        info.layout = TiffLayout::tiles;
        info.tile_width = static_cast<int>(one_int(322, 0, true));
        info.tile_height = static_cast<int>(one_int(323, 0, true));
        if (info.tile_width < 1 || info.tile_height < 1)
            throw FormatError("tiff: bad tile size");
        info.chunk_offsets = detail::tiff_ints(r, *tile_off);
        const detail::TiffEntry* cnt = find(325);
        if (!cnt) throw FormatError("tiff: missing tile byte counts");
        info.chunk_counts = detail::tiff_ints(r, *cnt);
    }
    if (info.chunk_offsets.size() != info.chunk_counts.size())
        throw FormatError("tiff: offset and byte-count lists disagree");
    for (std::size_t i = 0; i < info.chunk_offsets.size(); ++i)
        r.check(info.chunk_offsets[i], info.chunk_counts[i]);

    if (find(34264))
        throw FormatError("tiff: ModelTransformation is not supported; expected "
                          "ModelPixelScale + ModelTiepoint");
    const detail::TiffEntry* scale = find(33550);
    const detail::TiffEntry* tie = find(33922);
    if (!scale || !tie)
        throw FormatError("tiff: missing geotags (ModelPixelScale + ModelTiepoint)");
    const std::vector<double> sv = detail::tiff_doubles(r, *scale);
    const std::vector<double> tv = detail::tiff_doubles(r, *tie);
    if (sv.size() < 2 || tv.size() < 6) throw FormatError("tiff: malformed geotags");
    for (std::size_t i = 0; i < 3 && i < sv.size(); ++i) info.pixel_scale[i] = sv[i];
    for (std::size_t i = 0; i < 6; ++i) info.tiepoint[i] = tv[i];

    if (const detail::TiffEntry* geo = find(34735)) {
        const auto keys = detail::tiff_ints(r, *geo);
        // 4-short header then 4-short key entries: id, location, count, value
        for (std::size_t i = 4; i + 3 < keys.size(); i += 4) {
            const std::uint64_t id = keys[i];
            if ((id == 3072 || id == 2048) && keys[i + 1] == 0 && info.epsg == 0)
                info.epsg = static_cast<std::uint32_t>(keys[i + 3]);
        }
    }
    if (const detail::TiffEntry* nd = find(42113)) {
        const std::uint64_t start = detail::tiff_value_start(r, *nd);
        r.check(start, nd->count);
        std::string text(bytes.substr(start, nd->count));
        if (const std::size_t nul = text.find('\0'); nul != std::string::npos)
            text.resize(nul);
        char* end = nullptr;
        const double v = std::strtod(text.c_str(), &end);
        if (end != text.c_str()) info.nodata = v;
    }
    return info;
}

/// Decode the first image of a GeoTIFF into a band-sequential Grid. uint8
/// samples have no Grid storage class and are widened to float32; when
/// `warnings` is given, a note is appended for that case.
inline Grid decode_geotiff(std::string_view bytes, std::vector<std::string>* warnings = nullptr) {
    const TiffInfo info = parse_tiff_info(bytes);
    enum class Kind { i8, u8, f32, f64 } kind;
    if (info.bits_per_sample == 8 && info.sample_format == 2)
        kind = Kind::i8;
    else if (info.bits_per_sample == 8 && info.sample_format == 1)
        kind = Kind::u8;
    else if (info.bits_per_sample == 32 && info.sample_format == 3)
        kind = Kind::f32;
    else if (info.bits_per_sample == 64 && info.sample_format == 3)
        kind = Kind::f64;
    else
        throw FormatError("tiff: unsupported sample format (" +
                          std::to_string(info.bits_per_sample) + "-bit, format " +
                          std::to_string(info.sample_format) + ")");
    const int bytes_per = info.bits_per_sample / 8;
    const std::size_t w = static_cast<std::size_t>(info.width);
    const std::size_t h = static_cast<std::size_t>(info.height);
    const std::size_t spp = static_cast<std::size_t>(info.samples_per_pixel);

    // Gather the chunky-interleaved sample stream, decompressing per chunk.
    std::vector<std::string> raw(info.chunk_offsets.size());
    std::size_t expected_chunks;
    if (info.layout == TiffLayout::strips) {
        expected_chunks = (h + info.rows_per_strip - 1) / info.rows_per_strip;
    } else {
        expected_chunks = ((w + info.tile_width - 1) / info.tile_width) *
                          ((h + info.tile_height - 1) / info.tile_height);
    }
    if (raw.size() != expected_chunks)
        throw FormatError("tiff: expected " + std::to_string(expected_chunks) +
                          " chunks, found " + std::to_string(raw.size()));
    for (std::size_t c = 0; c < raw.size(); ++c) {
        std::size_t decoded;
        if (info.layout == TiffLayout::strips) {
            const std::size_t rows =
                std::min<std::size_t>(info.rows_per_strip, h - c * info.rows_per_strip);
            decoded = rows * w * spp * bytes_per;
        } else {
            decoded = static_cast<std::size_t>(info.tile_width) * info.tile_height * spp *
                      bytes_per;
        }
        const std::string_view src = bytes.substr(info.chunk_offsets[c], info.chunk_counts[c]);
        if (info.compression == 1) {
            if (src.size() != decoded)
                throw FormatError("tiff: uncompressed chunk has the wrong size");
            raw[c] = std::string(src);
        } else {
            raw[c] = detail::inflate_chunk(src, decoded);
        }
    }

    // Scatter interleaved samples into band planes, swapping bytes as needed.
    const bool swap = (info.order == TiffOrder::MM) != (std::endian::native == std::endian::big);
    std::vector<unsigned char> interleaved(w * h * spp * bytes_per);
    auto place_row = [&](const std::string& chunk, std::size_t chunk_row_bytes, std::size_t row,
                         std::size_t chunk_row, std::size_t x0, std::size_t n_cols) {
        const char* src = chunk.data() + chunk_row * chunk_row_bytes;
        unsigned char* dst =
            interleaved.data() + ((row * w + x0) * spp) * static_cast<std::size_t>(bytes_per);
        std::memcpy(dst, src, n_cols * spp * bytes_per);
    };
    if (info.layout == TiffLayout::strips) {
        for (std::size_t c = 0; c < raw.size(); ++c) {
            const std::size_t top = c * info.rows_per_strip;
            const std::size_t rows = std::min<std::size_t>(info.rows_per_strip, h - top);
            for (std::size_t rr = 0; rr < rows; ++rr)
                place_row(raw[c], w * spp * bytes_per, top + rr, rr, 0, w);
        }
    } else {
        const std::size_t across = (w + info.tile_width - 1) / info.tile_width;
        const std::size_t tile_row_bytes =
            static_cast<std::size_t>(info.tile_width) * spp * bytes_per;
        for (std::size_t c = 0; c < raw.size(); ++c) {
            const std::size_t tx = (c % across) * info.tile_width;
            const std::size_t ty = (c / across) * info.tile_height;
            const std::size_t cols = std::min<std::size_t>(info.tile_width, w - tx);
            const std::size_t rows = std::min<std::size_t>(info.tile_height, h - ty);
            for (std::size_t rr = 0; rr < rows; ++rr)
                place_row(raw[c], tile_row_bytes, ty + rr, rr, tx, cols);
        }
    }
    if (swap && bytes_per > 1) {
        for (std::size_t i = 0; i < interleaved.size(); i += bytes_per)
            std::reverse(interleaved.begin() + static_cast<std::ptrdiff_t>(i),
                         interleaved.begin() + static_cast<std::ptrdiff_t>(i + bytes_per));
    }

    GeoTransform geo;
    geo.px = info.pixel_scale[0];
    geo.py = info.pixel_scale[1];
    geo.origin_x = info.tiepoint[3] - info.tiepoint[0] * geo.px;
    geo.origin_y = info.tiepoint[4] + info.tiepoint[1] * geo.py;

    const std::size_t plane = w * h;
    auto sample_at = [&](std::size_t pix, std::size_t band) {
        return interleaved.data() + (pix * spp + band) * static_cast<std::size_t>(bytes_per);
    };
    switch (kind) {
        case Kind::i8: {
            std::vector<std::int8_t> v(plane * spp);
            for (std::size_t b = 0; b < spp; ++b)
                for (std::size_t p = 0; p < plane; ++p)
                    v[b * plane + p] = static_cast<std::int8_t>(*sample_at(p, b));
            return Grid(info.width, info.height, static_cast<int>(spp), geo, info.epsg,
                        std::move(v), info.nodata);
        }
        case Kind::u8: {
            if (warnings)
                warnings->push_back("uint8 samples widened to float32 (no uint8 grid storage)");
            std::vector<float> v(plane * spp);
            for (std::size_t b = 0; b < spp; ++b)
                for (std::size_t p = 0; p < plane; ++p)
                    v[b * plane + p] = static_cast<float>(*sample_at(p, b));
            return Grid(info.width, info.height, static_cast<int>(spp), geo, info.epsg,
                        std::move(v), info.nodata);
        }
        case Kind::f32: {
            std::vector<float> v(plane * spp);
            for (std::size_t b = 0; b < spp; ++b)
                for (std::size_t p = 0; p < plane; ++p) {
                    std::uint32_t bits;
                    std::memcpy(&bits, sample_at(p, b), 4);
                    v[b * plane + p] = std::bit_cast<float>(bits);
                }
            return Grid(info.width, info.height, static_cast<int>(spp), geo, info.epsg,
                        std::move(v), info.nodata);
        }
        case Kind::f64:
        default: {
            std::vector<double> v(plane * spp);
            for (std::size_t b = 0; b < spp; ++b)
                for (std::size_t p = 0; p < plane; ++p) {
                    std::uint64_t bits;
                    std::memcpy(&bits, sample_at(p, b), 8);
                    v[b * plane + p] = std::bit_cast<double>(bits);
                }
            return Grid(info.width, info.height, static_cast<int>(spp), geo, info.epsg,
                        std::move(v), info.nodata);
        }
    }
}

}  // namespace embedheight
