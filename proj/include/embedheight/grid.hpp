#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "embedheight/errors.hpp"

namespace embedheight {

enum class Dtype : std::uint8_t { int8 = 0, float32 = 1, float64 = 2 };

inline std::size_t dtype_size(Dtype dt) {
    switch (dt) {
        case Dtype::int8: return 1;
        case Dtype::float32: return 4;
        case Dtype::float64: return 8;
    }
    throw ValueError("unsupported dtype");
}

inline const char* dtype_name(Dtype dt) {
    switch (dt) {
        case Dtype::int8: return "int8";
        case Dtype::float32: return "float32";
        case Dtype::float64: return "float64";
    }
    return "?";
}

/// Affine pixel-to-map transform for axis-aligned rasters. Rows descend in
/// northing, so py is stored positive and subtracted going down.
struct GeoTransform {
    double origin_x = 0.0;  // easting of the top-left pixel corner (m)
    double origin_y = 0.0;  // northing of the top-left pixel corner (m)
    double px = 1.0;        // pixel width (m), > 0
    double py = 1.0;        // pixel height (m), > 0

    double center_x(int i) const { return origin_x + (i + 0.5) * px; }
    double center_y(int j) const { return origin_y - (j + 0.5) * py; }

    void validate() const {
        if (!(px > 0.0) || !(py > 0.0)) throw ValueError("GeoTransform: pixel sizes must be positive");
        if (!std::isfinite(origin_x) || !std::isfinite(origin_y) || !std::isfinite(px) || !std::isfinite(py))
            throw ValueError("GeoTransform: values must be finite");
    }

    bool almost_equal(const GeoTransform& o, double tol_m = 1e-6) const {
        return std::fabs(origin_x - o.origin_x) <= tol_m && std::fabs(origin_y - o.origin_y) <= tol_m &&
               std::fabs(px - o.px) <= tol_m && std::fabs(py - o.py) <= tol_m;
    }
};

/// Georeferenced multi-band raster with band-sequential row-major storage.
/// Immutable after construction; cheap to share across readers.
class Grid {
  public:
    using Storage = std::variant<std::vector<std::int8_t>, std::vector<float>, std::vector<double>>;

    Grid(int width, int height, int bands, GeoTransform geo, std::uint32_t crs, Storage values,
         std::optional<double> nodata = std::nullopt)
        : width_(width), height_(height), bands_(bands), geo_(geo), crs_(crs), nodata_(nodata),
          values_(std::move(values)) {
        if (width_ < 1 || height_ < 1 || bands_ < 1)
            throw ValueError("Grid: width, height and bands must all be >= 1");
        geo_.validate();
        if (value_count() != std::visit([](const auto& v) { return v.size(); }, values_))
            throw ValueError("Grid: value count does not match width*height*bands");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int bands() const { return bands_; }
    const GeoTransform& geo() const { return geo_; }
    std::uint32_t crs() const { return crs_; }
    std::optional<double> nodata() const { return nodata_; }

    Dtype dtype() const { return static_cast<Dtype>(values_.index()); }

    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
    std::size_t value_count() const { return pixel_count() * bands_; }

    template <typename T>
    std::span<const T> values() const& {
        const auto* v = std::get_if<std::vector<T>>(&values_);
        if (!v) throw ValueError(std::string("Grid: stored dtype is ") + dtype_name(dtype()));
        return std::span<const T>(v->data(), v->size());
    }

    template <typename T>
    std::span<const T> values() const&& = delete;  // span would dangle

    template <typename T>
    std::span<const T> band(int b) const& {
        auto all = values<T>();
        return all.subspan(static_cast<std::size_t>(b) * pixel_count(), pixel_count());
    }

    template <typename T>
    std::span<const T> band(int b) const&& = delete;

    /// Generic read as double, any dtype.
    double at(int b, int y, int x) const {
        const std::size_t idx = (static_cast<std::size_t>(b) * height_ + y) * width_ + x;
        return std::visit([idx](const auto& v) { return static_cast<double>(v[idx]); }, values_);
    }

    bool is_nodata(double v) const { return nodata_ && v == *nodata_; }

    /// Crop of all bands; geotransform origin shifts with the window.
    Grid window(int x0, int y0, int w, int h) const {
        if (x0 < 0 || y0 < 0 || w < 1 || h < 1 || x0 + w > width_ || y0 + h > height_)
            throw ValueError("Grid::window: window out of bounds");
        GeoTransform g = geo_;
        g.origin_x += x0 * geo_.px;
        g.origin_y -= y0 * geo_.py;
        Storage out = std::visit(
            [&](const auto& v) -> Storage {
                using Vec = std::decay_t<decltype(v)>;
                Vec cropped(static_cast<std::size_t>(w) * h * bands_);
                std::size_t o = 0;
                for (int b = 0; b < bands_; ++b)
                    for (int y = y0; y < y0 + h; ++y) {
                        const std::size_t row = (static_cast<std::size_t>(b) * height_ + y) * width_ + x0;
                        for (int x = 0; x < w; ++x) cropped[o++] = v[row + x];
                    }
                return cropped;
            },
            values_);
        return Grid(w, h, bands_, g, crs_, std::move(out), nodata_);
    }

    bool same_values(const Grid& o) const { return values_ == o.values_; }

    const Storage& storage() const { return values_; }

  private:
    int width_, height_, bands_;
    GeoTransform geo_;
    std::uint32_t crs_;
    std::optional<double> nodata_;
    Storage values_;
};

// ---------------------------------------------------------------------------
// EGRID v1: the artifact's internal binary grid format. Little-endian, fixed
// 64-byte header, band-sequential row-major payload.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
}

inline void put_u16(std::string& out, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
    put_bytes(out, b, 2);
}

inline void put_u32(std::string& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(out, b, 4);
}

inline void put_u64(std::string& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(out, b, 8);
}

inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

inline void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct ByteReader {
    const unsigned char* p;
    std::size_t size;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > size) throw FormatError(std::string("truncated data reading ") + what);
    }
    std::uint8_t u8(const char* what = "u8") {
        need(1, what);
        return p[pos++];
    }
    std::uint16_t u16(const char* what = "u16") {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(p[pos]) | (static_cast<std::uint16_t>(p[pos + 1]) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what = "u32") {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what = "u64") {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64(const char* what = "f64") {
        std::uint64_t bits = u64(what);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    float f32(const char* what = "f32") {
        std::uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace detail

inline constexpr std::size_t kEgridHeaderSize = 64;

/// Serialize a grid to the EGRID v1 byte layout.
inline std::string encode_egrid(const Grid& g) {
    std::string out;
    out.reserve(kEgridHeaderSize + g.value_count() * dtype_size(g.dtype()));
    out.append("EGR1", 4);
    detail::put_u16(out, 1);  // version
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(g.dtype())));
    out.push_back(static_cast<char>(g.nodata() ? 1 : 0));  // flags, bit0 = nodata present
    detail::put_u32(out, static_cast<std::uint32_t>(g.width()));
    detail::put_u32(out, static_cast<std::uint32_t>(g.height()));
    detail::put_u32(out, static_cast<std::uint32_t>(g.bands()));
    detail::put_u32(out, g.crs());
    detail::put_f64(out, g.nodata().value_or(0.0));
    detail::put_f64(out, g.geo().origin_x);
    detail::put_f64(out, g.geo().origin_y);
    detail::put_f64(out, g.geo().px);
    detail::put_f64(out, g.geo().py);
    out.resize(kEgridHeaderSize, '\0');

    switch (g.dtype()) {
        case Dtype::int8: {
            auto v = g.values<std::int8_t>();
            detail::put_bytes(out, v.data(), v.size());
            break;
        }
        case Dtype::float32:
            for (float f : g.values<float>()) detail::put_f32(out, f);
            break;
        case Dtype::float64:
            for (double d : g.values<double>()) detail::put_f64(out, d);
            break;
    }
    return out;
}

inline Grid decode_egrid(std::span<const unsigned char> bytes) {
    if (bytes.size() < kEgridHeaderSize) throw FormatError("EGRID: file shorter than header");
    if (std::memcmp(bytes.data(), "EGR1", 4) != 0) throw FormatError("EGRID: bad magic");
    detail::ByteReader r{bytes.data(), bytes.size(), 4};
    const std::uint16_t version = r.u16("version");
    if (version != 1) throw FormatError("EGRID: unsupported version " + std::to_string(version));
    const std::uint8_t dtype_code = r.u8("dtype");
    if (dtype_code > 2) throw FormatError("EGRID: unsupported dtype code " + std::to_string(dtype_code));
    const Dtype dt = static_cast<Dtype>(dtype_code);
    const std::uint8_t flags = r.u8("flags");
    const std::uint32_t w = r.u32("width");
    const std::uint32_t h = r.u32("height");
    const std::uint32_t b = r.u32("bands");
    const std::uint32_t crs = r.u32("crs");
    const double nodata = r.f64("nodata");
    GeoTransform geo;
    geo.origin_x = r.f64("origin_x");
    geo.origin_y = r.f64("origin_y");
    geo.px = r.f64("px");
    geo.py = r.f64("py");

    if (w < 1 || h < 1 || b < 1) throw FormatError("EGRID: degenerate dimensions in header");
    const std::size_t count = static_cast<std::size_t>(w) * h * b;
    const std::size_t expect = kEgridHeaderSize + count * dtype_size(dt);
    if (bytes.size() < expect) throw FormatError("EGRID: truncated payload");
    if (bytes.size() > expect) throw FormatError("EGRID: payload size does not match header");

    detail::ByteReader pr{bytes.data(), bytes.size(), kEgridHeaderSize};
    Grid::Storage values;
    switch (dt) {
        case Dtype::int8: {
            std::vector<std::int8_t> v(count);
            std::memcpy(v.data(), bytes.data() + kEgridHeaderSize, count);
            values = std::move(v);
            break;
        }
        case Dtype::float32: {
            std::vector<float> v(count);
            for (std::size_t i = 0; i < count; ++i) v[i] = pr.f32("payload");
            values = std::move(v);
            break;
        }
        case Dtype::float64: {
            std::vector<double> v(count);
            for (std::size_t i = 0; i < count; ++i) v[i] = pr.f64("payload");
            values = std::move(v);
            break;
        }
    }
    std::optional<double> nd;
    if (flags & 1) nd = nodata;
    return Grid(static_cast<int>(w), static_cast<int>(h), static_cast<int>(b), geo, crs, std::move(values), nd);
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on " + path.string());
    return data;
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write failure on " + path.string());
}

/// Returns the number of bytes written.
inline std::size_t write_internal(const Grid& g, const std::filesystem::path& path) {
    const std::string bytes = encode_egrid(g);
    write_file_bytes(path, bytes);
    return bytes.size();
}

inline Grid read_internal(const std::filesystem::path& path) {
    const std::string data = read_file_bytes(path);
    return decode_egrid(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(data.data()), data.size()));
}

}  // namespace embedheight
