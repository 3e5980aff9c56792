#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "embedheight/grid.hpp"
#include "embedheight/rng.hpp"

using namespace embedheight;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
    const fs::path dir = fs::temp_directory_path() / "embedheight_tests";
    fs::create_directories(dir);
    return dir / name;
}

Grid make_grid(int w, int h, int b, Dtype dt, Rng& rng, std::optional<double> nodata = std::nullopt) {
    GeoTransform geo{1000.0, 2000.0, 10.0, 10.0};
    const std::size_t n = static_cast<std::size_t>(w) * h * b;
    switch (dt) {
        case Dtype::int8: {
            std::vector<std::int8_t> v(n);
            for (auto& x : v) x = static_cast<std::int8_t>(static_cast<int>(rng.index(255)) - 127);
            return Grid(w, h, b, geo, 32631, std::move(v), nodata);
        }
        case Dtype::float32: {
            std::vector<float> v(n);
            for (auto& x : v) x = static_cast<float>(rng.normal(50.0, 20.0));
            return Grid(w, h, b, geo, 32631, std::move(v), nodata);
        }
        case Dtype::float64: {
            std::vector<double> v(n);
            for (auto& x : v) x = rng.normal(50.0, 20.0);
            return Grid(w, h, b, geo, 32631, std::move(v), nodata);
        }
    }
    throw std::logic_error("unreachable");
}

bool grids_identical(const Grid& a, const Grid& b) {
    return a.width() == b.width() && a.height() == b.height() && a.bands() == b.bands() &&
           a.dtype() == b.dtype() && a.crs() == b.crs() && a.nodata() == b.nodata() &&
           a.geo().origin_x == b.geo().origin_x && a.geo().origin_y == b.geo().origin_y &&
           a.geo().px == b.geo().px && a.geo().py == b.geo().py && a.same_values(b);
}

}  // namespace

TEST_CASE("grid invariants on construction") {
    GeoTransform geo{0, 0, 10, 10};
    CHECK_THROWS_AS(Grid(0, 1, 1, geo, 0, std::vector<float>{}), ValueError);
    CHECK_THROWS_AS(Grid(2, 2, 1, geo, 0, std::vector<float>{1.f, 2.f}), ValueError);
    GeoTransform bad{0, 0, -1, 10};
    CHECK_THROWS_AS(Grid(1, 1, 1, bad, 0, std::vector<float>{1.f}), ValueError);
}

TEST_CASE("egrid 1x1x1 float32 is header plus four bytes") {
    Grid g(1, 1, 1, GeoTransform{}, 0, std::vector<float>{0.0f});
    const auto path = temp_file("one.egrid");
    const std::size_t n = write_internal(g, path);
    CHECK(n == kEgridHeaderSize + 4);
    CHECK(fs::file_size(path) == n);
}

TEST_CASE("egrid int8 payload size formula") {
    Rng rng(7);
    Grid g = make_grid(3, 2, 64, Dtype::int8, rng);
    const std::string bytes = encode_egrid(g);
    CHECK(bytes.size() == kEgridHeaderSize + 3 * 2 * 64);
}

TEST_CASE("egrid round-trip is bit-exact for all dtypes") {
    Rng rng(42);
    for (Dtype dt : {Dtype::int8, Dtype::float32, Dtype::float64}) {
        for (auto nodata : std::vector<std::optional<double>>{std::nullopt, -128.0}) {
            Grid g = make_grid(5, 4, 3, dt, rng, nodata);
            const auto path = temp_file("roundtrip.egrid");
            write_internal(g, path);
            Grid back = read_internal(path);
            CHECK(grids_identical(g, back));
        }
    }
}

TEST_CASE("egrid rejects bad magic") {
    Rng rng(1);
    Grid g = make_grid(2, 2, 1, Dtype::float32, rng);
    std::string bytes = encode_egrid(g);
    bytes[0] = 'X';
    bytes[1] = 'X';
    bytes[2] = 'X';
    bytes[3] = 'X';
    CHECK_THROWS_WITH(decode_egrid({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()}),
                      Catch::Matchers::ContainsSubstring("bad magic"));
}

TEST_CASE("egrid rejects truncated payload") {
    // header declares 4x4x1 float32 but only 15 values follow
    Rng rng(2);
    Grid g = make_grid(4, 4, 1, Dtype::float32, rng);
    std::string bytes = encode_egrid(g);
    bytes.resize(bytes.size() - 4);
    CHECK_THROWS_WITH(decode_egrid({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()}),
                      Catch::Matchers::ContainsSubstring("truncated"));
}

TEST_CASE("egrid rejects trailing garbage") {
    Rng rng(3);
    Grid g = make_grid(2, 3, 1, Dtype::int8, rng);
    std::string bytes = encode_egrid(g);
    bytes.push_back('\0');
    CHECK_THROWS_AS(decode_egrid({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()}),
                    FormatError);
}

TEST_CASE("window identity and row-major indexing") {
    std::vector<float> v(16);
    for (int i = 0; i < 16; ++i) v[i] = static_cast<float>(i);
    Grid g(4, 4, 1, GeoTransform{0, 40, 10, 10}, 32631, std::move(v));

    Grid full = g.window(0, 0, 4, 4);
    CHECK(grids_identical(full, g));

    Grid inner = g.window(1, 1, 2, 2);
    auto iv = inner.values<float>();
    CHECK(std::vector<float>(iv.begin(), iv.end()) == std::vector<float>{5, 6, 9, 10});
    CHECK(inner.geo().origin_x == 10.0);
    CHECK(inner.geo().origin_y == 30.0);

    CHECK_THROWS_AS(g.window(2, 2, 3, 3), ValueError);
}

TEST_CASE("window composition adds offsets") {
    Rng rng(11);
    Grid g = make_grid(12, 9, 2, Dtype::float32, rng);
    Grid a = g.window(2, 1, 8, 7).window(3, 4, 2, 2);
    Grid b = g.window(5, 5, 2, 2);
    CHECK(grids_identical(a, b));
}

TEST_CASE("pixel center coordinates are stable under windowing") {
    Rng rng(12);
    Grid g = make_grid(6, 6, 1, Dtype::float64, rng);
    Grid w = g.window(2, 3, 3, 2);
    // pixel (i, j) of the window is pixel (i+2, j+3) of the parent
    for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 3; ++i) {
            CHECK(w.geo().center_x(i) == Catch::Approx(g.geo().center_x(i + 2)).epsilon(1e-12));
            CHECK(w.geo().center_y(j) == Catch::Approx(g.geo().center_y(j + 3)).epsilon(1e-12));
        }
}
