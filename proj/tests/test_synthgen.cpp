#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "embedheight/preprocess.hpp"
#include "embedheight/synthgen.hpp"

using namespace embedheight;

namespace {

double lag1_correlation(const Grid& g, int band) {
    auto v = g.band<std::int8_t>(band);
    const int w = g.width(), h = g.height();
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    std::size_t n = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x + 1 < w; ++x) {
            const double a = v[static_cast<std::size_t>(y) * w + x];
            const double b = v[static_cast<std::size_t>(y) * w + x + 1];
            sx += a; sy += b; sxx += a * a; syy += b * b; sxy += a * b;
            ++n;
        }
    const double cov = sxy / n - (sx / n) * (sy / n);
    const double va = sxx / n - (sx / n) * (sx / n);
    const double vb = syy / n - (sy / n) * (sy / n);
    return cov / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("generate is deterministic") {
    SynthSpec spec;
    spec.width = 32;
    spec.height = 24;
    spec.seed = 77;
    SynthScene a = generate(spec);
    SynthScene b = generate(spec);
    CHECK(a.embeddings.same_values(b.embeddings));
    CHECK(a.heights.same_values(b.heights));
    CHECK(a.descriptor.to_text() == b.descriptor.to_text());
}

TEST_CASE("generated embeddings avoid the sentinel") {
    SynthSpec spec;
    spec.width = 48;
    spec.height = 48;
    spec.seed = 3;
    SynthScene s = generate(spec);
    for (auto v : s.embeddings.values<std::int8_t>()) {
        CHECK(v >= -127);
        CHECK(v <= 127);
    }
}

TEST_CASE("spatial autocorrelation grows with smoothing radius") {
    double prev = -2.0;
    for (int radius : {0, 2, 8}) {
        SynthSpec spec;
        spec.width = 96;
        spec.height = 96;
        spec.seed = 11;
        spec.smooth_radius = radius;
        SynthScene s = generate(spec);
        const double corr = lag1_correlation(s.embeddings, 0);
        CHECK(corr > prev);
        prev = corr;
    }
}

TEST_CASE("linear mapping heights equal the descriptor evaluation") {
    SynthSpec spec;
    spec.width = 40;
    spec.height = 40;
    spec.seed = 5;
    SynthScene s = generate(spec);
    auto [remapped, _] = remap_nodata(s.embeddings);
    Grid n = normalize(remapped);
    std::vector<double> expect = eval_mapping(s.descriptor, n);
    auto got = s.heights.values<float>();
    for (std::size_t p = 0; p < expect.size(); ++p)
        CHECK(got[p] == Catch::Approx(expect[p]).margin(1e-4));
}

TEST_CASE("nonlinear descriptor records terms and curvature") {
    SynthSpec spec;
    spec.mapping = SynthSpec::Mapping::nonlinear;
    spec.width = 16;
    spec.height = 16;
    SynthScene s = generate(spec);
    CHECK(s.descriptor.terms.size() == 16);
    CHECK(s.descriptor.curve_coeff != 0.0);
    CHECK(s.descriptor.to_text().find("mapping=nonlinear") != std::string::npos);
    CHECK(s.descriptor.to_text().find("term=square,0,0,") != std::string::npos);
    CHECK(s.descriptor.to_text().find("curve_coeff=") != std::string::npos);
}

TEST_CASE("nonlinear mapping heights equal the descriptor evaluation") {
    SynthSpec spec;
    spec.mapping = SynthSpec::Mapping::nonlinear;
    spec.width = 40;
    spec.height = 40;
    spec.seed = 13;
    SynthScene s = generate(spec);
    auto [remapped, _] = remap_nodata(s.embeddings);
    Grid n = normalize(remapped);
    std::vector<double> expect = eval_mapping(s.descriptor, n);
    auto got = s.heights.values<float>();
    for (std::size_t p = 0; p < expect.size(); ++p)
        CHECK(got[p] == Catch::Approx(expect[p]).margin(1e-3));
}

TEST_CASE("distribution shift biases the right-hand columns") {
    SynthSpec base;
    base.width = 60;
    base.height = 20;
    base.seed = 9;
    SynthSpec shifted = base;
    shifted.shift_offset = 50.0;
    shifted.shift_fraction = 0.5;
    SynthScene a = generate(base);
    SynthScene b = generate(shifted);
    CHECK(b.descriptor.shift_column == 30);
    CHECK(b.heights.at(0, 10, 0) == Catch::Approx(a.heights.at(0, 10, 0)));
    CHECK(b.heights.at(0, 10, 45) == Catch::Approx(a.heights.at(0, 10, 45) + 50.0).margin(1e-4));
}

TEST_CASE("inject_nodata is reproducible and reported downstream") {
    SynthSpec spec;
    spec.width = 100;
    spec.height = 100;
    spec.seed = 21;
    SynthScene s = generate(spec);

    Grid unchanged = inject_nodata(s.embeddings, 0.0, 4);
    CHECK(unchanged.same_values(s.embeddings));

    Grid a = inject_nodata(s.embeddings, 0.01, 4);
    Grid b = inject_nodata(s.embeddings, 0.01, 4);
    CHECK(a.same_values(b));

    std::size_t injected = 0;
    for (std::size_t p = 0; p < a.pixel_count(); ++p)
        if (a.values<std::int8_t>()[p] == -128) ++injected;
    CHECK(injected > 50);
    CHECK(injected < 200);

    auto [_, report] = remap_nodata(a);
    CHECK(report.invalid_pixels == injected);
    CHECK(report.total_pixels == 10000);
}
