#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "embedheight/metrics.hpp"
#include "embedheight/rng.hpp"

using namespace embedheight;
using Catch::Approx;

namespace {

// Direct-formula reference statistics in long double, two-pass, independent
// of the streaming implementation under test.
double ref_mean(const std::vector<double>& v) {
    long double s = 0;
    for (double x : v) s += x;
    return static_cast<double>(s / v.size());
}

double ref_sd(const std::vector<double>& v) {
    const long double m = ref_mean(v);
    long double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return static_cast<double>(std::sqrt(s / (v.size() - 1)));
}

double ref_rmse(const std::vector<double>& v) {
    long double s = 0;
    for (double x : v) s += static_cast<long double>(x) * x;
    return static_cast<double>(std::sqrt(s / v.size()));
}

double ref_percentile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const long double h = static_cast<long double>(v.size() - 1) * p / 100.0L;
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= v.size()) return v.back();
    return static_cast<double>(v[lo] + (h - lo) * (static_cast<long double>(v[lo + 1]) - v[lo]));
}

double ref_nmad(const std::vector<double>& v) {
    const double med = ref_percentile(v, 50.0);
    std::vector<double> dev;
    for (double x : v) dev.push_back(std::fabs(x - med));
    return 1.4826 * ref_percentile(dev, 50.0);
}

double ref_pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const long double mx = ref_mean(x), my = ref_mean(y);
    long double cov = 0, vx = 0, vy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        cov += (x[i] - mx) * (y[i] - my);
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
    }
    return static_cast<double>(cov / std::sqrt(vx * vy));
}

}  // namespace

TEST_CASE("diff_stats hand examples") {
    SECTION("symmetric triple") {
        const std::vector<double> dh{-1.0, 0.0, 1.0};
        const DiffStats s = diff_stats(dh);
        CHECK(s.n == 3);
        CHECK(s.mean == Approx(0.0).margin(1e-15));
        CHECK(s.median == Approx(0.0).margin(1e-15));
        CHECK(s.sd == Approx(1.0));                      // sample SD with n-1
        CHECK(s.rmse == Approx(std::sqrt(2.0 / 3.0)));   // sqrt((1+0+1)/3)
        CHECK(s.nmad == Approx(1.4826));                 // MAD = 1
        CHECK(s.p25 == Approx(-0.5));
        CHECK(s.p75 == Approx(0.5));
    }
    SECTION("pair") {
        const DiffStats s = diff_stats(std::vector<double>{3.0, 4.0});
        CHECK(s.rmse == Approx(std::sqrt(12.5)));
        CHECK(s.mean == Approx(3.5));
        CHECK(s.median == Approx(3.5));
        CHECK(s.sd == Approx(std::sqrt(0.5)));
    }
    SECTION("rmse decomposes into mean and sd") {
        Rng rng(7);
        std::vector<double> v;
        for (int i = 0; i < 1000; ++i) v.push_back(rng.normal() * 3.0 + 1.5);
        const DiffStats s = diff_stats(v);
        const double recomposed =
            std::sqrt(s.mean * s.mean + s.sd * s.sd * (s.n - 1.0) / static_cast<double>(s.n));
        CHECK(s.rmse == Approx(recomposed).epsilon(1e-12));
    }
    SECTION("fewer than two samples rejected") {
        CHECK_THROWS_AS(diff_stats(std::vector<double>{1.0}), ValueError);
        CHECK_THROWS_AS(diff_stats(std::vector<double>{}), ValueError);
    }
}

TEST_CASE("diff_stats matches direct-formula reference on random data") {
    Rng rng(42);
    std::vector<double> v;
    for (int i = 0; i < 10000; ++i) v.push_back(rng.normal() * 25.0 - 4.0 + rng.uniform());
    const DiffStats s = diff_stats(v);
    CHECK(s.mean == Approx(ref_mean(v)).epsilon(1e-9));
    CHECK(s.sd == Approx(ref_sd(v)).epsilon(1e-9));
    CHECK(s.rmse == Approx(ref_rmse(v)).epsilon(1e-9));
    CHECK(s.median == Approx(ref_percentile(v, 50.0)).epsilon(1e-9));
    CHECK(s.p25 == Approx(ref_percentile(v, 25.0)).epsilon(1e-9));
    CHECK(s.p75 == Approx(ref_percentile(v, 75.0)).epsilon(1e-9));
    CHECK(s.nmad == Approx(ref_nmad(v)).epsilon(1e-9));
}

TEST_CASE("diff_stats is permutation invariant") {
    Rng rng(3);
    std::vector<double> v;
    for (int i = 0; i < 500; ++i) v.push_back(rng.normal() * 10.0);
    std::vector<double> shuffled = v;
    rng.shuffle(shuffled);
    const DiffStats a = diff_stats(v);
    const DiffStats b = diff_stats(shuffled);
    CHECK(a.mean == Approx(b.mean).margin(1e-12));
    CHECK(a.sd == Approx(b.sd).epsilon(1e-12));
    CHECK(a.rmse == Approx(b.rmse).epsilon(1e-12));
    CHECK(a.median == b.median);
    CHECK(a.nmad == b.nmad);
}

TEST_CASE("nmad estimates the SD of a normal sample and resists outliers") {
    Rng rng(11);
    std::vector<double> v;
    for (int i = 0; i < 20000; ++i) v.push_back(rng.normal() * 5.0);
    const DiffStats clean = diff_stats(v);
    CHECK(clean.nmad == Approx(5.0).epsilon(0.05));

    // corrupt 1% with gross outliers: median/NMAD barely move, mean/SD/RMSE blow up
    std::vector<double> dirty = v;
    for (std::size_t i = 0; i < dirty.size(); i += 100) dirty[i] = 1e5;
    const DiffStats d = diff_stats(dirty);
    CHECK(std::fabs(d.nmad - clean.nmad) < 0.1);
    CHECK(std::fabs(d.median - clean.median) < 0.1);
    CHECK(d.rmse > 100.0 * clean.rmse);
    CHECK(d.sd > 100.0 * clean.sd);
}

TEST_CASE("corr_stats hand examples") {
    SECTION("perfect affine relation") {
        std::vector<double> ref{1.0, 2.0, 3.0, 4.0};
        std::vector<double> pred;
        for (double r : ref) pred.push_back(2.0 * r + 3.0);
        const CorrStats c = corr_stats(pred, ref);
        CHECK(c.pearson == Approx(1.0));
        CHECK(c.spearman == Approx(1.0));
        CHECK(c.fit_slope == Approx(2.0));
        CHECK(c.fit_intercept == Approx(3.0));
        // R-squared penalizes the offset: it is not pearson squared
        CHECK(c.r2 < 0.0);
    }
    SECTION("identity prediction") {
        const std::vector<double> ref{1.0, 5.0, 2.0, 8.0};
        const CorrStats c = corr_stats(ref, ref);
        CHECK(c.r2 == Approx(1.0));
        CHECK(c.pearson == Approx(1.0));
        CHECK(c.fit_slope == Approx(1.0));
        CHECK(c.fit_intercept == Approx(0.0).margin(1e-12));
    }
    SECTION("constant prediction at the reference mean scores zero") {
        const std::vector<double> ref{1.0, 2.0, 3.0};
        const std::vector<double> pred{2.0, 2.0, 2.0};
        const CorrStats c = corr_stats(pred, ref);
        CHECK(c.r2 == Approx(0.0).margin(1e-15));
        CHECK(c.pearson == 0.0);  // degenerate, defined as zero
    }
    SECTION("spearman of a single swap") {
        const std::vector<double> x{1.0, 2.0, 3.0};
        const std::vector<double> y{10.0, 30.0, 20.0};
        CHECK(corr_stats(x, y).spearman == Approx(0.5));
    }
    SECTION("spearman uses mean ranks for ties") {
        const std::vector<double> x{1.0, 2.0, 2.0, 3.0};
        const std::vector<double> y{1.0, 2.0, 3.0, 4.0};
        // ranks of x are 1, 2.5, 2.5, 4 -> pearson(ranks_x, ranks_y)
        CHECK(corr_stats(x, y).spearman ==
              Approx(ref_pearson({1.0, 2.5, 2.5, 4.0}, {1.0, 2.0, 3.0, 4.0})));
    }
    SECTION("degenerate inputs rejected") {
        CHECK_THROWS_AS(corr_stats(std::vector<double>{1, 2, 3}, std::vector<double>{4, 4, 4}),
                        ValueError);
        CHECK_THROWS_AS(corr_stats(std::vector<double>{1, 2}, std::vector<double>{1, 2}),
                        ValueError);
        CHECK_THROWS_AS(corr_stats(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}),
                        ValueError);
    }
}

TEST_CASE("corr_stats matches reference formulas on random data") {
    Rng rng(5);
    std::vector<double> ref, pred;
    for (int i = 0; i < 5000; ++i) {
        const double r = rng.normal() * 30.0 + 100.0;
        ref.push_back(r);
        pred.push_back(0.8 * r + 10.0 + rng.normal() * 8.0);
    }
    const CorrStats c = corr_stats(pred, ref);
    CHECK(c.pearson == Approx(ref_pearson(pred, ref)).epsilon(1e-9));

    // R2 from explicit sums
    const long double mr = ref_mean(ref);
    long double sse = 0, svar = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        sse += (ref[i] - pred[i]) * (ref[i] - pred[i]);
        svar += (ref[i] - mr) * (ref[i] - mr);
    }
    CHECK(c.r2 == Approx(static_cast<double>(1.0L - sse / svar)).epsilon(1e-9));

    // with noise, r2 differs from pearson squared even after the fit
    CHECK(c.r2 != Approx(c.pearson * c.pearson).epsilon(1e-4));

    // least-squares fit: residuals of pred - (slope*ref + intercept) sum to ~0
    long double resid = 0;
    for (std::size_t i = 0; i < ref.size(); ++i)
        resid += pred[i] - (c.fit_slope * ref[i] + c.fit_intercept);
    CHECK(static_cast<double>(resid) == Approx(0.0).margin(1e-6));
}

TEST_CASE("correlation invariances") {
    Rng rng(17);
    std::vector<double> x, y;
    for (int i = 0; i < 300; ++i) {
        x.push_back(rng.normal());
        y.push_back(0.5 * x.back() + rng.normal());
    }
    const CorrStats base = corr_stats(x, y);

    // pearson invariant under positive affine maps of either side
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xs.push_back(3.0 * x[i] + 7.0);
        ys.push_back(0.25 * y[i] - 2.0);
    }
    CHECK(corr_stats(xs, ys).pearson == Approx(base.pearson).epsilon(1e-12));

    // spearman invariant under strictly monotone transforms
    std::vector<double> xm, ym;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xm.push_back(x[i] * x[i] * x[i]);
        ym.push_back(std::exp(y[i]));
    }
    CHECK(corr_stats(xm, ym).spearman == Approx(base.spearman).epsilon(1e-12));
}

TEST_CASE("delta computes masked aligned differences") {
    const GeoTransform geo{100.0, 200.0, 10.0, 10.0};
    const Grid ref(2, 2, 1, geo, 32632, std::vector<float>{10.f, 20.f, 30.f, -9999.f}, -9999.0);
    const Grid pred(2, 2, 1, geo, 32632, std::vector<float>{11.f, 18.f, 30.f, 5.f});

    SECTION("nodata in the reference is excluded") {
        const std::vector<double> d = delta(pred, ref);
        REQUIRE(d.size() == 3);
        CHECK(d[0] == Approx(1.0));
        CHECK(d[1] == Approx(-2.0));
        CHECK(d[2] == Approx(0.0));
    }
    SECTION("mask excludes further pixels") {
        const std::vector<std::uint8_t> mask{1, 0, 1, 1};
        const std::vector<double> d = delta(pred, ref, mask);
        REQUIRE(d.size() == 2);
        CHECK(d[0] == Approx(1.0));
        CHECK(d[1] == Approx(0.0));
    }
    SECTION("misaligned grids rejected") {
        const GeoTransform other{105.0, 200.0, 10.0, 10.0};
        const Grid moved(2, 2, 1, other, 32632, std::vector<float>{0.f, 0.f, 0.f, 0.f});
        CHECK_THROWS_AS(delta(moved, ref), ValueError);
        const Grid wrong_crs(2, 2, 1, geo, 32633, std::vector<float>{0.f, 0.f, 0.f, 0.f});
        CHECK_THROWS_AS(delta(wrong_crs, ref), ValueError);
    }
}

TEST_CASE("histogram bins are half-open and aligned to bin-width multiples") {
    const std::vector<double> v{0.0, 5.0, 10.0};
    const Histogram h = histogram(v, 10.0, "train");
    REQUIRE(h.counts.size() == 1);
    REQUIRE(h.counts[0].size() == 2);
    CHECK(h.edges == std::vector<double>{0.0, 10.0, 20.0});
    CHECK(h.counts[0][0] == 2);  // [0,10) holds 0 and 5
    CHECK(h.counts[0][1] == 1);  // [10,20) holds 10
    CHECK(h.labels[0] == "train");

    SECTION("negative values get edges aligned below zero") {
        const Histogram n = histogram(std::vector<double>{-0.1, 0.1}, 10.0);
        CHECK(n.edges == std::vector<double>{-10.0, 0.0, 10.0});
        CHECK(n.counts[0] == std::vector<std::size_t>{1, 1});
    }
    SECTION("a second series widens the shared edges") {
        Histogram two = histogram(v, 10.0, "train");
        add_series(two, std::vector<double>{-5.0, 25.0}, "test");
        REQUIRE(two.counts.size() == 2);
        CHECK(two.edges == std::vector<double>{-10.0, 0.0, 10.0, 20.0, 30.0});
        CHECK(two.counts[0] == std::vector<std::size_t>{0, 2, 1, 0});
        CHECK(two.counts[1] == std::vector<std::size_t>{1, 0, 0, 1});
        CHECK(two.labels == std::vector<std::string>{"train", "test"});
    }
    SECTION("total count is preserved") {
        Rng rng(23);
        std::vector<double> r;
        for (int i = 0; i < 1234; ++i) r.push_back(rng.normal() * 40.0);
        const Histogram hr = histogram(r, 7.5);
        std::size_t total = 0;
        for (std::size_t c : hr.counts[0]) total += c;
        CHECK(total == r.size());
    }
    SECTION("invalid inputs rejected") {
        CHECK_THROWS_AS(histogram(v, 0.0), ValueError);
        CHECK_THROWS_AS(histogram(std::vector<double>{}, 1.0), ValueError);
    }
}
