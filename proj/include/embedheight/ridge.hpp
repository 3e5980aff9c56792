#pragma once

// Per-pixel linear baseline: Ridge regression from embedding bands to
// height, solved in closed form. Features and target are centered so the
// intercept stays unpenalized; the normal matrix is accumulated and
// factorized in float64 (Cholesky). Optional seeded subsampling bounds the
// pixel scan while keeping the bands x bands system exact.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "embedheight/errors.hpp"
#include "embedheight/grid.hpp"
#include "embedheight/preprocess.hpp"
#include "embedheight/rng.hpp"

namespace embedheight {

struct RidgeModel {
    double lambda = 1.0;
    std::vector<double> feature_means;  // per band
    std::vector<double> coefficients;   // per band, m per unit feature
    double target_mean = 0.0;           // m
    double intercept = 0.0;             // target_mean - beta . feature_means

    void validate() const {
        if (lambda < 0) throw ValueError("ridge model: lambda must be >= 0");
        if (feature_means.size() != coefficients.size())
            throw ValueError("ridge model: means and coefficients disagree on band count");
        if (feature_means.empty()) throw ValueError("ridge model: no bands");
        auto finite = [](double v) { return std::isfinite(v); };
        if (!finite(target_mean) || !finite(intercept) || !finite(lambda))
            throw ValueError("ridge model: non-finite values");
        for (double v : feature_means)
            if (!finite(v)) throw ValueError("ridge model: non-finite values");
        for (double v : coefficients)
            if (!finite(v)) throw ValueError("ridge model: non-finite values");
    }
};

struct RidgeFitOptions {
    double lambda = 1.0;            // on normalized features
    std::size_t max_pixels = 2'000'000;
    std::uint64_t seed = 0;         // subsample selection
};

namespace detail {

/// In-place Cholesky solve of the symmetric positive-definite system
/// A x = b (A row-major n x n, lower triangle used). Throws on a pivot
/// indistinguishable from zero at float64 scale.
inline std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b,
                                     std::size_t n) {
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, a[i * n + i]);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
        if (!(d > 1e-12 * max_diag) || !std::isfinite(d))
            throw ValueError("ridge fit: singular normal matrix (collinear features; "
                             "increase lambda)");
        const double l = std::sqrt(d);
        a[j * n + j] = l;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            a[i * n + j] = s / l;
        }
    }
    // forward substitution L z = b, then back substitution L^T x = z
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
        b[i] = s / a[i * n + i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= a[k * n + ii] * b[k];
        b[ii] = s / a[ii * n + ii];
    }
    return b;
}

}  // namespace detail

inline RidgeModel fit_ridge(const PairedGrid& pair, const RidgeFitOptions& opt = {}) {
    if (opt.lambda < 0) throw ValueError("ridge fit: lambda must be >= 0");
    if (opt.max_pixels < 1) throw ValueError("ridge fit: subsample cap must be >= 1");
    const Grid& in = pair.inputs;
    if (in.dtype() != Dtype::float32 || pair.target.dtype() != Dtype::float32)
        throw ValueError("ridge fit: expects normalized float32 grids");
    const std::size_t bands = static_cast<std::size_t>(in.bands());
    const std::size_t plane = static_cast<std::size_t>(in.width()) * in.height();
    const std::span<const float> xv = in.values<float>();
    const std::span<const float> yv = pair.target.values<float>();

    std::vector<std::size_t> px;
    for (std::size_t i = 0; i < plane; ++i)
        if (pair.mask[i]) px.push_back(i);
    if (px.size() < bands + 1)
        throw ValueError("ridge fit: need at least " + std::to_string(bands + 1) +
                         " valid pixels, found " + std::to_string(px.size()));
    if (px.size() > opt.max_pixels) {
        // Seeded partial Fisher-Yates: the first max_pixels entries become a
        // uniform without-replacement sample.
        Rng rng(mix_seed(opt.seed, 13));
        for (std::size_t i = 0; i < opt.max_pixels; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.index(px.size() - i));
            std::swap(px[i], px[j]);
        }
        px.resize(opt.max_pixels);
    }
    const double n = static_cast<double>(px.size());

    RidgeModel model;
    model.lambda = opt.lambda;
    model.feature_means.assign(bands, 0.0);
    for (std::size_t i : px) {
        for (std::size_t b = 0; b < bands; ++b)
            model.feature_means[b] += static_cast<double>(xv[b * plane + i]);
        model.target_mean += static_cast<double>(yv[i]);
    }
    for (double& m : model.feature_means) m /= n;
    model.target_mean /= n;

    std::vector<double> gram(bands * bands, 0.0);
    std::vector<double> rhs(bands, 0.0);
    std::vector<double> xc(bands);
    for (std::size_t i : px) {
        for (std::size_t b = 0; b < bands; ++b)
            xc[b] = static_cast<double>(xv[b * plane + i]) - model.feature_means[b];
        const double yc = static_cast<double>(yv[i]) - model.target_mean;
        for (std::size_t a = 0; a < bands; ++a) {
            for (std::size_t b = a; b < bands; ++b) gram[a * bands + b] += xc[a] * xc[b];
            rhs[a] += xc[a] * yc;
        }
    }
    for (std::size_t a = 0; a < bands; ++a) {
        for (std::size_t b = a + 1; b < bands; ++b) gram[b * bands + a] = gram[a * bands + b];
        gram[a * bands + a] += opt.lambda;
    }

    model.coefficients = detail::solve_spd(std::move(gram), std::move(rhs), bands);
    model.intercept = model.target_mean;
    for (std::size_t b = 0; b < bands; ++b)
        model.intercept -= model.coefficients[b] * model.feature_means[b];
    model.validate();
    return model;
}

/// Per-pixel prediction: beta . (x - means) + target mean. Heights are not
/// clipped; strongly negative outputs are a known failure mode of the
/// linear baseline, not an error.
inline Grid predict_ridge(const RidgeModel& model, const Grid& embeddings) {
    model.validate();
    if (embeddings.dtype() != Dtype::float32)
        throw ValueError("ridge predict: expects a normalized float32 grid");
    if (static_cast<std::size_t>(embeddings.bands()) != model.coefficients.size())
        throw ValueError("ridge predict: grid has " + std::to_string(embeddings.bands()) +
                         " bands but the model expects " +
                         std::to_string(model.coefficients.size()));
    const std::size_t bands = model.coefficients.size();
    const std::size_t plane =
        static_cast<std::size_t>(embeddings.width()) * embeddings.height();
    const std::span<const float> xv = embeddings.values<float>();
    std::vector<float> out(plane);
    for (std::size_t i = 0; i < plane; ++i) {
        double y = model.intercept;
        for (std::size_t b = 0; b < bands; ++b)
            y += model.coefficients[b] * static_cast<double>(xv[b * plane + i]);
        out[i] = static_cast<float>(y);
    }
    return Grid(embeddings.width(), embeddings.height(), 1, embeddings.geo(),
                embeddings.crs(), std::move(out));
}

/// Structured-text persistence, full float64 precision, audit-friendly.
inline std::string ridge_to_text(const RidgeModel& model) {
    model.validate();
    char buf[32];
    auto num = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    std::string out = "ridge v1\n";
    out += "lambda " + num(model.lambda) + "\n";
    out += "bands " + std::to_string(model.coefficients.size()) + "\n";
    out += "feature_means";
    for (double v : model.feature_means) out += " " + num(v);
    out += "\ncoefficients";
    for (double v : model.coefficients) out += " " + num(v);
    out += "\ntarget_mean " + num(model.target_mean) + "\n";
    out += "intercept " + num(model.intercept) + "\n";
    return out;
}

inline RidgeModel ridge_from_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    auto next = [&](const std::string& key) {
        if (!std::getline(in, line) || line.rfind(key, 0) != 0 ||
            (line.size() > key.size() && line[key.size()] != ' '))
            throw FormatError("ridge model: expected '" + key + "' line");
        return std::istringstream(line.substr(key.size()));
    };
    if (!std::getline(in, line) || line != "ridge v1")
        throw FormatError("ridge model: not a ridge v1 file");
    RidgeModel model;
    std::size_t bands = 0;
    if (!(next("lambda") >> model.lambda)) throw FormatError("ridge model: bad lambda");
    if (!(next("bands") >> bands) || bands == 0) throw FormatError("ridge model: bad bands");
    auto vec = [&](const std::string& key) {
        std::istringstream row = next(key);
        std::vector<double> v(bands);
        for (double& x : v)
            if (!(row >> x)) throw FormatError("ridge model: '" + key + "' needs " +
                                               std::to_string(bands) + " values");
        double extra;
        if (row >> extra) throw FormatError("ridge model: too many '" + key + "' values");
        return v;
    };
    model.feature_means = vec("feature_means");
    model.coefficients = vec("coefficients");
    if (!(next("target_mean") >> model.target_mean))
        throw FormatError("ridge model: bad target_mean");
    if (!(next("intercept") >> model.intercept)) throw FormatError("ridge model: bad intercept");
    try {
        model.validate();
    } catch (const ValueError& e) {
        throw FormatError(std::string("ridge model: ") + e.what());
    }
    return model;
}

}  // namespace embedheight
