#pragma once

// Central finite-difference verification of analytic gradients, in float64.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "embedheight/errors.hpp"

namespace embedheight {

struct GradcheckResult {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;

    bool pass(double tol) const { return max_rel_error <= tol; }
};

/// Compare an analytic gradient against central differences
/// (f(t+h) - f(t-h)) / 2h, coordinate by coordinate. The relative error uses
/// max(|analytic|, |numeric|, 1) as denominator so near-zero gradients are
/// judged on absolute error. `loss` must be a pure function of theta.
template <typename Loss>
GradcheckResult gradcheck(Loss&& loss, std::span<const double> analytic, std::span<double> theta,
                          double step = 1e-3) {
    if (analytic.size() != theta.size()) throw ValueError("gradcheck: gradient size mismatch");
    if (!(step > 0)) throw ValueError("gradcheck: step must be positive");
    GradcheckResult r;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + step;
        const double up = loss(std::span<const double>(theta));
        theta[i] = saved - step;
        const double down = loss(std::span<const double>(theta));
        theta[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double abs_err = std::fabs(analytic[i] - numeric);
        const double rel_err =
            abs_err / std::max({std::fabs(analytic[i]), std::fabs(numeric), 1.0});
        if (rel_err > r.max_rel_error) {
            r.max_rel_error = rel_err;
            r.worst_index = i;
            r.analytic_at_worst = analytic[i];
            r.numeric_at_worst = numeric;
        }
        r.max_abs_error = std::max(r.max_abs_error, abs_err);
    }
    return r;
}

}  // namespace embedheight
