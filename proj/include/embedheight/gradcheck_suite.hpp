#pragma once

// A self-contained finite-difference audit of every tensor operation,
// shared by the command-line `gradcheck` subcommand and the acceptance
// suite. Each case builds a small randomly shaped graph in float64, runs
// one analytic backward pass, and compares against central differences.
//
// The nonsmooth ops are sampled away from their kinks: relu inputs are
// pushed at least 0.2 from zero and maxpool inputs are distinct ladder
// values, so the finite-difference step (1e-3) cannot cross a regime
// boundary and the comparison is exact in the calculus sense.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "embedheight/gradcheck.hpp"
#include "embedheight/rng.hpp"
#include "embedheight/tensor.hpp"

namespace embedheight {

struct SuiteCase {
    std::string name;
    GradcheckResult result;
};

inline bool suite_passes(std::span<const SuiteCase> cases, double tol = 1e-5) {
    for (const SuiteCase& c : cases)
        if (!c.result.pass(tol)) return false;
    return !cases.empty();
}

namespace detail {

/// Run one case: `run(theta, grad_out)` must rebuild the graph from theta,
/// return the scalar loss, and fill grad_out (when non-null) with the
/// analytic gradient in theta order.
template <typename RunFn>
SuiteCase gradcheck_case(std::string name, std::vector<double> theta, RunFn&& run) {
    std::vector<double> grad;
    run(std::span<const double>(theta), &grad);
    const GradcheckResult r = gradcheck(
        [&](std::span<const double> th) { return run(th, nullptr); }, grad, theta, 1e-3);
    return SuiteCase{std::move(name), r};
}

inline std::vector<double> suite_normals(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

/// Distinct, well-separated values (multiples of 0.05) in random order:
/// perturbing any single one by the FD step cannot reorder a max.
inline std::vector<double> suite_ladder(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = 0.05 * static_cast<double>(i);
    rng.shuffle(v);
    return v;
}

/// Standard normals pushed at least 0.2 away from the relu kink.
inline std::vector<double> suite_off_kink(Rng& rng, std::size_t n) {
    std::vector<double> v = suite_normals(rng, n);
    for (double& x : v) x += x >= 0.0 ? 0.2 : -0.2;
    return v;
}

}  // namespace detail

/// Run the whole per-op suite (25 cases). All shapes and values derive
/// from `seed`, so a run is reproducible from its manifest.
inline std::vector<SuiteCase> run_gradient_suite(std::uint64_t seed = 1) {
    Rng rng(mix_seed(seed, 0x6D));
    std::vector<SuiteCase> out;
    using Sp = std::span<const double>;

    // conv2d: both paddings, strides 1 and 2, two random shapes each;
    // gradients checked through x, the weights and the bias at once.
    for (const Padding pad : {Padding::zero, Padding::reflect}) {
        for (const int stride : {1, 2}) {
            for (int rep = 0; rep < 2; ++rep) {
                const int n = 1 + static_cast<int>(rng.index(2));
                const int cin = 1 + static_cast<int>(rng.index(3));
                const int cout = 1 + static_cast<int>(rng.index(3));
                const int k = rng.index(2) ? 3 : 1;
                const int h = 3 + static_cast<int>(rng.index(4));
                const int w = 3 + static_cast<int>(rng.index(4));
                const Shape xs{n, cin, h, w}, ws{cout, cin, k, k};
                const int p = (k - 1) / 2;
                const Shape os{n, cout, (h + 2 * p - k) / stride + 1,
                               (w + 2 * p - k) / stride + 1};
                const std::vector<double> target = detail::suite_normals(rng, os.count());
                std::vector<double> theta =
                    detail::suite_normals(rng, xs.count() + ws.count() + cout);
                std::string name = "conv2d ";
                name += pad == Padding::zero ? "zero" : "reflect";
                name += " stride=" + std::to_string(stride) + " x=" + std::to_string(n) + "x" +
                        std::to_string(cin) + "x" + std::to_string(h) + "x" + std::to_string(w) +
                        " k=" + std::to_string(k);
                out.push_back(detail::gradcheck_case(
                    std::move(name), std::move(theta),
                    [=](Sp th, std::vector<double>* grad_out) {
                        Tape<double> tape;
                        const auto x = tape.input(xs, th.subspan(0, xs.count()));
                        const auto wt = tape.input(ws, th.subspan(xs.count(), ws.count()));
                        const auto b = tape.input(Shape{cout, 1, 1, 1},
                                                  th.subspan(xs.count() + ws.count(),
                                                             static_cast<std::size_t>(cout)));
                        const auto loss =
                            mse_loss(conv2d(x, wt, b, stride, pad), Sp(target));
                        if (grad_out) {
                            tape.backward(loss);
                            grad_out->clear();
                            for (const auto* t : {&x, &wt, &b}) {
                                const Sp g = tape.grad(*t);
                                grad_out->insert(grad_out->end(), g.begin(), g.end());
                            }
                        }
                        return tape.value(loss)[0];
                    }));
            }
        }
    }

    // One-input ops: build the op, compare through a quadratic head.
    const auto unary_case = [&](std::string name, Shape xs, std::vector<double> theta,
                                std::size_t out_count, auto&& op) {
        const std::vector<double> target = detail::suite_normals(rng, out_count);
        out.push_back(detail::gradcheck_case(
            std::move(name), std::move(theta), [=](Sp th, std::vector<double>* grad_out) {
                Tape<double> tape;
                const auto x = tape.input(xs, th);
                const auto loss = mse_loss(op(x), Sp(target));
                if (grad_out) {
                    tape.backward(loss);
                    const Sp g = tape.grad(x);
                    grad_out->assign(g.begin(), g.end());
                }
                return tape.value(loss)[0];
            }));
    };

    for (int rep = 0; rep < 3; ++rep) {
        const Shape xs{1 + static_cast<int>(rng.index(2)), 1 + static_cast<int>(rng.index(3)),
                       2 + static_cast<int>(rng.index(4)), 2 + static_cast<int>(rng.index(4))};
        unary_case("relu " + std::to_string(rep), xs, detail::suite_off_kink(rng, xs.count()),
                   xs.count(), [](const Tensor<double>& x) { return relu(x); });
    }
    for (int rep = 0; rep < 3; ++rep) {
        const Shape xs{1 + static_cast<int>(rng.index(2)), 1 + static_cast<int>(rng.index(2)),
                       2 * (1 + static_cast<int>(rng.index(3))),
                       2 * (1 + static_cast<int>(rng.index(3)))};
        unary_case("maxpool2d " + std::to_string(rep), xs, detail::suite_ladder(rng, xs.count()),
                   xs.count() / 4, [](const Tensor<double>& x) { return maxpool2d(x); });
    }
    for (int rep = 0; rep < 2; ++rep) {
        const Shape xs{1, 1 + static_cast<int>(rng.index(3)), 2 + static_cast<int>(rng.index(3)),
                       2 + static_cast<int>(rng.index(3))};
        unary_case("upsample_nearest2 " + std::to_string(rep), xs,
                   detail::suite_normals(rng, xs.count()), xs.count() * 4,
                   [](const Tensor<double>& x) { return upsample_nearest2(x); });
    }
    for (int rep = 0; rep < 2; ++rep) {
        const Shape xs{1, 2, 3, 3};
        unary_case("scale " + std::to_string(rep), xs, detail::suite_normals(rng, xs.count()),
                   xs.count(),
                   [s = rng.normal()](const Tensor<double>& x) { return scale(x, s); });
    }

    // Two-input ops: concat along channels and elementwise add.
    for (int rep = 0; rep < 2; ++rep) {
        const int n = 1 + static_cast<int>(rng.index(2));
        const int h = 2 + static_cast<int>(rng.index(3));
        const int w = 2 + static_cast<int>(rng.index(3));
        const int ca = 1 + static_cast<int>(rng.index(2));
        const int cb = 1 + static_cast<int>(rng.index(2));
        const Shape as{n, ca, h, w}, bs{n, cb, h, w};
        const Shape os{n, ca + cb, h, w};
        const std::vector<double> target = detail::suite_normals(rng, os.count());
        out.push_back(detail::gradcheck_case(
            "concat_channels " + std::to_string(rep),
            detail::suite_normals(rng, as.count() + bs.count()),
            [=](Sp th, std::vector<double>* grad_out) {
                Tape<double> tape;
                const auto a = tape.input(as, th.subspan(0, as.count()));
                const auto b = tape.input(bs, th.subspan(as.count(), bs.count()));
                const auto loss = mse_loss(concat_channels(a, b), Sp(target));
                if (grad_out) {
                    tape.backward(loss);
                    grad_out->clear();
                    for (const auto* t : {&a, &b}) {
                        const Sp g = tape.grad(*t);
                        grad_out->insert(grad_out->end(), g.begin(), g.end());
                    }
                }
                return tape.value(loss)[0];
            }));
    }
    for (int rep = 0; rep < 2; ++rep) {
        const Shape xs{1 + static_cast<int>(rng.index(2)), 1 + static_cast<int>(rng.index(2)),
                       2 + static_cast<int>(rng.index(3)), 2 + static_cast<int>(rng.index(3))};
        const std::vector<double> target = detail::suite_normals(rng, xs.count());
        out.push_back(detail::gradcheck_case(
            "add " + std::to_string(rep), detail::suite_normals(rng, 2 * xs.count()),
            [=](Sp th, std::vector<double>* grad_out) {
                Tape<double> tape;
                const auto a = tape.input(xs, th.subspan(0, xs.count()));
                const auto b = tape.input(xs, th.subspan(xs.count(), xs.count()));
                const auto loss = mse_loss(add(a, b), Sp(target));
                if (grad_out) {
                    tape.backward(loss);
                    grad_out->clear();
                    for (const auto* t : {&a, &b}) {
                        const Sp g = tape.grad(*t);
                        grad_out->insert(grad_out->end(), g.begin(), g.end());
                    }
                }
                return tape.value(loss)[0];
            }));
    }

    // mse_loss itself, with and without a mask.
    for (int rep = 0; rep < 3; ++rep) {
        const Shape xs{1, 1, 2 + static_cast<int>(rng.index(3)),
                       2 + static_cast<int>(rng.index(3))};
        const std::vector<double> target = detail::suite_normals(rng, xs.count());
        std::vector<std::uint8_t> mask;
        if (rep == 2) {
            mask.assign(xs.count(), 1);
            mask[rng.index(mask.size())] = 0;  // at least one masked-out element
        }
        out.push_back(detail::gradcheck_case(
            std::string("mse_loss ") + (mask.empty() ? "plain " : "masked ") +
                std::to_string(rep),
            detail::suite_normals(rng, xs.count()), [=](Sp th, std::vector<double>* grad_out) {
                Tape<double> tape;
                const auto x = tape.input(xs, th);
                const auto loss = mse_loss(x, Sp(target), std::span<const std::uint8_t>(mask));
                if (grad_out) {
                    tape.backward(loss);
                    const Sp g = tape.grad(x);
                    grad_out->assign(g.begin(), g.end());
                }
                return tape.value(loss)[0];
            }));
    }

    return out;
}

}  // namespace embedheight
