#pragma once

// Reverse-mode automatic differentiation on dense NCHW tensors. A Tape owns
// every node produced during a forward pass; operations append a node plus a
// backward closure, and backward() replays the closures in reverse execution
// order, accumulating gradients additively. Tapes are single-shot: building
// on or differentiating a consumed tape throws.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <type_traits>
#include <vector>

#include "embedheight/errors.hpp"
#include "embedheight/indexing.hpp"

namespace embedheight {

struct Shape {
    int n = 1, c = 1, h = 1, w = 1;
    std::size_t count() const {
        return static_cast<std::size_t>(n) * c * static_cast<std::size_t>(h) * w;
    }
    bool operator==(const Shape&) const = default;
};

enum class Padding { zero, reflect };

template <typename T>
class Tape;

/// Lightweight handle to a node on a tape.
template <typename T>
struct Tensor {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;
    Shape shape;
};

template <typename T>
class Tape {
    static_assert(std::is_floating_point_v<T>);

  public:
    /// Leaf node holding a copy of the given data (input, parameter, ...).
    Tensor<T> input(Shape shape, std::span<const T> data) {
        if (data.size() != shape.count()) throw ValueError("tape input: data size mismatch");
        return append(shape, std::vector<T>(data.begin(), data.end()));
    }

    Tensor<T> zeros(Shape shape) { return append(shape, std::vector<T>(shape.count(), T{0})); }

    std::span<const T> value(const Tensor<T>& t) const { return nodes_[t.id].value; }

    /// Gradient of the last backward() with respect to node t.
    std::span<const T> grad(const Tensor<T>& t) const {
        if (!consumed_) throw ValueError("tape: gradients requested before backward");
        return nodes_[t.id].grad;
    }

    /// Seed d(out)/d(out) = 1 on a scalar node and run all backward closures
    /// in reverse execution order. The tape is consumed afterwards.
    void backward(const Tensor<T>& out) {
        require_live();
        if (out.tape != this) throw ValueError("tape backward: tensor from another tape");
        if (out.shape.count() != 1) throw ValueError("tape backward: output must be scalar");
        consumed_ = true;
        for (Node& n : nodes_) n.grad.assign(n.value.size(), T{0});
        nodes_[out.id].grad[0] = T{1};
        for (std::size_t i = nodes_.size(); i-- > 0;)
            if (nodes_[i].pull) nodes_[i].pull(*this);
    }

    std::size_t node_count() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // --- node-level plumbing used by the op implementations ---

    Tensor<T> append(Shape shape, std::vector<T> value) {
        require_live();
        if (value.size() != shape.count()) throw ValueError("tape append: size mismatch");
        nodes_.push_back(Node{shape, std::move(value), {}, {}});
        return Tensor<T>{this, nodes_.size() - 1, shape};
    }

    void set_pull(std::size_t id, std::function<void(Tape&)> pull) {
        nodes_[id].pull = std::move(pull);
    }

    std::span<const T> value_at(std::size_t id) const { return nodes_[id].value; }
    std::span<T> grad_at(std::size_t id) { return nodes_[id].grad; }

  private:
    struct Node {
        Shape shape;
        std::vector<T> value;
        std::vector<T> grad;
        std::function<void(Tape&)> pull;
    };

    void require_live() const {
        if (consumed_) throw ValueError("tape: already consumed by backward (stale tape)");
    }

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

namespace detail {

template <typename T>
Tape<T>& tape_of(const Tensor<T>& t) {
    if (t.tape == nullptr) throw ValueError("op: tensor has no tape");
    return *t.tape;
}

template <typename T>
void require_same_tape(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.tape != b.tape) throw ValueError("op: tensors belong to different tapes");
}

}  // namespace detail

/// 2D convolution over NCHW input with OIHW weights and per-channel bias.
/// Padding is "same-style": (k-1)/2 per axis (kernel sizes must be odd), and
/// the border is either zero-filled or mirrored without edge repetition.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride = 1,
                 Padding padding = Padding::zero) {
    detail::require_same_tape(x, weight);
    detail::require_same_tape(x, bias);
    Tape<T>& tape = detail::tape_of(x);
    const Shape xs = x.shape, ws = weight.shape;
    if (ws.c != xs.c) throw ValueError("conv2d: weight input channels mismatch");
    if (ws.h % 2 == 0 || ws.w % 2 == 0) throw ValueError("conv2d: kernel sizes must be odd");
    if (bias.shape.count() != static_cast<std::size_t>(ws.n))
        throw ValueError("conv2d: bias size must equal output channels");
    if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
    const int kh = ws.h, kw = ws.w, ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    const int oh = (xs.h + 2 * ph - kh) / stride + 1;
    const int ow = (xs.w + 2 * pw - kw) / stride + 1;
    if (oh < 1 || ow < 1) throw ValueError("conv2d: output would be empty");
    const Shape os{xs.n, ws.n, oh, ow};

    const auto map_index = [padding](int v, int n) -> int {
        if (v >= 0 && v < n) return v;
        return padding == Padding::reflect ? reflect_index(v, n) : -1;
    };

    std::vector<T> out(os.count());
    {
        std::span<const T> xv = tape.value_at(x.id);
        std::span<const T> wv = tape.value_at(weight.id);
        std::span<const T> bv = tape.value_at(bias.id);
        for (int n = 0; n < xs.n; ++n)
            for (int oc = 0; oc < os.c; ++oc) {
                T* op = out.data() + (static_cast<std::size_t>(n) * os.c + oc) * oh * ow;
                std::fill(op, op + static_cast<std::size_t>(oh) * ow, bv[oc]);
                for (int ic = 0; ic < xs.c; ++ic) {
                    const T* xp =
                        xv.data() + (static_cast<std::size_t>(n) * xs.c + ic) * xs.h * xs.w;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const T wgt =
                                wv[((static_cast<std::size_t>(oc) * xs.c + ic) * kh + ky) * kw + kx];
                            for (int oy = 0; oy < oh; ++oy) {
                                const int riy = map_index(oy * stride - ph + ky, xs.h);
                                if (riy < 0) continue;
                                const T* xrow = xp + static_cast<std::size_t>(riy) * xs.w;
                                T* orow = op + static_cast<std::size_t>(oy) * ow;
                                for (int ox = 0; ox < ow; ++ox) {
                                    const int rix = map_index(ox * stride - pw + kx, xs.w);
                                    if (rix >= 0) orow[ox] += xrow[rix] * wgt;
                                }
                            }
                        }
                }
            }
    }

    Tensor<T> out_t = tape.append(os, std::move(out));
    const std::size_t oid = out_t.id, xid = x.id, wid = weight.id, bid = bias.id;
    tape.set_pull(oid, [xid, wid, bid, oid, xs, os, kh, kw, ph, pw, stride,
                        map_index](Tape<T>& tp) {
        std::span<T> gout = tp.grad_at(oid);
        std::span<const T> xv = tp.value_at(xid);
        std::span<const T> wv = tp.value_at(wid);
        std::span<T> gx = tp.grad_at(xid);
        std::span<T> gw = tp.grad_at(wid);
        std::span<T> gb = tp.grad_at(bid);
        const int oh = os.h, ow = os.w;
        for (int n = 0; n < xs.n; ++n)
            for (int oc = 0; oc < os.c; ++oc) {
                const T* gop = gout.data() + (static_cast<std::size_t>(n) * os.c + oc) * oh * ow;
                T acc_b = 0;
                for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) acc_b += gop[i];
                gb[oc] += acc_b;
                for (int ic = 0; ic < xs.c; ++ic) {
                    const T* xp =
                        xv.data() + (static_cast<std::size_t>(n) * xs.c + ic) * xs.h * xs.w;
                    T* gxp = gx.data() + (static_cast<std::size_t>(n) * xs.c + ic) * xs.h * xs.w;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const std::size_t widx =
                                ((static_cast<std::size_t>(oc) * xs.c + ic) * kh + ky) * kw + kx;
                            const T wgt = wv[widx];
                            T acc_w = 0;
                            for (int oy = 0; oy < oh; ++oy) {
                                const int riy = map_index(oy * stride - ph + ky, xs.h);
                                if (riy < 0) continue;
                                const T* xrow = xp + static_cast<std::size_t>(riy) * xs.w;
                                T* gxrow = gxp + static_cast<std::size_t>(riy) * xs.w;
                                const T* gorow = gop + static_cast<std::size_t>(oy) * ow;
                                for (int ox = 0; ox < ow; ++ox) {
                                    const int rix = map_index(ox * stride - pw + kx, xs.w);
                                    if (rix < 0) continue;
                                    acc_w += xrow[rix] * gorow[ox];
                                    gxrow[rix] += wgt * gorow[ox];
                                }
                            }
                            gw[widx] += acc_w;
                        }
                }
            }
    });
    return out_t;
}

/// 2x2 max pooling with stride 2. Ties route the gradient to the first
/// maximal element in row-major window order. Spatial dims must be even.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
    Tape<T>& tape = detail::tape_of(x);
    const Shape xs = x.shape;
    if (xs.h % 2 != 0 || xs.w % 2 != 0) throw ValueError("maxpool2d: spatial dims must be even");
    const Shape os{xs.n, xs.c, xs.h / 2, xs.w / 2};
    std::vector<T> out(os.count());
    std::vector<std::uint32_t> argmax(os.count());
    std::span<const T> xv = tape.value_at(x.id);
    std::size_t o = 0;
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
            const std::size_t plane = (static_cast<std::size_t>(n) * xs.c + c) * xs.h * xs.w;
            for (int oy = 0; oy < os.h; ++oy)
                for (int ox = 0; ox < os.w; ++ox, ++o) {
                    T best{};
                    std::uint32_t best_at = 0;
                    bool first = true;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::size_t at =
                                plane + static_cast<std::size_t>(2 * oy + dy) * xs.w + (2 * ox + dx);
                            if (first || xv[at] > best) {
                                best = xv[at];
                                best_at = static_cast<std::uint32_t>(at);
                                first = false;
                            }
                        }
                    out[o] = best;
                    argmax[o] = best_at;
                }
        }
    Tensor<T> out_t = tape.append(os, std::move(out));
    const std::size_t oid = out_t.id, xid = x.id;
    tape.set_pull(oid, [oid, xid, argmax = std::move(argmax)](Tape<T>& tp) {
        std::span<T> gout = tp.grad_at(oid);
        std::span<T> gx = tp.grad_at(xid);
        for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += gout[i];
    });
    return out_t;
}

/// Nearest-neighbour 2x upsampling; backward sums the four child gradients.
template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
    Tape<T>& tape = detail::tape_of(x);
    const Shape xs = x.shape;
    const Shape os{xs.n, xs.c, xs.h * 2, xs.w * 2};
    std::vector<T> out(os.count());
    std::span<const T> xv = tape.value_at(x.id);
    for (int p = 0; p < xs.n * xs.c; ++p) {
        const T* xp = xv.data() + static_cast<std::size_t>(p) * xs.h * xs.w;
        T* op = out.data() + static_cast<std::size_t>(p) * os.h * os.w;
        for (int y = 0; y < xs.h; ++y)
            for (int x2 = 0; x2 < xs.w; ++x2) {
                const T v = xp[static_cast<std::size_t>(y) * xs.w + x2];
                T* row0 = op + static_cast<std::size_t>(2 * y) * os.w + 2 * x2;
                row0[0] = v;
                row0[1] = v;
                row0[os.w] = v;
                row0[os.w + 1] = v;
            }
    }
    Tensor<T> out_t = tape.append(os, std::move(out));
    const std::size_t oid = out_t.id, xid = x.id;
    tape.set_pull(oid, [oid, xid, xs, os](Tape<T>& tp) {
        std::span<T> gout = tp.grad_at(oid);
        std::span<T> gx = tp.grad_at(xid);
        for (int p = 0; p < xs.n * xs.c; ++p) {
            const T* gop = gout.data() + static_cast<std::size_t>(p) * os.h * os.w;
            T* gxp = gx.data() + static_cast<std::size_t>(p) * xs.h * xs.w;
            for (int y = 0; y < xs.h; ++y)
                for (int x2 = 0; x2 < xs.w; ++x2) {
                    const T* row0 = gop + static_cast<std::size_t>(2 * y) * os.w + 2 * x2;
                    gxp[static_cast<std::size_t>(y) * xs.w + x2] +=
                        row0[0] + row0[1] + row0[os.w] + row0[os.w + 1];
                }
        }
    });
    return out_t;
}

/// Concatenate along the channel axis; batch and spatial dims must agree.
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
    if (parts.empty()) throw ValueError("concat: no inputs");
    Tape<T>& tape = detail::tape_of(parts[0]);
    const Shape first = parts[0].shape;
    int total_c = 0;
    for (const Tensor<T>& p : parts) {
        detail::require_same_tape(parts[0], p);
        if (p.shape.n != first.n || p.shape.h != first.h || p.shape.w != first.w)
            throw ValueError("concat: batch/spatial shape mismatch");
        total_c += p.shape.c;
    }
    const Shape os{first.n, total_c, first.h, first.w};
    std::vector<T> out(os.count());
    const std::size_t hw = static_cast<std::size_t>(first.h) * first.w;
    std::vector<std::size_t> ids;
    std::vector<int> chans;
    for (const Tensor<T>& p : parts) {
        ids.push_back(p.id);
        chans.push_back(p.shape.c);
    }
    for (int n = 0; n < os.n; ++n) {
        std::size_t coff = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            std::span<const T> pv = tape.value_at(ids[k]);
            std::copy_n(pv.data() + static_cast<std::size_t>(n) * chans[k] * hw,
                        static_cast<std::size_t>(chans[k]) * hw,
                        out.data() + (static_cast<std::size_t>(n) * total_c + coff) * hw);
            coff += static_cast<std::size_t>(chans[k]);
        }
    }
    Tensor<T> out_t = tape.append(os, std::move(out));
    const std::size_t oid = out_t.id;
    const int on = os.n, oc = total_c;
    tape.set_pull(oid, [oid, ids = std::move(ids), chans = std::move(chans), on, oc,
                        hw](Tape<T>& tp) {
        std::span<T> gout = tp.grad_at(oid);
        for (int n = 0; n < on; ++n) {
            std::size_t coff = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                std::span<T> gp = tp.grad_at(ids[k]);
                const T* src = gout.data() + (static_cast<std::size_t>(n) * oc + coff) * hw;
                T* dst = gp.data() + static_cast<std::size_t>(n) * chans[k] * hw;
                for (std::size_t i = 0; i < static_cast<std::size_t>(chans[k]) * hw; ++i)
                    dst[i] += src[i];
                coff += static_cast<std::size_t>(chans[k]);
            }
        }
    });
    return out_t;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    const Tensor<T> parts[2] = {a, b};
    return concat_channels(std::span<const Tensor<T>>(parts, 2));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tape<T>& tape = detail::tape_of(x);
    std::span<const T> xv = tape.value_at(x.id);
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T{0} ? xv[i] : T{0};
    Tensor<T> out_t = tape.append(x.shape, std::move(out));
    const std::size_t oid = out_t.id, xid = x.id;
    tape.set_pull(oid, [oid, xid](Tape<T>& tp) {
        std::span<T> gout = tp.grad_at(oid);
        std::span<const T> xv2 = tp.value_at(xid);
        std::span<T> gx = tp.grad_at(xid);
        for (std::size_t i = 0; i < gout.size(); ++i)
            if (xv2[i] > T{0}) gx[i] += gout[i];
    });
    return out_t;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_tape(a, b);
    if (!(a.shape == b.shape)) throw ValueError("add: shape mismatch");
    Tape<T>& tape = detail::tape_of(a);
    std::span<const T> av = tape.value_at(a.id);
    std::span<const T> bv = tape.value_at(b.id);
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    Tensor<T> out_t = tape.append(a.shape, std::move(out));
    const std::size_t oid = out_t.id, aid = a.id, bid = b.id;
    tape.set_pull(oid, [oid, aid, bid](Tape<T>& tp) {
        std::span<T> gout = tp.grad_at(oid);
        std::span<T> ga = tp.grad_at(aid);
        std::span<T> gb = tp.grad_at(bid);
        for (std::size_t i = 0; i < gout.size(); ++i) {
            ga[i] += gout[i];
            gb[i] += gout[i];
        }
    });
    return out_t;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    Tape<T>& tape = detail::tape_of(a);
    std::span<const T> av = tape.value_at(a.id);
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
    Tensor<T> out_t = tape.append(a.shape, std::move(out));
    const std::size_t oid = out_t.id, aid = a.id;
    tape.set_pull(oid, [oid, aid, s](Tape<T>& tp) {
        std::span<T> gout = tp.grad_at(oid);
        std::span<T> ga = tp.grad_at(aid);
        for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += s * gout[i];
    });
    return out_t;
}

/// Mean squared error over masked-in elements:
///   L = sum_mask (pred - target)^2 / |mask|
/// target and mask are constants. An empty mask span means all-valid.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, std::span<const T> target,
                   std::span<const std::uint8_t> mask = {}) {
    Tape<T>& tape = detail::tape_of(pred);
    std::span<const T> pv = tape.value_at(pred.id);
    if (target.size() != pv.size()) throw ValueError("mse_loss: target size mismatch");
    if (!mask.empty() && mask.size() != pv.size()) throw ValueError("mse_loss: mask size mismatch");
    std::size_t cnt = 0;
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        const double d = static_cast<double>(pv[i]) - static_cast<double>(target[i]);
        acc += d * d;
        ++cnt;
    }
    if (cnt == 0) throw ValueError("mse_loss: mask excludes every element");
    Tensor<T> out_t =
        tape.append(Shape{1, 1, 1, 1}, {static_cast<T>(acc / static_cast<double>(cnt))});
    const std::size_t oid = out_t.id, pid = pred.id;
    tape.set_pull(oid, [oid, pid, target = std::vector<T>(target.begin(), target.end()),
                        mask = std::vector<std::uint8_t>(mask.begin(), mask.end()),
                        cnt](Tape<T>& tp) {
        const T g = tp.grad_at(oid)[0];
        std::span<const T> pv2 = tp.value_at(pid);
        std::span<T> gp = tp.grad_at(pid);
        const T gscale = g * T{2} / static_cast<T>(cnt);
        for (std::size_t i = 0; i < pv2.size(); ++i) {
            if (!mask.empty() && !mask[i]) continue;
            gp[i] += gscale * (pv2[i] - target[i]);
        }
    });
    return out_t;
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const std::vector<T>& target,
                   std::span<const std::uint8_t> mask = {}) {
    return mse_loss(pred, std::span<const T>(target), mask);
}

}  // namespace embedheight
