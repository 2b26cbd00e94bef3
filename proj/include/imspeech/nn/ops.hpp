#pragma once

// Differentiable primitives recorded on a Tape. Values are T (float for
// training, double for gradient verification); statistics over many
// elements are accumulated in double.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "../error.hpp"
#include "../rng.hpp"
#include "tape.hpp"

namespace imspeech::nn {

namespace kernels {

template <class T>
inline void axpy(T a, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// Eight independent partial sums so the loop vectorizes without reassociation.
template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
    T acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
    T s = T(0);
    for (std::size_t j = 0; j < 8; ++j) s += acc[j];
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

// Four 32-byte accumulators held in registers across the inner loop.
template <class T>
struct Vec {
    typedef T type __attribute__((vector_size(32)));
    static constexpr std::size_t lanes = 32 / sizeof(T);
    static type load(const T* p) {
        type v;
        std::memcpy(&v, p, sizeof v);
        return v;
    }
    static void store(T* p, const type& v) { std::memcpy(p, &v, sizeof v); }
};

/// out[c] += sum_k w[k] * in[c + k] for c < n.
template <class T>
inline void correlate_add(const T* in, const T* w, std::size_t kw, T* out, std::size_t n) {
    using V = Vec<T>;
    constexpr std::size_t E = V::lanes, L = 4 * E;
    std::size_t c = 0;
    for (; c + L <= n; c += L) {
        auto a0 = V::load(out + c), a1 = V::load(out + c + E), a2 = V::load(out + c + 2 * E),
             a3 = V::load(out + c + 3 * E);
        for (std::size_t k = 0; k < kw; ++k) {
            const T wk = w[k];
            const T* p = in + c + k;
            a0 += wk * V::load(p);
            a1 += wk * V::load(p + E);
            a2 += wk * V::load(p + 2 * E);
            a3 += wk * V::load(p + 3 * E);
        }
        V::store(out + c, a0);
        V::store(out + c + E, a1);
        V::store(out + c + 2 * E, a2);
        V::store(out + c + 3 * E, a3);
    }
    for (; c + E <= n; c += E) {
        auto a = V::load(out + c);
        for (std::size_t k = 0; k < kw; ++k) a += w[k] * V::load(in + c + k);
        V::store(out + c, a);
    }
    for (; c < n; ++c) {
        T a = out[c];
        for (std::size_t k = 0; k < kw; ++k) a += w[k] * in[c + k];
        out[c] = a;
    }
}

/// dw[k] += sum_c g[c] * in[c + k] for k < kw.
template <class T>
inline void correlate_grad(const T* g, const T* in, std::size_t n, T* dw, std::size_t kw) {
    using V = Vec<T>;
    constexpr std::size_t E = V::lanes, L = 4 * E;
    std::size_t k0 = 0;
    for (; k0 + L <= kw; k0 += L) {
        typename V::type a0 = {}, a1 = {}, a2 = {}, a3 = {};
        for (std::size_t c = 0; c < n; ++c) {
            const T gc = g[c];
            const T* p = in + c + k0;
            a0 += gc * V::load(p);
            a1 += gc * V::load(p + E);
            a2 += gc * V::load(p + 2 * E);
            a3 += gc * V::load(p + 3 * E);
        }
        for (std::size_t j = 0; j < E; ++j) {
            dw[k0 + j] += a0[j];
            dw[k0 + E + j] += a1[j];
            dw[k0 + 2 * E + j] += a2[j];
            dw[k0 + 3 * E + j] += a3[j];
        }
    }
    for (; k0 < kw; ++k0) dw[k0] += dot(g, in + k0, n);
}

/// correlate_add for four kernels over the same input row; each input load
/// feeds four accumulators.
template <class T>
inline void correlate_add4(const T* in, const T* const* w, std::size_t kw, T* const* out, std::size_t n) {
    using V = Vec<T>;
    constexpr std::size_t E = V::lanes, L = 2 * E;
    std::size_t c = 0;
    for (; c + L <= n; c += L) {
        typename V::type a[4][2];
        for (int q = 0; q < 4; ++q) {
            a[q][0] = V::load(out[q] + c);
            a[q][1] = V::load(out[q] + c + E);
        }
        for (std::size_t k = 0; k < kw; ++k) {
            const auto x0 = V::load(in + c + k), x1 = V::load(in + c + k + E);
            for (int q = 0; q < 4; ++q) {
                const T wk = w[q][k];
                a[q][0] += wk * x0;
                a[q][1] += wk * x1;
            }
        }
        for (int q = 0; q < 4; ++q) {
            V::store(out[q] + c, a[q][0]);
            V::store(out[q] + c + E, a[q][1]);
        }
    }
    if (c < n)
        for (int q = 0; q < 4; ++q) correlate_add(in + c, w[q], kw, out[q] + c, n - c);
}

/// correlate_grad for four output-gradient rows against the same input row.
template <class T>
inline void correlate_grad4(const T* const* g, const T* in, std::size_t n, T* const* dw, std::size_t kw) {
    using V = Vec<T>;
    constexpr std::size_t E = V::lanes, L = 2 * E;
    std::size_t k0 = 0;
    for (; k0 + L <= kw; k0 += L) {
        typename V::type a[4][2] = {};
        for (std::size_t c = 0; c < n; ++c) {
            const auto x0 = V::load(in + c + k0), x1 = V::load(in + c + k0 + E);
            for (int q = 0; q < 4; ++q) {
                const T gc = g[q][c];
                a[q][0] += gc * x0;
                a[q][1] += gc * x1;
            }
        }
        for (int q = 0; q < 4; ++q)
            for (std::size_t j = 0; j < E; ++j) {
                dw[q][k0 + j] += a[q][0][j];
                dw[q][k0 + E + j] += a[q][1][j];
            }
    }
    if (k0 < kw)
        for (int q = 0; q < 4; ++q) correlate_grad(g[q], in + k0, n, dw[q] + k0, kw - k0);
}

/// Double-precision sums with eight fixed-order partial accumulators.
template <class T>
inline double sum(const T* p, std::size_t n) {
    double acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t j = 0; j < 8; ++j) acc[j] += static_cast<double>(p[i + j]);
    double s = 0;
    for (std::size_t j = 0; j < 8; ++j) s += acc[j];
    for (; i < n; ++i) s += static_cast<double>(p[i]);
    return s;
}

template <class T>
inline double sum_sq_dev(const T* p, std::size_t n, double mu) {
    double acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t j = 0; j < 8; ++j) {
            const double d = static_cast<double>(p[i + j]) - mu;
            acc[j] += d * d;
        }
    double s = 0;
    for (std::size_t j = 0; j < 8; ++j) s += acc[j];
    for (; i < n; ++i) s += (static_cast<double>(p[i]) - mu) * (static_cast<double>(p[i]) - mu);
    return s;
}

template <class T>
inline double sum_prod(const T* a, const T* b, std::size_t n) {
    double acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t j = 0; j < 8; ++j) acc[j] += static_cast<double>(a[i + j]) * static_cast<double>(b[i + j]);
    double s = 0;
    for (std::size_t j = 0; j < 8; ++j) s += acc[j];
    for (; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

}  // namespace kernels

struct Padding {
    std::size_t top = 0, bottom = 0, left = 0, right = 0;

    static Padding valid() { return {}; }
    /// Keeps the spatial size; the extra sample for even kernels goes to the
    /// bottom/right.
    static Padding same(std::size_t kh, std::size_t kw) {
        return {(kh - 1) / 2, (kh - 1) - (kh - 1) / 2, (kw - 1) / 2, (kw - 1) - (kw - 1) / 2};
    }
};

namespace detail {

template <class T>
bool any_grad(const Tape<T>& tape, std::initializer_list<std::optional<Var>> vars) {
    for (const auto& v : vars)
        if (v && tape.needs_grad(*v)) return true;
    return false;
}

/// Copies an H x W plane into a zero-padded (H+top+bottom) x (W+left+right) buffer.
template <class T>
void pad_plane(const T* src, std::size_t H, std::size_t W, const Padding& pad, T* dst) {
    const std::size_t Wp = W + pad.left + pad.right, Hp = H + pad.top + pad.bottom;
    std::fill(dst, dst + Hp * Wp, T(0));
    for (std::size_t r = 0; r < H; ++r) std::copy(src + r * W, src + (r + 1) * W, dst + (r + pad.top) * Wp + pad.left);
}

}  // namespace detail

/// Grouped 2-D convolution. x [B, Ci, H, W], w [Co, Ci/groups, kh, kw],
/// optional bias [Co].
template <class T>
Var conv2d(Tape<T>& tape, Var x, Var w, std::optional<Var> bias, std::size_t groups, Padding pad) {
    const Shape xs = tape.shape(x), ws = tape.shape(w);
    require(xs.size() == 4 && ws.size() == 4, ErrorKind::Shape, "conv2d expects 4-D input and weight");
    const std::size_t B = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
    const std::size_t Co = ws[0], cig = ws[1], kh = ws[2], kw = ws[3];
    require(groups >= 1 && Ci % groups == 0 && Co % groups == 0 && cig == Ci / groups, ErrorKind::Shape,
            "conv2d channel/group mismatch: input " + shape_str(xs) + ", weight " + shape_str(ws));
    require(H + pad.top + pad.bottom >= kh && W + pad.left + pad.right >= kw, ErrorKind::Shape,
            "conv2d kernel larger than padded input " + shape_str(xs));
    if (bias) require(tape.shape(*bias) == Shape{Co}, ErrorKind::Shape, "conv2d bias must be [out_channels]");
    const std::size_t Hp = H + pad.top + pad.bottom, Wp = W + pad.left + pad.right;
    const std::size_t Ho = Hp - kh + 1, Wo = Wp - kw + 1;
    const std::size_t cog = Co / groups;

    const auto& xv = tape.value(x);
    const auto& wv = tape.value(w);
    std::vector<T> y(B * Co * Ho * Wo, T(0));
    std::vector<T> xp(Hp * Wp);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t ci = 0; ci < Ci; ++ci) {
            detail::pad_plane(xv.data() + (b * Ci + ci) * H * W, H, W, pad, xp.data());
            const std::size_t g = ci / cig, ii = ci % cig;
            std::size_t o = g * cog;
            for (; o + 4 <= (g + 1) * cog; o += 4)
                for (std::size_t r = 0; r < Ho; ++r)
                    for (std::size_t dy = 0; dy < kh; ++dy) {
                        const T* ws4[4];
                        T* ys4[4];
                        for (std::size_t q = 0; q < 4; ++q) {
                            ws4[q] = wv.data() + (((o + q) * cig + ii) * kh + dy) * kw;
                            ys4[q] = y.data() + (b * Co + o + q) * Ho * Wo + r * Wo;
                        }
                        kernels::correlate_add4(xp.data() + (r + dy) * Wp, ws4, kw, ys4, Wo);
                    }
            for (; o < (g + 1) * cog; ++o) {
                T* yp = y.data() + (b * Co + o) * Ho * Wo;
                for (std::size_t r = 0; r < Ho; ++r)
                    for (std::size_t dy = 0; dy < kh; ++dy)
                        kernels::correlate_add(xp.data() + (r + dy) * Wp, wv.data() + ((o * cig + ii) * kh + dy) * kw,
                                               kw, yp + r * Wo, Wo);
            }
        }
        if (bias)
            for (std::size_t o = 0; o < Co; ++o) {
                T* yp = y.data() + (b * Co + o) * Ho * Wo;
                const T bo = tape.value(*bias)[o];
                for (std::size_t i = 0; i < Ho * Wo; ++i) yp[i] += bo;
            }
    }

    const Var out{tape.size()};
    const bool ng = detail::any_grad(tape, {x, w, bias});
    return tape.record({B, Co, Ho, Wo}, std::move(y), ng, [=](Tape<T>& tp) {
        const auto& dyv = tp.grad(out);
        const auto& xv = tp.value(x);
        const auto& wv = tp.value(w);
        const bool gx = tp.needs_grad(x), gw = tp.needs_grad(w);
        T* dx_all = gx ? tp.grad(x).data() : nullptr;
        T* dw_all = gw ? tp.grad(w).data() : nullptr;
        if (bias && tp.needs_grad(*bias)) {
            auto& db = tp.grad(*bias);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t o = 0; o < Co; ++o) {
                    const T* d = dyv.data() + (b * Co + o) * Ho * Wo;
                    double s = 0;
                    for (std::size_t i = 0; i < Ho * Wo; ++i) s += d[i];
                    db[o] += static_cast<T>(s);
                }
        }
        if (!gx && !gw) return;
        // Input gradient: each output row ro feeds padded input rows ro..ro+kh-1
        // through a full correlation with the column-flipped kernel row.
        const std::size_t Wq = Wo + 2 * (kw - 1);
        std::vector<T> xp(Hp * Wp), dxp(gx ? Hp * Wp : 0), dq(gx ? Ho * Wq : 0), wflip(gx ? kh * kw : 0);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t ci = 0; ci < Ci; ++ci) {
                const std::size_t g = ci / cig, ii = ci % cig;
                if (gw) detail::pad_plane(xv.data() + (b * Ci + ci) * H * W, H, W, pad, xp.data());
                if (gx) std::fill(dxp.begin(), dxp.end(), T(0));
                std::size_t o4 = g * cog;
                if (gw)
                    for (; o4 + 4 <= (g + 1) * cog; o4 += 4)
                        for (std::size_t r = 0; r < Ho; ++r)
                            for (std::size_t dy = 0; dy < kh; ++dy) {
                                const T* gs4[4];
                                T* dws4[4];
                                for (std::size_t q = 0; q < 4; ++q) {
                                    gs4[q] = dyv.data() + (b * Co + o4 + q) * Ho * Wo + r * Wo;
                                    dws4[q] = dw_all + ((o4 + q) * cig + ii) * kh * kw + dy * kw;
                                }
                                kernels::correlate_grad4(gs4, xp.data() + (r + dy) * Wp, Wo, dws4, kw);
                            }
                for (std::size_t o = g * cog; o < (g + 1) * cog; ++o) {
                    const T* dp = dyv.data() + (b * Co + o) * Ho * Wo;
                    const std::size_t woff = (o * cig + ii) * kh * kw;
                    if (gw && o >= o4)
                        for (std::size_t r = 0; r < Ho; ++r)
                            for (std::size_t dy = 0; dy < kh; ++dy)
                                kernels::correlate_grad(dp + r * Wo, xp.data() + (r + dy) * Wp, Wo,
                                                        dw_all + woff + dy * kw, kw);
                    if (gx) {
                        detail::pad_plane(dp, Ho, Wo, Padding{0, 0, kw - 1, kw - 1}, dq.data());
                        for (std::size_t dy = 0; dy < kh; ++dy)
                            for (std::size_t k = 0; k < kw; ++k) wflip[dy * kw + k] = wv[woff + dy * kw + kw - 1 - k];
                        for (std::size_t ro = 0; ro < Ho; ++ro)
                            for (std::size_t dy = 0; dy < kh; ++dy)
                                kernels::correlate_add(dq.data() + ro * Wq, wflip.data() + dy * kw, kw,
                                                       dxp.data() + (ro + dy) * Wp, Wp);
                    }
                }
                if (gx) {
                    T* dxc = dx_all + (b * Ci + ci) * H * W;
                    for (std::size_t r = 0; r < H; ++r)
                        for (std::size_t c = 0; c < W; ++c) dxc[r * W + c] += dxp[(r + pad.top) * Wp + c + pad.left];
                }
            }
        }
    });
}

/// Batch normalization over every axis except axis 1 (features/channels).
/// In training mode batch statistics are used and the running estimates
/// (unbiased variance) are updated in place.
template <class T>
Var batch_norm(Tape<T>& tape, Var x, Var gamma, Var beta, std::vector<T>& running_mean, std::vector<T>& running_var,
               bool train, double momentum, double eps) {
    const Shape xs = tape.shape(x);
    require(xs.size() >= 2, ErrorKind::Shape, "batch_norm expects at least 2-D input");
    const std::size_t B = xs[0], C = xs[1];
    const std::size_t inner = numel(xs) / (B * C);
    const std::size_t M = B * inner;
    require(tape.shape(gamma) == Shape{C} && tape.shape(beta) == Shape{C}, ErrorKind::Shape,
            "batch_norm affine parameters must be [" + std::to_string(C) + "]");
    require(running_mean.size() == C && running_var.size() == C, ErrorKind::Shape, "batch_norm running stats size");
    if (train) require(M >= 2, ErrorKind::Shape, "batch_norm needs more than one value per feature in training");

    const auto& xv = tape.value(x);
    std::vector<double> mean(C), inv_std(C);
    for (std::size_t c = 0; c < C; ++c) {
        if (train) {
            double s = 0, ss = 0;
            for (std::size_t b = 0; b < B; ++b) s += kernels::sum(xv.data() + (b * C + c) * inner, inner);
            const double mu = s / static_cast<double>(M);
            for (std::size_t b = 0; b < B; ++b) ss += kernels::sum_sq_dev(xv.data() + (b * C + c) * inner, inner, mu);
            const double var = ss / static_cast<double>(M);
            mean[c] = mu;
            inv_std[c] = 1.0 / std::sqrt(var + eps);
            running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mu);
            running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] +
                                            momentum * ss / static_cast<double>(M - 1));
        } else {
            mean[c] = running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps);
        }
    }
    const auto& gv = tape.value(gamma);
    const auto& bv = tape.value(beta);
    std::vector<T> y(xv.size()), xhat(xv.size());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (b * C + c) * inner;
            const T m = static_cast<T>(mean[c]), is = static_cast<T>(inv_std[c]), ga = gv[c], be = bv[c];
            for (std::size_t i = 0; i < inner; ++i) {
                const T h = (xv[off + i] - m) * is;
                xhat[off + i] = h;
                y[off + i] = ga * h + be;
            }
        }

    const Var out{tape.size()};
    const bool ng = detail::any_grad(tape, {x, gamma, beta});
    return tape.record(xs, std::move(y), ng,
                       [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& tp) {
        const auto& dy = tp.grad(out);
        std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t off = (b * C + c) * inner;
                sum_dy[c] += kernels::sum(dy.data() + off, inner);
                sum_dy_xhat[c] += kernels::sum_prod(dy.data() + off, xhat.data() + off, inner);
            }
        if (tp.needs_grad(gamma)) {
            auto& dg = tp.grad(gamma);
            for (std::size_t c = 0; c < C; ++c) dg[c] += static_cast<T>(sum_dy_xhat[c]);
        }
        if (tp.needs_grad(beta)) {
            auto& db = tp.grad(beta);
            for (std::size_t c = 0; c < C; ++c) db[c] += static_cast<T>(sum_dy[c]);
        }
        if (!tp.needs_grad(x)) return;
        auto& dx = tp.grad(x);
        const auto& gv = tp.value(gamma);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t off = (b * C + c) * inner;
                const T k = static_cast<T>(gv[c] * inv_std[c]);
                if (train) {
                    const T md = static_cast<T>(sum_dy[c] / static_cast<double>(M));
                    const T mdx = static_cast<T>(sum_dy_xhat[c] / static_cast<double>(M));
                    for (std::size_t i = 0; i < inner; ++i) dx[off + i] += k * (dy[off + i] - md - xhat[off + i] * mdx);
                } else {
                    for (std::size_t i = 0; i < inner; ++i) dx[off + i] += k * dy[off + i];
                }
            }
    });
}

template <class T>
Var elu(Tape<T>& tape, Var x, double alpha) {
    const auto& xv = tape.value(x);
    std::vector<T> y(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i)
        y[i] = xv[i] > T(0) ? xv[i] : static_cast<T>(alpha * std::expm1(static_cast<double>(xv[i])));
    const Var out{tape.size()};
    return tape.record(tape.shape(x), std::move(y), tape.needs_grad(x), [=](Tape<T>& tp) {
        const auto& dy = tp.grad(out);
        const auto& yv = tp.value(out);
        const auto& xv = tp.value(x);
        auto& dx = tp.grad(x);
        for (std::size_t i = 0; i < dx.size(); ++i)
            dx[i] += xv[i] > T(0) ? dy[i] : dy[i] * (yv[i] + static_cast<T>(alpha));
    });
}

/// Average pooling over the last two axes with non-overlapping windows;
/// trailing samples that do not fill a window are dropped.
template <class T>
Var avg_pool2d(Tape<T>& tape, Var x, std::size_t ph, std::size_t pw) {
    const Shape xs = tape.shape(x);
    require(xs.size() == 4, ErrorKind::Shape, "avg_pool2d expects 4-D input");
    const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    require(ph >= 1 && pw >= 1 && H / ph >= 1 && W / pw >= 1, ErrorKind::Shape,
            "pool window " + std::to_string(ph) + "x" + std::to_string(pw) + " exceeds input " + shape_str(xs));
    const std::size_t Ho = H / ph, Wo = W / pw;
    const auto& xv = tape.value(x);
    std::vector<T> y(B * C * Ho * Wo);
    const double inv = 1.0 / static_cast<double>(ph * pw);
    for (std::size_t p = 0; p < B * C; ++p)
        for (std::size_t r = 0; r < Ho; ++r)
            for (std::size_t c = 0; c < Wo; ++c) {
                double s = 0;
                for (std::size_t i = 0; i < ph; ++i)
                    for (std::size_t j = 0; j < pw; ++j) s += xv[(p * H + r * ph + i) * W + c * pw + j];
                y[(p * Ho + r) * Wo + c] = static_cast<T>(s * inv);
            }
    const Var out{tape.size()};
    return tape.record({B, C, Ho, Wo}, std::move(y), tape.needs_grad(x), [=](Tape<T>& tp) {
        const auto& dy = tp.grad(out);
        auto& dx = tp.grad(x);
        for (std::size_t p = 0; p < B * C; ++p)
            for (std::size_t r = 0; r < Ho; ++r)
                for (std::size_t c = 0; c < Wo; ++c) {
                    const T g = static_cast<T>(dy[(p * Ho + r) * Wo + c] * inv);
                    for (std::size_t i = 0; i < ph; ++i)
                        for (std::size_t j = 0; j < pw; ++j) dx[(p * H + r * ph + i) * W + c * pw + j] += g;
                }
    });
}

/// Inverted dropout: kept values are scaled by 1/(1-p) so evaluation is the
/// identity.
template <class T>
Var dropout(Tape<T>& tape, Var x, double p, bool train, Rng& rng) {
    require(p >= 0.0 && p < 1.0, ErrorKind::InvalidParameter, "dropout p must lie in [0, 1)");
    if (!train || p == 0.0) return x;
    const auto& xv = tape.value(x);
    std::vector<T> mask(xv.size()), y(xv.size());
    const T keep = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < xv.size(); ++i) {
        mask[i] = rng.uniform() >= p ? keep : T(0);
        y[i] = xv[i] * mask[i];
    }
    const Var out{tape.size()};
    return tape.record(tape.shape(x), std::move(y), tape.needs_grad(x), [=, mask = std::move(mask)](Tape<T>& tp) {
        const auto& dy = tp.grad(out);
        auto& dx = tp.grad(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * mask[i];
    });
}

template <class T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
    require(numel(shape) == numel(tape.shape(x)), ErrorKind::Shape,
            "cannot reshape " + shape_str(tape.shape(x)) + " to " + shape_str(shape));
    const Var out{tape.size()};
    return tape.record(std::move(shape), tape.value(x), tape.needs_grad(x), [=](Tape<T>& tp) {
        const auto& dy = tp.grad(out);
        auto& dx = tp.grad(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    });
}

/// [B, C, 1, T] feature map -> [B, T, C] token sequence.
template <class T>
Var to_tokens(Tape<T>& tape, Var x) {
    const Shape xs = tape.shape(x);
    require(xs.size() == 4 && xs[2] == 1, ErrorKind::Shape, "to_tokens expects [B, C, 1, T], got " + shape_str(xs));
    const std::size_t B = xs[0], C = xs[1], N = xs[3];
    const auto& xv = tape.value(x);
    std::vector<T> y(xv.size());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < N; ++t) y[(b * N + t) * C + c] = xv[(b * C + c) * N + t];
    const Var out{tape.size()};
    return tape.record({B, N, C}, std::move(y), tape.needs_grad(x), [=](Tape<T>& tp) {
        const auto& dy = tp.grad(out);
        auto& dx = tp.grad(x);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < N; ++t) dx[(b * C + c) * N + t] += dy[(b * N + t) * C + c];
    });
}

/// a + b where b's shape equals a trailing suffix of a's shape (b is
/// broadcast over the leading axes).
template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
    const Shape as = tape.shape(a), bs = tape.shape(b);
    require(bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin()), ErrorKind::Shape,
            "cannot broadcast " + shape_str(bs) + " onto " + shape_str(as));
    const std::size_t nb = numel(bs);
    std::vector<T> y = tape.value(a);
    const auto& bv = tape.value(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i % nb];
    const Var out{tape.size()};
    return tape.record(as, std::move(y), detail::any_grad(tape, {a, b}), [=](Tape<T>& tp) {
        const auto& dy = tp.grad(out);
        if (tp.needs_grad(a)) {
            auto& da = tp.grad(a);
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
        }
        if (tp.needs_grad(b)) {
            auto& db = tp.grad(b);
            for (std::size_t i = 0; i < dy.size(); ++i) db[i % nb] += dy[i];
        }
    });
}

/// Affine map over the last axis: y = x W^T + b, W [out, in].
template <class T>
Var linear(Tape<T>& tape, Var x, Var w, std::optional<Var> bias) {
    const Shape xs = tape.shape(x), ws = tape.shape(w);
    require(ws.size() == 2 && !xs.empty() && xs.back() == ws[1], ErrorKind::Shape,
            "linear: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
    const std::size_t in = ws[1], outd = ws[0], rows = numel(xs) / in;
    if (bias) require(tape.shape(*bias) == Shape{outd}, ErrorKind::Shape, "linear bias must be [out]");
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(w);
    std::vector<T> y(rows * outd);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < outd; ++o)
            y[r * outd + o] = kernels::dot(xv.data() + r * in, wv.data() + o * in, in) +
                              (bias ? tape.value(*bias)[o] : T(0));
    Shape ys = xs;
    ys.back() = outd;
    const Var out{tape.size()};
    return tape.record(std::move(ys), std::move(y), detail::any_grad(tape, {x, w, bias}), [=](Tape<T>& tp) {
        const auto& dy = tp.grad(out);
        const auto& xv = tp.value(x);
        const auto& wv = tp.value(w);
        if (tp.needs_grad(w)) {
            auto& dw = tp.grad(w);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < outd; ++o) kernels::axpy(dy[r * outd + o], xv.data() + r * in, dw.data() + o * in, in);
        }
        if (bias && tp.needs_grad(*bias)) {
            auto& db = tp.grad(*bias);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < outd; ++o) db[o] += dy[r * outd + o];
        }
        if (tp.needs_grad(x)) {
            auto& dx = tp.grad(x);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < outd; ++o) kernels::axpy(dy[r * outd + o], wv.data() + o * in, dx.data() + r * in, in);
        }
    });
}

/// Normalizes each row over the last axis, then applies gamma/beta.
template <class T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, double eps) {
    const Shape xs = tape.shape(x);
    const std::size_t d = xs.back(), rows = numel(xs) / d;
    require(tape.shape(gamma) == Shape{d} && tape.shape(beta) == Shape{d}, ErrorKind::Shape,
            "layer_norm affine parameters must be [" + std::to_string(d) + "]");
    const auto& xv = tape.value(x);
    const auto& gv = tape.value(gamma);
    const auto& bv = tape.value(beta);
    std::vector<T> y(xv.size()), xhat(xv.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* p = xv.data() + r * d;
        double s = 0, ss = 0;
        for (std::size_t i = 0; i < d; ++i) s += p[i];
        const double mu = s / static_cast<double>(d);
        for (std::size_t i = 0; i < d; ++i) ss += (p[i] - mu) * (p[i] - mu);
        inv_std[r] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
        for (std::size_t i = 0; i < d; ++i) {
            xhat[r * d + i] = static_cast<T>((p[i] - mu) * inv_std[r]);
            y[r * d + i] = gv[i] * xhat[r * d + i] + bv[i];
        }
    }
    const Var out{tape.size()};
    return tape.record(xs, std::move(y), detail::any_grad(tape, {x, gamma, beta}),
                       [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& tp) {
        const auto& dy = tp.grad(out);
        const auto& gv = tp.value(gamma);
        if (tp.needs_grad(gamma) || tp.needs_grad(beta)) {
            auto& dg = tp.grad(gamma);
            auto& db = tp.grad(beta);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < d; ++i) {
                    dg[i] += dy[r * d + i] * xhat[r * d + i];
                    db[i] += dy[r * d + i];
                }
        }
        if (!tp.needs_grad(x)) return;
        auto& dx = tp.grad(x);
        for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0, m2 = 0;
            for (std::size_t i = 0; i < d; ++i) {
                const double g = static_cast<double>(dy[r * d + i]) * gv[i];
                m1 += g;
                m2 += g * xhat[r * d + i];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t i = 0; i < d; ++i) {
                const double g = static_cast<double>(dy[r * d + i]) * gv[i];
                dx[r * d + i] += static_cast<T>(inv_std[r] * (g - m1 - xhat[r * d + i] * m2));
            }
        }
    });
}

/// Softmax over the last axis.
template <class T>
Var softmax(Tape<T>& tape, Var x) {
    const Shape xs = tape.shape(x);
    const std::size_t d = xs.back(), rows = numel(xs) / d;
    const auto& xv = tape.value(x);
    std::vector<T> y(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* p = xv.data() + r * d;
        const double mx = *std::max_element(p, p + d);
        double s = 0;
        for (std::size_t i = 0; i < d; ++i) s += std::exp(p[i] - mx);
        for (std::size_t i = 0; i < d; ++i) y[r * d + i] = static_cast<T>(std::exp(p[i] - mx) / s);
    }
    const Var out{tape.size()};
    return tape.record(xs, std::move(y), tape.needs_grad(x), [=](Tape<T>& tp) {
        const auto& dy = tp.grad(out);
        const auto& yv = tp.value(out);
        auto& dx = tp.grad(x);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0;
            for (std::size_t i = 0; i < d; ++i) dot += static_cast<double>(dy[r * d + i]) * yv[r * d + i];
            for (std::size_t i = 0; i < d; ++i) dx[r * d + i] += static_cast<T>(yv[r * d + i] * (dy[r * d + i] - dot));
        }
    });
}

/// Mean cross-entropy of softmax(logits) against integer labels; the result
/// is a scalar of shape [1].
template <class T>
Var cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels) {
    const Shape ls = tape.shape(logits);
    require(ls.size() == 2 && ls[0] == labels.size(), ErrorKind::Shape, "cross_entropy expects [batch x classes] logits");
    const std::size_t B = ls[0], K = ls[1];
    const auto& zv = tape.value(logits);
    std::vector<T> probs(B * K);
    double loss = 0;
    for (std::size_t b = 0; b < B; ++b) {
        require(labels[b] >= 0 && static_cast<std::size_t>(labels[b]) < K, ErrorKind::InvalidLabel, "label out of range");
        const T* z = zv.data() + b * K;
        const double mx = *std::max_element(z, z + K);
        double s = 0;
        for (std::size_t k = 0; k < K; ++k) s += std::exp(z[k] - mx);
        for (std::size_t k = 0; k < K; ++k) probs[b * K + k] = static_cast<T>(std::exp(z[k] - mx) / s);
        loss += -(z[labels[b]] - mx - std::log(s));
    }
    loss /= static_cast<double>(B);
    std::vector<int> lab(labels.begin(), labels.end());
    const Var out{tape.size()};
    return tape.record({1}, {static_cast<T>(loss)}, tape.needs_grad(logits),
                       [=, probs = std::move(probs), lab = std::move(lab)](Tape<T>& tp) {
        const T g = tp.grad(out)[0] / static_cast<T>(B);
        auto& dz = tp.grad(logits);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t k = 0; k < K; ++k)
                dz[b * K + k] += g * (probs[b * K + k] - (static_cast<int>(k) == lab[b] ? T(1) : T(0)));
    });
}

/// sum_i x_i * c_i as a scalar [1]; used to reduce arbitrary outputs for
/// gradient checks.
template <class T>
Var weighted_sum(Tape<T>& tape, Var x, std::vector<T> coeffs) {
    const auto& xv = tape.value(x);
    require(coeffs.size() == xv.size(), ErrorKind::Shape, "weighted_sum coefficient length mismatch");
    double s = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) s += static_cast<double>(xv[i]) * coeffs[i];
    const Var out{tape.size()};
    return tape.record({1}, {static_cast<T>(s)}, tape.needs_grad(x), [=, c = std::move(coeffs)](Tape<T>& tp) {
        const T g = tp.grad(out)[0];
        auto& dx = tp.grad(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * c[i];
    });
}

// ---------------------------------------------------------------------------
// Multi-head self-attention

template <class T>
struct AttentionWeights {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;  // W: [d x d] (y = W x + b), b: [d]
};

template <class T>
struct AttentionCache {
    std::vector<T> q, k, v;    // [B, N, d]
    std::vector<T> probs;      // [B, heads, N, N]
    std::vector<T> context;    // [B, N, d], heads concatenated
};

namespace detail {

// y[r, :] = W x[r, :] + b for rows r; W [d_out x d_in].
template <class T>
void affine_rows(const T* x, const T* w, const T* b, T* y, std::size_t rows, std::size_t din, std::size_t dout) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < dout; ++o) y[r * dout + o] = kernels::dot(x + r * din, w + o * din, din) + b[o];
}

template <class T>
std::vector<T> attention_forward(const std::vector<T>& x, std::size_t B, std::size_t N, std::size_t d,
                                 std::size_t heads, const T* wq, const T* bq, const T* wk, const T* bk, const T* wv,
                                 const T* bv, const T* wo, const T* bo, AttentionCache<T>& cache) {
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    cache.q.assign(B * N * d, T(0));
    cache.k.assign(B * N * d, T(0));
    cache.v.assign(B * N * d, T(0));
    affine_rows(x.data(), wq, bq, cache.q.data(), B * N, d, d);
    affine_rows(x.data(), wk, bk, cache.k.data(), B * N, d, d);
    affine_rows(x.data(), wv, bv, cache.v.data(), B * N, d, d);
    cache.probs.assign(B * heads * N * N, T(0));
    cache.context.assign(B * N * d, T(0));
    std::vector<double> row(N);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h) {
            T* P = cache.probs.data() + (b * heads + h) * N * N;
            for (std::size_t i = 0; i < N; ++i) {
                const T* qi = cache.q.data() + (b * N + i) * d + h * dh;
                double mx = -INFINITY;
                for (std::size_t j = 0; j < N; ++j) {
                    const T* kj = cache.k.data() + (b * N + j) * d + h * dh;
                    double s = 0;
                    for (std::size_t e = 0; e < dh; ++e) s += static_cast<double>(qi[e]) * kj[e];
                    row[j] = s * scale;
                    mx = std::max(mx, row[j]);
                }
                double z = 0;
                for (std::size_t j = 0; j < N; ++j) z += (row[j] = std::exp(row[j] - mx));
                for (std::size_t j = 0; j < N; ++j) P[i * N + j] = static_cast<T>(row[j] / z);
                T* ci = cache.context.data() + (b * N + i) * d + h * dh;
                for (std::size_t j = 0; j < N; ++j)
                    kernels::axpy(P[i * N + j], cache.v.data() + (b * N + j) * d + h * dh, ci, dh);
            }
        }
    std::vector<T> y(B * N * d);
    affine_rows(cache.context.data(), wo, bo, y.data(), B * N, d, d);
    return y;
}

}  // namespace detail

/// Standalone attention on a [tokens x d_model] sequence:
/// softmax(Q_h K_h^T / sqrt(d_head)) V_h per head, heads concatenated and
/// projected by Wo.
template <class T>
Tensor<T> mha_forward(const Tensor<T>& x, const AttentionWeights<T>& w, std::size_t heads,
                      std::vector<T>* attention_probs = nullptr) {
    require(x.rank() == 2, ErrorKind::Shape, "mha_forward expects [tokens x d_model]");
    const std::size_t N = x.dim(0), d = x.dim(1);
    require(heads >= 1 && d % heads == 0, ErrorKind::InvalidParameter,
            "d_model " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
    AttentionCache<T> cache;
    auto y = detail::attention_forward(x.data, 1, N, d, heads, w.wq.data.data(), w.bq.data.data(), w.wk.data.data(),
                                       w.bk.data.data(), w.wv.data.data(), w.bv.data.data(), w.wo.data.data(),
                                       w.bo.data.data(), cache);
    if (attention_probs) *attention_probs = cache.probs;
    return Tensor<T>({N, d}, std::move(y));
}

/// Recorded self-attention over x [B, N, d]. `params` holds the tape
/// variables in the order wq, bq, wk, bk, wv, bv, wo, bo.
template <class T>
Var multi_head_attention(Tape<T>& tape, Var x, const std::array<Var, 8>& params, std::size_t heads) {
    const Shape xs = tape.shape(x);
    require(xs.size() == 3, ErrorKind::Shape, "attention expects [B, tokens, d_model], got " + shape_str(xs));
    const std::size_t B = xs[0], N = xs[1], d = xs[2];
    require(heads >= 1 && d % heads == 0, ErrorKind::InvalidParameter,
            "d_model " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
    for (std::size_t i = 0; i < 8; ++i)
        require(tape.shape(params[i]) == (i % 2 == 0 ? Shape{d, d} : Shape{d}), ErrorKind::Shape,
                "attention parameter " + std::to_string(i) + " has wrong shape");
    auto val = [&](std::size_t i) { return tape.value(params[i]).data(); };
    auto cache = std::make_shared<AttentionCache<T>>();
    auto y = detail::attention_forward(tape.value(x), B, N, d, heads, val(0), val(1), val(2), val(3), val(4), val(5),
                                       val(6), val(7), *cache);
    bool ng = tape.needs_grad(x);
    for (const auto& p : params) ng = ng || tape.needs_grad(p);
    const Var out{tape.size()};
    return tape.record(xs, std::move(y), ng, [=](Tape<T>& tp) {
        const std::size_t dh = d / heads;
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        const std::size_t rows = B * N;
        const auto& dy = tp.grad(out);
        const auto& xv = tp.value(x);
        auto pval = [&](std::size_t i) { return tp.value(params[i]).data(); };
        auto pgrad = [&](std::size_t i) -> T* { return tp.needs_grad(params[i]) ? tp.grad(params[i]).data() : nullptr; };

        // Output projection.
        std::vector<T> dctx(rows * d, T(0));
        if (T* dwo = pgrad(6))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < d; ++o) kernels::axpy(dy[r * d + o], cache->context.data() + r * d, dwo + o * d, d);
        if (T* dbo = pgrad(7))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < d; ++o) dbo[o] += dy[r * d + o];
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < d; ++o) kernels::axpy(dy[r * d + o], pval(6) + o * d, dctx.data() + r * d, d);

        // Attention per head.
        std::vector<T> dq(rows * d, T(0)), dk(rows * d, T(0)), dv(rows * d, T(0));
        std::vector<double> dp(N);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t h = 0; h < heads; ++h) {
                const T* P = cache->probs.data() + (b * heads + h) * N * N;
                for (std::size_t i = 0; i < N; ++i) {
                    const T* dci = dctx.data() + (b * N + i) * d + h * dh;
                    double dot = 0;
                    for (std::size_t j = 0; j < N; ++j) {
                        const T* vj = cache->v.data() + (b * N + j) * d + h * dh;
                        dp[j] = 0;
                        for (std::size_t e = 0; e < dh; ++e) dp[j] += static_cast<double>(dci[e]) * vj[e];
                        dot += dp[j] * P[i * N + j];
                        kernels::axpy(P[i * N + j], dci, dv.data() + (b * N + j) * d + h * dh, dh);
                    }
                    const T* qi = cache->q.data() + (b * N + i) * d + h * dh;
                    T* dqi = dq.data() + (b * N + i) * d + h * dh;
                    for (std::size_t j = 0; j < N; ++j) {
                        const T ds = static_cast<T>(P[i * N + j] * (dp[j] - dot)) * scale;
                        kernels::axpy(ds, cache->k.data() + (b * N + j) * d + h * dh, dqi, dh);
                        kernels::axpy(ds, qi, dk.data() + (b * N + j) * d + h * dh, dh);
                    }
                }
            }

        // Input projections.
        const std::vector<T>* dproj[3] = {&dq, &dk, &dv};
        T* dx = tp.needs_grad(x) ? tp.grad(x).data() : nullptr;
        for (std::size_t m = 0; m < 3; ++m) {
            const auto& g = *dproj[m];
            if (T* dw = pgrad(2 * m))
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t o = 0; o < d; ++o) kernels::axpy(g[r * d + o], xv.data() + r * d, dw + o * d, d);
            if (T* db = pgrad(2 * m + 1))
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t o = 0; o < d; ++o) db[o] += g[r * d + o];
            if (dx)
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t o = 0; o < d; ++o) kernels::axpy(g[r * d + o], pval(2 * m) + o * d, dx + r * d, d);
        }
    });
}

}  // namespace imspeech::nn
