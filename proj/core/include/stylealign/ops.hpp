#pragma once

// Op vocabulary for the autodiff engine. Every VJP is expressed through the
// same ops, so gradient graphs are themselves differentiable wherever the
// chain is symbolic. The conv trio (conv2d / conv_dgrad / conv_wgrad) closes
// under differentiation: each op's VJPs are the other two with arguments
// swapped, which is what makes the R1 penalty's double backward work.

#include <cmath>
#include <cstring>

#include "stylealign/autodiff.hpp"
#include "stylealign/gemm.hpp"
#include "stylealign/tensor.hpp"
#include "stylealign/thread_pool.hpp"

namespace stylealign {

// Ops reference one another inside VJP closures; declare the vocabulary up
// front so each definition can appear once below.
template <typename T> Var<T> add(const Var<T>&, const Var<T>&);
template <typename T> Var<T> sub(const Var<T>&, const Var<T>&);
template <typename T> Var<T> mul(const Var<T>&, const Var<T>&);
template <typename T> Var<T> scale(const Var<T>&, double);
template <typename T> Var<T> add_scalar(const Var<T>&, double);
template <typename T> Var<T> mul_scalar_var(const Var<T>&, const Var<T>&);
template <typename T> Var<T> dot_all(const Var<T>&, const Var<T>&);
template <typename T> Var<T> square(const Var<T>&);
template <typename T> Var<T> rsqrt_eps(const Var<T>&, double);
template <typename T> Var<T> leaky_relu(const Var<T>&, double);
template <typename T> Var<T> masked_scale(const Var<T>&, const Tensor<T>&, double);
template <typename T> Var<T> tanh_op(const Var<T>&);
template <typename T> Var<T> sigmoid(const Var<T>&);
template <typename T> Var<T> softplus(const Var<T>&);
template <typename T> Var<T> reshape(const Var<T>&, Shape);
template <typename T> Var<T> transpose2d(const Var<T>&);
template <typename T> Var<T> matmul(const Var<T>&, const Var<T>&);
template <typename T> Var<T> matmul_tt(const Var<T>&, const Var<T>&, bool, bool);
template <typename T> Var<T> sum_all(const Var<T>&);
template <typename T> Var<T> broadcast_fill(const Var<T>&, Shape);
template <typename T> Var<T> mean_all(const Var<T>&);
template <typename T> Var<T> sum_hw(const Var<T>&);
template <typename T> Var<T> broadcast_hw(const Var<T>&, int64_t, int64_t);
template <typename T> Var<T> sum_axis0(const Var<T>&);
template <typename T> Var<T> broadcast_axis0(const Var<T>&, int64_t);
template <typename T> Var<T> sum_keep_c(const Var<T>&);
template <typename T> Var<T> broadcast_from_c(const Var<T>&, int64_t, int64_t, int64_t);
template <typename T> Var<T> mul_channelwise(const Var<T>&, const Var<T>&);
template <typename T> Var<T> add_bias_channel(const Var<T>&, const Var<T>&);
template <typename T> Var<T> add_bias_row(const Var<T>&, const Var<T>&);
template <typename T> Var<T> conv2d(const Var<T>&, const Var<T>&, int stride = 1, int pad = 1);
template <typename T> Var<T> conv_dgrad(const Var<T>&, const Var<T>&, int64_t, int64_t, int, int);
template <typename T> Var<T> conv_wgrad(const Var<T>&, const Var<T>&, int64_t, int64_t, int, int);
template <typename T> Var<T> avgpool2(const Var<T>&);
template <typename T> Var<T> upsample2(const Var<T>&);
template <typename T> Var<T> add_scaled_hw(const Var<T>&, const Tensor<T>&, const Var<T>&);
template <typename T> Var<T> dot_hw(const Var<T>&, const Tensor<T>&);
template <typename T> Var<T> scaled_hw(const Var<T>&, const Tensor<T>&, const Shape&);

namespace detail {

constexpr int64_t kEwGrain = 1 << 16;

template <typename T, typename F>
Tensor<T> ew_unary(const Tensor<T>& x, F f) {
    Tensor<T> y(x.shape());
    const T* xs = x.data();
    T* ys = y.data();
    const int64_t n = x.numel();
    if (n >= 2 * kEwGrain) {
        parallel_for((n + kEwGrain - 1) / kEwGrain, [&](int64_t c) {
            const int64_t lo = c * kEwGrain, hi = std::min(lo + kEwGrain, n);
            for (int64_t i = lo; i < hi; ++i) ys[i] = f(xs[i]);
        });
    } else {
        for (int64_t i = 0; i < n; ++i) ys[i] = f(xs[i]);
    }
    return y;
}

template <typename T, typename F>
Tensor<T> ew_binary(const Tensor<T>& a, const Tensor<T>& b, F f, const char* what) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> y(a.shape());
    const T* as = a.data();
    const T* bs = b.data();
    T* ys = y.data();
    const int64_t n = a.numel();
    if (n >= 2 * kEwGrain) {
        parallel_for((n + kEwGrain - 1) / kEwGrain, [&](int64_t c) {
            const int64_t lo = c * kEwGrain, hi = std::min(lo + kEwGrain, n);
            for (int64_t i = lo; i < hi; ++i) ys[i] = f(as[i], bs[i]);
        });
    } else {
        for (int64_t i = 0; i < n; ++i) ys[i] = f(as[i], bs[i]);
    }
    return y;
}

} // namespace detail

// ---------------------------------------------------------------- arithmetic

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    auto v = detail::ew_binary<T>(a->value, b->value, [](T x, T y) { return x + y; }, "add");
    return make_op<T>(std::move(v), {a, b},
                      [](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {g, g};
                      },
                      "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    auto v = detail::ew_binary<T>(a->value, b->value, [](T x, T y) { return x - y; }, "sub");
    return make_op<T>(std::move(v), {a, b},
                      [](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {g, scale(g, -1.0)};
                      },
                      "sub");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    auto v = detail::ew_binary<T>(a->value, b->value, [](T x, T y) { return x * y; }, "mul");
    return make_op<T>(std::move(v), {a, b},
                      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
                          return {mul(g, self->parents[1]), mul(g, self->parents[0])};
                      },
                      "mul");
}

template <typename T>
Var<T> scale(const Var<T>& x, double c) {
    auto v = detail::ew_unary<T>(x->value, [c](T t) { return static_cast<T>(t * c); });
    return make_op<T>(std::move(v), {x},
                      [c](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {scale(g, c)};
                      },
                      "scale");
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, double c) {
    auto v = detail::ew_unary<T>(x->value, [c](T t) { return static_cast<T>(t + c); });
    return make_op<T>(std::move(v), {x},
                      [](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {g};
                      },
                      "add_scalar");
}

// y = x * s[0], s a one-element var.
template <typename T>
Var<T> mul_scalar_var(const Var<T>& x, const Var<T>& s) {
    if (s->value.numel() != 1) throw std::invalid_argument("mul_scalar_var: s must be scalar");
    const T sv = s->value[0];
    auto v = detail::ew_unary<T>(x->value, [sv](T t) { return t * sv; });
    return make_op<T>(std::move(v), {x, s},
                      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
                          return {mul_scalar_var(g, self->parents[1]),
                                  dot_all(g, self->parents[0])};
                      },
                      "mul_scalar_var");
}

// <a, b> as a one-element tensor.
template <typename T>
Var<T> dot_all(const Var<T>& a, const Var<T>& b) {
    if (a->value.shape() != b->value.shape())
        throw std::invalid_argument("dot_all: shape mismatch");
    const T* as = a->value.data();
    const T* bs = b->value.data();
    T acc = 0;
    for (int64_t i = 0; i < a->value.numel(); ++i) acc += as[i] * bs[i];
    return make_op<T>(Tensor<T>::scalar(acc), {a, b},
                      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
                          return {mul_scalar_var(self->parents[1], g),
                                  mul_scalar_var(self->parents[0], g)};
                      },
                      "dot_all");
}

// ------------------------------------------------------------------- unary

template <typename T>
Var<T> square(const Var<T>& x) {
    auto v = detail::ew_unary<T>(x->value, [](T t) { return t * t; });
    return make_op<T>(std::move(v), {x},
                      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
                          return {scale(mul(g, self->parents[0]), 2.0)};
                      },
                      "square");
}

// (x + eps)^(-1/2); the eps keeps the demodulation denominator away from 0.
template <typename T>
Var<T> rsqrt_eps(const Var<T>& x, double eps) {
    auto v = detail::ew_unary<T>(x->value,
                                 [eps](T t) { return static_cast<T>(1.0 / std::sqrt(static_cast<double>(t) + eps)); });
    return make_op<T>(std::move(v), {x},
                      [eps](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
                          // d/dx (x+eps)^-1/2 = -1/2 (x+eps)^-3/2 = -1/2 y^3
                          auto y = rsqrt_eps(self->parents[0], eps);
                          auto y3 = mul(mul(y, y), y);
                          return {scale(mul(g, y3), -0.5)};
                      },
                      "rsqrt_eps");
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, double slope) {
    auto v = detail::ew_unary<T>(x->value,
                                 [slope](T t) { return t > 0 ? t : static_cast<T>(t * slope); });
    Tensor<T> xv = x->value;  // mask source; piecewise-constant wrt x
    return make_op<T>(std::move(v), {x},
                      [xv, slope](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {masked_scale(g, xv, slope)};
                      },
                      "leaky_relu");
}

// g where mask>0, slope*g elsewhere. The mask tensor is a frozen snapshot.
template <typename T>
Var<T> masked_scale(const Var<T>& g, const Tensor<T>& mask, double slope) {
    if (g->value.shape() != mask.shape())
        throw std::invalid_argument("masked_scale: shape mismatch");
    Tensor<T> v(g->value.shape());
    const T* gs = g->value.data();
    const T* ms = mask.data();
    T* ys = v.data();
    for (int64_t i = 0; i < v.numel(); ++i)
        ys[i] = ms[i] > 0 ? gs[i] : static_cast<T>(gs[i] * slope);
    return make_op<T>(std::move(v), {g},
                      [mask, slope](const Var<T>&, const Var<T>& u) -> std::vector<Var<T>> {
                          return {masked_scale(u, mask, slope)};
                      },
                      "masked_scale");
}

template <typename T>
Var<T> tanh_op(const Var<T>& x) {
    auto v = detail::ew_unary<T>(x->value, [](T t) { return std::tanh(t); });
    Tensor<T> d = detail::ew_unary<T>(v, [](T y) { return static_cast<T>(1) - y * y; });
    return make_op<T>(std::move(v), {x},
                      [d](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {mul(g, make_const(d))};
                      },
                      "tanh");
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    auto v = detail::ew_unary<T>(x->value, [](T t) {
        return static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(t))));
    });
    Tensor<T> d = detail::ew_unary<T>(v, [](T y) { return y * (static_cast<T>(1) - y); });
    return make_op<T>(std::move(v), {x},
                      [d](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {mul(g, make_const(d))};
                      },
                      "sigmoid");
}

// log(1 + e^x), numerically stable.
template <typename T>
Var<T> softplus(const Var<T>& x) {
    auto v = detail::ew_unary<T>(x->value, [](T t) {
        const double td = static_cast<double>(t);
        return static_cast<T>(td > 0 ? td + std::log1p(std::exp(-td)) : std::log1p(std::exp(td)));
    });
    Tensor<T> d = detail::ew_unary<T>(x->value, [](T t) {
        return static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(t))));
    });
    return make_op<T>(std::move(v), {x},
                      [d](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {mul(g, make_const(d))};
                      },
                      "softplus");
}

// --------------------------------------------------------------- shape ops

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    Shape old = x->value.shape();
    return make_op<T>(x->value.reshaped(std::move(shape)), {x},
                      [old](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {reshape(g, old)};
                      },
                      "reshape");
}

template <typename T>
Var<T> transpose2d(const Var<T>& x) {
    const auto& s = x->value.shape();
    if (s.size() != 2) throw std::invalid_argument("transpose2d: need 2-d tensor");
    Tensor<T> v({s[1], s[0]});
    const T* xs = x->value.data();
    T* ys = v.data();
    for (int64_t i = 0; i < s[0]; ++i)
        for (int64_t j = 0; j < s[1]; ++j) ys[j * s[0] + i] = xs[i * s[1] + j];
    return make_op<T>(std::move(v), {x},
                      [](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {transpose2d(g)};
                      },
                      "transpose2d");
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw std::invalid_argument("matmul: bad shapes " + shape_str(sa) + " x " + shape_str(sb));
    Tensor<T> v({sa[0], sb[1]});
    gemm<T>(false, false, sa[0], sb[1], sa[1], a->value.data(), b->value.data(), v.data());
    return make_op<T>(std::move(v), {a, b},
                      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
                          const auto& pa = self->parents[0];
                          const auto& pb = self->parents[1];
                          return {matmul_tt(g, pb, false, true), matmul_tt(pa, g, true, false)};
                      },
                      "matmul");
}

// matmul with transpose flags; keeps backward graphs free of explicit
// transpose copies.
template <typename T>
Var<T> matmul_tt(const Var<T>& a, const Var<T>& b, bool ta, bool tb) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    if (sa.size() != 2 || sb.size() != 2)
        throw std::invalid_argument("matmul_tt: need 2-d tensors");
    const int64_t M = ta ? sa[1] : sa[0];
    const int64_t Ka = ta ? sa[0] : sa[1];
    const int64_t Kb = tb ? sb[1] : sb[0];
    const int64_t N = tb ? sb[0] : sb[1];
    if (Ka != Kb) throw std::invalid_argument("matmul_tt: inner dim mismatch");
    Tensor<T> v({M, N});
    gemm<T>(ta, tb, M, N, Ka, a->value.data(), b->value.data(), v.data());
    return make_op<T>(std::move(v), {a, b},
                      [ta, tb](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
                          const auto& pa = self->parents[0];
                          const auto& pb = self->parents[1];
                          // dA = g B^T (or transposed variants), dB = A^T g
                          Var<T> da = ta ? matmul_tt(pb, g, tb, true) : matmul_tt(g, pb, false, !tb);
                          Var<T> db = tb ? matmul_tt(g, pa, true, ta) : matmul_tt(pa, g, !ta, false);
                          return {da, db};
                      },
                      "matmul_tt");
}

// --------------------------------------------------------- reduce/broadcast

template <typename T>
Var<T> sum_all(const Var<T>& x) {
    const T* xs = x->value.data();
    T acc = 0;
    for (int64_t i = 0; i < x->value.numel(); ++i) acc += xs[i];
    Shape shape = x->value.shape();
    return make_op<T>(Tensor<T>::scalar(acc), {x},
                      [shape](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {broadcast_fill(g, shape)};
                      },
                      "sum_all");
}

template <typename T>
Var<T> broadcast_fill(const Var<T>& s, Shape shape) {
    if (s->value.numel() != 1) throw std::invalid_argument("broadcast_fill: need scalar");
    Tensor<T> v = Tensor<T>::full(shape, s->value[0]);
    return make_op<T>(std::move(v), {s},
                      [](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {sum_all(g)};
                      },
                      "broadcast_fill");
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
    return scale(sum_all(x), 1.0 / static_cast<double>(x->value.numel()));
}

// [B,C,H,W] -> [B,C]
template <typename T>
Var<T> sum_hw(const Var<T>& x) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw std::invalid_argument("sum_hw: need 4-d tensor");
    const int64_t B = s[0], C = s[1], HW = s[2] * s[3];
    Tensor<T> v({B, C});
    const T* xs = x->value.data();
    T* ys = v.data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        T acc = 0;
        const T* p = xs + bc * HW;
        for (int64_t i = 0; i < HW; ++i) acc += p[i];
        ys[bc] = acc;
    }
    const int64_t H = s[2], W = s[3];
    return make_op<T>(std::move(v), {x},
                      [H, W](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {broadcast_hw(g, H, W)};
                      },
                      "sum_hw");
}

// [B,C] -> [B,C,H,W]
template <typename T>
Var<T> broadcast_hw(const Var<T>& x, int64_t H, int64_t W) {
    const auto& s = x->value.shape();
    if (s.size() != 2) throw std::invalid_argument("broadcast_hw: need 2-d tensor");
    const int64_t B = s[0], C = s[1], HW = H * W;
    Tensor<T> v({B, C, H, W});
    const T* xs = x->value.data();
    T* ys = v.data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T t = xs[bc];
        T* p = ys + bc * HW;
        for (int64_t i = 0; i < HW; ++i) p[i] = t;
    }
    return make_op<T>(std::move(v), {x},
                      [](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {sum_hw(g)};
                      },
                      "broadcast_hw");
}

// [B,N] -> [N]
template <typename T>
Var<T> sum_axis0(const Var<T>& x) {
    const auto& s = x->value.shape();
    if (s.size() != 2) throw std::invalid_argument("sum_axis0: need 2-d tensor");
    const int64_t B = s[0], N = s[1];
    Tensor<T> v({N});
    const T* xs = x->value.data();
    T* ys = v.data();
    for (int64_t j = 0; j < N; ++j) ys[j] = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < N; ++j) ys[j] += xs[b * N + j];
    return make_op<T>(std::move(v), {x},
                      [B](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {broadcast_axis0(g, B)};
                      },
                      "sum_axis0");
}

// [N] -> [B,N]
template <typename T>
Var<T> broadcast_axis0(const Var<T>& x, int64_t B) {
    const auto& s = x->value.shape();
    if (s.size() != 1) throw std::invalid_argument("broadcast_axis0: need 1-d tensor");
    const int64_t N = s[0];
    Tensor<T> v({B, N});
    const T* xs = x->value.data();
    T* ys = v.data();
    for (int64_t b = 0; b < B; ++b) std::memcpy(ys + b * N, xs, sizeof(T) * static_cast<size_t>(N));
    return make_op<T>(std::move(v), {x},
                      [](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {sum_axis0(g)};
                      },
                      "broadcast_axis0");
}

// [B,C,H,W] -> [C]
template <typename T>
Var<T> sum_keep_c(const Var<T>& x) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw std::invalid_argument("sum_keep_c: need 4-d tensor");
    const int64_t B = s[0], C = s[1], HW = s[2] * s[3];
    Tensor<T> v({C});
    const T* xs = x->value.data();
    T* ys = v.data();
    for (int64_t c = 0; c < C; ++c) ys[c] = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            T acc = 0;
            const T* p = xs + (b * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) acc += p[i];
            ys[c] += acc;
        }
    const int64_t B2 = s[0], H = s[2], W = s[3];
    return make_op<T>(std::move(v), {x},
                      [B2, H, W](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {broadcast_from_c(g, B2, H, W)};
                      },
                      "sum_keep_c");
}

// [C] -> [B,C,H,W]
template <typename T>
Var<T> broadcast_from_c(const Var<T>& x, int64_t B, int64_t H, int64_t W) {
    const auto& s = x->value.shape();
    if (s.size() != 1) throw std::invalid_argument("broadcast_from_c: need 1-d tensor");
    const int64_t C = s[0], HW = H * W;
    Tensor<T> v({B, C, H, W});
    const T* xs = x->value.data();
    T* ys = v.data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            T* p = ys + (b * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) p[i] = xs[c];
        }
    return make_op<T>(std::move(v), {x},
                      [](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {sum_keep_c(g)};
                      },
                      "broadcast_from_c");
}

// --------------------------------------------------------- channel-wise ops

// y[b,c,h,w] = x[b,c,h,w] * s[b,c]
template <typename T>
Var<T> mul_channelwise(const Var<T>& x, const Var<T>& s) {
    const auto& xs = x->value.shape();
    const auto& ss = s->value.shape();
    if (xs.size() != 4 || ss.size() != 2 || xs[0] != ss[0] || xs[1] != ss[1])
        throw std::invalid_argument("mul_channelwise: shape mismatch " + shape_str(xs) + " vs " +
                                    shape_str(ss));
    const int64_t B = xs[0], C = xs[1], HW = xs[2] * xs[3];
    Tensor<T> v(xs);
    const T* xp = x->value.data();
    const T* sp = s->value.data();
    T* yp = v.data();
    parallel_for(B * C, [&](int64_t bc) {
        const T t = sp[bc];
        const T* src = xp + bc * HW;
        T* dst = yp + bc * HW;
        for (int64_t i = 0; i < HW; ++i) dst[i] = src[i] * t;
    }, 8);
    return make_op<T>(std::move(v), {x, s},
                      [](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
                          const auto& px = self->parents[0];
                          const auto& ps = self->parents[1];
                          return {mul_channelwise(g, ps), sum_hw(mul(g, px))};
                      },
                      "mul_channelwise");
}

template <typename T>
Var<T> add_bias_channel(const Var<T>& x, const Var<T>& b) {
    const auto& xs = x->value.shape();
    const auto& bs = b->value.shape();
    if (xs.size() != 4 || bs.size() != 1 || bs[0] != xs[1])
        throw std::invalid_argument("add_bias_channel: shape mismatch");
    const int64_t B = xs[0], C = xs[1], HW = xs[2] * xs[3];
    Tensor<T> v(xs);
    const T* xp = x->value.data();
    const T* bp = b->value.data();
    T* yp = v.data();
    parallel_for(B * C, [&](int64_t bc) {
        const T t = bp[bc % C];
        const T* src = xp + bc * HW;
        T* dst = yp + bc * HW;
        for (int64_t i = 0; i < HW; ++i) dst[i] = src[i] + t;
    }, 8);
    return make_op<T>(std::move(v), {x, b},
                      [](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {g, sum_keep_c(g)};
                      },
                      "add_bias_channel");
}

template <typename T>
Var<T> add_bias_row(const Var<T>& x, const Var<T>& b) {
    const auto& xs = x->value.shape();
    const auto& bs = b->value.shape();
    if (xs.size() != 2 || bs.size() != 1 || bs[0] != xs[1])
        throw std::invalid_argument("add_bias_row: shape mismatch");
    const int64_t B = xs[0], N = xs[1];
    Tensor<T> v(xs);
    const T* xp = x->value.data();
    const T* bp = b->value.data();
    T* yp = v.data();
    for (int64_t i = 0; i < B; ++i)
        for (int64_t j = 0; j < N; ++j) yp[i * N + j] = xp[i * N + j] + bp[j];
    return make_op<T>(std::move(v), {x, b},
                      [](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {g, sum_axis0(g)};
                      },
                      "add_bias_row");
}

// ------------------------------------------------------------- convolutions

namespace detail {

struct ConvDims {
    int64_t B, C, H, W, O, kh, kw, Ho, Wo;
    int stride, pad;
};

inline ConvDims conv_dims(const Shape& x, const Shape& w, int stride, int pad) {
    if (x.size() != 4 || w.size() != 4)
        throw std::invalid_argument("conv2d: need 4-d input and weight");
    if (x[1] != w[1])
        throw std::invalid_argument("conv2d: channel mismatch " + shape_str(x) + " vs " +
                                    shape_str(w));
    ConvDims d;
    d.B = x[0]; d.C = x[1]; d.H = x[2]; d.W = x[3];
    d.O = w[0]; d.kh = w[2]; d.kw = w[3];
    d.stride = stride; d.pad = pad;
    d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
    d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
    if (d.Ho <= 0 || d.Wo <= 0) throw std::invalid_argument("conv2d: empty output");
    return d;
}

// Patch matrix [C*kh*kw, Ho*Wo] for one sample.
template <typename T>
void unfold(const T* x, const ConvDims& d, T* out) {
    const int64_t HoWo = d.Ho * d.Wo;
    for (int64_t c = 0; c < d.C; ++c) {
        const T* xc = x + c * d.H * d.W;
        for (int64_t a = 0; a < d.kh; ++a)
            for (int64_t b = 0; b < d.kw; ++b) {
                T* row = out + ((c * d.kh + a) * d.kw + b) * HoWo;
                for (int64_t oy = 0; oy < d.Ho; ++oy) {
                    const int64_t iy = oy * d.stride - d.pad + a;
                    T* dst = row + oy * d.Wo;
                    if (iy < 0 || iy >= d.H) {
                        for (int64_t ox = 0; ox < d.Wo; ++ox) dst[ox] = 0;
                        continue;
                    }
                    const T* src = xc + iy * d.W;
                    for (int64_t ox = 0; ox < d.Wo; ++ox) {
                        const int64_t ix = ox * d.stride - d.pad + b;
                        dst[ox] = (ix >= 0 && ix < d.W) ? src[ix] : T(0);
                    }
                }
            }
    }
}

// Scatter-add of a patch matrix back onto one sample (adjoint of unfold).
template <typename T>
void fold_add(const T* cols, const ConvDims& d, T* x) {
    const int64_t HoWo = d.Ho * d.Wo;
    for (int64_t c = 0; c < d.C; ++c) {
        T* xc = x + c * d.H * d.W;
        for (int64_t a = 0; a < d.kh; ++a)
            for (int64_t b = 0; b < d.kw; ++b) {
                const T* row = cols + ((c * d.kh + a) * d.kw + b) * HoWo;
                for (int64_t oy = 0; oy < d.Ho; ++oy) {
                    const int64_t iy = oy * d.stride - d.pad + a;
                    if (iy < 0 || iy >= d.H) continue;
                    T* dst = xc + iy * d.W;
                    const T* src = row + oy * d.Wo;
                    for (int64_t ox = 0; ox < d.Wo; ++ox) {
                        const int64_t ix = ox * d.stride - d.pad + b;
                        if (ix >= 0 && ix < d.W) dst[ix] += src[ox];
                    }
                }
            }
    }
}

template <typename T>
std::vector<T>& conv_scratch() {
    thread_local std::vector<T> buf;
    return buf;
}

} // namespace detail

template <typename T>
Tensor<T> conv2d_value(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
    auto d = detail::conv_dims(x.shape(), w.shape(), stride, pad);
    Tensor<T> y({d.B, d.O, d.Ho, d.Wo});
    const int64_t CK = d.C * d.kh * d.kw;
    const int64_t HoWo = d.Ho * d.Wo;
    parallel_for(d.B, [&](int64_t b) {
        auto& buf = detail::conv_scratch<T>();
        buf.resize(static_cast<size_t>(CK * HoWo));
        detail::unfold(x.data() + b * d.C * d.H * d.W, d, buf.data());
        gemm<T>(false, false, d.O, HoWo, CK, w.data(), buf.data(),
                y.data() + b * d.O * HoWo);
    });
    return y;
}

template <typename T>
Tensor<T> conv_dgrad_value(const Tensor<T>& g, const Tensor<T>& w, int64_t H, int64_t W,
                           int stride, int pad) {
    // g: [B,O,Ho,Wo], w: [O,C,kh,kw] -> dx [B,C,H,W]
    const auto& gs = g.shape();
    const auto& ws = w.shape();
    if (gs.size() != 4 || ws.size() != 4 || gs[1] != ws[0])
        throw std::invalid_argument("conv_dgrad: bad shapes");
    detail::ConvDims d;
    d.B = gs[0]; d.O = ws[0]; d.C = ws[1]; d.kh = ws[2]; d.kw = ws[3];
    d.H = H; d.W = W; d.Ho = gs[2]; d.Wo = gs[3];
    d.stride = stride; d.pad = pad;
    const int64_t CK = d.C * d.kh * d.kw;
    const int64_t HoWo = d.Ho * d.Wo;
    Tensor<T> dx({d.B, d.C, H, W});
    parallel_for(d.B, [&](int64_t b) {
        auto& buf = detail::conv_scratch<T>();
        buf.resize(static_cast<size_t>(CK * HoWo));
        gemm<T>(true, false, CK, HoWo, d.O, w.data(), g.data() + b * d.O * HoWo, buf.data());
        detail::fold_add(buf.data(), d, dx.data() + b * d.C * H * W);
    });
    return dx;
}

template <typename T>
Tensor<T> conv_wgrad_value(const Tensor<T>& x, const Tensor<T>& g, int64_t kh, int64_t kw,
                           int stride, int pad) {
    // x: [B,C,H,W], g: [B,O,Ho,Wo] -> dw [O,C,kh,kw]
    const auto& xs = x.shape();
    const auto& gs = g.shape();
    if (xs.size() != 4 || gs.size() != 4 || xs[0] != gs[0])
        throw std::invalid_argument("conv_wgrad: bad shapes");
    detail::ConvDims d;
    d.B = xs[0]; d.C = xs[1]; d.H = xs[2]; d.W = xs[3];
    d.O = gs[1]; d.kh = kh; d.kw = kw; d.Ho = gs[2]; d.Wo = gs[3];
    d.stride = stride; d.pad = pad;
    const int64_t CK = d.C * kh * kw;
    const int64_t HoWo = d.Ho * d.Wo;
    // Per-sample partials, then a fixed-order reduction.
    std::vector<T> partials(static_cast<size_t>(d.B * d.O * CK));
    parallel_for(d.B, [&](int64_t b) {
        auto& buf = detail::conv_scratch<T>();
        buf.resize(static_cast<size_t>(CK * HoWo));
        detail::unfold(x.data() + b * d.C * d.H * d.W, d, buf.data());
        gemm<T>(false, true, d.O, CK, HoWo, g.data() + b * d.O * HoWo, buf.data(),
                partials.data() + b * d.O * CK);
    });
    Tensor<T> dw({d.O, d.C, kh, kw});
    T* out = dw.data();
    for (int64_t b = 0; b < d.B; ++b) {
        const T* p = partials.data() + b * d.O * CK;
        for (int64_t i = 0; i < d.O * CK; ++i) out[i] += p[i];
    }
    return dw;
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int stride, int pad) {
    auto v = conv2d_value(x->value, w->value, stride, pad);
    return make_op<T>(std::move(v), {x, w},
                      [stride, pad](const Var<T>& self, const Var<T>& g) -> std::vector<Var<T>> {
                          const auto& px = self->parents[0];
                          const auto& pw = self->parents[1];
                          const auto& xs = px->value.shape();
                          const auto& ws = pw->value.shape();
                          return {conv_dgrad(g, pw, xs[2], xs[3], stride, pad),
                                  conv_wgrad(px, g, ws[2], ws[3], stride, pad)};
                      },
                      "conv2d");
}

template <typename T>
Var<T> conv_dgrad(const Var<T>& g, const Var<T>& w, int64_t H, int64_t W, int stride, int pad) {
    auto v = conv_dgrad_value(g->value, w->value, H, W, stride, pad);
    return make_op<T>(std::move(v), {g, w},
                      [stride, pad](const Var<T>& self, const Var<T>& u) -> std::vector<Var<T>> {
                          const auto& pg = self->parents[0];
                          const auto& pw = self->parents[1];
                          const auto& ws = pw->value.shape();
                          return {conv2d(u, pw, stride, pad),
                                  conv_wgrad(u, pg, ws[2], ws[3], stride, pad)};
                      },
                      "conv_dgrad");
}

template <typename T>
Var<T> conv_wgrad(const Var<T>& x, const Var<T>& g, int64_t kh, int64_t kw, int stride, int pad) {
    auto v = conv_wgrad_value(x->value, g->value, kh, kw, stride, pad);
    return make_op<T>(std::move(v), {x, g},
                      [stride, pad](const Var<T>& self, const Var<T>& u) -> std::vector<Var<T>> {
                          const auto& px = self->parents[0];
                          const auto& pg = self->parents[1];
                          const auto& xs = px->value.shape();
                          return {conv_dgrad(pg, u, xs[2], xs[3], stride, pad),
                                  conv2d(px, u, stride, pad)};
                      },
                      "conv_wgrad");
}

// ------------------------------------------------------------------ pooling

template <typename T>
Var<T> avgpool2(const Var<T>& x) {
    const auto& s = x->value.shape();
    if (s.size() != 4 || s[2] % 2 || s[3] % 2)
        throw std::invalid_argument("avgpool2: need even 4-d tensor");
    const int64_t B = s[0], C = s[1], H = s[2], W = s[3];
    Tensor<T> v({B, C, H / 2, W / 2});
    const T* xp = x->value.data();
    T* yp = v.data();
    parallel_for(B * C, [&](int64_t bc) {
        const T* src = xp + bc * H * W;
        T* dst = yp + bc * (H / 2) * (W / 2);
        for (int64_t i = 0; i < H / 2; ++i)
            for (int64_t j = 0; j < W / 2; ++j) {
                const T* p = src + 2 * i * W + 2 * j;
                dst[i * (W / 2) + j] =
                    static_cast<T>((p[0] + p[1] + p[W] + p[W + 1]) * static_cast<T>(0.25));
            }
    }, 8);
    return make_op<T>(std::move(v), {x},
                      [](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {scale(upsample2(g), 0.25)};
                      },
                      "avgpool2");
}

template <typename T>
Var<T> upsample2(const Var<T>& x) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw std::invalid_argument("upsample2: need 4-d tensor");
    const int64_t B = s[0], C = s[1], H = s[2], W = s[3];
    Tensor<T> v({B, C, 2 * H, 2 * W});
    const T* xp = x->value.data();
    T* yp = v.data();
    parallel_for(B * C, [&](int64_t bc) {
        const T* src = xp + bc * H * W;
        T* dst = yp + bc * 4 * H * W;
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
                const T t = src[i * W + j];
                T* q = dst + 2 * i * 2 * W + 2 * j;
                q[0] = t;
                q[1] = t;
                q[2 * W] = t;
                q[2 * W + 1] = t;
            }
    }, 8);
    return make_op<T>(std::move(v), {x},
                      [](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {scale(avgpool2(g), 4.0)};
                      },
                      "upsample2");
}

// ----------------------------------------------------------- noise plumbing

// y = x + strength[0] * noise, noise a fixed [H,W] buffer broadcast over B,C.
template <typename T>
Var<T> add_scaled_hw(const Var<T>& x, const Tensor<T>& noise, const Var<T>& strength) {
    const auto& s = x->value.shape();
    if (s.size() != 4 || noise.shape() != Shape{s[2], s[3]})
        throw std::invalid_argument("add_scaled_hw: shape mismatch");
    if (strength->value.numel() != 1)
        throw std::invalid_argument("add_scaled_hw: strength must be scalar");
    const int64_t BC = s[0] * s[1], HW = s[2] * s[3];
    const T k = strength->value[0];
    Tensor<T> v(s);
    const T* xp = x->value.data();
    const T* np = noise.data();
    T* yp = v.data();
    parallel_for(BC, [&](int64_t bc) {
        const T* src = xp + bc * HW;
        T* dst = yp + bc * HW;
        for (int64_t i = 0; i < HW; ++i) dst[i] = src[i] + k * np[i];
    }, 8);
    return make_op<T>(std::move(v), {x, strength},
                      [noise](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {g, dot_hw(g, noise)};
                      },
                      "add_scaled_hw");
}

// sum_{b,c,h,w} g[b,c,h,w] * noise[h,w] -> scalar
template <typename T>
Var<T> dot_hw(const Var<T>& g, const Tensor<T>& noise) {
    const auto& s = g->value.shape();
    const int64_t BC = s[0] * s[1], HW = s[2] * s[3];
    const T* gp = g->value.data();
    const T* np = noise.data();
    T acc = 0;
    for (int64_t bc = 0; bc < BC; ++bc) {
        const T* p = gp + bc * HW;
        for (int64_t i = 0; i < HW; ++i) acc += p[i] * np[i];
    }
    Shape shape = s;
    return make_op<T>(Tensor<T>::scalar(acc), {g},
                      [noise, shape](const Var<T>&, const Var<T>& u) -> std::vector<Var<T>> {
                          return {scaled_hw(u, noise, shape)};
                      },
                      "dot_hw");
}

// u[0] * noise broadcast to [B,C,H,W]
template <typename T>
Var<T> scaled_hw(const Var<T>& u, const Tensor<T>& noise, const Shape& shape) {
    const T k = u->value[0];
    const int64_t BC = shape[0] * shape[1], HW = shape[2] * shape[3];
    Tensor<T> v(shape);
    const T* np = noise.data();
    T* yp = v.data();
    for (int64_t bc = 0; bc < BC; ++bc) {
        T* p = yp + bc * HW;
        for (int64_t i = 0; i < HW; ++i) p[i] = k * np[i];
    }
    return make_op<T>(std::move(v), {u},
                      [noise](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {dot_hw(g, noise)};
                      },
                      "scaled_hw");
}

// ------------------------------------------------------------------- losses

// Mean softmax cross-entropy over the batch; labels are class indices.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
    const auto& s = logits->value.shape();
    if (s.size() != 2 || static_cast<int64_t>(labels.size()) != s[0])
        throw std::invalid_argument("softmax_cross_entropy: bad shapes");
    const int64_t B = s[0], K = s[1];
    const T* lp = logits->value.data();
    Tensor<T> dlogits({B, K});
    T* dp = dlogits.data();
    double loss = 0;
    for (int64_t b = 0; b < B; ++b) {
        const T* row = lp + b * K;
        double mx = row[0];
        for (int64_t k = 1; k < K; ++k) mx = std::max<double>(mx, row[k]);
        double Z = 0;
        for (int64_t k = 0; k < K; ++k) Z += std::exp(static_cast<double>(row[k]) - mx);
        const int y = labels[static_cast<size_t>(b)];
        loss += -(static_cast<double>(row[y]) - mx - std::log(Z));
        for (int64_t k = 0; k < K; ++k) {
            const double p = std::exp(static_cast<double>(row[k]) - mx) / Z;
            dp[b * K + k] = static_cast<T>((p - (k == y ? 1.0 : 0.0)) / static_cast<double>(B));
        }
    }
    loss /= static_cast<double>(B);
    return make_op<T>(Tensor<T>::scalar(static_cast<T>(loss)), {logits},
                      [dlogits](const Var<T>&, const Var<T>& g) -> std::vector<Var<T>> {
                          return {mul_scalar_var(make_const(dlogits), g)};
                      },
                      "softmax_ce");
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    return mean_all(square(sub(a, b)));
}

} // namespace stylealign
