#include "swae/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "swae/errors.hpp"

namespace swae::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void check_finite(const char* op, const BasicTensor<T>& x) {
    for (T v : x.data()) {
        if (!std::isfinite(v)) throw NumericalError(std::string(op) + ": non-finite input value");
    }
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

/// Attaches a tape node to `out` when any input is tracked and propagates the
/// sphere-provenance flag.
template <typename T, typename Fn>
void record(const char* op, std::vector<BasicTensor<T>> inputs, BasicTensor<T>& out, Fn&& fn) {
    bool sphere = false;
    bool tracked = false;
    for (const auto& in : inputs) {
        sphere = sphere || in.on_sphere();
        tracked = tracked || in.tracked();
    }
    out.set_on_sphere(sphere);
    if (!tracked || !grad_enabled()) return;
    auto node = std::make_shared<TapeNode<T>>();
    node->seq = next_tape_seq();
    node->op_kind = op;
    node->inputs = std::move(inputs);
    node->backward = std::forward<Fn>(fn);
    out.set_node(std::move(node));
}

/// Broadcast rule shared by add/sub/mul. Returns true when `small` is
/// broadcast over `big`.
bool broadcastable(const Shape& big, const Shape& small) {
    if (big == small) return true;
    if (numel_of(small) == 1) return true;
    if (big.size() == small.size() + 1 && std::equal(small.begin(), small.end(), big.begin() + 1)) return true;
    return false;
}

enum class Binary { kAdd, kSub, kMul };

template <typename T>
BasicTensor<T> binary(const char* name, Binary kind, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    check_finite(name, a);
    check_finite(name, b);
    const bool a_big = a.numel() >= b.numel();
    const auto& big = a_big ? a : b;
    const auto& small = a_big ? b : a;
    if (!broadcastable(big.shape(), small.shape())) shape_mismatch(name, a.shape(), b.shape());

    const std::size_t n = big.numel();
    const auto av = a.data();
    const auto bv = b.data();
    const std::size_t am = a.numel();
    const std::size_t bm = b.numel();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T x = av[i % am];
        const T y = bv[i % bm];
        switch (kind) {
            case Binary::kAdd: out[i] = x + y; break;
            case Binary::kSub: out[i] = x - y; break;
            case Binary::kMul: out[i] = x * y; break;
        }
    }
    BasicTensor<T> result(big.shape(), std::move(out));
    record<T>(name, {a, b}, result, [a, b, kind, n](const std::vector<T>& g) {
        typename TapeNode<T>::Grads grads(2);
        const std::size_t am = a.numel();
        const std::size_t bm = b.numel();
        if (a.tracked()) {
            std::vector<T> ga(am, T(0));
            const auto bv = b.data();
            for (std::size_t i = 0; i < n; ++i) {
                ga[i % am] += kind == Binary::kMul ? g[i] * bv[i % bm] : g[i];
            }
            grads[0] = std::move(ga);
        }
        if (b.tracked()) {
            std::vector<T> gb(bm, T(0));
            const auto av = a.data();
            for (std::size_t i = 0; i < n; ++i) {
                T v = g[i];
                if (kind == Binary::kSub) v = -v;
                if (kind == Binary::kMul) v *= av[i % am];
                gb[i % bm] += v;
            }
            grads[1] = std::move(gb);
        }
        return grads;
    });
    return result;
}

template <typename T, typename F, typename D>
BasicTensor<T> unary(const char* name, const BasicTensor<T>& x, F f, D dfdx_from_in_out) {
    check_finite(name, x);
    const auto xv = x.data();
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    BasicTensor<T> result(x.shape(), std::move(out));
    auto y = result.values();  // saved output for the backward rule
    record<T>(name, {x}, result, [x, y = std::move(y), dfdx_from_in_out](const std::vector<T>& g) {
        typename TapeNode<T>::Grads grads(1);
        const auto xv = x.data();
        std::vector<T> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * dfdx_from_in_out(xv[i], y[i]);
        grads[0] = std::move(gx);
        return grads;
    });
    return result;
}

struct ConvDims {
    std::size_t n, cin, h, w, cout, k, ho, wo;
};

/// Unfolds (N, C, H, W) into a (C*k*k, N*Ho*Wo) row-major matrix.
template <typename T>
void im2col(const T* x, const ConvDims& d, std::size_t channels, ConvGeometry g, T* cols) {
    const std::size_t spatial = d.ho * d.wo;
    const std::size_t ncols = d.n * spatial;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < d.k; ++ky) {
            for (std::size_t kx = 0; kx < d.k; ++kx) {
                T* row = cols + ((c * d.k + ky) * d.k + kx) * ncols;
                for (std::size_t b = 0; b < d.n; ++b) {
                    const T* img = x + (b * channels + c) * d.h * d.w;
                    T* dst = row + b * spatial;
                    for (std::size_t oy = 0; oy < d.ho; ++oy) {
                        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                        for (std::size_t ox = 0; ox < d.wo; ++ox) {
                            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                            const bool inside = iy >= 0 && iy < static_cast<long>(d.h) && ix >= 0 &&
                                                ix < static_cast<long>(d.w);
                            dst[oy * d.wo + ox] = inside ? img[iy * d.w + ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters-adds columns back into (N, C, H, W).
template <typename T>
void col2im(const T* cols, const ConvDims& d, std::size_t channels, ConvGeometry g, T* x) {
    const std::size_t spatial = d.ho * d.wo;
    const std::size_t ncols = d.n * spatial;
    std::fill(x, x + d.n * channels * d.h * d.w, T(0));
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < d.k; ++ky) {
            for (std::size_t kx = 0; kx < d.k; ++kx) {
                const T* row = cols + ((c * d.k + ky) * d.k + kx) * ncols;
                for (std::size_t b = 0; b < d.n; ++b) {
                    T* img = x + (b * channels + c) * d.h * d.w;
                    const T* src = row + b * spatial;
                    for (std::size_t oy = 0; oy < d.ho; ++oy) {
                        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                        if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
                        for (std::size_t ox = 0; ox < d.wo; ++ox) {
                            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                            if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
                            img[iy * d.w + ix] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// (N, C, S) <-> (C, N*S) layout shuffles.
template <typename T>
void nchw_to_cn(const T* x, std::size_t n, std::size_t c, std::size_t s, T* out) {
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            std::copy_n(x + (b * c + ch) * s, s, out + ch * n * s + b * s);
}

template <typename T>
void cn_to_nchw(const T* x, std::size_t n, std::size_t c, std::size_t s, T* out) {
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            std::copy_n(x + ch * n * s + b * s, s, out + (b * c + ch) * s);
}

template <typename T>
void check_conv_inputs(const char* name, const BasicTensor<T>& x, const BasicTensor<T>& w,
                       const std::optional<BasicTensor<T>>& bias, std::size_t bias_len, ConvGeometry g) {
    if (x.rank() != 4) throw ShapeError(std::string(name) + ": input must be 4-axis, got " + shape_str(x.shape()));
    if (w.rank() != 4 || w.dim(2) != w.dim(3))
        throw ShapeError(std::string(name) + ": weight must be (a, b, k, k), got " + shape_str(w.shape()));
    if (x.dim(1) != w.dim(0) && std::string(name) == "conv_transpose2d") shape_mismatch(name, x.shape(), w.shape());
    if (x.dim(1) != w.dim(1) && std::string(name) == "conv2d") shape_mismatch(name, x.shape(), w.shape());
    if (bias && (bias->rank() != 1 || bias->dim(0) != bias_len)) shape_mismatch(name, w.shape(), bias->shape());
    if (g.stride == 0) throw ShapeError(std::string(name) + ": stride must be >= 1");
    check_finite(name, x);
    check_finite(name, w);
    if (bias) check_finite(name, *bias);
}

template <typename T>
void add_channel_bias(std::vector<T>& out, const BasicTensor<T>& bias, std::size_t n, std::size_t c, std::size_t s) {
    const auto bv = bias.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            T* p = out.data() + (b * c + ch) * s;
            for (std::size_t i = 0; i < s; ++i) p[i] += bv[ch];
        }
}

template <typename T>
std::vector<T> channel_bias_grad(const std::vector<T>& g, std::size_t n, std::size_t c, std::size_t s) {
    std::vector<T> gb(c, T(0));
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* p = g.data() + (b * c + ch) * s;
            T acc = 0;
            for (std::size_t i = 0; i < s; ++i) acc += p[i];
            gb[ch] += acc;
        }
    return gb;
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary("add", Binary::kAdd, a, b);
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary("sub", Binary::kSub, a, b);
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary("mul", Binary::kMul, a, b);
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
    return unary("scale", a, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_mismatch("matmul", a.shape(), b.shape());
    check_finite("matmul", a);
    check_finite("matmul", b);
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    std::vector<T> out(n * m);
    MatMap<T>(out.data(), n, m).noalias() =
        ConstMatMap<T>(a.data().data(), n, k) * ConstMatMap<T>(b.data().data(), k, m);
    BasicTensor<T> result(Shape{n, m}, std::move(out));
    record<T>("matmul", {a, b}, result, [a, b, n, k, m](const std::vector<T>& g) {
        typename TapeNode<T>::Grads grads(2);
        ConstMatMap<T> gm(g.data(), n, m);
        if (a.tracked()) {
            std::vector<T> ga(n * k);
            MatMap<T>(ga.data(), n, k).noalias() = gm * ConstMatMap<T>(b.data().data(), k, m).transpose();
            grads[0] = std::move(ga);
        }
        if (b.tracked()) {
            std::vector<T> gb(k * m);
            MatMap<T>(gb.data(), k, m).noalias() = ConstMatMap<T>(a.data().data(), n, k).transpose() * gm;
            grads[1] = std::move(gb);
        }
        return grads;
    });
    return result;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
    if (bias.rank() != 1 || weight.rank() != 2 || bias.dim(0) != weight.dim(1))
        shape_mismatch("linear", weight.shape(), bias.shape());
    return add(matmul(x, weight), bias);
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const std::optional<std::type_identity_t<BasicTensor<T>>>& bias, ConvGeometry geom) {
    check_conv_inputs("conv2d", x, weight, bias, weight.dim(0), geom);
    const std::size_t k = weight.dim(2);
    const std::size_t hp = x.dim(2) + 2 * geom.padding, wp = x.dim(3) + 2 * geom.padding;
    if (hp < k || wp < k) shape_mismatch("conv2d", x.shape(), weight.shape());
    ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), k,
               (hp - k) / geom.stride + 1, (wp - k) / geom.stride + 1};
    const std::size_t kk = d.cin * k * k;
    const std::size_t ncols = d.n * d.ho * d.wo;

    auto cols = std::make_shared<std::vector<T>>(kk * ncols);
    im2col(x.data().data(), d, d.cin, geom, cols->data());
    std::vector<T> out_cn(d.cout * ncols);
    MatMap<T>(out_cn.data(), d.cout, ncols).noalias() =
        ConstMatMap<T>(weight.data().data(), d.cout, kk) * ConstMatMap<T>(cols->data(), kk, ncols);
    std::vector<T> out(out_cn.size());
    cn_to_nchw(out_cn.data(), d.n, d.cout, d.ho * d.wo, out.data());
    if (bias) add_channel_bias(out, *bias, d.n, d.cout, d.ho * d.wo);

    BasicTensor<T> result(Shape{d.n, d.cout, d.ho, d.wo}, std::move(out));
    std::vector<BasicTensor<T>> inputs{x, weight};
    if (bias) inputs.push_back(*bias);
    const bool has_bias = bias.has_value();
    record<T>("conv2d", std::move(inputs), result, [x, weight, has_bias, d, geom, cols, kk, ncols](const std::vector<T>& g) {
        typename TapeNode<T>::Grads grads(has_bias ? 3 : 2);
        std::vector<T> g_cn(g.size());
        nchw_to_cn(g.data(), d.n, d.cout, d.ho * d.wo, g_cn.data());
        ConstMatMap<T> gm(g_cn.data(), d.cout, ncols);
        if (x.tracked()) {
            std::vector<T> dcols(kk * ncols);
            MatMap<T>(dcols.data(), kk, ncols).noalias() =
                ConstMatMap<T>(weight.data().data(), d.cout, kk).transpose() * gm;
            std::vector<T> gx(x.numel());
            col2im(dcols.data(), d, d.cin, geom, gx.data());
            grads[0] = std::move(gx);
        }
        if (weight.tracked()) {
            std::vector<T> gw(d.cout * kk);
            MatMap<T>(gw.data(), d.cout, kk).noalias() = gm * ConstMatMap<T>(cols->data(), kk, ncols).transpose();
            grads[1] = std::move(gw);
        }
        if (has_bias) grads[2] = channel_bias_grad(g, d.n, d.cout, d.ho * d.wo);
        return grads;
    });
    return result;
}

template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                                const std::optional<std::type_identity_t<BasicTensor<T>>>& bias, ConvGeometry geom) {
    check_conv_inputs("conv_transpose2d", x, weight, bias, weight.dim(1), geom);
    const std::size_t k = weight.dim(2);
    const long ho = static_cast<long>((x.dim(2) - 1) * geom.stride + k) - 2 * static_cast<long>(geom.padding);
    const long wo = static_cast<long>((x.dim(3) - 1) * geom.stride + k) - 2 * static_cast<long>(geom.padding);
    if (ho <= 0 || wo <= 0) shape_mismatch("conv_transpose2d", x.shape(), weight.shape());
    // Geometry of the forward conv that maps the output back onto x.
    ConvDims d{x.dim(0), weight.dim(1), static_cast<std::size_t>(ho), static_cast<std::size_t>(wo),
               weight.dim(0), k, x.dim(2), x.dim(3)};
    const std::size_t cin = weight.dim(0);
    const std::size_t cout = weight.dim(1);
    const std::size_t kk = cout * k * k;
    const std::size_t ncols = d.n * d.ho * d.wo;

    auto x_cn = std::make_shared<std::vector<T>>(x.numel());
    nchw_to_cn(x.data().data(), d.n, cin, d.ho * d.wo, x_cn->data());
    std::vector<T> cols(kk * ncols);
    MatMap<T>(cols.data(), kk, ncols).noalias() =
        ConstMatMap<T>(weight.data().data(), cin, kk).transpose() * ConstMatMap<T>(x_cn->data(), cin, ncols);
    std::vector<T> out(d.n * cout * d.h * d.w);
    col2im(cols.data(), d, cout, geom, out.data());
    if (bias) add_channel_bias(out, *bias, d.n, cout, d.h * d.w);

    BasicTensor<T> result(Shape{d.n, cout, d.h, d.w}, std::move(out));
    std::vector<BasicTensor<T>> inputs{x, weight};
    if (bias) inputs.push_back(*bias);
    const bool has_bias = bias.has_value();
    record<T>("conv_transpose2d", std::move(inputs), result,
              [x, weight, has_bias, d, geom, x_cn, cin, cout, kk, ncols](const std::vector<T>& g) {
                  typename TapeNode<T>::Grads grads(has_bias ? 3 : 2);
                  std::vector<T> gcols(kk * ncols);
                  im2col(g.data(), d, cout, geom, gcols.data());
                  ConstMatMap<T> gc(gcols.data(), kk, ncols);
                  if (x.tracked()) {
                      std::vector<T> gx_cn(cin * ncols);
                      MatMap<T>(gx_cn.data(), cin, ncols).noalias() =
                          ConstMatMap<T>(weight.data().data(), cin, kk) * gc;
                      std::vector<T> gx(x.numel());
                      cn_to_nchw(gx_cn.data(), d.n, cin, d.ho * d.wo, gx.data());
                      grads[0] = std::move(gx);
                  }
                  if (weight.tracked()) {
                      std::vector<T> gw(cin * kk);
                      MatMap<T>(gw.data(), cin, kk).noalias() =
                          ConstMatMap<T>(x_cn->data(), cin, ncols) * gc.transpose();
                      grads[1] = std::move(gw);
                  }
                  if (has_bias) grads[2] = channel_bias_grad(g, d.n, cout, d.h * d.w);
                  return grads;
              });
    return result;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    return unary("relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope) {
    return unary(
        "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
        [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
    return unary(
        "sigmoid", x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
    return unary("tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          BatchNormState<T>& state, NormMode mode) {
    if (x.rank() != 2 && x.rank() != 4)
        throw ShapeError("batch_norm: input must be (N, C) or (N, C, H, W), got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1);
    const std::size_t s = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    const Shape per_channel{c};
    if (gamma.shape() != per_channel) shape_mismatch("batch_norm", x.shape(), gamma.shape());
    if (beta.shape() != per_channel) shape_mismatch("batch_norm", x.shape(), beta.shape());
    if (state.running_mean.shape() != per_channel || state.running_var.shape() != per_channel)
        shape_mismatch("batch_norm", x.shape(), state.running_mean.shape());
    check_finite("batch_norm", x);
    const std::size_t m = n * s;
    if (mode == NormMode::kTrain && m < 2)
        throw ShapeError("batch_norm: train mode needs at least 2 values per channel, got shape " +
                         shape_str(x.shape()));

    const auto xv = x.data();
    std::vector<T> mu(c, T(0)), inv_std(c);
    if (mode == NormMode::kTrain) {
        std::vector<T> var(c, T(0));
        for (std::size_t ch = 0; ch < c; ++ch) {
            T acc = 0;
            for (std::size_t b = 0; b < n; ++b) {
                const T* p = xv.data() + (b * c + ch) * s;
                for (std::size_t i = 0; i < s; ++i) acc += p[i];
            }
            mu[ch] = acc / T(m);
            T sq = 0;
            for (std::size_t b = 0; b < n; ++b) {
                const T* p = xv.data() + (b * c + ch) * s;
                for (std::size_t i = 0; i < s; ++i) sq += (p[i] - mu[ch]) * (p[i] - mu[ch]);
            }
            var[ch] = sq / T(m);
            inv_std[ch] = T(1) / std::sqrt(var[ch] + state.eps);
        }
        auto rm = state.running_mean.data();
        auto rv = state.running_var.data();
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T unbiased = var[ch] * T(m) / T(m - 1);
            rm[ch] = (T(1) - state.momentum) * rm[ch] + state.momentum * mu[ch];
            rv[ch] = (T(1) - state.momentum) * rv[ch] + state.momentum * unbiased;
        }
    } else {
        const auto rm = state.running_mean.data();
        const auto rv = state.running_var.data();
        for (std::size_t ch = 0; ch < c; ++ch) {
            mu[ch] = rm[ch];
            inv_std[ch] = T(1) / std::sqrt(rv[ch] + state.eps);
        }
    }

    const auto gv = gamma.data();
    const auto bv = beta.data();
    std::vector<T> xhat(x.numel()), out(x.numel());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * s;
            for (std::size_t i = 0; i < s; ++i) {
                xhat[off + i] = (xv[off + i] - mu[ch]) * inv_std[ch];
                out[off + i] = gv[ch] * xhat[off + i] + bv[ch];
            }
        }

    BasicTensor<T> result(x.shape(), std::move(out));
    const bool train = mode == NormMode::kTrain;
    record<T>("batch_norm", {x, gamma, beta}, result,
              [x, gamma, beta, xhat = std::move(xhat), inv_std, n, c, s, m, train](const std::vector<T>& g) {
                  typename TapeNode<T>::Grads grads(3);
                  std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
                  for (std::size_t b = 0; b < n; ++b)
                      for (std::size_t ch = 0; ch < c; ++ch) {
                          const std::size_t off = (b * c + ch) * s;
                          for (std::size_t i = 0; i < s; ++i) {
                              sum_g[ch] += g[off + i];
                              sum_gx[ch] += g[off + i] * xhat[off + i];
                          }
                      }
                  if (x.tracked()) {
                      const auto gv = gamma.data();
                      std::vector<T> gx(x.numel());
                      for (std::size_t b = 0; b < n; ++b)
                          for (std::size_t ch = 0; ch < c; ++ch) {
                              const std::size_t off = (b * c + ch) * s;
                              const T scale = gv[ch] * inv_std[ch];
                              for (std::size_t i = 0; i < s; ++i) {
                                  if (train) {
                                      gx[off + i] = scale * (g[off + i] - sum_g[ch] / T(m) -
                                                             xhat[off + i] * sum_gx[ch] / T(m));
                                  } else {
                                      gx[off + i] = scale * g[off + i];
                                  }
                              }
                          }
                      grads[0] = std::move(gx);
                  }
                  if (gamma.tracked()) grads[1] = sum_gx;
                  if (beta.tracked()) grads[2] = sum_g;
                  return grads;
              });
    return result;
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
    if (numel_of(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
    BasicTensor<T> result(std::move(shape), x.values());
    record<T>("reshape", {x}, result, [](const std::vector<T>& g) { return typename TapeNode<T>::Grads{g}; });
    return result;
}

template <typename T>
BasicTensor<T> flatten(const BasicTensor<T>& x) {
    if (x.rank() < 1) throw ShapeError("flatten: rank-0 input");
    return reshape(x, Shape{x.dim(0), x.numel() / x.dim(0)});
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const std::size_t n = parts[0].dim(0);
    std::size_t width = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != n) shape_mismatch("concat", parts[0].shape(), p.shape());
        check_finite("concat", p);
        widths.push_back(p.dim(1));
        width += p.dim(1);
    }
    std::vector<T> out(n * width);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t col = 0;
        for (std::size_t j = 0; j < parts.size(); ++j) {
            std::copy_n(parts[j].data().data() + r * widths[j], widths[j], out.data() + r * width + col);
            col += widths[j];
        }
    }
    BasicTensor<T> result(Shape{n, width}, std::move(out));
    record<T>("concat", parts, result, [parts, widths, n, width](const std::vector<T>& g) {
        typename TapeNode<T>::Grads grads(parts.size());
        std::size_t col = 0;
        for (std::size_t j = 0; j < parts.size(); ++j) {
            if (parts[j].tracked()) {
                std::vector<T> gp(n * widths[j]);
                for (std::size_t r = 0; r < n; ++r)
                    std::copy_n(g.data() + r * width + col, widths[j], gp.data() + r * widths[j]);
                grads[j] = std::move(gp);
            }
            col += widths[j];
        }
        return grads;
    });
    return result;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
    check_finite("sum", x);
    T acc = 0;
    for (T v : x.data()) acc += v;
    BasicTensor<T> result = BasicTensor<T>::scalar(acc);
    const std::size_t n = x.numel();
    record<T>("sum", {x}, result, [n](const std::vector<T>& g) {
        return typename TapeNode<T>::Grads{std::vector<T>(n, g[0])};
    });
    return result;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
    check_finite("mean", x);
    T acc = 0;
    for (T v : x.data()) acc += v;
    const std::size_t n = x.numel();
    BasicTensor<T> result = BasicTensor<T>::scalar(acc / T(n));
    record<T>("mean", {x}, result, [n](const std::vector<T>& g) {
        return typename TapeNode<T>::Grads{std::vector<T>(n, g[0] / T(n))};
    });
    return result;
}

template <typename T>
BasicTensor<T> l2_norm(const BasicTensor<T>& x) {
    if (x.rank() != 2) throw ShapeError("l2_norm: input must be (N, d), got " + shape_str(x.shape()));
    check_finite("l2_norm", x);
    const std::size_t n = x.dim(0), d = x.dim(1);
    const auto xv = x.data();
    std::vector<T> norms(n);
    for (std::size_t r = 0; r < n; ++r) {
        T acc = 0;
        for (std::size_t j = 0; j < d; ++j) acc += xv[r * d + j] * xv[r * d + j];
        norms[r] = std::sqrt(acc);
    }
    BasicTensor<T> result(Shape{n, 1}, norms);
    record<T>("l2_norm", {x}, result, [x, norms, n, d](const std::vector<T>& g) {
        const auto xv = x.data();
        std::vector<T> gx(n * d);
        for (std::size_t r = 0; r < n; ++r) {
            const T inv = norms[r] > T(0) ? g[r] / norms[r] : T(0);
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] = xv[r * d + j] * inv;
        }
        return typename TapeNode<T>::Grads{std::move(gx)};
    });
    return result;
}

template <typename T>
BasicTensor<T> normalize_rows(const BasicTensor<T>& x, T norm_floor) {
    if (x.rank() != 2) throw ShapeError("normalize_rows: input must be (N, d), got " + shape_str(x.shape()));
    check_finite("normalize_rows", x);
    const std::size_t n = x.dim(0), d = x.dim(1);
    const auto xv = x.data();
    std::vector<T> norms(n), out(n * d);
    for (std::size_t r = 0; r < n; ++r) {
        // Accumulate in double so float rows keep unit norm to ~1e-7.
        double acc = 0;
        for (std::size_t j = 0; j < d; ++j) acc += double(xv[r * d + j]) * double(xv[r * d + j]);
        const double norm = std::sqrt(acc);
        if (!(norm > double(norm_floor))) throw NumericalError("degenerate latent at row " + std::to_string(r));
        norms[r] = T(norm);
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = T(double(xv[r * d + j]) / norm);
    }
    BasicTensor<T> result(x.shape(), out);
    record<T>("normalize_rows", {x}, result, [out, norms, n, d](const std::vector<T>& g) {
        // d(x/|x|) = (g - y (y . g)) / |x|
        std::vector<T> gx(n * d);
        for (std::size_t r = 0; r < n; ++r) {
            T dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += out[r * d + j] * g[r * d + j];
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] = (g[r * d + j] - out[r * d + j] * dot) / norms[r];
        }
        return typename TapeNode<T>::Grads{std::move(gx)};
    });
    result.set_on_sphere(true);
    return result;
}

template <typename T>
BasicTensor<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
    if (pred.shape() != target.shape()) shape_mismatch("mse_loss", pred.shape(), target.shape());
    check_finite("mse_loss", pred);
    check_finite("mse_loss", target);
    const std::size_t n = pred.numel();
    const auto pv = pred.data();
    const auto tv = target.data();
    std::vector<T> diff(n);
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        diff[i] = pv[i] - tv[i];
        acc += diff[i] * diff[i];
    }
    BasicTensor<T> result = BasicTensor<T>::scalar(acc / T(n));
    record<T>("mse_loss", {pred, target}, result, [pred, target, diff = std::move(diff), n](const std::vector<T>& g) {
        typename TapeNode<T>::Grads grads(2);
        std::vector<T> gp(n);
        const T c = T(2) * g[0] / T(n);
        for (std::size_t i = 0; i < n; ++i) gp[i] = c * diff[i];
        if (target.tracked()) {
            std::vector<T> gt(n);
            for (std::size_t i = 0; i < n; ++i) gt[i] = -gp[i];
            grads[1] = std::move(gt);
        }
        if (pred.tracked()) grads[0] = std::move(gp);
        return grads;
    });
    return result;
}

template <typename T>
BasicTensor<T> bce_loss(const BasicTensor<T>& prob, const BasicTensor<T>& target) {
    if (prob.shape() != target.shape()) shape_mismatch("bce_loss", prob.shape(), target.shape());
    check_finite("bce_loss", prob);
    check_finite("bce_loss", target);
    const std::size_t n = prob.numel();
    const T lo = T(kBceClamp), hi = T(1) - T(kBceClamp);
    const auto pv = prob.data();
    const auto tv = target.data();
    std::vector<T> clamped(n);
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T p = std::clamp(pv[i], lo, hi);
        clamped[i] = p;
        acc -= tv[i] * std::log(p) + (T(1) - tv[i]) * std::log(T(1) - p);
    }
    BasicTensor<T> result = BasicTensor<T>::scalar(acc / T(n));
    // The gradient is evaluated at the clamped probability and passed straight
    // through the clamp.
    record<T>("bce_loss", {prob, target}, result, [prob, target, clamped = std::move(clamped), n](const std::vector<T>& g) {
        typename TapeNode<T>::Grads grads(2);
        const auto tv = target.data();
        const T c = g[0] / T(n);
        if (prob.tracked()) {
            std::vector<T> gp(n);
            for (std::size_t i = 0; i < n; ++i) {
                const T p = clamped[i];
                gp[i] = c * (-tv[i] / p + (T(1) - tv[i]) / (T(1) - p));
            }
            grads[0] = std::move(gp);
        }
        if (target.tracked()) {
            std::vector<T> gt(n);
            for (std::size_t i = 0; i < n; ++i) gt[i] = c * (std::log(T(1) - clamped[i]) - std::log(clamped[i]));
            grads[1] = std::move(gt);
        }
        return grads;
    });
    return result;
}

#define SWAE_INSTANTIATE_OPS(T)                                                                              \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                              \
    template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                              \
    template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                              \
    template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                \
    template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                           \
    template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);    \
    template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                            \
                                   const std::optional<BasicTensor<T>>&, ConvGeometry);                     \
    template BasicTensor<T> conv_transpose2d(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                             const std::optional<BasicTensor<T>>&, ConvGeometry);           \
    template BasicTensor<T> relu(const BasicTensor<T>&);                                                    \
    template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                                           \
    template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                 \
    template BasicTensor<T> tanh(const BasicTensor<T>&);                                                    \
    template BasicTensor<T> batch_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                       BatchNormState<T>&, NormMode);                                       \
    template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                          \
    template BasicTensor<T> flatten(const BasicTensor<T>&);                                                 \
    template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&);                                     \
    template BasicTensor<T> sum(const BasicTensor<T>&);                                                     \
    template BasicTensor<T> mean(const BasicTensor<T>&);                                                    \
    template BasicTensor<T> l2_norm(const BasicTensor<T>&);                                                 \
    template BasicTensor<T> normalize_rows(const BasicTensor<T>&, T);                                       \
    template BasicTensor<T> mse_loss(const BasicTensor<T>&, const BasicTensor<T>&);                         \
    template BasicTensor<T> bce_loss(const BasicTensor<T>&, const BasicTensor<T>&);

SWAE_INSTANTIATE_OPS(float)
SWAE_INSTANTIATE_OPS(double)

}  // namespace swae::ops
