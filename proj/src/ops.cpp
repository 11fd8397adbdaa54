#include "nucleo/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <iostream>

namespace nucleo {

namespace {

struct BlasInit {
    BlasInit() { openblas_set_num_threads(1); }  // deterministic accumulation order
};
const BlasInit blas_init;

void check_rank(const Tensor& t, std::size_t r, const char* what) {
    if (t.rank() != r)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) +
                         ", got shape " + shape_str(t.shape()));
}

// Unfolds one Cin x H x W plane into (Cin*kh*kw) x (Ho*Wo), stride 1.
void im2col(const double* img, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, int pad, double* col) {
    const std::size_t ho = h + 2 * pad - kh + 1;
    const std::size_t wo = w + 2 * pad - kw + 1;
    for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t p = 0; p < kh; ++p) {
            for (std::size_t q = 0; q < kw; ++q) {
                double* dst = col + ((c * kh + p) * kw + q) * ho * wo;
                for (std::size_t i = 0; i < ho; ++i) {
                    const long ii = static_cast<long>(i + p) - pad;
                    if (ii < 0 || ii >= static_cast<long>(h)) {
                        std::fill(dst + i * wo, dst + (i + 1) * wo, 0.0);
                        continue;
                    }
                    const double* src = img + (c * h + ii) * w;
                    for (std::size_t j = 0; j < wo; ++j) {
                        const long jj = static_cast<long>(j + q) - pad;
                        dst[i * wo + j] =
                            (jj < 0 || jj >= static_cast<long>(w)) ? 0.0 : src[jj];
                    }
                }
            }
        }
    }
}

// Accumulates a (Cin*kh*kw) x (Ho*Wo) column buffer back onto a plane.
void col2im(const double* col, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, int pad, double* img) {
    const std::size_t ho = h + 2 * pad - kh + 1;
    const std::size_t wo = w + 2 * pad - kw + 1;
    for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t p = 0; p < kh; ++p) {
            for (std::size_t q = 0; q < kw; ++q) {
                const double* src = col + ((c * kh + p) * kw + q) * ho * wo;
                for (std::size_t i = 0; i < ho; ++i) {
                    const long ii = static_cast<long>(i + p) - pad;
                    if (ii < 0 || ii >= static_cast<long>(h)) continue;
                    double* dst = img + (c * h + ii) * w;
                    for (std::size_t j = 0; j < wo; ++j) {
                        const long jj = static_cast<long>(j + q) - pad;
                        if (jj >= 0 && jj < static_cast<long>(w)) dst[jj] += src[i * wo + j];
                    }
                }
            }
        }
    }
}

// Splits a rank >= 2 shape into (outer, axis-1 extent, inner).
void axis1_split(const Shape& s, std::size_t& outer, std::size_t& mid, std::size_t& inner) {
    if (s.size() < 2) throw ShapeError("channel op needs rank >= 2, got " + shape_str(s));
    outer = s[0];
    mid = s[1];
    inner = 1;
    for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, const double* b, double beta, double* c) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), alpha, a, static_cast<int>(trans_a ? m : k), b,
                static_cast<int>(trans_b ? k : n), beta, c, static_cast<int>(n));
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
    check_rank(x, 4, "conv2d input");
    check_rank(w, 4, "conv2d kernel");
    const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin)
        throw ShapeError("conv2d: kernel expects " + std::to_string(w.dim(1)) +
                         " input channels, input has " + std::to_string(cin) + " (axis 1)");
    if (kh % 2 == 0 || kw % 2 == 0)
        throw ShapeError("conv2d: kernel extents must be odd, got " + shape_str(w.shape()));
    if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
    if (b.defined() && (b.rank() != 1 || b.dim(0) != cout))
        throw ShapeError("conv2d: bias shape " + shape_str(b.shape()) + " does not match " +
                         std::to_string(cout) + " output channels (axis 0)");
    if (h + 2 * pad < kh || wd + 2 * pad < kw)
        throw ShapeError("conv2d: kernel larger than padded input on spatial axes");

    const std::size_t ho = h + 2 * pad - kh + 1;
    const std::size_t wo = wd + 2 * pad - kw + 1;
    const std::size_t k = cin * kh * kw;
    const std::size_t plane = ho * wo;

    std::vector<double> out(n * cout * plane, 0.0);
    std::vector<double> col(k * plane);
    for (std::size_t s = 0; s < n; ++s) {
        im2col(x.data().data() + s * cin * h * wd, cin, h, wd, kh, kw, pad, col.data());
        gemm(false, false, cout, plane, k, 1.0, w.data().data(), col.data(), 0.0,
             out.data() + s * cout * plane);
    }
    if (b.defined()) {
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t c = 0; c < cout; ++c) {
                double* dst = out.data() + (s * cout + c) * plane;
                const double bias = b.data()[c];
                for (std::size_t i = 0; i < plane; ++i) dst[i] += bias;
            }
    }

    std::vector<Tensor> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    bool needs = any_requires_grad(inputs);
    auto node = std::make_shared<Node>();
    node->op_name = "conv2d";
    node->inputs = inputs;
    Tensor xx = x, ww = w, bb = b;
    node->backward = [=](const std::vector<double>& go) mutable {
        std::vector<double> colbuf(k * plane);
        std::vector<double> dcol(k * plane);
        for (std::size_t s = 0; s < n; ++s) {
            const double* go_s = go.data() + s * cout * plane;
            im2col(xx.data().data() + s * cin * h * wd, cin, h, wd, kh, kw, pad, colbuf.data());
            if (ww.requires_grad()) {
                // dW += dOut * col^T
                gemm(false, true, cout, k, plane, 1.0, go_s, colbuf.data(), 1.0,
                     ww.grad_buffer().data());
            }
            if (xx.requires_grad()) {
                gemm(true, false, k, plane, cout, 1.0, ww.data().data(), go_s, 0.0, dcol.data());
                col2im(dcol.data(), cin, h, wd, kh, kw, pad,
                       xx.grad_buffer().data() + s * cin * h * wd);
            }
            if (bb.defined() && bb.requires_grad()) {
                auto& gb = bb.grad_buffer();
                for (std::size_t c = 0; c < cout; ++c) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) acc += go_s[c * plane + i];
                    gb[c] += acc;
                }
            }
        }
    };
    return Tensor::from_op({n, cout, ho, wo}, std::move(out), std::move(node), needs);
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    check_rank(x, 4, "conv2d_transpose input");
    check_rank(w, 4, "conv2d_transpose kernel");
    const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(0) != cin)
        throw ShapeError("conv2d_transpose: kernel expects " + std::to_string(w.dim(0)) +
                         " input channels, input has " + std::to_string(cin));
    if (stride < 1) throw ShapeError("conv2d_transpose: stride must be >= 1");
    if (b.defined() && (b.rank() != 1 || b.dim(0) != cout))
        throw ShapeError("conv2d_transpose: bias does not match output channels");

    const std::size_t ho = (h - 1) * stride + kh;
    const std::size_t wo = (wd - 1) * stride + kw;
    const std::size_t k = cout * kh * kw;
    const std::size_t in_plane = h * wd;

    std::vector<double> out(n * cout * ho * wo, 0.0);
    std::vector<double> col(k * in_plane);
    for (std::size_t s = 0; s < n; ++s) {
        // col = W^T * x_s, then scatter onto the strided output grid
        gemm(true, false, k, in_plane, cin, 1.0, w.data().data(),
             x.data().data() + s * cin * in_plane, 0.0, col.data());
        double* dst = out.data() + s * cout * ho * wo;
        for (std::size_t c = 0; c < cout; ++c)
            for (std::size_t p = 0; p < kh; ++p)
                for (std::size_t q = 0; q < kw; ++q) {
                    const double* src = col.data() + ((c * kh + p) * kw + q) * in_plane;
                    for (std::size_t i = 0; i < h; ++i)
                        for (std::size_t j = 0; j < wd; ++j)
                            dst[(c * ho + i * stride + p) * wo + j * stride + q] +=
                                src[i * wd + j];
                }
        if (b.defined())
            for (std::size_t c = 0; c < cout; ++c)
                for (std::size_t i = 0; i < ho * wo; ++i) dst[c * ho * wo + i] += b.data()[c];
    }

    std::vector<Tensor> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    bool needs = any_requires_grad(inputs);
    auto node = std::make_shared<Node>();
    node->op_name = "conv2d_transpose";
    node->inputs = inputs;
    Tensor xx = x, ww = w, bb = b;
    const int st = stride;
    node->backward = [=](const std::vector<double>& go) mutable {
        std::vector<double> dcol(k * in_plane);
        for (std::size_t s = 0; s < n; ++s) {
            const double* go_s = go.data() + s * cout * ho * wo;
            // gather dcol from the scattered positions
            for (std::size_t c = 0; c < cout; ++c)
                for (std::size_t p = 0; p < kh; ++p)
                    for (std::size_t q = 0; q < kw; ++q) {
                        double* dst = dcol.data() + ((c * kh + p) * kw + q) * in_plane;
                        for (std::size_t i = 0; i < h; ++i)
                            for (std::size_t j = 0; j < wd; ++j)
                                dst[i * wd + j] =
                                    go_s[(c * ho + i * st + p) * wo + j * st + q];
                    }
            if (xx.requires_grad())
                gemm(false, false, cin, in_plane, k, 1.0, ww.data().data(), dcol.data(), 1.0,
                     xx.grad_buffer().data() + s * cin * in_plane);
            if (ww.requires_grad())
                gemm(false, true, cin, k, in_plane, 1.0,
                     xx.data().data() + s * cin * in_plane, dcol.data(), 1.0,
                     ww.grad_buffer().data());
            if (bb.defined() && bb.requires_grad()) {
                auto& gb = bb.grad_buffer();
                for (std::size_t c = 0; c < cout; ++c) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < ho * wo; ++i) acc += go_s[c * ho * wo + i];
                    gb[c] += acc;
                }
            }
        }
    };
    return Tensor::from_op({n, cout, ho, wo}, std::move(out), std::move(node), needs);
}

namespace {

Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, double sign_b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + sign_b * b.data()[i];
    bool needs = any_requires_grad({a, b});
    auto node = std::make_shared<Node>();
    node->op_name = name;
    node->inputs = {a, b};
    Tensor aa = a, bb = b;
    node->backward = [aa, bb, sign_b](const std::vector<double>& go) mutable {
        if (aa.requires_grad()) accumulate_grad(aa, go);
        if (bb.requires_grad()) {
            auto& gb = bb.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] += sign_b * go[i];
        }
    };
    return Tensor::from_op(a.shape(), std::move(out), std::move(node), needs);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, "add", 1.0); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, "sub", -1.0); }

Tensor concat_channels(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    std::size_t outer, mid0, inner;
    axis1_split(xs[0].shape(), outer, mid0, inner);
    std::size_t total_mid = 0;
    for (const auto& t : xs) {
        std::size_t o, m, in;
        axis1_split(t.shape(), o, m, in);
        if (o != outer || in != inner || t.rank() != xs[0].rank())
            throw ShapeError("concat: incompatible shapes " + shape_str(xs[0].shape()) +
                             " vs " + shape_str(t.shape()));
        total_mid += m;
    }
    Shape out_shape = xs[0].shape();
    out_shape[1] = total_mid;
    std::vector<double> out(outer * total_mid * inner);
    std::size_t off = 0;
    for (const auto& t : xs) {
        const std::size_t m = t.dim(1);
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(t.data().begin() + o * m * inner, t.data().begin() + (o + 1) * m * inner,
                      out.begin() + (o * total_mid + off) * inner);
        off += m;
    }
    bool needs = any_requires_grad(xs);
    auto node = std::make_shared<Node>();
    node->op_name = "concat";
    node->inputs = xs;
    auto ins = xs;
    node->backward = [ins, outer, inner, total_mid](const std::vector<double>& go) mutable {
        std::size_t off = 0;
        for (auto& t : ins) {
            const std::size_t m = t.dim(1);
            if (t.requires_grad()) {
                auto& g = t.grad_buffer();
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < m * inner; ++i)
                        g[o * m * inner + i] += go[(o * total_mid + off) * inner + i];
            }
            off += m;
        }
    };
    return Tensor::from_op(std::move(out_shape), std::move(out), std::move(node), needs);
}

Tensor slice_channels(const Tensor& x, std::size_t c0, std::size_t c1) {
    std::size_t outer, mid, inner;
    axis1_split(x.shape(), outer, mid, inner);
    if (c0 >= c1 || c1 > mid)
        throw ShapeError("slice: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") out of " + std::to_string(mid) + " channels");
    const std::size_t m = c1 - c0;
    Shape out_shape = x.shape();
    out_shape[1] = m;
    std::vector<double> out(outer * m * inner);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy(x.data().begin() + (o * mid + c0) * inner,
                  x.data().begin() + (o * mid + c1) * inner, out.begin() + o * m * inner);
    bool needs = x.requires_grad();
    auto node = std::make_shared<Node>();
    node->op_name = "slice";
    node->inputs = {x};
    Tensor xx = x;
    node->backward = [xx, outer, mid, inner, c0, m](const std::vector<double>& go) mutable {
        auto& g = xx.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < m * inner; ++i)
                g[(o * mid + c0) * inner + i] += go[o * m * inner + i];
    };
    return Tensor::from_op(std::move(out_shape), std::move(out), std::move(node), needs);
}

namespace {

template <class F, class DF>
Tensor unary(const Tensor& x, const char* name, F f, DF df) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x.data()[i]);
    bool needs = x.requires_grad();
    auto node = std::make_shared<Node>();
    node->op_name = name;
    node->inputs = {x};
    Tensor xx = x;
    std::vector<double> saved = out;
    node->backward = [xx, df, saved](const std::vector<double>& go) mutable {
        auto& g = xx.grad_buffer();
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * df(xx.data()[i], saved[i]);
    };
    return Tensor::from_op(x.shape(), std::move(out), std::move(node), needs);
}

}  // namespace

Tensor relu(const Tensor& x) {
    // derivative at exactly 0 defined as 0
    return unary(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor log_op(const Tensor& x) {
    return unary(
        x, "log", [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

Tensor mul_scalar(const Tensor& x, double s) {
    return unary(
        x, "mul_scalar", [s](double v) { return s * v; },
        [s](double, double) { return s; });
}

Tensor softmax_channel(const Tensor& x) {
    std::size_t outer, c, inner;
    axis1_split(x.shape(), outer, c, inner);
    std::vector<double> out(x.numel());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            double mx = -1e308;
            for (std::size_t j = 0; j < c; ++j)
                mx = std::max(mx, x.data()[(o * c + j) * inner + i]);
            double z = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                const double e = std::exp(x.data()[(o * c + j) * inner + i] - mx);
                out[(o * c + j) * inner + i] = e;
                z += e;
            }
            for (std::size_t j = 0; j < c; ++j) out[(o * c + j) * inner + i] /= z;
        }
    bool needs = x.requires_grad();
    auto node = std::make_shared<Node>();
    node->op_name = "softmax";
    node->inputs = {x};
    Tensor xx = x;
    std::vector<double> y = out;
    node->backward = [xx, y, outer, c, inner](const std::vector<double>& go) mutable {
        auto& g = xx.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const std::size_t idx = (o * c + j) * inner + i;
                    dot += go[idx] * y[idx];
                }
                for (std::size_t j = 0; j < c; ++j) {
                    const std::size_t idx = (o * c + j) * inner + i;
                    g[idx] += y[idx] * (go[idx] - dot);
                }
            }
    };
    return Tensor::from_op(x.shape(), std::move(out), std::move(node), needs);
}

namespace {

Tensor reduce_all(const Tensor& x, bool take_mean) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    const double scale = take_mean ? 1.0 / static_cast<double>(x.numel()) : 1.0;
    bool needs = x.requires_grad();
    auto node = std::make_shared<Node>();
    node->op_name = take_mean ? "mean" : "sum";
    node->inputs = {x};
    Tensor xx = x;
    node->backward = [xx, scale](const std::vector<double>& go) mutable {
        auto& g = xx.grad_buffer();
        const double v = go[0] * scale;
        for (auto& e : g) e += v;
    };
    return Tensor::from_op({1}, {acc * scale}, std::move(node), needs);
}

}  // namespace

Tensor sum(const Tensor& x) { return reduce_all(x, false); }
Tensor mean(const Tensor& x) { return reduce_all(x, true); }

Tensor pad_replicate_even(const Tensor& x) {
    check_rank(x, 4, "pad_replicate_even input");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 == 0 && w % 2 == 0) return x;
    const std::size_t ho = h + h % 2, wo = w + w % 2;
    std::vector<double> out(n * c * ho * wo);
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t i = 0; i < ho; ++i) {
            const std::size_t si = std::min(i, h - 1);
            for (std::size_t j = 0; j < wo; ++j)
                out[(p * ho + i) * wo + j] = x.data()[(p * h + si) * w + std::min(j, w - 1)];
        }
    bool needs = x.requires_grad();
    auto node = std::make_shared<Node>();
    node->op_name = "pad_replicate_even";
    node->inputs = {x};
    Tensor xx = x;
    node->backward = [xx, n, c, h, w, ho, wo](const std::vector<double>& go) mutable {
        auto& g = xx.grad_buffer();
        for (std::size_t p = 0; p < n * c; ++p)
            for (std::size_t i = 0; i < ho; ++i) {
                const std::size_t si = std::min(i, h - 1);
                for (std::size_t j = 0; j < wo; ++j)
                    g[(p * h + si) * w + std::min(j, w - 1)] += go[(p * ho + i) * wo + j];
            }
    };
    return Tensor::from_op({n, c, ho, wo}, std::move(out), std::move(node), needs);
}

Tensor max_pool2x2(const Tensor& x) {
    check_rank(x, 4, "max_pool input");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 || w % 2)
        throw ShapeError("max_pool: spatial extents must be even, got " + shape_str(x.shape()));
    const std::size_t ho = h / 2, wo = w / 2;
    std::vector<double> out(n * c * ho * wo);
    std::vector<std::size_t> arg(out.size());
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                std::size_t best = (p * h + 2 * i) * w + 2 * j;
                for (int di = 0; di < 2; ++di)
                    for (int dj = 0; dj < 2; ++dj) {
                        const std::size_t idx = (p * h + 2 * i + di) * w + 2 * j + dj;
                        if (x.data()[idx] > x.data()[best]) best = idx;
                    }
                const std::size_t o = (p * ho + i) * wo + j;
                out[o] = x.data()[best];
                arg[o] = best;
            }
    bool needs = x.requires_grad();
    auto node = std::make_shared<Node>();
    node->op_name = "max_pool";
    node->inputs = {x};
    Tensor xx = x;
    node->backward = [xx, arg](const std::vector<double>& go) mutable {
        auto& g = xx.grad_buffer();
        for (std::size_t i = 0; i < go.size(); ++i) g[arg[i]] += go[i];
    };
    return Tensor::from_op({n, c, ho, wo}, std::move(out), std::move(node), needs);
}

Tensor avg_pool2x2(const Tensor& x) {
    check_rank(x, 4, "avg_pool input");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 || w % 2)
        throw ShapeError("avg_pool: spatial extents must be even, got " + shape_str(x.shape()));
    const std::size_t ho = h / 2, wo = w / 2;
    std::vector<double> out(n * c * ho * wo);
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                double acc = 0.0;
                for (int di = 0; di < 2; ++di)
                    for (int dj = 0; dj < 2; ++dj)
                        acc += x.data()[(p * h + 2 * i + di) * w + 2 * j + dj];
                out[(p * ho + i) * wo + j] = acc * 0.25;
            }
    bool needs = x.requires_grad();
    auto node = std::make_shared<Node>();
    node->op_name = "avg_pool";
    node->inputs = {x};
    Tensor xx = x;
    node->backward = [xx, n, c, h, w, ho, wo](const std::vector<double>& go) mutable {
        auto& g = xx.grad_buffer();
        for (std::size_t p = 0; p < n * c; ++p)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    const double v = go[(p * ho + i) * wo + j] * 0.25;
                    for (int di = 0; di < 2; ++di)
                        for (int dj = 0; dj < 2; ++dj)
                            g[(p * h + 2 * i + di) * w + 2 * j + dj] += v;
                }
    };
    return Tensor::from_op({n, c, ho, wo}, std::move(out), std::move(node), needs);
}

Tensor global_avg_pool(const Tensor& x) {
    check_rank(x, 4, "global_avg_pool input");
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    std::vector<double> out(n * c);
    for (std::size_t p = 0; p < n * c; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += x.data()[p * plane + i];
        out[p] = acc / static_cast<double>(plane);
    }
    bool needs = x.requires_grad();
    auto node = std::make_shared<Node>();
    node->op_name = "global_avg_pool";
    node->inputs = {x};
    Tensor xx = x;
    node->backward = [xx, plane](const std::vector<double>& go) mutable {
        auto& g = xx.grad_buffer();
        const double inv = 1.0 / static_cast<double>(plane);
        for (std::size_t p = 0; p < go.size(); ++p) {
            const double v = go[p] * inv;
            for (std::size_t i = 0; i < plane; ++i) g[p * plane + i] += v;
        }
    };
    return Tensor::from_op({n, c}, std::move(out), std::move(node), needs);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_rank(a, 2, "matmul lhs");
    check_rank(b, 2, "matmul rhs");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<double> out(m * n, 0.0);
    gemm(false, false, m, n, k, 1.0, a.data().data(), b.data().data(), 0.0, out.data());
    bool needs = any_requires_grad({a, b});
    auto node = std::make_shared<Node>();
    node->op_name = "matmul";
    node->inputs = {a, b};
    Tensor aa = a, bb = b;
    node->backward = [aa, bb, m, n, k](const std::vector<double>& go) mutable {
        if (aa.requires_grad())
            gemm(false, true, m, k, n, 1.0, go.data(), bb.data().data(), 1.0,
                 aa.grad_buffer().data());
        if (bb.requires_grad())
            gemm(true, false, k, n, m, 1.0, aa.data().data(), go.data(), 1.0,
                 bb.grad_buffer().data());
    };
    return Tensor::from_op({m, n}, std::move(out), std::move(node), needs);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    check_rank(x, 2, "linear input");
    check_rank(w, 2, "linear weight");
    const std::size_t n = x.dim(0), f = x.dim(1), c = w.dim(0);
    if (w.dim(1) != f)
        throw ShapeError("linear: weight expects " + std::to_string(w.dim(1)) +
                         " features, input has " + std::to_string(f));
    std::vector<double> out(n * c, 0.0);
    gemm(false, true, n, c, f, 1.0, x.data().data(), w.data().data(), 0.0, out.data());
    if (b.defined())
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b.data()[j];
    std::vector<Tensor> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    bool needs = any_requires_grad(inputs);
    auto node = std::make_shared<Node>();
    node->op_name = "linear";
    node->inputs = inputs;
    Tensor xx = x, ww = w, bb = b;
    node->backward = [xx, ww, bb, n, f, c](const std::vector<double>& go) mutable {
        if (xx.requires_grad())
            gemm(false, false, n, f, c, 1.0, go.data(), ww.data().data(), 1.0,
                 xx.grad_buffer().data());
        if (ww.requires_grad())
            gemm(true, false, c, f, n, 1.0, go.data(), xx.data().data(), 1.0,
                 ww.grad_buffer().data());
        if (bb.defined() && bb.requires_grad()) {
            auto& gb = bb.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) gb[j] += go[i * c + j];
        }
    };
    return Tensor::from_op({n, c}, std::move(out), std::move(node), needs);
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, bool training,
                  BatchNormStats& stats, double momentum, double eps) {
    if (x.rank() != 2 && x.rank() != 4)
        throw ShapeError("batch_norm: expected rank 2 or 4 input, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1);
    const std::size_t plane = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    if (gamma.numel() != c || beta.numel() != c)
        throw ShapeError("batch_norm: gamma/beta length must equal " + std::to_string(c) +
                         " channels (axis 1)");
    if (stats.mean.empty()) {
        stats.mean.assign(c, 0.0);
        stats.var.assign(c, 1.0);
    }

    const std::size_t m = n * plane;
    std::vector<double> mu(c), var(c), invstd(c);
    if (training) {
        for (std::size_t j = 0; j < c; ++j) {
            double acc = 0.0;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t i = 0; i < plane; ++i) acc += x.data()[(s * c + j) * plane + i];
            mu[j] = acc / static_cast<double>(m);
            double v = 0.0;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = x.data()[(s * c + j) * plane + i] - mu[j];
                    v += d * d;
                }
            var[j] = v / static_cast<double>(m);
            stats.mean[j] = momentum * stats.mean[j] + (1.0 - momentum) * mu[j];
            stats.var[j] = momentum * stats.var[j] + (1.0 - momentum) * var[j];
        }
        stats.seen = true;
    } else {
        if (!stats.seen) {
            static bool warned = false;
            if (!warned) {
                std::cerr << "[nucleo] batch_norm eval before any train update; "
                             "using initialized stats (mean 0, var 1)\n";
                warned = true;
            }
        }
        mu = stats.mean;
        var = stats.var;
    }
    for (std::size_t j = 0; j < c; ++j) invstd[j] = 1.0 / std::sqrt(var[j] + eps);

    std::vector<double> xhat(x.numel()), out(x.numel());
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < c; ++j)
            for (std::size_t i = 0; i < plane; ++i) {
                const std::size_t idx = (s * c + j) * plane + i;
                xhat[idx] = (x.data()[idx] - mu[j]) * invstd[j];
                out[idx] = gamma.data()[j] * xhat[idx] + beta.data()[j];
            }

    bool needs = any_requires_grad({x, gamma, beta});
    auto node = std::make_shared<Node>();
    node->op_name = "batch_norm";
    node->inputs = {x, gamma, beta};
    Tensor xx = x, gg = gamma, bb = beta;
    node->backward = [xx, gg, bb, xhat, invstd, training, n, c,
                      plane](const std::vector<double>& go) mutable {
        const std::size_t m = n * plane;
        for (std::size_t j = 0; j < c; ++j) {
            double sum_go = 0.0, sum_go_xhat = 0.0;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t i = 0; i < plane; ++i) {
                    const std::size_t idx = (s * c + j) * plane + i;
                    sum_go += go[idx];
                    sum_go_xhat += go[idx] * xhat[idx];
                }
            if (gg.requires_grad()) gg.grad_buffer()[j] += sum_go_xhat;
            if (bb.requires_grad()) bb.grad_buffer()[j] += sum_go;
            if (xx.requires_grad()) {
                auto& g = xx.grad_buffer();
                const double gam = gg.data()[j];
                if (training) {
                    // full backward through the batch statistics
                    const double inv_m = 1.0 / static_cast<double>(m);
                    for (std::size_t s = 0; s < n; ++s)
                        for (std::size_t i = 0; i < plane; ++i) {
                            const std::size_t idx = (s * c + j) * plane + i;
                            g[idx] += gam * invstd[j] *
                                      (go[idx] - inv_m * sum_go - inv_m * xhat[idx] * sum_go_xhat);
                        }
                } else {
                    for (std::size_t s = 0; s < n; ++s)
                        for (std::size_t i = 0; i < plane; ++i) {
                            const std::size_t idx = (s * c + j) * plane + i;
                            g[idx] += gam * invstd[j] * go[idx];
                        }
                }
            }
        }
    };
    return Tensor::from_op(x.shape(), std::move(out), std::move(node), needs);
}

}  // namespace nucleo
