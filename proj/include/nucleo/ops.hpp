#pragma once

#include "nucleo/tensor.hpp"

namespace nucleo {

// Convolution primitives. Kernels are laid out Cout x Cin x kh x kw
// (transpose conv: Cin x Cout x kh x kw). Bias may be an undefined Tensor.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int pad);
Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 2);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor concat_channels(const std::vector<Tensor>& xs);
Tensor slice_channels(const Tensor& x, std::size_t c0, std::size_t c1);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log_op(const Tensor& x);
Tensor mul_scalar(const Tensor& x, double s);

// Softmax over axis 1; accepts N x C or N x C x H x W.
Tensor softmax_channel(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Replicates the last row/column so both spatial extents become even.
// Identity when they already are.
Tensor pad_replicate_even(const Tensor& x);

Tensor max_pool2x2(const Tensor& x);
Tensor avg_pool2x2(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);  // N x C x H x W -> N x C

Tensor matmul(const Tensor& a, const Tensor& b);  // M x K times K x N

// x: N x F, w: C x F, b: C (optional) -> N x C
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Per-channel batch normalization over the N, H, W axes (or over N for 2-D
// input). Running statistics are plain buffers owned by the caller; train
// mode updates them as a side effect of the forward pass.
struct BatchNormStats {
    std::vector<double> mean;
    std::vector<double> var;
    bool seen = false;  // eval before any train update falls back to (0, 1)
};

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, bool training,
                  BatchNormStats& stats, double momentum = 0.9, double eps = 1e-5);

// Raw gemm wrapper used by the conv path: C = A(M x K) * B(K x N), row major.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, const double* b, double beta, double* c);

}  // namespace nucleo
