#pragma once

// Differentiable ops over cvcs::Tensor. Feature maps use N,C,H,W.

#include <cstddef>
#include <span>
#include <vector>

#include "cvcs/tensor.hpp"

namespace cvcs {

/// Continuous source coordinates for an inverse warp: for every output cell
/// (i, j) the (u, v) pixel position to read from. Constant w.r.t. training.
struct SamplingGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> uv;  // rows * cols * 2, interleaved (u, v)

    double u(std::size_t i, std::size_t j) const { return uv[2 * (i * cols + j)]; }
    double v(std::size_t i, std::size_t j) const { return uv[2 * (i * cols + j) + 1]; }
};

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding = 0,
              int stride = 1);

Tensor relu(const Tensor& x);

Tensor max_pool2d(const Tensor& x, int kernel, int stride);

struct Sampled {
    Tensor values;  // [N, C, rows, cols]
    Tensor mask;    // [rows, cols], 1 where the source lies inside the input
};

/// Bilinear inverse warp of `feat` [N,C,H,W]. Cells whose source falls outside
/// [0,W-1] x [0,H-1] are zero and masked. Differentiable w.r.t. `feat` only.
Sampled bilinear_sample(const Tensor& feat, const SamplingGrid& grid);

/// Elementwise max across equally shaped tensors; gradient goes to the first
/// argmax.
Tensor stack_max(std::span<const Tensor> views);

/// Broadcasting elementwise ops: `b` aligns with the trailing dims of `a` and
/// each of its dims equals a's or is 1. The result has a's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// Elementwise max of two equally shaped tensors (first argument wins ties).
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor reduce_sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

/// Mean over H and W: [N,C,H,W] -> [N,C,1,1].
Tensor global_avg_pool(const Tensor& x);

/// Identity forward; backward multiplies the incoming gradient by -lambda.
Tensor grad_reverse(const Tensor& x, double lambda);

}  // namespace cvcs
