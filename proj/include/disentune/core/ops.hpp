#pragma once

#include <vector>

#include "disentune/core/tape.hpp"
#include "disentune/core/tensor.hpp"

// Differentiable tensor operations. Each op validates shapes (DimensionError),
// checks its output for NaN/Inf (NumericError) and, when any input needs a
// gradient and recording is enabled, registers its adjoint on the thread's tape.
namespace disentune::ops {

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // hadamard

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor relu(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Mean over one axis, which is removed from the shape.
Tensor mean_axis(const Tensor& a, int axis);

// Maximum over one axis (first index on ties), which is removed from the shape.
Tensor max_axis(const Tensor& a, int axis);

Tensor softmax(const Tensor& a, int axis = -1);

// x: [C, ...]. Normalizes each of `groups` contiguous channel groups to zero
// mean and unit variance (biased variance, eps inside the sqrt). No affine.
Tensor group_normalize(const Tensor& x, int groups, double eps = 1e-5);

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,n] x [n,p]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,n] x [p,n]^T
Tensor transpose(const Tensor& a);                   // 2-D only

Tensor reshape(const Tensor& a, Shape shape);
// Concatenation along axis 0.
Tensor concat(const std::vector<Tensor>& parts);
// Rows [begin, end) along axis 0.
Tensor slice(const Tensor& a, std::int64_t begin, std::int64_t end);

// x: [Cin,H,W], w: [Cout,Cin,3,3], zero padding 1, stride 1 or 2.
Tensor conv2d(const Tensor& x, const Tensor& w, int stride = 1);
// x: [C,H,W] -> [C,H*f,W*f].
Tensor upsample_nearest(const Tensor& x, int factor = 2);

// Mean of squared differences.
Tensor mse(const Tensor& a, const Tensor& b);
// a.b / (|a||b| + 1e-8). Both-zero inputs give 0.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

// logits: [N, C]; mean over rows of -log softmax(logits)[n, targets[n]].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

inline constexpr double kCosineStabilizer = 1e-8;

}  // namespace disentune::ops
