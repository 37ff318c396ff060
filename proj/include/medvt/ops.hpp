#pragma once

#include <optional>

#include "medvt/tensor.hpp"

namespace medvt::ops {

enum class Pad { same, valid };

// a [m,k] x b [k,n] -> [m,n]. Fixed summation order: ascending k for every
// output element, no reassociation.
Tensor matmul(const Tensor& a, const Tensor& b);

// Max-subtracted exponentials normalized along `axis`. -inf inputs get exact
// zero weight; a slice that is all -inf is a degenerate row (error).
Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

// x [T,H,W,Cin], k [kh,kw,Cin,Cout], applied per frame. With Pad::same the
// output spatial extent is ceil(extent/stride); with Pad::valid it is
// floor((extent-k)/stride)+1.
Tensor conv2d(const Tensor& x, const Tensor& k, int stride = 1, Pad pad = Pad::same);
// x [T,H,W,Cin], k [kt,kh,kw,Cin,Cout]; stride applies to (h,w), the
// temporal stride is fixed at 1. Padding applies to all three extents.
Tensor conv3d(const Tensor& x, const Tensor& k, int stride = 1, Pad pad = Pad::same);

// Backward kernels for the convolutions (used by autodiff, tested by FD).
Tensor conv2d_grad_input(const Tensor& gout, const Tensor& k, const Shape& xshape, int stride, Pad pad);
Tensor conv2d_grad_kernel(const Tensor& gout, const Tensor& x, const Shape& kshape, int stride, Pad pad);
Tensor conv3d_grad_input(const Tensor& gout, const Tensor& k, const Shape& xshape, int stride, Pad pad);
Tensor conv3d_grad_kernel(const Tensor& gout, const Tensor& x, const Shape& kshape, int stride, Pad pad);

// x [T,H,W,C] -> [T,H2,W2,C]; align-corners=false convention:
//   src = (dst + 0.5) * (in / out) - 0.5, clamped to [0, in-1].
// bilinear_upsample enforces H2 >= H, W2 >= W; bilinear_resize allows any
// positive target and is what the inference pipeline uses.
Tensor bilinear_upsample(const Tensor& x, int64_t h2, int64_t w2);
Tensor bilinear_resize(const Tensor& x, int64_t h2, int64_t w2);
Tensor bilinear_resize_grad_input(const Tensor& gout, const Shape& xshape);

// Per-frame group normalization over (H,W,C/groups) blocks: x [T,H,W,C],
// gain/bias [C].
Tensor group_norm(const Tensor& x, int groups, double eps, const Tensor& gain, const Tensor& bias);

// Elementwise suite. Binary ops require identical shapes (no broadcasting;
// use `tile` to expand explicitly).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor pow_scalar(const Tensor& x, double p);

Tensor concat(const std::vector<Tensor>& xs, int axis);
// Half-open [begin, end) along one axis.
Tensor slice(const Tensor& x, int axis, int64_t begin, int64_t end);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, const std::vector<int>& perm);
Tensor transpose2d(const Tensor& x);
// np.tile semantics: reps has one entry per axis.
Tensor tile(const Tensor& x, const std::vector<int64_t>& reps);

Tensor sum_axis(const Tensor& x, int axis);   // keeps the axis with extent 1
Tensor mean_axis(const Tensor& x, int axis);  // keeps the axis with extent 1
Tensor sum_all(const Tensor& x);              // shape {1}
Tensor mean_all(const Tensor& x);             // shape {1}
Tensor max_axis(const Tensor& x, int axis);   // keeps the axis with extent 1

// Index of the max along the last axis; ties -> lowest index. Output drops
// the axis and is f64-valued integers.
Tensor argmax_last(const Tensor& x);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace medvt::ops
