#pragma once

#include <vector>

#include "orstereo/autograd.hpp"

// Differentiable primitives. Fields are rank-3 (C x H x W); scalars are shape {1}.
namespace orstereo::ops {

template <typename T> Var<T> add(const Var<T> &a, const Var<T> &b);
template <typename T> Var<T> sub(const Var<T> &a, const Var<T> &b);
template <typename T> Var<T> mul(const Var<T> &a, const Var<T> &b);
/// a * scale + shift with compile-time-constant coefficients.
template <typename T> Var<T> affine(const Var<T> &a, T scale, T shift = T(0));

template <typename T> Var<T> sigmoid(const Var<T> &a);
template <typename T> Var<T> tanh(const Var<T> &a);
/// x * sigmoid(x); smooth everywhere, which keeps finite-difference checks of whole networks clean.
template <typename T> Var<T> silu(const Var<T> &a);

template <typename T> Var<T> concat(const std::vector<Var<T>> &parts);
template <typename T> Var<T> slice_channels(const Var<T> &a, int first, int count);

/// weight: Cout x Cin x k x k, bias: Cout (may be an empty Var for no bias).
template <typename T>
Var<T> conv2d(const Var<T> &x, const Var<T> &weight, const Var<T> &bias, int stride, int pad);

/// Align-corners bilinear resampling; output values multiplied by `value_scale`.
template <typename T> Var<T> resize_bilinear(const Var<T> &x, int out_h, int out_w, T value_scale = T(1));

/// out(c,y,x) = bilinear sample of src(c,y,.) at x - disp(y,x). Out-of-bounds footprints give 0 and
/// a 0 in `valid` (when non-null).
template <typename T>
Var<T> warp_horizontal(const Var<T> &src, const Var<T> &disp, Tensor<T> *valid = nullptr);

/// out(r+o, y, x) = mean_c left(c,y,x) * right(c,y,x-o) for o in [-r, r]; zero outside the image.
template <typename T> Var<T> local_correlation(const Var<T> &left, const Var<T> &right, int radius);

/// Group-wise correlation volume over hypotheses k in [0, K): out(g*K+k, y, x) =
/// mean_{c in group g} left(c,y,x) * right(c,y,x-k).
template <typename T> Var<T> correlation_volume(const Var<T> &left, const Var<T> &right, int hypotheses, int groups);

template <typename T> Var<T> softmax_channels(const Var<T> &a);
/// d = sum_k k * softmax_k(-cost) over the channel axis; 1 x H x W.
template <typename T> Var<T> soft_argmin(const Var<T> &cost);

template <typename T> Var<T> mean_all(const Var<T> &a);
/// Population standard deviation over every entry.
template <typename T> Var<T> std_all(const Var<T> &a);
template <typename T> Var<T> sub_scalar(const Var<T> &a, const Var<T> &s);
template <typename T> Var<T> mul_scalar(const Var<T> &a, const Var<T> &s);
template <typename T> Var<T> div_scalar(const Var<T> &a, const Var<T> &s);

/// sum_i a_i * weights_i against a constant tensor of the same shape.
template <typename T> Var<T> dot_const(const Var<T> &a, const Tensor<T> &weights);

/// Mean smooth-L1 (beta = 1) of pred - target over mask != 0 (all pixels when mask is null).
template <typename T> Var<T> smooth_l1(const Var<T> &pred, const Tensor<T> &target, const Tensor<T> *mask = nullptr);

/// Mean over pixels of the channel-softmax cross-entropy against per-pixel target probabilities.
template <typename T> Var<T> cross_entropy(const Var<T> &scores, const Tensor<T> &target);

}  // namespace orstereo::ops
