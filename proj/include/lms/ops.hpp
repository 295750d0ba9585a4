#pragma once

// Differentiable primitives recorded on a Tape. Every op validates shapes and
// throws lms::Error on mismatch.

#include <optional>
#include <vector>

#include "lms/kernels.hpp"
#include "lms/tape.hpp"

namespace lms::ops {

using kernels::ConvGeometry;

inline constexpr double kGroupNormEps = 1e-5;

template <typename T>
Var<T> conv3d(Var<T> x, Var<T> w, std::optional<Var<T>> bias, ConvGeometry geom);

/// Depthwise convolution: w is (C,1,k,k,k) and groups equals the channel count.
template <typename T>
Var<T> dwconv3d(Var<T> x, Var<T> w, std::optional<Var<T>> bias, Index stride, Index pad);

/// 2x2x2 transposed convolution with stride 2; w is (Cin,Cout,2,2,2).
template <typename T>
Var<T> convtranspose3d(Var<T> x, Var<T> w, std::optional<Var<T>> bias);

template <typename T>
Var<T> maxpool3d(Var<T> x);

/// Spatial mean, (B,C,D,H,W) -> (B,C).
template <typename T>
Var<T> gap3d(Var<T> x);

template <typename T>
Var<T> groupnorm(Var<T> x, Index groups, Var<T> gamma, Var<T> beta, double eps = kGroupNormEps);

template <typename T>
Var<T> silu(Var<T> x);
template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> abs(Var<T> x);
/// scale * x + shift, elementwise.
template <typename T>
Var<T> affine(Var<T> x, T scale, T shift);

// Broadcasting binary ops: equal ranks, each extent equal to the output's or 1.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> softmax_channels(Var<T> x);

/// v (B,N), W (M,N), bias (M) -> (B,M).
template <typename T>
Var<T> linear(Var<T> v, Var<T> w, std::optional<Var<T>> bias);

template <typename T>
Var<T> trilinear_resample(Var<T> x, Extents3 target);

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_channels(Var<T> x, Index start, Index count);

template <typename T>
Var<T> reshape(Var<T> x, const Shape& shape);

/// Sum of all entries, shape (1).
template <typename T>
Var<T> sum(Var<T> x);

/// Broadcast shape of two equal-rank shapes, or a shape error.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace lms::ops
