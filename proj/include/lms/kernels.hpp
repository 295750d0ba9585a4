#pragma once

// Raw forward/backward kernels over dense tensors. No autograd bookkeeping
// happens here; see ops.hpp for the differentiable wrappers.

#include <optional>
#include <vector>

#include "lms/tensor.hpp"

namespace lms::kernels {

struct ConvGeometry {
    Index stride = 1;
    Index pad = 0;
    Index groups = 1;
};

/// Output extent of a strided window along one axis.
Index conv_out_extent(Index n, Index k, Index stride, Index pad);

// Cross-correlation, zero padding. x (B,Cin,D,H,W), w (Cout,Cin/groups,k,k,k), bias (Cout) or empty.
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, ConvGeometry g);

// Any of gx/gw/gb may be null. Gradients are accumulated (+=) into pre-sized buffers.
template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, ConvGeometry g, Tensor<T>* gx,
                     Tensor<T>* gw, Tensor<T>* gb);

/// Multiply-accumulate count of a conv3d call (bias excluded).
std::uint64_t conv3d_macs(const Shape& x, const Shape& w, ConvGeometry g);

// Transposed convolution with kernel 2 and stride 2. w (Cin,Cout,2,2,2).
template <typename T>
Tensor<T> convtranspose3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias);

template <typename T>
void convtranspose3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, Tensor<T>* gx,
                              Tensor<T>* gw, Tensor<T>* gb);

// 2x2x2 max pooling, stride 2. argmax holds the flat input offset of each winner.
template <typename T>
Tensor<T> maxpool3d_forward(const Tensor<T>& x, std::vector<Index>& argmax);

template <typename T>
void maxpool3d_backward(const std::vector<Index>& argmax, const Tensor<T>& gy, Tensor<T>& gx);

struct GroupNormStats {
    std::vector<double> mean;  // per (batch, group)
    std::vector<double> rstd;
};

template <typename T>
Tensor<T> groupnorm_forward(const Tensor<T>& x, Index groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                            double eps, GroupNormStats& stats);

template <typename T>
void groupnorm_backward(const Tensor<T>& x, Index groups, const Tensor<T>& gamma, const GroupNormStats& stats,
                        const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* ggamma, Tensor<T>* gbeta);

/// Per-axis interpolation table for align-corners-false linear resampling.
struct AxisTaps {
    std::vector<Index> lo;
    std::vector<Index> hi;
    std::vector<double> frac;  // weight of `hi`
};

AxisTaps linear_taps(Index src, Index dst);

template <typename T>
Tensor<T> trilinear_forward(const Tensor<T>& x, Extents3 target);

template <typename T>
void trilinear_backward(const Shape& x_shape, const Tensor<T>& gy, Tensor<T>& gx);

// Softmax along axis 1 of a rank-5 tensor, max-shifted.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x);

}  // namespace lms::kernels
