#pragma once

// Reusable composite layers. Each layer knows its parameter names (under a dotted
// prefix), registers them in a ParamStore and evaluates itself on a tape.

#include <string>
#include <utility>

#include "lms/ops.hpp"
#include "lms/params.hpp"

namespace lms {

struct ConvLayer {
    std::string name;
    Index cin = 1;
    Index cout = 1;
    Index k = 1;
    Index stride = 1;
    Index pad = 0;
    Index groups = 1;
    bool bias = true;

    void declare(ParamStore& store) const;
    Index param_count() const;
    template <typename T>
    Var<T> forward(ParamBinding<T>& p, Var<T> x) const;
};

/// 2x2x2 stride-2 transposed convolution.
struct ConvTransposeLayer {
    std::string name;
    Index cin = 1;
    Index cout = 1;
    bool bias = true;

    void declare(ParamStore& store) const;
    Index param_count() const;
    template <typename T>
    Var<T> forward(ParamBinding<T>& p, Var<T> x) const;
};

struct GroupNormLayer {
    std::string name;
    Index channels = 1;
    Index groups = 4;

    void declare(ParamStore& store) const;
    Index param_count() const { return 2 * channels; }
    template <typename T>
    Var<T> forward(ParamBinding<T>& p, Var<T> x) const;
};

struct LinearLayer {
    std::string name;
    Index in = 1;
    Index out = 1;
    bool bias = true;
    InitScheme init = InitScheme::kFanInUniform;

    void declare(ParamStore& store) const;
    Index param_count() const { return in * out + (bias ? out : 0); }
    template <typename T>
    Var<T> forward(ParamBinding<T>& p, Var<T> v) const;
};

/// Ghost convolution with ratio 2: a dense "primary" conv emits cout/2 channels and a
/// depthwise 3^3 conv synthesizes the other half from them. With `dense` set, the block
/// degrades to a single conv3d of identical geometry (the standard-conv ablation).
/// No normalization inside; callers apply it.
struct GhostConv {
    std::string name;
    Index cin = 1;
    Index cout = 2;
    Index k = 3;
    Index stride = 1;
    Index pad = 1;
    bool dense = false;

    ConvLayer primary() const;
    ConvLayer cheap() const;
    ConvLayer dense_conv() const;

    void declare(ParamStore& store) const;
    Index param_count() const;
    template <typename T>
    Var<T> forward(ParamBinding<T>& p, Var<T> x) const;
};

/// Squeeze-and-excitation with bottleneck max(4, C/8) and bias-free projections.
struct SqueezeExcite {
    std::string name;
    Index channels = 1;

    Index bottleneck() const { return std::max<Index>(4, channels / 8); }
    LinearLayer reduce() const { return {name + ".fc1", channels, bottleneck(), false}; }
    LinearLayer expand() const { return {name + ".fc2", bottleneck(), channels, false}; }

    void declare(ParamStore& store) const;
    Index param_count() const { return 2 * channels * bottleneck(); }
    template <typename T>
    Var<T> forward(ParamBinding<T>& p, Var<T> x) const;
};

/// Bias-free anchor-to-(gamma, beta) projections, zero-initialized.
struct FilmGenerator {
    std::string name;
    Index channels = 1;
    Index anchors = 8;

    void declare(ParamStore& store) const;
    Index param_count() const { return 2 * channels * 3 * anchors; }
    /// anchors (B,K,3) -> (gamma (B,C), beta (B,C)); flatten order is anchor-major, (d,h,w)-minor.
    template <typename T>
    std::pair<Var<T>, Var<T>> forward(ParamBinding<T>& p, Var<T> anchors) const;
};

/// (1 + gamma) * x + beta with per-(batch, channel) broadcast.
template <typename T>
Var<T> apply_film(Var<T> x, Var<T> gamma, Var<T> beta);

/// Linear -> SiLU -> Linear.
struct TwoLayerMlp {
    std::string name;
    Index in = 1;
    Index hidden = 1;
    Index out = 1;

    LinearLayer first() const { return {name + ".fc1", in, hidden}; }
    LinearLayer second() const { return {name + ".fc2", hidden, out}; }

    void declare(ParamStore& store) const;
    Index param_count() const { return first().param_count() + second().param_count(); }
    template <typename T>
    Var<T> forward(ParamBinding<T>& p, Var<T> v) const;
};

}  // namespace lms
