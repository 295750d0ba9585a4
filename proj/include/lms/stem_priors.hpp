#pragma once

// Front end: patch-embedding stem, global anchor detector and the local
// structural prior module (texture map, complexity gate, expert mixer).

#include <array>
#include <optional>

#include "lms/blocks.hpp"
#include "lms/config.hpp"

namespace lms {

/// Stride-2 ghost conv + GN: (B,Cin,D,H,W) -> (B,C0,D/2,H/2,W/2) for even extents.
struct Stem {
    GhostConv conv;
    GroupNormLayer norm;

    explicit Stem(const ModelConfig& cfg);
    void declare(ParamStore& store) const;
    template <typename T>
    Var<T> forward(ParamBinding<T>& p, Var<T> x) const;
};

/// Three strided conv/GN/SiLU stages, global pooling and an MLP with sigmoid output.
/// Produces (B,K,3) normalized (d,h,w) coordinates.
struct AnchorDetector {
    std::array<ConvLayer, 3> convs;
    std::array<GroupNormLayer, 3> norms;
    TwoLayerMlp head;
    Index anchors;

    explicit AnchorDetector(const ModelConfig& cfg);
    void declare(ParamStore& store) const;
    template <typename T>
    Var<T> forward(ParamBinding<T>& p, Var<T> x) const;
};

template <typename T>
struct LspmOutput {
    Var<T> texture;  // (B,1,·) in [0,1]
    Var<T> gate;     // (B,1,·) complexity score in [0,1]
    Var<T> weights;  // (B,2,·) expert weights, sum to 1 per voxel
    Var<T> mixed;    // (B,C0,·)
};

struct Lspm {
    // Texture branch: smoothing depthwise 5^3 conv, GN, SiLU, |smooth - F0|, 1x1x1 to one channel, sigmoid.
    ConvLayer smooth;
    GroupNormLayer smooth_norm;
    ConvLayer texture_proj;
    // Gate branch: conv3 C0->2C0, GN, SiLU, conv3 2C0->2C0, GN, SiLU, 1x1x1 collapse, sigmoid.
    ConvLayer gate_conv1;
    GroupNormLayer gate_norm1;
    ConvLayer gate_conv2;
    GroupNormLayer gate_norm2;
    ConvLayer gate_collapse;
    // Mixer: 1x1x1 gate -> 2 logits, softmax, convex blend of two 1x1x1 experts.
    ConvLayer mixer_logits;
    ConvLayer expert1;
    ConvLayer expert2;

    explicit Lspm(const ModelConfig& cfg);
    void declare(ParamStore& store) const;

    template <typename T>
    Var<T> texture(ParamBinding<T>& p, Var<T> f0) const;
    /// Returns (G, expert weights).
    template <typename T>
    std::pair<Var<T>, Var<T>> gate(ParamBinding<T>& p, Var<T> f0) const;
    /// weights[:,0] * Z1(f0) + weights[:,1] * Z2(f0).
    template <typename T>
    Var<T> mix(ParamBinding<T>& p, Var<T> f0, Var<T> weights) const;
    template <typename T>
    LspmOutput<T> forward(ParamBinding<T>& p, Var<T> f0) const;
};

}  // namespace lms
