#pragma once

#include <array>
#include <optional>

#include "lms/blocks.hpp"
#include "lms/config.hpp"

namespace lms {

/// Anchor-relative position maps, (B,K,3) anchors -> (B,K,D,H,W):
///   P[b,k,d,h,w] = (d/D - s_kd) + (h/H - s_kh) + (w/W - s_kw)
/// Built from three per-axis ramps broadcast-summed in that order; the B x 3K x voxels
/// displacement tensor is never formed.
template <typename T>
Var<T> position_offsets(Var<T> anchors, Extents3 extents);

/// Raw (non-recorded) evaluation of position_offsets.
template <typename T>
Tensor<T> position_offsets_value(const Tensor<T>& anchors, Extents3 extents);

template <typename T>
struct DecoderStageOutput {
    Var<T> features;      // D_j
    Var<T> path_weights;  // (B,3,·) softmax over the three processing paths
};

struct DecoderStage {
    int index = 1;  // 1-based
    Index cin = 0;
    Index cout = 0;
    bool upsample = true;  // false: 1x1x1 channel map at unchanged extents
    ConvTransposeLayer up;
    ConvLayer up_pointwise;
    std::optional<ConvLayer> spb;  // K -> C_j, absent when anchors are ablated
    ConvLayer fuse;
    ConvLayer gate;
    ConvLayer path1;  // depthwise 3^3
    GroupNormLayer path1_norm;
    GhostConv path2;
    GroupNormLayer path2_norm;
    ConvLayer path3;  // pointwise
    GroupNormLayer path3_norm;
    SqueezeExcite se;

    DecoderStage(const ModelConfig& cfg, int index, Index cin, Index cout, bool upsample);
    void declare(ParamStore& store) const;
    Extents3 output_extents(Extents3 input) const { return upsample ? input.doubled() : input; }

    template <typename T>
    DecoderStageOutput<T> forward(ParamBinding<T>& p, Var<T> input, Var<T> skip,
                                  std::optional<Var<T>> anchors) const;
};

/// 1x1x1 projection to class logits, then the final 2x upsampling (or a stride-1
/// pointwise map when the decoder stages already restored full resolution).
struct SegmentationHead {
    ConvLayer proj;
    bool upsample = true;
    ConvTransposeLayer up;
    ConvLayer up_pointwise;

    explicit SegmentationHead(const ModelConfig& cfg);
    void declare(ParamStore& store) const;
    template <typename T>
    Var<T> forward(ParamBinding<T>& p, Var<T> d4) const;
};

struct Decoder {
    ConvLayer bottleneck;
    std::array<DecoderStage, 4> stages;
    SegmentationHead head;

    explicit Decoder(const ModelConfig& cfg);
    void declare(ParamStore& store) const;
};

/// Lowest class index wins ties. logits (B,N,D,H,W) -> labels (B,D,H,W).
template <typename T>
std::vector<std::int32_t> argmax_labels(const Tensor<T>& logits);

}  // namespace lms
