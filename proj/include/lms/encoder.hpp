#pragma once

#include <array>
#include <optional>

#include "lms/blocks.hpp"
#include "lms/config.hpp"

namespace lms {

/// One encoder level: FiLM-modulated ghost conv, texture-routed detail/smooth
/// blend, squeeze-excite, then 2x max pooling (stages 1-3) or identity (stage 4).
struct EncoderStage {
    int index = 1;  // 1-based
    Index cin = 0;
    Index cout = 0;
    GhostConv conv;
    GroupNormLayer conv_norm;
    std::optional<FilmGenerator> film;
    ConvLayer detail;
    GroupNormLayer detail_norm;
    ConvLayer smooth;
    SqueezeExcite se;
    bool pool = true;

    EncoderStage(const ModelConfig& cfg, int index, Index cin, Index cout);
    void declare(ParamStore& store) const;

    /// Returns (skip E_i, input to the next stage). `anchors` is absent when FiLM is
    /// ablated; `texture` (stem resolution) is absent when the LSPM is ablated (T == 1).
    template <typename T>
    std::pair<Var<T>, Var<T>> forward(ParamBinding<T>& p, Var<T> input, std::optional<Var<T>> anchors,
                                      std::optional<Var<T>> texture) const;
};

template <typename T>
struct EncoderOutputs {
    std::array<Var<T>, 4> skips;  // E(1)..E(4), pre-pooling
    Var<T> bottleneck() const { return skips[3]; }
};

struct Encoder {
    std::array<EncoderStage, 4> stages;

    explicit Encoder(const ModelConfig& cfg);
    void declare(ParamStore& store) const;
    template <typename T>
    EncoderOutputs<T> forward(ParamBinding<T>& p, Var<T> f0, std::optional<Var<T>> anchors,
                              std::optional<Var<T>> texture) const;
};

}  // namespace lms
