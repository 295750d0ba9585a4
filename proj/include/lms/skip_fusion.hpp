#pragma once

// Decoder skip sources: a learned per-voxel router over all four encoder levels for
// the two low-resolution decoder stages, and single resampled skips elsewhere.

#include <array>
#include <optional>

#include "lms/blocks.hpp"
#include "lms/config.hpp"
#include "lms/encoder.hpp"

namespace lms {

enum class SkipMode { kRouter, kSingle };

/// Source feature for a single-mode skip.
enum class SkipSource { kStem, kStage1, kStage2, kStage3, kStage4 };

struct SkipPlanEntry {
    SkipMode mode = SkipMode::kSingle;
    SkipSource source = SkipSource::kStem;  // meaningful for kSingle
};

/// Per-decoder-stage skip plan. Default: router for stages 1-2, E(1) for stage 3, stem output
/// for stage 4. Without the router every stage takes the resolution-matched encoder feature.
std::array<SkipPlanEntry, 4> make_skip_plan(const ModelConfig& cfg);

template <typename T>
struct RoutedSkip {
    Var<T> skip;     // (B,C_j,·)
    Var<T> weights;  // (B,4,·), softmax over encoder levels
};

struct SkipRouter {
    std::array<ConvLayer, 4> align;  // C_i -> width, shared by both router stages
    ConvLayer controller1;           // 4*width -> width
    ConvLayer controller2;           // width -> 4
    std::array<ConvLayer, 2> proj;   // width -> C_j for j = 1, 2
    Index width = 64;

    explicit SkipRouter(const ModelConfig& cfg);
    void declare(ParamStore& store) const;

    template <typename T>
    std::array<Var<T>, 4> aligned(ParamBinding<T>& p, const EncoderOutputs<T>& enc) const;
    /// stage is 1 or 2.
    template <typename T>
    RoutedSkip<T> route(ParamBinding<T>& p, const std::array<Var<T>, 4>& aligned, Extents3 target, int stage) const;
};

/// 1x1x1 projection to C_j then trilinear resampling to the stage extents.
struct SingleSkip {
    ConvLayer proj;

    template <typename T>
    Var<T> forward(ParamBinding<T>& p, Var<T> source, Extents3 target) const;
};

struct SkipFusion {
    std::array<SkipPlanEntry, 4> plan;
    std::optional<SkipRouter> router;
    std::array<std::optional<SingleSkip>, 4> single;

    explicit SkipFusion(const ModelConfig& cfg);
    void declare(ParamStore& store) const;
    Index source_channels(const ModelConfig& cfg, SkipSource s) const;
};

}  // namespace lms
