#include "lms/skip_fusion.hpp"

namespace lms {

std::array<SkipPlanEntry, 4> make_skip_plan(const ModelConfig& cfg) {
    if (cfg.ablations.router) {
        return {SkipPlanEntry{SkipMode::kRouter, SkipSource::kStem}, SkipPlanEntry{SkipMode::kRouter, SkipSource::kStem},
                SkipPlanEntry{SkipMode::kSingle, SkipSource::kStage1},
                SkipPlanEntry{SkipMode::kSingle, SkipSource::kStem}};
    }
    // Decoder stage j outputs at D/8, D/4, D/2 and D/2 (or D): E(3), E(2), E(1), stem.
    return {SkipPlanEntry{SkipMode::kSingle, SkipSource::kStage3}, SkipPlanEntry{SkipMode::kSingle, SkipSource::kStage2},
            SkipPlanEntry{SkipMode::kSingle, SkipSource::kStage1}, SkipPlanEntry{SkipMode::kSingle, SkipSource::kStem}};
}

SkipRouter::SkipRouter(const ModelConfig& cfg) : width(cfg.router_width) {
    for (std::size_t i = 0; i < 4; ++i) {
        align[i] = ConvLayer{"router.align" + std::to_string(i + 1), cfg.encoder_channels[i], width, 1, 1, 0, 1, true};
    }
    controller1 = ConvLayer{"router.controller1", 4 * width, width, 1, 1, 0, 1, true};
    controller2 = ConvLayer{"router.controller2", width, 4, 1, 1, 0, 1, true};
    const auto dec = cfg.decoder_channels();
    for (std::size_t j = 0; j < 2; ++j) {
        proj[j] = ConvLayer{"router.proj" + std::to_string(j + 1), width, dec[j], 1, 1, 0, 1, true};
    }
}

void SkipRouter::declare(ParamStore& store) const {
    for (const ConvLayer& a : align) a.declare(store);
    controller1.declare(store);
    controller2.declare(store);
    for (const ConvLayer& pj : proj) pj.declare(store);
}

template <typename T>
std::array<Var<T>, 4> SkipRouter::aligned(ParamBinding<T>& p, const EncoderOutputs<T>& enc) const {
    std::array<Var<T>, 4> out;
    for (std::size_t i = 0; i < 4; ++i) out[i] = align[i].forward(p, enc.skips[i]);
    return out;
}

template <typename T>
RoutedSkip<T> SkipRouter::route(ParamBinding<T>& p, const std::array<Var<T>, 4>& aligned_maps, Extents3 target,
                                int stage) const {
    if (stage != 1 && stage != 2) {
        throw_argument("skip router is only instantiated at decoder stages 1 and 2, not " + std::to_string(stage));
    }
    std::vector<Var<T>> resampled;
    for (const Var<T>& a : aligned_maps) {
        Var<T> r = ops::trilinear_resample(a, target);
        if (r.value().extents() != target) throw Error(ErrorKind::kRuntime, "router: resample produced wrong extents");
        resampled.push_back(r);
    }
    Var<T> logits = controller2.forward(p, ops::silu(controller1.forward(p, ops::concat_channels(resampled))));
    Var<T> weights = ops::softmax_channels(logits);
    Var<T> fused = ops::mul(ops::slice_channels(weights, 0, 1), resampled[0]);
    for (Index i = 1; i < 4; ++i) {
        fused = ops::add(fused, ops::mul(ops::slice_channels(weights, i, 1), resampled[static_cast<std::size_t>(i)]));
    }
    return {proj[static_cast<std::size_t>(stage - 1)].forward(p, fused), weights};
}

template <typename T>
Var<T> SingleSkip::forward(ParamBinding<T>& p, Var<T> source, Extents3 target) const {
    return ops::trilinear_resample(proj.forward(p, source), target);
}

SkipFusion::SkipFusion(const ModelConfig& cfg) : plan(make_skip_plan(cfg)) {
    if (cfg.ablations.router) router.emplace(cfg);
    const auto dec = cfg.decoder_channels();
    for (std::size_t j = 0; j < 4; ++j) {
        if (plan[j].mode != SkipMode::kSingle) continue;
        single[j] = SingleSkip{ConvLayer{"router.single" + std::to_string(j + 1), source_channels(cfg, plan[j].source),
                                         dec[j], 1, 1, 0, 1, true}};
    }
}

void SkipFusion::declare(ParamStore& store) const {
    if (router) router->declare(store);
    for (const auto& s : single) {
        if (s) s->proj.declare(store);
    }
}

Index SkipFusion::source_channels(const ModelConfig& cfg, SkipSource s) const {
    switch (s) {
        case SkipSource::kStem:
            return cfg.stem_channels;
        case SkipSource::kStage1:
            return cfg.encoder_channels[0];
        case SkipSource::kStage2:
            return cfg.encoder_channels[1];
        case SkipSource::kStage3:
            return cfg.encoder_channels[2];
        case SkipSource::kStage4:
            return cfg.encoder_channels[3];
    }
    return 0;
}

#define LMS_INSTANTIATE(T)                                                                                   \
    template std::array<Var<T>, 4> SkipRouter::aligned(ParamBinding<T>&, const EncoderOutputs<T>&) const;    \
    template RoutedSkip<T> SkipRouter::route(ParamBinding<T>&, const std::array<Var<T>, 4>&, Extents3, int)  \
        const;                                                                                               \
    template Var<T> SingleSkip::forward(ParamBinding<T>&, Var<T>, Extents3) const;

LMS_INSTANTIATE(float)
LMS_INSTANTIATE(double)

#undef LMS_INSTANTIATE

}  // namespace lms
