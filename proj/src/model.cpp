#include "lms/model.hpp"

namespace lms {

namespace {

ModelConfig validated(ModelConfig cfg) {
    cfg.validate();
    return cfg;
}

}  // namespace

Model::Model(ModelConfig cfg)
    : cfg_(validated(std::move(cfg))), stem_(cfg_), encoder_(cfg_), skips_(cfg_), decoder_(cfg_) {
    if (cfg_.ablations.anchors) anchors_.emplace(cfg_);
    if (cfg_.ablations.lspm) lspm_.emplace(cfg_);
    stem_.declare(params_);
    if (anchors_) anchors_->declare(params_);
    if (lspm_) lspm_->declare(params_);
    encoder_.declare(params_);
    skips_.declare(params_);
    decoder_.declare(params_);
}

template <typename T>
ForwardTrace<T> Model::forward(ParamBinding<T>& p, Var<T> x) const {
    require_rank(x.shape(), 5, "model input");
    if (x.shape()[1] != cfg_.in_channels) {
        throw_shape("model input has " + std::to_string(x.shape()[1]) + " channels, config expects " +
                    std::to_string(cfg_.in_channels));
    }
    const Extents3 input_extents = x.value().extents();
    check_input_extents(input_extents);

    ForwardTrace<T> tr;
    tr.stem = stem_.forward(p, x);
    if (anchors_) tr.anchors = anchors_->forward(p, x);

    Var<T> encoder_input = tr.stem;
    std::optional<Var<T>> texture;
    if (lspm_) {
        tr.lspm = lspm_->forward(p, tr.stem);
        encoder_input = tr.lspm->mixed;
        texture = tr.lspm->texture;
    }
    const EncoderOutputs<T> enc = encoder_.forward(p, encoder_input, tr.anchors, texture);
    tr.encoder_skips = enc.skips;

    std::array<Var<T>, 4> aligned;
    if (skips_.router) aligned = skips_.router->aligned(p, enc);

    Var<T> h = decoder_.bottleneck.forward(p, enc.bottleneck());
    for (std::size_t j = 0; j < 4; ++j) {
        const DecoderStage& stage = decoder_.stages[j];
        const Extents3 target = stage.output_extents(h.value().extents());
        Var<T> skip;
        if (skips_.plan[j].mode == SkipMode::kRouter) {
            RoutedSkip<T> routed = skips_.router->route(p, aligned, target, static_cast<int>(j + 1));
            skip = routed.skip;
            tr.router_weights[j] = routed.weights;
        } else {
            const SkipSource src = skips_.plan[j].source;
            Var<T> source = src == SkipSource::kStem ? tr.stem : enc.skips[static_cast<std::size_t>(src) - 1];
            skip = skips_.single[j]->forward(p, source, target);
        }
        DecoderStageOutput<T> out = stage.forward(p, h, skip, tr.anchors);
        tr.decoder_outputs[j] = out.features;
        tr.path_weights[j] = out.path_weights;
        h = out.features;
    }
    tr.logits = decoder_.head.forward(p, h);
    if (tr.logits.value().extents() != input_extents) {
        throw Error(ErrorKind::kRuntime, "head produced extents that differ from the input");
    }
    return tr;
}

template <typename T>
Tensor<T> Model::predict_logits(const Tensor<T>& x) const {
    Tape<T> tape(false);
    ParamBinding<T> p(tape, params_);
    return forward(p, tape.constant(x)).logits.value();
}

template ForwardTrace<float> Model::forward(ParamBinding<float>&, Var<float>) const;
template ForwardTrace<double> Model::forward(ParamBinding<double>&, Var<double>) const;
template Tensor<float> Model::predict_logits(const Tensor<float>&) const;
template Tensor<double> Model::predict_logits(const Tensor<double>&) const;

}  // namespace lms
