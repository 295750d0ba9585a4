#include "lms/encoder.hpp"

namespace lms {

EncoderStage::EncoderStage(const ModelConfig& cfg, int idx, Index in, Index out)
    : index(idx),
      cin(in),
      cout(out),
      conv{"encoder.stage" + std::to_string(idx) + ".conv", in, out, 3, 1, 1, !cfg.ablations.ghost},
      conv_norm{"encoder.stage" + std::to_string(idx) + ".conv_norm", out, cfg.norm_groups},
      detail{"encoder.stage" + std::to_string(idx) + ".detail", out, out, 3, 1, 1, out, true},
      detail_norm{"encoder.stage" + std::to_string(idx) + ".detail_norm", out, cfg.norm_groups},
      smooth{"encoder.stage" + std::to_string(idx) + ".smooth", out, out, 1, 1, 0, 1, true},
      se{"encoder.stage" + std::to_string(idx) + ".se", out},
      pool(idx < 4) {
    if (cfg.ablations.anchors) film = FilmGenerator{"encoder.stage" + std::to_string(idx) + ".film", out, cfg.anchors};
}

void EncoderStage::declare(ParamStore& store) const {
    conv.declare(store);
    conv_norm.declare(store);
    if (film) film->declare(store);
    detail.declare(store);
    detail_norm.declare(store);
    smooth.declare(store);
    se.declare(store);
}

template <typename T>
std::pair<Var<T>, Var<T>> EncoderStage::forward(ParamBinding<T>& p, Var<T> input, std::optional<Var<T>> anchors,
                                                std::optional<Var<T>> texture) const {
    Var<T> features = conv_norm.forward(p, conv.forward(p, input));
    if (film) {
        if (!anchors) throw_argument(film->name + ": anchors required when FiLM is enabled");
        auto [gamma, beta] = film->forward(p, *anchors);
        features = apply_film(features, gamma, beta);
    }
    const Extents3 here = features.value().extents();
    Var<T> route;
    if (texture) {
        route = ops::trilinear_resample(*texture, here);
    } else {
        route = p.tape().constant(Tensor<T>::volume(features.shape()[0], 1, here, T(1)));
    }
    Var<T> z_detail = ops::silu(detail_norm.forward(p, detail.forward(p, features)));
    Var<T> z_smooth = smooth.forward(p, features);
    Var<T> blend = ops::add(ops::mul(route, z_detail), ops::mul(ops::affine(route, T(-1), T(1)), z_smooth));
    Var<T> skip = se.forward(p, blend);
    Var<T> next = pool ? ops::maxpool3d(skip) : skip;
    return {skip, next};
}

Encoder::Encoder(const ModelConfig& cfg)
    : stages{EncoderStage(cfg, 1, cfg.stem_channels, cfg.encoder_channels[0]),
             EncoderStage(cfg, 2, cfg.encoder_channels[0], cfg.encoder_channels[1]),
             EncoderStage(cfg, 3, cfg.encoder_channels[1], cfg.encoder_channels[2]),
             EncoderStage(cfg, 4, cfg.encoder_channels[2], cfg.encoder_channels[3])} {}

void Encoder::declare(ParamStore& store) const {
    for (const EncoderStage& s : stages) s.declare(store);
}

template <typename T>
EncoderOutputs<T> Encoder::forward(ParamBinding<T>& p, Var<T> f0, std::optional<Var<T>> anchors,
                                   std::optional<Var<T>> texture) const {
    EncoderOutputs<T> out;
    Var<T> h = f0;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        auto [skip, next] = stages[i].forward(p, h, anchors, texture);
        out.skips[i] = skip;
        h = next;
    }
    return out;
}

#define LMS_INSTANTIATE(T)                                                                                        \
    template std::pair<Var<T>, Var<T>> EncoderStage::forward(ParamBinding<T>&, Var<T>, std::optional<Var<T>>,     \
                                                             std::optional<Var<T>>) const;                        \
    template EncoderOutputs<T> Encoder::forward(ParamBinding<T>&, Var<T>, std::optional<Var<T>>,                  \
                                                std::optional<Var<T>>) const;

LMS_INSTANTIATE(float)
LMS_INSTANTIATE(double)

#undef LMS_INSTANTIATE

}  // namespace lms
