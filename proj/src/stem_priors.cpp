#include "lms/stem_priors.hpp"

namespace lms {

Stem::Stem(const ModelConfig& cfg)
    : conv{"stem.conv", cfg.in_channels, cfg.stem_channels, 3, 2, 1, !cfg.ablations.ghost},
      norm{"stem.norm", cfg.stem_channels, cfg.norm_groups} {}

void Stem::declare(ParamStore& store) const {
    conv.declare(store);
    norm.declare(store);
}

template <typename T>
Var<T> Stem::forward(ParamBinding<T>& p, Var<T> x) const {
    require_rank(x.shape(), 5, "stem input");
    return norm.forward(p, conv.forward(p, x));
}

AnchorDetector::AnchorDetector(const ModelConfig& cfg) : anchors(cfg.anchors) {
    Index cin = cfg.in_channels;
    for (std::size_t i = 0; i < 3; ++i) {
        const std::string idx = std::to_string(i + 1);
        const Index width = cfg.anchor_widths[i];
        convs[i] = ConvLayer{"anchors.conv" + idx, cin, width, 3, 2, 1, 1, true};
        norms[i] = GroupNormLayer{"anchors.norm" + idx, width, cfg.norm_groups};
        cin = width;
    }
    head = TwoLayerMlp{"anchors.mlp", cin, cfg.anchor_hidden, 3 * cfg.anchors};
}

void AnchorDetector::declare(ParamStore& store) const {
    for (std::size_t i = 0; i < 3; ++i) {
        convs[i].declare(store);
        norms[i].declare(store);
    }
    head.declare(store);
}

template <typename T>
Var<T> AnchorDetector::forward(ParamBinding<T>& p, Var<T> x) const {
    Var<T> h = x;
    for (std::size_t i = 0; i < 3; ++i) h = ops::silu(norms[i].forward(p, convs[i].forward(p, h)));
    Var<T> coords = ops::sigmoid(head.forward(p, ops::gap3d(h)));
    return ops::reshape(coords, Shape{x.shape()[0], anchors, 3});
}

Lspm::Lspm(const ModelConfig& cfg) {
    const Index c0 = cfg.stem_channels, g = cfg.lspm_gate_width, groups = cfg.norm_groups;
    smooth = ConvLayer{"lspm.texture.smooth", c0, c0, 5, 1, 2, c0, true};
    smooth_norm = GroupNormLayer{"lspm.texture.norm", c0, groups};
    texture_proj = ConvLayer{"lspm.texture.proj", c0, 1, 1, 1, 0, 1, true};
    gate_conv1 = ConvLayer{"lspm.gate.conv1", c0, g, 3, 1, 1, 1, true};
    gate_norm1 = GroupNormLayer{"lspm.gate.norm1", g, groups};
    gate_conv2 = ConvLayer{"lspm.gate.conv2", g, g, 3, 1, 1, 1, true};
    gate_norm2 = GroupNormLayer{"lspm.gate.norm2", g, groups};
    gate_collapse = ConvLayer{"lspm.gate.collapse", g, 1, 1, 1, 0, 1, true};
    mixer_logits = ConvLayer{"lspm.mixer.logits", 1, 2, 1, 1, 0, 1, true};
    expert1 = ConvLayer{"lspm.mixer.expert1", c0, c0, 1, 1, 0, 1, true};
    expert2 = ConvLayer{"lspm.mixer.expert2", c0, c0, 1, 1, 0, 1, true};
}

void Lspm::declare(ParamStore& store) const {
    smooth.declare(store);
    smooth_norm.declare(store);
    texture_proj.declare(store);
    gate_conv1.declare(store);
    gate_norm1.declare(store);
    gate_conv2.declare(store);
    gate_norm2.declare(store);
    gate_collapse.declare(store);
    mixer_logits.declare(store);
    expert1.declare(store);
    expert2.declare(store);
}

template <typename T>
Var<T> Lspm::texture(ParamBinding<T>& p, Var<T> f0) const {
    Var<T> smoothed = ops::silu(smooth_norm.forward(p, smooth.forward(p, f0)));
    Var<T> residual = ops::abs(ops::sub(smoothed, f0));
    return ops::sigmoid(texture_proj.forward(p, residual));
}

template <typename T>
std::pair<Var<T>, Var<T>> Lspm::gate(ParamBinding<T>& p, Var<T> f0) const {
    Var<T> h = ops::silu(gate_norm1.forward(p, gate_conv1.forward(p, f0)));
    h = ops::silu(gate_norm2.forward(p, gate_conv2.forward(p, h)));
    Var<T> g = ops::sigmoid(gate_collapse.forward(p, h));
    Var<T> weights = ops::softmax_channels(mixer_logits.forward(p, g));
    return {g, weights};
}

template <typename T>
Var<T> Lspm::mix(ParamBinding<T>& p, Var<T> f0, Var<T> weights) const {
    Var<T> z1 = expert1.forward(p, f0);
    Var<T> z2 = expert2.forward(p, f0);
    return ops::add(ops::mul(ops::slice_channels(weights, 0, 1), z1), ops::mul(ops::slice_channels(weights, 1, 1), z2));
}

template <typename T>
LspmOutput<T> Lspm::forward(ParamBinding<T>& p, Var<T> f0) const {
    LspmOutput<T> out;
    out.texture = texture(p, f0);
    std::tie(out.gate, out.weights) = gate(p, f0);
    out.mixed = mix(p, f0, out.weights);
    return out;
}

#define LMS_INSTANTIATE(T)                                                                       \
    template Var<T> Stem::forward(ParamBinding<T>&, Var<T>) const;                               \
    template Var<T> AnchorDetector::forward(ParamBinding<T>&, Var<T>) const;                     \
    template Var<T> Lspm::texture(ParamBinding<T>&, Var<T>) const;                               \
    template std::pair<Var<T>, Var<T>> Lspm::gate(ParamBinding<T>&, Var<T>) const;               \
    template Var<T> Lspm::mix(ParamBinding<T>&, Var<T>, Var<T>) const;                           \
    template LspmOutput<T> Lspm::forward(ParamBinding<T>&, Var<T>) const;

LMS_INSTANTIATE(float)
LMS_INSTANTIATE(double)

#undef LMS_INSTANTIATE

}  // namespace lms
