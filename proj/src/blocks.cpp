#include "lms/blocks.hpp"

namespace lms {

void ConvLayer::declare(ParamStore& store) const {
    if (groups < 1 || cin % groups || cout % groups) {
        throw_config(name + ": channels " + std::to_string(cin) + "->" + std::to_string(cout) +
                     " not divisible by groups " + std::to_string(groups));
    }
    const Index fan_in = (cin / groups) * k * k * k;
    store.declare(name + ".weight", Shape{cout, cin / groups, k, k, k}, InitScheme::kFanInUniform, fan_in);
    if (bias) store.declare(name + ".bias", Shape{cout}, InitScheme::kFanInUniform, fan_in);
}

Index ConvLayer::param_count() const { return cout * (cin / groups) * k * k * k + (bias ? cout : 0); }

template <typename T>
Var<T> ConvLayer::forward(ParamBinding<T>& p, Var<T> x) const {
    std::optional<Var<T>> b;
    if (bias) b = p(name + ".bias");
    return ops::conv3d(x, p(name + ".weight"), b, {stride, pad, groups});
}

void ConvTransposeLayer::declare(ParamStore& store) const {
    store.declare(name + ".weight", Shape{cin, cout, 2, 2, 2}, InitScheme::kFanInUniform, cin);
    if (bias) store.declare(name + ".bias", Shape{cout}, InitScheme::kFanInUniform, cin);
}

Index ConvTransposeLayer::param_count() const { return cin * cout * 8 + (bias ? cout : 0); }

template <typename T>
Var<T> ConvTransposeLayer::forward(ParamBinding<T>& p, Var<T> x) const {
    std::optional<Var<T>> b;
    if (bias) b = p(name + ".bias");
    return ops::convtranspose3d(x, p(name + ".weight"), b);
}

void GroupNormLayer::declare(ParamStore& store) const {
    if (channels % groups) {
        throw_config(name + ": " + std::to_string(channels) + " channels not divisible by " + std::to_string(groups) +
                     " groups");
    }
    store.declare(name + ".gamma", Shape{channels}, InitScheme::kOnes);
    store.declare(name + ".beta", Shape{channels}, InitScheme::kZeros);
}

template <typename T>
Var<T> GroupNormLayer::forward(ParamBinding<T>& p, Var<T> x) const {
    return ops::groupnorm(x, groups, p(name + ".gamma"), p(name + ".beta"));
}

void LinearLayer::declare(ParamStore& store) const {
    store.declare(name + ".weight", Shape{out, in}, init, in);
    if (bias) store.declare(name + ".bias", Shape{out}, init, in);
}

template <typename T>
Var<T> LinearLayer::forward(ParamBinding<T>& p, Var<T> v) const {
    std::optional<Var<T>> b;
    if (bias) b = p(name + ".bias");
    return ops::linear(v, p(name + ".weight"), b);
}

ConvLayer GhostConv::primary() const { return {name + ".primary", cin, cout / 2, k, stride, pad, 1, true}; }

ConvLayer GhostConv::cheap() const { return {name + ".cheap", cout / 2, cout / 2, 3, 1, 1, cout / 2, true}; }

ConvLayer GhostConv::dense_conv() const { return {name + ".dense", cin, cout, k, stride, pad, 1, true}; }

void GhostConv::declare(ParamStore& store) const {
    if (dense) {
        dense_conv().declare(store);
        return;
    }
    if (cout % 2) throw_config(name + ": ghost conv needs an even output width, got " + std::to_string(cout));
    primary().declare(store);
    cheap().declare(store);
}

Index GhostConv::param_count() const {
    return dense ? dense_conv().param_count() : primary().param_count() + cheap().param_count();
}

template <typename T>
Var<T> GhostConv::forward(ParamBinding<T>& p, Var<T> x) const {
    require_rank(x.shape(), 5, "ghost conv input");
    if (x.shape()[1] != cin) {
        throw_shape(name + ": expected " + std::to_string(cin) + " input channels, got " +
                    std::to_string(x.shape()[1]));
    }
    if (dense) return dense_conv().forward(p, x);
    Var<T> main = primary().forward(p, x);
    Var<T> ghost = cheap().forward(p, main);
    return ops::concat_channels<T>({main, ghost});
}

void SqueezeExcite::declare(ParamStore& store) const {
    reduce().declare(store);
    expand().declare(store);
}

template <typename T>
Var<T> SqueezeExcite::forward(ParamBinding<T>& p, Var<T> x) const {
    require_rank(x.shape(), 5, "squeeze-excite input");
    if (x.shape()[1] != channels) {
        throw_shape(name + ": expected " + std::to_string(channels) + " channels, got " + x.shape().str());
    }
    Var<T> s = ops::gap3d(x);
    Var<T> h = ops::silu(reduce().forward(p, s));
    Var<T> gate = ops::sigmoid(expand().forward(p, h));
    gate = ops::reshape(gate, Shape{x.shape()[0], channels, 1, 1, 1});
    return ops::mul(x, gate);
}

void FilmGenerator::declare(ParamStore& store) const {
    store.declare(name + ".gamma", Shape{channels, 3 * anchors}, InitScheme::kZeros, 3 * anchors);
    store.declare(name + ".beta", Shape{channels, 3 * anchors}, InitScheme::kZeros, 3 * anchors);
}

template <typename T>
std::pair<Var<T>, Var<T>> FilmGenerator::forward(ParamBinding<T>& p, Var<T> anchor_set) const {
    const Shape& s = anchor_set.shape();
    if (s.rank() != 3 || s[2] != 3) throw_shape(name + ": anchors must be (B,K,3), got " + s.str());
    if (s[1] != anchors) {
        throw_shape(name + ": generator built for K=" + std::to_string(anchors) + ", got K=" + std::to_string(s[1]));
    }
    Var<T> flat = ops::reshape(anchor_set, Shape{s[0], 3 * anchors});
    Var<T> gamma = ops::linear(flat, p(name + ".gamma"), std::optional<Var<T>>{});
    Var<T> beta = ops::linear(flat, p(name + ".beta"), std::optional<Var<T>>{});
    return {gamma, beta};
}

template <typename T>
Var<T> apply_film(Var<T> x, Var<T> gamma, Var<T> beta) {
    const Shape& s = x.shape();
    require_rank(s, 5, "film input");
    if (gamma.shape() != Shape{s[0], s[1]} || beta.shape() != Shape{s[0], s[1]}) {
        throw_shape("film: modulation " + gamma.shape().str() + " does not match features " + s.str());
    }
    const Shape bc{s[0], s[1], 1, 1, 1};
    Var<T> scale = ops::affine(ops::reshape(gamma, bc), T(1), T(1));
    return ops::add(ops::mul(x, scale), ops::reshape(beta, bc));
}

void TwoLayerMlp::declare(ParamStore& store) const {
    first().declare(store);
    second().declare(store);
}

template <typename T>
Var<T> TwoLayerMlp::forward(ParamBinding<T>& p, Var<T> v) const {
    return second().forward(p, ops::silu(first().forward(p, v)));
}

#define LMS_INSTANTIATE(T)                                                                          \
    template Var<T> ConvLayer::forward(ParamBinding<T>&, Var<T>) const;                             \
    template Var<T> ConvTransposeLayer::forward(ParamBinding<T>&, Var<T>) const;                    \
    template Var<T> GroupNormLayer::forward(ParamBinding<T>&, Var<T>) const;                        \
    template Var<T> LinearLayer::forward(ParamBinding<T>&, Var<T>) const;                           \
    template Var<T> GhostConv::forward(ParamBinding<T>&, Var<T>) const;                             \
    template Var<T> SqueezeExcite::forward(ParamBinding<T>&, Var<T>) const;                         \
    template std::pair<Var<T>, Var<T>> FilmGenerator::forward(ParamBinding<T>&, Var<T>) const;      \
    template Var<T> apply_film(Var<T>, Var<T>, Var<T>);                                             \
    template Var<T> TwoLayerMlp::forward(ParamBinding<T>&, Var<T>) const;

LMS_INSTANTIATE(float)
LMS_INSTANTIATE(double)

#undef LMS_INSTANTIATE

}  // namespace lms
