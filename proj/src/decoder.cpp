#include "lms/decoder.hpp"

namespace lms {
namespace {

template <typename T>
std::vector<T> axis_ramp(Index n, T anchor) {
    std::vector<T> r(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) r[static_cast<std::size_t>(i)] = static_cast<T>(i) / static_cast<T>(n) - anchor;
    return r;
}

}  // namespace

template <typename T>
Tensor<T> position_offsets_value(const Tensor<T>& anchors, Extents3 e) {
    const Shape& s = anchors.shape();
    if (s.rank() != 3 || s[2] != 3) throw_shape("position offsets: anchors must be (B,K,3), got " + s.str());
    if (e.d < 1 || e.h < 1 || e.w < 1) throw_argument("position offsets: extents must be positive");
    const Index B = s[0], K = s[1];
    Tensor<T> out = Tensor<T>::volume(B, K, e);
    T* o = out.ptr();
    for (Index b = 0; b < B; ++b) {
        for (Index k = 0; k < K; ++k) {
            const T* a = anchors.ptr() + (b * K + k) * 3;
            const std::vector<T> rd = axis_ramp(e.d, a[0]), rh = axis_ramp(e.h, a[1]), rw = axis_ramp(e.w, a[2]);
            for (Index d = 0; d < e.d; ++d) {
                for (Index h = 0; h < e.h; ++h) {
                    const T dh = rd[static_cast<std::size_t>(d)] + rh[static_cast<std::size_t>(h)];
                    for (Index w = 0; w < e.w; ++w) *o++ = dh + rw[static_cast<std::size_t>(w)];
                }
            }
        }
    }
    return out;
}

template <typename T>
Var<T> position_offsets(Var<T> anchors, Extents3 extents) {
    Tensor<T> value = position_offsets_value(anchors.value(), extents);
    const int ida = anchors.id;
    const Index B = anchors.shape()[0], K = anchors.shape()[1], V = extents.voxels();
    return anchors.tape->push(std::move(value), {anchors}, [=](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        Tensor<T>& ga = t.grad(ida);
        for (Index bk = 0; bk < B * K; ++bk) {
            double s = 0;
            for (Index i = 0; i < V; ++i) s += gy[bk * V + i];
            // Each axis offset enters with coefficient -1 at every voxel.
            for (Index axis = 0; axis < 3; ++axis) ga[bk * 3 + axis] -= static_cast<T>(s);
        }
    });
}

DecoderStage::DecoderStage(const ModelConfig& cfg, int idx, Index in, Index out, bool ups)
    : index(idx), cin(in), cout(out), upsample(ups) {
    const std::string pre = "decoder.stage" + std::to_string(idx);
    up = ConvTransposeLayer{pre + ".up", in, out, true};
    up_pointwise = ConvLayer{pre + ".up", in, out, 1, 1, 0, 1, true};
    if (cfg.ablations.anchors) spb = ConvLayer{"decoder.spb" + std::to_string(idx), cfg.anchors, out, 1, 1, 0, 1, true};
    fuse = ConvLayer{pre + ".fuse", 2 * out, out, 1, 1, 0, 1, true};
    gate = ConvLayer{pre + ".gate", out, 3, 1, 1, 0, 1, true};
    path1 = ConvLayer{pre + ".path1.conv", out, out, 3, 1, 1, out, true};
    path1_norm = GroupNormLayer{pre + ".path1.norm", out, cfg.norm_groups};
    path2 = GhostConv{pre + ".path2.conv", out, out, 3, 1, 1, !cfg.ablations.ghost};
    path2_norm = GroupNormLayer{pre + ".path2.norm", out, cfg.norm_groups};
    path3 = ConvLayer{pre + ".path3.conv", out, out, 1, 1, 0, 1, true};
    path3_norm = GroupNormLayer{pre + ".path3.norm", out, cfg.norm_groups};
    se = SqueezeExcite{pre + ".se", out};
}

void DecoderStage::declare(ParamStore& store) const {
    if (upsample) {
        up.declare(store);
    } else {
        up_pointwise.declare(store);
    }
    if (spb) spb->declare(store);
    fuse.declare(store);
    gate.declare(store);
    path1.declare(store);
    path1_norm.declare(store);
    path2.declare(store);
    path2_norm.declare(store);
    path3.declare(store);
    path3_norm.declare(store);
    se.declare(store);
}

template <typename T>
DecoderStageOutput<T> DecoderStage::forward(ParamBinding<T>& p, Var<T> input, Var<T> skip,
                                            std::optional<Var<T>> anchors) const {
    require_rank(input.shape(), 5, "decoder stage input");
    if (input.shape()[1] != cin) {
        throw_shape("decoder stage " + std::to_string(index) + ": expected " + std::to_string(cin) +
                    " input channels, got " + input.shape().str());
    }
    Var<T> u = upsample ? up.forward(p, input) : up_pointwise.forward(p, input);
    const Extents3 e = u.value().extents();
    if (skip.shape() != u.shape()) {
        throw_shape("decoder stage " + std::to_string(index) + ": skip " + skip.shape().str() +
                    " does not match upsampled features " + u.shape().str());
    }
    if (spb) {
        if (!anchors) throw_argument("decoder stage " + std::to_string(index) + ": anchors required for position bias");
        u = ops::add(u, spb->forward(p, position_offsets(*anchors, e)));
    }
    Var<T> fused = fuse.forward(p, ops::concat_channels<T>({u, skip}));
    Var<T> weights = ops::softmax_channels(gate.forward(p, fused));
    Var<T> f1 = ops::silu(path1_norm.forward(p, path1.forward(p, fused)));
    Var<T> f2 = ops::silu(path2_norm.forward(p, path2.forward(p, fused)));
    Var<T> f3 = ops::silu(path3_norm.forward(p, path3.forward(p, fused)));
    Var<T> gated = ops::mul(ops::slice_channels(weights, 0, 1), f1);
    gated = ops::add(gated, ops::mul(ops::slice_channels(weights, 1, 1), f2));
    gated = ops::add(gated, ops::mul(ops::slice_channels(weights, 2, 1), f3));
    return {se.forward(p, gated), weights};
}

SegmentationHead::SegmentationHead(const ModelConfig& cfg)
    : proj{"decoder.head.proj", cfg.encoder_channels[0], cfg.num_classes, 1, 1, 0, 1, true},
      upsample(cfg.head_mode == HeadMode::kHeadRestores),
      up{"decoder.head.up", cfg.num_classes, cfg.num_classes, true},
      up_pointwise{"decoder.head.up", cfg.num_classes, cfg.num_classes, 1, 1, 0, 1, true} {}

void SegmentationHead::declare(ParamStore& store) const {
    proj.declare(store);
    if (upsample) {
        up.declare(store);
    } else {
        up_pointwise.declare(store);
    }
}

template <typename T>
Var<T> SegmentationHead::forward(ParamBinding<T>& p, Var<T> d4) const {
    Var<T> logits = proj.forward(p, d4);
    return upsample ? up.forward(p, logits) : up_pointwise.forward(p, logits);
}

namespace {

std::array<DecoderStage, 4> make_stages(const ModelConfig& cfg) {
    const auto dec = cfg.decoder_channels();
    const bool last_upsamples = cfg.head_mode == HeadMode::kStagesRestore;
    return {DecoderStage(cfg, 1, cfg.encoder_channels[3], dec[0], true), DecoderStage(cfg, 2, dec[0], dec[1], true),
            DecoderStage(cfg, 3, dec[1], dec[2], true), DecoderStage(cfg, 4, dec[2], dec[3], last_upsamples)};
}

}  // namespace

Decoder::Decoder(const ModelConfig& cfg)
    : bottleneck{"decoder.bottleneck", cfg.encoder_channels[3], cfg.encoder_channels[3], 1, 1, 0, 1, true},
      stages(make_stages(cfg)),
      head(cfg) {}

void Decoder::declare(ParamStore& store) const {
    bottleneck.declare(store);
    for (const DecoderStage& s : stages) s.declare(store);
    head.declare(store);
}

template <typename T>
std::vector<std::int32_t> argmax_labels(const Tensor<T>& logits) {
    require_rank(logits.shape(), 5, "argmax");
    const Index B = logits.dim(0), N = logits.dim(1), V = logits.spatial();
    std::vector<std::int32_t> labels(static_cast<std::size_t>(B * V), 0);
    for (Index b = 0; b < B; ++b) {
        for (Index v = 0; v < V; ++v) {
            Index best = 0;
            T best_v = logits[(b * N) * V + v];
            for (Index c = 1; c < N; ++c) {
                const T x = logits[(b * N + c) * V + v];
                if (x > best_v) {
                    best_v = x;
                    best = c;
                }
            }
            labels[static_cast<std::size_t>(b * V + v)] = static_cast<std::int32_t>(best);
        }
    }
    return labels;
}

#define LMS_INSTANTIATE(T)                                                                                    \
    template Var<T> position_offsets(Var<T>, Extents3);                                                       \
    template Tensor<T> position_offsets_value(const Tensor<T>&, Extents3);                                    \
    template DecoderStageOutput<T> DecoderStage::forward(ParamBinding<T>&, Var<T>, Var<T>, std::optional<Var<T>>) \
        const;                                                                                                \
    template Var<T> SegmentationHead::forward(ParamBinding<T>&, Var<T>) const;                                \
    template std::vector<std::int32_t> argmax_labels(const Tensor<T>&);

LMS_INSTANTIATE(float)
LMS_INSTANTIATE(double)

#undef LMS_INSTANTIATE

}  // namespace lms
