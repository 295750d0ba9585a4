#include <gtest/gtest.h>

#include "lms/stem_priors.hpp"
#include "support.hpp"

using namespace lms;

namespace {

template <typename Module>
ParamStore store_for(const Module& m, std::uint64_t seed = 1) {
    ParamStore s;
    m.declare(s);
    s.initialize(seed);
    return s;
}

}  // namespace

TEST(Stem, HalvesExtentsToEightChannels) {
    const auto cfg = brats_config();
    Stem stem(cfg);
    auto s = store_for(stem);
    Tape<float> tape(false);
    ParamBinding<float> p(tape, s);
    std::mt19937_64 rng(1);
    auto y = stem.forward(p, tape.constant(oracle::random<float>(Shape{1, 4, 128, 128, 128}, rng)));
    EXPECT_EQ(y.shape(), (Shape{1, 8, 64, 64, 64}));

    Stem toy(toy_config());
    auto st = store_for(toy);
    ParamBinding<float> pt(tape, st);
    EXPECT_EQ(toy.forward(pt, tape.constant(Tensor<float>(Shape{1, 1, 32, 32, 32}))).shape(), (Shape{1, 8, 16, 16, 16}));
}

TEST(Stem, ZeroInputGivesBeta) {
    Stem stem(toy_config());
    auto s = store_for(stem);
    for (auto& e : s.entries())
        if (e.name.find(".bias") != std::string::npos) e.value.fill(0.0);
    Tape<double> tape(false);
    ParamBinding<double> p(tape, s);
    auto y = stem.forward(p, tape.constant(Tensor<double>(Shape{1, 1, 16, 16, 16})));
    for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Stem, ParamNames) {
    ParamStore s;
    Stem(toy_config()).declare(s);
    for (const auto& e : s.entries()) EXPECT_EQ(e.name.rfind("stem.", 0), 0u) << e.name;
}

TEST(AnchorDetector, RangeShapeAndBudget) {
    const auto cfg = brats_config();
    AnchorDetector det(cfg);
    auto s = store_for(det, 2);
    EXPECT_NEAR(static_cast<double>(s.scalar_count()), 8600.0, 860.0);
    Tape<float> tape(false);
    ParamBinding<float> p(tape, s);
    std::mt19937_64 rng(2);
    for (Index n : {16, 32}) {
        auto a = det.forward(p, tape.constant(oracle::random<float>(Shape{2, 4, n, n, n}, rng, -5, 5)));
        EXPECT_EQ(a.shape(), (Shape{2, 8, 3}));
        for (float v : a.value().data()) {
            EXPECT_GT(v, 0.0f);
            EXPECT_LT(v, 1.0f);
        }
    }
    for (const auto& e : s.entries()) EXPECT_EQ(e.name.rfind("anchors.", 0), 0u) << e.name;
}

TEST(Lspm, BranchBudgets) {
    Lspm l(brats_config());
    auto s = store_for(l);
    const Index texture = s.scalar_count("lspm.texture."), gate = s.scalar_count("lspm.gate."),
                mixer = s.scalar_count("lspm.mixer.");
    EXPECT_EQ(texture, 8 * 125 + 8 + 16 + 9);
    EXPECT_EQ(mixer, 2 * (8 * 8 + 8) + (1 * 2 + 2));
    EXPECT_EQ(gate, (8 * 16 * 27 + 16) + (16 * 16 * 27 + 16) + 32 + 32 + 17);
    EXPECT_EQ(texture + gate + mixer, s.scalar_count());
    EXPECT_NEAR(static_cast<double>(s.scalar_count()), 11700.0, 1170.0);
}

TEST(Lspm, RangesAndConvexity) {
    Lspm l(toy_config());
    auto s = store_for(l, 3);
    support::jitter(s, 3, 0.5);
    Tape<double> tape(false);
    ParamBinding<double> p(tape, s);
    std::mt19937_64 rng(3);
    auto f0 = tape.constant(oracle::random<double>(Shape{2, 8, 4, 4, 4}, rng, -2, 2));
    auto out = l.forward(p, f0);
    EXPECT_EQ(out.texture.shape(), (Shape{2, 1, 4, 4, 4}));
    EXPECT_EQ(out.mixed.shape(), f0.shape());
    for (double v : out.texture.value().data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    for (double v : out.gate.value().data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    const auto& w = out.weights.value();
    for (Index b = 0; b < 2; ++b)
        for (Index v = 0; v < 64; ++v) EXPECT_NEAR(w[(b * 2) * 64 + v] + w[(b * 2 + 1) * 64 + v], 1.0, 1e-6);

    auto z1 = l.expert1.forward(p, f0).value(), z2 = l.expert2.forward(p, f0).value();
    for (Index i = 0; i < z1.numel(); ++i) {
        const double lo = std::min(z1[i], z2[i]), hi = std::max(z1[i], z2[i]);
        EXPECT_GE(out.mixed.value()[i], lo - 1e-12);
        EXPECT_LE(out.mixed.value()[i], hi + 1e-12);
    }
}

TEST(Lspm, ZeroGateWeightsSplitEvenly) {
    Lspm l(toy_config());
    auto s = store_for(l);
    for (auto& e : s.entries())
        if (e.name.rfind("lspm.gate.", 0) == 0 || e.name.rfind("lspm.mixer.logits", 0) == 0) {
            if (e.name.find("gamma") == std::string::npos) e.value.fill(0.0);
        }
    Tape<double> tape(false);
    ParamBinding<double> p(tape, s);
    std::mt19937_64 rng(4);
    auto [g, w] = l.gate(p, tape.constant(oracle::random<double>(Shape{1, 8, 4, 4, 4}, rng)));
    for (double v : g.value().data()) EXPECT_DOUBLE_EQ(v, 0.5);
    for (double v : w.value().data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Lspm, MixEndpoints) {
    Lspm l(toy_config());
    auto s = store_for(l, 5);
    Tape<double> tape(false);
    ParamBinding<double> p(tape, s);
    std::mt19937_64 rng(5);
    auto f0 = tape.constant(oracle::random<double>(Shape{1, 8, 2, 2, 2}, rng));
    Tensor<double> one_hot(Shape{1, 2, 2, 2, 2});
    for (Index v = 0; v < 8; ++v) one_hot[v] = 1.0;
    auto mixed = l.mix(p, f0, tape.constant(one_hot));
    EXPECT_EQ(mixed.value().vec(), l.expert1.forward(p, f0).value().vec());

    // Identical experts make the output independent of the weights.
    s.at("lspm.mixer.expert2.weight").value = s.at("lspm.mixer.expert1.weight").value;
    s.at("lspm.mixer.expert2.bias").value = s.at("lspm.mixer.expert1.bias").value;
    Tape<double> t2(false);
    ParamBinding<double> p2(t2, s);
    auto f = t2.constant(f0.value());
    Tensor<double> half(Shape{1, 2, 2, 2, 2}, 0.5);
    auto a = l.mix(p2, f, t2.constant(one_hot)).value(), b = l.mix(p2, f, t2.constant(half)).value();
    for (Index i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Lspm, ConstantInputGivesConstantTexture) {
    Lspm l(toy_config());
    auto s = store_for(l, 6);
    Tape<double> tape(false);
    ParamBinding<double> p(tape, s);
    // Zero-padded smoothing makes the border differ; with a delta smoother every voxel sees the same value.
    s.at("lspm.texture.smooth.weight").value.fill(0.0);
    for (Index c = 0; c < 8; ++c) s.at("lspm.texture.smooth.weight").value[c * 125 + 62] = 1.0;
    Tensor<double> f0(Shape{1, 8, 4, 4, 4});
    for (Index c = 0; c < 8; ++c)
        for (Index v = 0; v < 64; ++v) f0[c * 64 + v] = 0.1 * static_cast<double>(c);
    auto t = l.texture(p, tape.constant(f0)).value();
    for (Index i = 1; i < t.numel(); ++i) EXPECT_DOUBLE_EQ(t[i], t[0]);
}

TEST(StemPriors, Gradients) {
    auto cfg = toy_config();
    cfg.in_channels = 2;
    Stem stem(cfg);
    AnchorDetector det(cfg);
    Lspm l(cfg);
    ParamStore s;
    stem.declare(s);
    det.declare(s);
    l.declare(s);
    s.initialize(7);
    std::mt19937_64 rng(7);
    auto x = oracle::random<double>(Shape{1, 2, 8, 8, 8}, rng);
    EXPECT_LE(support::fd_store(s, [&](ParamBinding<double>& p) { return stem.forward(p, p.tape().constant(x)); }, 1),
              1e-4);
    EXPECT_LE(support::fd_store(s, [&](ParamBinding<double>& p) { return det.forward(p, p.tape().constant(x)); }, 2),
              1e-4);
    auto f0 = oracle::random<double>(Shape{1, 8, 4, 4, 4}, rng);
    EXPECT_LE(support::fd_store(s,
                                [&](ParamBinding<double>& p) {
                                    auto o = l.forward(p, p.tape().constant(f0));
                                    return ops::concat_channels<double>({o.texture, o.mixed});
                                },
                                3),
              1e-4);
}
