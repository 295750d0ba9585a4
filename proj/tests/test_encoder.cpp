#include <gtest/gtest.h>

#include "lms/encoder.hpp"
#include "support.hpp"

using namespace lms;

namespace {

ParamStore encoder_store(const Encoder& enc, std::uint64_t seed) {
    ParamStore s;
    enc.declare(s);
    s.initialize(seed);
    return s;
}

}  // namespace

TEST(Encoder, StageSchedule) {
    Encoder enc(brats_config());
    const Index widths[] = {8, 16, 32, 64};
    for (int i = 0; i < 4; ++i) {
        EXPECT_EQ(enc.stages[i].cout, widths[i]);
        EXPECT_EQ(enc.stages[i].pool, i < 3);
        EXPECT_EQ(enc.stages[i].cin, i == 0 ? 8 : widths[i] / 2);
    }
}

TEST(Encoder, ShapeLadderAt64) {
    Encoder enc(brats_config());
    auto s = encoder_store(enc, 1);
    Tape<float> tape(false);
    ParamBinding<float> p(tape, s);
    std::mt19937_64 rng(1);
    auto f0 = tape.constant(oracle::random<float>(Shape{1, 8, 64, 64, 64}, rng));
    auto anchors = tape.constant(oracle::random<float>(Shape{1, 8, 3}, rng, 0, 1));
    auto texture = tape.constant(oracle::random<float>(Shape{1, 1, 64, 64, 64}, rng, 0, 1));
    auto out = enc.forward<float>(p, f0, anchors, texture);
    const Index widths[] = {8, 16, 32, 64}, ext[] = {64, 32, 16, 8};
    for (int i = 0; i < 4; ++i) EXPECT_EQ(out.skips[i].shape(), (Shape{1, widths[i], ext[i], ext[i], ext[i]}));
    EXPECT_EQ(out.bottleneck().shape(), (Shape{1, 64, 8, 8, 8}));
}

TEST(Encoder, ToyBottleneck) {
    Encoder enc(toy_config());
    auto s = encoder_store(enc, 2);
    Tape<float> tape(false);
    ParamBinding<float> p(tape, s);
    auto f0 = tape.constant(Tensor<float>(Shape{1, 8, 16, 16, 16}, 0.5f));
    auto anchors = tape.constant(Tensor<float>(Shape{1, 8, 3}, 0.5f));
    auto out = enc.forward<float>(p, f0, anchors, std::nullopt);
    EXPECT_EQ(out.bottleneck().shape(), (Shape{1, 64, 2, 2, 2}));
}

TEST(EncoderStage, ZeroFilmIsBareGhostConv) {
    auto cfg = toy_config();
    EncoderStage with(cfg, 2, 8, 16);
    cfg.ablations.anchors = false;
    EncoderStage without(cfg, 2, 8, 16);
    ParamStore s;
    with.declare(s);
    s.initialize(3);
    Tape<double> tape(false);
    ParamBinding<double> p(tape, s);
    std::mt19937_64 rng(3);
    auto x = tape.constant(oracle::random<double>(Shape{1, 8, 4, 4, 4}, rng));
    auto a = tape.constant(oracle::random<double>(Shape{1, 8, 3}, rng, 0, 1));
    auto t = tape.constant(oracle::random<double>(Shape{1, 1, 8, 8, 8}, rng, 0, 1));
    auto [skip_a, next_a] = with.forward<double>(p, x, a, t);
    auto [skip_b, next_b] = without.forward<double>(p, x, std::nullopt, t);
    EXPECT_EQ(skip_a.value().vec(), skip_b.value().vec());
    EXPECT_EQ(next_a.shape(), (Shape{1, 16, 2, 2, 2}));
    EXPECT_THROW(with.forward<double>(p, x, std::nullopt, t), Error);
}

TEST(EncoderStage, BlendEndpointsAndConvexity) {
    auto cfg = toy_config();
    cfg.ablations.anchors = false;
    EncoderStage st(cfg, 1, 8, 8);
    ParamStore s;
    st.declare(s);
    s.initialize(4);
    // Neutral SE (gate 0.5 everywhere) so the blend can be read back from the skip.
    s.at("encoder.stage1.se.fc1.weight").value.fill(0.0);
    s.at("encoder.stage1.se.fc2.weight").value.fill(0.0);
    Tape<double> tape(false);
    ParamBinding<double> p(tape, s);
    std::mt19937_64 rng(4);
    auto x = tape.constant(oracle::random<double>(Shape{1, 8, 4, 4, 4}, rng));
    auto features = st.conv_norm.forward(p, st.conv.forward(p, x));
    auto detail = ops::silu(st.detail_norm.forward(p, st.detail.forward(p, features))).value();
    auto smooth = st.smooth.forward(p, features).value();

    auto ones = tape.constant(Tensor<double>(Shape{1, 1, 4, 4, 4}, 1.0));
    auto zeros = tape.constant(Tensor<double>(Shape{1, 1, 4, 4, 4}, 0.0));
    auto at_one = st.forward<double>(p, x, std::nullopt, ones).first.value();
    auto at_zero = st.forward<double>(p, x, std::nullopt, zeros).first.value();
    auto absent = st.forward<double>(p, x, std::nullopt, std::nullopt).first.value();
    for (Index i = 0; i < detail.numel(); ++i) {
        EXPECT_DOUBLE_EQ(at_one[i], 0.5 * detail[i]);
        EXPECT_DOUBLE_EQ(at_zero[i], 0.5 * smooth[i]);
    }
    EXPECT_EQ(absent.vec(), at_one.vec());

    auto t = tape.constant(oracle::random<double>(Shape{1, 1, 4, 4, 4}, rng, 0, 1));
    auto mid = st.forward<double>(p, x, std::nullopt, t).first.value();
    for (Index i = 0; i < mid.numel(); ++i) {
        EXPECT_GE(mid[i], 0.5 * std::min(detail[i], smooth[i]) - 1e-12);
        EXPECT_LE(mid[i], 0.5 * std::max(detail[i], smooth[i]) + 1e-12);
    }
}

TEST(EncoderStage, LastStageDoesNotPool) {
    EncoderStage st(toy_config(), 4, 32, 64);
    ParamStore s;
    st.declare(s);
    s.initialize(5);
    Tape<float> tape(false);
    ParamBinding<float> p(tape, s);
    auto [skip, next] = st.forward<float>(p, tape.constant(Tensor<float>(Shape{1, 32, 2, 2, 2}, 1.0f)),
                                          tape.constant(Tensor<float>(Shape{1, 8, 3}, 0.3f)), std::nullopt);
    EXPECT_EQ(skip.id, next.id);
}

TEST(EncoderStage, GradientsReachFilm) {
    auto cfg = toy_config();
    EncoderStage st(cfg, 2, 8, 16);
    ParamStore s;
    st.declare(s);
    s.initialize(6);
    support::jitter(s, 6, 0.1);
    std::mt19937_64 rng(6);
    auto x = oracle::random<double>(Shape{1, 8, 4, 4, 4}, rng);
    auto a = oracle::random<double>(Shape{1, 8, 3}, rng, 0, 1);
    auto t = oracle::random<double>(Shape{1, 1, 8, 8, 8}, rng, 0, 1);
    auto build = [&](ParamBinding<double>& p) {
        auto& tape = p.tape();
        return st.forward<double>(p, tape.constant(x), tape.constant(a), tape.constant(t)).first;
    };
    {
        Tape<double> tape;
        ParamBinding<double> p(tape, s);
        tape.backward(ops::sum(build(p)));
        const auto g = tape.gradients();
        double norm = 0;
        for (double v : g.at("encoder.stage2.film.gamma").data()) norm += std::abs(v);
        EXPECT_GT(norm, 0.0);
    }
    EXPECT_LE(support::fd_store(s, build, 7), 1e-4);
}
