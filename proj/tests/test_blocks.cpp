#include <gtest/gtest.h>

#include "lms/blocks.hpp"
#include "support.hpp"

using namespace lms;

namespace {

template <typename Layer>
ParamStore store_for(const Layer& layer, std::uint64_t seed = 1) {
    ParamStore s;
    layer.declare(s);
    s.initialize(seed);
    return s;
}

}  // namespace

TEST(ParamStore, DuplicateNamesRejected) {
    ParamStore s;
    s.declare("a.weight", Shape{2, 2}, InitScheme::kFanInUniform, 2);
    EXPECT_THROW(s.declare("a.weight", Shape{2}, InitScheme::kZeros), Error);
    EXPECT_THROW(s.at("missing"), Error);
}

TEST(ParamStore, CountsAndOrder) {
    ParamStore s;
    s.declare("b.x", Shape{3, 4}, InitScheme::kZeros);
    s.declare("a.y", Shape{5}, InitScheme::kOnes);
    EXPECT_EQ(s.scalar_count(), 17);
    EXPECT_EQ(s.scalar_count("a."), 5);
    EXPECT_EQ(s.entries()[0].name, "b.x");
    Index sum = 0;
    for (const auto& e : s.entries()) sum += e.value.numel();
    EXPECT_EQ(sum, s.scalar_count());
}

TEST(ParamStore, InitializationIsDeterministicAndFollowsScheme) {
    ParamStore a, b;
    for (ParamStore* s : {&a, &b}) {
        s->declare("conv.weight", Shape{4, 2, 3, 3, 3}, InitScheme::kFanInUniform, 54);
        s->declare("norm.gamma", Shape{4}, InitScheme::kOnes);
        s->declare("film.gamma", Shape{4, 24}, InitScheme::kZeros, 24);
    }
    a.initialize(9);
    b.initialize(9);
    EXPECT_TRUE(a == b);
    const double bound = 1.0 / std::sqrt(54.0);
    for (double v : a.at("conv.weight").value.data()) EXPECT_LE(std::abs(v), bound);
    for (double v : a.at("norm.gamma").value.data()) EXPECT_EQ(v, 1.0);
    for (double v : a.at("film.gamma").value.data()) EXPECT_EQ(v, 0.0);
    b.initialize(10);
    EXPECT_FALSE(a == b);
}

TEST(GhostConv, ChannelSplitAndCount) {
    GhostConv g{"g", 4, 8, 3, 1, 1, false};
    EXPECT_EQ(g.primary().cout, 4);
    EXPECT_EQ(g.cheap().cout, 4);
    EXPECT_EQ(g.param_count(), 4 * 4 * 27 + 4 + 4 * 27 + 4);
    EXPECT_EQ(g.param_count(), 548);
    GhostConv d = g;
    d.dense = true;
    EXPECT_EQ(d.param_count(), 872);

    auto s = store_for(g);
    EXPECT_EQ(s.scalar_count(), 548);
    Tape<float> tape(false);
    ParamBinding<float> p(tape, s);
    std::mt19937_64 rng(1);
    auto x = tape.constant(oracle::random<float>(Shape{1, 4, 4, 4, 4}, rng));
    auto y = g.forward(p, x);
    EXPECT_EQ(y.shape(), (Shape{1, 8, 4, 4, 4}));
    // Output is the concatenation of the primary conv and the cheap conv of that result.
    auto prim = g.primary().forward(p, x);
    auto cheap = g.cheap().forward(p, prim);
    auto joined = ops::concat_channels<float>({prim, cheap});
    EXPECT_EQ(y.value().vec(), joined.value().vec());
}

TEST(GhostConv, ZeroWeightsGiveZeros) {
    GhostConv g{"g", 2, 4, 3, 2, 1, false};
    auto s = store_for(g);
    support::zero(s);
    Tape<double> tape(false);
    ParamBinding<double> p(tape, s);
    auto y = g.forward(p, tape.constant(Tensor<double>(Shape{1, 2, 4, 4, 4}, 1.0)));
    EXPECT_EQ(y.shape(), (Shape{1, 4, 2, 2, 2}));
    for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(GhostConv, DenseVariantKeepsShape) {
    GhostConv g{"g", 3, 6, 3, 1, 1, true};
    auto s = store_for(g);
    Tape<float> tape(false);
    ParamBinding<float> p(tape, s);
    EXPECT_EQ(g.forward(p, tape.constant(Tensor<float>(Shape{2, 3, 2, 2, 2}, 1.0f))).shape(), (Shape{2, 6, 2, 2, 2}));
    EXPECT_THROW(g.forward(p, tape.constant(Tensor<float>(Shape{2, 4, 2, 2, 2}))), Error);
}

TEST(SqueezeExcite, Bottleneck) {
    EXPECT_EQ((SqueezeExcite{"se", 8}.bottleneck()), 4);
    EXPECT_EQ((SqueezeExcite{"se", 16}.bottleneck()), 4);
    EXPECT_EQ((SqueezeExcite{"se", 64}.bottleneck()), 8);
}

TEST(SqueezeExcite, ZeroWeightsHalveInput) {
    SqueezeExcite se{"se", 8};
    auto s = store_for(se);
    support::zero(s);
    Tape<double> tape(false);
    ParamBinding<double> p(tape, s);
    std::mt19937_64 rng(2);
    auto x = tape.constant(oracle::random<double>(Shape{2, 8, 2, 2, 2}, rng));
    auto y = se.forward(p, x);
    for (Index i = 0; i < y.value().numel(); ++i) EXPECT_DOUBLE_EQ(y.value()[i], 0.5 * x.value()[i]);
}

TEST(SqueezeExcite, PreservesZerosAndGradients) {
    SqueezeExcite se{"se", 64};
    auto s = store_for(se, 3);
    std::mt19937_64 rng(3);
    auto xin = oracle::random<double>(Shape{1, 64, 2, 2, 2}, rng);
    xin[5] = 0.0;
    Tape<double> tape(false);
    ParamBinding<double> p(tape, s);
    auto y = se.forward(p, tape.constant(xin));
    EXPECT_EQ(y.value()[5], 0.0);
    for (Index i = 0; i < y.value().numel(); ++i) {
        if (xin[i] != 0) EXPECT_EQ(std::signbit(y.value()[i]), std::signbit(xin[i]));
    }
    EXPECT_LE(support::fd_store(s, [&](ParamBinding<double>& b) { return se.forward(b, b.tape().constant(xin)); }, 4),
              1e-4);
}

TEST(Film, ZeroInitIsIdentity) {
    FilmGenerator film{"film", 8, 8};
    auto s = store_for(film);
    EXPECT_EQ(film.param_count(), 2 * 8 * 24);
    Tape<double> tape(false);
    ParamBinding<double> p(tape, s);
    std::mt19937_64 rng(4);
    auto anchors = tape.constant(oracle::random<double>(Shape{1, 8, 3}, rng, 0, 1));
    auto [g, b] = film.forward(p, anchors);
    EXPECT_EQ(g.shape(), (Shape{1, 8}));
    auto x = tape.constant(oracle::random<double>(Shape{1, 8, 2, 2, 2}, rng));
    EXPECT_EQ(apply_film(x, g, b).value().vec(), x.value().vec());
    EXPECT_THROW(film.forward(p, tape.constant(Tensor<double>(Shape{1, 4, 3}))), Error);
}

TEST(Film, MatchesMatVecAndIsLinear) {
    FilmGenerator film{"film", 4, 2};
    auto s = store_for(film);
    support::jitter(s, 5, 1.0);
    std::mt19937_64 rng(5);
    auto a = oracle::random<double>(Shape{1, 2, 3}, rng, 0, 1);
    auto c = oracle::random<double>(Shape{1, 2, 3}, rng, 0, 1);
    auto eval = [&](const Tensor<double>& anchors) {
        Tape<double> tape(false);
        ParamBinding<double> p(tape, s);
        auto [g, b] = film.forward(p, tape.constant(anchors));
        return std::pair{g.value(), b.value()};
    };
    auto [g, b] = eval(a);
    const auto& wg = s.at("film.gamma").value;
    for (Index o = 0; o < 4; ++o) {
        long double acc = 0;
        for (Index k = 0; k < 2; ++k)
            for (Index ax = 0; ax < 3; ++ax) acc += wg[o * 6 + k * 3 + ax] * a[k * 3 + ax];
        EXPECT_NEAR(g[o], static_cast<double>(acc), 1e-12);
    }
    Tensor<double> sum = a;
    sum.add_(c);
    auto [gs, bs] = eval(sum);
    auto [gc, bc] = eval(c);
    for (Index o = 0; o < 4; ++o) {
        EXPECT_NEAR(gs[o], g[o] + gc[o], 1e-12);
        EXPECT_NEAR(bs[o], b[o] + bc[o], 1e-12);
    }
}

TEST(Film, AppliesOnePlusGamma) {
    Tape<double> tape(false);
    auto x = tape.constant(Tensor<double>(Shape{1, 2, 1, 1, 2}, {1, 2, 3, 4}));
    auto g = tape.constant(Tensor<double>(Shape{1, 2}, {1.0, -0.5}));
    auto b = tape.constant(Tensor<double>(Shape{1, 2}, {0.5, 1.0}));
    EXPECT_EQ(apply_film(x, g, b).value().vec(), (std::vector<double>{2.5, 4.5, 2.5, 3.0}));
}

TEST(Mlp, ShapeAndGradients) {
    TwoLayerMlp mlp{"mlp", 8, 16, 6};
    auto s = store_for(mlp);
    EXPECT_EQ(s.scalar_count(), mlp.param_count());
    std::mt19937_64 rng(6);
    auto v = oracle::random<double>(Shape{2, 8}, rng);
    EXPECT_LE(support::fd_store(s, [&](ParamBinding<double>& p) { return mlp.forward(p, p.tape().constant(v)); }, 7),
              1e-4);
}

TEST(Blocks, GhostConvGradients) {
    GhostConv g{"g", 2, 4, 3, 2, 1, false};
    auto s = store_for(g);
    std::mt19937_64 rng(8);
    auto x = oracle::random<double>(Shape{1, 2, 4, 4, 4}, rng);
    EXPECT_LE(support::fd_store(s, [&](ParamBinding<double>& p) { return g.forward(p, p.tape().constant(x)); }, 9),
              1e-4);
}
