#include <gtest/gtest.h>

#include "lms/loss.hpp"
#include "lms/ops.hpp"
#include "support.hpp"

using namespace lms;

namespace {

LabelVolume random_labels(Index b, Extents3 e, Index classes, std::mt19937_64& rng) {
    LabelVolume l(b, e);
    std::uniform_int_distribution<int> u(0, static_cast<int>(classes) - 1);
    for (auto& v : l.data) v = u(rng);
    return l;
}

LabelVolume split_depth(Extents3 e, Index at) {
    LabelVolume l(1, e);
    for (Index d = at; d < e.d; ++d)
        for (Index i = 0; i < e.h * e.w; ++i) l[d * e.h * e.w + i] = 1;
    return l;
}

// One-hot logits of +30 / -30 for the labelled class.
Tensor<double> perfect_logits(const LabelVolume& l, Index classes) {
    Tensor<double> z(Shape{l.batch, classes, l.extents.d, l.extents.h, l.extents.w}, -30.0);
    const Index V = l.voxels();
    for (Index b = 0; b < l.batch; ++b)
        for (Index v = 0; v < V; ++v) z[(b * classes + l[b * V + v]) * V + v] = 30.0;
    return z;
}

// Softmax in long double, straight from the definition.
std::vector<long double> probs(const Tensor<double>& z) {
    const Index B = z.dim(0), C = z.dim(1), V = z.spatial();
    std::vector<long double> p(static_cast<std::size_t>(z.numel()));
    for (Index b = 0; b < B; ++b)
        for (Index v = 0; v < V; ++v) {
            long double s = 0;
            for (Index c = 0; c < C; ++c) s += std::exp(static_cast<long double>(z[(b * C + c) * V + v]));
            for (Index c = 0; c < C; ++c)
                p[static_cast<std::size_t>((b * C + c) * V + v)] = std::exp(static_cast<long double>(z[(b * C + c) * V + v])) / s;
        }
    return p;
}

double oracle_dice(const Tensor<double>& z, const LabelVolume& l, const std::vector<double>& w) {
    const Index B = z.dim(0), C = z.dim(1), V = z.spatial();
    auto p = probs(z);
    long double wsum = 0, loss = 0;
    for (double x : w) wsum += x;
    for (Index c = 0; c < C; ++c) {
        long double inter = 0, ps = 0, ys = 0;
        for (Index b = 0; b < B; ++b)
            for (Index v = 0; v < V; ++v) {
                const long double pc = p[static_cast<std::size_t>((b * C + c) * V + v)];
                const bool y = l[b * V + v] == c;
                inter += y ? pc : 0;
                ps += pc;
                ys += y;
            }
        const long double wn = w[static_cast<std::size_t>(c)] * C / wsum;
        loss += wn * (1 - (2 * inter + 1e-5L) / (ps + ys + 1e-5L));
    }
    return static_cast<double>(loss / C);
}

double oracle_ce(const Tensor<double>& z, const LabelVolume& l, const std::vector<double>& w) {
    const Index B = z.dim(0), C = z.dim(1), V = z.spatial();
    auto p = probs(z);
    long double num = 0, den = 0;
    for (Index b = 0; b < B; ++b)
        for (Index v = 0; v < V; ++v) {
            const auto y = l[b * V + v];
            num += w[static_cast<std::size_t>(y)] * -std::log(p[static_cast<std::size_t>((b * C + y) * V + v)]);
            den += w[static_cast<std::size_t>(y)];
        }
    return static_cast<double>(num / den);
}

double oracle_boundary(const Tensor<double>& z, const LabelVolume& l, const std::vector<std::uint8_t>& m,
                       const std::vector<double>& w) {
    const Index B = z.dim(0), C = z.dim(1), V = z.spatial();
    auto p = probs(z);
    long double total = 0;
    Index count = 0;
    for (Index b = 0; b < B; ++b)
        for (Index v = 0; v < V; ++v) {
            if (!m[static_cast<std::size_t>(b * V + v)]) continue;
            ++count;
            for (Index c = 0; c < C; ++c) {
                const long double pc = p[static_cast<std::size_t>((b * C + c) * V + v)];
                total += w[static_cast<std::size_t>(c)] * -(l[b * V + v] == c ? std::log(pc) : std::log1p(-pc));
            }
        }
    return static_cast<double>(total / std::max<Index>(count, 1));
}

template <typename F>
double eval(const Tensor<double>& z, F&& f) {
    Tape<double> tape(false);
    return f(tape.constant(z)).value()[0];
}

}  // namespace

TEST(ClassWeights, Formula) {
    auto half = split_depth({4, 2, 2}, 2);
    EXPECT_EQ(class_weights(half, 2), (std::vector<double>{1.0, 1.0}));
    auto quarter = split_depth({4, 2, 2}, 3);
    auto w = class_weights(quarter, 2);
    EXPECT_DOUBLE_EQ(w[1], 2.0);
    EXPECT_DOUBLE_EQ(w[0], 2.0 / 3.0);

    LabelVolume l(1, {200, 1, 1});
    for (Index i = 100; i < 150; ++i) l[i] = 2;
    for (Index i = 150; i < 200; ++i) l[i] = 3;
    auto w4 = class_weights(l, 4);
    EXPECT_DOUBLE_EQ(w4[0], 200.0 / (4 * 100));
    EXPECT_DOUBLE_EQ(w4[1], 200.0 / 4);
    for (double x : w4) EXPECT_TRUE(std::isfinite(x) && x > 0);
    EXPECT_THROW(class_weights(l, 3), Error);
}

TEST(BoundaryMask, SingleClassIsEmpty) {
    LabelVolume l(1, {5, 5, 5}, 1);
    auto m = boundary_mask(l);
    EXPECT_EQ(std::count(m.begin(), m.end(), 1), 0);
}

TEST(BoundaryMask, SmallSplitCoversEverything) {
    auto m = boundary_mask(split_depth({4, 4, 4}, 2));
    EXPECT_EQ(std::count(m.begin(), m.end(), 1), 64);
}

TEST(BoundaryMask, MatchesChebyshevOracle) {
    auto l = split_depth({16, 16, 16}, 8);
    auto m = boundary_mask(l);
    EXPECT_EQ(m, oracle::chebyshev_mask(l, 3));
    EXPECT_EQ(std::count(m.begin(), m.end(), 1), 8 * 256);  // depths 4..11

    std::mt19937_64 rng(1);
    LabelVolume blob(2, {9, 7, 8});
    std::bernoulli_distribution coin(0.02);
    for (auto& v : blob.data) v = coin(rng) ? 1 : 0;
    for (Index r : {0, 1, 2, 3}) EXPECT_EQ(boundary_mask(blob, r), oracle::chebyshev_mask(blob, r)) << r;
}

TEST(BoundaryMask, MonotoneInRadius) {
    std::mt19937_64 rng(2);
    auto l = random_labels(1, {8, 8, 8}, 3, rng);
    auto raw = raw_boundary(l), m1 = boundary_mask(l, 1), m3 = boundary_mask(l, 3);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        EXPECT_LE(raw[i], m1[i]);
        EXPECT_LE(m1[i], m3[i]);
    }
}

TEST(DiceLoss, PerfectAndUniform) {
    auto l = split_depth({4, 4, 4}, 2);
    auto w = class_weights(l, 2);
    EXPECT_LE(eval(perfect_logits(l, 2), [&](auto z) { return dice_loss(z, l, w); }), 1e-4);
    Tensor<double> flat(Shape{1, 2, 4, 4, 4}, 0.0);
    EXPECT_NEAR(eval(flat, [&](auto z) { return dice_loss(z, l, w); }), 0.5, 1e-6);
}

TEST(CeLoss, PerfectAndUniform) {
    std::mt19937_64 rng(3);
    auto l = random_labels(1, {3, 3, 3}, 4, rng);
    auto w = class_weights(l, 4);
    EXPECT_LE(eval(perfect_logits(l, 4), [&](auto z) { return ce_loss(z, l, w); }), 1e-4);
    Tensor<double> flat(Shape{1, 4, 3, 3, 3}, 1.7);
    EXPECT_NEAR(eval(flat, [&](auto z) { return ce_loss(z, l, w); }), std::log(4.0), 1e-12);
}

TEST(BoundaryLoss, EmptyMaskAndPerfect) {
    LabelVolume single(1, {4, 4, 4}, 0);
    std::mt19937_64 rng(4);
    auto z = oracle::random<double>(Shape{1, 2, 4, 4, 4}, rng);
    auto mask = boundary_mask(single);
    EXPECT_EQ(eval(z, [&](auto v) { return boundary_loss(v, single, mask, {1.0, 1.0}); }), 0.0);
    auto l = split_depth({4, 4, 4}, 2);
    auto lm = boundary_mask(l);
    EXPECT_LE(eval(perfect_logits(l, 2), [&](auto v) { return boundary_loss(v, l, lm, class_weights(l, 2)); }), 1e-3);
}

TEST(Losses, MatchDirectSummation) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        const Index C = 2 + trial % 3;
        auto l = random_labels(2, {4, 4, 4}, C, rng);
        auto z = oracle::random<double>(Shape{2, C, 4, 4, 4}, rng, -3, 3);
        auto w = class_weights(l, C);
        auto m = boundary_mask(l, 1);
        EXPECT_NEAR(eval(z, [&](auto v) { return dice_loss(v, l, w); }), oracle_dice(z, l, w), 1e-10);
        EXPECT_NEAR(eval(z, [&](auto v) { return ce_loss(v, l, w); }), oracle_ce(z, l, w), 1e-10);
        EXPECT_NEAR(eval(z, [&](auto v) { return boundary_loss(v, l, m, w); }), oracle_boundary(z, l, m, w), 1e-6);
    }
}

TEST(Losses, SaturatedLogitsStayFinite) {
    auto l = split_depth({4, 4, 4}, 2);
    auto z = perfect_logits(l, 2);
    for (auto& v : z.data()) v *= -40;  // confidently wrong
    Tape<double> tape;
    auto zl = tape.leaf(z, "z");
    auto terms = total_loss(zl, l);
    EXPECT_TRUE(std::isfinite(terms.total.value()[0]));
    tape.backward(terms.total);
    EXPECT_TRUE(tape.gradients().at("z").all_finite());
}

TEST(TotalLoss, Combination) {
    std::mt19937_64 rng(6);
    auto l = random_labels(1, {4, 4, 4}, 3, rng);
    auto z = oracle::random<double>(Shape{1, 3, 4, 4, 4}, rng);
    Tape<double> tape(false);
    auto t = total_loss(tape.constant(z), l);
    const double d = t.dice.value()[0], c = t.ce.value()[0], b = t.boundary.value()[0];
    EXPECT_DOUBLE_EQ(t.total.value()[0], d + c + 0.5 * b);
    EXPECT_GE(t.total.value()[0], 0.0);
    EXPECT_EQ(kBoundaryCoefficient, 0.5);

    auto lp = split_depth({4, 4, 4}, 2);
    Tape<double> t2(false);
    EXPECT_LE(total_loss(t2.constant(perfect_logits(lp, 2)), lp).total.value()[0], 2e-3);
}

TEST(Losses, PermutationEquivariant) {
    std::mt19937_64 rng(7);
    auto l = random_labels(1, {3, 3, 3}, 3, rng);
    auto z = oracle::random<double>(Shape{1, 3, 3, 3, 3}, rng);
    const std::vector<double> w{0.5, 1.0, 2.0};
    const int perm[] = {2, 0, 1};
    LabelVolume lp = l;
    for (auto& v : lp.data) v = perm[v];
    Tensor<double> zp(z.shape());
    std::vector<double> wp(3);
    for (Index c = 0; c < 3; ++c) {
        wp[static_cast<std::size_t>(perm[c])] = w[static_cast<std::size_t>(c)];
        for (Index v = 0; v < 27; ++v) zp[perm[c] * 27 + v] = z[c * 27 + v];
    }
    EXPECT_NEAR(eval(z, [&](auto v) { return dice_loss(v, l, w); }), eval(zp, [&](auto v) { return dice_loss(v, lp, wp); }),
                1e-12);
    EXPECT_NEAR(eval(z, [&](auto v) { return ce_loss(v, l, w); }), eval(zp, [&](auto v) { return ce_loss(v, lp, wp); }),
                1e-12);
}

TEST(Losses, ShapeErrors) {
    LabelVolume l(1, {2, 2, 2});
    Tape<double> tape(false);
    auto z = tape.constant(Tensor<double>(Shape{1, 2, 2, 2, 3}));
    EXPECT_THROW(dice_loss(z, l, {1.0, 1.0}), Error);
    auto ok = tape.constant(Tensor<double>(Shape{1, 2, 2, 2, 2}));
    EXPECT_THROW(ce_loss(ok, l, {1.0}), Error);
    l[0] = 5;
    EXPECT_THROW(ce_loss(ok, l, {1.0, 1.0}), Error);
}

TEST(Losses, Gradients) {
    std::mt19937_64 rng(8);
    auto l = random_labels(1, {2, 2, 2}, 3, rng);
    auto w = class_weights(l, 3);
    auto m = boundary_mask(l, 1);
    ParamStore s;
    s.declare("z", Shape{1, 3, 2, 2, 2}, InitScheme::kZeros);
    s.at("z").value = oracle::random<double>(Shape{1, 3, 2, 2, 2}, rng, -2, 2);
    EXPECT_LE(support::fd_store(s, [&](ParamBinding<double>& p) { return dice_loss(p("z"), l, w); }, 1, 8), 1e-4);
    EXPECT_LE(support::fd_store(s, [&](ParamBinding<double>& p) { return ce_loss(p("z"), l, w); }, 2, 8), 1e-4);
    EXPECT_LE(support::fd_store(s, [&](ParamBinding<double>& p) { return boundary_loss(p("z"), l, m, w); }, 3, 8),
              1e-4);
    EXPECT_LE(support::fd_store(s, [&](ParamBinding<double>& p) { return total_loss(p("z"), l).total; }, 4, 8), 1e-4);
}

TEST(LabelVolume, Stack) {
    LabelVolume a(1, {2, 2, 2}, 1), b(2, {2, 2, 2}, 0);
    auto s = LabelVolume::stack({&a, &b});
    EXPECT_EQ(s.batch, 3);
    EXPECT_EQ(s.size(), 24);
    EXPECT_EQ(s[0], 1);
    EXPECT_EQ(s[8], 0);
    LabelVolume c(1, {2, 2, 3});
    EXPECT_THROW(LabelVolume::stack({&a, &c}), Error);
}
