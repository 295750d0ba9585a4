#include "lms/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "lms/decoder.hpp"
#include "lms/encoder.hpp"
#include "lms/loss.hpp"
#include "lms/model.hpp"
#include "lms/skip_fusion.hpp"
#include "lms/stem_priors.hpp"

namespace lms {
namespace {

Tensor<double> random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t(s);
    for (double& v : t.data()) v = u(rng);
    return t;
}

double projected(const Tensor<double>& out, const Tensor<double>& r) {
    double s = 0;
    for (Index i = 0; i < out.numel(); ++i) s += out[i] * r[i];
    return s;
}

double evaluate(ParamStore& store, const GradBuilder& f, const Tensor<double>& r) {
    Tape<double> tape(false);
    ParamBinding<double> p(tape, store);
    return projected(f(p).value(), r);
}

}  // namespace

GradCheckResult check_gradients(const std::string& name, ParamStore& store, const GradBuilder& f, double tolerance,
                                std::uint64_t seed, const GradCheckOptions& opt) {
    std::mt19937_64 rng(seed);
    GradCheckResult res;
    res.name = name;
    res.tolerance = tolerance;

    Tape<double> tape;
    ParamBinding<double> p(tape, store);
    Var<double> out = f(p);
    const Tensor<double> r = random_tensor(out.shape(), rng);
    Var<double> loss = ops::sum(ops::mul(out, tape.constant(r)));
    tape.backward(loss);
    const std::map<std::string, Tensor<double>> grads = tape.gradients();

    for (ParamTensor& entry : store.entries()) {
        if (!entry.trainable) continue;
        const Index n = entry.value.numel();
        std::vector<Index> coords;
        if (n <= opt.coords_per_tensor) {
            for (Index i = 0; i < n; ++i) coords.push_back(i);
        } else {
            std::uniform_int_distribution<Index> pick(0, n - 1);
            std::set<Index> chosen;
            while (static_cast<Index>(chosen.size()) < opt.coords_per_tensor) chosen.insert(pick(rng));
            coords.assign(chosen.begin(), chosen.end());
        }
        const auto it = grads.find(entry.name);
        for (Index i : coords) {
            const double analytic = it == grads.end() ? 0.0 : it->second[i];
            double& v = entry.value[i];
            const double saved = v;
            v = saved + opt.step;
            const double up = evaluate(store, f, r);
            v = saved - opt.step;
            const double down = evaluate(store, f, r);
            v = saved;
            const double numeric = (up - down) / (2 * opt.step);
            const double err =
                std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), opt.floor});
            ++res.coordinates;
            if (err > res.max_rel_error || res.worst.empty()) {
                res.max_rel_error = std::max(res.max_rel_error, err);
                if (err >= res.max_rel_error) {
                    std::ostringstream os;
                    os << entry.name << '[' << i << "] analytic " << analytic << " numeric " << numeric;
                    res.worst = os.str();
                }
            }
        }
    }
    res.passed = std::isfinite(res.max_rel_error) && res.max_rel_error <= tolerance;
    return res;
}

Index model_extent_for(Index size) { return std::max<Index>(16, (size + 15) / 16 * 16); }

namespace {

class Suite {
   public:
    Suite(const GradSuiteOptions& o, const std::function<void(const GradCheckResult&)>& cb)
        : opt_(o), cb_(cb), rng_(o.seed) {}

    void run(const std::string& name, ParamStore& store, const GradBuilder& f, double tol) {
        run(name, store, f, tol, opt_.check);
    }

    void run(const std::string& name, ParamStore& store, const GradBuilder& f, double tol, const GradCheckOptions& o) {
        GradCheckResult r = check_gradients(name, store, f, tol, rng_(), o);
        if (cb_) cb_(r);
        results_.push_back(std::move(r));
    }

    void block(const std::string& name, ParamStore& store, const GradBuilder& f) {
        run(name, store, f, opt_.block_tolerance);
    }

    // Store holding freshly drawn inputs.
    ParamStore inputs(const std::vector<std::pair<std::string, Shape>>& specs, double lo = -1.0, double hi = 1.0) {
        ParamStore s;
        for (const auto& [n, shape] : specs) {
            s.declare(n, shape, InitScheme::kZeros);
            s.at(n).value = random_tensor(shape, rng_, lo, hi);
        }
        return s;
    }

    // Module parameters with every zero-initialized entry (FiLM, GN shifts) perturbed so all paths carry gradient.
    void randomize(ParamStore& s) {
        s.initialize(rng_());
        std::uniform_real_distribution<double> u(-0.2, 0.2);
        for (ParamTensor& p : s.entries()) {
            if (p.init == InitScheme::kFanInUniform) continue;
            for (double& v : p.value.data()) v += u(rng_);
        }
    }

    void add_input(ParamStore& s, const std::string& name, const Shape& shape, double lo = -1.0, double hi = 1.0) {
        s.declare(name, shape, InitScheme::kZeros);
        s.at(name).value = random_tensor(shape, rng_, lo, hi);
    }

    std::mt19937_64& rng() { return rng_; }
    const GradSuiteOptions& options() const { return opt_; }
    std::vector<GradCheckResult> take() { return std::move(results_); }

   private:
    GradSuiteOptions opt_;
    std::function<void(const GradCheckResult&)> cb_;
    std::mt19937_64 rng_;
    std::vector<GradCheckResult> results_;
};

LabelVolume three_region_labels(Index b, Extents3 e) {
    LabelVolume l(b, e);
    for (Index n = 0; n < b; ++n) {
        for (Index d = 0; d < e.d; ++d) {
            for (Index h = 0; h < e.h; ++h) {
                for (Index w = 0; w < e.w; ++w) {
                    std::int32_t c = d < e.d / 2 ? 0 : (h + n < e.h / 2 ? 1 : 2);
                    if (w == 0 && d == 0) c = 2;
                    l[((n * e.d + d) * e.h + h) * e.w + w] = c;
                }
            }
        }
    }
    return l;
}

void primitives(Suite& s) {
    const Index n = s.options().block_size;
    using kernels::ConvGeometry;
    {
        ParamStore st = s.inputs({{"x", Shape{2, 3, n, n, n}}, {"w", Shape{4, 3, 3, 3, 3}}, {"b", Shape{4}}});
        s.block("conv3d k3 s1 p1", st, [](ParamBinding<double>& p) {
            return ops::conv3d(p("x"), p("w"), std::optional(p("b")), ConvGeometry{1, 1, 1});
        });
    }
    {
        ParamStore st = s.inputs({{"x", Shape{1, 4, n, n, n}}, {"w", Shape{6, 2, 3, 3, 3}}, {"b", Shape{6}}});
        s.block("conv3d k3 s2 p1 grouped", st, [](ParamBinding<double>& p) {
            return ops::conv3d(p("x"), p("w"), std::optional(p("b")), ConvGeometry{2, 1, 2});
        });
    }
    {
        ParamStore st = s.inputs({{"x", Shape{1, 3, n, n, n}}, {"w", Shape{3, 1, 5, 5, 5}}, {"b", Shape{3}}});
        s.block("dwconv3d k5 p2", st,
                [](ParamBinding<double>& p) { return ops::dwconv3d(p("x"), p("w"), std::optional(p("b")), 1, 2); });
    }
    {
        ParamStore st = s.inputs({{"x", Shape{2, 3, n / 2, n / 2, n / 2}}, {"w", Shape{3, 2, 2, 2, 2}}, {"b", Shape{2}}});
        s.block("convtranspose3d k2 s2", st,
                [](ParamBinding<double>& p) { return ops::convtranspose3d(p("x"), p("w"), std::optional(p("b"))); });
    }
    {
        ParamStore st = s.inputs({{"x", Shape{2, 2, n, n, n}}});
        s.block("maxpool3d", st, [](ParamBinding<double>& p) { return ops::maxpool3d(p("x")); });
        s.block("gap3d", st, [](ParamBinding<double>& p) { return ops::gap3d(p("x")); });
        s.block("silu", st, [](ParamBinding<double>& p) { return ops::silu(p("x")); });
        s.block("sigmoid", st, [](ParamBinding<double>& p) { return ops::sigmoid(p("x")); });
        s.block("abs", st, [](ParamBinding<double>& p) { return ops::abs(p("x")); });
        s.block("affine", st, [](ParamBinding<double>& p) { return ops::affine(p("x"), -1.5, 0.25); });
        s.block("softmax over channels", st, [](ParamBinding<double>& p) { return ops::softmax_channels(p("x")); });
        s.block("trilinear upsample", st,
                [n](ParamBinding<double>& p) { return ops::trilinear_resample(p("x"), Extents3{2 * n, n + 3, n}); });
        s.block("trilinear downsample", st,
                [n](ParamBinding<double>& p) { return ops::trilinear_resample(p("x"), Extents3{n / 2, 3, 1}); });
        s.block("slice channels", st, [](ParamBinding<double>& p) { return ops::slice_channels(p("x"), 1, 1); });
        s.block("reshape", st, [n](ParamBinding<double>& p) { return ops::reshape(p("x"), Shape{4, n * n * n}); });
        s.block("sum", st, [](ParamBinding<double>& p) { return ops::sum(p("x")); });
    }
    {
        ParamStore st = s.inputs({{"x", Shape{2, 4, n, n, n}}, {"gamma", Shape{4}}, {"beta", Shape{4}}});
        s.block("groupnorm", st,
                [](ParamBinding<double>& p) { return ops::groupnorm(p("x"), 2, p("gamma"), p("beta")); });
    }
    {
        ParamStore st = s.inputs({{"a", Shape{2, 3, n, n, n}}, {"c", Shape{2, 3, 1, 1, 1}}, {"s", Shape{1, 1, n, n, n}}});
        s.block("add broadcast", st,
                [](ParamBinding<double>& p) { return ops::add(p("a"), ops::add(p("c"), p("s"))); });
        s.block("sub broadcast", st, [](ParamBinding<double>& p) { return ops::sub(p("s"), p("a")); });
        s.block("mul broadcast", st,
                [](ParamBinding<double>& p) { return ops::mul(ops::mul(p("a"), p("c")), p("s")); });
        s.block("concat channels", st, [](ParamBinding<double>& p) {
            return ops::concat_channels<double>({p("a"), ops::mul(p("c"), p("s"))});
        });
    }
    {
        ParamStore st = s.inputs({{"v", Shape{3, 5}}, {"w", Shape{4, 5}}, {"b", Shape{4}}});
        s.block("linear", st, [](ParamBinding<double>& p) { return ops::linear(p("v"), p("w"), std::optional(p("b"))); });
    }
    {
        ParamStore st = s.inputs({{"s", Shape{2, 3, 3}}}, 0.0, 1.0);
        s.block("position offsets", st,
                [](ParamBinding<double>& p) { return position_offsets(p("s"), Extents3{3, 4, 5}); });
    }
    {
        ParamStore st = s.inputs({{"x", Shape{2, 3, n, n, n}}, {"gamma", Shape{2, 3}}, {"beta", Shape{2, 3}}});
        s.block("film modulation", st,
                [](ParamBinding<double>& p) { return apply_film(p("x"), p("gamma"), p("beta")); });
    }
}

void losses(Suite& s) {
    const Index n = s.options().block_size;
    const Extents3 e{n, n, n};
    const LabelVolume labels = three_region_labels(2, e);
    const std::vector<double> w = class_weights(labels, 3);
    const std::vector<std::uint8_t> mask = boundary_mask(labels, 1);
    ParamStore st = s.inputs({{"z", Shape{2, 3, n, n, n}}}, -2.0, 2.0);
    s.block("dice loss", st, [&](ParamBinding<double>& p) { return dice_loss(p("z"), labels, w); });
    s.block("cross-entropy loss", st, [&](ParamBinding<double>& p) { return ce_loss(p("z"), labels, w); });
    s.block("boundary loss", st, [&](ParamBinding<double>& p) { return boundary_loss(p("z"), labels, mask, w); });
    s.block("total loss", st, [&](ParamBinding<double>& p) { return total_loss(p("z"), labels).total; });
}

ModelConfig block_config() {
    ModelConfig cfg = toy_config();
    cfg.in_channels = 2;
    return cfg;
}

void blocks(Suite& s) {
    const Index n = s.options().block_size;
    const ModelConfig cfg = block_config();
    const Index b = 2;
    {
        GhostConv g{"ghost", 3, 4, 3, 1, 1, false};
        ParamStore st;
        g.declare(st);
        s.randomize(st);
        s.add_input(st, "x", Shape{b, 3, n, n, n});
        s.block("ghost conv", st, [&](ParamBinding<double>& p) { return g.forward(p, p("x")); });
    }
    {
        SqueezeExcite se{"se", 8};
        ParamStore st;
        se.declare(st);
        s.randomize(st);
        s.add_input(st, "x", Shape{b, 8, n, n, n});
        s.block("squeeze-excite", st, [&](ParamBinding<double>& p) { return se.forward(p, p("x")); });
    }
    {
        FilmGenerator film{"film", 4, cfg.anchors};
        ParamStore st;
        film.declare(st);
        s.randomize(st);
        s.add_input(st, "s", Shape{b, cfg.anchors, 3}, 0.0, 1.0);
        s.add_input(st, "x", Shape{b, 4, n, n, n});
        s.block("film generator", st, [&](ParamBinding<double>& p) {
            auto [g, be] = film.forward(p, p("s"));
            return apply_film(p("x"), g, be);
        });
    }
    {
        Stem stem(cfg);
        ParamStore st;
        stem.declare(st);
        s.randomize(st);
        s.add_input(st, "x", Shape{b, cfg.in_channels, n, n, n});
        s.block("stem", st, [&](ParamBinding<double>& p) { return stem.forward(p, p("x")); });
    }
    {
        AnchorDetector det(cfg);
        ParamStore st;
        det.declare(st);
        s.randomize(st);
        s.add_input(st, "x", Shape{b, cfg.in_channels, n, n, n});
        s.block("anchor detector", st, [&](ParamBinding<double>& p) { return det.forward(p, p("x")); });
    }
    {
        Lspm lspm(cfg);
        ParamStore st;
        lspm.declare(st);
        s.randomize(st);
        s.add_input(st, "f0", Shape{b, cfg.stem_channels, n, n, n});
        s.block("lspm texture", st, [&](ParamBinding<double>& p) { return lspm.texture(p, p("f0")); });
        s.block("lspm gate and mixer", st, [&](ParamBinding<double>& p) { return lspm.forward(p, p("f0")).mixed; });
    }
    {
        EncoderStage stage(cfg, 2, cfg.encoder_channels[0], cfg.encoder_channels[1]);
        ParamStore st;
        stage.declare(st);
        s.randomize(st);
        s.add_input(st, "x", Shape{b, cfg.encoder_channels[0], n, n, n});
        s.add_input(st, "s", Shape{b, cfg.anchors, 3}, 0.0, 1.0);
        s.add_input(st, "t", Shape{b, 1, 2 * n, 2 * n, 2 * n}, 0.0, 1.0);
        s.block("encoder stage", st, [&](ParamBinding<double>& p) {
            auto [skip, next] = stage.forward(p, p("x"), std::optional(p("s")), std::optional(p("t")));
            return ops::add(ops::sum(skip), ops::sum(next));
        });
    }
    {
        SkipRouter router(cfg);
        ParamStore st;
        router.declare(st);
        s.randomize(st);
        for (std::size_t i = 0; i < 4; ++i) {
            const Index e = std::max<Index>(1, n >> i);
            s.add_input(st, "e" + std::to_string(i + 1), Shape{1, cfg.encoder_channels[i], e, e, e});
        }
        s.block("skip router", st, [&](ParamBinding<double>& p) {
            EncoderOutputs<double> enc;
            for (std::size_t i = 0; i < 4; ++i) enc.skips[i] = p("e" + std::to_string(i + 1));
            const Index t = std::max<Index>(1, n / 4);
            return router.route(p, router.aligned(p, enc), Extents3{t, t, t}, 2).skip;
        });
    }
    {
        DecoderStage stage(cfg, 2, cfg.decoder_channels()[0], cfg.decoder_channels()[1], true);
        ParamStore st;
        stage.declare(st);
        s.randomize(st);
        const Index half = n / 2;
        s.add_input(st, "x", Shape{1, stage.cin, half, half, half});
        s.add_input(st, "skip", Shape{1, stage.cout, n, n, n});
        s.add_input(st, "s", Shape{1, cfg.anchors, 3}, 0.0, 1.0);
        s.block("decoder stage", st,
                [&](ParamBinding<double>& p) { return stage.forward(p, p("x"), p("skip"), std::optional(p("s"))).features; });
    }
    {
        SegmentationHead head(cfg);
        ParamStore st;
        head.declare(st);
        s.randomize(st);
        s.add_input(st, "d4", Shape{b, cfg.encoder_channels[0], n, n, n});
        s.block("segmentation head", st, [&](ParamBinding<double>& p) { return head.forward(p, p("d4")); });
    }
}

void full_model(Suite& s) {
    const Index e = model_extent_for(s.options().model_size);
    Model model(toy_config());
    s.randomize(model.params());
    const Tensor<double> x = random_tensor(Shape{1, 1, e, e, e}, s.rng());
    const LabelVolume labels = three_region_labels(1, Extents3{e, e, e});
    LabelVolume two = labels;
    for (std::int32_t& v : two.data) v = v == 0 ? 0 : 1;
    GradCheckOptions coarse = s.options().check;
    coarse.coords_per_tensor = 2;
    s.run(
        "full model + total loss (" + std::to_string(e) + "^3, 2 classes)", model.params(),
        [&](ParamBinding<double>& p) {
            Var<double> logits = model.forward(p, p.tape().constant(x)).logits;
            return total_loss(logits, two).total;
        },
        s.options().model_tolerance, coarse);
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradSuiteOptions& options,
                                                 const std::function<void(const GradCheckResult&)>& on_result) {
    if (options.block_size < 4 || options.block_size % 4 != 0) {
        throw_argument("gradcheck: block size must be a positive multiple of 4");
    }
    Suite s(options, on_result);
    primitives(s);
    losses(s);
    blocks(s);
    full_model(s);
    return s.take();
}

}  // namespace lms
