// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is nonzero if any fail.
// Usage: acceptance [criterion numbers...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "lms/accounting.hpp"
#include "lms/gradcheck.hpp"
#include "lms/io.hpp"
#include "lms/kernels.hpp"
#include "lms/train.hpp"
#include "oracles.hpp"

using namespace lms;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

bool within(double value, double target, double rel) { return std::abs(value - target) <= rel * target; }

std::string pct(double value, double target) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.0f (%+.1f%%)", value, 100.0 * (value - target) / target);
    return buf;
}

Model variant(ModelConfig c, const std::function<void(ModelConfig&)>& edit) {
    edit(c);
    return Model(c);
}

// 1
void parameter_budget(Outcome& o) {
    const double brats = static_cast<double>(count_params(Model(brats_config())).total);
    const double dense = static_cast<double>(
        count_params(variant(brats_config(), [](ModelConfig& c) { c.ablations.ghost = false; })).total);
    const double k16 = static_cast<double>(count_params(variant(brats_config(), [](ModelConfig& c) { c.anchors = 16; })).total);
    const double k32 = static_cast<double>(count_params(variant(brats_config(), [](ModelConfig& c) { c.anchors = 32; })).total);
    o.detail << "brats " << pct(brats, 480e3) << ", dense " << pct(dense, 660e3) << ", K=16 " << pct(k16, 490e3)
             << ", K=32 " << pct(k32, 520e3);
    o.check(within(brats, 480e3, 0.05), "brats total 0.48M +-5%");
    o.check(within(dense, 660e3, 0.05), "standard-conv total 0.66M +-5%");
    o.check(within(k16, 490e3, 0.05), "K=16 total 0.49M +-5%");
    o.check(within(k32, 520e3, 0.05), "K=32 total 0.52M +-5%");
    o.check(dense > brats && k16 > brats && k32 > k16, "ordering");
}

// 2
void submodule_budgets(Outcome& o) {
    const ParamBreakdown b = count_params(Model(brats_config()));
    o.detail << "anchors " << pct(static_cast<double>(b.anchors), 8600) << ", lspm " << pct(static_cast<double>(b.lspm), 11700)
             << " (texture " << b.lspm_texture << ", gate " << b.lspm_gate << ", mixer " << b.lspm_mixer << "), router "
             << pct(static_cast<double>(b.router_core), 24000);
    o.check(within(static_cast<double>(b.anchors), 8600, 0.10), "anchor detector 8.6K +-10%");
    o.check(within(static_cast<double>(b.lspm), 11700, 0.10), "lspm 11.7K +-10%");
    o.check(within(static_cast<double>(b.lspm_texture), 1000, 0.15), "texture branch 1K +-15%");
    o.check(within(static_cast<double>(b.lspm_gate), 10500, 0.15), "gate branch 10.5K +-15%");
    o.check(within(static_cast<double>(b.lspm_mixer), 150, 0.15), "mixer 0.15K +-15%");
    o.check(within(static_cast<double>(b.router_core), 24000, 0.15), "router 24K +-15%");
}

// 3
void flops(Outcome& o) {
    const auto t0 = std::chrono::steady_clock::now();
    const CostReport r = count_costs(Model(brats_config()), Shape{1, 4, 128, 128, 128});
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double g2 = static_cast<double>(r.total_flops(FlopConvention::kTwoPerMac)) / 1e9;
    const double g1 = static_cast<double>(r.total_flops(FlopConvention::kOnePerMac)) / 1e9;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.3f G (mac=2flop, %+.1f%%), %.3f G (mac=1flop), %.2f s", g2,
                  100 * (g2 - 14.64) / 14.64, g1, seconds);
    o.detail << buf;
    o.check(within(g2, 14.64, 0.15), "14.64 G +-15%");
    const std::string json = r.json(), text = r.text();
    o.check(json.find("mac=2flop") != std::string::npos && json.find("mac=1flop") != std::string::npos,
            "json reports both conventions");
    o.check(text.find("2 per MAC") != std::string::npos && text.find("1 per MAC") != std::string::npos,
            "text reports both conventions");
    o.check(seconds < 1.0, "under 1 s");
}

// 4
void gradient_suite(Outcome& o) {
    GradSuiteOptions opt;
    opt.block_size = 8;
    opt.model_size = 8;
    int n = 0;
    double worst_block = 0, worst_model = 0;
    std::set<std::string> names;
    const auto results = run_gradcheck_suite(opt, [&](const GradCheckResult& r) {
        ++n;
        names.insert(r.name);
        if (r.tolerance < opt.model_tolerance) {
            worst_block = std::max(worst_block, r.max_rel_error);
        } else {
            worst_model = std::max(worst_model, r.max_rel_error);
        }
        if (!r.passed) o.check(false, r.name + " error " + std::to_string(r.max_rel_error) + " at " + r.worst);
    });
    o.detail << n << " checks, model extent " << model_extent_for(8) << "^3, worst block " << worst_block
             << ", worst model " << worst_model;
    for (const char* needed : {"stem", "anchor", "lspm", "encoder", "router", "decoder", "dice", "ce", "boundary", "model"}) {
        bool found = false;
        for (const auto& name : names) found = found || name.find(needed) != std::string::npos;
        o.check(found, std::string("suite covers ") + needed);
    }
}

// 5
template <typename T>
void oracle_trials(Outcome& o, int trials, int& count) {
    using namespace kernels;
    const double tol = std::is_same_v<T, float> ? 1e-5 : 1e-10;
    std::mt19937_64 rng(std::is_same_v<T, float> ? 101 : 202);
    std::uniform_int_distribution<Index> ext(1, 5), ch(1, 3), kk(0, 2);
    double worst = 0;
    auto record = [&](double err, const char* op) {
        worst = std::max(worst, err);
        ++count;
        if (err > tol) o.check(false, std::string(op) + " error " + std::to_string(err));
    };
    for (int trial = 0; trial < trials; ++trial) {
        const Index groups = ch(rng), cin = groups * ch(rng), cout = groups * ch(rng), k = 2 * kk(rng) + 1;
        const Index stride = 1 + trial % 2, pad = trial % 3 == 0 ? 0 : k / 2;
        const Shape xs{1 + trial % 2, cin, ext(rng) + k, ext(rng) + k, ext(rng) + k};
        const auto x = oracle::random<T>(xs, rng);
        const auto w = oracle::random<T>(Shape{cout, cin / groups, k, k, k}, rng);
        const auto b = oracle::random<T>(Shape{cout}, rng);
        record(oracle::max_scaled_error(conv3d_forward(x, w, &b, {stride, pad, groups}),
                                        oracle::conv3d(x, w, &b, stride, pad, groups)),
               "conv3d");

        const auto wd = oracle::random<T>(Shape{cin, 1, k, k, k}, rng);
        const Tensor<T>* none = nullptr;
        record(oracle::max_scaled_error(conv3d_forward(x, wd, none, {1, k / 2, cin}), oracle::conv3d(x, wd, none, 1, k / 2, cin)),
               "dwconv3d");

        const auto wt = oracle::random<T>(Shape{cin, cout, 2, 2, 2}, rng);
        record(oracle::max_scaled_error(convtranspose3d_forward(x, wt, &b), oracle::convtranspose3d(x, wt, &b)),
               "convtranspose3d");

        const auto xp = oracle::random<T>(Shape{1, cin, 2 * ext(rng), 2 * ext(rng), 2 * ext(rng)}, rng);
        std::vector<Index> arg;
        record(oracle::max_scaled_error(maxpool3d_forward(xp, arg), oracle::maxpool3d(xp)), "maxpool3d");

        const Index gg = ch(rng);
        const auto xg = oracle::random<T>(Shape{2, gg * ch(rng), ext(rng), ext(rng), ext(rng)}, rng);
        const auto gamma = oracle::random<T>(Shape{xg.dim(1)}, rng), beta = oracle::random<T>(Shape{xg.dim(1)}, rng);
        GroupNormStats st;
        record(oracle::max_scaled_error(groupnorm_forward(xg, gg, gamma, beta, 1e-5, st),
                                        oracle::groupnorm(xg, gg, gamma, beta, 1e-5)),
               "groupnorm");

        const Extents3 target{ext(rng) + 1, ext(rng) + 1, ext(rng) + 1};
        record(oracle::max_scaled_error(trilinear_forward(x, target), oracle::trilinear(x, target)), "trilinear");

        const auto anchors = oracle::random<T>(Shape{1 + trial % 2, ch(rng), 3}, rng, 0.0, 1.0);
        const Extents3 pe{ext(rng), ext(rng), ext(rng)};
        record(oracle::max_scaled_error(position_offsets_value(anchors, pe), oracle::position_offsets(anchors, pe)),
               "position offsets");
    }
    o.detail << (std::is_same_v<T, float> ? "float" : "double") << " worst " << worst << "; ";
}

void oracle_equivalence(Outcome& o) {
    int count = 0;
    oracle_trials<float>(o, 100, count);
    oracle_trials<double>(o, 100, count);
    std::mt19937_64 rng(303);
    int masks = 0;
    for (int trial = 0; trial < 6; ++trial) {
        LabelVolume l(1, {16, 16, 16}, 0);
        // Random boxes of random classes.
        std::uniform_int_distribution<Index> pos(0, 15), len(1, 8);
        std::uniform_int_distribution<int> cls(1, 3);
        for (int box = 0; box < 4; ++box) {
            const Index d0 = pos(rng), h0 = pos(rng), w0 = pos(rng), dl = len(rng), hl = len(rng), wl = len(rng);
            const int c = cls(rng);
            for (Index d = d0; d < std::min<Index>(16, d0 + dl); ++d)
                for (Index h = h0; h < std::min<Index>(16, h0 + hl); ++h)
                    for (Index w = w0; w < std::min<Index>(16, w0 + wl); ++w) l[(d * 16 + h) * 16 + w] = c;
        }
        for (Index radius : {0, 1, 3}) {
            ++masks;
            if (boundary_mask(l, radius) != oracle::chebyshev_mask(l, radius)) {
                o.check(false, "boundary mask radius " + std::to_string(radius));
            }
        }
    }
    o.detail << count << " kernel comparisons, " << masks << " 16^3 boundary masks";
    o.check(count >= 100, "at least 100 randomized trials");
}

// 6
void structural_invariants(Outcome& o) {
    double worst_sum = 0;
    auto simplex = [&](const Tensor<float>& w) {
        const Index B = w.dim(0), C = w.dim(1), V = w.spatial();
        for (Index b = 0; b < B; ++b)
            for (Index v = 0; v < V; ++v) {
                double s = 0;
                for (Index c = 0; c < C; ++c) s += w[(b * C + c) * V + v];
                worst_sum = std::max(worst_sum, std::abs(s - 1.0));
            }
    };
    int shapes = 0;
    for (HeadMode mode : {HeadMode::kHeadRestores, HeadMode::kStagesRestore}) {
        for (int which = 0; which < 5; ++which) {
            ModelConfig cfg = brats_config();
            cfg.head_mode = mode;
            if (which == 1) cfg.ablations.lspm = false;
            if (which == 2) cfg.ablations.anchors = false;
            if (which == 3) cfg.ablations.router = false;
            if (which == 4) cfg.ablations.ghost = false;
            Model m(cfg);
            m.initialize(static_cast<std::uint64_t>(which + 1));
            std::mt19937_64 rng(static_cast<std::uint64_t>(which + 10));
            const Shape in{2, 4, 32, 16, 32};
            Tape<float> tape(false);
            ParamBinding<float> p(tape, m.params());
            const ForwardTrace<float> tr = m.forward(p, tape.constant(oracle::random<float>(in, rng, -2, 2)));
            ++shapes;
            o.check(tr.logits.shape() == Shape({2, 4, 32, 16, 32}),
                    to_string(mode) + " variant " + std::to_string(which) + " output " + tr.logits.shape().str());
            if (tr.anchors) {
                for (float v : tr.anchors->value().data()) o.check(v > 0.0f && v < 1.0f, "anchor in (0,1)");
            }
            if (tr.lspm) {
                for (float v : tr.lspm->texture.value().data()) o.check(v >= 0.0f && v <= 1.0f, "texture in [0,1]");
                simplex(tr.lspm->weights.value());
            }
            for (const auto& r : tr.router_weights) {
                if (r) simplex(r->value());
            }
            for (const auto& w : tr.path_weights) simplex(w.value());
            o.check(!cfg.ablations.router || (tr.router_weights[0] && tr.router_weights[1]), "router weights present");
        }
    }
    o.detail << shapes << " forward passes at (2,4,32,16,32), max |sum - 1| " << worst_sum;
    o.check(worst_sum <= 1e-6, "softmax weights sum to 1 +- 1e-6");
}

// 7
void desk_training(Outcome& o) {
    PhantomSpec spec;
    spec.seed = 11;
    const std::vector<TrainSample> data = to_samples(generate_phantoms(spec, 20));
    Model m(toy_config());
    m.initialize(7);
    TrainConfig tc;
    tc.seed = 7;
    tc.epochs = 300;
    tc.target_dice = 0.9;
    const auto t0 = std::chrono::steady_clock::now();
    const TrainLog log = train_toy(m, data, tc, [](const EpochRecord& r) {
        if (r.epoch % 10 == 0) {
            std::fprintf(stderr, "  epoch %3ld loss %.4f dice %.4f\n", static_cast<long>(r.epoch), r.total, r.mean_dice);
        }
    });
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;
    const double dice = mean_foreground_dice(m, data);
    std::vector<double> windows;
    for (std::size_t start = 0; start + 10 <= log.epochs.size(); start += 10) {
        double s = 0;
        for (std::size_t i = start; i < start + 10; ++i) s += log.epochs[i].total;
        windows.push_back(s / 10);
    }
    bool decreasing = true;
    for (std::size_t i = 1; i < windows.size(); ++i) decreasing = decreasing && windows[i] < windows[i - 1];
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu epochs, %.1f min, dice %.4f, %zu loss windows", log.epochs.size(), minutes, dice,
                  windows.size());
    o.detail << buf << " (";
    for (std::size_t i = 0; i < windows.size(); ++i) o.detail << (i ? " " : "") << std::round(windows[i] * 100) / 100;
    o.detail << ")";
    o.check(dice >= 0.90, "mean foreground Dice >= 0.90");
    o.check(windows.size() >= 2 && decreasing, "10-epoch loss windows strictly decreasing");
    o.check(static_cast<Index>(log.epochs.size()) <= 300, "at most 300 epochs");
}

// 8
void ablation_plumbing(Outcome& o) {
    PhantomSpec spec;
    spec.seed = 12;
    const std::vector<TrainSample> data = to_samples(generate_phantoms(spec, 4));
    TrainConfig tc;
    tc.epochs = 1;
    tc.seed = 1;
    const Index base = count_params(Model(toy_config())).total;
    const char* names[] = {"no-lspm", "no-anchors", "no-router", "no-ghost"};
    for (int which = 0; which < 4; ++which) {
        ModelConfig cfg = toy_config();
        bool* flags[] = {&cfg.ablations.lspm, &cfg.ablations.anchors, &cfg.ablations.router, &cfg.ablations.ghost};
        *flags[which] = false;
        Model m(cfg);
        m.initialize(1);
        try {
            const TrainLog log = train_toy(m, data, tc);
            o.check(log.epochs.size() == 1 && std::isfinite(log.epochs[0].total), std::string(names[which]) + " epoch");
        } catch (const std::exception& e) {
            o.check(false, std::string(names[which]) + ": " + e.what());
        }
        const Index n = count_params(m).total;
        o.detail << names[which] << " " << n << " (" << (n > base ? "+" : "") << n - base << "); ";
        if (which == 3) {
            o.check(n > base, "no-ghost increases parameters");
        } else {
            o.check(n < base, std::string(names[which]) + " removes parameters");
        }
    }
}

// 9
void serialization(Outcome& o) {
    std::mt19937_64 rng(9);
    const Tensor<float> img = oracle::random<float>(Shape{1, 3, 5, 6, 7}, rng, -1e3, 1e3);
    Volume v = Volume::from_tensor(img);
    v.data[0] = -0.0f;
    v.data[1] = std::numeric_limits<float>::denorm_min();
    const Volume back = decode_rv3d(encode_rv3d(v));
    o.check(std::memcmp(back.data.data(), v.data.data(), v.data.size() * 4) == 0 && back.extents == v.extents &&
                back.channels == v.channels,
            "rv3d round trip");

    Model a(brats_config());
    a.initialize(3);
    const auto exported = export_weights(a.params());
    const auto bytes = encode_lmsw(exported);
    const auto decoded = decode_lmsw(bytes);
    o.check(decoded == exported && encode_lmsw(decoded) == bytes, "lmsw round trip");

    Model b(brats_config());
    b.initialize(4);
    import_weights(b.params(), decoded);
    import_weights(a.params(), exported);  // both now hold the f32 values
    const Tensor<float> x = oracle::random<float>(Shape{1, 4, 32, 32, 32}, rng, -2, 2);
    const Tensor<float> ya = a.predict_logits(x), yb = b.predict_logits(x);
    o.check(ya.shape() == yb.shape() &&
                std::memcmp(ya.ptr(), yb.ptr(), static_cast<std::size_t>(ya.numel()) * sizeof(float)) == 0,
            "export, import, forward bitwise");
    o.detail << "rv3d " << encode_rv3d(v).size() << " bytes, lmsw " << bytes.size() << " bytes, " << exported.size()
             << " tensors, logits " << ya.shape().str();
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, void (*)(Outcome&)>> criteria{
        {"parameter budget", parameter_budget},       {"sub-module budgets", submodule_budgets},
        {"FLOPs at 128^3", flops},                    {"gradient suite", gradient_suite},
        {"oracle equivalence", oracle_equivalence},   {"structural invariants", structural_invariants},
        {"desk-scale training", desk_training},       {"ablation plumbing", ablation_plumbing},
        {"serialization", serialization},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && !only.count(id)) continue;
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            criteria[i].second(o);
        } catch (const std::exception& e) {
            o.check(false, std::string("exception: ") + e.what());
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.str().c_str(), s);
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    return failed ? 1 : 0;
}
