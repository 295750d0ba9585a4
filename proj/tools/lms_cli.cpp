// Command-line front end over the C API.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lms/lms.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct RuntimeFailure {
    std::string message;
};

void check(lms_status s, const char* what) {
    if (s != LMS_OK) throw RuntimeFailure{std::string(what) + ": " + lms_last_error()};
}

std::string take(char* s) {
    std::string out = s ? s : "";
    lms_string_free(s);
    return out;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure{"cannot read '" + path + "'"};
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct ModelOptions {
    std::string config;
    std::string preset = "brats";
    std::string mode;
    bool no_lspm = false;
    bool no_anchors = false;
    bool no_router = false;
    bool no_ghost = false;

    void attach(CLI::App* app, const std::string& default_preset) {
        preset = default_preset;
        app->add_option("--config", config, "model config JSON file");
        app->add_option("--preset", preset, "built-in config when --config is absent")
            ->check(CLI::IsMember({"brats", "toy"}));
        app->add_option("--mode", mode, "head placement")->check(CLI::IsMember({"head-restores", "stages-restore"}));
        app->add_flag("--no-lspm", no_lspm, "disable the local structural prior module");
        app->add_flag("--no-anchors", no_anchors, "disable anchors, FiLM and position bias");
        app->add_flag("--no-router", no_router, "use single resolution-matched skips");
        app->add_flag("--no-ghost", no_ghost, "replace ghost convolutions with dense ones");
    }

    std::string json() const {
        std::string text;
        if (!config.empty()) {
            text = read_text(config);
        } else {
            char* s = nullptr;
            check(lms_config_preset(preset.c_str(), &s), "preset");
            text = take(s);
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw RuntimeFailure{std::string("config: ") + e.what()};
        }
        if (!mode.empty()) j["head_mode"] = mode;
        if (no_lspm) j["ablations"]["lspm"] = false;
        if (no_anchors) j["ablations"]["anchors"] = false;
        if (no_router) j["ablations"]["router"] = false;
        if (no_ghost) j["ablations"]["ghost"] = false;
        return j.dump();
    }
};

class ModelHandle {
   public:
    ModelHandle(const std::string& config_json, std::uint64_t seed) {
        check(lms_model_create(config_json.c_str(), seed, &m_), "model");
    }
    ~ModelHandle() { lms_model_destroy(m_); }
    ModelHandle(const ModelHandle&) = delete;
    ModelHandle& operator=(const ModelHandle&) = delete;
    lms_model* get() const { return m_; }

    nlohmann::json config() const {
        char* s = nullptr;
        check(lms_model_config(m_, &s), "config");
        return nlohmann::json::parse(take(s));
    }

   private:
    lms_model* m_ = nullptr;
};

std::string cost_report(const ModelHandle& m, std::int64_t size, bool as_json) {
    const std::int64_t cin = m.config().at("in_channels").get<std::int64_t>();
    const std::int64_t shape[5] = {1, cin, size, size, size};
    char* s = nullptr;
    check(lms_model_cost_report(m.get(), shape, as_json ? 1 : 0, &s), "cost report");
    return take(s);
}

void print_epoch(const lms_epoch* e, void*) {
    std::printf("epoch %4lld  lr %.3e  loss %.5f  dice %.5f  ce %.5f  bdry %.5f  fg-dice %.4f  %.1fs\n",
                static_cast<long long>(e->epoch), e->lr, e->total_loss, e->dice_loss, e->ce_loss, e->boundary_loss,
                e->mean_dice, e->seconds);
    std::fflush(stdout);
}

void print_check(const char* name, double err, double tol, int passed, void*) {
    std::printf("%-4s %-44s max rel err %.3e (tol %.0e)\n", passed ? "ok" : "FAIL", name, err, tol);
    std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lightweight volumetric segmentation toolkit"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    std::int64_t size = 128;
    std::int64_t epochs = 300;
    std::int64_t count = 20;
    std::string weights, in_path, out_path, train_config;
    bool as_json = false;

    ModelOptions summary_opts, flops_opts, predict_opts, train_opts, export_opts, import_opts, phantom_opts;

    CLI::App* summary = app.add_subcommand("summary", "print the parameter and cost report");
    summary_opts.attach(summary, "brats");
    summary->add_option("--size", size, "cubic input extent")->check(CLI::PositiveNumber);
    summary->add_flag("--json", as_json, "emit JSON");

    CLI::App* flops = app.add_subcommand("flops", "print headline MAC and FLOP totals");
    flops_opts.attach(flops, "brats");
    flops->add_option("--size", size, "cubic input extent")->check(CLI::PositiveNumber);

    CLI::App* predict = app.add_subcommand("predict", "segment an RV3D volume");
    predict_opts.attach(predict, "brats");
    predict->add_option("--weights", weights, "LMSW weights")->required();
    predict->add_option("--in", in_path, "input RV3D volume")->required();
    predict->add_option("--out", out_path, "output RV3D label volume")->required();

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
    gradcheck->add_option("--seed", seed, "random seed");
    gradcheck->add_option("--size", size, "block extent (multiple of 4)")->check(CLI::PositiveNumber);

    CLI::App* train = app.add_subcommand("train-toy", "train on generated phantoms");
    train_opts.attach(train, "toy");
    train->add_option("--epochs", epochs, "maximum epochs")->check(CLI::NonNegativeNumber);
    train->add_option("--seed", seed, "initialization, data and shuffling seed");
    train->add_option("--size", size, "cubic phantom extent");
    train->add_option("--samples", count, "number of phantoms")->check(CLI::PositiveNumber);
    train->add_option("--train-config", train_config, "training config JSON file");
    train->add_option("--out", out_path, "write trained weights (LMSW)");

    CLI::App* exp = app.add_subcommand("export-weights", "initialize a model and write its weights");
    export_opts.attach(exp, "brats");
    exp->add_option("--seed", seed, "initialization seed");
    exp->add_option("--out", out_path, "output LMSW file")->required();

    CLI::App* imp = app.add_subcommand("import-weights", "validate weights against a config");
    import_opts.attach(imp, "brats");
    imp->add_option("--weights", weights, "LMSW weights")->required();
    imp->add_option("--out", out_path, "re-export the imported weights");

    CLI::App* phantom = app.add_subcommand("phantom-gen", "write synthetic phantoms as RV3D files");
    phantom_opts.attach(phantom, "toy");
    phantom->add_option("--seed", seed, "generator seed");
    phantom->add_option("--size", size, "cubic extent (multiple of 16)");
    phantom->add_option("--count", count, "number of phantoms")->check(CLI::PositiveNumber);
    phantom->add_option("--out", out_path, "output directory")->required();

    // Defaults that differ per subcommand.
    for (CLI::App* sub : {gradcheck, train, phantom}) {
        sub->preparse_callback([&size, sub, gradcheck](std::size_t) { size = sub == gradcheck ? 8 : 32; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*summary) {
            ModelHandle m(summary_opts.json(), 0);
            std::cout << cost_report(m, size, as_json);
            if (as_json) std::cout << '\n';
        } else if (*flops) {
            ModelHandle m(flops_opts.json(), 0);
            const nlohmann::json r = nlohmann::json::parse(cost_report(m, size, true));
            const auto& t = r.at("totals");
            std::printf("input        %s\n", r.at("input").dump().c_str());
            std::printf("params       %lld\n", t.at("params").get<long long>());
            std::printf("MACs         %llu\n", t.at("macs").get<unsigned long long>());
            std::printf("GFLOPs       %.3f (mac=2flop)\n", t.at("flops").at("mac=2flop").get<double>() / 1e9);
            std::printf("GFLOPs       %.3f (mac=1flop)\n", t.at("flops").at("mac=1flop").get<double>() / 1e9);
            std::printf("aux ops      %llu (excluded)\n", t.at("aux_ops").get<unsigned long long>());
        } else if (*predict) {
            ModelHandle m(predict_opts.json(), 0);
            check(lms_model_load_weights(m.get(), weights.c_str()), "weights");
            lms_volume v{};
            check(lms_rv3d_read(in_path.c_str(), &v), "input volume");
            const std::int64_t shape[5] = {1, v.channels, v.depth, v.height, v.width};
            std::vector<std::int32_t> labels(static_cast<std::size_t>(v.depth * v.height * v.width));
            const lms_status s =
                lms_model_predict(m.get(), v.data, shape, labels.data(), static_cast<std::int64_t>(labels.size()));
            lms_volume_free(&v);
            check(s, "predict");
            std::vector<float> out(labels.begin(), labels.end());
            const lms_volume lv{1, shape[2], shape[3], shape[4], out.data()};
            check(lms_rv3d_write(out_path.c_str(), &lv), "output volume");
        } else if (*gradcheck) {
            int passed = 0;
            check(lms_gradcheck(seed, size, print_check, nullptr, &passed), "gradcheck");
            std::printf("%s\n", passed ? "all gradient checks passed" : "gradient checks FAILED");
            return passed ? kExitOk : kExitRuntime;
        } else if (*train) {
            ModelHandle m(train_opts.json(), seed);
            nlohmann::json tc = train_config.empty() ? nlohmann::json::object() : nlohmann::json::parse(read_text(train_config));
            tc["epochs"] = epochs;
            if (!tc.contains("seed")) tc["seed"] = seed;
            if (!tc.contains("target_dice")) tc["target_dice"] = 0.9;
            const nlohmann::json cfg = m.config();
            const nlohmann::json spec{{"extents", {size, size, size}},
                                      {"classes", cfg.at("num_classes")},
                                      {"channels", cfg.at("in_channels")},
                                      {"seed", seed}};
            char* log = nullptr;
            check(lms_train_toy(m.get(), tc.dump().c_str(), spec.dump().c_str(), count, print_epoch, nullptr, &log),
                  "train");
            const nlohmann::json doc = nlohmann::json::parse(take(log));
            std::printf("final mean foreground dice %.4f after %lld steps\n", doc.at("final_mean_dice").get<double>(),
                        doc.at("steps").get<long long>());
            if (!out_path.empty()) check(lms_model_save_weights(m.get(), out_path.c_str()), "save weights");
        } else if (*exp) {
            ModelHandle m(export_opts.json(), seed);
            check(lms_model_save_weights(m.get(), out_path.c_str()), "save weights");
            std::int64_t n = 0;
            check(lms_model_param_count(m.get(), &n), "param count");
            std::printf("wrote %lld parameters to %s\n", static_cast<long long>(n), out_path.c_str());
        } else if (*imp) {
            ModelHandle m(import_opts.json(), 0);
            check(lms_model_load_weights(m.get(), weights.c_str()), "weights");
            std::int64_t n = 0;
            check(lms_model_param_count(m.get(), &n), "param count");
            std::printf("loaded %lld parameters from %s\n", static_cast<long long>(n), weights.c_str());
            if (!out_path.empty()) check(lms_model_save_weights(m.get(), out_path.c_str()), "save weights");
        } else if (*phantom) {
            ModelHandle m(phantom_opts.json(), 0);
            const nlohmann::json cfg = m.config();
            const nlohmann::json spec{{"extents", {size, size, size}},
                                      {"classes", cfg.at("num_classes")},
                                      {"channels", cfg.at("in_channels")},
                                      {"seed", seed}};
            std::int64_t warnings = 0;
            check(lms_phantom_generate(spec.dump().c_str(), count, out_path.c_str(), &warnings), "phantoms");
            std::printf("wrote %lld phantoms to %s (%lld warnings)\n", static_cast<long long>(count), out_path.c_str(),
                        static_cast<long long>(warnings));
        }
    } catch (const RuntimeFailure& e) {
        std::fprintf(stderr, "error: %s\n", e.message.c_str());
        return kExitRuntime;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}
