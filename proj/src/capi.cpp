#include "lms/lms.h"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <new>
#include <string>

#include <json.hpp>

#include "lms/accounting.hpp"
#include "lms/gradcheck.hpp"
#include "lms/io.hpp"
#include "lms/model.hpp"
#include "lms/phantom.hpp"
#include "lms/train.hpp"

struct lms_model {
    lms::Model model;
};

namespace {

thread_local std::string g_last_error;

lms_status status_of(lms::ErrorKind k) {
    switch (k) {
        case lms::ErrorKind::kArgument:
            return LMS_ERR_ARGUMENT;
        case lms::ErrorKind::kShape:
            return LMS_ERR_SHAPE;
        case lms::ErrorKind::kConfig:
            return LMS_ERR_CONFIG;
        case lms::ErrorKind::kIo:
            return LMS_ERR_IO;
        case lms::ErrorKind::kDivergence:
            return LMS_ERR_DIVERGENCE;
        case lms::ErrorKind::kRuntime:
            break;
    }
    return LMS_ERR_RUNTIME;
}

// Runs fn, translating exceptions into status codes and the thread-local message.
template <typename Fn>
lms_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return LMS_OK;
    } catch (const lms::Error& e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return LMS_ERR_RUNTIME;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return LMS_ERR_RUNTIME;
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void require(bool ok, const char* what) {
    if (!ok) lms::throw_argument(what);
}

lms::Shape shape_of(const int64_t shape[5]) {
    require(shape != nullptr, "shape must not be null");
    return lms::Shape{shape[0], shape[1], shape[2], shape[3], shape[4]};
}

lms::Tensor<float> input_tensor(const float* x, const int64_t shape[5]) {
    require(x != nullptr, "input must not be null");
    const lms::Shape s = shape_of(shape);
    for (int i = 0; i < 5; ++i) require(s[i] > 0, "input extents must be positive");
    return lms::Tensor<float>(s, std::vector<float>(x, x + s.numel()));
}

}  // namespace

extern "C" {

const char* lms_last_error(void) { return g_last_error.c_str(); }

const char* lms_version(void) { return "1.0.0"; }

void lms_string_free(char* s) { std::free(s); }

lms_status lms_config_preset(const char* preset, char** json_out) {
    return guarded([&] {
        require(preset && json_out, "preset and output must not be null");
        const std::string p = preset;
        if (p == "brats") {
            *json_out = dup_string(lms::brats_config().to_json());
        } else if (p == "toy") {
            *json_out = dup_string(lms::toy_config().to_json());
        } else {
            lms::throw_config("unknown preset '" + p + "' (expected brats or toy)");
        }
    });
}

lms_status lms_model_create(const char* config_json, uint64_t seed, lms_model** out) {
    return guarded([&] {
        require(out != nullptr, "output handle must not be null");
        *out = nullptr;
        lms::ModelConfig cfg = config_json ? lms::ModelConfig::from_json(config_json) : lms::brats_config();
        auto* m = new lms_model{lms::Model(std::move(cfg))};
        m->model.initialize(seed);
        *out = m;
    });
}

void lms_model_destroy(lms_model* model) { delete model; }

lms_status lms_model_config(const lms_model* model, char** json_out) {
    return guarded([&] {
        require(model && json_out, "model and output must not be null");
        *json_out = dup_string(model->model.config().to_json());
    });
}

lms_status lms_model_param_count(const lms_model* model, int64_t* out) {
    return guarded([&] {
        require(model && out, "model and output must not be null");
        *out = model->model.params().scalar_count();
    });
}

lms_status lms_model_cost_report(const lms_model* model, const int64_t shape[5], int as_json, char** out) {
    return guarded([&] {
        require(model && out, "model and output must not be null");
        const lms::CostReport r = lms::count_costs(model->model, shape_of(shape));
        *out = dup_string(as_json ? r.json() : r.text());
    });
}

lms_status lms_model_forward(const lms_model* model, const float* x, const int64_t shape[5], float* logits,
                             int64_t logits_len) {
    return guarded([&] {
        require(model && logits, "model and output must not be null");
        const lms::Tensor<float> y = model->model.predict_logits(input_tensor(x, shape));
        if (logits_len != y.numel()) {
            lms::throw_shape("logits buffer holds " + std::to_string(logits_len) + " values, " +
                             std::to_string(y.numel()) + " required");
        }
        std::copy(y.data().begin(), y.data().end(), logits);
    });
}

lms_status lms_model_predict(const lms_model* model, const float* x, const int64_t shape[5], int32_t* labels,
                             int64_t labels_len) {
    return guarded([&] {
        require(model && labels, "model and output must not be null");
        const std::vector<int32_t> l = lms::argmax_labels(model->model.predict_logits(input_tensor(x, shape)));
        if (labels_len != static_cast<int64_t>(l.size())) {
            lms::throw_shape("label buffer holds " + std::to_string(labels_len) + " values, " +
                             std::to_string(l.size()) + " required");
        }
        std::copy(l.begin(), l.end(), labels);
    });
}

lms_status lms_model_save_weights(const lms_model* model, const char* path) {
    return guarded([&] {
        require(model && path, "model and path must not be null");
        lms::save_weights(path, model->model.params());
    });
}

lms_status lms_model_load_weights(lms_model* model, const char* path) {
    return guarded([&] {
        require(model && path, "model and path must not be null");
        lms::ParamStore staged = model->model.params();
        lms::load_weights(path, staged);
        model->model.params() = std::move(staged);
    });
}

lms_status lms_rv3d_read(const char* path, lms_volume* out) {
    return guarded([&] {
        require(path && out, "path and output must not be null");
        const lms::Volume v = lms::read_rv3d(path);
        auto* data = static_cast<float*>(std::malloc(sizeof(float) * std::max<size_t>(1, v.data.size())));
        if (!data) throw std::bad_alloc();
        std::copy(v.data.begin(), v.data.end(), data);
        *out = lms_volume{v.channels, v.extents.d, v.extents.h, v.extents.w, data};
    });
}

lms_status lms_rv3d_write(const char* path, const lms_volume* volume) {
    return guarded([&] {
        require(path && volume && volume->data, "path and volume must not be null");
        lms::Volume v{volume->channels, {volume->depth, volume->height, volume->width}, {}};
        require(v.channels >= 0 && v.extents.d >= 0 && v.extents.h >= 0 && v.extents.w >= 0, "negative extent");
        v.data.assign(volume->data, volume->data + v.numel());
        lms::write_rv3d(path, v);
    });
}

void lms_volume_free(lms_volume* volume) {
    if (!volume) return;
    std::free(volume->data);
    volume->data = nullptr;
}

lms_status lms_phantom_generate(const char* spec_json, int64_t count, const char* out_dir, int64_t* warnings) {
    return guarded([&] {
        require(out_dir != nullptr, "output directory must not be null");
        const lms::PhantomSpec spec = spec_json ? lms::PhantomSpec::from_json(spec_json) : lms::PhantomSpec{};
        const lms::PhantomSet set = lms::generate_phantoms(spec, count);
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (ec) lms::throw_io("cannot create '" + std::string(out_dir) + "': " + ec.message());
        for (std::size_t i = 0; i < set.samples.size(); ++i) {
            char stem[32];
            std::snprintf(stem, sizeof stem, "%03zu.rv3d", i);
            const lms::Phantom& p = set.samples[i];
            lms::write_rv3d((std::filesystem::path(out_dir) / ("image_" + std::string(stem))).string(), p.image);
            lms::Volume labels{1, p.labels.extents, {}};
            for (int32_t v : p.labels.data) labels.data.push_back(static_cast<float>(v));
            lms::write_rv3d((std::filesystem::path(out_dir) / ("label_" + std::string(stem))).string(), labels);
        }
        if (warnings) *warnings = static_cast<int64_t>(set.warnings.size());
        for (const std::string& w : set.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    });
}

lms_status lms_train_toy(lms_model* model, const char* train_json, const char* phantom_json, int64_t samples,
                         lms_epoch_fn on_epoch, void* user, char** log_json_out) {
    return guarded([&] {
        require(model != nullptr, "model must not be null");
        require(samples > 0, "sample count must be positive");
        const lms::TrainConfig tc = train_json ? lms::TrainConfig::from_json(train_json) : lms::TrainConfig{};
        lms::PhantomSpec spec = phantom_json ? lms::PhantomSpec::from_json(phantom_json) : lms::PhantomSpec{};
        const lms::ModelConfig& mc = model->model.config();
        if (!phantom_json) {
            spec.classes = mc.num_classes;
            spec.channels = mc.in_channels;
        }
        if (spec.classes != mc.num_classes || spec.channels != mc.in_channels) {
            lms::throw_config("phantom classes/channels do not match the model config");
        }
        const std::vector<lms::TrainSample> data = lms::to_samples(lms::generate_phantoms(spec, samples));
        const lms::TrainLog log = lms::train_toy(model->model, data, tc, [&](const lms::EpochRecord& r) {
            if (!on_epoch) return;
            const lms_epoch e{r.epoch, r.lr, r.total, r.dice, r.ce, r.boundary, r.mean_dice, r.seconds};
            on_epoch(&e, user);
        });
        if (log_json_out) {
            nlohmann::json epochs = nlohmann::json::array();
            for (const lms::EpochRecord& r : log.epochs) {
                epochs.push_back({{"epoch", r.epoch},
                                  {"lr", r.lr},
                                  {"total", r.total},
                                  {"dice", r.dice},
                                  {"ce", r.ce},
                                  {"boundary", r.boundary},
                                  {"mean_dice", r.mean_dice},
                                  {"seconds", r.seconds}});
            }
            nlohmann::json doc{{"epochs", epochs},
                               {"steps", log.steps},
                               {"reached_target", log.reached_target},
                               {"final_mean_dice", lms::mean_foreground_dice(model->model, data)}};
            *log_json_out = dup_string(doc.dump(2));
        }
    });
}

lms_status lms_gradcheck(uint64_t seed, int64_t block_size, lms_gradcheck_fn on_result, void* user, int* all_passed) {
    return guarded([&] {
        lms::GradSuiteOptions o;
        o.seed = seed;
        o.block_size = block_size;
        o.model_size = block_size;
        bool ok = true;
        lms::run_gradcheck_suite(o, [&](const lms::GradCheckResult& r) {
            ok = ok && r.passed;
            if (on_result) on_result(r.name.c_str(), r.max_rel_error, r.tolerance, r.passed ? 1 : 0, user);
        });
        if (all_passed) *all_passed = ok ? 1 : 0;
    });
}

}  // extern "C"
