#include "lms/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

#include <json.hpp>

namespace lms {

void TrainConfig::validate() const {
    if (epochs < 0) throw_config("train: epochs must be non-negative");
    if (batch_size < 1) throw_config("train: batch_size must be positive");
    if (learning_rate < 0 || weight_decay < 0) throw_config("train: learning rate and weight decay must be non-negative");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw_config("train: betas must lie in [0, 1)");
    if (!(adam_eps > 0)) throw_config("train: adam_eps must be positive");
    if (lr_floor < 0 || lr_floor > learning_rate) throw_config("train: lr_floor must lie in [0, learning_rate]");
    if (period_epochs < 1) throw_config("train: period_epochs must be positive");
    if (warmup_epochs < 0) throw_config("train: warmup_epochs must be non-negative");
    if (threads < 0) throw_config("train: threads must be non-negative");
}

std::string TrainConfig::to_json() const {
    nlohmann::json j{{"epochs", epochs},
                     {"batch_size", batch_size},
                     {"learning_rate", learning_rate},
                     {"weight_decay", weight_decay},
                     {"betas", {beta1, beta2}},
                     {"adam_eps", adam_eps},
                     {"lr_floor", lr_floor},
                     {"period_epochs", period_epochs},
                     {"warmup_epochs", warmup_epochs},
                     {"seed", seed},
                     {"target_dice", target_dice},
                     {"threads", threads}};
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    TrainConfig c;
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        if (!j.is_object()) throw_config("train config: expected a JSON object");
        for (const auto& [key, value] : j.items()) {
            if (key == "epochs") c.epochs = value.get<Index>();
            else if (key == "batch_size") c.batch_size = value.get<Index>();
            else if (key == "learning_rate") c.learning_rate = value.get<double>();
            else if (key == "weight_decay") c.weight_decay = value.get<double>();
            else if (key == "betas") {
                const auto b = value.get<std::vector<double>>();
                if (b.size() != 2) throw_config("train config: betas needs two entries");
                c.beta1 = b[0];
                c.beta2 = b[1];
            } else if (key == "adam_eps") c.adam_eps = value.get<double>();
            else if (key == "lr_floor") c.lr_floor = value.get<double>();
            else if (key == "period_epochs") c.period_epochs = value.get<Index>();
            else if (key == "warmup_epochs") c.warmup_epochs = value.get<Index>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "target_dice") c.target_dice = value.get<double>();
            else if (key == "threads") c.threads = value.get<int>();
            else throw_config("train config: unknown field '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw_config(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

LearningRateSchedule::LearningRateSchedule(const TrainConfig& cfg, Index steps_per_epoch)
    : peak_(cfg.learning_rate),
      floor_(cfg.lr_floor),
      warmup_steps_(cfg.warmup_epochs * steps_per_epoch),
      period_steps_(cfg.period_epochs * steps_per_epoch) {
    if (steps_per_epoch < 1) throw_argument("schedule: steps_per_epoch must be positive");
}

double LearningRateSchedule::at(Index step) const {
    if (step < 0) throw_argument("schedule: negative step");
    if (step < warmup_steps_) return peak_ * static_cast<double>(step) / static_cast<double>(warmup_steps_);
    const double phase = static_cast<double>((step - warmup_steps_) % period_steps_) / static_cast<double>(period_steps_);
    return floor_ + 0.5 * (peak_ - floor_) * (1.0 + std::cos(std::numbers::pi * phase));
}

void AdamW::step(ParamStore& store, const std::map<std::string, Tensor<double>>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (ParamTensor& p : store.entries()) {
        if (!p.trainable) continue;
        Tensor<double>& m = m_.try_emplace(p.name, p.value.shape()).first->second;
        Tensor<double>& v = v_.try_emplace(p.name, p.value.shape()).first->second;
        const auto it = grads.find(p.name);
        const Tensor<double>* g = it == grads.end() ? nullptr : &it->second;
        if (g && g->shape() != p.value.shape()) throw_shape("adamw: gradient shape mismatch for " + p.name);
        for (Index i = 0; i < p.value.numel(); ++i) {
            const double gi = g ? (*g)[i] : 0.0;
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            double& w = p.value[i];
            w -= lr * weight_decay_ * w;
            w -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
    }
}

DiceScores evaluate_dice(const std::vector<std::int32_t>& predicted, const LabelVolume& target, Index classes) {
    if (static_cast<Index>(predicted.size()) != target.size()) throw_shape("dice: prediction and target sizes differ");
    target.validate(classes);
    const auto C = static_cast<std::size_t>(classes);
    std::vector<double> p(C, 0), g(C, 0), both(C, 0);
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const auto a = static_cast<std::size_t>(predicted[i]);
        const auto b = static_cast<std::size_t>(target.data[i]);
        if (a >= C) throw_argument("dice: predicted class out of range");
        p[a] += 1;
        g[b] += 1;
        if (a == b) both[a] += 1;
    }
    DiceScores s;
    for (std::size_t c = 0; c < C; ++c) s.per_class.push_back(p[c] + g[c] == 0 ? 1.0 : 2 * both[c] / (p[c] + g[c]));
    if (C > 1) {
        s.mean_foreground = std::accumulate(s.per_class.begin() + 1, s.per_class.end(), 0.0) / static_cast<double>(C - 1);
    } else {
        s.mean_foreground = s.per_class[0];
    }
    return s;
}

template <typename T>
DiceScores evaluate_dice(const Tensor<T>& logits, const LabelVolume& target) {
    require_rank(logits.shape(), 5, "dice logits");
    if (logits.dim(0) != target.batch || logits.extents() != target.extents) {
        throw_shape("dice: logits " + logits.shape().str() + " do not match labels");
    }
    return evaluate_dice(argmax_labels(logits), target, logits.dim(1));
}

template DiceScores evaluate_dice(const Tensor<float>&, const LabelVolume&);
template DiceScores evaluate_dice(const Tensor<double>&, const LabelVolume&);

std::vector<TrainSample> to_samples(const PhantomSet& set) {
    std::vector<TrainSample> out;
    for (const Phantom& p : set.samples) out.push_back({p.image.tensor<float>(), p.labels});
    return out;
}

int worker_count(int requested, Index jobs) {
    int n = requested > 0 ? requested : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("LMS_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) n = std::min(n, cap);
    }
    return static_cast<int>(std::max<Index>(1, std::min<Index>(n, jobs)));
}

namespace {

// Runs fn(i) for i in [0, n) on `workers` threads; the first exception is rethrown.
template <typename Fn>
void parallel_for(Index n, int workers, Fn fn) {
    if (workers <= 1 || n <= 1) {
        for (Index i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (Index i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (std::thread& t : pool) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

struct SampleRun {
    std::unique_ptr<Tape<float>> tape;
    Var<float> logits;
    std::map<std::string, Tensor<float>> grads;
};

void check_data(const Model& model, const std::vector<TrainSample>& data) {
    if (data.empty()) throw_argument("train: no samples");
    const ModelConfig& cfg = model.config();
    for (const TrainSample& s : data) {
        require_rank(s.image.shape(), 5, "train sample");
        if (s.image.dim(0) != 1 || s.image.dim(1) != cfg.in_channels) {
            throw_shape("train: sample " + s.image.shape().str() + " does not match the model input");
        }
        if (s.labels.batch != 1 || s.labels.extents != s.image.extents()) throw_shape("train: labels do not match image");
        s.labels.validate(cfg.num_classes);
    }
}

}  // namespace

TrainLog train_toy(Model& model, const std::vector<TrainSample>& data, const TrainConfig& cfg,
                   const EpochCallback& on_epoch) {
    cfg.validate();
    check_data(model, data);
    const Index n = static_cast<Index>(data.size());
    const Index batch = std::min(cfg.batch_size, n);
    const Index steps_per_epoch = (n + batch - 1) / batch;
    const LearningRateSchedule schedule(cfg, steps_per_epoch);
    AdamW opt(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    const int workers = worker_count(cfg.threads, batch);
    std::mt19937_64 rng(cfg.seed);
    std::vector<Index> order(static_cast<std::size_t>(n));

    TrainLog log;
    for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), Index{0});
        std::shuffle(order.begin(), order.end(), rng);
        EpochRecord rec;
        rec.epoch = epoch;
        double dice_sum = 0;
        for (Index start = 0; start < n; start += batch) {
            const Index nb = std::min(batch, n - start);
            const double lr = schedule.at(log.steps);
            std::vector<SampleRun> runs(static_cast<std::size_t>(nb));
            parallel_for(nb, workers, [&](Index i) {
                const TrainSample& s = data[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
                SampleRun& r = runs[static_cast<std::size_t>(i)];
                r.tape = std::make_unique<Tape<float>>();
                ParamBinding<float> p(*r.tape, model.params());
                r.logits = model.forward(p, r.tape->constant(s.image)).logits;
            });

            // Batch loss on the joined logits, then the logit gradient is split back per sample.
            const Shape ls = runs.front().logits.shape();
            const Index per = ls.numel();
            Tensor<float> joined(Shape{nb, ls[1], ls[2], ls[3], ls[4]});
            std::vector<const LabelVolume*> parts;
            for (Index i = 0; i < nb; ++i) {
                const Tensor<float>& v = runs[static_cast<std::size_t>(i)].logits.value();
                std::copy(v.data().begin(), v.data().end(), joined.data().begin() + i * per);
                parts.push_back(&data[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])].labels);
            }
            const LabelVolume labels = LabelVolume::stack(parts);
            Tape<float> loss_tape;
            Var<float> z = loss_tape.leaf(joined, "logits");
            LossTerms<float> terms = total_loss(z, labels);
            const double total = terms.total.value()[0];
            if (!std::isfinite(total)) {
                throw Error(ErrorKind::kDivergence, "train: non-finite loss at epoch " + std::to_string(epoch) +
                                                        ", step " + std::to_string(log.steps) + " (lr " +
                                                        std::to_string(lr) + ")");
            }
            rec.total += total;
            rec.dice += terms.dice.value()[0];
            rec.ce += terms.ce.value()[0];
            rec.boundary += terms.boundary.value()[0];
            for (Index i = 0; i < nb; ++i) {
                const Tensor<float>& v = runs[static_cast<std::size_t>(i)].logits.value();
                dice_sum += evaluate_dice(v, *parts[static_cast<std::size_t>(i)]).mean_foreground;
            }
            loss_tape.backward(terms.total);
            const Tensor<float> gz = loss_tape.gradients().at("logits");

            parallel_for(nb, workers, [&](Index i) {
                SampleRun& r = runs[static_cast<std::size_t>(i)];
                Tensor<float> seed(ls);
                std::copy(gz.data().begin() + i * per, gz.data().begin() + (i + 1) * per, seed.data().begin());
                r.tape->backward(r.logits, seed);
                r.grads = r.tape->gradients();
                r.tape.reset();
            });
            std::map<std::string, Tensor<double>> grads;
            for (const SampleRun& r : runs) {
                for (const auto& [name, g] : r.grads) {
                    auto it = grads.try_emplace(name, g.shape()).first;
                    Tensor<double>& acc = it->second;
                    for (Index k = 0; k < g.numel(); ++k) acc[k] += static_cast<double>(g[k]);
                }
            }
            opt.step(model.params(), grads, lr);
            rec.lr = lr;
            ++log.steps;
        }
        const auto batches = static_cast<double>(steps_per_epoch);
        rec.total /= batches;
        rec.dice /= batches;
        rec.ce /= batches;
        rec.boundary /= batches;
        rec.mean_dice = dice_sum / static_cast<double>(n);
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (cfg.target_dice > 0 && rec.mean_dice >= cfg.target_dice) {
            log.reached_target = true;
            break;
        }
    }
    return log;
}

double mean_foreground_dice(const Model& model, const std::vector<TrainSample>& data) {
    if (data.empty()) throw_argument("dice: no samples");
    double sum = 0;
    for (const TrainSample& s : data) sum += evaluate_dice(model.predict_logits(s.image), s.labels).mean_foreground;
    return sum / static_cast<double>(data.size());
}

}  // namespace lms
