#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lms/loss.hpp"
#include "lms/model.hpp"
#include "lms/phantom.hpp"

namespace lms {

struct TrainConfig {
    Index epochs = 300;
    Index batch_size = 1;
    double learning_rate = 2e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double lr_floor = 1e-9;
    Index period_epochs = 100;
    Index warmup_epochs = 5;
    std::uint64_t seed = 0;
    double target_dice = 0.0;  // stop once the epoch's mean foreground Dice reaches this; 0 disables
    int threads = 0;           // 0: hardware concurrency, capped by LMS_THREADS

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

/// Linear warmup from 0, then cosine annealing with hard restarts every `period` epochs.
class LearningRateSchedule {
   public:
    LearningRateSchedule(const TrainConfig& cfg, Index steps_per_epoch);
    double at(Index step) const;
    Index warmup_steps() const noexcept { return warmup_steps_; }
    Index period_steps() const noexcept { return period_steps_; }

   private:
    double peak_, floor_;
    Index warmup_steps_, period_steps_;
};

/// Decoupled weight decay Adam over a ParamStore.
class AdamW {
   public:
    AdamW(double beta1, double beta2, double eps, double weight_decay)
        : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

    /// Applies one update; `grads` is keyed by parameter name and may omit entries (treated as zero).
    void step(ParamStore& store, const std::map<std::string, Tensor<double>>& grads, double lr);
    Index steps() const noexcept { return t_; }

   private:
    double beta1_, beta2_, eps_, weight_decay_;
    Index t_ = 0;
    std::map<std::string, Tensor<double>> m_, v_;
};

struct DiceScores {
    std::vector<double> per_class;
    double mean_foreground = 0.0;
};

/// Hard Dice of argmax predictions; a class absent from both prediction and target scores 1.
DiceScores evaluate_dice(const std::vector<std::int32_t>& predicted, const LabelVolume& target, Index classes);
template <typename T>
DiceScores evaluate_dice(const Tensor<T>& logits, const LabelVolume& target);

struct TrainSample {
    Tensor<float> image;  // (1,C,D,H,W)
    LabelVolume labels;   // batch 1
};

std::vector<TrainSample> to_samples(const PhantomSet& set);

struct EpochRecord {
    Index epoch = 0;
    double lr = 0.0;  // rate at the last step of the epoch
    double total = 0.0, dice = 0.0, ce = 0.0, boundary = 0.0;  // means over the epoch's batches
    double mean_dice = 0.0;  // mean foreground hard Dice of the pre-update predictions
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    bool reached_target = false;
    Index steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training in single precision. Samples of a batch run on separate tapes across
/// worker threads; the batch loss is evaluated on the joined logits and gradients are summed in
/// sample order, so results do not depend on the worker count.
TrainLog train_toy(Model& model, const std::vector<TrainSample>& data, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

/// Mean over samples of the per-sample mean foreground hard Dice.
double mean_foreground_dice(const Model& model, const std::vector<TrainSample>& data);

/// Worker count honoring LMS_THREADS.
int worker_count(int requested, Index jobs);

}  // namespace lms
