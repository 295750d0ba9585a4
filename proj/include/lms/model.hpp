#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "lms/config.hpp"
#include "lms/decoder.hpp"
#include "lms/encoder.hpp"
#include "lms/skip_fusion.hpp"
#include "lms/stem_priors.hpp"

namespace lms {

/// Intermediate values exposed for inspection and invariant checks.
template <typename T>
struct ForwardTrace {
    Var<T> logits;                           // (B,N_cls,D,H,W)
    Var<T> stem;                             // F0
    std::optional<Var<T>> anchors;           // (B,K,3)
    std::optional<LspmOutput<T>> lspm;
    std::array<Var<T>, 4> encoder_skips;
    std::array<std::optional<Var<T>>, 4> router_weights;  // stages 1-2 when routed
    std::array<Var<T>, 4> decoder_outputs;
    std::array<Var<T>, 4> path_weights;
};

/// Module graph for one configuration. Parameters live in a ParamStore owned by the model.
class Model {
   public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const noexcept { return cfg_; }
    ParamStore& params() noexcept { return params_; }
    const ParamStore& params() const noexcept { return params_; }

    void initialize(std::uint64_t seed) { params_.initialize(seed); }

    const Stem& stem() const noexcept { return stem_; }
    const std::optional<AnchorDetector>& anchor_detector() const noexcept { return anchors_; }
    const std::optional<Lspm>& lspm() const noexcept { return lspm_; }
    const Encoder& encoder() const noexcept { return encoder_; }
    const SkipFusion& skip_fusion() const noexcept { return skips_; }
    const Decoder& decoder() const noexcept { return decoder_; }

    /// Full forward on the tape. x is (B,Cin,D,H,W) with extents divisible by 16.
    template <typename T>
    ForwardTrace<T> forward(ParamBinding<T>& p, Var<T> x) const;

    /// Inference without gradient recording.
    template <typename T>
    Tensor<T> predict_logits(const Tensor<T>& x) const;

   private:
    ModelConfig cfg_;
    Stem stem_;
    std::optional<AnchorDetector> anchors_;
    std::optional<Lspm> lspm_;
    Encoder encoder_;
    SkipFusion skips_;
    Decoder decoder_;
    ParamStore params_;
};

}  // namespace lms
