#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lms/model.hpp"

namespace lms {

enum class FlopConvention { kTwoPerMac, kOnePerMac };

/// One traced operation. `params` and `macs` are zero for parameter-free ops; `aux_ops`
/// counts elementwise work (normalization, activations, pooling, resampling, gating),
/// which never enters the headline FLOP figure.
struct CostRow {
    std::string name;
    std::string kind;
    Index params = 0;
    std::uint64_t macs = 0;
    std::uint64_t aux_ops = 0;
    Shape output;
    std::uint64_t activ_bytes = 0;  // size of the output tensor
    std::vector<int> inputs;        // tensor ids consumed
    int output_id = -1;

    std::uint64_t flops(FlopConvention c) const { return c == FlopConvention::kTwoPerMac ? 2 * macs : macs; }
};

struct CostGroup {
    std::string name;
    Index params = 0;
    std::uint64_t macs = 0;
    std::uint64_t aux_ops = 0;
};

struct CostReport {
    std::string fingerprint;
    Shape input;
    int precision_bytes = 4;
    std::vector<CostRow> rows;  // evaluation order

    Index total_params() const;
    std::uint64_t total_macs() const;
    std::uint64_t total_aux_ops() const;
    std::uint64_t total_flops(FlopConvention c) const;

    /// Rows whose name starts with `prefix`.
    Index params(const std::string& prefix) const;
    std::uint64_t macs(const std::string& prefix) const;

    /// Aggregates by the first `depth` dotted name components.
    std::vector<CostGroup> groups(int depth = 2) const;

    /// Peak of live activation bytes when every tensor is freed after its last consumer.
    std::uint64_t peak_activation_bytes() const;

    std::string text() const;
    std::string json() const;
};

/// Structure-only parameter breakdown, no input shape needed.
struct ParamBreakdown {
    Index total = 0;
    Index stem = 0;
    Index anchors = 0;
    Index lspm = 0;
    Index lspm_texture = 0;
    Index lspm_gate = 0;
    Index lspm_mixer = 0;
    Index encoder = 0;
    Index router = 0;           // all "router.*" parameters, including output projections and single skips
    Index router_core = 0;      // level alignment and the per-voxel controller
    Index decoder = 0;
};

ParamBreakdown count_params(const Model& model);

/// Traces the model at an input shape (B,Cin,D,H,W). `precision_bytes` sizes activations.
CostReport count_costs(const Model& model, const Shape& input, int precision_bytes = 4);

/// Liveness-based activation estimate; informational only.
std::uint64_t estimate_activation_memory(const Model& model, const Shape& input, int precision_bytes = 4);

/// Peak live bytes over an op sequence, freeing each tensor after its last use.
/// `sizes[id]` is the byte size of tensor id; tensors listed in `pinned` are never freed.
std::uint64_t peak_live_bytes(const std::vector<std::uint64_t>& sizes, const std::vector<CostRow>& ops,
                              const std::vector<int>& pinned = {});

}  // namespace lms
