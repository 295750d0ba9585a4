#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lms/params.hpp"

namespace lms {

struct GradCheckOptions {
    double step = 1e-5;          // central-difference half step
    Index coords_per_tensor = 4;  // sampled coordinates per checked tensor
    double floor = 1e-6;          // denominator floor of the relative error
};

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    Index coordinates = 0;
    std::string worst;  // "tensor[index]" of the largest error
    bool passed = false;
};

/// Builds the checked function on a tape; every trainable store entry is an input.
using GradBuilder = std::function<Var<double>(ParamBinding<double>&)>;

/// Compares reverse-mode gradients of <r, f(store)> (r a fixed random projection) with
/// central differences at sampled coordinates. Error: |a - n| / max(|a|, |n|, floor).
GradCheckResult check_gradients(const std::string& name, ParamStore& store, const GradBuilder& f, double tolerance,
                                std::uint64_t seed, const GradCheckOptions& options = {});

struct GradSuiteOptions {
    std::uint64_t seed = 7;
    Index block_size = 8;   // spatial extent for primitives and blocks
    Index model_size = 16;  // full-model extent; raised to the next multiple of 16
    double block_tolerance = 1e-4;
    double model_tolerance = 1e-3;
    GradCheckOptions check;
};

/// Primitives, composite blocks, loss terms and the full two-class model, in double precision.
std::vector<GradCheckResult> run_gradcheck_suite(const GradSuiteOptions& options,
                                                 const std::function<void(const GradCheckResult&)>& on_result = {});

/// Smallest valid model extent that is at least `size`.
Index model_extent_for(Index size);

}  // namespace lms
