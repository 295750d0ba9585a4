#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "lms/tape.hpp"
#include "lms/tensor.hpp"

namespace lms {

enum class InitScheme {
    kFanInUniform,  // U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    kZeros,
    kOnes,
};

struct ParamTensor {
    std::string name;  // dotted path, e.g. "encoder.stage2.film.gamma"
    Tensor<double> value;
    bool trainable = true;
    InitScheme init = InitScheme::kFanInUniform;
    Index fan_in = 1;
};

/// Named parameter collection with deterministic (registration) order.
///
/// Master values are held in double precision; forward passes cast them to the
/// evaluation precision when binding onto a tape.
class ParamStore {
   public:
    /// Registers a parameter; throws on a duplicate name. Values start at zero.
    void declare(const std::string& name, const Shape& shape, InitScheme init, Index fan_in = 1);

    /// Fills every parameter according to its declared scheme. Deterministic in `seed`.
    void initialize(std::uint64_t seed);

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const ParamTensor& at(const std::string& name) const;
    ParamTensor& at(const std::string& name);

    const std::vector<ParamTensor>& entries() const noexcept { return entries_; }
    std::vector<ParamTensor>& entries() noexcept { return entries_; }

    /// Total scalar count over all entries.
    Index scalar_count() const;
    /// Scalar count of entries whose name starts with `prefix`.
    Index scalar_count(const std::string& prefix) const;

    /// Copies values from `other` for every matching name; shapes must agree.
    void assign_from(const ParamStore& other);

    bool operator==(const ParamStore& other) const;

   private:
    std::vector<ParamTensor> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Lazily binds store parameters as tape leaves for one forward evaluation.
template <typename T>
class ParamBinding {
   public:
    ParamBinding(Tape<T>& tape, const ParamStore& store) : tape_(tape), store_(store) {}

    Var<T> operator()(const std::string& name);
    Tape<T>& tape() const noexcept { return tape_; }
    const ParamStore& store() const noexcept { return store_; }

   private:
    Tape<T>& tape_;
    const ParamStore& store_;
    std::unordered_map<std::string, Var<T>> bound_;
};

extern template class ParamBinding<float>;
extern template class ParamBinding<double>;

}  // namespace lms
