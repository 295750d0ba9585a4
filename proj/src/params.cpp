#include "lms/params.hpp"

#include <cmath>
#include <random>

namespace lms {

void ParamStore::declare(const std::string& name, const Shape& shape, InitScheme init, Index fan_in) {
    if (name.empty()) throw_argument("parameter name must be non-empty");
    if (index_.count(name)) throw_argument("duplicate parameter name '" + name + "'");
    if (fan_in < 1) throw_argument("parameter '" + name + "': fan_in must be >= 1");
    index_.emplace(name, entries_.size());
    entries_.push_back(ParamTensor{name, Tensor<double>(shape), true, init, fan_in});
}

void ParamStore::initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (ParamTensor& p : entries_) {
        switch (p.init) {
            case InitScheme::kZeros:
                p.value.fill(0.0);
                break;
            case InitScheme::kOnes:
                p.value.fill(1.0);
                break;
            case InitScheme::kFanInUniform: {
                const double bound = 1.0 / std::sqrt(static_cast<double>(p.fan_in));
                std::uniform_real_distribution<double> dist(-bound, bound);
                for (double& v : p.value.data()) v = dist(rng);
                break;
            }
        }
    }
}

const ParamTensor& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw_argument("unknown parameter '" + name + "'");
    return entries_[it->second];
}

ParamTensor& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw_argument("unknown parameter '" + name + "'");
    return entries_[it->second];
}

Index ParamStore::scalar_count() const {
    Index n = 0;
    for (const ParamTensor& p : entries_) n += p.value.numel();
    return n;
}

Index ParamStore::scalar_count(const std::string& prefix) const {
    Index n = 0;
    for (const ParamTensor& p : entries_) {
        if (p.name.compare(0, prefix.size(), prefix) == 0) n += p.value.numel();
    }
    return n;
}

void ParamStore::assign_from(const ParamStore& other) {
    for (const ParamTensor& src : other.entries_) {
        if (!contains(src.name)) continue;
        ParamTensor& dst = at(src.name);
        if (dst.value.shape() != src.value.shape()) {
            throw_shape("parameter '" + src.name + "': shape " + src.value.shape().str() + " vs " +
                        dst.value.shape().str());
        }
        dst.value = src.value;
    }
}

bool ParamStore::operator==(const ParamStore& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const ParamTensor& a = entries_[i];
        const ParamTensor& b = other.entries_[i];
        if (a.name != b.name || a.value.shape() != b.value.shape() || a.value.vec() != b.value.vec()) return false;
    }
    return true;
}

template <typename T>
Var<T> ParamBinding<T>::operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const ParamTensor& p = store_.at(name);
    Tensor<T> value = p.value.template cast<T>();
    Var<T> v = p.trainable ? tape_.leaf(std::move(value), name) : tape_.constant(std::move(value));
    bound_.emplace(name, v);
    return v;
}

template class ParamBinding<float>;
template class ParamBinding<double>;

}  // namespace lms
