#pragma once

// Shared test helpers: parameter-store finite differences and small evaluation shortcuts.

#include <functional>
#include <random>

#include "lms/params.hpp"
#include "oracles.hpp"

namespace support {

using namespace lms;
using Builder = std::function<Var<double>(ParamBinding<double>&)>;

// Max relative error between reverse-mode and central-difference derivatives of <r, f>,
// at `coords` random entries of every trainable store tensor.
inline double fd_store(ParamStore& store, const Builder& f, std::uint64_t seed, int coords = 3, double h = 1e-5) {
    std::mt19937_64 rng(seed);
    Tensor<double> r;
    auto eval = [&](std::map<std::string, Tensor<double>>* grads) {
        Tape<double> tape(grads != nullptr);
        ParamBinding<double> p(tape, store);
        Var<double> y = f(p);
        if (r.empty()) r = oracle::random<double>(y.shape(), rng);
        long double s = 0;
        for (Index i = 0; i < y.value().numel(); ++i) s += static_cast<long double>(r[i]) * y.value()[i];
        if (grads) {
            tape.backward(y, r);
            *grads = tape.gradients();
        }
        return static_cast<double>(s);
    };
    std::map<std::string, Tensor<double>> grads;
    eval(&grads);
    double worst = 0;
    for (auto& e : store.entries()) {
        if (!e.trainable) continue;
        std::uniform_int_distribution<Index> pick(0, e.value.numel() - 1);
        for (int c = 0; c < coords; ++c) {
            const Index i = pick(rng);
            const double keep = e.value[i];
            e.value[i] = keep + h;
            const double up = eval(nullptr);
            e.value[i] = keep - h;
            const double down = eval(nullptr);
            e.value[i] = keep;
            const double num = (up - down) / (2 * h);
            const auto it = grads.find(e.name);
            const double ana = it == grads.end() ? 0.0 : it->second[i];
            worst = std::max(worst, std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6}));
        }
    }
    return worst;
}

// Adds U(-a, a) noise to every entry (zero-initialized tensors included).
inline void jitter(ParamStore& store, std::uint64_t seed, double a = 0.2) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-a, a);
    for (auto& e : store.entries())
        for (auto& v : e.value.data()) v += u(rng);
}

inline void zero(ParamStore& store) {
    for (auto& e : store.entries()) e.value.fill(0.0);
}

}  // namespace support
