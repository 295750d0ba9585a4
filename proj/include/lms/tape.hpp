#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lms/tensor.hpp"

namespace lms {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    const Tensor<T>& value() const { return tape->value(id); }
    const Shape& shape() const { return value().shape(); }
    bool valid() const noexcept { return tape != nullptr && id >= 0; }
};

/// Reverse-mode recording of one forward evaluation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it and
/// replaying in reverse order is a valid topological sweep. Values are never mutated
/// after recording. A tape is used by a single thread at a time.
template <typename T>
class Tape {
   public:
    using BackwardFn = std::function<void(Tape&, int self)>;

    explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const noexcept { return recording_; }

    /// Leaf that never receives a gradient.
    Var<T> constant(Tensor<T> value);
    /// Leaf that receives a gradient; the name keys it in gradients().
    Var<T> leaf(Tensor<T> value, std::string name = {});

    /// Records an interior node. `backward` runs only when some parent needs a gradient.
    Var<T> push(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn backward);
    Var<T> push(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn backward);

    const Tensor<T>& value(int id) const { return node(id).value; }
    bool requires_grad(int id) const { return node(id).requires_grad; }
    /// Gradient buffer for a node, zero-allocated on first access.
    Tensor<T>& grad(int id);
    bool has_grad(int id) const { return !node(id).grad.empty() || node(id).value.numel() == 0; }

    /// Backpropagates from a scalar root (seed 1).
    void backward(Var<T> root);
    /// Backpropagates from an arbitrary root with an explicit seed gradient.
    void backward(Var<T> root, const Tensor<T>& seed);

    /// Gradients of every named leaf; unreachable leaves get zeros.
    std::map<std::string, Tensor<T>> gradients() const;

    std::size_t size() const noexcept { return nodes_.size(); }

    // Multiply-accumulate instrumentation, updated by the linear-algebra ops.
    void add_macs(std::uint64_t macs) noexcept { macs_ += macs; }
    std::uint64_t macs() const noexcept { return macs_; }

   private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        bool is_leaf = false;
        std::string name;
        BackwardFn backward;
    };

    Node& node(int id);
    const Node& node(int id) const;

    std::deque<Node> nodes_;
    bool recording_;
    bool consumed_ = false;
    std::uint64_t macs_ = 0;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace lms
