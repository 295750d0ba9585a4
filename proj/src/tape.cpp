#include "lms/tape.hpp"

namespace lms {

template <typename T>
typename Tape<T>::Node& Tape<T>::node(int id) {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw_argument("tape: invalid node id");
    return nodes_[static_cast<std::size_t>(id)];
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw_argument("tape: invalid node id");
    return nodes_[static_cast<std::size_t>(id)];
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    n.is_leaf = true;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, std::string name) {
    Node n;
    n.value = std::move(value);
    n.is_leaf = true;
    n.requires_grad = recording_;
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn backward) {
    return push(std::move(value), std::vector<Var<T>>(parents), std::move(backward));
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    for (const Var<T>& p : parents) {
        if (p.tape != this) throw_argument("tape: parent recorded on a different tape");
        n.requires_grad = n.requires_grad || node(p.id).requires_grad;
    }
    if (recording_ && n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>& Tape<T>::grad(int id) {
    Node& n = node(id);
    if (n.grad.empty() && n.value.numel() > 0) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
    if (root.value().numel() != 1) {
        throw_argument("backward: loss must be a scalar, got shape " + root.shape().str());
    }
    backward(root, Tensor<T>(root.shape(), T(1)));
}

template <typename T>
void Tape<T>::backward(Var<T> root, const Tensor<T>& seed) {
    if (!recording_) throw_argument("backward: tape was created without gradient recording");
    if (consumed_) throw_argument("backward: tape has already been replayed");
    if (root.tape != this) throw_argument("backward: root belongs to a different tape");
    if (seed.shape() != root.shape()) throw_shape("backward: seed shape does not match root");
    consumed_ = true;
    grad(root.id).add_(seed);
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.is_leaf || !n.backward || n.grad.empty()) continue;
        n.backward(*this, id);
        // Interior gradients are dead once propagated.
        n.grad = Tensor<T>();
        n.backward = nullptr;
    }
}

template <typename T>
std::map<std::string, Tensor<T>> Tape<T>::gradients() const {
    std::map<std::string, Tensor<T>> out;
    for (const Node& n : nodes_) {
        if (!n.is_leaf || n.name.empty() || !n.requires_grad) continue;
        out[n.name] = n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
    }
    return out;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace lms
