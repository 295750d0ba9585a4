#include "lms/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lms {

Shape::Shape(std::initializer_list<Index> dims) : Shape(std::span<const Index>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const Index> dims) {
    if (dims.empty() || dims.size() > static_cast<std::size_t>(kMaxRank)) {
        throw_argument("shape rank must be in [1, 5], got " + std::to_string(dims.size()));
    }
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (dims[i] < 0) throw_argument("negative extent in shape");
        dims_[i] = dims[i];
    }
    rank_ = static_cast<int>(dims.size());
}

Index Shape::numel() const noexcept {
    if (rank_ == 0) return 0;
    Index n = 1;
    for (int i = 0; i < rank_; ++i) n *= dims_[static_cast<std::size_t>(i)];
    return n;
}

bool Shape::operator==(const Shape& other) const noexcept {
    if (rank_ != other.rank_) return false;
    for (int i = 0; i < rank_; ++i) {
        if (dims_[static_cast<std::size_t>(i)] != other.dims_[static_cast<std::size_t>(i)]) return false;
    }
    return true;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '(';
    for (int i = 0; i < rank_; ++i) {
        if (i) os << ',';
        os << dims_[static_cast<std::size_t>(i)];
    }
    os << ')';
    return os.str();
}

void require_rank(const Shape& shape, int rank, const char* what) {
    if (shape.rank() != rank) {
        throw_shape(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " + shape.str());
    }
}

template <typename T>
Tensor<T>::Tensor(const Shape& shape, T fill) : shape_(shape), data_(static_cast<std::size_t>(shape.numel()), fill) {}

template <typename T>
Tensor<T>::Tensor(const Shape& shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (static_cast<Index>(data_.size()) != shape_.numel()) {
        throw_shape("data length " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
    }
}

template <typename T>
Extents3 Tensor<T>::extents() const {
    require_rank(shape_, 5, "extents");
    return {shape_[2], shape_[3], shape_[4]};
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(const Shape& shape) const {
    if (shape.numel() != shape_.numel()) {
        throw_shape("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(shape, data_);
}

template <typename T>
void Tensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
void Tensor<T>::add_(const Tensor& other) {
    if (other.shape_ != shape_) throw_shape("add_: " + shape_.str() + " vs " + other.shape_.str());
    const T* src = other.ptr();
    T* dst = ptr();
    const std::size_t n = data_.size();
    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

template <typename T>
bool Tensor<T>::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace lms
