#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "lms/error.hpp"

namespace lms {

using Index = std::int64_t;

/// Extents of a dense row-major array of rank 1..5 (last axis fastest).
class Shape {
   public:
    static constexpr int kMaxRank = 5;

    Shape() = default;
    Shape(std::initializer_list<Index> dims);
    explicit Shape(std::span<const Index> dims);

    int rank() const noexcept { return rank_; }
    Index operator[](int axis) const { return dims_[static_cast<std::size_t>(axis)]; }
    Index numel() const noexcept;
    std::span<const Index> dims() const noexcept { return {dims_.data(), static_cast<std::size_t>(rank_)}; }

    bool operator==(const Shape& other) const noexcept;
    bool operator!=(const Shape& other) const noexcept { return !(*this == other); }

    std::string str() const;

   private:
    std::array<Index, kMaxRank> dims_{};
    int rank_ = 0;
};

/// Spatial extents of a volume (depth, height, width).
struct Extents3 {
    Index d = 0;
    Index h = 0;
    Index w = 0;

    Index voxels() const noexcept { return d * h * w; }
    bool operator==(const Extents3&) const = default;
    Extents3 halved() const { return {d / 2, h / 2, w / 2}; }
    Extents3 doubled() const { return {d * 2, h * 2, w * 2}; }
};

/// Dense tensor with value semantics. Rank-5 tensors are laid out (B, C, D, H, W).
template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(const Shape& shape, T fill = T(0));
    Tensor(const Shape& shape, std::vector<T> data);

    static Tensor volume(Index b, Index c, Extents3 e, T fill = T(0)) { return Tensor(Shape{b, c, e.d, e.h, e.w}, fill); }

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return shape_.rank(); }
    Index dim(int axis) const { return shape_[axis]; }
    Index numel() const noexcept { return static_cast<Index>(data_.size()); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* ptr() noexcept { return data_.data(); }
    const T* ptr() const noexcept { return data_.data(); }
    const std::vector<T>& vec() const noexcept { return data_; }

    T& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
    T operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

    // Rank-5 element access.
    T& at(Index b, Index c, Index d, Index h, Index w) { return data_[static_cast<std::size_t>(offset(b, c, d, h, w))]; }
    T at(Index b, Index c, Index d, Index h, Index w) const {
        return data_[static_cast<std::size_t>(offset(b, c, d, h, w))];
    }

    Extents3 extents() const;
    Index spatial() const { return extents().voxels(); }

    Tensor reshaped(const Shape& shape) const;
    void fill(T value);
    void add_(const Tensor& other);

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (Index i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
        return out;
    }

    bool all_finite() const;

   private:
    Index offset(Index b, Index c, Index d, Index h, Index w) const {
        return (((b * shape_[1] + c) * shape_[2] + d) * shape_[3] + h) * shape_[4] + w;
    }

    Shape shape_;
    std::vector<T> data_;
};

void require_rank(const Shape& shape, int rank, const char* what);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace lms
