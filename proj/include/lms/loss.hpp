#pragma once

#include <cstdint>
#include <vector>

#include "lms/tape.hpp"

namespace lms {

/// Integer class ids laid out (B, D, H, W).
struct LabelVolume {
    Index batch = 0;
    Extents3 extents;
    std::vector<std::int32_t> data;

    LabelVolume() = default;
    LabelVolume(Index b, Extents3 e, std::int32_t fill = 0)
        : batch(b), extents(e), data(static_cast<std::size_t>(b * e.voxels()), fill) {}

    Index voxels() const noexcept { return extents.voxels(); }
    Index size() const noexcept { return static_cast<Index>(data.size()); }
    std::int32_t& operator[](Index i) { return data[static_cast<std::size_t>(i)]; }
    std::int32_t operator[](Index i) const { return data[static_cast<std::size_t>(i)]; }

    /// Throws unless every id lies in [0, classes).
    void validate(Index classes) const;
    /// Concatenates along the batch axis; extents must agree.
    static LabelVolume stack(const std::vector<const LabelVolume*>& parts);
};

/// Inverse-frequency weights over all voxels of the batch: |Omega| / (N * count_c),
/// absent classes counted as one voxel.
std::vector<double> class_weights(const LabelVolume& labels, Index classes);

/// Voxels with a 26-neighbor of a different class.
std::vector<std::uint8_t> raw_boundary(const LabelVolume& labels);
/// Raw boundary dilated by `radius` under the Chebyshev metric; zero outside the volume.
std::vector<std::uint8_t> boundary_mask(const LabelVolume& labels, Index radius = 3);

inline constexpr double kDiceEps = 1e-5;
inline constexpr double kBoundaryCoefficient = 0.5;

// Scalar (shape {1}) loss nodes on logits (B,N,D,H,W); `weights` has N entries.
template <typename T>
Var<T> dice_loss(Var<T> logits, const LabelVolume& labels, const std::vector<double>& weights);
template <typename T>
Var<T> ce_loss(Var<T> logits, const LabelVolume& labels, const std::vector<double>& weights);
template <typename T>
Var<T> boundary_loss(Var<T> logits, const LabelVolume& labels, const std::vector<std::uint8_t>& mask,
                     const std::vector<double>& weights);

template <typename T>
struct LossTerms {
    Var<T> total;
    Var<T> dice;
    Var<T> ce;
    Var<T> boundary;
};

/// dice + ce + 0.5 * boundary with weights and mask derived from `labels`.
template <typename T>
LossTerms<T> total_loss(Var<T> logits, const LabelVolume& labels);

}  // namespace lms
