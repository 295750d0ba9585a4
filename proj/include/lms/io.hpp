#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lms/params.hpp"
#include "lms/tensor.hpp"

namespace lms {

/// Single-sample volume (C, D, H, W) of f32 values as stored in an RV3D file.
struct Volume {
    Index channels = 0;
    Extents3 extents;
    std::vector<float> data;

    Index numel() const noexcept { return channels * extents.voxels(); }
    /// View as a (1,C,D,H,W) tensor.
    template <typename T>
    Tensor<T> tensor() const;
    /// Takes sample `b` of a rank-5 tensor.
    template <typename T>
    static Volume from_tensor(const Tensor<T>& t, Index b = 0);

    bool operator==(const Volume&) const = default;
};

std::vector<std::uint8_t> encode_rv3d(const Volume& v);
Volume decode_rv3d(const std::vector<std::uint8_t>& bytes);
void write_rv3d(const std::string& path, const Volume& v);
Volume read_rv3d(const std::string& path);

/// Named f32 tensors in an LMSW container.
struct WeightEntry {
    std::string name;
    std::vector<Index> extents;
    std::vector<float> values;

    bool operator==(const WeightEntry&) const = default;
};

std::vector<std::uint8_t> encode_lmsw(const std::vector<WeightEntry>& entries);
std::vector<WeightEntry> decode_lmsw(const std::vector<std::uint8_t>& bytes);

/// Store contents rounded to f32, in registration order.
std::vector<WeightEntry> export_weights(const ParamStore& store);
/// Every store parameter must appear exactly once with a matching shape.
void import_weights(ParamStore& store, const std::vector<WeightEntry>& entries);

void save_weights(const std::string& path, const ParamStore& store);
void load_weights(const std::string& path, ParamStore& store);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace lms
