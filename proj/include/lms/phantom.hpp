#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lms/io.hpp"
#include "lms/loss.hpp"

namespace lms {

struct Ellipsoid {
    std::int32_t label = 1;
    std::array<double, 3> center{};  // voxel coordinates (d, h, w)
    std::array<double, 3> radii{};   // voxels
};

struct ClassIntensity {
    double mean = 0.0;
    double sigma = 0.1;
};

struct PhantomSpec {
    Extents3 extents{32, 32, 32};
    Index classes = 2;
    Index channels = 1;
    Index primitives_per_class = 1;
    std::vector<ClassIntensity> intensity;  // one per class; defaults fill evenly spaced means
    double min_radius = 0.15;               // fractions of the extent
    double max_radius = 0.30;
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json() const;
    static PhantomSpec from_json(const std::string& text);
};

struct Phantom {
    Volume image;          // (C,D,H,W)
    LabelVolume labels;    // batch 1
    std::vector<Ellipsoid> primitives;
};

struct PhantomSet {
    std::vector<Phantom> samples;
    std::vector<std::string> warnings;  // primitives clipped by the volume boundary
};

/// Labels by last-writer-wins over primitives on background 0; the voxel center (d+0.5, ...) is tested.
LabelVolume rasterize(Extents3 extents, const std::vector<Ellipsoid>& primitives, std::vector<std::string>* warnings);

/// Deterministic in spec.seed. Every sample contains every class.
PhantomSet generate_phantoms(const PhantomSpec& spec, Index count);

}  // namespace lms
