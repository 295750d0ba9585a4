#include "lms/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <json.hpp>

#include "lms/config.hpp"

namespace lms {

void PhantomSpec::validate() const {
    check_input_extents(extents);
    if (classes < 2) throw_config("phantom: at least two classes required");
    if (channels < 1) throw_config("phantom: channels must be positive");
    if (primitives_per_class < 1) throw_config("phantom: primitives_per_class must be positive");
    if (!intensity.empty() && static_cast<Index>(intensity.size()) != classes) {
        throw_config("phantom: one intensity entry per class required");
    }
    if (!(min_radius > 0 && min_radius <= max_radius && max_radius < 0.5)) {
        throw_config("phantom: radii fractions must satisfy 0 < min <= max < 0.5");
    }
}

std::string PhantomSpec::to_json() const {
    nlohmann::json in = nlohmann::json::array();
    for (const ClassIntensity& c : intensity) in.push_back({{"mean", c.mean}, {"sigma", c.sigma}});
    nlohmann::json j{{"extents", {extents.d, extents.h, extents.w}},
                     {"classes", classes},
                     {"channels", channels},
                     {"primitives_per_class", primitives_per_class},
                     {"intensity", in},
                     {"min_radius", min_radius},
                     {"max_radius", max_radius},
                     {"seed", seed}};
    return j.dump(2);
}

PhantomSpec PhantomSpec::from_json(const std::string& text) {
    PhantomSpec s;
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        if (!j.is_object()) throw_config("phantom spec: expected a JSON object");
        for (const auto& [key, value] : j.items()) {
            if (key == "extents") {
                const auto e = value.get<std::vector<Index>>();
                if (e.size() != 3) throw_config("phantom spec: extents needs three entries");
                s.extents = {e[0], e[1], e[2]};
            } else if (key == "classes") {
                s.classes = value.get<Index>();
            } else if (key == "channels") {
                s.channels = value.get<Index>();
            } else if (key == "primitives_per_class") {
                s.primitives_per_class = value.get<Index>();
            } else if (key == "intensity") {
                s.intensity.clear();
                for (const auto& c : value) s.intensity.push_back({c.at("mean").get<double>(), c.at("sigma").get<double>()});
            } else if (key == "min_radius") {
                s.min_radius = value.get<double>();
            } else if (key == "max_radius") {
                s.max_radius = value.get<double>();
            } else if (key == "seed") {
                s.seed = value.get<std::uint64_t>();
            } else {
                throw_config("phantom spec: unknown field '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw_config(std::string("phantom spec: ") + e.what());
    }
    s.validate();
    return s;
}

LabelVolume rasterize(Extents3 e, const std::vector<Ellipsoid>& primitives, std::vector<std::string>* warnings) {
    LabelVolume labels(1, e, 0);
    const std::array<Index, 3> ext{e.d, e.h, e.w};
    for (std::size_t i = 0; i < primitives.size(); ++i) {
        const Ellipsoid& p = primitives[i];
        bool clipped = false;
        for (int a = 0; a < 3; ++a) {
            if (!(p.radii[a] > 0)) throw_argument("phantom: ellipsoid radii must be positive");
            if (p.center[a] - p.radii[a] < 0 || p.center[a] + p.radii[a] > static_cast<double>(ext[a])) clipped = true;
        }
        if (clipped && warnings) {
            std::ostringstream os;
            os << "primitive " << i << " (label " << p.label << ") extends outside the volume and was clipped";
            warnings->push_back(os.str());
        }
        for (Index d = 0; d < e.d; ++d) {
            const double zd = (static_cast<double>(d) + 0.5 - p.center[0]) / p.radii[0];
            for (Index h = 0; h < e.h; ++h) {
                const double zh = (static_cast<double>(h) + 0.5 - p.center[1]) / p.radii[1];
                for (Index w = 0; w < e.w; ++w) {
                    const double zw = (static_cast<double>(w) + 0.5 - p.center[2]) / p.radii[2];
                    if (zd * zd + zh * zh + zw * zw <= 1.0) labels[(d * e.h + h) * e.w + w] = p.label;
                }
            }
        }
    }
    return labels;
}

PhantomSet generate_phantoms(const PhantomSpec& spec, Index count) {
    spec.validate();
    if (count < 0) throw_argument("phantom: negative sample count");
    std::vector<ClassIntensity> intensity = spec.intensity;
    if (intensity.empty()) {
        for (Index c = 0; c < spec.classes; ++c) {
            intensity.push_back({static_cast<double>(c) / static_cast<double>(spec.classes - 1), 0.1});
        }
    }
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::array<double, 3> ext{static_cast<double>(spec.extents.d), static_cast<double>(spec.extents.h),
                                    static_cast<double>(spec.extents.w)};

    PhantomSet out;
    constexpr int kMaxAttempts = 64;
    for (Index n = 0; n < count; ++n) {
        Phantom ph;
        bool complete = false;
        for (int attempt = 0; attempt < kMaxAttempts && !complete; ++attempt) {
            ph.primitives.clear();
            for (Index c = 1; c < spec.classes; ++c) {
                for (Index k = 0; k < spec.primitives_per_class; ++k) {
                    Ellipsoid el;
                    el.label = static_cast<std::int32_t>(c);
                    for (int a = 0; a < 3; ++a) {
                        const double r = (spec.min_radius + (spec.max_radius - spec.min_radius) * unit(rng)) * ext[a];
                        el.radii[a] = r;
                        el.center[a] = r + (ext[a] - 2 * r) * unit(rng);  // keeps the primitive inside
                    }
                    ph.primitives.push_back(el);
                }
            }
            ph.labels = rasterize(spec.extents, ph.primitives, &out.warnings);
            std::vector<bool> present(static_cast<std::size_t>(spec.classes), false);
            for (std::int32_t v : ph.labels.data) present[static_cast<std::size_t>(v)] = true;
            complete = std::all_of(present.begin(), present.end(), [](bool b) { return b; });
        }
        if (!complete) throw Error(ErrorKind::kRuntime, "phantom: could not place every class");

        ph.image.channels = spec.channels;
        ph.image.extents = spec.extents;
        const Index V = spec.extents.voxels();
        ph.image.data.resize(static_cast<std::size_t>(spec.channels * V));
        for (Index c = 0; c < spec.channels; ++c) {
            for (Index v = 0; v < V; ++v) {
                const ClassIntensity& ci = intensity[static_cast<std::size_t>(ph.labels[v])];
                ph.image.data[static_cast<std::size_t>(c * V + v)] = static_cast<float>(ci.mean + ci.sigma * noise(rng));
            }
        }
        out.samples.push_back(std::move(ph));
    }
    return out;
}

}  // namespace lms
