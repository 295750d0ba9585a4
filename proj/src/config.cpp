#include "lms/config.hpp"

#include <cstdio>
#include <json.hpp>

namespace lms {

using nlohmann::json;

std::string to_string(HeadMode mode) {
    return mode == HeadMode::kHeadRestores ? "head-restores" : "stages-restore";
}

HeadMode head_mode_from_string(const std::string& s) {
    if (s == "head-restores") return HeadMode::kHeadRestores;
    if (s == "stages-restore") return HeadMode::kStagesRestore;
    throw_config("unknown head mode '" + s + "' (expected head-restores or stages-restore)");
}

void ModelConfig::validate() const {
    auto positive = [](Index v, const char* what) {
        if (v < 1) throw_config(std::string(what) + " must be >= 1, got " + std::to_string(v));
    };
    positive(in_channels, "in_channels");
    positive(anchors, "anchors");
    positive(anchor_hidden, "anchor_hidden");
    positive(router_width, "router_width");
    if (num_classes < 2) throw_config("num_classes must be >= 2");
    if (ghost_ratio != 2) throw_config("only ghost_ratio 2 is supported, got " + std::to_string(ghost_ratio));
    if (norm_groups < 1) throw_config("norm_groups must be >= 1");
    auto grouped = [&](Index c, const char* what) {
        positive(c, what);
        if (c % norm_groups) {
            throw_config(std::string(what) + " (" + std::to_string(c) + ") must be divisible by norm_groups");
        }
        if (c % 2) throw_config(std::string(what) + " must be even for ghost convolutions");
    };
    grouped(stem_channels, "stem_channels");
    grouped(lspm_gate_width, "lspm_gate_width");
    for (Index c : encoder_channels) grouped(c, "encoder channel width");
    for (Index c : anchor_widths) grouped(c, "anchor detector width");
    if (encoder_channels[0] != stem_channels) throw_config("encoder stage 1 width must equal stem_channels");
}

std::string ModelConfig::to_json() const {
    json j;
    j["in_channels"] = in_channels;
    j["num_classes"] = num_classes;
    j["anchors"] = anchors;
    j["stem_channels"] = stem_channels;
    j["encoder_channels"] = encoder_channels;
    j["anchor_widths"] = anchor_widths;
    j["anchor_hidden"] = anchor_hidden;
    j["lspm_gate_width"] = lspm_gate_width;
    j["router_width"] = router_width;
    j["ghost_ratio"] = ghost_ratio;
    j["norm_groups"] = norm_groups;
    j["head_mode"] = to_string(head_mode);
    j["ablations"] = {{"lspm", ablations.lspm},
                      {"anchors", ablations.anchors},
                      {"router", ablations.router},
                      {"ghost", ablations.ghost}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw_config(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw_config("config must be a JSON object");
    ModelConfig c;
    try {
        c.in_channels = j.value("in_channels", c.in_channels);
        c.num_classes = j.value("num_classes", c.num_classes);
        c.anchors = j.value("anchors", c.anchors);
        c.stem_channels = j.value("stem_channels", c.stem_channels);
        c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
        c.anchor_widths = j.value("anchor_widths", c.anchor_widths);
        c.anchor_hidden = j.value("anchor_hidden", c.anchor_hidden);
        c.lspm_gate_width = j.value("lspm_gate_width", c.lspm_gate_width);
        c.router_width = j.value("router_width", c.router_width);
        c.ghost_ratio = j.value("ghost_ratio", c.ghost_ratio);
        c.norm_groups = j.value("norm_groups", c.norm_groups);
        c.head_mode = head_mode_from_string(j.value("head_mode", to_string(c.head_mode)));
        if (j.contains("ablations")) {
            const json& a = j.at("ablations");
            c.ablations.lspm = a.value("lspm", true);
            c.ablations.anchors = a.value("anchors", true);
            c.ablations.router = a.value("router", true);
            c.ablations.ghost = a.value("ghost", true);
        }
    } catch (const json::exception& e) {
        throw_config(std::string("bad config field: ") + e.what());
    }
    c.validate();
    return c;
}

std::string ModelConfig::fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : to_json()) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ModelConfig brats_config() { return ModelConfig{}; }

ModelConfig toy_config() {
    ModelConfig c;
    c.in_channels = 1;
    c.num_classes = 2;
    return c;
}

void check_input_extents(Extents3 e) {
    if (e.d < 16 || e.h < 16 || e.w < 16 || e.d % 16 || e.h % 16 || e.w % 16) {
        throw_config("input extents (" + std::to_string(e.d) + "," + std::to_string(e.h) + "," + std::to_string(e.w) +
                     ") must be positive multiples of 16");
    }
}

}  // namespace lms
