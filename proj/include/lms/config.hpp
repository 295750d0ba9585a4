#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "lms/tensor.hpp"

namespace lms {

/// Where the final 2x upsampling happens.
enum class HeadMode {
    kHeadRestores,   // decoder stages 1-3 upsample, stage 4 keeps D/2, head's stride-2 transposed conv restores D
    kStagesRestore,  // all four decoder stages upsample, head is stride 1
};

std::string to_string(HeadMode mode);
HeadMode head_mode_from_string(const std::string& s);

struct Ablations {
    bool lspm = true;     // false: F0 feeds the encoder directly and T == 1
    bool anchors = true;  // false: no FiLM modulation and no spatial position bias
    bool router = true;   // false: every decoder stage uses a single resolution-matched skip
    bool ghost = true;    // false: every ghost conv becomes a dense conv3d

    bool operator==(const Ablations&) const = default;
};

struct ModelConfig {
    Index in_channels = 4;
    Index num_classes = 4;
    Index anchors = 8;
    Index stem_channels = 8;
    std::array<Index, 4> encoder_channels{8, 16, 32, 64};
    std::array<Index, 3> anchor_widths{8, 8, 8};
    Index anchor_hidden = 128;
    Index lspm_gate_width = 16;
    Index router_width = 64;
    Index ghost_ratio = 2;
    Index norm_groups = 4;
    HeadMode head_mode = HeadMode::kHeadRestores;
    Ablations ablations;

    /// Throws ConfigError on an inconsistent record.
    void validate() const;

    /// Decoder widths, mirrored encoder schedule.
    std::array<Index, 4> decoder_channels() const {
        return {encoder_channels[3], encoder_channels[2], encoder_channels[1], encoder_channels[0]};
    }

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
    /// Stable 64-bit FNV-1a digest of the canonical JSON form, hex encoded.
    std::string fingerprint() const;

    bool operator==(const ModelConfig&) const = default;
};

/// BraTS-style setup: 4 modalities, 4 classes, K=8.
ModelConfig brats_config();
/// Desk-scale toy setup: 1 channel, 2 classes, K=8.
ModelConfig toy_config();

/// Throws ConfigError unless every spatial extent is a positive multiple of 16.
void check_input_extents(Extents3 e);

}  // namespace lms
