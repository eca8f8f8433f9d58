#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "portrait/image.hpp"
#include "portrait/motion.hpp"

namespace portrait {

// Peak signal-to-noise ratio in dB over RGB floats with peak 1.0. Returns
// +inf for identical images. Optional rect (x, y, w, h) restricts the
// comparison region.
float psnr(const Image& a, const Image& b, const std::array<int, 4>* rect = nullptr);

// Landmark distance: mean Euclidean distance over all 68 points and all
// frames, in whatever units the landmarks are expressed in.
float lmd(const std::vector<LandmarkSet>& pred, const std::vector<LandmarkSet>& target);

struct EvalReport {
    std::vector<float> per_frame_psnr;
    std::vector<float> per_frame_lmd;
    float psnr_mean = 0.0f;
    float psnr_mouth = 0.0f;
    float lmd_value = 0.0f;
    float perceptual_mean = 0.0f;
    int frame_count = 0;
    std::string checkpoint;
    // not computable without external models; serialized as null
    std::optional<float> sync_confidence;
    std::optional<float> fid;
};

// JSON report plus a one-row CSV next to it (same stem, .csv extension).
void write_report(const EvalReport& report, const std::string& json_path);

}  // namespace portrait
