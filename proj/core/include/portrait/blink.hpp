#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "portrait/mlp.hpp"
#include "portrait/motion.hpp"

namespace portrait {

struct BlinkState {
    float au_intensity = 0.0f;  // OpenFace AU45, 0..5
    float eye_openness = 1.0f;  // 0 closed .. 1 open
    int frame_index = 0;
};

// Validates ranges; throws DomainError outside [0,5] / [0,1].
BlinkState make_blink_state(float au_intensity, float eye_openness, int frame_index);

struct EyeLandmarks {
    std::array<std::array<float, 3>, 6> left{};
    std::array<std::array<float, 3>, 6> right{};
    int frame_index = 0;
};

// Standard 68-point annotation: left eye 36-41, right eye 42-47 (0-based).
EyeLandmarks extract_eye_landmarks(const LandmarkSet& lm);

// EAR = (|p2-p6| + |p3-p5|) / (2 |p1-p4|) in the conventional 1..6 eye
// ordering. Throws DomainError when the horizontal span degenerates.
float eye_aspect_ratio(const std::array<std::array<float, 3>, 6>& eye);

// 95th percentile of a per-dataset EAR sample; used to normalize openness.
float ear_open_reference(std::vector<float> ears);

float openness_from_ear(float ear, float ear_open);

struct BlinkConfig {
    int embed_width = 4;          // D_b
    int history = 4;              // K frames of context
    int hidden = 32;
    int audio_summary_width = 2;  // mean + rms of the frame's features
};

std::vector<float> audio_summary(const AudioFeatureFrame& frame, int width);

// Fig-2-style mapping network: [AU window / 5 || audio summary] -> D_b
// embedding.
class BlinkMapper {
public:
    BlinkMapper() = default;
    BlinkMapper(ParamStore& store, const std::string& prefix, const BlinkConfig& cfg,
                std::mt19937& rng);

    const BlinkConfig& config() const { return cfg_; }

    std::vector<float> forward(const ParamStore& store, const std::vector<BlinkState>& au_window,
                               const AudioFeatureFrame& frame, Mlp::Cache& cache) const;
    void backward(ParamStore& store, const Mlp::Cache& cache, const float* upstream) const;

    void zero_all(ParamStore& store) { mlp_.zero_all(store); }

private:
    BlinkConfig cfg_;
    Mlp mlp_;
};

// Eyes-movement prediction: K blink embeddings plus K EAR values ->
// sigmoid-bounded next-frame openness.
class EyePredictor {
public:
    EyePredictor() = default;
    EyePredictor(ParamStore& store, const std::string& prefix, const BlinkConfig& cfg,
                 std::mt19937& rng);

    float predict(const ParamStore& store, const std::vector<std::vector<float>>& embeddings,
                  const std::vector<float>& ears, Mlp::Cache& cache) const;
    // upstream is dL/d(openness); emits grads into the embedding history
    // when embed_grads is non-null.
    void backward(ParamStore& store, const Mlp::Cache& cache, float upstream,
                  std::vector<std::vector<float>>* embed_grads) const;

private:
    BlinkConfig cfg_;
    Mlp mlp_;
};

}  // namespace portrait
