#pragma once

#include <array>
#include <random>
#include <vector>

#include "portrait/hashgrid.hpp"
#include "portrait/mlp.hpp"
#include "portrait/motion.hpp"

namespace portrait {

// Real spherical harmonics up to degree 2 (9 values) for a unit direction.
std::array<float, 9> sh_basis(const std::array<float, 3>& d);

struct FieldConfig {
    HashGridConfig grid;
    int cond_width = 32;   // landmark code width == audio residual width
    int blink_width = 4;
    int hidden = 64;
    bool exp_density = false;  // softplus by default
    float table_lr_mult = 10.0f;
};

struct ConditionVector {
    std::vector<float> landmark_code;    // cond_width
    std::vector<float> audio_residual;   // cond_width
    std::vector<float> blink_embedding;  // blink_width
    std::vector<float> fused;            // (landmark + audio) || blink
};

struct FieldOutput {
    std::array<float, 3> color{};  // each in [0,1]
    float sigma = 0.0f;            // >= 0
};

// Landmark/audio/blink conditioning. The audio code enters as an additive
// residual on the landmark code; the blink embedding is concatenated.
class ConditionEncoder {
public:
    struct Cache {
        Mlp::Cache lm, audio;
        bool valid = false;
    };

    ConditionEncoder() = default;
    ConditionEncoder(ParamStore& store, const FieldConfig& cfg, int audio_latent_width,
                     std::mt19937& rng);

    ConditionVector encode(const ParamStore& store, const LandmarkSet& lm,
                           const AudioLatent& audio_latent, const std::vector<float>& blink,
                           Cache& cache) const;

    // upstream over the fused vector (cond_width + blink_width). Writes the
    // gradient w.r.t. the audio latent (mu) and blink embedding when the out
    // pointers are non-null.
    void backward(ParamStore& store, const Cache& cache, const float* upstream,
                  std::vector<float>* audio_latent_grad, std::vector<float>* blink_grad) const;

    int fused_width() const { return cfg_.cond_width + cfg_.blink_width; }
    void zero_audio_branch(ParamStore& store) { audio_mlp_.zero_all(store); }

private:
    FieldConfig cfg_;
    Mlp lm_mlp_;     // 204 -> hidden -> cond_width
    Mlp audio_mlp_;  // latent -> hidden -> cond_width
};

// The conditioned implicit function: triplane features + condition ->
// density, last trunk hidden + SH(d) -> color. Density never sees the view
// direction.
class RadianceField {
public:
    struct Cache {
        std::vector<float> features;   // triplane output
        std::vector<float> trunk_in;
        Mlp::Cache trunk, sigma_head, color;
        std::array<float, 9> sh{};
        float sigma_pre = 0.0f;
        bool valid = false;
    };

    RadianceField() = default;
    RadianceField(ParamStore& store, const FieldConfig& cfg, std::mt19937& rng, int audio_latent_width);

    const FieldConfig& config() const { return cfg_; }
    const TriplaneEncoder& encoder() const { return enc_; }
    ConditionEncoder& condition_encoder() { return cond_; }
    const ConditionEncoder& condition_encoder() const { return cond_; }

    FieldOutput eval(const ParamStore& store, const std::array<float, 3>& x,
                     const std::array<float, 3>& d, const std::vector<float>& cond_fused,
                     Cache& cache) const;

    // Accumulates parameter and hash-table gradients; adds the gradient
    // w.r.t. the fused condition into cond_grad (length fused width).
    void backward(ParamStore& store, const Cache& cache, const std::array<float, 3>& x,
                  const std::array<float, 3>& d_color_grad, float d_sigma_grad,
                  float* cond_grad) const;

private:
    FieldConfig cfg_;
    TriplaneEncoder enc_;
    ConditionEncoder cond_;
    Mlp trunk_;       // features + fused cond -> hidden -> hidden (ReLU out)
    Mlp sigma_head_;  // hidden -> 1 (identity; activation applied here)
    Mlp color_mlp_;   // hidden + 9 -> hidden -> hidden -> 3 (sigmoid)
};

}  // namespace portrait
