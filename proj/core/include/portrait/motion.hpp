#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "portrait/mlp.hpp"
#include "portrait/tensor.hpp"

namespace portrait {

inline constexpr int kLandmarkCount = 68;

struct AudioFeatureFrame {
    std::vector<float> features;
    int frame_index = 0;
};

struct LandmarkSet {
    std::array<std::array<float, 3>, kLandmarkCount> points{};
    int frame_index = 0;
};

// Triangular moving average over [i-half_width, i+half_width]; windows are
// truncated at the edges and the weights renormalized.
std::vector<AudioFeatureFrame> temporal_filter(const std::vector<AudioFeatureFrame>& frames,
                                               int half_width);

// Mean L1 distance between landmark sequences, normalized by 68 * frames.
float positional_loss(const std::vector<LandmarkSet>& pred, const std::vector<LandmarkSet>& target);

// Gradient of positional_loss w.r.t. pred, flattened 68*3 per frame.
std::vector<std::array<float, kLandmarkCount * 3>> positional_loss_grad(
    const std::vector<LandmarkSet>& pred, const std::vector<LandmarkSet>& target);

struct AudioLatent {
    std::vector<float> mu;
    std::vector<float> logvar;
    std::vector<float> z;
};

struct VaeConfig {
    int feature_width = 29;
    int latent_width = 16;
    int hidden = 64;
    float beta = 1e-4f;  // KL weight
};

// Gaussian-latent autoencoder over smoothed per-frame audio features.
class Vae {
public:
    Vae() = default;
    Vae(ParamStore& store, const std::string& prefix, const VaeConfig& cfg, std::mt19937& rng);

    const VaeConfig& config() const { return cfg_; }

    // eps has latent width; z = mu + exp(logvar / 2) * eps.
    AudioLatent encode(const ParamStore& store, const std::vector<float>& features,
                       const std::vector<float>& eps) const;
    std::vector<float> decode(const ParamStore& store, const std::vector<float>& z) const;

    // One reconstruction + beta*KL evaluation with gradient accumulation.
    // Returns {total, recon_mse, kl}. extra_mu_grad, when non-null, is an
    // additional upstream on mu (latent width) from downstream consumers.
    std::array<float, 3> loss_and_grad(ParamStore& store, const std::vector<float>& features,
                                       const std::vector<float>& eps,
                                       const float* extra_mu_grad = nullptr);

    static float kl_divergence(const std::vector<float>& mu, const std::vector<float>& logvar);

private:
    VaeConfig cfg_;
    mutable Mlp encoder_;  // feature_width -> hidden -> 2 * latent_width
    mutable Mlp decoder_;  // latent_width -> hidden -> feature_width
};

struct DltConfig {
    int window = 9;        // odd
    int input_width = 16;  // latent (default) or raw feature width
    int embed_width = 64;
    int head_hidden = 128;
    int blink_width = 4;
};

// Window of per-frame codes -> embed -> single-head self-attention ->
// mean-pool -> concat blink code -> MLP head -> 68x3 landmarks for the
// window's center frame.
class Dlt {
public:
    struct Cache {
        std::vector<Mlp::Cache> embed;           // per frame
        std::vector<std::vector<float>> e, q, k, v, y;  // per frame, embed width
        std::vector<std::vector<float>> attn;    // row-softmax weights
        std::vector<float> pooled;
        Mlp::Cache head;
        bool valid = false;
    };

    Dlt() = default;
    Dlt(ParamStore& store, const std::string& prefix, const DltConfig& cfg, std::mt19937& rng);

    const DltConfig& config() const { return cfg_; }

    LandmarkSet predict(const ParamStore& store, const std::vector<std::vector<float>>& window,
                        const std::vector<float>& blink_code, Cache& cache) const;

    // upstream is dL/d(flattened 68x3 output). Writes per-frame input grads
    // and the blink-code grad when the out pointers are non-null.
    void backward(ParamStore& store, const Cache& cache, const float* upstream,
                  std::vector<std::vector<float>>* input_grads, std::vector<float>* blink_grad) const;

    // Bias of the final head layer, used for dataset-mean initialization.
    void set_output_bias(ParamStore& store, const std::vector<float>& bias) const {
        head_.set_output_bias(store, bias);
    }

private:
    DltConfig cfg_;
    Mlp embed_;  // input_width -> embed (linear)
    Mlp head_;   // embed + blink -> head_hidden -> 204
    int wq_ = -1, wk_ = -1, wv_ = -1;
};

// Mean landmark set of a sequence, flattened to 204 values.
std::vector<float> mean_landmarks_flat(const std::vector<LandmarkSet>& sets);

}  // namespace portrait
