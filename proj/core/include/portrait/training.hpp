#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "portrait/blink.hpp"
#include "portrait/config.hpp"
#include "portrait/dataset.hpp"
#include "portrait/field.hpp"
#include "portrait/motion.hpp"
#include "portrait/perceptual.hpp"
#include "portrait/render.hpp"
#include "portrait/tensor.hpp"

namespace portrait {

enum class MouthSource { Landmarks, Manifest };

struct TrainConfig {
    int coarse_iters = 1500;
    int fine_iters = 300;
    int motion_iters = 800;
    int rays_per_batch = 256;
    int patch_size = 16;
    int n_samples = 24;       // quadrature samples per ray during training
    float lambda = 0.001f;    // perceptual weight in the fine loss
    float lr = 1e-3f;
    float motion_lr = 1e-3f;
    int checkpoint_interval = 500;
    int holdout_stride = 5;   // every Nth frame held out of field training
    int mouth_dilate = 8;     // px around the landmark bbox
    MouthSource mouth_source = MouthSource::Landmarks;
    std::uint32_t seed = 0;
    int smoothing_half_width = 2;

    // Reads train.* keys; throws ConfigError on invalid values.
    static TrainConfig from_config(const Config& cfg);
    void validate() const;
};

struct ModelConfig {
    FieldConfig field;
    VaeConfig vae;
    DltConfig dlt;
    BlinkConfig blink;
    bool dlt_uses_latents = true;

    static ModelConfig from_config(const Config& cfg, int audio_width);
};

// Every model in the system sharing one parameter store.
struct Models {
    ModelConfig cfg;
    ParamStore store;
    RadianceField field;
    Vae vae;
    Dlt dlt;
    BlinkMapper blink_mapper;
    EyePredictor eye_predictor;
};

Models build_models(const ModelConfig& cfg, std::uint32_t seed);

// --- losses -------------------------------------------------------------

// Sum of squared RGB errors over the sampled pixel set.
float coarse_loss(const std::vector<std::array<float, 3>>& pred,
                  const std::vector<std::array<float, 3>>& gt);
std::vector<std::array<float, 3>> coarse_loss_grad(const std::vector<std::array<float, 3>>& pred,
                                                   const std::vector<std::array<float, 3>>& gt);

// Uniform random patch_size^2 square inside region (x, y, w, h); returns
// the top-left corner. Throws ConfigError when the region is too small.
std::array<int, 2> sample_patch(int image_w, int image_h, const std::array<int, 4>& region,
                                int patch_size, std::mt19937& rng);

// Patch MSE (sum convention) + lambda * perceptual distance.
float fine_loss(const Image& pred, const Image& gt, const PerceptualMetric& metric, float lambda);
float fine_loss_grad(const Image& pred, const Image& gt, const PerceptualMetric& metric,
                     float lambda, Image& grad_pred);

// Pixel bbox of the mouth landmarks (48-67) projected through the frame's
// camera, dilated and clipped to the image.
std::array<int, 4> mouth_region(const FrameRecord& frame, int dilate);

// --- checkpoints --------------------------------------------------------

struct CheckpointMeta {
    std::string stage;   // "init", "motion", "coarse" or "fine"
    std::string parent;  // checkpoint this stage resumed from, "" for none
};

void save_checkpoint(const ParamStore& store, const std::string& path, const CheckpointMeta& meta);
CheckpointMeta load_checkpoint(ParamStore& store, const std::string& path);
CheckpointMeta read_checkpoint_meta(const std::string& path);

// --- per-frame conditioning (teacher-forced) ----------------------------

// Trailing AU window of the mapper's history length, clamped at the start.
std::vector<BlinkState> au_window(const DatasetManifest& data, int frame, int history);

// Deterministic (eps = 0) VAE latent of the frame's smoothed features.
AudioLatent audio_latent_for_frame(const Models& models,
                                   const std::vector<AudioFeatureFrame>& smoothed, int frame);

struct ConditionOptions {
    bool zero_audio = false;
    bool zero_blink = false;
};

// Fused condition vector for one frame from ground-truth landmarks, the
// audio latent and the blink embedding.
std::vector<float> frame_condition(const Models& models, const DatasetManifest& data,
                                   const std::vector<AudioFeatureFrame>& smoothed, int frame,
                                   const LandmarkSet& landmarks, ConditionEncoder::Cache& cache,
                                   const ConditionOptions& opts = {});

// FieldFn closure over a fixed condition, for render_image.
FieldFn make_field_fn(const Models& models, const std::vector<float>& cond);

bool is_holdout(const TrainConfig& cfg, int frame);

// --- training entry points ----------------------------------------------

// Joint DLT + VAE + blink optimization; writes motion_loss.csv and
// motion.ckpt under out_dir.
void train_motion(const TrainConfig& cfg, const DatasetManifest& data, Models& models,
                  const std::string& out_dir);

// stage is "coarse" or "fine". Fine requires a prior coarse checkpoint
// (coarse_ckpt path recorded as the parent). Writes <stage>_loss.csv and
// <stage>.ckpt under out_dir.
void train_stage(const std::string& stage, const TrainConfig& cfg, const DatasetManifest& data,
                 Models& models, const std::string& out_dir, const std::string& coarse_ckpt = "");

// DLT-predicted landmark sequence from audio features and AU states.
std::vector<LandmarkSet> predict_landmark_sequence(const Models& models,
                                                   const std::vector<AudioFeatureFrame>& audio,
                                                   const std::vector<BlinkState>& blink_states,
                                                   int smoothing_half_width);

}  // namespace portrait
