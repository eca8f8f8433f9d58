#include "portrait/blink.hpp"

#include <algorithm>
#include <cmath>

#include "portrait/errors.hpp"

namespace portrait {

BlinkState make_blink_state(float au_intensity, float eye_openness, int frame_index) {
    if (!(au_intensity >= 0.0f && au_intensity <= 5.0f))
        throw DomainError("AU intensity " + std::to_string(au_intensity) + " outside [0,5]");
    if (!(eye_openness >= 0.0f && eye_openness <= 1.0f))
        throw DomainError("eye openness " + std::to_string(eye_openness) + " outside [0,1]");
    return BlinkState{au_intensity, eye_openness, frame_index};
}

EyeLandmarks extract_eye_landmarks(const LandmarkSet& lm) {
    EyeLandmarks out;
    out.frame_index = lm.frame_index;
    for (int i = 0; i < 6; ++i) {
        out.left[static_cast<std::size_t>(i)] = lm.points[static_cast<std::size_t>(36 + i)];
        out.right[static_cast<std::size_t>(i)] = lm.points[static_cast<std::size_t>(42 + i)];
    }
    return out;
}

namespace {
float dist3(const std::array<float, 3>& a, const std::array<float, 3>& b) {
    const float dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}
}  // namespace

float eye_aspect_ratio(const std::array<std::array<float, 3>, 6>& eye) {
    const float horizontal = dist3(eye[0], eye[3]);
    if (horizontal < 1e-9f) throw DomainError("degenerate eye: |p1-p4| below 1e-9");
    return (dist3(eye[1], eye[5]) + dist3(eye[2], eye[4])) / (2.0f * horizontal);
}

float ear_open_reference(std::vector<float> ears) {
    if (ears.empty()) throw DomainError("ear_open_reference on empty sample");
    std::sort(ears.begin(), ears.end());
    const std::size_t idx = std::min(ears.size() - 1,
                                     static_cast<std::size_t>(0.95 * static_cast<double>(ears.size())));
    return ears[idx];
}

float openness_from_ear(float ear, float ear_open) {
    if (!(ear_open > 0.0f)) throw DomainError("ear_open reference must be positive");
    return std::clamp(ear / ear_open, 0.0f, 1.0f);
}

std::vector<float> audio_summary(const AudioFeatureFrame& frame, int width) {
    std::vector<float> out(static_cast<std::size_t>(width), 0.0f);
    if (frame.features.empty()) return out;
    float mean = 0.0f, sq = 0.0f;
    for (float x : frame.features) {
        mean += x;
        sq += x * x;
    }
    mean /= static_cast<float>(frame.features.size());
    sq /= static_cast<float>(frame.features.size());
    if (width > 0) out[0] = mean;
    if (width > 1) out[1] = std::sqrt(sq);
    return out;
}

BlinkMapper::BlinkMapper(ParamStore& store, const std::string& prefix, const BlinkConfig& cfg,
                         std::mt19937& rng)
    : cfg_(cfg),
      mlp_(store, prefix, {cfg.history + cfg.audio_summary_width, cfg.hidden, cfg.embed_width},
           Activation::Identity, rng) {}

std::vector<float> BlinkMapper::forward(const ParamStore& store,
                                        const std::vector<BlinkState>& au_window,
                                        const AudioFeatureFrame& frame, Mlp::Cache& cache) const {
    if (au_window.empty()) throw DomainError("blink mapper window is empty");
    if (static_cast<int>(au_window.size()) != cfg_.history)
        throw ShapeError("blink mapper expects AU window of length " + std::to_string(cfg_.history));
    std::vector<float> in;
    in.reserve(static_cast<std::size_t>(cfg_.history + cfg_.audio_summary_width));
    for (const BlinkState& s : au_window) in.push_back(s.au_intensity / 5.0f);
    const auto summary = audio_summary(frame, cfg_.audio_summary_width);
    in.insert(in.end(), summary.begin(), summary.end());
    mlp_.forward(store, in.data(), static_cast<int>(in.size()), cache);
    return cache.post.back();
}

void BlinkMapper::backward(ParamStore& store, const Mlp::Cache& cache, const float* upstream) const {
    mlp_.backward(store, cache, upstream, cfg_.embed_width, nullptr);
}

EyePredictor::EyePredictor(ParamStore& store, const std::string& prefix, const BlinkConfig& cfg,
                           std::mt19937& rng)
    : cfg_(cfg),
      mlp_(store, prefix, {cfg.history * cfg.embed_width + cfg.history, cfg.hidden, 1},
           Activation::Sigmoid, rng) {}

float EyePredictor::predict(const ParamStore& store,
                            const std::vector<std::vector<float>>& embeddings,
                            const std::vector<float>& ears, Mlp::Cache& cache) const {
    if (static_cast<int>(embeddings.size()) != cfg_.history ||
        static_cast<int>(ears.size()) != cfg_.history)
        throw StateError("eye predictor needs a history of exactly " + std::to_string(cfg_.history) +
                         " frames");
    std::vector<float> in;
    in.reserve(static_cast<std::size_t>(cfg_.history * (cfg_.embed_width + 1)));
    for (const auto& e : embeddings) {
        if (static_cast<int>(e.size()) != cfg_.embed_width)
            throw ShapeError("blink embedding width mismatch in eye predictor history");
        in.insert(in.end(), e.begin(), e.end());
    }
    in.insert(in.end(), ears.begin(), ears.end());
    mlp_.forward(store, in.data(), static_cast<int>(in.size()), cache);
    return cache.post.back()[0];
}

void EyePredictor::backward(ParamStore& store, const Mlp::Cache& cache, float upstream,
                            std::vector<std::vector<float>>* embed_grads) const {
    std::vector<float> in_grad(static_cast<std::size_t>(mlp_.input_width()));
    mlp_.backward(store, cache, &upstream, 1, in_grad.data());
    if (embed_grads) {
        embed_grads->assign(static_cast<std::size_t>(cfg_.history),
                            std::vector<float>(static_cast<std::size_t>(cfg_.embed_width)));
        for (int k = 0; k < cfg_.history; ++k)
            for (int i = 0; i < cfg_.embed_width; ++i)
                (*embed_grads)[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] =
                    in_grad[static_cast<std::size_t>(k * cfg_.embed_width + i)];
    }
}

}  // namespace portrait
