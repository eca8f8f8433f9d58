#include "portrait/field.hpp"

#include <cmath>

#include "portrait/errors.hpp"

namespace portrait {

std::array<float, 9> sh_basis(const std::array<float, 3>& d) {
    const float x = d[0], y = d[1], z = d[2];
    return {
        0.28209479177387814f,
        0.4886025119029199f * y,
        0.4886025119029199f * z,
        0.4886025119029199f * x,
        1.0925484305920792f * x * y,
        1.0925484305920792f * y * z,
        0.31539156525252005f * (3.0f * z * z - 1.0f),
        1.0925484305920792f * x * z,
        0.5462742152960396f * (x * x - y * y),
    };
}

ConditionEncoder::ConditionEncoder(ParamStore& store, const FieldConfig& cfg,
                                   int audio_latent_width, std::mt19937& rng)
    : cfg_(cfg),
      lm_mlp_(store, "cond.lm", {3 * kLandmarkCount, cfg.hidden, cfg.cond_width},
              Activation::Identity, rng),
      audio_mlp_(store, "cond.audio", {audio_latent_width, cfg.hidden, cfg.cond_width},
                 Activation::Identity, rng) {}

ConditionVector ConditionEncoder::encode(const ParamStore& store, const LandmarkSet& lm,
                                         const AudioLatent& audio_latent,
                                         const std::vector<float>& blink, Cache& cache) const {
    if (static_cast<int>(blink.size()) != cfg_.blink_width)
        throw ShapeError("condition blink width mismatch");
    std::vector<float> flat(static_cast<std::size_t>(3 * kLandmarkCount));
    for (int m = 0; m < kLandmarkCount; ++m)
        for (int c = 0; c < 3; ++c)
            flat[static_cast<std::size_t>(m * 3 + c)] =
                lm.points[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)];

    lm_mlp_.forward(store, flat.data(), static_cast<int>(flat.size()), cache.lm);
    audio_mlp_.forward(store, audio_latent.mu.data(), static_cast<int>(audio_latent.mu.size()),
                       cache.audio);

    ConditionVector out;
    out.landmark_code = cache.lm.post.back();
    out.audio_residual = cache.audio.post.back();
    out.blink_embedding = blink;
    out.fused.resize(static_cast<std::size_t>(fused_width()));
    for (int i = 0; i < cfg_.cond_width; ++i)
        out.fused[static_cast<std::size_t>(i)] = out.landmark_code[static_cast<std::size_t>(i)] +
                                                 out.audio_residual[static_cast<std::size_t>(i)];
    for (int i = 0; i < cfg_.blink_width; ++i)
        out.fused[static_cast<std::size_t>(cfg_.cond_width + i)] = blink[static_cast<std::size_t>(i)];
    cache.valid = true;
    return out;
}

void ConditionEncoder::backward(ParamStore& store, const Cache& cache, const float* upstream,
                                std::vector<float>* audio_latent_grad,
                                std::vector<float>* blink_grad) const {
    if (!cache.valid) throw StateError("condition encoder backward without prior encode");
    lm_mlp_.backward(store, cache.lm, upstream, cfg_.cond_width, nullptr);
    std::vector<float> audio_in_grad(static_cast<std::size_t>(audio_mlp_.input_width()));
    audio_mlp_.backward(store, cache.audio, upstream, cfg_.cond_width, audio_in_grad.data());
    if (audio_latent_grad) *audio_latent_grad = std::move(audio_in_grad);
    if (blink_grad)
        blink_grad->assign(upstream + cfg_.cond_width, upstream + cfg_.cond_width + cfg_.blink_width);
}

RadianceField::RadianceField(ParamStore& store, const FieldConfig& cfg, std::mt19937& rng,
                             int audio_latent_width)
    : cfg_(cfg),
      enc_(store, "", cfg.grid, rng, cfg.table_lr_mult),
      cond_(store, cfg, audio_latent_width, rng) {
    const int in_width = enc_.output_width() + cfg.cond_width + cfg.blink_width;
    trunk_ = Mlp(store, "field.sigma.trunk", {in_width, cfg.hidden, cfg.hidden}, Activation::Relu, rng);
    sigma_head_ = Mlp(store, "field.sigma.head", {cfg.hidden, 1}, Activation::Identity, rng);
    color_mlp_ = Mlp(store, "field.color", {cfg.hidden + 9, cfg.hidden, cfg.hidden, 3},
                     Activation::Sigmoid, rng);
}

FieldOutput RadianceField::eval(const ParamStore& store, const std::array<float, 3>& x,
                                const std::array<float, 3>& d, const std::vector<float>& cond_fused,
                                Cache& cache) const {
    const float norm = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    if (std::abs(norm - 1.0f) > 2e-6f) throw DomainError("view direction is not unit length");
    if (static_cast<int>(cond_fused.size()) != cfg_.cond_width + cfg_.blink_width)
        throw ShapeError("fused condition width mismatch");

    const int feat_w = enc_.output_width();
    cache.features.resize(static_cast<std::size_t>(feat_w));
    enc_.encode(store, x, cache.features.data());

    cache.trunk_in.resize(static_cast<std::size_t>(feat_w) + cond_fused.size());
    std::copy(cache.features.begin(), cache.features.end(), cache.trunk_in.begin());
    std::copy(cond_fused.begin(), cond_fused.end(), cache.trunk_in.begin() + feat_w);

    trunk_.forward(store, cache.trunk_in.data(), static_cast<int>(cache.trunk_in.size()), cache.trunk);
    const auto& h = cache.trunk.post.back();

    sigma_head_.forward(store, h.data(), cfg_.hidden, cache.sigma_head);
    cache.sigma_pre = cache.sigma_head.post.back()[0];

    cache.sh = sh_basis(d);
    std::vector<float> color_in(h);
    color_in.insert(color_in.end(), cache.sh.begin(), cache.sh.end());
    color_mlp_.forward(store, color_in.data(), static_cast<int>(color_in.size()), cache.color);
    cache.valid = true;

    FieldOutput out;
    const auto& c = cache.color.post.back();
    out.color = {c[0], c[1], c[2]};
    out.sigma = cfg_.exp_density
                    ? std::exp(cache.sigma_pre)
                    : (cache.sigma_pre > 20.0f ? cache.sigma_pre : std::log1p(std::exp(cache.sigma_pre)));
    return out;
}

void RadianceField::backward(ParamStore& store, const Cache& cache, const std::array<float, 3>& x,
                             const std::array<float, 3>& d_color_grad, float d_sigma_grad,
                             float* cond_grad) const {
    if (!cache.valid) throw StateError("field backward without prior eval");
    const int H = cfg_.hidden;
    const int feat_w = enc_.output_width();

    // color branch
    std::vector<float> color_in_grad(static_cast<std::size_t>(H + 9));
    color_mlp_.backward(store, cache.color, d_color_grad.data(), 3, color_in_grad.data());

    // density activation
    float dpre;
    if (cfg_.exp_density) {
        dpre = d_sigma_grad * std::exp(cache.sigma_pre);
    } else {
        dpre = d_sigma_grad / (1.0f + std::exp(-cache.sigma_pre));
    }
    std::vector<float> h_grad(static_cast<std::size_t>(H));
    sigma_head_.backward(store, cache.sigma_head, &dpre, 1, h_grad.data());
    for (int i = 0; i < H; ++i) h_grad[static_cast<std::size_t>(i)] += color_in_grad[static_cast<std::size_t>(i)];

    std::vector<float> trunk_in_grad(cache.trunk_in.size());
    trunk_.backward(store, cache.trunk, h_grad.data(), H, trunk_in_grad.data());

    enc_.encode_backward(store, x, trunk_in_grad.data(), feat_w);
    if (cond_grad) {
        const int cw = cfg_.cond_width + cfg_.blink_width;
        for (int i = 0; i < cw; ++i) cond_grad[i] += trunk_in_grad[static_cast<std::size_t>(feat_w + i)];
    }
}

}  // namespace portrait
