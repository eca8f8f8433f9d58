#include "portrait/motion.hpp"

#include <cmath>

#include "portrait/errors.hpp"

namespace portrait {

std::vector<AudioFeatureFrame> temporal_filter(const std::vector<AudioFeatureFrame>& frames,
                                               int half_width) {
    if (frames.empty()) throw DomainError("temporal_filter on empty sequence");
    if (half_width < 0) throw DomainError("temporal_filter half_width must be >= 0");
    const int n = static_cast<int>(frames.size());
    const std::size_t width = frames.front().features.size();
    for (const auto& f : frames) {
        if (f.features.size() != width) throw ShapeError("inconsistent audio feature widths");
    }
    std::vector<AudioFeatureFrame> out(frames.size());
    for (int i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)].frame_index = frames[static_cast<std::size_t>(i)].frame_index;
        auto& acc = out[static_cast<std::size_t>(i)].features;
        acc.assign(width, 0.0f);
        float wsum = 0.0f;
        for (int k = -half_width; k <= half_width; ++k) {
            const int j = i + k;
            if (j < 0 || j >= n) continue;  // edge truncation
            const float w = static_cast<float>(half_width + 1 - std::abs(k));
            wsum += w;
            const auto& src = frames[static_cast<std::size_t>(j)].features;
            for (std::size_t c = 0; c < width; ++c) acc[c] += w * src[c];
        }
        for (std::size_t c = 0; c < width; ++c) acc[c] /= wsum;
    }
    return out;
}

float positional_loss(const std::vector<LandmarkSet>& pred, const std::vector<LandmarkSet>& target) {
    if (pred.size() != target.size()) throw ShapeError("positional_loss sequence length mismatch");
    if (pred.empty()) throw ShapeError("positional_loss on empty sequences");
    double acc = 0.0;
    for (std::size_t f = 0; f < pred.size(); ++f) {
        for (int m = 0; m < kLandmarkCount; ++m) {
            for (int c = 0; c < 3; ++c)
                acc += std::abs(pred[f].points[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)] -
                                target[f].points[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)]);
        }
    }
    return static_cast<float>(acc / (static_cast<double>(kLandmarkCount) * static_cast<double>(pred.size())));
}

std::vector<std::array<float, kLandmarkCount * 3>> positional_loss_grad(
    const std::vector<LandmarkSet>& pred, const std::vector<LandmarkSet>& target) {
    if (pred.size() != target.size()) throw ShapeError("positional_loss sequence length mismatch");
    const float scale = 1.0f / (static_cast<float>(kLandmarkCount) * static_cast<float>(pred.size()));
    std::vector<std::array<float, kLandmarkCount * 3>> grads(pred.size());
    for (std::size_t f = 0; f < pred.size(); ++f) {
        for (int m = 0; m < kLandmarkCount; ++m) {
            for (int c = 0; c < 3; ++c) {
                const float d = pred[f].points[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)] -
                                target[f].points[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)];
                grads[f][static_cast<std::size_t>(m * 3 + c)] =
                    d > 0.0f ? scale : (d < 0.0f ? -scale : 0.0f);
            }
        }
    }
    return grads;
}

Vae::Vae(ParamStore& store, const std::string& prefix, const VaeConfig& cfg, std::mt19937& rng)
    : cfg_(cfg),
      encoder_(store, prefix + ".enc", {cfg.feature_width, cfg.hidden, 2 * cfg.latent_width},
               Activation::Identity, rng),
      decoder_(store, prefix + ".dec", {cfg.latent_width, cfg.hidden, cfg.feature_width},
               Activation::Identity, rng) {}

AudioLatent Vae::encode(const ParamStore& store, const std::vector<float>& features,
                        const std::vector<float>& eps) const {
    if (static_cast<int>(features.size()) != cfg_.feature_width)
        throw ShapeError("vae encode feature width mismatch");
    if (static_cast<int>(eps.size()) != cfg_.latent_width)
        throw ShapeError("vae encode eps width mismatch");
    Mlp::Cache cache;
    encoder_.forward(store, features.data(), cfg_.feature_width, cache);
    const auto& out = cache.post.back();
    AudioLatent lat;
    lat.mu.assign(out.begin(), out.begin() + cfg_.latent_width);
    lat.logvar.assign(out.begin() + cfg_.latent_width, out.end());
    lat.z.resize(static_cast<std::size_t>(cfg_.latent_width));
    for (int i = 0; i < cfg_.latent_width; ++i) {
        lat.z[static_cast<std::size_t>(i)] =
            lat.mu[static_cast<std::size_t>(i)] +
            std::exp(0.5f * lat.logvar[static_cast<std::size_t>(i)]) * eps[static_cast<std::size_t>(i)];
    }
    return lat;
}

std::vector<float> Vae::decode(const ParamStore& store, const std::vector<float>& z) const {
    if (static_cast<int>(z.size()) != cfg_.latent_width)
        throw ShapeError("vae decode latent width mismatch");
    Mlp::Cache cache;
    decoder_.forward(store, z.data(), cfg_.latent_width, cache);
    return cache.post.back();
}

float Vae::kl_divergence(const std::vector<float>& mu, const std::vector<float>& logvar) {
    float kl = 0.0f;
    for (std::size_t i = 0; i < mu.size(); ++i)
        kl += -0.5f * (1.0f + logvar[i] - mu[i] * mu[i] - std::exp(logvar[i]));
    return kl;
}

std::array<float, 3> Vae::loss_and_grad(ParamStore& store, const std::vector<float>& features,
                                        const std::vector<float>& eps, const float* extra_mu_grad) {
    Mlp::Cache enc_cache;
    encoder_.forward(store, features.data(), static_cast<int>(features.size()), enc_cache);
    const auto& enc_out = enc_cache.post.back();
    const int Dz = cfg_.latent_width;
    std::vector<float> mu(enc_out.begin(), enc_out.begin() + Dz);
    std::vector<float> logvar(enc_out.begin() + Dz, enc_out.end());
    std::vector<float> z(static_cast<std::size_t>(Dz));
    for (int i = 0; i < Dz; ++i)
        z[static_cast<std::size_t>(i)] = mu[static_cast<std::size_t>(i)] +
                                         std::exp(0.5f * logvar[static_cast<std::size_t>(i)]) *
                                             eps[static_cast<std::size_t>(i)];

    Mlp::Cache dec_cache;
    decoder_.forward(store, z.data(), Dz, dec_cache);
    const auto& recon = dec_cache.post.back();

    const int D = cfg_.feature_width;
    float mse = 0.0f;
    std::vector<float> d_recon(static_cast<std::size_t>(D));
    for (int i = 0; i < D; ++i) {
        const float d = recon[static_cast<std::size_t>(i)] - features[static_cast<std::size_t>(i)];
        mse += d * d / static_cast<float>(D);
        d_recon[static_cast<std::size_t>(i)] = 2.0f * d / static_cast<float>(D);
    }
    const float kl = kl_divergence(mu, logvar);

    std::vector<float> dz(static_cast<std::size_t>(Dz));
    decoder_.backward(store, dec_cache, d_recon.data(), D, dz.data());

    std::vector<float> d_enc(static_cast<std::size_t>(2 * Dz));
    for (int i = 0; i < Dz; ++i) {
        const float s = std::exp(0.5f * logvar[static_cast<std::size_t>(i)]);
        float dmu = dz[static_cast<std::size_t>(i)] + cfg_.beta * mu[static_cast<std::size_t>(i)];
        if (extra_mu_grad) dmu += extra_mu_grad[i];
        const float dlv = dz[static_cast<std::size_t>(i)] * 0.5f * s * eps[static_cast<std::size_t>(i)] +
                          cfg_.beta * 0.5f * (std::exp(logvar[static_cast<std::size_t>(i)]) - 1.0f);
        d_enc[static_cast<std::size_t>(i)] = dmu;
        d_enc[static_cast<std::size_t>(i + Dz)] = dlv;
    }
    encoder_.backward(store, enc_cache, d_enc.data(), 2 * Dz, nullptr);

    return {mse + cfg_.beta * kl, mse, kl};
}

Dlt::Dlt(ParamStore& store, const std::string& prefix, const DltConfig& cfg, std::mt19937& rng)
    : cfg_(cfg),
      embed_(store, prefix + ".embed", {cfg.input_width, cfg.embed_width}, Activation::Identity, rng),
      head_(store, prefix + ".head",
            {cfg.embed_width + cfg.blink_width, cfg.head_hidden, 3 * kLandmarkCount},
            Activation::Identity, rng) {
    if (cfg.window <= 0 || cfg.window % 2 == 0) throw DomainError("dlt window must be odd and positive");
    const int E = cfg.embed_width;
    const float bound = glorot_bound(E, E);
    auto make = [&](const char* n) {
        const std::string pname = prefix + std::string(".attn.") + n;
        if (store.has(pname)) return store.handle(pname);
        return store.create_uniform(pname, {E, E}, -bound, bound, rng);
    };
    wq_ = make("wq");
    wk_ = make("wk");
    wv_ = make("wv");
}

namespace {

void matvec(const Param& W, const std::vector<float>& x, std::vector<float>& out) {
    const int n_out = W.shape[0];
    const int n_in = W.shape[1];
    out.resize(static_cast<std::size_t>(n_out));
    for (int o = 0; o < n_out; ++o) {
        const float* row = W.value.data() + static_cast<std::size_t>(o) * n_in;
        float s = 0.0f;
        for (int i = 0; i < n_in; ++i) s += row[i] * x[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(o)] = s;
    }
}

}  // namespace

LandmarkSet Dlt::predict(const ParamStore& store, const std::vector<std::vector<float>>& window,
                         const std::vector<float>& blink_code, Cache& cache) const {
    const int W = cfg_.window;
    if (static_cast<int>(window.size()) != W)
        throw ShapeError("dlt window length " + std::to_string(window.size()) + " != " +
                         std::to_string(W));
    if (static_cast<int>(blink_code.size()) != cfg_.blink_width)
        throw ShapeError("dlt blink code width mismatch");
    const int E = cfg_.embed_width;
    const float scale = 1.0f / std::sqrt(static_cast<float>(E));

    cache.embed.resize(static_cast<std::size_t>(W));
    cache.e.resize(static_cast<std::size_t>(W));
    cache.q.resize(static_cast<std::size_t>(W));
    cache.k.resize(static_cast<std::size_t>(W));
    cache.v.resize(static_cast<std::size_t>(W));
    cache.y.resize(static_cast<std::size_t>(W));
    cache.attn.resize(static_cast<std::size_t>(W));

    const Param& Wq = store.at(wq_);
    const Param& Wk = store.at(wk_);
    const Param& Wv = store.at(wv_);

    for (int r = 0; r < W; ++r) {
        const auto& x = window[static_cast<std::size_t>(r)];
        embed_.forward(store, x.data(), static_cast<int>(x.size()), cache.embed[static_cast<std::size_t>(r)]);
        cache.e[static_cast<std::size_t>(r)] = cache.embed[static_cast<std::size_t>(r)].post.back();
        matvec(Wq, cache.e[static_cast<std::size_t>(r)], cache.q[static_cast<std::size_t>(r)]);
        matvec(Wk, cache.e[static_cast<std::size_t>(r)], cache.k[static_cast<std::size_t>(r)]);
        matvec(Wv, cache.e[static_cast<std::size_t>(r)], cache.v[static_cast<std::size_t>(r)]);
    }

    for (int r = 0; r < W; ++r) {
        auto& row = cache.attn[static_cast<std::size_t>(r)];
        row.resize(static_cast<std::size_t>(W));
        float maxs = -1e30f;
        for (int c = 0; c < W; ++c) {
            float s = 0.0f;
            for (int i = 0; i < E; ++i)
                s += cache.q[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)] *
                     cache.k[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)];
            row[static_cast<std::size_t>(c)] = s * scale;
            maxs = std::max(maxs, row[static_cast<std::size_t>(c)]);
        }
        float denom = 0.0f;
        for (int c = 0; c < W; ++c) {
            row[static_cast<std::size_t>(c)] = std::exp(row[static_cast<std::size_t>(c)] - maxs);
            denom += row[static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < W; ++c) row[static_cast<std::size_t>(c)] /= denom;

        auto& y = cache.y[static_cast<std::size_t>(r)];
        y.assign(static_cast<std::size_t>(E), 0.0f);
        for (int c = 0; c < W; ++c) {
            const float a = row[static_cast<std::size_t>(c)];
            for (int i = 0; i < E; ++i)
                y[static_cast<std::size_t>(i)] += a * cache.v[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)];
        }
    }

    cache.pooled.assign(static_cast<std::size_t>(E), 0.0f);
    for (int r = 0; r < W; ++r)
        for (int i = 0; i < E; ++i)
            cache.pooled[static_cast<std::size_t>(i)] +=
                cache.y[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)] / static_cast<float>(W);

    std::vector<float> head_in(cache.pooled);
    head_in.insert(head_in.end(), blink_code.begin(), blink_code.end());
    head_.forward(store, head_in.data(), static_cast<int>(head_in.size()), cache.head);
    cache.valid = true;

    const auto& out = cache.head.post.back();
    LandmarkSet lm;
    for (int m = 0; m < kLandmarkCount; ++m)
        for (int c = 0; c < 3; ++c)
            lm.points[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)] =
                out[static_cast<std::size_t>(m * 3 + c)];
    return lm;
}

void Dlt::backward(ParamStore& store, const Cache& cache, const float* upstream,
                   std::vector<std::vector<float>>* input_grads, std::vector<float>* blink_grad) const {
    if (!cache.valid) throw StateError("dlt backward without prior predict");
    const int W = cfg_.window;
    const int E = cfg_.embed_width;
    const float scale = 1.0f / std::sqrt(static_cast<float>(E));

    std::vector<float> head_in_grad(static_cast<std::size_t>(E + cfg_.blink_width));
    head_.backward(store, cache.head, upstream, 3 * kLandmarkCount, head_in_grad.data());
    if (blink_grad) {
        blink_grad->assign(head_in_grad.begin() + E, head_in_grad.end());
    }

    // mean pool
    std::vector<std::vector<float>> dy(static_cast<std::size_t>(W),
                                       std::vector<float>(static_cast<std::size_t>(E)));
    for (int r = 0; r < W; ++r)
        for (int i = 0; i < E; ++i)
            dy[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)] =
                head_in_grad[static_cast<std::size_t>(i)] / static_cast<float>(W);

    std::vector<std::vector<float>> dq(static_cast<std::size_t>(W), std::vector<float>(static_cast<std::size_t>(E), 0.0f));
    std::vector<std::vector<float>> dk(static_cast<std::size_t>(W), std::vector<float>(static_cast<std::size_t>(E), 0.0f));
    std::vector<std::vector<float>> dv(static_cast<std::size_t>(W), std::vector<float>(static_cast<std::size_t>(E), 0.0f));

    for (int r = 0; r < W; ++r) {
        const auto& a = cache.attn[static_cast<std::size_t>(r)];
        std::vector<float> da(static_cast<std::size_t>(W), 0.0f);
        for (int c = 0; c < W; ++c) {
            float s = 0.0f;
            for (int i = 0; i < E; ++i)
                s += dy[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)] *
                     cache.v[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)];
            da[static_cast<std::size_t>(c)] = s;
            for (int i = 0; i < E; ++i)
                dv[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] +=
                    a[static_cast<std::size_t>(c)] * dy[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)];
        }
        // softmax jacobian
        float dot = 0.0f;
        for (int c = 0; c < W; ++c) dot += da[static_cast<std::size_t>(c)] * a[static_cast<std::size_t>(c)];
        for (int c = 0; c < W; ++c) {
            const float ds = a[static_cast<std::size_t>(c)] * (da[static_cast<std::size_t>(c)] - dot) * scale;
            for (int i = 0; i < E; ++i) {
                dq[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)] +=
                    ds * cache.k[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)];
                dk[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] +=
                    ds * cache.q[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)];
            }
        }
    }

    Param& Wq = store.at(wq_);
    Param& Wk = store.at(wk_);
    Param& Wv = store.at(wv_);
    if (input_grads) input_grads->assign(static_cast<std::size_t>(W), {});

    for (int r = 0; r < W; ++r) {
        std::vector<float> de(static_cast<std::size_t>(E), 0.0f);
        auto accumulate = [&](Param& Wm, const std::vector<float>& d) {
            for (int o = 0; o < E; ++o) {
                const float dd = d[static_cast<std::size_t>(o)];
                const float* row = Wm.value.data() + static_cast<std::size_t>(o) * E;
                float* grow = Wm.grad.data() + static_cast<std::size_t>(o) * E;
                for (int i = 0; i < E; ++i) {
                    grow[i] += dd * cache.e[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)];
                    de[static_cast<std::size_t>(i)] += dd * row[i];
                }
            }
        };
        accumulate(Wq, dq[static_cast<std::size_t>(r)]);
        accumulate(Wk, dk[static_cast<std::size_t>(r)]);
        accumulate(Wv, dv[static_cast<std::size_t>(r)]);

        std::vector<float> din(static_cast<std::size_t>(cfg_.input_width));
        embed_.backward(store, cache.embed[static_cast<std::size_t>(r)], de.data(), E, din.data());
        if (input_grads) (*input_grads)[static_cast<std::size_t>(r)] = std::move(din);
    }
}

std::vector<float> mean_landmarks_flat(const std::vector<LandmarkSet>& sets) {
    std::vector<float> mean(static_cast<std::size_t>(3 * kLandmarkCount), 0.0f);
    if (sets.empty()) return mean;
    for (const auto& s : sets)
        for (int m = 0; m < kLandmarkCount; ++m)
            for (int c = 0; c < 3; ++c)
                mean[static_cast<std::size_t>(m * 3 + c)] +=
                    s.points[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)] /
                    static_cast<float>(sets.size());
    return mean;
}

}  // namespace portrait
