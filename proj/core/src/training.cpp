#include "portrait/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "portrait/errors.hpp"

namespace fs = std::filesystem;

namespace portrait {

TrainConfig TrainConfig::from_config(const Config& cfg) {
    TrainConfig t;
    t.coarse_iters = cfg.get_int("train.coarse.iters", t.coarse_iters);
    t.fine_iters = cfg.get_int("train.fine.iters", t.fine_iters);
    t.motion_iters = cfg.get_int("train.motion.iters", t.motion_iters);
    t.rays_per_batch = cfg.get_int("train.rays_per_batch", t.rays_per_batch);
    t.patch_size = cfg.get_int("train.patch_size", t.patch_size);
    t.n_samples = cfg.get_int("train.n_samples", t.n_samples);
    t.lambda = cfg.get_float("train.fine.lambda", t.lambda);
    t.lr = cfg.get_float("train.lr", t.lr);
    t.motion_lr = cfg.get_float("train.motion.lr", t.motion_lr);
    t.checkpoint_interval = cfg.get_int("train.checkpoint_interval", t.checkpoint_interval);
    t.holdout_stride = cfg.get_int("train.holdout_stride", t.holdout_stride);
    t.mouth_dilate = cfg.get_int("train.mouth_dilate", t.mouth_dilate);
    t.smoothing_half_width = cfg.get_int("train.smoothing_half_width", t.smoothing_half_width);
    t.seed = static_cast<std::uint32_t>(cfg.get_int("train.seed", static_cast<int>(t.seed)));
    const std::string src = cfg.get_string("train.mouth_source", "landmarks");
    if (src == "landmarks") t.mouth_source = MouthSource::Landmarks;
    else if (src == "manifest") t.mouth_source = MouthSource::Manifest;
    else throw ConfigError("train.mouth_source must be 'landmarks' or 'manifest', got '" + src + "'");
    t.validate();
    return t;
}

void TrainConfig::validate() const {
    if (lambda < 0.0f) throw ConfigError("train.fine.lambda must be >= 0");
    if (coarse_iters < 0 || fine_iters < 0 || motion_iters < 0)
        throw ConfigError("iteration counts must be >= 0");
    if (rays_per_batch <= 0) throw ConfigError("train.rays_per_batch must be positive");
    if (patch_size <= 0) throw ConfigError("train.patch_size must be positive");
    if (n_samples < 2) throw ConfigError("train.n_samples must be >= 2");
    if (!(lr > 0.0f) || !(motion_lr > 0.0f)) throw ConfigError("learning rates must be positive");
    if (checkpoint_interval <= 0) throw ConfigError("train.checkpoint_interval must be positive");
    if (holdout_stride < 2) throw ConfigError("train.holdout_stride must be >= 2");
}

ModelConfig ModelConfig::from_config(const Config& cfg, int audio_width) {
    ModelConfig m;
    m.field.grid.level_count = cfg.get_int("grid.levels", m.field.grid.level_count);
    m.field.grid.features_per_entry = cfg.get_int("grid.features", m.field.grid.features_per_entry);
    m.field.grid.table_size_log2 = cfg.get_int("grid.table_log2", m.field.grid.table_size_log2);
    m.field.grid.base_resolution = cfg.get_int("grid.n_min", m.field.grid.base_resolution);
    m.field.grid.per_level_scale = cfg.get_float("grid.growth", m.field.grid.per_level_scale);
    m.field.cond_width = cfg.get_int("field.cond_width", m.field.cond_width);
    m.field.hidden = cfg.get_int("field.hidden", m.field.hidden);
    m.field.exp_density = cfg.get_bool("field.exp_density", m.field.exp_density);
    m.field.table_lr_mult = cfg.get_float("field.table_lr_mult", m.field.table_lr_mult);

    m.vae.feature_width = audio_width;
    m.vae.latent_width = cfg.get_int("vae.latent", m.vae.latent_width);
    m.vae.hidden = cfg.get_int("vae.hidden", m.vae.hidden);
    m.vae.beta = cfg.get_float("vae.beta", m.vae.beta);

    m.dlt.window = cfg.get_int("dlt.window", m.dlt.window);
    m.dlt.embed_width = cfg.get_int("dlt.embed", m.dlt.embed_width);
    m.dlt.head_hidden = cfg.get_int("dlt.head_hidden", m.dlt.head_hidden);

    m.blink.history = cfg.get_int("blink.history", m.blink.history);
    m.blink.hidden = cfg.get_int("blink.hidden", m.blink.hidden);
    m.blink.embed_width = cfg.get_int("blink.embed", m.blink.embed_width);

    m.dlt_uses_latents = cfg.get_bool("motion.use_latents", m.dlt_uses_latents);
    m.dlt.input_width = m.dlt_uses_latents ? m.vae.latent_width : audio_width;
    m.dlt.blink_width = m.blink.embed_width;
    m.field.blink_width = m.blink.embed_width;

    if (m.dlt.window <= 0 || m.dlt.window % 2 == 0)
        throw ConfigError("dlt.window must be odd and positive");
    return m;
}

Models build_models(const ModelConfig& cfg, std::uint32_t seed) {
    Models m;
    m.cfg = cfg;
    std::mt19937 rng(seed);
    m.field = RadianceField(m.store, cfg.field, rng, cfg.vae.latent_width);
    m.vae = Vae(m.store, "vae", cfg.vae, rng);
    m.dlt = Dlt(m.store, "dlt", cfg.dlt, rng);
    m.blink_mapper = BlinkMapper(m.store, "blink.mapper", cfg.blink, rng);
    m.eye_predictor = EyePredictor(m.store, "blink.eye", cfg.blink, rng);
    return m;
}

// --- losses -------------------------------------------------------------

float coarse_loss(const std::vector<std::array<float, 3>>& pred,
                  const std::vector<std::array<float, 3>>& gt) {
    if (pred.size() != gt.size()) throw ShapeError("coarse_loss: pixel list length mismatch");
    float acc = 0.0f;
    for (std::size_t i = 0; i < pred.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            const float d = pred[i][static_cast<std::size_t>(c)] - gt[i][static_cast<std::size_t>(c)];
            acc += d * d;
        }
    return acc;
}

std::vector<std::array<float, 3>> coarse_loss_grad(const std::vector<std::array<float, 3>>& pred,
                                                   const std::vector<std::array<float, 3>>& gt) {
    if (pred.size() != gt.size()) throw ShapeError("coarse_loss_grad: pixel list length mismatch");
    std::vector<std::array<float, 3>> g(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        for (int c = 0; c < 3; ++c)
            g[i][static_cast<std::size_t>(c)] =
                2.0f * (pred[i][static_cast<std::size_t>(c)] - gt[i][static_cast<std::size_t>(c)]);
    return g;
}

std::array<int, 2> sample_patch(int image_w, int image_h, const std::array<int, 4>& region,
                                int patch_size, std::mt19937& rng) {
    const int rx = std::max(0, region[0]);
    const int ry = std::max(0, region[1]);
    const int rx1 = std::min(image_w, region[0] + region[2]);
    const int ry1 = std::min(image_h, region[1] + region[3]);
    const int rw = rx1 - rx;
    const int rh = ry1 - ry;
    if (rw < patch_size || rh < patch_size)
        throw ConfigError("mouth region " + std::to_string(rw) + "x" + std::to_string(rh) +
                          " smaller than patch_size " + std::to_string(patch_size));
    std::uniform_int_distribution<int> dx(0, rw - patch_size);
    std::uniform_int_distribution<int> dy(0, rh - patch_size);
    return {rx + dx(rng), ry + dy(rng)};
}

float fine_loss(const Image& pred, const Image& gt, const PerceptualMetric& metric, float lambda) {
    if (pred.width != gt.width || pred.height != gt.height)
        throw ShapeError("fine_loss: patch shape mismatch");
    float mse = 0.0f;
    for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
        const float d = pred.pixels[i] - gt.pixels[i];
        mse += d * d;
    }
    return mse + lambda * metric.distance(pred, gt);
}

float fine_loss_grad(const Image& pred, const Image& gt, const PerceptualMetric& metric,
                     float lambda, Image& grad_pred) {
    if (pred.width != gt.width || pred.height != gt.height)
        throw ShapeError("fine_loss_grad: patch shape mismatch");
    grad_pred = Image(pred.width, pred.height);
    float mse = 0.0f;
    for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
        const float d = pred.pixels[i] - gt.pixels[i];
        mse += d * d;
        grad_pred.pixels[i] = 2.0f * d;
    }
    Image perc_grad(pred.width, pred.height);
    const float perc = metric.distance_with_grad(pred, gt, perc_grad);
    for (std::size_t i = 0; i < grad_pred.pixels.size(); ++i)
        grad_pred.pixels[i] += lambda * perc_grad.pixels[i];
    return mse + lambda * perc;
}

std::array<int, 4> mouth_region(const FrameRecord& frame, int dilate) {
    float x0 = 1e30f, y0 = 1e30f, x1 = -1e30f, y1 = -1e30f;
    for (int k = 48; k < 68; ++k) {
        const auto px = project_point(frame.camera, frame.landmarks.points[static_cast<std::size_t>(k)]);
        x0 = std::min(x0, px[0]);
        x1 = std::max(x1, px[0]);
        y0 = std::min(y0, px[1]);
        y1 = std::max(y1, px[1]);
    }
    int ix0 = std::max(0, static_cast<int>(std::floor(x0)) - dilate);
    int iy0 = std::max(0, static_cast<int>(std::floor(y0)) - dilate);
    int ix1 = std::min(frame.camera.width, static_cast<int>(std::ceil(x1)) + dilate + 1);
    int iy1 = std::min(frame.camera.height, static_cast<int>(std::ceil(y1)) + dilate + 1);
    if (ix0 >= ix1 || iy0 >= iy1) throw ConfigError("mouth landmark bbox projects outside the image");
    return {ix0, iy0, ix1 - ix0, iy1 - iy0};
}

// --- checkpoints --------------------------------------------------------

namespace {
std::string meta_path(const std::string& path) { return path + ".meta.json"; }
}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path, const CheckpointMeta& meta) {
    store.save(path);
    nlohmann::json j = {{"stage", meta.stage}, {"parent", meta.parent}};
    std::ofstream out(meta_path(path));
    if (!out) throw IoError(meta_path(path) + ": cannot open for writing");
    out << j.dump(2) << "\n";
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
    std::ifstream in(meta_path(path));
    if (!in) return {"init", ""};
    nlohmann::json j;
    try {
        in >> j;
        return {j.at("stage").get<std::string>(), j.value("parent", "")};
    } catch (const std::exception& e) {
        throw IoError(meta_path(path) + ": malformed checkpoint metadata: " + e.what());
    }
}

CheckpointMeta load_checkpoint(ParamStore& store, const std::string& path) {
    store.load(path);
    return read_checkpoint_meta(path);
}

// --- conditioning -------------------------------------------------------

std::vector<BlinkState> au_window(const DatasetManifest& data, int frame, int history) {
    std::vector<BlinkState> w;
    w.reserve(static_cast<std::size_t>(history));
    for (int i = history - 1; i >= 0; --i) {
        const int f = std::max(0, frame - i);
        w.push_back(data.frames[static_cast<std::size_t>(f)].blink);
    }
    return w;
}

AudioLatent audio_latent_for_frame(const Models& models,
                                   const std::vector<AudioFeatureFrame>& smoothed, int frame) {
    if (frame < 0 || frame >= static_cast<int>(smoothed.size()))
        throw DomainError("audio latent frame index out of range");
    const std::vector<float> eps(static_cast<std::size_t>(models.cfg.vae.latent_width), 0.0f);
    return models.vae.encode(models.store, smoothed[static_cast<std::size_t>(frame)].features, eps);
}

std::vector<float> frame_condition(const Models& models, const DatasetManifest& data,
                                   const std::vector<AudioFeatureFrame>& smoothed, int frame,
                                   const LandmarkSet& landmarks, ConditionEncoder::Cache& cache,
                                   const ConditionOptions& opts) {
    AudioLatent latent = audio_latent_for_frame(models, smoothed, frame);
    if (opts.zero_audio) std::fill(latent.mu.begin(), latent.mu.end(), 0.0f);

    std::vector<float> blink_code(static_cast<std::size_t>(models.cfg.blink.embed_width), 0.0f);
    if (!opts.zero_blink) {
        Mlp::Cache mc;
        blink_code = models.blink_mapper.forward(
            models.store, au_window(data, frame, models.cfg.blink.history),
            smoothed[static_cast<std::size_t>(frame)], mc);
    }
    const ConditionVector cond = models.field.condition_encoder().encode(
        models.store, landmarks, latent, blink_code, cache);
    return cond.fused;
}

FieldFn make_field_fn(const Models& models, const std::vector<float>& cond) {
    return [&models, cond](const std::array<float, 3>& pos, const std::array<float, 3>& dir) {
        RadianceField::Cache cache;
        return models.field.eval(models.store, pos, dir, cond, cache);
    };
}

bool is_holdout(const TrainConfig& cfg, int frame) {
    return frame % cfg.holdout_stride == cfg.holdout_stride - 1;
}

// --- motion training ----------------------------------------------------

namespace {

std::vector<AudioFeatureFrame> collect_audio(const DatasetManifest& data) {
    std::vector<AudioFeatureFrame> out;
    out.reserve(data.frames.size());
    for (const FrameRecord& f : data.frames) out.push_back(f.audio);
    return out;
}

void check_finite_loss(float loss, int iter) {
    if (!std::isfinite(loss))
        throw NumericError("non-finite loss at iteration " + std::to_string(iter));
}

std::array<float, 3> dataset_dir_scale(const DatasetManifest& data) {
    return data.map.scale;
}

}  // namespace

void train_motion(const TrainConfig& cfg, const DatasetManifest& data, Models& models,
                  const std::string& out_dir) {
    cfg.validate();
    if (data.frames.empty()) throw DatasetError("train_motion: empty dataset");
    fs::create_directories(out_dir);

    const int F = data.frame_count;
    const int W = models.cfg.dlt.window;
    const int K = models.cfg.blink.history;
    const int half = (W - 1) / 2;
    const auto smoothed = temporal_filter(collect_audio(data), cfg.smoothing_half_width);

    std::vector<LandmarkSet> gt;
    gt.reserve(static_cast<std::size_t>(F));
    for (const FrameRecord& f : data.frames) gt.push_back(f.landmarks);
    models.dlt.set_output_bias(models.store, mean_landmarks_flat(gt));

    std::mt19937 rng(cfg.seed);
    std::uniform_int_distribution<int> pick(0, F - 1);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    const AdamConfig adam{cfg.motion_lr, 0.9f, 0.999f, 1e-8f};

    std::ofstream curve(fs::path(out_dir) / "motion_loss.csv");
    curve << "iter,total,positional,vae,blink\n";

    const std::string ckpt = (fs::path(out_dir) / "motion.ckpt").string();
    for (int iter = 0; iter < cfg.motion_iters; ++iter) {
        const int c = pick(rng);

        // window of per-frame codes
        std::vector<int> window_frames;
        std::vector<std::vector<float>> eps_w, inputs;
        for (int o = -half; o <= half; ++o) {
            const int f = std::clamp(c + o, 0, F - 1);
            window_frames.push_back(f);
            std::vector<float> eps(static_cast<std::size_t>(models.cfg.vae.latent_width));
            for (float& e : eps) e = gauss(rng);
            if (models.cfg.dlt_uses_latents) {
                const AudioLatent lat = models.vae.encode(
                    models.store, smoothed[static_cast<std::size_t>(f)].features, eps);
                inputs.push_back(lat.mu);
            } else {
                inputs.push_back(smoothed[static_cast<std::size_t>(f)].features);
            }
            eps_w.push_back(std::move(eps));
        }

        Mlp::Cache mapper_cache;
        const std::vector<float> blink_code = models.blink_mapper.forward(
            models.store, au_window(data, c, K), smoothed[static_cast<std::size_t>(c)], mapper_cache);

        Dlt::Cache dlt_cache;
        const LandmarkSet pred = models.dlt.predict(models.store, inputs, blink_code, dlt_cache);

        const std::vector<LandmarkSet> pred_v{pred};
        const std::vector<LandmarkSet> gt_v{gt[static_cast<std::size_t>(c)]};
        const float lp = positional_loss(pred_v, gt_v);
        const auto lp_grad = positional_loss_grad(pred_v, gt_v);

        std::vector<std::vector<float>> input_grads;
        std::vector<float> blink_grad;
        models.dlt.backward(models.store, dlt_cache, lp_grad[0].data(), &input_grads, &blink_grad);

        float vae_total = 0.0f;
        if (models.cfg.dlt_uses_latents) {
            for (std::size_t i = 0; i < window_frames.size(); ++i) {
                const auto losses = models.vae.loss_and_grad(
                    models.store, smoothed[static_cast<std::size_t>(window_frames[i])].features,
                    eps_w[i], input_grads[i].data());
                vae_total += losses[0];
            }
            vae_total /= static_cast<float>(window_frames.size());
        }
        models.blink_mapper.backward(models.store, mapper_cache, blink_grad.data());

        // next-frame openness prediction from the blink-embedding history
        float blink_mse = 0.0f;
        if (c >= K) {
            std::vector<Mlp::Cache> hist_caches(static_cast<std::size_t>(K));
            std::vector<std::vector<float>> embeds;
            std::vector<float> ears;
            for (int k = 0; k < K; ++k) {
                const int f = c - K + k;
                embeds.push_back(models.blink_mapper.forward(
                    models.store, au_window(data, f, K), smoothed[static_cast<std::size_t>(f)],
                    hist_caches[static_cast<std::size_t>(k)]));
                ears.push_back(data.frames[static_cast<std::size_t>(f)].blink.eye_openness);
            }
            Mlp::Cache eye_cache;
            const float o_pred = models.eye_predictor.predict(models.store, embeds, ears, eye_cache);
            const float o_gt = data.frames[static_cast<std::size_t>(c)].blink.eye_openness;
            blink_mse = (o_pred - o_gt) * (o_pred - o_gt);
            std::vector<std::vector<float>> embed_grads;
            models.eye_predictor.backward(models.store, eye_cache, 2.0f * (o_pred - o_gt),
                                          &embed_grads);
            for (int k = 0; k < K; ++k)
                models.blink_mapper.backward(models.store, hist_caches[static_cast<std::size_t>(k)],
                                             embed_grads[static_cast<std::size_t>(k)].data());
        }

        const float total = lp + vae_total + blink_mse;
        check_finite_loss(total, iter);
        models.store.adam_step(adam);
        curve << iter << "," << total << "," << lp << "," << vae_total << "," << blink_mse << "\n";

        if ((iter + 1) % cfg.checkpoint_interval == 0 && iter + 1 < cfg.motion_iters)
            save_checkpoint(models.store,
                            (fs::path(out_dir) / ("motion_iter" + std::to_string(iter + 1) + ".ckpt"))
                                .string(),
                            {"motion", ""});
    }
    save_checkpoint(models.store, ckpt, {"motion", ""});
    if (!curve) throw IoError("failed writing motion loss curve in " + out_dir);
}

// --- field training -----------------------------------------------------

namespace {

std::vector<int> training_frames(const TrainConfig& cfg, int frame_count) {
    std::vector<int> out;
    for (int f = 0; f < frame_count; ++f)
        if (!is_holdout(cfg, f)) out.push_back(f);
    if (out.empty()) throw DatasetError("holdout split leaves no training frames");
    return out;
}

}  // namespace

void train_stage(const std::string& stage, const TrainConfig& cfg, const DatasetManifest& data,
                 Models& models, const std::string& out_dir, const std::string& coarse_ckpt) {
    cfg.validate();
    if (stage != "coarse" && stage != "fine")
        throw ConfigError("unknown training stage '" + stage + "'");
    if (data.frames.empty()) throw DatasetError("train_stage: empty dataset");
    const bool fine = stage == "fine";
    if (fine) {
        if (coarse_ckpt.empty())
            throw StateError("fine stage requires a coarse checkpoint to resume from");
        const CheckpointMeta parent = read_checkpoint_meta(coarse_ckpt);
        if (parent.stage != "coarse" && parent.stage != "fine")
            throw StateError("checkpoint '" + coarse_ckpt + "' is stage '" + parent.stage +
                             "', expected coarse");
    }
    fs::create_directories(out_dir);

    const auto smoothed = temporal_filter(collect_audio(data), cfg.smoothing_half_width);
    const std::vector<int> train_ids = training_frames(cfg, data.frame_count);
    const std::array<float, 3> dir_scale = dataset_dir_scale(data);
    const int fused_w = models.field.condition_encoder().fused_width();
    const AdamConfig adam{cfg.lr, 0.9f, 0.999f, 1e-8f};

    std::mt19937 rng(cfg.seed + (fine ? 101u : 0u));
    std::uniform_int_distribution<int> pick(0, static_cast<int>(train_ids.size()) - 1);

    std::ofstream curve(fs::path(out_dir) / (stage + "_loss.csv"));
    curve << "iter,loss\n";
    const std::string ckpt = (fs::path(out_dir) / (stage + ".ckpt")).string();
    const CheckpointMeta meta{stage, fine ? coarse_ckpt : ""};

    PerceptualMetric metric;  // fine stage only; frozen
    std::vector<RadianceField::Cache> caches(static_cast<std::size_t>(cfg.n_samples));
    const int iters = fine ? cfg.fine_iters : cfg.coarse_iters;

    for (int iter = 0; iter < iters; ++iter) {
        const int frame = train_ids[static_cast<std::size_t>(pick(rng))];
        const FrameRecord& fr = data.frames[static_cast<std::size_t>(frame)];

        ConditionEncoder::Cache cond_cache;
        const std::vector<float> cond =
            frame_condition(models, data, smoothed, frame, fr.landmarks, cond_cache);
        std::vector<float> cond_grad(static_cast<std::size_t>(fused_w), 0.0f);

        float loss = 0.0f;
        if (!fine) {
            std::uniform_int_distribution<int> px_dist(0, fr.camera.width - 1);
            std::uniform_int_distribution<int> py_dist(0, fr.camera.height - 1);
            const float inv_rays = 1.0f / static_cast<float>(cfg.rays_per_batch);
            RaySamples samples;
            for (int r = 0; r < cfg.rays_per_batch; ++r) {
                const int px = px_dist(rng);
                const int py = py_dist(rng);
                const Ray ray = generate_ray(fr.camera, px, py, dir_scale);
                const float* gt = fr.image.at(px, py);
                if (!ray.hits_scene) {
                    for (int c = 0; c < 3; ++c) {
                        const float d = data.background[static_cast<std::size_t>(c)] - gt[c];
                        loss += d * d * inv_rays;
                    }
                    continue;
                }
                samples.t = stratified_sample(ray, cfg.n_samples, true, rng);
                samples.delta = segment_lengths(samples.t, ray.t_far);
                samples.outputs.resize(samples.t.size());
                for (std::size_t i = 0; i < samples.t.size(); ++i) {
                    const float tt = samples.t[i];
                    const std::array<float, 3> pos{ray.origin[0] + tt * ray.dir[0],
                                                   ray.origin[1] + tt * ray.dir[1],
                                                   ray.origin[2] + tt * ray.dir[2]};
                    samples.outputs[i] =
                        models.field.eval(models.store, pos, ray.dir, cond, caches[i]);
                }
                const CompositeResult res = composite(samples, data.background);
                std::array<float, 3> d_pixel{};
                for (int c = 0; c < 3; ++c) {
                    const float d = res.pixel[static_cast<std::size_t>(c)] - gt[c];
                    loss += d * d * inv_rays;
                    d_pixel[static_cast<std::size_t>(c)] = 2.0f * d * inv_rays;
                }
                std::vector<float> d_sigma;
                std::vector<std::array<float, 3>> d_color;
                composite_backward(samples, data.background, d_pixel, d_sigma, d_color);
                for (std::size_t i = 0; i < samples.t.size(); ++i) {
                    const float tt = samples.t[i];
                    const std::array<float, 3> pos{ray.origin[0] + tt * ray.dir[0],
                                                   ray.origin[1] + tt * ray.dir[1],
                                                   ray.origin[2] + tt * ray.dir[2]};
                    models.field.backward(models.store, caches[i], pos, d_color[i], d_sigma[i],
                                          cond_grad.data());
                }
            }
        } else {
            const std::array<int, 4> region = cfg.mouth_source == MouthSource::Landmarks
                                                  ? mouth_region(fr, cfg.mouth_dilate)
                                                  : data.mouth_rect;
            const auto corner =
                sample_patch(fr.camera.width, fr.camera.height, region, cfg.patch_size, rng);
            const int P = cfg.patch_size;
            Image pred(P, P), gt_patch(P, P);

            // per-pixel sample storage for the backward pass (midpoint
            // sampling keeps the forward deterministic)
            std::vector<RaySamples> patch_samples(static_cast<std::size_t>(P * P));
            std::vector<std::vector<RadianceField::Cache>> patch_caches(
                static_cast<std::size_t>(P * P));
            std::vector<Ray> rays(static_cast<std::size_t>(P * P));
            std::mt19937 dummy(0);
            for (int y = 0; y < P; ++y) {
                for (int x = 0; x < P; ++x) {
                    const int px = corner[0] + x;
                    const int py = corner[1] + y;
                    const std::size_t idx = static_cast<std::size_t>(y * P + x);
                    const float* g = fr.image.at(px, py);
                    float* gp = gt_patch.at(x, y);
                    for (int c = 0; c < 3; ++c) gp[c] = g[c];
                    rays[idx] = generate_ray(fr.camera, px, py, dir_scale);
                    float* pp = pred.at(x, y);
                    if (!rays[idx].hits_scene) {
                        for (int c = 0; c < 3; ++c) pp[c] = data.background[static_cast<std::size_t>(c)];
                        continue;
                    }
                    RaySamples& s = patch_samples[idx];
                    s.t = stratified_sample(rays[idx], cfg.n_samples, false, dummy);
                    s.delta = segment_lengths(s.t, rays[idx].t_far);
                    s.outputs.resize(s.t.size());
                    patch_caches[idx].resize(s.t.size());
                    for (std::size_t i = 0; i < s.t.size(); ++i) {
                        const float tt = s.t[i];
                        const std::array<float, 3> pos{rays[idx].origin[0] + tt * rays[idx].dir[0],
                                                       rays[idx].origin[1] + tt * rays[idx].dir[1],
                                                       rays[idx].origin[2] + tt * rays[idx].dir[2]};
                        s.outputs[i] = models.field.eval(models.store, pos, rays[idx].dir, cond,
                                                         patch_caches[idx][i]);
                    }
                    const CompositeResult res = composite(s, data.background);
                    for (int c = 0; c < 3; ++c) pp[c] = res.pixel[static_cast<std::size_t>(c)];
                }
            }

            Image grad_img;
            loss = fine_loss_grad(pred, gt_patch, metric, cfg.lambda, grad_img);
            const float inv = 1.0f / static_cast<float>(P * P);
            loss *= inv;
            for (int y = 0; y < P; ++y) {
                for (int x = 0; x < P; ++x) {
                    const std::size_t idx = static_cast<std::size_t>(y * P + x);
                    if (!rays[idx].hits_scene) continue;
                    const float* gg = grad_img.at(x, y);
                    const std::array<float, 3> d_pixel{gg[0] * inv, gg[1] * inv, gg[2] * inv};
                    std::vector<float> d_sigma;
                    std::vector<std::array<float, 3>> d_color;
                    composite_backward(patch_samples[idx], data.background, d_pixel, d_sigma,
                                       d_color);
                    for (std::size_t i = 0; i < patch_samples[idx].t.size(); ++i) {
                        const float tt = patch_samples[idx].t[i];
                        const std::array<float, 3> pos{rays[idx].origin[0] + tt * rays[idx].dir[0],
                                                       rays[idx].origin[1] + tt * rays[idx].dir[1],
                                                       rays[idx].origin[2] + tt * rays[idx].dir[2]};
                        models.field.backward(models.store, patch_caches[idx][i], pos, d_color[i],
                                              d_sigma[i], cond_grad.data());
                    }
                }
            }
        }

        models.field.condition_encoder().backward(models.store, cond_cache, cond_grad.data(),
                                                  nullptr, nullptr);
        check_finite_loss(loss, iter);
        models.store.adam_step(adam);
        curve << iter << "," << loss << "\n";
        if ((iter + 1) % cfg.checkpoint_interval == 0 && iter + 1 < iters)
            save_checkpoint(
                models.store,
                (fs::path(out_dir) / (stage + "_iter" + std::to_string(iter + 1) + ".ckpt")).string(),
                meta);
    }
    save_checkpoint(models.store, ckpt, meta);
    if (!curve) throw IoError("failed writing " + stage + " loss curve in " + out_dir);
}

std::vector<LandmarkSet> predict_landmark_sequence(const Models& models,
                                                   const std::vector<AudioFeatureFrame>& audio,
                                                   const std::vector<BlinkState>& blink_states,
                                                   int smoothing_half_width) {
    if (audio.size() != blink_states.size())
        throw ShapeError("predict_landmark_sequence: audio and blink sequence lengths differ");
    const int F = static_cast<int>(audio.size());
    if (F == 0) throw ShapeError("predict_landmark_sequence: empty sequence");
    const auto smoothed = temporal_filter(audio, smoothing_half_width);
    const int W = models.cfg.dlt.window;
    const int K = models.cfg.blink.history;
    const int half = (W - 1) / 2;
    const std::vector<float> eps(static_cast<std::size_t>(models.cfg.vae.latent_width), 0.0f);

    std::vector<LandmarkSet> out;
    out.reserve(static_cast<std::size_t>(F));
    for (int c = 0; c < F; ++c) {
        std::vector<std::vector<float>> inputs;
        for (int o = -half; o <= half; ++o) {
            const int f = std::clamp(c + o, 0, F - 1);
            if (models.cfg.dlt_uses_latents) {
                inputs.push_back(
                    models.vae.encode(models.store, smoothed[static_cast<std::size_t>(f)].features, eps)
                        .mu);
            } else {
                inputs.push_back(smoothed[static_cast<std::size_t>(f)].features);
            }
        }
        std::vector<BlinkState> window;
        for (int i = K - 1; i >= 0; --i)
            window.push_back(blink_states[static_cast<std::size_t>(std::max(0, c - i))]);
        Mlp::Cache mc;
        const std::vector<float> code = models.blink_mapper.forward(
            models.store, window, smoothed[static_cast<std::size_t>(c)], mc);
        Dlt::Cache dc;
        LandmarkSet pred = models.dlt.predict(models.store, inputs, code, dc);
        pred.frame_index = c;
        out.push_back(pred);
    }
    return out;
}

}  // namespace portrait
