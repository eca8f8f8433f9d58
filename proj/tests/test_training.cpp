#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "portrait/dataset.hpp"
#include "portrait/errors.hpp"
#include "portrait/metrics.hpp"
#include "portrait/training.hpp"
#include "test_util.hpp"

using namespace portrait;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& stem) {
    const fs::path p = fs::path("/tmp") / stem;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

ModelConfig tiny_model_config(int audio_width = 6) {
    auto cfg = Config::from_string(
        "grid.levels = 2\n"
        "grid.features = 2\n"
        "grid.table_log2 = 8\n"
        "grid.n_min = 4\n"
        "field.cond_width = 8\n"
        "field.hidden = 16\n"
        "vae.latent = 4\n"
        "vae.hidden = 16\n"
        "dlt.window = 3\n"
        "dlt.embed = 8\n"
        "dlt.head_hidden = 16\n"
        "blink.hidden = 8\n"
        "blink.embed = 2\n");
    return ModelConfig::from_config(cfg, audio_width);
}

TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.coarse_iters = 5;
    cfg.fine_iters = 2;
    cfg.motion_iters = 20;
    cfg.rays_per_batch = 16;
    cfg.patch_size = 6;
    cfg.n_samples = 8;
    cfg.checkpoint_interval = 1000;
    cfg.seed = 3;
    return cfg;
}

DatasetManifest tiny_dataset(const std::string& stem, SyntheticSceneSpec spec) {
    const auto root = fresh_dir(stem);
    generate_synthetic(spec, root);
    auto data = load_dataset(root);
    normalize_scene(data);
    return data;
}

SyntheticSceneSpec tiny_spec() {
    SyntheticSceneSpec spec;
    spec.frame_count = 8;
    spec.image_size = 16;
    spec.audio_width = 6;
    return spec;
}

std::vector<std::vector<float>> read_curve(const std::string& path) {
    std::ifstream in(path);
    std::vector<std::vector<float>> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string cell;
        std::vector<float> row;
        while (std::getline(ss, cell, ',')) row.push_back(std::stof(cell));
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

TEST_CASE("coarse loss closed form and gradient") {
    std::vector<std::array<float, 3>> pred{{0.5f, 0.5f, 0.5f}};
    std::vector<std::array<float, 3>> gt{{0.4f, 0.5f, 0.5f}};
    CHECK(coarse_loss(pred, gt) == doctest::Approx(0.01f));
    auto grad = coarse_loss_grad(pred, gt);
    CHECK(grad[0][0] == doctest::Approx(0.2f));
    CHECK(grad[0][1] == doctest::Approx(0.0f));
    CHECK_THROWS_AS(coarse_loss(pred, {}), ShapeError);

    std::mt19937 rng(1);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    std::vector<std::array<float, 3>> a(20), b(20);
    for (int i = 0; i < 20; ++i)
        for (int c = 0; c < 3; ++c) {
            a[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] = dist(rng);
            b[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] = dist(rng);
        }
    double acc = 0.0;
    for (int i = 0; i < 20; ++i)
        for (int c = 0; c < 3; ++c) {
            const double d = a[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] -
                             b[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
            acc += d * d;
        }
    CHECK(coarse_loss(a, b) == doctest::Approx(acc).epsilon(1e-5));
}

TEST_CASE("sample_patch stays inside the region") {
    std::mt19937 rng(2);
    const std::array<int, 4> region{10, 20, 30, 25};
    for (int i = 0; i < 1000; ++i) {
        auto c = sample_patch(64, 64, region, 8, rng);
        CHECK(c[0] >= 10);
        CHECK(c[0] + 8 <= 40);
        CHECK(c[1] >= 20);
        CHECK(c[1] + 8 <= 45);
    }
    // exact fit pins the corner
    auto c = sample_patch(64, 64, {5, 6, 8, 8}, 8, rng);
    CHECK(c[0] == 5);
    CHECK(c[1] == 6);
    // clipping to the image applies before the size check
    CHECK_THROWS_AS(sample_patch(12, 12, {10, 10, 30, 30}, 8, rng), ConfigError);
    CHECK_THROWS_AS(sample_patch(64, 64, {0, 0, 4, 4}, 8, rng), ConfigError);
    std::mt19937 r1(9), r2(9);
    CHECK(sample_patch(64, 64, region, 8, r1) == sample_patch(64, 64, region, 8, r2));
}

TEST_CASE("fine loss identities") {
    PerceptualMetric metric;
    std::mt19937 rng(3);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    Image a(8, 8), b(8, 8);
    for (auto& p : a.pixels) p = dist(rng);
    for (auto& p : b.pixels) p = dist(rng);
    for (float lambda : {0.0f, 0.001f, 0.1f}) {
        CHECK(fine_loss(a, a, metric, lambda) == 0.0f);
        CHECK(fine_loss(a, b, metric, lambda) > 0.0f);
    }
    // lambda 0 reduces to the sum-of-squares pixel loss
    double acc = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        acc += d * d;
    }
    CHECK(fine_loss(a, b, metric, 0.0f) == doctest::Approx(acc).epsilon(1e-4));
    CHECK(fine_loss(a, b, metric, 0.001f) ==
          doctest::Approx(acc + 0.001 * metric.distance(a, b)).epsilon(1e-4));
    Image c(4, 4);
    CHECK_THROWS_AS(fine_loss(a, c, metric, 0.0f), ShapeError);
}

TEST_CASE("fine loss gradient matches finite differences") {
    PerceptualMetric metric;
    std::mt19937 rng(4);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    Image a(8, 8), b(8, 8);
    for (auto& p : a.pixels) p = dist(rng);
    for (auto& p : b.pixels) p = dist(rng);
    const float lambda = 0.05f;
    Image grad;
    const float loss = fine_loss_grad(a, b, metric, lambda, grad);
    CHECK(loss == doctest::Approx(fine_loss(a, b, metric, lambda)).epsilon(1e-5));
    const float h = 1e-3f;
    std::uniform_int_distribution<std::size_t> pick(0, a.pixels.size() - 1);
    int checked = 0;
    for (int probe = 0; probe < 300 && checked < 50; ++probe) {
        const std::size_t i = pick(rng);
        const float orig = a.pixels[i];
        a.pixels[i] = orig + h;
        const double lp = fine_loss(a, b, metric, lambda);
        a.pixels[i] = orig - h;
        const double lm = fine_loss(a, b, metric, lambda);
        a.pixels[i] = orig;
        const double fd = (lp - lm) / (2.0 * h);
        if (std::abs(fd) < 0.05) continue;
        CHECK(grad.pixels[i] == doctest::Approx(fd).epsilon(5e-3));
        ++checked;
    }
    CHECK(checked >= 50);
}

TEST_CASE("mouth region covers the projected mouth landmarks") {
    auto data = tiny_dataset("portrait_tr_mouth", tiny_spec());
    const auto& fr = data.frames[0];
    const auto region = mouth_region(fr, 2);
    CHECK(region[2] > 0);
    CHECK(region[3] > 0);
    for (int k = 48; k < 68; ++k) {
        const auto uv = project_point(fr.camera, fr.landmarks.points[static_cast<std::size_t>(k)]);
        CHECK(uv[0] >= static_cast<float>(region[0]) - 3.0f);
        CHECK(uv[0] <= static_cast<float>(region[0] + region[2]) + 3.0f);
        CHECK(uv[1] >= static_cast<float>(region[1]) - 3.0f);
        CHECK(uv[1] <= static_cast<float>(region[1] + region[3]) + 3.0f);
    }
    // a larger dilation can only grow the region (until clipped)
    const auto wider = mouth_region(fr, 5);
    CHECK(wider[0] <= region[0]);
    CHECK(wider[2] >= region[2]);
}

TEST_CASE("checkpoint meta round-trips and defaults to init") {
    ParamStore store;
    std::mt19937 rng(5);
    store.create_uniform("p", {8}, -1.0f, 1.0f, rng);
    const std::string path = "/tmp/portrait_tr_ckpt.bin";
    save_checkpoint(store, path, {"coarse", "parent.ckpt"});
    auto meta = read_checkpoint_meta(path);
    CHECK(meta.stage == "coarse");
    CHECK(meta.parent == "parent.ckpt");

    ParamStore other;
    auto loaded = load_checkpoint(other, path);
    CHECK(loaded.stage == "coarse");
    CHECK(other.value_hash() == store.value_hash());

    fs::remove(path + ".meta.json");
    auto fallback = read_checkpoint_meta(path);
    CHECK(fallback.stage == "init");
    CHECK(fallback.parent.empty());
}

TEST_CASE("build_models is deterministic per seed") {
    auto cfg = tiny_model_config();
    auto a = build_models(cfg, 7);
    auto b = build_models(cfg, 7);
    auto c = build_models(cfg, 8);
    CHECK(a.store.value_hash() == b.store.value_hash());
    CHECK(a.store.value_hash() != c.store.value_hash());
    CHECK(a.store.has("vae.enc.w0"));
    CHECK(a.store.has("dlt.attn.wq"));
    CHECK(a.store.has("blink.mapper.w0"));
    CHECK(a.store.has("plane_XY.level0"));
}

TEST_CASE("au_window clamps at the sequence start") {
    auto data = tiny_dataset("portrait_tr_window", tiny_spec());
    auto w = au_window(data, 0, 4);
    REQUIRE(w.size() == 4);
    for (const auto& s : w) CHECK(s.frame_index == 0);
    auto w2 = au_window(data, 5, 4);
    CHECK(w2[0].frame_index == 2);
    CHECK(w2[3].frame_index == 5);
}

TEST_CASE("holdout pattern follows the stride") {
    TrainConfig cfg;
    cfg.holdout_stride = 5;
    int held = 0;
    for (int f = 0; f < 20; ++f)
        if (is_holdout(cfg, f)) ++held;
    CHECK(held == 4);
    CHECK(is_holdout(cfg, 4));
    CHECK(is_holdout(cfg, 9));
    CHECK_FALSE(is_holdout(cfg, 5));
    CHECK_FALSE(is_holdout(cfg, 0));
}

TEST_CASE("frame condition reacts to its ablation switches") {
    auto data = tiny_dataset("portrait_tr_cond", tiny_spec());
    auto models = build_models(tiny_model_config(), 11);
    const auto smoothed = temporal_filter(
        [&] {
            std::vector<AudioFeatureFrame> out;
            for (const auto& f : data.frames) out.push_back(f.audio);
            return out;
        }(),
        2);
    ConditionEncoder::Cache cache;
    const auto base = frame_condition(models, data, smoothed, 3, data.frames[3].landmarks, cache);
    const auto no_audio = frame_condition(models, data, smoothed, 3, data.frames[3].landmarks,
                                          cache, {true, false});
    const auto no_blink = frame_condition(models, data, smoothed, 3, data.frames[3].landmarks,
                                          cache, {false, true});
    CHECK(base.size() == no_audio.size());
    float diff = 0.0f;
    for (std::size_t i = 0; i < base.size(); ++i) diff += std::abs(base[i] - no_audio[i]);
    CHECK(diff > 0.0f);
    // the blink slots are the trailing entries of the fused vector
    const int cond_w = models.cfg.field.cond_width;
    for (int i = 0; i < models.cfg.field.blink_width; ++i)
        CHECK(no_blink[static_cast<std::size_t>(cond_w + i)] == 0.0f);
    CHECK_THROWS_AS(audio_latent_for_frame(models, smoothed, 99), DomainError);
    // eps = 0 latent is the encoder mean
    const auto lat = audio_latent_for_frame(models, smoothed, 3);
    CHECK(lat.z == lat.mu);
}

TEST_CASE("fine stage demands a coarse checkpoint") {
    auto data = tiny_dataset("portrait_tr_gate", tiny_spec());
    auto models = build_models(tiny_model_config(), 12);
    auto cfg = tiny_train_config();
    const auto out = fresh_dir("portrait_tr_gate_out");
    CHECK_THROWS_AS(train_stage("fine", cfg, data, models, out, ""), StateError);
    CHECK_THROWS_AS(train_stage("warm", cfg, data, models, out, ""), ConfigError);

    // a checkpoint from the wrong stage is rejected
    save_checkpoint(models.store, out + "/motion.ckpt", {"motion", ""});
    CHECK_THROWS_AS(train_stage("fine", cfg, data, models, out, out + "/motion.ckpt"), StateError);
}

TEST_CASE("zero-iteration stages checkpoint the initial parameters") {
    auto data = tiny_dataset("portrait_tr_zero", tiny_spec());
    auto models = build_models(tiny_model_config(), 13);
    auto cfg = tiny_train_config();
    cfg.coarse_iters = 0;
    cfg.fine_iters = 0;
    const auto out = fresh_dir("portrait_tr_zero_out");
    const auto before = models.store.value_hash();
    train_stage("coarse", cfg, data, models, out);
    CHECK(models.store.value_hash() == before);
    CHECK(fs::exists(out + "/coarse.ckpt"));
    CHECK(read_checkpoint_meta(out + "/coarse.ckpt").stage == "coarse");
    train_stage("fine", cfg, data, models, out, out + "/coarse.ckpt");
    auto meta = read_checkpoint_meta(out + "/fine.ckpt");
    CHECK(meta.stage == "fine");
    CHECK(meta.parent == out + "/coarse.ckpt");
}

TEST_CASE("motion training learns a constant-landmark dataset") {
    auto spec = tiny_spec();
    spec.mouth_amplitude = 0.0f;
    spec.blink_amplitude = 0.0f;
    auto data = tiny_dataset("portrait_tr_motion", spec);
    auto models = build_models(tiny_model_config(), 14);
    auto cfg = tiny_train_config();
    cfg.motion_iters = 300;
    const auto out = fresh_dir("portrait_tr_motion_out");
    train_motion(cfg, data, models, out);
    CHECK(fs::exists(out + "/motion.ckpt"));
    CHECK(read_checkpoint_meta(out + "/motion.ckpt").stage == "motion");
    auto curve = read_curve(out + "/motion_loss.csv");
    REQUIRE(curve.size() == 300);
    REQUIRE(curve[0].size() == 5);
    // with constant landmarks the head only has to cancel its hidden-layer
    // noise around the mean bias
    CHECK(curve.back()[2] < 0.05f);
    CHECK(curve.back()[2] < 0.5f * curve.front()[2]);
}

TEST_CASE("motion training is deterministic and writes interval checkpoints") {
    auto data = tiny_dataset("portrait_tr_motion_det", tiny_spec());
    auto cfg = tiny_train_config();
    cfg.motion_iters = 60;
    cfg.checkpoint_interval = 25;

    auto m1 = build_models(tiny_model_config(), 15);
    const auto out1 = fresh_dir("portrait_tr_motion_det1");
    train_motion(cfg, data, m1, out1);

    auto m2 = build_models(tiny_model_config(), 15);
    const auto out2 = fresh_dir("portrait_tr_motion_det2");
    train_motion(cfg, data, m2, out2);

    CHECK(m1.store.value_hash() == m2.store.value_hash());
    CHECK(fs::exists(out1 + "/motion_iter25.ckpt"));
    CHECK(fs::exists(out1 + "/motion_iter50.ckpt"));
    auto c1 = read_curve(out1 + "/motion_loss.csv");
    auto c2 = read_curve(out2 + "/motion_loss.csv");
    CHECK(c1 == c2);
}

TEST_CASE("coarse training reduces the photometric loss") {
    auto data = tiny_dataset("portrait_tr_coarse", tiny_spec());
    auto models = build_models(tiny_model_config(), 16);
    auto cfg = tiny_train_config();
    cfg.coarse_iters = 1200;
    cfg.rays_per_batch = 64;
    cfg.n_samples = 12;
    const auto out = fresh_dir("portrait_tr_coarse_out");
    train_stage("coarse", cfg, data, models, out);
    auto curve = read_curve(out + "/coarse_loss.csv");
    REQUIRE(curve.size() == 1200);
    double early = 0.0, late = 0.0;
    for (int i = 0; i < 10; ++i) {
        early += curve[static_cast<std::size_t>(i)][1];
        late += curve[curve.size() - 10 + static_cast<std::size_t>(i)][1];
    }
    CHECK(late < 0.5 * early);
    CHECK(fs::exists(out + "/coarse.ckpt"));

    // fine stage runs end to end on top of the coarse checkpoint
    cfg.fine_iters = 3;
    cfg.patch_size = 6;
    train_stage("fine", cfg, data, models, out, out + "/coarse.ckpt");
    auto fine_curve = read_curve(out + "/fine_loss.csv");
    CHECK(fine_curve.size() == 3);
    for (const auto& row : fine_curve) CHECK(std::isfinite(row[1]));
}

TEST_CASE("predicted landmark sequences match the dataset length") {
    auto data = tiny_dataset("portrait_tr_pred", tiny_spec());
    auto models = build_models(tiny_model_config(), 17);
    std::vector<AudioFeatureFrame> audio;
    std::vector<BlinkState> states;
    for (const auto& f : data.frames) {
        audio.push_back(f.audio);
        states.push_back(f.blink);
    }
    auto seq = predict_landmark_sequence(models, audio, states, 2);
    REQUIRE(seq.size() == audio.size());
    auto seq2 = predict_landmark_sequence(models, audio, states, 2);
    for (std::size_t f = 0; f < seq.size(); ++f)
        for (int k = 0; k < 68; ++k)
            CHECK(seq[f].points[static_cast<std::size_t>(k)] ==
                  seq2[f].points[static_cast<std::size_t>(k)]);
}
