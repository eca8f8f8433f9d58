#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "portrait/config.hpp"
#include "portrait/dataset.hpp"
#include "portrait/errors.hpp"
#include "portrait/metrics.hpp"
#include "portrait/perceptual.hpp"
#include "portrait/render.hpp"
#include "portrait/training.hpp"

namespace fs = std::filesystem;
using namespace portrait;

namespace {

struct CommonArgs {
    std::string config_path;
    int seed = -1;  // -1: take the config's seed
};

Config load_config(const CommonArgs& args) {
    Config cfg = args.config_path.empty() ? Config() : Config::from_file(args.config_path);
    if (args.seed >= 0) cfg.set("train.seed", std::to_string(args.seed));
    return cfg;
}

SyntheticSceneSpec synth_spec_from(const Config& cfg, std::uint32_t seed) {
    SyntheticSceneSpec spec;
    spec.seed = seed;
    spec.frame_count = cfg.get_int("synth.frames", spec.frame_count);
    spec.image_size = cfg.get_int("synth.size", spec.image_size);
    spec.fps = cfg.get_float("synth.fps", spec.fps);
    spec.sphere_radius = cfg.get_float("synth.sphere_radius", spec.sphere_radius);
    spec.mouth_amplitude = cfg.get_float("synth.mouth_amplitude", spec.mouth_amplitude);
    spec.blink_amplitude = cfg.get_float("synth.blink_amplitude", spec.blink_amplitude);
    spec.audio_width = cfg.get_int("synth.audio_width", spec.audio_width);
    return spec;
}

// Every command reads the full key set so one config file can drive the
// whole pipeline; require_all_consumed then rejects typos only.
void consume_shared_keys(const Config& cfg, int audio_width) {
    (void)TrainConfig::from_config(cfg);
    (void)ModelConfig::from_config(cfg, audio_width);
    (void)synth_spec_from(cfg, 0);
    (void)cfg.get_int("render.n_samples", 48);
}

std::string frame_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%05d.png", t);
    return buf;
}

struct LoadedModels {
    DatasetManifest data;
    Models models;
    TrainConfig train;
};

LoadedModels prepare(const Config& cfg, const std::string& data_dir) {
    LoadedModels out;
    out.data = load_dataset(data_dir);
    normalize_scene(out.data);
    out.train = TrainConfig::from_config(cfg);
    const int audio_width =
        static_cast<int>(out.data.frames.front().audio.features.size());
    const ModelConfig mc = ModelConfig::from_config(cfg, audio_width);
    out.models = build_models(mc, out.train.seed);
    return out;
}

int run_synth(const CommonArgs& common, const std::string& out_dir) {
    const Config cfg = load_config(common);
    const TrainConfig tc = TrainConfig::from_config(cfg);
    const SyntheticSceneSpec spec = synth_spec_from(cfg, tc.seed);
    (void)ModelConfig::from_config(cfg, spec.audio_width);
    (void)cfg.get_int("render.n_samples", 48);
    cfg.require_all_consumed();
    generate_synthetic(spec, out_dir);
    std::cout << "synthetic scene with " << spec.frame_count << " frames written to " << out_dir
              << "\n";
    return 0;
}

int run_train_motion(const CommonArgs& common, const std::string& data_dir,
                     const std::string& out_dir, const std::string& init_ckpt) {
    const Config cfg = load_config(common);
    LoadedModels lm = prepare(cfg, data_dir);
    consume_shared_keys(cfg, static_cast<int>(lm.data.frames.front().audio.features.size()));
    cfg.require_all_consumed();
    if (!init_ckpt.empty()) load_checkpoint(lm.models.store, init_ckpt);
    train_motion(lm.train, lm.data, lm.models, out_dir);
    std::cout << "motion checkpoint written to " << (fs::path(out_dir) / "motion.ckpt").string()
              << "\n";
    return 0;
}

int run_train_field(const CommonArgs& common, const std::string& stage,
                    const std::string& data_dir, const std::string& out_dir,
                    const std::string& init_ckpt) {
    const Config cfg = load_config(common);
    LoadedModels lm = prepare(cfg, data_dir);
    consume_shared_keys(cfg, static_cast<int>(lm.data.frames.front().audio.features.size()));
    cfg.require_all_consumed();
    if (stage == "fine" && init_ckpt.empty())
        throw StateError("train-field --stage fine requires --init <coarse checkpoint>");
    if (!init_ckpt.empty()) load_checkpoint(lm.models.store, init_ckpt);
    train_stage(stage, lm.train, lm.data, lm.models, out_dir, init_ckpt);
    std::cout << stage << " checkpoint written to "
              << (fs::path(out_dir) / (stage + ".ckpt")).string() << "\n";
    return 0;
}

int run_render(const CommonArgs& common, const std::string& data_dir, const std::string& ckpt,
               const std::string& audio_path, const std::string& out_dir) {
    const Config cfg = load_config(common);
    LoadedModels lm = prepare(cfg, data_dir);
    consume_shared_keys(cfg, static_cast<int>(lm.data.frames.front().audio.features.size()));
    const int n_samples = cfg.get_int("render.n_samples", 48);
    cfg.require_all_consumed();
    load_checkpoint(lm.models.store, ckpt);

    const std::vector<AudioFeatureFrame> audio = load_audio_csv(audio_path);
    if (audio.empty()) throw DatasetError(audio_path + ": no audio frames");
    const int F = lm.data.frame_count;

    std::vector<BlinkState> blink_states;
    blink_states.reserve(audio.size());
    for (std::size_t t = 0; t < audio.size(); ++t)
        blink_states.push_back(
            lm.data.frames[static_cast<std::size_t>(std::min<int>(static_cast<int>(t), F - 1))].blink);

    const auto landmarks = predict_landmark_sequence(lm.models, audio, blink_states,
                                                     lm.train.smoothing_half_width);
    const auto smoothed = temporal_filter(audio, lm.train.smoothing_half_width);

    fs::create_directories(out_dir);
    RenderOptions opts;
    opts.n_samples = n_samples;
    opts.jitter = false;
    opts.seed = lm.train.seed;
    opts.background = lm.data.background;
    const std::array<float, 3> dir_scale = lm.data.map.scale;
    const std::vector<float> eps(static_cast<std::size_t>(lm.models.cfg.vae.latent_width), 0.0f);
    const int K = lm.models.cfg.blink.history;

    for (std::size_t t = 0; t < audio.size(); ++t) {
        const int cam_frame = std::min<int>(static_cast<int>(t), F - 1);
        const AudioLatent latent =
            lm.models.vae.encode(lm.models.store, smoothed[t].features, eps);
        Mlp::Cache mc;
        const std::vector<float> blink_code = lm.models.blink_mapper.forward(
            lm.models.store, au_window(lm.data, cam_frame, K), smoothed[t], mc);
        ConditionEncoder::Cache cc;
        const std::vector<float> cond =
            lm.models.field.condition_encoder()
                .encode(lm.models.store, landmarks[t], latent, blink_code, cc)
                .fused;
        const Image img = render_image(lm.data.frames[static_cast<std::size_t>(cam_frame)].camera,
                                       dir_scale, make_field_fn(lm.models, cond), opts);
        write_png(img, (fs::path(out_dir) / frame_name(static_cast<int>(t))).string());
    }
    std::cout << audio.size() << " frames rendered to " << out_dir << "\n";
    return 0;
}

int run_eval(const CommonArgs& common, const std::string& data_dir, const std::string& ckpt,
             const std::string& render_dir, const std::string& out_json) {
    const Config cfg = load_config(common);
    LoadedModels lm = prepare(cfg, data_dir);
    consume_shared_keys(cfg, static_cast<int>(lm.data.frames.front().audio.features.size()));
    cfg.require_all_consumed();
    load_checkpoint(lm.models.store, ckpt);

    std::vector<BlinkState> blink_states;
    std::vector<AudioFeatureFrame> audio;
    std::vector<LandmarkSet> gt;
    for (const FrameRecord& fr : lm.data.frames) {
        blink_states.push_back(fr.blink);
        audio.push_back(fr.audio);
        gt.push_back(fr.landmarks);
    }
    const auto pred = predict_landmark_sequence(lm.models, audio, blink_states,
                                                lm.train.smoothing_half_width);

    EvalReport report;
    report.checkpoint = ckpt;
    report.lmd_value = lmd(pred, gt);
    for (int t = 0; t < lm.data.frame_count; ++t)
        report.per_frame_lmd.push_back(
            lmd({pred[static_cast<std::size_t>(t)]}, {gt[static_cast<std::size_t>(t)]}));

    const PerceptualMetric metric;
    double psnr_acc = 0.0, mouth_acc = 0.0, perc_acc = 0.0;
    int n = 0;
    const bool has_mouth = lm.data.mouth_rect[2] > 0 && lm.data.mouth_rect[3] > 0;
    for (int t = 0; t < lm.data.frame_count; ++t) {
        const fs::path p = fs::path(render_dir) / frame_name(t);
        if (!fs::exists(p)) continue;
        const Image rendered = read_png(p.string());
        const Image& gt_img = lm.data.frames[static_cast<std::size_t>(t)].image;
        const float v = psnr(rendered, gt_img);
        report.per_frame_psnr.push_back(v);
        psnr_acc += v;
        if (has_mouth) mouth_acc += psnr(rendered, gt_img, &lm.data.mouth_rect);
        perc_acc += metric.distance(rendered, gt_img);
        ++n;
    }
    if (n == 0) throw DatasetError(render_dir + ": no rendered frames matching the dataset");
    report.frame_count = n;
    report.psnr_mean = static_cast<float>(psnr_acc / n);
    report.psnr_mouth = has_mouth ? static_cast<float>(mouth_acc / n) : 0.0f;
    report.perceptual_mean = static_cast<float>(perc_acc / n);
    write_report(report, out_json);
    std::cout << "report written to " << out_json << " (psnr " << report.psnr_mean << " dB, lmd "
              << report.lmd_value << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"audio-driven talking portrait pipeline"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string data_dir, out_dir, ckpt, audio_path, stage, init_ckpt, render_dir, out_json;

    auto add_common = [&common](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "key = value config file");
        sub->add_option("--seed", common.seed, "seed override");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate the synthetic scene");
    synth->add_option("--out", out_dir, "output dataset directory")->required();
    add_common(synth);

    CLI::App* tmotion = app.add_subcommand("train-motion", "train DLT + VAE + blink models");
    tmotion->add_option("--data", data_dir)->required();
    tmotion->add_option("--out", out_dir)->required();
    tmotion->add_option("--init", init_ckpt, "checkpoint to resume from");
    add_common(tmotion);

    CLI::App* tfield = app.add_subcommand("train-field", "train the radiance field");
    tfield->add_option("--stage", stage)->required()->check(CLI::IsMember({"coarse", "fine"}));
    tfield->add_option("--data", data_dir)->required();
    tfield->add_option("--out", out_dir)->required();
    tfield->add_option("--init", init_ckpt, "checkpoint to resume from");
    add_common(tfield);

    CLI::App* render = app.add_subcommand("render", "render frames from audio features");
    render->add_option("--data", data_dir)->required();
    render->add_option("--checkpoint", ckpt)->required();
    render->add_option("--audio", audio_path)->required();
    render->add_option("--out", out_dir)->required();
    add_common(render);

    CLI::App* eval = app.add_subcommand("eval", "compare rendered frames against the dataset");
    eval->add_option("--data", data_dir)->required();
    eval->add_option("--checkpoint", ckpt)->required();
    eval->add_option("--render", render_dir)->required();
    eval->add_option("--out", out_json)->required();
    add_common(eval);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_synth(common, out_dir);
        if (tmotion->parsed()) return run_train_motion(common, data_dir, out_dir, init_ckpt);
        if (tfield->parsed()) return run_train_field(common, stage, data_dir, out_dir, init_ckpt);
        if (render->parsed()) return run_render(common, data_dir, ckpt, audio_path, out_dir);
        if (eval->parsed()) return run_eval(common, data_dir, ckpt, render_dir, out_json);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DatasetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const StateError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
