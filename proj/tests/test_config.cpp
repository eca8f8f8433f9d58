#include <string>

#include "doctest.h"
#include "portrait/config.hpp"
#include "portrait/errors.hpp"
#include "portrait/training.hpp"

using namespace portrait;

TEST_CASE("basic grammar with comments and dotted keys") {
    auto cfg = Config::from_string(
        "# leading comment\n"
        "train.lr = 0.005\n"
        "\n"
        "render.n_samples = 48   # trailing comment\n"
        "name = hello world\n"
        "flag = true\n");
    CHECK(cfg.get_float("train.lr", 0.0f) == doctest::Approx(0.005f));
    CHECK(cfg.get_int("render.n_samples", 0) == 48);
    CHECK(cfg.get_string("name", "") == "hello world");
    CHECK(cfg.get_bool("flag", false));
    cfg.require_all_consumed();
}

TEST_CASE("fallbacks apply to missing keys") {
    auto cfg = Config::from_string("a = 1\n");
    CHECK(cfg.get_int("missing", 42) == 42);
    CHECK(cfg.get_float("missing", 1.5f) == 1.5f);
    CHECK(cfg.get_string("missing", "d") == "d");
    CHECK(cfg.get_bool("missing", true));
    CHECK(cfg.get_int("a", 0) == 1);
    cfg.require_all_consumed();
}

TEST_CASE("unconsumed keys are rejected by name") {
    auto cfg = Config::from_string("good = 1\ntypo.key = 2\n");
    cfg.get_int("good", 0);
    try {
        cfg.require_all_consumed();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("typo.key") != std::string::npos);
    }
}

TEST_CASE("duplicate keys are rejected with the line") {
    try {
        Config::from_string("a = 1\na = 2\n", "dup.cfg");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("dup.cfg") != std::string::npos);
        CHECK(msg.find("2") != std::string::npos);
    }
}

TEST_CASE("missing equals sign is rejected") {
    CHECK_THROWS_AS(Config::from_string("just a line\n"), ConfigError);
}

TEST_CASE("malformed numbers are rejected") {
    auto cfg = Config::from_string("x = 12abc\ny = 1.5\n");
    CHECK_THROWS_AS(cfg.get_int("x", 0), ConfigError);
    CHECK_THROWS_AS(cfg.get_int("y", 0), ConfigError);  // fractional where int expected
    CHECK(cfg.get_float("y", 0.0f) == 1.5f);
    auto cfg2 = Config::from_string("b = maybe\n");
    CHECK_THROWS_AS(cfg2.get_bool("b", false), ConfigError);
}

TEST_CASE("bool forms") {
    auto cfg = Config::from_string("a = true\nb = false\nc = 1\nd = 0\n");
    CHECK(cfg.get_bool("a", false));
    CHECK_FALSE(cfg.get_bool("b", true));
    CHECK(cfg.get_bool("c", false));
    CHECK_FALSE(cfg.get_bool("d", true));
}

TEST_CASE("set overrides file values") {
    auto cfg = Config::from_string("train.seed = 1\n");
    cfg.set("train.seed", "7");
    CHECK(cfg.get_int("train.seed", 0) == 7);
    cfg.set("extra", "3");
    CHECK(cfg.get_int("extra", 0) == 3);
    cfg.require_all_consumed();
}

TEST_CASE("train config defaults") {
    Config cfg;
    auto tc = TrainConfig::from_config(cfg);
    CHECK(tc.coarse_iters == 1500);
    CHECK(tc.fine_iters == 300);
    CHECK(tc.motion_iters == 800);
    CHECK(tc.rays_per_batch == 256);
    CHECK(tc.patch_size == 16);
    CHECK(tc.n_samples == 24);
    CHECK(tc.lambda == doctest::Approx(0.001f));
    CHECK(tc.holdout_stride == 5);
    CHECK(tc.mouth_source == MouthSource::Landmarks);
}

TEST_CASE("train config overrides and validation") {
    auto cfg = Config::from_string(
        "train.coarse.iters = 10\n"
        "train.fine.iters = 2\n"
        "train.rays_per_batch = 32\n"
        "train.fine.lambda = 0.01\n"
        "train.mouth_source = manifest\n"
        "train.seed = 9\n");
    auto tc = TrainConfig::from_config(cfg);
    cfg.require_all_consumed();
    CHECK(tc.coarse_iters == 10);
    CHECK(tc.fine_iters == 2);
    CHECK(tc.rays_per_batch == 32);
    CHECK(tc.lambda == doctest::Approx(0.01f));
    CHECK(tc.mouth_source == MouthSource::Manifest);
    CHECK(tc.seed == 9);

    auto bad = Config::from_string("train.fine.lambda = -0.5\n");
    CHECK_THROWS_AS(TrainConfig::from_config(bad), ConfigError);
    auto bad2 = Config::from_string("train.mouth_source = nowhere\n");
    CHECK_THROWS_AS(TrainConfig::from_config(bad2), ConfigError);
    auto bad3 = Config::from_string("train.holdout_stride = 1\n");
    CHECK_THROWS_AS(TrainConfig::from_config(bad3), ConfigError);
}

TEST_CASE("model config wires widths together") {
    auto cfg = Config::from_string(
        "vae.latent = 8\n"
        "dlt.window = 5\n"
        "blink.embed = 3\n"
        "motion.use_latents = true\n");
    auto mc = ModelConfig::from_config(cfg, 29);
    cfg.require_all_consumed();
    CHECK(mc.vae.latent_width == 8);
    CHECK(mc.vae.feature_width == 29);
    CHECK(mc.dlt.input_width == 8);
    CHECK(mc.dlt.window == 5);
    CHECK(mc.dlt.blink_width == 3);
    CHECK(mc.field.blink_width == 3);
    CHECK(mc.blink.embed_width == 3);

    auto raw = Config::from_string("motion.use_latents = false\n");
    auto mc2 = ModelConfig::from_config(raw, 29);
    CHECK(mc2.dlt.input_width == 29);

    auto even = Config::from_string("dlt.window = 4\n");
    CHECK_THROWS_AS(ModelConfig::from_config(even, 29), ConfigError);
}
