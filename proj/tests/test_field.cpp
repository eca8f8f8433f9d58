#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "portrait/errors.hpp"
#include "portrait/field.hpp"
#include "portrait/tensor.hpp"
#include "test_util.hpp"

using namespace portrait;

namespace {

FieldConfig small_field_config() {
    FieldConfig cfg;
    cfg.grid.level_count = 2;
    cfg.grid.features_per_entry = 2;
    cfg.grid.table_size_log2 = 8;
    cfg.grid.base_resolution = 4;
    cfg.grid.per_level_scale = 2.0f;
    cfg.cond_width = 8;
    cfg.blink_width = 2;
    cfg.hidden = 16;
    return cfg;
}

LandmarkSet sample_landmarks(std::mt19937& rng) {
    std::uniform_real_distribution<float> dist(0.2f, 0.8f);
    LandmarkSet lm;
    for (auto& p : lm.points)
        for (auto& c : p) c = dist(rng);
    return lm;
}

AudioLatent sample_latent(int width, std::mt19937& rng) {
    AudioLatent lat;
    lat.mu = testutil::random_vector(static_cast<std::size_t>(width), rng);
    lat.logvar.assign(static_cast<std::size_t>(width), 0.0f);
    lat.z = lat.mu;
    return lat;
}

std::array<float, 3> unit(std::array<float, 3> v) {
    const float n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {v[0] / n, v[1] / n, v[2] / n};
}

}  // namespace

TEST_CASE("sh basis closed-form values") {
    auto sh = sh_basis({0.0f, 0.0f, 1.0f});
    CHECK(sh[0] == doctest::Approx(0.28209479177f));
    CHECK(sh[1] == doctest::Approx(0.0f));
    CHECK(sh[2] == doctest::Approx(0.48860251190f));
    CHECK(sh[3] == doctest::Approx(0.0f));
    CHECK(sh[6] == doctest::Approx(0.31539156525f * 2.0f));
    CHECK(sh[8] == doctest::Approx(0.0f));

    auto shx = sh_basis({1.0f, 0.0f, 0.0f});
    CHECK(shx[3] == doctest::Approx(0.48860251190f));
    CHECK(shx[6] == doctest::Approx(-0.31539156525f));
    CHECK(shx[8] == doctest::Approx(0.54627421529f));

    const auto d = unit({1.0f, 2.0f, -2.0f});
    auto shd = sh_basis(d);
    CHECK(shd[4] == doctest::Approx(1.09254843059f * d[0] * d[1]));
    CHECK(shd[5] == doctest::Approx(1.09254843059f * d[1] * d[2]));
    CHECK(shd[7] == doctest::Approx(1.09254843059f * d[0] * d[2]));
}

TEST_CASE("condition encoder fuses landmark, audio and blink codes") {
    ParamStore store;
    std::mt19937 rng(1);
    auto cfg = small_field_config();
    ConditionEncoder enc(store, cfg, 4, rng);
    auto lm = sample_landmarks(rng);
    auto lat = sample_latent(4, rng);
    std::vector<float> blink = {0.3f, -0.1f};
    ConditionEncoder::Cache cache;
    auto cond = enc.encode(store, lm, lat, blink, cache);
    REQUIRE(static_cast<int>(cond.fused.size()) == cfg.cond_width + cfg.blink_width);
    for (int i = 0; i < cfg.cond_width; ++i)
        CHECK(cond.fused[static_cast<std::size_t>(i)] ==
              doctest::Approx(cond.landmark_code[static_cast<std::size_t>(i)] +
                              cond.audio_residual[static_cast<std::size_t>(i)]));
    CHECK(cond.fused[static_cast<std::size_t>(cfg.cond_width)] == 0.3f);
    CHECK(cond.fused[static_cast<std::size_t>(cfg.cond_width + 1)] == -0.1f);
    CHECK_THROWS_AS(enc.encode(store, lm, lat, {0.3f}, cache), ShapeError);
}

TEST_CASE("zeroing the audio branch removes the audio residual") {
    ParamStore store;
    std::mt19937 rng(2);
    auto cfg = small_field_config();
    ConditionEncoder enc(store, cfg, 4, rng);
    enc.zero_audio_branch(store);
    auto lm = sample_landmarks(rng);
    std::vector<float> blink(2, 0.0f);
    ConditionEncoder::Cache cache;
    auto a = enc.encode(store, lm, sample_latent(4, rng), blink, cache);
    auto b = enc.encode(store, lm, sample_latent(4, rng), blink, cache);
    for (int i = 0; i < cfg.cond_width; ++i) {
        CHECK(a.audio_residual[static_cast<std::size_t>(i)] == 0.0f);
        CHECK(a.fused[static_cast<std::size_t>(i)] == b.fused[static_cast<std::size_t>(i)]);
        CHECK(a.fused[static_cast<std::size_t>(i)] == a.landmark_code[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("field outputs stay in range") {
    ParamStore store;
    std::mt19937 rng(3);
    auto cfg = small_field_config();
    RadianceField field(store, cfg, rng, 4);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    auto cond = testutil::random_vector(static_cast<std::size_t>(cfg.cond_width + cfg.blink_width), rng);
    RadianceField::Cache cache;
    for (int i = 0; i < 200; ++i) {
        const std::array<float, 3> x{dist(rng), dist(rng), dist(rng)};
        const auto d = unit({dist(rng) - 0.5f, dist(rng) - 0.5f, dist(rng) - 0.5f});
        auto out = field.eval(store, x, d, cond, cache);
        CHECK(out.sigma >= 0.0f);
        for (float c : out.color) {
            CHECK(c >= 0.0f);
            CHECK(c <= 1.0f);
        }
    }
}

TEST_CASE("density is independent of the view direction") {
    ParamStore store;
    std::mt19937 rng(4);
    auto cfg = small_field_config();
    RadianceField field(store, cfg, rng, 4);
    auto cond = testutil::random_vector(static_cast<std::size_t>(cfg.cond_width + cfg.blink_width), rng);
    RadianceField::Cache cache;
    const std::array<float, 3> x{0.31f, 0.62f, 0.47f};
    const float s1 = field.eval(store, x, {0.0f, 0.0f, 1.0f}, cond, cache).sigma;
    const float s2 = field.eval(store, x, unit({1.0f, -1.0f, 0.3f}), cond, cache).sigma;
    const float s3 = field.eval(store, x, {0.0f, -1.0f, 0.0f}, cond, cache).sigma;
    CHECK(s1 == s2);
    CHECK(s1 == s3);
}

TEST_CASE("color does depend on the view direction") {
    ParamStore store;
    std::mt19937 rng(5);
    auto cfg = small_field_config();
    RadianceField field(store, cfg, rng, 4);
    auto cond = testutil::random_vector(static_cast<std::size_t>(cfg.cond_width + cfg.blink_width), rng);
    RadianceField::Cache cache;
    const std::array<float, 3> x{0.31f, 0.62f, 0.47f};
    const auto c1 = field.eval(store, x, {0.0f, 0.0f, 1.0f}, cond, cache).color;
    const auto c2 = field.eval(store, x, {0.0f, 0.0f, -1.0f}, cond, cache).color;
    float diff = 0.0f;
    for (int i = 0; i < 3; ++i) diff += std::abs(c1[static_cast<std::size_t>(i)] - c2[static_cast<std::size_t>(i)]);
    CHECK(diff > 0.0f);
}

TEST_CASE("non-unit directions and bad widths are rejected") {
    ParamStore store;
    std::mt19937 rng(6);
    auto cfg = small_field_config();
    RadianceField field(store, cfg, rng, 4);
    auto cond = testutil::random_vector(static_cast<std::size_t>(cfg.cond_width + cfg.blink_width), rng);
    RadianceField::Cache cache;
    CHECK_THROWS_AS(field.eval(store, {0.5f, 0.5f, 0.5f}, {0.0f, 0.0f, 2.0f}, cond, cache),
                    DomainError);
    CHECK_THROWS_AS(field.eval(store, {0.5f, 0.5f, 0.5f}, {0.0f, 0.0f, 1.0f}, {0.1f}, cache),
                    ShapeError);
    CHECK_THROWS_AS(field.eval(store, {0.5f, 0.5f, 1.5f}, {0.0f, 0.0f, 1.0f}, cond, cache),
                    DomainError);
    RadianceField::Cache fresh;
    CHECK_THROWS_AS(field.backward(store, fresh, {0.5f, 0.5f, 0.5f}, {0, 0, 0}, 0.0f, nullptr),
                    StateError);
}

TEST_CASE("field is deterministic") {
    ParamStore store;
    std::mt19937 rng(7);
    auto cfg = small_field_config();
    RadianceField field(store, cfg, rng, 4);
    auto cond = testutil::random_vector(static_cast<std::size_t>(cfg.cond_width + cfg.blink_width), rng);
    RadianceField::Cache c1, c2;
    const std::array<float, 3> x{0.4f, 0.5f, 0.6f};
    const auto d = unit({0.2f, -0.5f, 1.0f});
    auto a = field.eval(store, x, d, cond, c1);
    auto b = field.eval(store, x, d, cond, c2);
    CHECK(a.sigma == b.sigma);
    CHECK(a.color == b.color);
}

TEST_CASE("field parameter gradients match finite differences") {
    ParamStore store;
    std::mt19937 rng(8);
    auto cfg = small_field_config();
    RadianceField field(store, cfg, rng, 4);
    // seed the tables away from their tiny init so features matter
    for (std::size_t h = 0; h < store.count(); ++h) {
        auto& p = store.at(static_cast<int>(h));
        if (p.name.find("plane_") == 0)
            for (float& v : p.value) v = std::uniform_real_distribution<float>(-0.5f, 0.5f)(rng);
    }
    auto cond = testutil::random_vector(static_cast<std::size_t>(cfg.cond_width + cfg.blink_width), rng);
    const std::array<float, 3> x{0.37f, 0.58f, 0.45f};
    const auto d = unit({0.3f, 0.4f, -0.8f});
    const std::array<float, 3> up_color{1.5f, -2.0f, 1.0f};
    const float up_sigma = 2.0f;
    std::vector<std::string> names;
    for (const auto& p : store.params()) {
        if (p.name.rfind("cond.", 0) == 0) continue;  // not part of eval() here
        names.push_back(p.name);
    }
    RadianceField::Cache cache;
    auto loss = [&]() {
        auto out = field.eval(store, x, d, cond, cache);
        return static_cast<double>(up_color[0]) * out.color[0] +
               static_cast<double>(up_color[1]) * out.color[1] +
               static_cast<double>(up_color[2]) * out.color[2] +
               static_cast<double>(up_sigma) * out.sigma;
    };
    auto grad = [&]() {
        loss();
        field.backward(store, cache, x, up_color, up_sigma, nullptr);
    };
    auto st = testutil::fd_check(store, names, loss, grad, 60, rng);
    CHECK(st.checked >= 50);
    CHECK(st.max_rel < 5e-3);
}

TEST_CASE("hash table gradients reach the named plane levels") {
    ParamStore store;
    std::mt19937 rng(9);
    auto cfg = small_field_config();
    RadianceField field(store, cfg, rng, 4);
    auto cond = testutil::random_vector(static_cast<std::size_t>(cfg.cond_width + cfg.blink_width), rng);
    RadianceField::Cache cache;
    const std::array<float, 3> x{0.4f, 0.5f, 0.6f};
    field.eval(store, x, {0.0f, 0.0f, 1.0f}, cond, cache);
    field.backward(store, cache, x, {1.0f, 1.0f, 1.0f}, 1.0f, nullptr);
    float total = 0.0f;
    for (const char* name : {"plane_XY.level0", "plane_YZ.level0", "plane_XZ.level0"}) {
        float s = 0.0f;
        for (float g : store.at(name).grad) s += std::abs(g);
        total += s;
    }
    CHECK(total > 0.0f);
}

TEST_CASE("condition gradient matches finite differences") {
    ParamStore store;
    std::mt19937 rng(10);
    auto cfg = small_field_config();
    RadianceField field(store, cfg, rng, 4);
    auto cond = testutil::random_vector(static_cast<std::size_t>(cfg.cond_width + cfg.blink_width), rng);
    const std::array<float, 3> x{0.37f, 0.58f, 0.45f};
    const auto d = unit({0.1f, 0.9f, -0.4f});
    const std::array<float, 3> up_color{2.0f, 1.0f, -1.5f};
    const float up_sigma = 3.0f;
    RadianceField::Cache cache;
    auto loss = [&]() {
        auto out = field.eval(store, x, d, cond, cache);
        return static_cast<double>(up_color[0]) * out.color[0] +
               static_cast<double>(up_color[1]) * out.color[1] +
               static_cast<double>(up_color[2]) * out.color[2] +
               static_cast<double>(up_sigma) * out.sigma;
    };
    loss();
    std::vector<float> cond_grad(cond.size(), 0.0f);
    field.backward(store, cache, x, up_color, up_sigma, cond_grad.data());
    const float h = 1e-3f;
    int checked = 0;
    for (std::size_t i = 0; i < cond.size(); ++i) {
        const float orig = cond[i];
        cond[i] = orig + h;
        const double lp = loss();
        cond[i] = orig - h;
        const double lm = loss();
        cond[i] = orig;
        const double fd = (lp - lm) / (2.0 * h);
        if (std::abs(fd) < 0.05) continue;
        CHECK(cond_grad[i] == doctest::Approx(fd).epsilon(5e-3));
        ++checked;
    }
    CHECK(checked >= 3);
}

TEST_CASE("audio latent gradient flows through the condition encoder") {
    ParamStore store;
    std::mt19937 rng(11);
    auto cfg = small_field_config();
    ConditionEncoder enc(store, cfg, 4, rng);
    auto lm = sample_landmarks(rng);
    auto lat = sample_latent(4, rng);
    std::vector<float> blink = {0.2f, 0.4f};
    auto up = testutil::random_vector(static_cast<std::size_t>(cfg.cond_width + cfg.blink_width),
                                      rng, -2.0f, 2.0f);
    ConditionEncoder::Cache cache;
    auto eval = [&]() {
        auto cond = enc.encode(store, lm, lat, blink, cache);
        double acc = 0.0;
        for (std::size_t i = 0; i < cond.fused.size(); ++i)
            acc += static_cast<double>(up[i]) * cond.fused[i];
        return acc;
    };
    eval();
    std::vector<float> mu_grad, blink_grad;
    enc.backward(store, cache, up.data(), &mu_grad, &blink_grad);
    REQUIRE(mu_grad.size() == 4);
    const float h = 1e-3f;
    int checked = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        const float orig = lat.mu[i];
        lat.mu[i] = orig + h;
        const double lp = eval();
        lat.mu[i] = orig - h;
        const double lm2 = eval();
        lat.mu[i] = orig;
        const double fd = (lp - lm2) / (2.0 * h);
        if (std::abs(fd) < 0.05) continue;
        CHECK(mu_grad[i] == doctest::Approx(fd).epsilon(5e-3));
        ++checked;
    }
    CHECK(checked >= 1);
    // blink slots pass straight through the concatenation
    for (int i = 0; i < cfg.blink_width; ++i)
        CHECK(blink_grad[static_cast<std::size_t>(i)] ==
              up[static_cast<std::size_t>(cfg.cond_width + i)]);
}
