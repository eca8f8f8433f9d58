#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "portrait/field.hpp"
#include "portrait/hashgrid.hpp"
#include "portrait/mlp.hpp"
#include "portrait/render.hpp"

using namespace portrait;

namespace {

std::array<float, 3> rand_pos(std::mt19937& rng) {
    std::uniform_real_distribution<float> d(0.05f, 0.95f);
    return {d(rng), d(rng), d(rng)};
}

void bm_triplane_encode(benchmark::State& state) {
    ParamStore store;
    std::mt19937 rng(1);
    HashGridConfig cfg;
    TriplaneEncoder enc(store, "", cfg, rng);
    std::vector<float> out(static_cast<std::size_t>(enc.output_width()));
    auto x = rand_pos(rng);
    for (auto _ : state) {
        enc.encode(store, x, out.data());
        benchmark::DoNotOptimize(out.data());
        x[0] = x[0] < 0.9f ? x[0] + 1e-4f : 0.1f;
    }
}
BENCHMARK(bm_triplane_encode);

void bm_mlp_forward(benchmark::State& state) {
    ParamStore store;
    std::mt19937 rng(2);
    Mlp mlp(store, "m", {64, 64, 64, 3}, Activation::Sigmoid, rng);
    std::vector<float> in(64, 0.3f);
    Mlp::Cache cache;
    for (auto _ : state) {
        mlp.forward(store, in.data(), 64, cache);
        benchmark::DoNotOptimize(cache.post.back().data());
    }
}
BENCHMARK(bm_mlp_forward);

void bm_field_eval(benchmark::State& state) {
    ParamStore store;
    std::mt19937 rng(3);
    FieldConfig cfg;
    RadianceField field(store, cfg, rng, 16);
    std::vector<float> cond(static_cast<std::size_t>(cfg.cond_width + cfg.blink_width), 0.2f);
    const std::array<float, 3> d{0.0f, 0.0f, -1.0f};
    RadianceField::Cache cache;
    auto x = rand_pos(rng);
    for (auto _ : state) {
        const auto out = field.eval(store, x, d, cond, cache);
        benchmark::DoNotOptimize(out.sigma);
        x[1] = x[1] < 0.9f ? x[1] + 1e-4f : 0.1f;
    }
}
BENCHMARK(bm_field_eval);

void bm_composite(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    RaySamples s;
    for (int i = 0; i < n; ++i) {
        s.t.push_back(0.1f + 0.8f * (static_cast<float>(i) + 0.5f) / static_cast<float>(n));
        s.outputs.push_back({{0.5f, 0.4f, 0.3f}, 1.5f});
    }
    s.delta = segment_lengths(s.t, 0.9f);
    for (auto _ : state) {
        const auto res = composite(s, {0.0f, 0.0f, 0.0f});
        benchmark::DoNotOptimize(res.pixel);
    }
}
BENCHMARK(bm_composite)->Arg(32)->Arg(128);

void bm_composite_backward(benchmark::State& state) {
    const int n = 64;
    RaySamples s;
    for (int i = 0; i < n; ++i) {
        s.t.push_back(0.1f + 0.8f * (static_cast<float>(i) + 0.5f) / static_cast<float>(n));
        s.outputs.push_back({{0.5f, 0.4f, 0.3f}, 1.5f});
    }
    s.delta = segment_lengths(s.t, 0.9f);
    std::vector<float> d_sigma;
    std::vector<std::array<float, 3>> d_color;
    for (auto _ : state) {
        composite_backward(s, {0.0f, 0.0f, 0.0f}, {1.0f, 1.0f, 1.0f}, d_sigma, d_color);
        benchmark::DoNotOptimize(d_sigma.data());
    }
}
BENCHMARK(bm_composite_backward);

}  // namespace

BENCHMARK_MAIN();
