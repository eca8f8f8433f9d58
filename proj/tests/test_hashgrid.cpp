#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "portrait/errors.hpp"
#include "portrait/hashgrid.hpp"
#include "test_util.hpp"

using namespace portrait;

namespace {

// Independent reference: double-precision gather-and-blend using only the
// public hash function and the documented dense-level rule.
std::vector<double> reference_plane_encode(const ParamStore& store, const std::string& table_prefix,
                                           const HashGridConfig& cfg, double u, double v) {
    std::vector<double> out;
    for (int l = 0; l < cfg.level_count; ++l) {
        const int res = cfg.level_resolution(l);
        const std::uint32_t verts = static_cast<std::uint32_t>(res) + 1u;
        const bool dense = verts * verts <= static_cast<std::uint32_t>(cfg.table_size());
        auto index = [&](std::uint32_t ix, std::uint32_t iy) {
            if (dense) return iy * verts + ix;
            return spatial_hash(ix, iy, static_cast<std::uint32_t>(cfg.table_size()));
        };
        auto foot = [&](double c) {
            int i0 = static_cast<int>(std::floor(static_cast<float>(c) * static_cast<float>(res)));
            i0 = std::min(std::max(i0, 0), res - 1);
            const double f = static_cast<double>(static_cast<float>(c) * static_cast<float>(res)) - i0;
            return std::pair<std::uint32_t, double>(static_cast<std::uint32_t>(i0), f);
        };
        const auto [iu, fu] = foot(u);
        const auto [iv, fv] = foot(v);
        const Param& table = store.at(table_prefix + ".level" + std::to_string(l));
        for (int f = 0; f < cfg.features_per_entry; ++f) {
            auto entry = [&](std::uint32_t ix, std::uint32_t iy) {
                return static_cast<double>(
                    table.value[static_cast<std::size_t>(index(ix, iy)) * cfg.features_per_entry +
                                static_cast<std::size_t>(f)]);
            };
            out.push_back((1 - fu) * (1 - fv) * entry(iu, iv) + fu * (1 - fv) * entry(iu + 1, iv) +
                          (1 - fu) * fv * entry(iu, iv + 1) + fu * fv * entry(iu + 1, iv + 1));
        }
    }
    return out;
}

HashGridConfig small_dense_config() {
    HashGridConfig cfg;
    cfg.level_count = 3;
    cfg.features_per_entry = 2;
    cfg.table_size_log2 = 10;
    cfg.base_resolution = 4;
    cfg.per_level_scale = 2.0f;  // exact power-of-two resolutions: 4, 8, 16
    return cfg;
}

void randomize_tables(ParamStore& store, std::mt19937& rng) {
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (std::size_t h = 0; h < store.count(); ++h)
        for (float& v : store.at(static_cast<int>(h)).value) v = dist(rng);
}

}  // namespace

TEST_CASE("spatial hash basics") {
    CHECK(spatial_hash(0, 0, 1u << 14) == 0);
    CHECK(spatial_hash(5, 0, 1u << 14) == 5);
    CHECK(spatial_hash(3, 7, 1u << 10) == ((3u ^ (7u * 2654435761u)) & 1023u));
    CHECK(spatial_hash(123, 456, 1u << 8) == spatial_hash(123, 456, 1u << 8));
    CHECK(spatial_hash(1000000, 2000000, 1u << 14) < (1u << 14));
}

TEST_CASE("spatial hash spreads corners evenly") {
    const std::uint32_t table = 1u << 14;
    std::vector<int> bins(table, 0);
    const int side = 1000;  // 1e6 corners
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            bins[spatial_hash(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y), table)]++;
    const double expected = static_cast<double>(side) * side / table;
    double chi2 = 0.0;
    for (int c : bins) {
        const double d = c - expected;
        chi2 += d * d / expected;
    }
    // the multiplicative hash spreads an enumerated lattice more evenly
    // than random (chi2/df well below 1); reject only clumping
    CHECK(chi2 / table < 1.1);
    const int max_load = *std::max_element(bins.begin(), bins.end());
    CHECK(max_load < 3.0 * expected);
}

TEST_CASE("level resolutions follow the geometric schedule") {
    HashGridConfig cfg;
    cfg.base_resolution = 16;
    cfg.per_level_scale = 1.32f;
    CHECK(cfg.level_resolution(0) == 16);
    CHECK(cfg.level_resolution(1) == static_cast<int>(std::floor(16 * 1.32)));
    CHECK(cfg.level_resolution(5) == static_cast<int>(std::floor(16.0 * std::pow(1.32, 5.0))));
    CHECK(cfg.feature_width() == 16);
}

TEST_CASE("zero tables encode to zero") {
    ParamStore store;
    std::mt19937 rng(1);
    auto cfg = small_dense_config();
    PlanarHashGrid grid(store, "g", Plane::XY, cfg, rng);
    for (std::size_t h = 0; h < store.count(); ++h)
        std::fill(store.at(static_cast<int>(h)).value.begin(),
                  store.at(static_cast<int>(h)).value.end(), 0.0f);
    std::vector<float> out(static_cast<std::size_t>(grid.output_width()), 1.0f);
    grid.encode(store, 0.37f, 0.91f, out.data());
    for (float v : out) CHECK(v == 0.0f);
}

TEST_CASE("vertex queries reproduce table entries exactly on dense levels") {
    ParamStore store;
    std::mt19937 rng(2);
    auto cfg = small_dense_config();
    PlanarHashGrid grid(store, "g", Plane::XY, cfg, rng);
    randomize_tables(store, rng);
    // power-of-two resolutions make lattice coordinates exact in float
    for (int l = 0; l < cfg.level_count; ++l) {
        const int res = cfg.level_resolution(l);
        const Param& table = store.at("g.level" + std::to_string(l));
        for (auto [ix, iy] : {std::pair{0, 0}, {res, 0}, {0, res}, {res, res}, {res / 2, res / 4}}) {
            std::vector<float> out(static_cast<std::size_t>(grid.output_width()));
            grid.encode(store, static_cast<float>(ix) / res, static_cast<float>(iy) / res,
                        out.data());
            const std::size_t row = static_cast<std::size_t>(iy * (res + 1) + ix);
            for (int f = 0; f < cfg.features_per_entry; ++f)
                CHECK(out[static_cast<std::size_t>(l * cfg.features_per_entry + f)] ==
                      table.value[row * 2 + static_cast<std::size_t>(f)]);
        }
    }
}

TEST_CASE("encode matches the double-precision gather oracle") {
    std::mt19937 rng(3);
    HashGridConfig dense;  // every level below the table size
    dense.level_count = 6;
    HashGridConfig hashed = dense;
    hashed.table_size_log2 = 8;  // (17)^2 > 256 forces the collision path
    for (const auto& cfg : {dense, hashed}) {
        ParamStore store;
        PlanarHashGrid grid(store, "g", Plane::XY, cfg, rng);
        randomize_tables(store, rng);
        std::uniform_real_distribution<float> dist(0.0f, 1.0f);
        for (int probe = 0; probe < 10000; ++probe) {
            const float u = dist(rng), v = dist(rng);
            std::vector<float> out(static_cast<std::size_t>(grid.output_width()));
            grid.encode(store, u, v, out.data());
            const auto ref = reference_plane_encode(store, "g", cfg, u, v);
            for (std::size_t i = 0; i < ref.size(); ++i)
                CHECK(std::abs(out[i] - ref[i]) < 1e-6);
        }
    }
}

TEST_CASE("encode is continuous across cell boundaries") {
    ParamStore store;
    std::mt19937 rng(4);
    auto cfg = small_dense_config();
    PlanarHashGrid grid(store, "g", Plane::XY, cfg, rng);
    randomize_tables(store, rng);
    const float eps = 1e-6f;
    for (float edge : {0.25f, 0.5f, 0.75f}) {
        std::vector<float> lo(static_cast<std::size_t>(grid.output_width()));
        std::vector<float> hi(static_cast<std::size_t>(grid.output_width()));
        grid.encode(store, edge - eps, 0.4f, lo.data());
        grid.encode(store, edge + eps, 0.4f, hi.data());
        for (std::size_t i = 0; i < lo.size(); ++i) CHECK(std::abs(lo[i] - hi[i]) < 1e-3f);
    }
}

TEST_CASE("out-of-square queries are rejected") {
    ParamStore store;
    std::mt19937 rng(5);
    PlanarHashGrid grid(store, "g", Plane::XY, small_dense_config(), rng);
    std::vector<float> out(static_cast<std::size_t>(grid.output_width()));
    CHECK_THROWS_AS(grid.encode(store, -0.01f, 0.5f, out.data()), DomainError);
    CHECK_THROWS_AS(grid.encode(store, 0.5f, 1.01f, out.data()), DomainError);
    CHECK_THROWS_AS(grid.encode(store, std::nanf(""), 0.5f, out.data()), DomainError);
}

TEST_CASE("backward deposits bilinear weights on the touched rows") {
    ParamStore store;
    std::mt19937 rng(6);
    HashGridConfig cfg = small_dense_config();
    cfg.level_count = 1;  // res 4, dense
    PlanarHashGrid grid(store, "g", Plane::XY, cfg, rng);
    std::vector<float> up = {1.0f, 0.0f};
    // u=v=0.125 on res 4: cell (0,0), fu=fv=0.5
    grid.encode_backward(store, 0.125f, 0.125f, up.data(), 2);
    const auto& g = store.at("g.level0").grad;
    CHECK(g[0 * 2] == doctest::Approx(0.25f));       // (0,0)
    CHECK(g[1 * 2] == doctest::Approx(0.25f));       // (1,0)
    CHECK(g[5 * 2] == doctest::Approx(0.25f));       // (0,1) row stride 5
    CHECK(g[6 * 2] == doctest::Approx(0.25f));       // (1,1)
    CHECK(g[0 * 2 + 1] == 0.0f);                     // untouched feature channel
}

TEST_CASE("backward matches finite differences") {
    ParamStore store;
    std::mt19937 rng(7);
    HashGridConfig cfg;
    cfg.level_count = 4;
    cfg.table_size_log2 = 8;  // forces the collision path
    PlanarHashGrid grid(store, "g", Plane::XY, cfg, rng);
    randomize_tables(store, rng);
    const float u = 0.317f, v = 0.773f;
    auto up = testutil::random_vector(static_cast<std::size_t>(grid.output_width()), rng, -2.0f, 2.0f);
    std::vector<std::string> names;
    for (int l = 0; l < cfg.level_count; ++l) names.push_back("g.level" + std::to_string(l));
    std::vector<float> out(static_cast<std::size_t>(grid.output_width()));
    auto loss = [&]() {
        grid.encode(store, u, v, out.data());
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i)
            acc += static_cast<double>(up[i]) * out[i];
        return acc;
    };
    auto gradf = [&]() { grid.encode_backward(store, u, v, up.data(), grid.output_width()); };
    auto st = testutil::fd_check(store, names, loss, gradf, 50, rng, 1e-3f, 0.01);
    CHECK(st.checked >= 50);
    CHECK(st.max_rel < 5e-3);
}

TEST_CASE("triplane output is the concatenation of its planes") {
    ParamStore store;
    std::mt19937 rng(8);
    HashGridConfig cfg;
    cfg.level_count = 4;
    TriplaneEncoder enc(store, "", cfg, rng);
    randomize_tables(store, rng);
    const std::array<float, 3> x{0.21f, 0.63f, 0.88f};
    std::vector<float> out(static_cast<std::size_t>(enc.output_width()));
    enc.encode(store, x, out.data());
    const int w = enc.plane(Plane::XY).output_width();
    std::vector<float> part(static_cast<std::size_t>(w));
    enc.plane(Plane::XY).encode(store, x[0], x[1], part.data());
    for (int i = 0; i < w; ++i) CHECK(out[static_cast<std::size_t>(i)] == part[static_cast<std::size_t>(i)]);
    enc.plane(Plane::YZ).encode(store, x[1], x[2], part.data());
    for (int i = 0; i < w; ++i)
        CHECK(out[static_cast<std::size_t>(w + i)] == part[static_cast<std::size_t>(i)]);
    enc.plane(Plane::XZ).encode(store, x[0], x[2], part.data());
    for (int i = 0; i < w; ++i)
        CHECK(out[static_cast<std::size_t>(2 * w + i)] == part[static_cast<std::size_t>(i)]);
}

TEST_CASE("each plane ignores its orthogonal coordinate") {
    ParamStore store;
    std::mt19937 rng(9);
    HashGridConfig cfg;
    cfg.level_count = 4;
    TriplaneEncoder enc(store, "", cfg, rng);
    randomize_tables(store, rng);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    const int w = enc.plane(Plane::XY).output_width();
    for (int probe = 0; probe < 1000; ++probe) {
        const float x = dist(rng), y = dist(rng);
        std::vector<float> a(static_cast<std::size_t>(enc.output_width()));
        std::vector<float> b(static_cast<std::size_t>(enc.output_width()));
        enc.encode(store, {x, y, dist(rng)}, a.data());
        enc.encode(store, {x, y, dist(rng)}, b.data());
        for (int i = 0; i < w; ++i)
            CHECK(a[static_cast<std::size_t>(i)] == b[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("triplane rejects out-of-cube points") {
    ParamStore store;
    std::mt19937 rng(10);
    HashGridConfig cfg;
    TriplaneEncoder enc(store, "", cfg, rng);
    std::vector<float> out(static_cast<std::size_t>(enc.output_width()));
    CHECK_THROWS_AS(enc.encode(store, {0.5f, 0.5f, 1.5f}, out.data()), DomainError);
    CHECK_THROWS_AS(enc.encode(store, {-0.5f, 0.5f, 0.5f}, out.data()), DomainError);
}

TEST_CASE("triplane backward splits the upstream across planes") {
    ParamStore store;
    std::mt19937 rng(11);
    HashGridConfig cfg;
    cfg.level_count = 2;
    TriplaneEncoder enc(store, "", cfg, rng);
    randomize_tables(store, rng);
    const std::array<float, 3> x{0.4f, 0.5f, 0.6f};
    auto up = testutil::random_vector(static_cast<std::size_t>(enc.output_width()), rng);
    enc.encode_backward(store, x, up.data(), enc.output_width());

    ParamStore solo;
    std::mt19937 rng2(11);
    TriplaneEncoder enc2(solo, "", cfg, rng2);
    for (std::size_t h = 0; h < store.count(); ++h)
        solo.at(static_cast<int>(h)).value = store.at(static_cast<int>(h)).value;
    const int w = enc2.plane(Plane::XY).output_width();
    enc2.plane(Plane::XY).encode_backward(solo, x[0], x[1], up.data(), w);
    enc2.plane(Plane::YZ).encode_backward(solo, x[1], x[2], up.data() + w, w);
    enc2.plane(Plane::XZ).encode_backward(solo, x[0], x[2], up.data() + 2 * w, w);
    for (std::size_t h = 0; h < store.count(); ++h)
        CHECK(store.at(static_cast<int>(h)).grad == solo.at(static_cast<int>(h)).grad);
}

TEST_CASE("fresh grids initialize near zero") {
    ParamStore store;
    std::mt19937 rng(12);
    HashGridConfig cfg;
    PlanarHashGrid grid(store, "g", Plane::XY, cfg, rng);
    for (float v : store.at("g.level0").value) CHECK(std::abs(v) <= 1e-4f);
}
