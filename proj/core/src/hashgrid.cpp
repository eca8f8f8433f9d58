#include "portrait/hashgrid.hpp"

#include <cmath>

#include "portrait/errors.hpp"

namespace portrait {

int HashGridConfig::level_resolution(int level) const {
    return static_cast<int>(std::floor(static_cast<double>(base_resolution) *
                                       std::pow(static_cast<double>(per_level_scale), level)));
}

const char* plane_name(Plane p) {
    switch (p) {
        case Plane::XY: return "XY";
        case Plane::YZ: return "YZ";
        case Plane::XZ: return "XZ";
    }
    return "?";
}

std::uint32_t spatial_hash(std::uint32_t ix, std::uint32_t iy, std::uint32_t table_size) {
    // XOR of coordinates times the Instant-NGP primes, masked to the table.
    return (ix * 1u ^ iy * 2654435761u) & (table_size - 1u);
}

PlanarHashGrid::PlanarHashGrid(ParamStore& store, const std::string& name, Plane plane,
                               const HashGridConfig& cfg, std::mt19937& rng, float lr_mult)
    : cfg_(cfg), plane_(plane), name_(name) {
    if (cfg.level_count <= 0 || cfg.features_per_entry <= 0)
        throw ShapeError("hash grid needs positive level count and feature width");
    if (cfg.table_size_log2 < 1) throw ShapeError("hash table must hold at least 2 entries");
    if (!(cfg.per_level_scale > 1.0f)) throw DomainError("per_level_scale must exceed 1");
    for (int l = 0; l < cfg.level_count; ++l) {
        const std::string pname = name + ".level" + std::to_string(l);
        if (store.has(pname)) {
            tables_.push_back(store.handle(pname));
        } else {
            tables_.push_back(store.create_uniform(pname, {cfg.table_size(), cfg.features_per_entry},
                                                   -1e-4f, 1e-4f, rng, lr_mult));
        }
    }
}

std::uint32_t PlanarHashGrid::corner_index(int level, std::uint32_t ix, std::uint32_t iy) const {
    const int res = cfg_.level_resolution(level);
    const std::uint32_t verts = static_cast<std::uint32_t>(res) + 1u;
    if (verts * verts <= static_cast<std::uint32_t>(cfg_.table_size())) {
        return iy * verts + ix;  // dense level, no collisions
    }
    return spatial_hash(ix, iy, static_cast<std::uint32_t>(cfg_.table_size()));
}

namespace {

struct CellFoot {
    std::uint32_t i0, j0;
    float fu, fv;
};

CellFoot cell_foot(float u, int res) {
    const float p = u * static_cast<float>(res);
    int i0 = static_cast<int>(std::floor(p));
    if (i0 > res - 1) i0 = res - 1;
    if (i0 < 0) i0 = 0;
    return {static_cast<std::uint32_t>(i0), 0u, p - static_cast<float>(i0), 0.0f};
}

}  // namespace

void PlanarHashGrid::encode(const ParamStore& store, float u, float v, float* out) const {
    if (!(u >= 0.0f && u <= 1.0f && v >= 0.0f && v <= 1.0f))
        throw DomainError("plane " + std::string(plane_name(plane_)) + " query outside unit square");
    const int F = cfg_.features_per_entry;
    for (int l = 0; l < cfg_.level_count; ++l) {
        const int res = cfg_.level_resolution(l);
        const CellFoot cu = cell_foot(u, res);
        const CellFoot cv = cell_foot(v, res);
        const float w00 = (1.0f - cu.fu) * (1.0f - cv.fu);
        const float w10 = cu.fu * (1.0f - cv.fu);
        const float w01 = (1.0f - cu.fu) * cv.fu;
        const float w11 = cu.fu * cv.fu;
        const Param& table = store.at(tables_[static_cast<std::size_t>(l)]);
        const float* t00 = table.value.data() + static_cast<std::size_t>(corner_index(l, cu.i0, cv.i0)) * F;
        const float* t10 = table.value.data() + static_cast<std::size_t>(corner_index(l, cu.i0 + 1, cv.i0)) * F;
        const float* t01 = table.value.data() + static_cast<std::size_t>(corner_index(l, cu.i0, cv.i0 + 1)) * F;
        const float* t11 = table.value.data() + static_cast<std::size_t>(corner_index(l, cu.i0 + 1, cv.i0 + 1)) * F;
        float* o = out + static_cast<std::size_t>(l) * F;
        for (int f = 0; f < F; ++f)
            o[f] = w00 * t00[f] + w10 * t10[f] + w01 * t01[f] + w11 * t11[f];
    }
}

void PlanarHashGrid::encode_backward(ParamStore& store, float u, float v, const float* upstream,
                                     int upstream_width) const {
    if (upstream_width != output_width())
        throw ShapeError("plane backward upstream width " + std::to_string(upstream_width) +
                         " != " + std::to_string(output_width()));
    if (!(u >= 0.0f && u <= 1.0f && v >= 0.0f && v <= 1.0f))
        throw DomainError("plane " + std::string(plane_name(plane_)) + " query outside unit square");
    const int F = cfg_.features_per_entry;
    for (int l = 0; l < cfg_.level_count; ++l) {
        const int res = cfg_.level_resolution(l);
        const CellFoot cu = cell_foot(u, res);
        const CellFoot cv = cell_foot(v, res);
        const float w00 = (1.0f - cu.fu) * (1.0f - cv.fu);
        const float w10 = cu.fu * (1.0f - cv.fu);
        const float w01 = (1.0f - cu.fu) * cv.fu;
        const float w11 = cu.fu * cv.fu;
        Param& table = store.at(tables_[static_cast<std::size_t>(l)]);
        float* g00 = table.grad.data() + static_cast<std::size_t>(corner_index(l, cu.i0, cv.i0)) * F;
        float* g10 = table.grad.data() + static_cast<std::size_t>(corner_index(l, cu.i0 + 1, cv.i0)) * F;
        float* g01 = table.grad.data() + static_cast<std::size_t>(corner_index(l, cu.i0, cv.i0 + 1)) * F;
        float* g11 = table.grad.data() + static_cast<std::size_t>(corner_index(l, cu.i0 + 1, cv.i0 + 1)) * F;
        const float* up = upstream + static_cast<std::size_t>(l) * F;
        for (int f = 0; f < F; ++f) {
            g00[f] += w00 * up[f];
            g10[f] += w10 * up[f];
            g01[f] += w01 * up[f];
            g11[f] += w11 * up[f];
        }
    }
}

namespace {
std::string plane_param_name(const std::string& owner, const char* plane) {
    return owner.empty() ? std::string("plane_") + plane : owner + ".plane_" + plane;
}
}  // namespace

TriplaneEncoder::TriplaneEncoder(ParamStore& store, const std::string& name,
                                 const HashGridConfig& cfg, std::mt19937& rng, float lr_mult)
    : xy_(store, plane_param_name(name, "XY"), Plane::XY, cfg, rng, lr_mult),
      yz_(store, plane_param_name(name, "YZ"), Plane::YZ, cfg, rng, lr_mult),
      xz_(store, plane_param_name(name, "XZ"), Plane::XZ, cfg, rng, lr_mult) {}

void TriplaneEncoder::encode(const ParamStore& store, const std::array<float, 3>& x,
                             float* out) const {
    for (float c : x) {
        if (!(c >= 0.0f && c <= 1.0f)) throw DomainError("triplane query outside unit cube");
    }
    const int w = xy_.output_width();
    xy_.encode(store, x[0], x[1], out);
    yz_.encode(store, x[1], x[2], out + w);
    xz_.encode(store, x[0], x[2], out + 2 * w);
}

void TriplaneEncoder::encode_backward(ParamStore& store, const std::array<float, 3>& x,
                                      const float* upstream, int upstream_width) const {
    if (upstream_width != output_width())
        throw ShapeError("triplane backward upstream width " + std::to_string(upstream_width) +
                         " != " + std::to_string(output_width()));
    const int w = xy_.output_width();
    xy_.encode_backward(store, x[0], x[1], upstream, w);
    yz_.encode_backward(store, x[1], x[2], upstream + w, w);
    xz_.encode_backward(store, x[0], x[2], upstream + 2 * w, w);
}

const PlanarHashGrid& TriplaneEncoder::plane(Plane p) const {
    switch (p) {
        case Plane::XY: return xy_;
        case Plane::YZ: return yz_;
        case Plane::XZ: return xz_;
    }
    return xy_;
}

}  // namespace portrait
