#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "portrait/tensor.hpp"

namespace portrait {

struct HashGridConfig {
    int level_count = 8;
    int features_per_entry = 2;
    int table_size_log2 = 14;
    int base_resolution = 16;
    float per_level_scale = 1.32f;

    int table_size() const { return 1 << table_size_log2; }
    int level_resolution(int level) const;
    int feature_width() const { return level_count * features_per_entry; }
};

enum class Plane { XY, YZ, XZ };

const char* plane_name(Plane p);

// Instant-NGP style spatial hash for 2D integer corners; table_size must be
// a power of two.
std::uint32_t spatial_hash(std::uint32_t ix, std::uint32_t iy, std::uint32_t table_size);

// One 2D multiresolution hash grid. Levels whose dense (res+1)^2 lattice
// fits in the table index densely instead of hashing.
class PlanarHashGrid {
public:
    PlanarHashGrid() = default;
    PlanarHashGrid(ParamStore& store, const std::string& name, Plane plane,
                   const HashGridConfig& cfg, std::mt19937& rng, float lr_mult = 1.0f);

    const HashGridConfig& config() const { return cfg_; }
    Plane plane() const { return plane_; }
    int output_width() const { return cfg_.feature_width(); }

    // Bilinear interpolation of corner embeddings, levels concatenated
    // coarse to fine. (u, v) must lie in the unit square.
    void encode(const ParamStore& store, float u, float v, float* out) const;

    // Deposits upstream gradient on the touched rows with bilinear weights.
    void encode_backward(ParamStore& store, float u, float v, const float* upstream,
                         int upstream_width) const;

    int table_handle(int level) const { return tables_[static_cast<std::size_t>(level)]; }

private:
    HashGridConfig cfg_;
    Plane plane_ = Plane::XY;
    std::string name_;
    std::vector<int> tables_;  // one handle per level

    std::uint32_t corner_index(int level, std::uint32_t ix, std::uint32_t iy) const;
};

// The three planar grids of one scene; output is XY || YZ || XZ.
class TriplaneEncoder {
public:
    TriplaneEncoder() = default;
    TriplaneEncoder(ParamStore& store, const std::string& name, const HashGridConfig& cfg,
                    std::mt19937& rng, float lr_mult = 1.0f);

    const HashGridConfig& config() const { return xy_.config(); }
    int output_width() const { return 3 * xy_.output_width(); }

    // x must lie in the unit cube.
    void encode(const ParamStore& store, const std::array<float, 3>& x, float* out) const;
    void encode_backward(ParamStore& store, const std::array<float, 3>& x, const float* upstream,
                         int upstream_width) const;

    const PlanarHashGrid& plane(Plane p) const;

private:
    PlanarHashGrid xy_, yz_, xz_;
};

}  // namespace portrait
