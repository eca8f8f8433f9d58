#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace portrait {

// One named learnable array plus its gradient and Adam moment buffers.
struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<float> value;
    std::vector<float> grad;
    std::vector<float> m;   // first moment
    std::vector<float> v;   // second moment
    float lr_mult = 1.0f;   // per-group learning-rate multiplier
    bool trainable = true;

    std::size_t size() const { return value.size(); }
};

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// Flat container for every learnable parameter in the system. Creation
// order is stable, so integer handles stay valid for the store's lifetime.
class ParamStore {
public:
    // Zero-initialized parameter. Throws if the name already exists.
    int create(const std::string& name, std::vector<int> shape, float lr_mult = 1.0f);

    // Uniform init in [lo, hi] from the caller's generator.
    int create_uniform(const std::string& name, std::vector<int> shape, float lo, float hi,
                       std::mt19937& rng, float lr_mult = 1.0f);

    Param& at(int handle) { return params_[static_cast<std::size_t>(handle)]; }
    const Param& at(int handle) const { return params_[static_cast<std::size_t>(handle)]; }
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    int handle(const std::string& name) const;

    std::size_t count() const { return params_.size(); }
    std::size_t scalar_count() const;
    std::int64_t step() const { return step_; }

    void zero_grad();

    // Bias-corrected Adam on every trainable parameter; zeroes gradients
    // afterwards and advances the step counter by one. Throws NumericError
    // naming the parameter if any gradient is non-finite.
    void adam_step(const AdamConfig& cfg);

    // Little-endian binary checkpoint; value payloads only. Round-trips
    // bit-exactly.
    void save(const std::string& path) const;
    void load(const std::string& path);

    // FNV-1a over all value bytes, in creation order. Used to verify that
    // frozen parameters never move.
    std::uint64_t value_hash() const;

    const std::vector<Param>& params() const { return params_; }

private:
    std::vector<Param> params_;
    std::unordered_map<std::string, int> index_;
    std::int64_t step_ = 0;
};

// Glorot-style uniform bound sqrt(6 / (fan_in + fan_out)).
float glorot_bound(int fan_in, int fan_out);

}  // namespace portrait
