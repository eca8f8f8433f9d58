#include "portrait/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "portrait/errors.hpp"

namespace portrait {

namespace {

std::size_t shape_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in parameter shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

}  // namespace

float glorot_bound(int fan_in, int fan_out) {
    return std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
}

int ParamStore::create(const std::string& name, std::vector<int> shape, float lr_mult) {
    if (index_.count(name)) throw StateError("parameter already exists: " + name);
    Param p;
    p.name = name;
    p.shape = std::move(shape);
    const std::size_t n = shape_size(p.shape);
    p.value.assign(n, 0.0f);
    p.grad.assign(n, 0.0f);
    p.m.assign(n, 0.0f);
    p.v.assign(n, 0.0f);
    p.lr_mult = lr_mult;
    const int h = static_cast<int>(params_.size());
    params_.push_back(std::move(p));
    index_.emplace(name, h);
    return h;
}

int ParamStore::create_uniform(const std::string& name, std::vector<int> shape, float lo, float hi,
                               std::mt19937& rng, float lr_mult) {
    const int h = create(name, std::move(shape), lr_mult);
    std::uniform_real_distribution<float> dist(lo, hi);
    for (float& x : params_[static_cast<std::size_t>(h)].value) x = dist(rng);
    return h;
}

Param& ParamStore::at(const std::string& name) {
    const int h = handle(name);
    if (h < 0) throw StateError("unknown parameter: " + name);
    return params_[static_cast<std::size_t>(h)];
}

const Param& ParamStore::at(const std::string& name) const {
    const int h = handle(name);
    if (h < 0) throw StateError("unknown parameter: " + name);
    return params_[static_cast<std::size_t>(h)];
}

int ParamStore::handle(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const Param& p : params_) n += p.size();
    return n;
}

void ParamStore::zero_grad() {
    for (Param& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0f);
}

void ParamStore::adam_step(const AdamConfig& cfg) {
    if (!(cfg.lr > 0.0f)) throw DomainError("adam lr must be positive");
    if (!(cfg.beta1 > 0.0f && cfg.beta1 < 1.0f)) throw DomainError("adam beta1 outside (0,1)");
    if (!(cfg.beta2 > 0.0f && cfg.beta2 < 1.0f)) throw DomainError("adam beta2 outside (0,1)");
    if (!(cfg.eps > 0.0f)) throw DomainError("adam eps must be positive");

    for (const Param& p : params_) {
        if (!p.trainable) continue;
        for (float g : p.grad) {
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
        }
    }

    const std::int64_t t = step_ + 1;
    const float bc1 = 1.0f - static_cast<float>(std::pow(static_cast<double>(cfg.beta1), static_cast<double>(t)));
    const float bc2 = 1.0f - static_cast<float>(std::pow(static_cast<double>(cfg.beta2), static_cast<double>(t)));

    for (Param& p : params_) {
        if (!p.trainable) {
            std::fill(p.grad.begin(), p.grad.end(), 0.0f);
            continue;
        }
        const float lr = cfg.lr * p.lr_mult;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const float g = p.grad[i];
            p.m[i] = cfg.beta1 * p.m[i] + (1.0f - cfg.beta1) * g;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0f - cfg.beta2) * g * g;
            const float mhat = p.m[i] / bc1;
            const float vhat = p.v[i] / bc2;
            p.value[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
            p.grad[i] = 0.0f;
        }
    }
    step_ = t;
}

namespace {

constexpr char kMagic[8] = {'P', 'O', 'R', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& x) {
    out.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& x) {
    in.read(reinterpret_cast<char*>(&x), sizeof(T));
    if (!in) throw IoError("truncated checkpoint");
}

}  // namespace

void ParamStore::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::int64_t>(step_));
    write_pod(out, static_cast<std::uint32_t>(params_.size()));
    for (const Param& p : params_) {
        write_pod(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_pod(out, static_cast<std::uint32_t>(p.shape.size()));
        for (int d : p.shape) write_pod(out, static_cast<std::int32_t>(d));
        out.write(reinterpret_cast<const char*>(p.value.data()),
                  static_cast<std::streamsize>(p.value.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failure on checkpoint: " + path);
}

void ParamStore::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("bad checkpoint magic in " + path);
    std::uint32_t version = 0;
    read_pod(in, version);
    if (version != kVersion) throw IoError("unsupported checkpoint version in " + path);
    std::int64_t step = 0;
    read_pod(in, step);
    std::uint32_t count = 0;
    read_pod(in, count);
    for (std::uint32_t r = 0; r < count; ++r) {
        std::uint32_t name_len = 0;
        read_pod(in, name_len);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t ndim = 0;
        read_pod(in, ndim);
        std::vector<int> shape(ndim);
        for (std::uint32_t i = 0; i < ndim; ++i) {
            std::int32_t d = 0;
            read_pod(in, d);
            shape[i] = d;
        }
        std::size_t n = shape_size(shape);
        std::vector<float> values(n);
        in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(float)));
        if (!in) throw IoError("truncated checkpoint payload in " + path);

        int h = handle(name);
        if (h < 0) h = create(name, shape);
        Param& p = at(h);
        if (p.shape != shape) throw ShapeError("checkpoint shape mismatch for " + name);
        p.value = std::move(values);
    }
    step_ = step;
}

std::uint64_t ParamStore::value_hash() const {
    std::uint64_t h = 1469598103934665603ull;  // FNV offset basis
    for (const Param& p : params_) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
        for (std::size_t i = 0; i < p.value.size() * sizeof(float); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    }
    return h;
}

}  // namespace portrait
