#pragma once

#include <array>
#include <functional>
#include <random>
#include <vector>

#include "portrait/camera.hpp"
#include "portrait/field.hpp"
#include "portrait/image.hpp"

namespace portrait {

struct RaySamples {
    std::vector<float> t;       // strictly increasing in [t_near, t_far]
    std::vector<float> delta;   // segment lengths; last one reaches t_far
    std::vector<FieldOutput> outputs;
};

// n stratified t-values over [t_near, t_far]: one uniform draw per equal
// bin when jitter is on, bin midpoints otherwise.
std::vector<float> stratified_sample(const Ray& ray, int n, bool jitter, std::mt19937& rng);

// Segment lengths for sorted sample positions; the last segment extends to
// t_far.
std::vector<float> segment_lengths(const std::vector<float>& t, float t_far);

struct CompositeResult {
    std::array<float, 3> pixel{};
    float opacity = 0.0f;
    std::vector<float> transmittance;  // T_i before each sample; size n+1, last is T_final
    std::vector<float> weights;
};

// Discrete quadrature: alpha_i = 1 - exp(-sigma_i delta_i), w_i = T_i
// alpha_i, pixel = sum w_i c_i + T_final * background.
CompositeResult composite(const RaySamples& samples, const std::array<float, 3>& background);

// Gradients of the composited pixel w.r.t. per-sample sigma and color.
// d_pixel is dL/dpixel; outputs are resized to the sample count.
void composite_backward(const RaySamples& samples, const std::array<float, 3>& background,
                        const std::array<float, 3>& d_pixel, std::vector<float>& d_sigma,
                        std::vector<std::array<float, 3>>& d_color);

using FieldFn = std::function<FieldOutput(const std::array<float, 3>& pos,
                                          const std::array<float, 3>& dir)>;

struct RenderOptions {
    int n_samples = 128;
    bool jitter = false;
    std::uint32_t seed = 0;
    std::array<float, 3> background{0.0f, 0.0f, 0.0f};
};

// Per-pixel ray generation, sampling, field evaluation and compositing.
// Deterministic for a fixed seed; row-major traversal.
Image render_image(const Camera& cam, const std::array<float, 3>& dir_scale, const FieldFn& field,
                   const RenderOptions& opts);

}  // namespace portrait
