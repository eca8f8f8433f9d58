#include "portrait/render.hpp"

#include <cmath>
#include <string>

#include "portrait/errors.hpp"

namespace portrait {

std::vector<float> stratified_sample(const Ray& ray, int n, bool jitter, std::mt19937& rng) {
    if (n < 2) throw DomainError("stratified_sample needs n >= 2");
    if (!(ray.t_near < ray.t_far)) throw DomainError("empty t-range in stratified_sample");
    std::vector<float> t(static_cast<std::size_t>(n));
    const float span = (ray.t_far - ray.t_near) / static_cast<float>(n);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    for (int i = 0; i < n; ++i) {
        const float u = jitter ? dist(rng) : 0.5f;
        t[static_cast<std::size_t>(i)] = ray.t_near + (static_cast<float>(i) + u) * span;
    }
    return t;
}

std::vector<float> segment_lengths(const std::vector<float>& t, float t_far) {
    std::vector<float> delta(t.size());
    for (std::size_t i = 0; i + 1 < t.size(); ++i) delta[i] = t[i + 1] - t[i];
    if (!t.empty()) delta.back() = t_far - t.back();
    return delta;
}

CompositeResult composite(const RaySamples& samples, const std::array<float, 3>& background) {
    const std::size_t n = samples.outputs.size();
    if (samples.delta.size() != n) throw ShapeError("composite: delta/outputs length mismatch");
    CompositeResult res;
    res.transmittance.resize(n + 1);
    res.weights.resize(n);
    float T = 1.0f;
    for (std::size_t i = 0; i < n; ++i) {
        const FieldOutput& s = samples.outputs[i];
        if (!std::isfinite(s.sigma) || !std::isfinite(s.color[0]) || !std::isfinite(s.color[1]) ||
            !std::isfinite(s.color[2]))
            throw NumericError("non-finite field output at sample " + std::to_string(i));
        res.transmittance[i] = T;
        const float alpha = 1.0f - std::exp(-s.sigma * samples.delta[i]);
        const float w = T * alpha;
        res.weights[i] = w;
        for (int c = 0; c < 3; ++c) res.pixel[static_cast<std::size_t>(c)] += w * s.color[static_cast<std::size_t>(c)];
        res.opacity += w;
        T *= 1.0f - alpha;
    }
    res.transmittance[n] = T;
    for (int c = 0; c < 3; ++c) res.pixel[static_cast<std::size_t>(c)] += T * background[static_cast<std::size_t>(c)];
    return res;
}

void composite_backward(const RaySamples& samples, const std::array<float, 3>& background,
                        const std::array<float, 3>& d_pixel, std::vector<float>& d_sigma,
                        std::vector<std::array<float, 3>>& d_color) {
    const std::size_t n = samples.outputs.size();
    d_sigma.assign(n, 0.0f);
    d_color.assign(n, {0.0f, 0.0f, 0.0f});

    // forward pass for T_i
    std::vector<float> T(n + 1);
    std::vector<float> alpha(n);
    float acc = 1.0f;
    for (std::size_t i = 0; i < n; ++i) {
        T[i] = acc;
        alpha[i] = 1.0f - std::exp(-samples.outputs[i].sigma * samples.delta[i]);
        acc *= 1.0f - alpha[i];
    }
    T[n] = acc;

    // suffix[i][c] = sum_{j>i} w_j c_j + T_final * bg, built in reverse.
    std::array<float, 3> suffix{T[n] * background[0], T[n] * background[1], T[n] * background[2]};
    for (std::size_t ii = n; ii-- > 0;) {
        const float w = T[ii] * alpha[ii];
        const float one_minus = 1.0f - alpha[ii];
        float dsig = 0.0f;
        for (int c = 0; c < 3; ++c) {
            const float up = d_pixel[static_cast<std::size_t>(c)];
            d_color[ii][static_cast<std::size_t>(c)] = up * w;
            // d pixel / d sigma_i = delta_i * (T_i c_i (1-alpha_i) - suffix_i)
            dsig += up * samples.delta[ii] *
                    (T[ii] * samples.outputs[ii].color[static_cast<std::size_t>(c)] * one_minus -
                     suffix[static_cast<std::size_t>(c)]);
        }
        d_sigma[ii] = dsig;
        for (int c = 0; c < 3; ++c)
            suffix[static_cast<std::size_t>(c)] +=
                w * samples.outputs[ii].color[static_cast<std::size_t>(c)];
    }
}

Image render_image(const Camera& cam, const std::array<float, 3>& dir_scale, const FieldFn& field,
                   const RenderOptions& opts) {
    cam.validate();
    Image img(cam.width, cam.height);
    std::mt19937 rng(opts.seed);
    RaySamples samples;
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            try {
                const Ray ray = generate_ray(cam, x, y, dir_scale);
                float* px = img.at(x, y);
                if (!ray.hits_scene) {
                    for (int c = 0; c < 3; ++c) px[c] = opts.background[static_cast<std::size_t>(c)];
                    continue;
                }
                samples.t = stratified_sample(ray, opts.n_samples, opts.jitter, rng);
                samples.delta = segment_lengths(samples.t, ray.t_far);
                samples.outputs.resize(samples.t.size());
                for (std::size_t i = 0; i < samples.t.size(); ++i) {
                    const float tt = samples.t[i];
                    const std::array<float, 3> pos{ray.origin[0] + tt * ray.dir[0],
                                                  ray.origin[1] + tt * ray.dir[1],
                                                  ray.origin[2] + tt * ray.dir[2]};
                    samples.outputs[i] = field(pos, ray.dir);
                }
                const CompositeResult res = composite(samples, opts.background);
                for (int c = 0; c < 3; ++c) px[c] = res.pixel[static_cast<std::size_t>(c)];
            } catch (const std::exception& e) {
                throw NumericError("pixel (" + std::to_string(x) + "," + std::to_string(y) +
                                   "): " + e.what());
            }
        }
    }
    return img;
}

}  // namespace portrait
