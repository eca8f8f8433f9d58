#include "portrait/camera.hpp"

#include <cmath>
#include <string>

#include "portrait/errors.hpp"

namespace portrait {

void Camera::validate() const {
    if (!(fx > 0.0f && fy > 0.0f)) throw DomainError("camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw DomainError("camera image size must be positive");
    // R R^T == I within 1e-5
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            float s = 0.0f;
            for (int k = 0; k < 3; ++k)
                s += rotation[static_cast<std::size_t>(3 * r + k)] *
                     rotation[static_cast<std::size_t>(3 * c + k)];
            const float expect = (r == c) ? 1.0f : 0.0f;
            if (std::abs(s - expect) > 1e-5f)
                throw DomainError("camera rotation is not orthonormal within 1e-5");
        }
    }
}

Ray generate_ray(const Camera& cam, int px, int py, const std::array<float, 3>& dir_scale) {
    if (px < 0 || px >= cam.width || py < 0 || py >= cam.height)
        throw DomainError("pixel (" + std::to_string(px) + "," + std::to_string(py) +
                          ") outside image");

    // camera-space direction through the pixel center; looks down -z, y up
    const float xc = (static_cast<float>(px) + 0.5f - cam.cx) / cam.fx;
    const float yc = -((static_cast<float>(py) + 0.5f - cam.cy) / cam.fy);
    const float zc = -1.0f;

    std::array<float, 3> dw{};
    for (int r = 0; r < 3; ++r)
        dw[static_cast<std::size_t>(r)] = cam.rotation[static_cast<std::size_t>(3 * r)] * xc +
                                          cam.rotation[static_cast<std::size_t>(3 * r + 1)] * yc +
                                          cam.rotation[static_cast<std::size_t>(3 * r + 2)] * zc;

    Ray ray;
    ray.origin = cam.translation;
    std::array<float, 3> d{dir_scale[0] * dw[0], dir_scale[1] * dw[1], dir_scale[2] * dw[2]};
    const float n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    ray.dir = {d[0] / n, d[1] / n, d[2] / n};

    // slab intersection with [0,1]^3
    float t0 = 0.0f, t1 = 1e30f;
    bool miss = false;
    for (int a = 0; a < 3; ++a) {
        const float o = ray.origin[static_cast<std::size_t>(a)];
        const float dd = ray.dir[static_cast<std::size_t>(a)];
        if (std::abs(dd) < 1e-12f) {
            if (o < 0.0f || o > 1.0f) miss = true;
            continue;
        }
        float ta = (0.0f - o) / dd;
        float tb = (1.0f - o) / dd;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    // pull the range in slightly so float round-off never lands samples
    // outside the cube
    t0 += 1e-4f;
    t1 -= 1e-4f;
    if (!miss && t0 < t1) {
        ray.t_near = t0;
        ray.t_far = t1;
        ray.hits_scene = true;
    }
    return ray;
}

std::array<float, 2> project_point(const Camera& cam, const std::array<float, 3>& p) {
    // camera space: q = R^T (p - t)
    std::array<float, 3> d{p[0] - cam.translation[0], p[1] - cam.translation[1],
                           p[2] - cam.translation[2]};
    std::array<float, 3> q{};
    for (int c = 0; c < 3; ++c)
        q[static_cast<std::size_t>(c)] = cam.rotation[static_cast<std::size_t>(c)] * d[0] +
                                         cam.rotation[static_cast<std::size_t>(3 + c)] * d[1] +
                                         cam.rotation[static_cast<std::size_t>(6 + c)] * d[2];
    if (!(q[2] < -1e-9f)) throw DomainError("project_point: point behind the camera");
    return {cam.cx + cam.fx * (q[0] / -q[2]) - 0.5f, cam.cy - cam.fy * (q[1] / -q[2]) - 0.5f};
}

}  // namespace portrait
