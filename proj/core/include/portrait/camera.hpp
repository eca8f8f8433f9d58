#pragma once

#include <array>

namespace portrait {

// Affine map between world units and the unit-cube scene space:
// unit = scale * world + offset (per axis).
struct SceneMap {
    std::array<float, 3> scale{1.0f, 1.0f, 1.0f};
    std::array<float, 3> offset{0.0f, 0.0f, 0.0f};

    std::array<float, 3> to_unit(const std::array<float, 3>& p) const {
        return {scale[0] * p[0] + offset[0], scale[1] * p[1] + offset[1], scale[2] * p[2] + offset[2]};
    }
    std::array<float, 3> to_world(const std::array<float, 3>& p) const {
        return {(p[0] - offset[0]) / scale[0], (p[1] - offset[1]) / scale[1],
                (p[2] - offset[2]) / scale[2]};
    }
};

// Right-handed pinhole camera looking down -z, y up; pose is
// camera-to-world.
struct Camera {
    float fx = 0.0f, fy = 0.0f, cx = 0.0f, cy = 0.0f;
    std::array<float, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
    std::array<float, 3> translation{0, 0, 0};
    int width = 0, height = 0;

    // Throws DomainError unless rotation is orthonormal within 1e-5 and
    // fx, fy are positive.
    void validate() const;
};

struct Ray {
    std::array<float, 3> origin{};
    std::array<float, 3> dir{};  // unit
    float t_near = 0.0f;
    float t_far = 0.0f;
    bool hits_scene = false;  // false when the ray misses the unit cube
};

// Ray through the pixel center, with the t-range from intersecting the
// unit-cube scene bounds. The camera is expected to live in unit-cube
// space already; dir_scale compensates for anisotropic scene
// normalization (identity when the normalization is uniform).
Ray generate_ray(const Camera& cam, int px, int py,
                 const std::array<float, 3>& dir_scale = {1.0f, 1.0f, 1.0f});

// Pinhole projection of a point (same space as the camera pose) to pixel
// coordinates. Throws DomainError when the point is not in front of the
// camera.
std::array<float, 2> project_point(const Camera& cam, const std::array<float, 3>& p);

}  // namespace portrait
