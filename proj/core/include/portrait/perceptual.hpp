#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "portrait/image.hpp"

namespace portrait {

// Frozen random-convolution feature distance used as the perceptual term
// of the fine loss. Three stride-2 3x3 conv layers with ReLU; the distance
// is a weighted mean-squared feature difference per layer, plus a small
// raw-pixel term so it vanishes only on identical inputs. The weights are
// seeded once and never trained.
class PerceptualMetric {
public:
    explicit PerceptualMetric(std::uint32_t seed = 77);

    float distance(const Image& a, const Image& b) const;

    // Also computes d(distance)/d(a) into grad_a (same layout as a.pixels).
    float distance_with_grad(const Image& a, const Image& b, Image& grad_a) const;

    // Hash over all frozen weights; constant for the metric's lifetime.
    std::uint64_t weight_hash() const;

    const std::array<float, 4>& layer_weights() const { return layer_weights_; }

private:
    struct Conv {
        int in_ch = 0, out_ch = 0;
        std::vector<float> w;  // out*in*3*3
    };
    std::array<Conv, 3> convs_;
    std::array<float, 4> layer_weights_{0.1f, 1.0f, 1.0f, 1.0f};  // pixels, conv1..3
};

}  // namespace portrait
