#pragma once

#include <string>
#include <vector>

namespace portrait {

// Row-major RGB float image, values nominally in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;  // 3 * width * height

    Image() = default;
    Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(3 * w * h), 0.0f) {}

    float* at(int x, int y) { return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
    const float* at(int x, int y) const {
        return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
    }
};

// 8-bit-per-channel RGB PNG.
void write_png(const Image& img, const std::string& path);
Image read_png(const std::string& path);

// Raw float32 dump: magic "PIMG", u32 width, u32 height, little-endian
// row-major RGB payload.
void write_raw(const Image& img, const std::string& path);
Image read_raw(const std::string& path);

}  // namespace portrait
