#include "portrait/perceptual.hpp"

#include <cmath>
#include <random>

#include "portrait/errors.hpp"

namespace portrait {

namespace {

struct FeatureMap {
    int ch = 0, w = 0, h = 0;
    std::vector<float> data;  // [c][y][x]

    void init(int c, int ww, int hh) {
        ch = c;
        w = ww;
        h = hh;
        data.assign(static_cast<std::size_t>(c) * ww * hh, 0.0f);
    }
    float& at(int c, int x, int y) {
        return data[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
    float at(int c, int x, int y) const {
        return data[(static_cast<std::size_t>(c) * h + y) * w + x];
    }
};

constexpr int kStride = 2;
constexpr int kPad = 1;

int out_size(int in) { return (in + 2 * kPad - 3) / kStride + 1; }

}  // namespace

PerceptualMetric::PerceptualMetric(std::uint32_t seed) {
    std::mt19937 rng(seed);
    const int channels[4] = {3, 8, 16, 16};
    for (int l = 0; l < 3; ++l) {
        Conv& c = convs_[static_cast<std::size_t>(l)];
        c.in_ch = channels[l];
        c.out_ch = channels[l + 1];
        const float std_dev = std::sqrt(2.0f / static_cast<float>(c.in_ch * 9));
        std::normal_distribution<float> dist(0.0f, std_dev);
        c.w.resize(static_cast<std::size_t>(c.out_ch) * c.in_ch * 9);
        for (float& x : c.w) x = dist(rng);
    }
}

namespace {

void conv_forward(const std::vector<float>& weights, int in_ch, int out_ch, const FeatureMap& in,
                  FeatureMap& pre, FeatureMap& post) {
    const int ow = out_size(in.w);
    const int oh = out_size(in.h);
    pre.init(out_ch, ow, oh);
    post.init(out_ch, ow, oh);
    for (int oc = 0; oc < out_ch; ++oc) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                float s = 0.0f;
                for (int ic = 0; ic < in_ch; ++ic) {
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = oy * kStride - kPad + ky;
                        if (iy < 0 || iy >= in.h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = ox * kStride - kPad + kx;
                            if (ix < 0 || ix >= in.w) continue;
                            s += weights[((static_cast<std::size_t>(oc) * in_ch + ic) * 3 + ky) * 3 + kx] *
                                 in.at(ic, ix, iy);
                        }
                    }
                }
                pre.at(oc, ox, oy) = s;
                post.at(oc, ox, oy) = s > 0.0f ? s : 0.0f;
            }
        }
    }
}

void conv_backward_input(const std::vector<float>& weights, int in_ch, int out_ch,
                         const FeatureMap& d_pre, FeatureMap& d_in) {
    for (int oc = 0; oc < out_ch; ++oc) {
        for (int oy = 0; oy < d_pre.h; ++oy) {
            for (int ox = 0; ox < d_pre.w; ++ox) {
                const float g = d_pre.at(oc, ox, oy);
                if (g == 0.0f) continue;
                for (int ic = 0; ic < in_ch; ++ic) {
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = oy * kStride - kPad + ky;
                        if (iy < 0 || iy >= d_in.h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = ox * kStride - kPad + kx;
                            if (ix < 0 || ix >= d_in.w) continue;
                            d_in.at(ic, ix, iy) +=
                                g * weights[((static_cast<std::size_t>(oc) * in_ch + ic) * 3 + ky) * 3 + kx];
                        }
                    }
                }
            }
        }
    }
}

FeatureMap image_to_map(const Image& img) {
    FeatureMap m;
    m.init(3, img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) m.at(c, x, y) = img.at(x, y)[c];
    return m;
}

}  // namespace

float PerceptualMetric::distance(const Image& a, const Image& b) const {
    Image unused;
    return distance_with_grad(a, b, unused);
}

float PerceptualMetric::distance_with_grad(const Image& a, const Image& b, Image& grad_a) const {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError("perceptual distance on images of different sizes");

    FeatureMap fa[4], fb[4], pre_a[4], pre_b[4];
    fa[0] = image_to_map(a);
    fb[0] = image_to_map(b);
    for (int l = 0; l < 3; ++l) {
        const Conv& c = convs_[static_cast<std::size_t>(l)];
        conv_forward(c.w, c.in_ch, c.out_ch, fa[l], pre_a[l + 1], fa[l + 1]);
        conv_forward(c.w, c.in_ch, c.out_ch, fb[l], pre_b[l + 1], fb[l + 1]);
    }

    float dist = 0.0f;
    FeatureMap up[4];
    for (int l = 0; l < 4; ++l) {
        const float n = static_cast<float>(fa[l].data.size());
        up[l].init(fa[l].ch, fa[l].w, fa[l].h);
        float acc = 0.0f;
        for (std::size_t i = 0; i < fa[l].data.size(); ++i) {
            const float d = fa[l].data[i] - fb[l].data[i];
            acc += d * d;
            up[l].data[i] = layer_weights_[static_cast<std::size_t>(l)] * 2.0f * d / n;
        }
        dist += layer_weights_[static_cast<std::size_t>(l)] * acc / n;
    }

    const bool want_grad = grad_a.width == a.width && grad_a.height == a.height;
    if (want_grad) {
        // back through the stack, deepest first
        FeatureMap d_f = up[3];
        for (int l = 2; l >= 0; --l) {
            const Conv& c = convs_[static_cast<std::size_t>(l)];
            // relu gate on layer l+1
            for (std::size_t i = 0; i < d_f.data.size(); ++i)
                if (pre_a[l + 1].data[i] <= 0.0f) d_f.data[i] = 0.0f;
            FeatureMap d_in;
            d_in.init(fa[l].ch, fa[l].w, fa[l].h);
            conv_backward_input(c.w, c.in_ch, c.out_ch, d_f, d_in);
            for (std::size_t i = 0; i < d_in.data.size(); ++i) d_in.data[i] += up[l].data[i];
            d_f = std::move(d_in);
        }
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < a.width; ++x)
                for (int ch = 0; ch < 3; ++ch) grad_a.at(x, y)[ch] = d_f.at(ch, x, y);
    }
    return dist;
}

std::uint64_t PerceptualMetric::weight_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const Conv& c : convs_) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(c.w.data());
        for (std::size_t i = 0; i < c.w.size() * sizeof(float); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    }
    return h;
}

}  // namespace portrait
