#include "portrait/mlp.hpp"

#include <cmath>

#include "portrait/errors.hpp"

namespace portrait {

namespace {

float apply_act(Activation a, float x) {
    switch (a) {
        case Activation::Identity: return x;
        case Activation::Relu: return x > 0.0f ? x : 0.0f;
        case Activation::Sigmoid: return 1.0f / (1.0f + std::exp(-x));
        case Activation::Softplus: return x > 20.0f ? x : std::log1p(std::exp(x));
    }
    return x;
}

// Derivative in terms of the pre-activation x.
float act_grad(Activation a, float x) {
    switch (a) {
        case Activation::Identity: return 1.0f;
        case Activation::Relu: return x > 0.0f ? 1.0f : 0.0f;
        case Activation::Sigmoid: {
            const float s = 1.0f / (1.0f + std::exp(-x));
            return s * (1.0f - s);
        }
        case Activation::Softplus: return 1.0f / (1.0f + std::exp(-x));
    }
    return 1.0f;
}

}  // namespace

Mlp::Mlp(ParamStore& store, std::string prefix, std::vector<int> widths, Activation out_act,
         std::mt19937& rng, float lr_mult)
    : prefix_(std::move(prefix)), widths_(std::move(widths)), out_act_(out_act) {
    if (widths_.size() < 2) throw ShapeError("mlp needs at least one layer: " + prefix_);
    for (int w : widths_) {
        if (w <= 0) throw ShapeError("non-positive layer width in " + prefix_);
    }
    for (int l = 0; l + 1 < static_cast<int>(widths_.size()); ++l) {
        const int fan_in = widths_[static_cast<std::size_t>(l)];
        const int fan_out = widths_[static_cast<std::size_t>(l) + 1];
        const std::string wn = prefix_ + ".w" + std::to_string(l);
        const std::string bn = prefix_ + ".b" + std::to_string(l);
        if (store.has(wn)) {
            w_.push_back(store.handle(wn));
            b_.push_back(store.handle(bn));
        } else {
            const float bound = glorot_bound(fan_in, fan_out);
            w_.push_back(store.create_uniform(wn, {fan_out, fan_in}, -bound, bound, rng, lr_mult));
            b_.push_back(store.create(bn, {fan_out}, lr_mult));
        }
    }
}

void Mlp::forward(const ParamStore& store, const float* in, int in_width, Cache& cache) const {
    if (in_width != widths_.front())
        throw ShapeError("mlp " + prefix_ + " layer 0 expects input width " +
                         std::to_string(widths_.front()) + ", got " + std::to_string(in_width));
    const int L = layer_count();
    cache.input.assign(in, in + in_width);
    cache.pre.resize(static_cast<std::size_t>(L));
    cache.post.resize(static_cast<std::size_t>(L));

    const float* x = in;
    for (int l = 0; l < L; ++l) {
        const Param& W = store.at(w_[static_cast<std::size_t>(l)]);
        const Param& B = store.at(b_[static_cast<std::size_t>(l)]);
        const int n_in = widths_[static_cast<std::size_t>(l)];
        const int n_out = widths_[static_cast<std::size_t>(l) + 1];
        auto& pre = cache.pre[static_cast<std::size_t>(l)];
        auto& post = cache.post[static_cast<std::size_t>(l)];
        pre.resize(static_cast<std::size_t>(n_out));
        post.resize(static_cast<std::size_t>(n_out));
        const Activation act = (l == L - 1) ? out_act_ : Activation::Relu;
        for (int o = 0; o < n_out; ++o) {
            const float* wrow = W.value.data() + static_cast<std::size_t>(o) * n_in;
            float s = B.value[static_cast<std::size_t>(o)];
            for (int i = 0; i < n_in; ++i) s += wrow[i] * x[i];
            pre[static_cast<std::size_t>(o)] = s;
            post[static_cast<std::size_t>(o)] = apply_act(act, s);
        }
        x = post.data();
    }
    cache.valid = true;
}

std::vector<float> Mlp::forward(const ParamStore& store, const std::vector<float>& in) {
    forward(store, in.data(), static_cast<int>(in.size()), state_);
    return state_.post.back();
}

void Mlp::backward(ParamStore& store, const Cache& cache, const float* upstream, int up_width,
                   float* in_grad) const {
    if (!cache.valid) throw StateError("mlp " + prefix_ + " backward without prior forward");
    if (up_width != widths_.back())
        throw ShapeError("mlp " + prefix_ + " upstream width " + std::to_string(up_width) +
                         " != output width " + std::to_string(widths_.back()));
    const int L = layer_count();

    std::vector<float> delta(upstream, upstream + up_width);
    std::vector<float> next;
    for (int l = L - 1; l >= 0; --l) {
        Param& W = store.at(w_[static_cast<std::size_t>(l)]);
        Param& B = store.at(b_[static_cast<std::size_t>(l)]);
        const int n_in = widths_[static_cast<std::size_t>(l)];
        const int n_out = widths_[static_cast<std::size_t>(l) + 1];
        const Activation act = (l == L - 1) ? out_act_ : Activation::Relu;
        const auto& pre = cache.pre[static_cast<std::size_t>(l)];
        const float* x = (l == 0) ? cache.input.data() : cache.post[static_cast<std::size_t>(l) - 1].data();

        // through the activation
        for (int o = 0; o < n_out; ++o)
            delta[static_cast<std::size_t>(o)] *= act_grad(act, pre[static_cast<std::size_t>(o)]);

        next.assign(static_cast<std::size_t>(n_in), 0.0f);
        for (int o = 0; o < n_out; ++o) {
            const float d = delta[static_cast<std::size_t>(o)];
            const float* wrow = W.value.data() + static_cast<std::size_t>(o) * n_in;
            float* grow = W.grad.data() + static_cast<std::size_t>(o) * n_in;
            B.grad[static_cast<std::size_t>(o)] += d;
            for (int i = 0; i < n_in; ++i) {
                grow[i] += d * x[i];
                next[static_cast<std::size_t>(i)] += d * wrow[i];
            }
        }
        delta.swap(next);
    }
    if (in_grad) {
        for (int i = 0; i < widths_.front(); ++i) in_grad[i] = delta[static_cast<std::size_t>(i)];
    }
}

std::vector<float> Mlp::backward(ParamStore& store, const std::vector<float>& upstream) {
    std::vector<float> in_grad(static_cast<std::size_t>(input_width()));
    backward(store, state_, upstream.data(), static_cast<int>(upstream.size()), in_grad.data());
    return in_grad;
}

const std::vector<float>& Mlp::hidden(const Cache& cache) const {
    if (!cache.valid) throw StateError("mlp " + prefix_ + " hidden() without prior forward");
    if (layer_count() < 2) throw StateError("mlp " + prefix_ + " has no hidden layer");
    return cache.post[static_cast<std::size_t>(layer_count()) - 2];
}

void Mlp::set_output_bias(ParamStore& store, const std::vector<float>& bias) const {
    Param& B = store.at(b_.back());
    if (bias.size() != B.size()) throw ShapeError("output bias width mismatch in " + prefix_);
    B.value = bias;
}

void Mlp::zero_all(ParamStore& store) const {
    for (int h : w_) std::fill(store.at(h).value.begin(), store.at(h).value.end(), 0.0f);
    for (int h : b_) std::fill(store.at(h).value.begin(), store.at(h).value.end(), 0.0f);
}

}  // namespace portrait
