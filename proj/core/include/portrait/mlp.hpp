#pragma once

#include <random>
#include <string>
#include <vector>

#include "portrait/tensor.hpp"

namespace portrait {

enum class Activation { Identity, Relu, Sigmoid, Softplus };

// Fixed-topology fully connected network. Hidden layers are ReLU; the
// output activation is chosen at construction. Parameters live in a
// ParamStore under "<prefix>.w<l>" / "<prefix>.b<l>".
//
// Forward/backward through an explicit Cache is re-entrant and safe for
// concurrent read-only evaluation; the stateful convenience overloads keep
// one internal cache and are single-caller only.
class Mlp {
public:
    struct Cache {
        std::vector<float> input;
        std::vector<std::vector<float>> pre;   // pre-activations per layer
        std::vector<std::vector<float>> post;  // post-activations per layer
        bool valid = false;
    };

    Mlp() = default;

    // Creates (or reattaches to) parameters in the store. Fresh weights get
    // Glorot-uniform init from rng; biases start at zero.
    Mlp(ParamStore& store, std::string prefix, std::vector<int> widths, Activation out_act,
        std::mt19937& rng, float lr_mult = 1.0f);

    int input_width() const { return widths_.front(); }
    int output_width() const { return widths_.back(); }
    int layer_count() const { return static_cast<int>(widths_.size()) - 1; }
    const std::string& prefix() const { return prefix_; }

    void forward(const ParamStore& store, const float* in, int in_width, Cache& cache) const;
    std::vector<float> forward(const ParamStore& store, const std::vector<float>& in);

    // Accumulates parameter gradients; writes dL/dinput into in_grad when
    // non-null (length input_width()).
    void backward(ParamStore& store, const Cache& cache, const float* upstream, int up_width,
                  float* in_grad) const;
    std::vector<float> backward(ParamStore& store, const std::vector<float>& upstream);

    // Post-activation of the last hidden layer from a forward cache.
    const std::vector<float>& hidden(const Cache& cache) const;

    void set_output_bias(ParamStore& store, const std::vector<float>& bias) const;
    void zero_all(ParamStore& store) const;

private:
    std::string prefix_;
    std::vector<int> widths_;
    Activation out_act_ = Activation::Identity;
    std::vector<int> w_;  // handles
    std::vector<int> b_;
    Cache state_;
};

}  // namespace portrait
