#pragma once

// Gradient-check cases shared by the unit tests and the acceptance binary.

#include <cstdint>
#include <string>
#include <vector>

#include "imspeech/adnn.hpp"
#include "imspeech/nn/layers.hpp"
#include "imspeech/nn/optim.hpp"
#include "imspeech/rng.hpp"

namespace imspeech::testing {

struct GradCase {
    std::string name;
    nn::LayerStack layers;
    nn::Shape sample;  // per-sample input shape
    std::size_t batch;
    nn::Mode mode;
};

inline std::vector<GradCase> layer_cases() {
    using namespace nn;
    return {
        {"Conv2d same", {{Conv2d{3, 2, 3, PadMode::Same, true}}}, {2, 4, 6}, 2, Mode::Train},
        {"Conv2d valid", {{Conv2d{5, 3, 2, PadMode::Valid, false}}}, {2, 5, 7}, 2, Mode::Train},
        {"DepthwiseConv2d", {{DepthwiseConv2d{2, 3, 1, PadMode::Valid}}}, {2, 3, 5}, 2, Mode::Train},
        {"SeparableConv2d", {{SeparableConv2d{1, 4, 3, PadMode::Same}}}, {2, 1, 9}, 2, Mode::Train},
        {"BatchNorm train", {{BatchNorm{}}}, {3, 2, 4}, 4, Mode::Train},
        {"BatchNorm eval", {{BatchNorm{}}}, {3, 2, 4}, 2, Mode::Eval},
        {"Elu", {{Linear{5}}, {Elu{}}}, {4}, 3, Mode::Train},
        {"AvgPool", {{AvgPool{1, 3}}}, {2, 2, 9}, 2, Mode::Train},
        {"Dropout", {{Linear{6}}, {Dropout{0.3}}}, {5}, 3, Mode::Train},
        {"Flatten", {{Conv2d{2, 1, 2, PadMode::Same}}, {Flatten{}}, {Linear{3}}}, {1, 2, 4}, 2, Mode::Train},
        {"Linear", {{Linear{4}}}, {3, 5}, 2, Mode::Train},
        {"LayerNorm", {{LayerNorm{}}}, {3, 6}, 2, Mode::Train},
        {"MultiHeadAttention", {{MultiHeadAttention{6, 2}}}, {5, 6}, 2, Mode::Train},
        {"FeedForward", {{FeedForward{7}}}, {4, 6}, 2, Mode::Train},
        {"Softmax", {{Linear{4}}, {Softmax{}}}, {5}, 3, Mode::Train},
        {"ToTokens", {{ToTokens{}}, {Linear{2}}}, {3, 1, 5}, 2, Mode::Train},
        {"PositionalEmbedding", {{PositionalEmbedding{}}}, {4, 3}, 2, Mode::Train},
        {"Residual", {{Residual{{{LayerNorm{}}, {MultiHeadAttention{4, 2}}}}}}, {5, 4}, 2, Mode::Train},
    };
}

/// A tiny ADNN small enough for finite differences over every weight.
inline AdnnConfig tiny_adnn_config(std::uint64_t seed = 0) {
    AdnnConfig c;
    c.channels = 4;
    c.samples = 64;
    c.n_classes = 4;
    c.f1 = 2;
    c.depth = 2;
    c.f2 = 4;
    c.temporal_kernel = 8;
    c.separable_kernel = 4;
    c.pool1 = 4;
    c.pool2 = 2;
    c.attention.d_model = 4;
    c.attention.heads = 2;
    c.attention.ffn_hidden = 8;
    c.seed = seed;
    return c;
}

inline GradCase tiny_adnn_case() {
    const auto c = tiny_adnn_config();
    return {"tiny ADNN", build_adnn(c), {1, c.channels, c.samples}, 3, nn::Mode::Train};
}

inline nn::Tensor<double> random_input(const nn::Shape& sample, std::size_t batch, std::uint64_t seed) {
    nn::Shape s{batch};
    s.insert(s.end(), sample.begin(), sample.end());
    nn::Tensor<double> t(s, 0.0);
    Rng rng(Rng::derive(seed, 0x1e57));
    for (auto& v : t.data) v = rng.normal();
    return t;
}

/// Runs the central-difference check for one case and seed. Parameters are
/// perturbed away from their initial values so zero-initialised biases and
/// unit gains are exercised too.
inline nn::GradCheckResult run_grad_case(const GradCase& g, std::uint64_t seed) {
    auto store = nn::init_params<double>(g.layers, g.sample, seed);
    Rng rng(Rng::derive(seed, 0x9e7));
    for (auto& [_, t] : store.params)
        for (auto& v : t.data) v += 0.1 * rng.normal();
    return nn::gradient_check(g.layers, store, random_input(g.sample, g.batch, seed), g.mode, seed);
}

}  // namespace imspeech::testing
