#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "../error.hpp"
#include "../rng.hpp"
#include "ops.hpp"
#include "tape.hpp"

namespace imspeech::nn {

enum class PadMode { Same, Valid };
enum class Mode { Train, Eval };

struct Conv2d {
    std::size_t out_channels;
    std::size_t kh, kw;
    PadMode padding = PadMode::Same;
    bool bias = false;
};
struct DepthwiseConv2d {
    std::size_t multiplier;
    std::size_t kh, kw;
    PadMode padding = PadMode::Valid;
};
/// Depthwise (multiplier 1) then pointwise 1x1 mixing.
struct SeparableConv2d {
    std::size_t kh, kw;
    std::size_t out_channels;
    PadMode padding = PadMode::Same;
};
struct BatchNorm {
    double momentum = 0.1;
    double eps = 1e-5;
};
struct Elu {
    double alpha = 1.0;
};
struct AvgPool {
    std::size_t ph, pw;
};
struct Dropout {
    double p;
};
struct Flatten {};
/// Acts on the last axis.
struct Linear {
    std::size_t out;
    bool bias = true;
};
struct LayerNorm {
    double eps = 1e-5;
};
struct MultiHeadAttention {
    std::size_t d_model;
    std::size_t heads;
};
/// Linear(hidden) -> ELU -> Dropout -> Linear(d_model).
struct FeedForward {
    std::size_t hidden;
    double dropout = 0.0;
    double alpha = 1.0;
};
struct Softmax {};
/// [C, 1, T] feature map -> T tokens of dimension C.
struct ToTokens {};
/// Learned additive embedding with the shape of one token sequence.
struct PositionalEmbedding {};

struct LayerSpec;
/// x + body(x).
struct Residual {
    std::vector<LayerSpec> body;
};

struct LayerSpec {
    using Kind = std::variant<Conv2d, DepthwiseConv2d, SeparableConv2d, BatchNorm, Elu, AvgPool, Dropout, Flatten,
                              Linear, LayerNorm, MultiHeadAttention, FeedForward, Softmax, ToTokens,
                              PositionalEmbedding, Residual>;
    Kind kind;
    std::string name;  // parameter prefix; the layer index when empty

    template <class K>
    LayerSpec(K k, std::string n = {}) : kind(std::move(k)), name(std::move(n)) {}

    std::string type_name() const {
        static constexpr const char* names[] = {"Conv2d",    "DepthwiseConv2d",    "SeparableConv2d", "BatchNorm",
                                                "ELU",       "AvgPool",            "Dropout",         "Flatten",
                                                "Linear",    "LayerNorm",          "MultiHeadAttention", "FeedForward",
                                                "Softmax",   "ToTokens",           "PositionalEmbedding", "Residual"};
        return names[kind.index()];
    }
};

using LayerStack = std::vector<LayerSpec>;

/// Trainable parameters and non-trainable buffers (batch-norm running
/// statistics), keyed by "<layer>.<name>".
template <class T>
struct ParamStore {
    std::map<std::string, Tensor<T>> params;
    std::map<std::string, std::vector<T>> buffers;

    Tensor<T>& at(const std::string& name) {
        auto it = params.find(name);
        require(it != params.end(), ErrorKind::Shape, "missing parameter '" + name + "'");
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = params.find(name);
        require(it != params.end(), ErrorKind::Shape, "missing parameter '" + name + "'");
        return it->second;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : params) n += t.size();
        return n;
    }

    template <class U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [k, t] : params) out.params.emplace(k, t.template cast<U>());
        for (const auto& [k, b] : buffers) out.buffers.emplace(k, std::vector<U>(b.begin(), b.end()));
        return out;
    }
};

namespace layers_detail {

inline std::string prefix_of(const LayerSpec& l, std::size_t index, const std::string& parent) {
    return parent + (l.name.empty() ? std::to_string(index) : l.name) + ".";
}

inline Padding padding_for(PadMode mode, std::size_t kh, std::size_t kw) {
    return mode == PadMode::Same ? Padding::same(kh, kw) : Padding::valid();
}

inline std::size_t conv_out(std::size_t in, std::size_t k, PadMode mode) {
    if (mode == PadMode::Same) return in;
    return in >= k ? in - k + 1 : 0;
}

template <class F>
auto with_layer_context(std::size_t index, const LayerSpec& l, const std::string& parent, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        const std::string what = e.what();
        if (what.find("layer ") != std::string::npos) throw;
        throw Error(e.kind(), "layer " + parent + std::to_string(index) + " (" + l.type_name() + "): " + what);
    }
}

}  // namespace layers_detail

/// Per-sample output shape of every layer (batch axis excluded). Throws a
/// shape or invalid-config error naming the offending layer.
inline std::vector<Shape> trace_shapes(const LayerStack& layers, Shape in, const std::string& parent = "") {
    std::vector<Shape> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        in = layers_detail::with_layer_context(i, l, parent, [&]() -> Shape {
            return std::visit(
                [&](const auto& k) -> Shape {
                    using K = std::decay_t<decltype(k)>;
                    auto need_rank = [&](std::size_t r) {
                        require(in.size() == r, ErrorKind::Shape,
                                "expects rank-" + std::to_string(r) + " samples, got " + shape_str(in));
                    };
                    if constexpr (std::is_same_v<K, Conv2d>) {
                        need_rank(3);
                        require(k.out_channels > 0 && k.kh > 0 && k.kw > 0, ErrorKind::InvalidConfig, "non-positive dims");
                        const auto h = layers_detail::conv_out(in[1], k.kh, k.padding);
                        const auto w = layers_detail::conv_out(in[2], k.kw, k.padding);
                        require(h > 0 && w > 0, ErrorKind::Shape, "kernel larger than input " + shape_str(in));
                        return {k.out_channels, h, w};
                    } else if constexpr (std::is_same_v<K, DepthwiseConv2d>) {
                        need_rank(3);
                        require(k.multiplier > 0 && k.kh > 0 && k.kw > 0, ErrorKind::InvalidConfig, "non-positive dims");
                        const auto h = layers_detail::conv_out(in[1], k.kh, k.padding);
                        const auto w = layers_detail::conv_out(in[2], k.kw, k.padding);
                        require(h > 0 && w > 0, ErrorKind::Shape, "kernel larger than input " + shape_str(in));
                        return {in[0] * k.multiplier, h, w};
                    } else if constexpr (std::is_same_v<K, SeparableConv2d>) {
                        need_rank(3);
                        require(k.out_channels > 0 && k.kh > 0 && k.kw > 0, ErrorKind::InvalidConfig, "non-positive dims");
                        const auto h = layers_detail::conv_out(in[1], k.kh, k.padding);
                        const auto w = layers_detail::conv_out(in[2], k.kw, k.padding);
                        require(h > 0 && w > 0, ErrorKind::Shape, "kernel larger than input " + shape_str(in));
                        return {k.out_channels, h, w};
                    } else if constexpr (std::is_same_v<K, BatchNorm>) {
                        require(!in.empty(), ErrorKind::Shape, "needs a feature axis");
                        require(k.eps > 0 && k.momentum >= 0 && k.momentum <= 1, ErrorKind::InvalidConfig, "bad eps/momentum");
                        return in;
                    } else if constexpr (std::is_same_v<K, Elu> || std::is_same_v<K, Softmax>) {
                        return in;
                    } else if constexpr (std::is_same_v<K, AvgPool>) {
                        need_rank(3);
                        require(k.ph > 0 && k.pw > 0, ErrorKind::InvalidConfig, "non-positive pool size");
                        require(in[1] / k.ph > 0 && in[2] / k.pw > 0, ErrorKind::InvalidConfig,
                                "pooling " + std::to_string(k.ph) + "x" + std::to_string(k.pw) +
                                    " annihilates input " + shape_str(in));
                        return {in[0], in[1] / k.ph, in[2] / k.pw};
                    } else if constexpr (std::is_same_v<K, Dropout>) {
                        require(k.p >= 0 && k.p < 1, ErrorKind::InvalidConfig, "dropout p must lie in [0, 1)");
                        return in;
                    } else if constexpr (std::is_same_v<K, Flatten>) {
                        return {numel(in)};
                    } else if constexpr (std::is_same_v<K, Linear>) {
                        require(!in.empty() && k.out > 0, ErrorKind::InvalidConfig, "non-positive dims");
                        Shape s = in;
                        s.back() = k.out;
                        return s;
                    } else if constexpr (std::is_same_v<K, LayerNorm>) {
                        require(!in.empty() && k.eps > 0, ErrorKind::InvalidConfig, "bad layer norm");
                        return in;
                    } else if constexpr (std::is_same_v<K, MultiHeadAttention>) {
                        need_rank(2);
                        require(in[1] == k.d_model, ErrorKind::Shape, "token dimension does not match d_model");
                        require(k.heads > 0 && k.d_model % k.heads == 0, ErrorKind::InvalidParameter,
                                "d_model " + std::to_string(k.d_model) + " not divisible by " +
                                    std::to_string(k.heads) + " heads");
                        return in;
                    } else if constexpr (std::is_same_v<K, FeedForward>) {
                        require(!in.empty() && k.hidden > 0, ErrorKind::InvalidConfig, "non-positive hidden size");
                        require(k.dropout >= 0 && k.dropout < 1, ErrorKind::InvalidConfig, "dropout p must lie in [0, 1)");
                        return in;
                    } else if constexpr (std::is_same_v<K, ToTokens>) {
                        need_rank(3);
                        require(in[1] == 1, ErrorKind::Shape, "expects a [C, 1, T] feature map");
                        return {in[2], in[0]};
                    } else if constexpr (std::is_same_v<K, PositionalEmbedding>) {
                        need_rank(2);
                        return in;
                    } else {
                        static_assert(std::is_same_v<K, Residual>);
                        const auto inner =
                            trace_shapes(k.body, in, layers_detail::prefix_of(l, i, parent));
                        require(inner.empty() || inner.back() == in, ErrorKind::Shape,
                                "residual body changes shape");
                        return in;
                    }
                },
                l.kind);
        });
        out.push_back(in);
    }
    return out;
}

/// Seeded initialization: fan-in scaled uniform for convolutions,
/// truncated normal (sd 0.02) for linear/attention weights and embeddings,
/// zeros for biases, ones/zeros for normalization affine parameters.
template <class T>
void init_params(const LayerStack& layers, const Shape& in, Rng& rng, ParamStore<T>& store,
                 const std::string& parent = "") {
    const auto shapes = trace_shapes(layers, in, parent);
    Shape cur = in;
    auto uniform = [&](Shape s, double fan_in) {
        Tensor<T> t(std::move(s));
        const double bound = 1.0 / std::sqrt(fan_in);
        for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
        return t;
    };
    auto normal = [&](Shape s) {
        Tensor<T> t(std::move(s));
        for (auto& v : t.data) v = static_cast<T>(rng.truncated_normal(0.02));
        return t;
    };
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string p = layers_detail::prefix_of(l, i, parent);
        std::visit(
            [&](const auto& k) {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, Conv2d>) {
                    store.params[p + "weight"] = uniform({k.out_channels, cur[0], k.kh, k.kw}, double(cur[0] * k.kh * k.kw));
                    if (k.bias) store.params[p + "bias"] = Tensor<T>({k.out_channels});
                } else if constexpr (std::is_same_v<K, DepthwiseConv2d>) {
                    store.params[p + "weight"] = uniform({cur[0] * k.multiplier, 1, k.kh, k.kw}, double(k.kh * k.kw));
                } else if constexpr (std::is_same_v<K, SeparableConv2d>) {
                    store.params[p + "depthwise"] = uniform({cur[0], 1, k.kh, k.kw}, double(k.kh * k.kw));
                    store.params[p + "pointwise"] = uniform({k.out_channels, cur[0], 1, 1}, double(cur[0]));
                } else if constexpr (std::is_same_v<K, BatchNorm>) {
                    store.params[p + "gamma"] = Tensor<T>({cur[0]}, T(1));
                    store.params[p + "beta"] = Tensor<T>({cur[0]});
                    store.buffers[p + "running_mean"] = std::vector<T>(cur[0], T(0));
                    store.buffers[p + "running_var"] = std::vector<T>(cur[0], T(1));
                } else if constexpr (std::is_same_v<K, Linear>) {
                    store.params[p + "weight"] = normal({k.out, cur.back()});
                    if (k.bias) store.params[p + "bias"] = Tensor<T>({k.out});
                } else if constexpr (std::is_same_v<K, LayerNorm>) {
                    store.params[p + "gamma"] = Tensor<T>({cur.back()}, T(1));
                    store.params[p + "beta"] = Tensor<T>({cur.back()});
                } else if constexpr (std::is_same_v<K, MultiHeadAttention>) {
                    for (const char* m : {"q", "k", "v", "o"}) {
                        store.params[p + "w" + m] = normal({k.d_model, k.d_model});
                        store.params[p + "b" + m] = Tensor<T>({k.d_model});
                    }
                } else if constexpr (std::is_same_v<K, FeedForward>) {
                    store.params[p + "w1"] = normal({k.hidden, cur.back()});
                    store.params[p + "b1"] = Tensor<T>({k.hidden});
                    store.params[p + "w2"] = normal({cur.back(), k.hidden});
                    store.params[p + "b2"] = Tensor<T>({cur.back()});
                } else if constexpr (std::is_same_v<K, PositionalEmbedding>) {
                    store.params[p + "embedding"] = normal(cur);
                } else if constexpr (std::is_same_v<K, Residual>) {
                    init_params(k.body, cur, rng, store, p);
                }
            },
            l.kind);
        cur = shapes[i];
    }
}

template <class T>
ParamStore<T> init_params(const LayerStack& layers, const Shape& in, std::uint64_t seed) {
    ParamStore<T> store;
    Rng rng(Rng::derive(seed, 0x1417));
    init_params(layers, in, rng, store);
    return store;
}

/// Runs the stack on `x` ([batch, ...sample shape]). Parameters are
/// recorded as named tape leaves; training mode uses batch statistics,
/// updates the running buffers and draws dropout masks from `rng`.
template <class T>
Var forward_layers(const LayerStack& layers, ParamStore<T>& store, Tape<T>& tape, Var x, Mode mode, Rng& rng,
                   const std::string& parent = "") {
    const bool train = mode == Mode::Train;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string p = layers_detail::prefix_of(l, i, parent);
        auto param = [&](const std::string& n) { return tape.parameter(p + n, store.at(p + n)); };
        x = layers_detail::with_layer_context(i, l, parent, [&]() -> Var {
            return std::visit(
                [&](const auto& k) -> Var {
                    using K = std::decay_t<decltype(k)>;
                    if constexpr (std::is_same_v<K, Conv2d>) {
                        std::optional<Var> b;
                        if (k.bias) b = param("bias");
                        return conv2d(tape, x, param("weight"), b, 1,
                                      layers_detail::padding_for(k.padding, k.kh, k.kw));
                    } else if constexpr (std::is_same_v<K, DepthwiseConv2d>) {
                        return conv2d(tape, x, param("weight"), std::nullopt, tape.shape(x).at(1),
                                      layers_detail::padding_for(k.padding, k.kh, k.kw));
                    } else if constexpr (std::is_same_v<K, SeparableConv2d>) {
                        const Var d = conv2d(tape, x, param("depthwise"), std::nullopt, tape.shape(x).at(1),
                                             layers_detail::padding_for(k.padding, k.kh, k.kw));
                        return conv2d(tape, d, param("pointwise"), std::nullopt, 1, Padding::valid());
                    } else if constexpr (std::is_same_v<K, BatchNorm>) {
                        auto& rm = store.buffers.at(p + "running_mean");
                        auto& rv = store.buffers.at(p + "running_var");
                        return batch_norm(tape, x, param("gamma"), param("beta"), rm, rv, train, k.momentum, k.eps);
                    } else if constexpr (std::is_same_v<K, Elu>) {
                        return elu(tape, x, k.alpha);
                    } else if constexpr (std::is_same_v<K, AvgPool>) {
                        return avg_pool2d(tape, x, k.ph, k.pw);
                    } else if constexpr (std::is_same_v<K, Dropout>) {
                        return dropout(tape, x, k.p, train, rng);
                    } else if constexpr (std::is_same_v<K, Flatten>) {
                        const auto& s = tape.shape(x);
                        return reshape(tape, x, {s[0], numel(s) / s[0]});
                    } else if constexpr (std::is_same_v<K, Linear>) {
                        std::optional<Var> b;
                        if (k.bias) b = param("bias");
                        return linear(tape, x, param("weight"), b);
                    } else if constexpr (std::is_same_v<K, LayerNorm>) {
                        return layer_norm(tape, x, param("gamma"), param("beta"), k.eps);
                    } else if constexpr (std::is_same_v<K, MultiHeadAttention>) {
                        return multi_head_attention(tape, x,
                                                    {param("wq"), param("bq"), param("wk"), param("bk"),
                                                     param("wv"), param("bv"), param("wo"), param("bo")},
                                                    k.heads);
                    } else if constexpr (std::is_same_v<K, FeedForward>) {
                        Var h = linear(tape, x, param("w1"), param("b1"));
                        h = elu(tape, h, k.alpha);
                        h = dropout(tape, h, k.dropout, train, rng);
                        return linear(tape, h, param("w2"), param("b2"));
                    } else if constexpr (std::is_same_v<K, Softmax>) {
                        return softmax(tape, x);
                    } else if constexpr (std::is_same_v<K, ToTokens>) {
                        return to_tokens(tape, x);
                    } else if constexpr (std::is_same_v<K, PositionalEmbedding>) {
                        return add(tape, x, param("embedding"));
                    } else {
                        static_assert(std::is_same_v<K, Residual>);
                        const Var branch = forward_layers(k.body, store, tape, x, mode, rng, p);
                        return add(tape, x, branch);
                    }
                },
                l.kind);
        });
    }
    return x;
}

template <class T>
struct ForwardResult {
    Tape<T> tape;
    Var input;
    Var output;
};

template <class T>
struct Gradients {
    std::map<std::string, Tensor<T>> params;
    Tensor<T> input;
};

/// Forward pass over a batch. The input must be [batch, ...] matching the
/// stack's expected sample shape; dropout masks derive from `seed`.
template <class T>
ForwardResult<T> forward(const LayerStack& layers, ParamStore<T>& store, const Tensor<T>& input, Mode mode,
                         std::uint64_t seed, bool input_requires_grad = false) {
    require(input.rank() >= 1 && input.dim(0) >= 1, ErrorKind::Shape, "input needs a batch axis");
    trace_shapes(layers, Shape(input.shape.begin() + 1, input.shape.end()));
    ForwardResult<T> r;
    Rng rng(Rng::derive(seed, 0xd20f));
    r.input = r.tape.input(input, input_requires_grad);
    r.output = forward_layers(layers, store, r.tape, r.input, mode, rng);
    return r;
}

/// Reverse pass seeded with d loss / d output. A tape can be consumed once.
template <class T>
Gradients<T> backward(ForwardResult<T>& fr, std::span<const T> loss_grad) {
    fr.tape.backward(fr.output, loss_grad);
    Gradients<T> g;
    g.params = fr.tape.parameter_grads();
    g.input = Tensor<T>(fr.tape.shape(fr.input), fr.tape.grad(fr.input));
    return g;
}

}  // namespace imspeech::nn
