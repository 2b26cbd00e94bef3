#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegd.hpp"
#include "error.hpp"
#include "format.hpp"
#include "nn/layers.hpp"
#include "nn/optim.hpp"
#include "rng.hpp"
#include "signal.hpp"

namespace imspeech {

struct AttentionConfig {
    std::size_t d_model = 16;
    std::size_t heads = 2;
    std::size_t ffn_hidden = 32;
    std::size_t n_blocks = 1;
    bool use_positional_embedding = true;
};

struct AdnnConfig {
    std::size_t channels = 58;
    std::size_t samples = 500;
    std::size_t n_classes = 4;
    std::size_t f1 = 8;
    std::size_t depth = 2;
    std::size_t f2 = 16;
    std::size_t temporal_kernel = 125;
    std::size_t separable_kernel = 16;
    std::size_t pool1 = 4;
    std::size_t pool2 = 8;
    double dropout = 0.25;
    AttentionConfig attention;
    std::uint64_t seed = 0;

    /// Number of time steps (tokens) after both pooling stages.
    std::size_t tokens() const { return pool1 && pool2 ? samples / pool1 / pool2 : 0; }

    void validate() const {
        require(channels > 0 && samples > 0 && n_classes >= 2, ErrorKind::InvalidConfig,
                "channels, samples must be positive and n_classes >= 2");
        require(f1 > 0 && depth > 0 && f2 > 0 && temporal_kernel > 0 && separable_kernel > 0, ErrorKind::InvalidConfig,
                "filter counts and kernels must be positive");
        require(f2 == f1 * depth, ErrorKind::InvalidConfig, "F2 must equal F1 * D");
        require(pool1 > 0 && pool2 > 0, ErrorKind::InvalidConfig, "pool sizes must be positive");
        require(samples / pool1 > 0, ErrorKind::InvalidConfig,
                "pool1 " + std::to_string(pool1) + " annihilates a time axis of " + std::to_string(samples));
        require(samples / pool1 / pool2 > 0, ErrorKind::InvalidConfig,
                "pool2 " + std::to_string(pool2) + " annihilates a time axis of " + std::to_string(samples / pool1));
        require(dropout >= 0 && dropout < 1, ErrorKind::InvalidConfig, "dropout must lie in [0, 1)");
    }

    void validate_attention() const {
        require(attention.d_model == f2, ErrorKind::InvalidConfig, "attention d_model must equal F2");
        require(attention.heads > 0 && attention.d_model % attention.heads == 0, ErrorKind::InvalidParameter,
                "d_model " + std::to_string(attention.d_model) + " not divisible by " +
                    std::to_string(attention.heads) + " heads");
        require(attention.ffn_hidden > 0 && attention.n_blocks > 0, ErrorKind::InvalidConfig,
                "ffn_hidden and n_blocks must be positive");
    }
};

inline nlohmann::ordered_json to_json(const AdnnConfig& c) {
    return {{"channels", c.channels},
            {"samples", c.samples},
            {"n_classes", c.n_classes},
            {"f1", c.f1},
            {"depth", c.depth},
            {"f2", c.f2},
            {"temporal_kernel", c.temporal_kernel},
            {"separable_kernel", c.separable_kernel},
            {"pool1", c.pool1},
            {"pool2", c.pool2},
            {"dropout", c.dropout},
            {"attention",
             {{"d_model", c.attention.d_model},
              {"heads", c.attention.heads},
              {"ffn_hidden", c.attention.ffn_hidden},
              {"n_blocks", c.attention.n_blocks},
              {"use_positional_embedding", c.attention.use_positional_embedding}}},
            {"seed", c.seed}};
}

inline AdnnConfig adnn_config_from_json(const nlohmann::json& j) {
    AdnnConfig c;
    auto get = [&](const nlohmann::json& o, const char* k, auto& v) {
        if (o.contains(k)) o.at(k).get_to(v);
    };
    try {
        get(j, "channels", c.channels);
        get(j, "samples", c.samples);
        get(j, "n_classes", c.n_classes);
        get(j, "f1", c.f1);
        get(j, "depth", c.depth);
        get(j, "f2", c.f2);
        get(j, "temporal_kernel", c.temporal_kernel);
        get(j, "separable_kernel", c.separable_kernel);
        get(j, "pool1", c.pool1);
        get(j, "pool2", c.pool2);
        get(j, "dropout", c.dropout);
        get(j, "seed", c.seed);
        if (j.contains("attention")) {
            const auto& a = j.at("attention");
            get(a, "d_model", c.attention.d_model);
            get(a, "heads", c.attention.heads);
            get(a, "ffn_hidden", c.attention.ffn_hidden);
            get(a, "n_blocks", c.attention.n_blocks);
            get(a, "use_positional_embedding", c.attention.use_positional_embedding);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidConfig, std::string("bad model config: ") + e.what());
    }
    return c;
}

enum class ModelKind { EEGNet, ADNN };

inline std::string to_string(ModelKind k) { return k == ModelKind::EEGNet ? "eegnet" : "adnn"; }

inline ModelKind model_kind_from(const std::string& s) {
    if (s == "eegnet") return ModelKind::EEGNet;
    if (s == "adnn") return ModelKind::ADNN;
    fail(ErrorKind::InvalidConfig, "unknown model kind '" + s + "'");
}

namespace adnn_detail {

inline nn::LayerStack backbone(const AdnnConfig& c) {
    using namespace nn;
    return {
        {Conv2d{c.f1, 1, c.temporal_kernel, PadMode::Same}, "conv1"},
        {BatchNorm{}, "bn1"},
        {DepthwiseConv2d{c.depth, c.channels, 1, PadMode::Valid}, "spatial"},
        {BatchNorm{}, "bn2"},
        {Elu{}, "elu1"},
        {AvgPool{1, c.pool1}, "pool1"},
        {Dropout{c.dropout}, "drop1"},
        {SeparableConv2d{1, c.separable_kernel, c.f2, PadMode::Same}, "separable"},
        {BatchNorm{}, "bn3"},
        {Elu{}, "elu2"},
        {AvgPool{1, c.pool2}, "pool2"},
        {Dropout{c.dropout}, "drop2"},
    };
}

}  // namespace adnn_detail

/// EEGNet: temporal conv, spatial depthwise conv, separable conv blocks,
/// then a linear softmax classifier.
inline nn::LayerStack build_eegnet(const AdnnConfig& c) {
    c.validate();
    using namespace nn;
    auto s = adnn_detail::backbone(c);
    s.push_back({Flatten{}, "flatten"});
    s.push_back({Linear{c.n_classes}, "classifier"});
    s.push_back({Softmax{}, "softmax"});
    trace_shapes(s, {1, c.channels, c.samples});
    return s;
}

/// EEGNet backbone followed by pre-LN transformer encoder blocks over the
/// pooled time steps, a final LayerNorm and the linear softmax classifier.
inline nn::LayerStack build_adnn(const AdnnConfig& c) {
    c.validate();
    c.validate_attention();
    using namespace nn;
    auto s = adnn_detail::backbone(c);
    s.push_back({ToTokens{}, "tokens"});
    if (c.attention.use_positional_embedding) s.push_back({PositionalEmbedding{}, "position"});
    for (std::size_t b = 0; b < c.attention.n_blocks; ++b) {
        const std::string id = std::to_string(b);
        s.push_back({Residual{{{LayerNorm{}, "norm"}, {MultiHeadAttention{c.attention.d_model, c.attention.heads}, "mha"}}},
                     "encoder" + id + ".attention"});
        s.push_back({Residual{{{LayerNorm{}, "norm"}, {FeedForward{c.attention.ffn_hidden, c.dropout}, "ffn"}}},
                     "encoder" + id + ".feedforward"});
    }
    s.push_back({LayerNorm{}, "final_norm"});
    s.push_back({Flatten{}, "flatten"});
    s.push_back({Linear{c.n_classes}, "classifier"});
    s.push_back({Softmax{}, "softmax"});
    trace_shapes(s, {1, c.channels, c.samples});
    return s;
}

inline nn::LayerStack build_model(ModelKind k, const AdnnConfig& c) {
    return k == ModelKind::EEGNet ? build_eegnet(c) : build_adnn(c);
}

/// The stack without its trailing Softmax (training uses fused
/// softmax + cross-entropy on the logits).
inline nn::LayerStack logits_stack(nn::LayerStack s) {
    if (!s.empty() && std::holds_alternative<nn::Softmax>(s.back().kind)) s.pop_back();
    return s;
}

struct TrainHyper {
    double lr = 1e-3;
    std::size_t batch = 16;
    std::size_t max_epochs = 200;
    std::uint64_t seed = 0;
    std::size_t patience = 0;  // stop after this many epochs without improvement; 0 disables
};

struct EpochRecord {
    std::size_t epoch;
    double train_loss;
    double train_acc;
    double valid_acc;
    double valid_loss;
};

struct TrainedModel {
    ModelKind kind = ModelKind::ADNN;
    AdnnConfig cfg;
    nn::ParamStore<float> params;  // includes batch-norm running statistics
    std::vector<float> channel_mean;
    std::vector<float> channel_std;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
};

namespace adnn_detail {

struct Normalizer {
    std::vector<float> mean, std;
};

inline Normalizer fit_normalizer(const EpochSet& set) {
    const std::size_t C = set.channels(), T = set.samples();
    std::vector<double> s(C, 0.0), ss(C, 0.0);
    for (std::size_t i = 0; i < set.trials(); ++i) {
        const auto e = set.epoch(i);
        for (std::size_t c = 0; c < C; ++c) {
            double a = 0, b = 0;
            for (std::size_t t = 0; t < T; ++t) {
                const double v = e[c * T + t];
                a += v;
                b += v * v;
            }
            s[c] += a;
            ss[c] += b;
        }
    }
    Normalizer n{std::vector<float>(C), std::vector<float>(C)};
    const double count = static_cast<double>(set.trials() * T);
    for (std::size_t c = 0; c < C; ++c) {
        const double m = s[c] / count;
        const double var = std::max(0.0, ss[c] / count - m * m);
        n.mean[c] = static_cast<float>(m);
        n.std[c] = var > 0 ? static_cast<float>(std::sqrt(var)) : 1.0f;
    }
    return n;
}

/// [batch, 1, C, T] tensor of normalized epochs.
inline nn::Tensor<float> make_batch(const EpochSet& set, std::span<const std::size_t> idx,
                                    const std::vector<float>& mean, const std::vector<float>& sd) {
    const std::size_t C = set.channels(), T = set.samples();
    nn::Tensor<float> x({idx.size(), 1, C, T});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto e = set.epoch(idx[b]);
        float* dst = x.data.data() + b * C * T;
        for (std::size_t c = 0; c < C; ++c) {
            const float m = mean[c], inv = 1.0f / sd[c];
            for (std::size_t t = 0; t < T; ++t) dst[c * T + t] = (e[c * T + t] - m) * inv;
        }
    }
    return x;
}

inline void check_shape(const AdnnConfig& cfg, const EpochSet& set) {
    require(set.channels() == cfg.channels && set.samples() == cfg.samples, ErrorKind::Shape,
            "epochs are " + std::to_string(set.channels()) + "x" + std::to_string(set.samples()) +
                " but the model expects " + std::to_string(cfg.channels) + "x" + std::to_string(cfg.samples));
}

inline std::size_t argmax_row(const float* p, std::size_t k) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
        if (p[j] > p[best]) best = j;
    return best;
}

}  // namespace adnn_detail

struct Prediction {
    std::vector<int> labels;
    std::vector<float> probabilities;  // [trials x n_classes]
};

/// Eval-mode forward with the stored normalization; ties go to the lowest
/// class index.
inline Prediction predict(const TrainedModel& model, const EpochSet& epochs) {
    adnn_detail::check_shape(model.cfg, epochs);
    const auto stack = build_model(model.kind, model.cfg);
    auto params = model.params;
    const std::size_t K = model.cfg.n_classes;
    Prediction out;
    out.probabilities.reserve(epochs.trials() * K);
    constexpr std::size_t chunk = 32;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < epochs.trials(); start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(epochs.trials(), start + chunk); ++i) idx.push_back(i);
        const auto x = adnn_detail::make_batch(epochs, idx, model.channel_mean, model.channel_std);
        auto r = nn::forward(stack, params, x, nn::Mode::Eval, 0);
        const auto& p = r.tape.value(r.output);
        out.probabilities.insert(out.probabilities.end(), p.begin(), p.end());
    }
    for (std::size_t i = 0; i < epochs.trials(); ++i)
        out.labels.push_back(static_cast<int>(adnn_detail::argmax_row(out.probabilities.data() + i * K, K)));
    return out;
}

inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
    require(predicted.size() == truth.size() && !truth.empty(), ErrorKind::Shape, "accuracy needs matching labels");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

inline double mean_cross_entropy(const Prediction& p, std::span<const int> truth, std::size_t k) {
    double s = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
        s -= std::log(std::max(static_cast<double>(p.probabilities[i * k + static_cast<std::size_t>(truth[i])]), 1e-30));
    return s / static_cast<double>(truth.size());
}

/// Mini-batch Adam training with per-epoch seeded shuffling; returns the
/// checkpoint with the best validation accuracy, ties broken by lower
/// validation loss and then by the earlier epoch.
inline TrainedModel train(ModelKind kind, AdnnConfig cfg, const EpochSet& train_set, const EpochSet& valid_set,
                          const TrainHyper& hyper) {
    require(train_set.trials() > 0 && valid_set.trials() > 0, ErrorKind::InsufficientData,
            "training and validation sets must be nonempty");
    require(hyper.batch > 0 && hyper.max_epochs > 0 && hyper.lr > 0, ErrorKind::InvalidParameter,
            "batch, max_epochs and lr must be positive");
    adnn_detail::check_shape(cfg, train_set);
    adnn_detail::check_shape(cfg, valid_set);
    for (int l : train_set.labels())
        require(l >= 0 && static_cast<std::size_t>(l) < cfg.n_classes, ErrorKind::InvalidLabel, "training label out of range");
    for (int l : valid_set.labels())
        require(l >= 0 && static_cast<std::size_t>(l) < cfg.n_classes, ErrorKind::InvalidLabel, "validation label out of range");

    const auto stack = build_model(kind, cfg);
    const auto train_stack = logits_stack(stack);
    TrainedModel model;
    model.kind = kind;
    model.cfg = cfg;
    model.params = nn::init_params<float>(stack, {1, cfg.channels, cfg.samples}, cfg.seed);
    const auto norm = adnn_detail::fit_normalizer(train_set);
    model.channel_mean = norm.mean;
    model.channel_std = norm.std;

    TrainedModel best = model;
    double best_acc = -1, best_loss = 0;
    nn::AdamState<float> adam;
    long step = 0;
    Rng shuffler(Rng::derive(hyper.seed, 0x5f1e));
    std::vector<std::size_t> order(train_set.trials());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
        shuffler.shuffle(order);
        double loss_sum = 0;
        std::size_t hits = 0;
        for (std::size_t start = 0, b = 0; start < order.size(); start += hyper.batch, ++b) {
            const std::span<const std::size_t> idx(order.data() + start, std::min(hyper.batch, order.size() - start));
            const auto x = adnn_detail::make_batch(train_set, idx, model.channel_mean, model.channel_std);
            std::vector<int> y;
            for (auto i : idx) y.push_back(train_set.labels()[i]);
            auto fr = nn::forward(train_stack, model.params, x, nn::Mode::Train,
                                  Rng::derive(hyper.seed, (epoch << 20) + b));
            const nn::Var loss = nn::cross_entropy(fr.tape, fr.output, std::span<const int>(y));
            const double l = fr.tape.value(loss)[0];
            require(std::isfinite(l), ErrorKind::Divergence, "non-finite training loss at epoch " + std::to_string(epoch));
            loss_sum += l * static_cast<double>(idx.size());
            const auto& logits = fr.tape.value(fr.output);
            for (std::size_t r = 0; r < idx.size(); ++r)
                hits += static_cast<int>(adnn_detail::argmax_row(logits.data() + r * cfg.n_classes, cfg.n_classes)) == y[r];
            const float one = 1.0f;
            fr.tape.backward(loss, std::span<const float>(&one, 1));
            const auto grads = fr.tape.parameter_grads();
            nn::adam_step(model.params.params, grads, adam, hyper.lr, 0.9, 0.999, 1e-8, ++step);
        }
        const auto pv = predict(model, valid_set);
        const double vacc = accuracy(pv.labels, valid_set.labels());
        const double vloss = mean_cross_entropy(pv, valid_set.labels(), cfg.n_classes);
        model.history.push_back({epoch, loss_sum / static_cast<double>(order.size()),
                                 static_cast<double>(hits) / static_cast<double>(order.size()), vacc, vloss});
        if (vacc > best_acc || (vacc == best_acc && vloss < best_loss)) {
            best_acc = vacc;
            best_loss = vloss;
            best.params = model.params;
            best.best_epoch = epoch;
            since_best = 0;
        } else if (hyper.patience > 0 && ++since_best >= hyper.patience) {
            break;
        }
    }
    best.history = model.history;
    return best;
}

inline std::string history_csv(const std::vector<EpochRecord>& h) {
    std::string out = "epoch,train_loss,train_acc,valid_acc\n";
    for (const auto& r : h)
        out += std::to_string(r.epoch) + "," + format_roundtrip(r.train_loss) + "," + format_roundtrip(r.train_acc) +
               "," + format_roundtrip(r.valid_acc) + "\n";
    return out;
}

inline eegd::Container params_container(const nn::ParamStore<float>& p) {
    std::vector<eegd::NamedArray> arrays;
    nlohmann::ordered_json buffers = nlohmann::ordered_json::array();
    for (const auto& [name, t] : p.params) arrays.push_back({name, t.shape, t.data});
    for (const auto& [name, b] : p.buffers) {
        arrays.push_back({name, {b.size()}, b});
        buffers.push_back(name);
    }
    return eegd::pack("params", arrays, {{"buffers", buffers}});
}

inline nn::ParamStore<float> params_from(const eegd::Container& c) {
    const auto arrays = eegd::unpack(c, "params");
    std::vector<std::string> buffer_names;
    if (c.header.contains("meta") && c.header.at("meta").contains("buffers"))
        buffer_names = c.header.at("meta").at("buffers").get<std::vector<std::string>>();
    nn::ParamStore<float> p;
    for (const auto& a : arrays) {
        if (std::find(buffer_names.begin(), buffer_names.end(), a.name) != buffer_names.end())
            p.buffers[a.name] = a.values;
        else
            p.params[a.name] = nn::Tensor<float>(a.shape, a.values);
    }
    return p;
}

/// Writes model.json, params.eegd and history.csv into `dir`.
inline void save_model(const TrainedModel& m, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json meta{{"kind", to_string(m.kind)},
                                {"config", to_json(m.cfg)},
                                {"best_epoch", m.best_epoch},
                                {"channel_mean", m.channel_mean},
                                {"channel_std", m.channel_std}};
    std::ofstream(dir / "model.json") << meta.dump(2) << "\n";
    eegd::write_file(dir / "params.eegd", params_container(m.params));
    std::ofstream(dir / "history.csv") << history_csv(m.history);
}

inline TrainedModel load_model(const std::filesystem::path& dir) {
    std::ifstream in(dir / "model.json");
    require(in.good(), ErrorKind::Io, "cannot read " + (dir / "model.json").string());
    nlohmann::json meta;
    try {
        in >> meta;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, std::string("bad model.json: ") + e.what());
    }
    TrainedModel m;
    m.kind = model_kind_from(meta.at("kind").get<std::string>());
    m.cfg = adnn_config_from_json(meta.at("config"));
    m.best_epoch = meta.value("best_epoch", std::size_t{0});
    m.channel_mean = meta.at("channel_mean").get<std::vector<float>>();
    m.channel_std = meta.at("channel_std").get<std::vector<float>>();
    m.params = params_from(eegd::read_file(dir / "params.eegd"));
    const auto expected = nn::init_params<float>(build_model(m.kind, m.cfg), {1, m.cfg.channels, m.cfg.samples}, 0);
    for (const auto& [name, t] : expected.params)
        require(m.params.params.count(name) && m.params.params.at(name).shape == t.shape, ErrorKind::Format,
                "checkpoint tensor '" + name + "' missing or misshapen");
    return m;
}

}  // namespace imspeech
