#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <unistd.h>
#include <vector>

#include "imspeech/adnn.hpp"
#include "nn_cases.hpp"

using namespace imspeech;
namespace cases = imspeech::testing;

namespace {

// Balanced random trials; labels cycle through the classes.
EpochSet random_epochs(std::size_t trials, std::size_t channels, std::size_t samples, std::uint64_t seed,
                       std::size_t classes = 4) {
    Rng rng(seed);
    std::vector<float> d(trials * channels * samples);
    for (auto& v : d) v = static_cast<float>(rng.normal());
    std::vector<int> labels(trials);
    std::vector<std::string> names;
    for (std::size_t i = 0; i < trials; ++i) labels[i] = static_cast<int>(i % classes);
    for (std::size_t k = 0; k < classes; ++k) names.push_back("w" + std::to_string(k));
    return EpochSet(d, channels, samples, labels, names, 250.0);
}

std::size_t index_of(const nn::LayerStack& s, const std::string& name) {
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i].name == name) return i;
    ADD_FAILURE() << "no layer " << name;
    return 0;
}

// ---------------------------------------------------------------------------
// Architecture

TEST(Architecture, DefaultShapes) {
    const AdnnConfig c;
    const auto eegnet = build_eegnet(c);
    const auto es = nn::trace_shapes(eegnet, {1, c.channels, c.samples});
    EXPECT_EQ(es[index_of(eegnet, "drop2")], (nn::Shape{16, 1, 15}));
    EXPECT_EQ(es.back(), (nn::Shape{4}));

    const auto adnn = build_adnn(c);
    const auto as = nn::trace_shapes(adnn, {1, c.channels, c.samples});
    EXPECT_EQ(as[index_of(adnn, "tokens")], (nn::Shape{15, 16}));
    EXPECT_EQ(as[index_of(adnn, "encoder0.feedforward")], (nn::Shape{15, 16}));
    EXPECT_EQ(as.back(), (nn::Shape{4}));
}

TEST(Architecture, DefaultEegnetForwardGivesDistributions) {
    const AdnnConfig c;
    const auto stack = build_eegnet(c);
    auto params = nn::init_params<float>(stack, {1, c.channels, c.samples}, 1);
    nn::Tensor<float> x({4, 1, c.channels, c.samples});
    Rng rng(2);
    for (auto& v : x.data) v = static_cast<float>(rng.normal());
    auto r = nn::forward(stack, params, x, nn::Mode::Eval, 0);
    ASSERT_EQ(r.tape.shape(r.output), (nn::Shape{4, 4}));
    const auto& p = r.tape.value(r.output);
    for (std::size_t b = 0; b < 4; ++b) EXPECT_NEAR(p[b * 4] + p[b * 4 + 1] + p[b * 4 + 2] + p[b * 4 + 3], 1.0, 1e-6);
}

TEST(Architecture, TokenCountFollowsPooling) {
    for (auto [samples, pool1, pool2] : {std::tuple{500, 4, 8}, std::tuple{64, 4, 2}, std::tuple{250, 5, 3},
                                         std::tuple{97, 2, 7}}) {
        auto c = cases::tiny_adnn_config();
        c.samples = samples;
        c.pool1 = pool1;
        c.pool2 = pool2;
        const auto s = build_adnn(c);
        const auto shapes = nn::trace_shapes(s, {1, c.channels, c.samples});
        const std::size_t expected = samples / pool1 / pool2;
        EXPECT_EQ(c.tokens(), expected);
        EXPECT_EQ(shapes[index_of(s, "tokens")], (nn::Shape{expected, c.f2}));
    }
}

TEST(Architecture, InvalidConfigs) {
    AdnnConfig c;
    c.pool1 = 500;
    try {
        build_eegnet(c);
        ADD_FAILURE() << "pool1 = 500 accepted";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidConfig);
    }
    AdnnConfig h;
    h.attention.heads = 3;
    try {
        build_adnn(h);
        ADD_FAILURE() << "16 / 3 heads accepted";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidParameter);
    }
    AdnnConfig f;
    f.f2 = 12;
    EXPECT_THROW(build_eegnet(f), Error);
    EXPECT_NO_THROW(build_eegnet(h));  // heads only matter for the attention head
}

TEST(Architecture, ZeroedResidualBranchesMatchBypassedBackbone) {
    const auto c = cases::tiny_adnn_config(3);
    const auto stack = build_adnn(c);
    auto params = nn::init_params<double>(stack, {1, c.channels, c.samples}, 3);
    for (const char* name : {"encoder0.attention.mha.wo", "encoder0.attention.mha.bo", "encoder0.feedforward.ffn.w2",
                             "encoder0.feedforward.ffn.b2"})
        for (auto& v : params.at(name).data) v = 0.0;
    nn::LayerStack bypass;
    for (const auto& l : stack)
        if (!std::holds_alternative<nn::Residual>(l.kind)) bypass.push_back(l);
    const auto x = cases::random_input({1, c.channels, c.samples}, 5, 4);
    auto p2 = params;
    auto a = nn::forward(logits_stack(stack), params, x, nn::Mode::Eval, 0);
    auto b = nn::forward(logits_stack(bypass), p2, x, nn::Mode::Eval, 0);
    const auto& la = a.tape.value(a.output);
    const auto& lb = b.tape.value(b.output);
    ASSERT_EQ(la.size(), lb.size());
    for (std::size_t i = 0; i < la.size(); ++i) EXPECT_NEAR(la[i], lb[i], 1e-12);
}

TEST(Architecture, ConfigJsonRoundTrip) {
    auto c = cases::tiny_adnn_config(9);
    c.attention.use_positional_embedding = false;
    c.dropout = 0.1;
    const auto back = adnn_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_THROW(adnn_config_from_json(nlohmann::json{{"f1", "eight"}}), Error);
}

// ---------------------------------------------------------------------------
// Training

TrainHyper quick(std::size_t epochs, std::uint64_t seed = 1) {
    TrainHyper h;
    h.max_epochs = epochs;
    h.batch = 4;
    h.lr = 1e-2;
    h.seed = seed;
    return h;
}

TEST(Training, InitialLossNearChance) {
    const auto c = cases::tiny_adnn_config(4);
    const auto data = random_epochs(64, c.channels, c.samples, 21);
    for (auto kind : {ModelKind::EEGNet, ModelKind::ADNN}) {
        TrainHyper h = quick(1);
        h.lr = 1e-9;  // effectively untrained during the first epoch
        const auto m = train(kind, c, data, data, h);
        EXPECT_NEAR(m.history[0].train_loss, std::log(4.0), 0.05 * std::log(4.0)) << to_string(kind);
    }
}

TEST(Training, OverfitsEightTrials) {
    auto c = cases::tiny_adnn_config(5);
    c.dropout = 0.0;
    const auto data = random_epochs(8, c.channels, c.samples, 22);
    for (auto kind : {ModelKind::EEGNet, ModelKind::ADNN}) {
        TrainHyper h = quick(300, 2);
        h.patience = 0;
        const auto m = train(kind, c, data, data, h);
        double best_train = 0;
        for (const auto& r : m.history) best_train = std::max(best_train, r.train_acc);
        EXPECT_EQ(best_train, 1.0) << to_string(kind);
        const auto p = predict(m, data);
        EXPECT_EQ(accuracy(p.labels, data.labels()), 1.0) << to_string(kind);
    }
}

TEST(Training, SameSeedIsBitIdentical) {
    const auto c = cases::tiny_adnn_config(6);
    const auto tr = random_epochs(16, c.channels, c.samples, 23), va = random_epochs(8, c.channels, c.samples, 24);
    const auto a = train(ModelKind::ADNN, c, tr, va, quick(4, 7));
    const auto b = train(ModelKind::ADNN, c, tr, va, quick(4, 7));
    EXPECT_EQ(history_csv(a.history), history_csv(b.history));
    EXPECT_EQ(a.best_epoch, b.best_epoch);
    EXPECT_EQ(eegd::encode(params_container(a.params)), eegd::encode(params_container(b.params)));
    const auto d = train(ModelKind::ADNN, c, tr, va, quick(4, 8));
    EXPECT_NE(eegd::encode(params_container(a.params)), eegd::encode(params_container(d.params)));
}

TEST(Training, BestCheckpointAndPatience) {
    const auto c = cases::tiny_adnn_config(7);
    const auto tr = random_epochs(16, c.channels, c.samples, 25), va = random_epochs(8, c.channels, c.samples, 26);
    TrainHyper h = quick(40, 3);
    h.patience = 3;
    const auto m = train(ModelKind::EEGNet, c, tr, va, h);
    ASSERT_GE(m.best_epoch, 1u);
    ASSERT_LE(m.best_epoch, m.history.size());
    for (const auto& r : m.history) EXPECT_LE(r.valid_acc, m.history[m.best_epoch - 1].valid_acc);
    EXPECT_LE(m.history.size(), m.best_epoch + h.patience);
    EXPECT_NEAR(accuracy(predict(m, va).labels, va.labels()), m.history[m.best_epoch - 1].valid_acc, 1e-12);
}

TEST(Training, DivergenceAndValidationErrors) {
    const auto c = cases::tiny_adnn_config(8);
    const auto data = random_epochs(8, c.channels, c.samples, 27);
    TrainHyper h = quick(5);
    h.lr = 1e30;
    try {
        train(ModelKind::EEGNet, c, data, data, h);
        ADD_FAILURE() << "lr 1e30 trained without diverging";
    } catch (const Error& e) {
        EXPECT_TRUE(is_numeric(e.kind())) << e.what();
    }
    const auto wrong = random_epochs(8, c.channels + 1, c.samples, 28);
    EXPECT_THROW(train(ModelKind::EEGNet, c, wrong, wrong, quick(1)), Error);
    const auto five = random_epochs(10, c.channels, c.samples, 29, 5);
    EXPECT_THROW(train(ModelKind::EEGNet, c, five, five, quick(1)), Error);
}

// ---------------------------------------------------------------------------
// Prediction and persistence

TEST(Prediction, DuplicatedEpochsGetIdenticalProbabilities) {
    const auto c = cases::tiny_adnn_config(10);
    const auto data = random_epochs(8, c.channels, c.samples, 30);
    const auto m = train(ModelKind::ADNN, c, data, data, quick(2));
    const std::vector<std::size_t> idx{3, 1, 3, 3};
    const auto p = predict(m, data.subset(idx));
    for (std::size_t r = 0; r < 4; ++r) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += p.probabilities[r * 4 + k];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(p.probabilities[k], p.probabilities[8 + k]);
        EXPECT_EQ(p.probabilities[k], p.probabilities[12 + k]);
    }
    EXPECT_THROW(predict(m, random_epochs(4, c.channels, c.samples + 1, 31)), Error);
}

TEST(Prediction, SaveLoadRoundTrip) {
    const auto c = cases::tiny_adnn_config(11);
    const auto data = random_epochs(8, c.channels, c.samples, 32);
    const auto m = train(ModelKind::ADNN, c, data, data, quick(2));
    const auto dir = std::filesystem::temp_directory_path() / ("imspeech_adnn_" + std::to_string(::getpid()));
    save_model(m, dir);
    EXPECT_TRUE(std::filesystem::exists(dir / "history.csv"));
    const auto back = load_model(dir);
    std::filesystem::remove_all(dir);
    EXPECT_EQ(back.kind, ModelKind::ADNN);
    EXPECT_EQ(back.best_epoch, m.best_epoch);
    EXPECT_EQ(predict(back, data).probabilities, predict(m, data).probabilities);
}

}  // namespace
