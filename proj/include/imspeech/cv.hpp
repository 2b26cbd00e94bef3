#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "adnn.hpp"
#include "error.hpp"
#include "features.hpp"
#include "rng.hpp"
#include "shallow.hpp"
#include "signal.hpp"

namespace imspeech {

enum class Pipeline { PsdSvm, CspLda, EEGNet, ADNN };

inline std::string to_string(Pipeline p) {
    switch (p) {
        case Pipeline::PsdSvm: return "psd_svm";
        case Pipeline::CspLda: return "csp_lda";
        case Pipeline::EEGNet: return "eegnet";
        case Pipeline::ADNN: return "adnn";
    }
    return "?";
}

inline Pipeline pipeline_from(const std::string& s) {
    for (auto p : {Pipeline::PsdSvm, Pipeline::CspLda, Pipeline::EEGNet, Pipeline::ADNN})
        if (to_string(p) == s) return p;
    fail(ErrorKind::InvalidConfig, "unknown pipeline '" + s + "' (psd_svm, csp_lda, eegnet, adnn)");
}

inline const std::vector<Pipeline>& all_pipelines() {
    static const std::vector<Pipeline> p{Pipeline::PsdSvm, Pipeline::CspLda, Pipeline::EEGNet, Pipeline::ADNN};
    return p;
}

struct PipelineOptions {
    double svm_c = kDefaultSvmC;
    int svm_epochs = kDefaultSvmEpochs;
    std::size_t csp_filters_per_class = kDefaultCspFiltersPerClass;
    double csp_ridge = kDefaultCspRidge;
    double lda_ridge = kDefaultLdaRidge;
    AdnnConfig net;  // channels/samples/n_classes are taken from the data
    TrainHyper hyper;
    std::size_t inner_folds = 5;  // networks hold out 1/inner_folds of the training fold for checkpointing
};

/// Test-fold indices of a stratified k-fold split: each class is shuffled
/// with a seeded stream and dealt round-robin, so fold sizes per class
/// differ by at most one.
inline std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, std::size_t k,
                                                              std::uint64_t seed) {
    require(k >= 2, ErrorKind::InvalidParameter, "k must be >= 2");
    int max_label = -1;
    for (int l : labels) {
        require(l >= 0, ErrorKind::InvalidLabel, "negative label");
        max_label = std::max(max_label, l);
    }
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label + 1));
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    std::vector<std::vector<std::size_t>> folds(k);
    std::size_t next = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& idx = by_class[c];
        if (idx.empty()) continue;
        require(idx.size() >= k, ErrorKind::Stratification,
                "class " + std::to_string(c) + " has " + std::to_string(idx.size()) + " trials, fewer than k=" +
                    std::to_string(k));
        Rng rng(Rng::derive(seed, 0xf01d + c));
        rng.shuffle(idx);
        for (std::size_t i : idx) folds[next++ % k].push_back(i);
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

/// Generic k-fold driver: `fit_predict(train, test, fold)` returns predicted
/// labels for `test`. Returns per-fold accuracies in fold order.
template <class FitPredict>
std::vector<double> cross_validate(const EpochSet& data, std::size_t k, std::uint64_t seed, FitPredict&& fit_predict) {
    const auto folds = stratified_folds(data.labels(), k, seed);
    std::vector<double> acc;
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> train_idx;
        for (std::size_t g = 0; g < k; ++g)
            if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
        std::sort(train_idx.begin(), train_idx.end());
        const EpochSet train = data.subset(train_idx);
        const EpochSet test = data.subset(folds[f]);
        const std::vector<int> pred = fit_predict(train, test, f);
        acc.push_back(accuracy(pred, test.labels()));
    }
    return acc;
}

namespace cv_detail {

/// Log band powers (delta..beta) of every channel.
inline FeatureMatrix psd_features(const EpochSet& set) {
    FeatureMatrix x;
    for (std::size_t i = 0; i < set.trials(); ++i) {
        const auto bp = band_powers(welch_psd(set.epoch(i), set.channels(), set.fs()));
        if (i == 0) x.resize(static_cast<Eigen::Index>(set.trials()), static_cast<Eigen::Index>(bp.size()));
        for (std::size_t j = 0; j < bp.size(); ++j)
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::log(std::max(bp[j], 1e-300));
    }
    return x;
}

inline FeatureMatrix csp_features(const CspModel& m, const EpochSet& set) {
    FeatureMatrix x(static_cast<Eigen::Index>(set.trials()), static_cast<Eigen::Index>(m.n_filters()));
    for (std::size_t i = 0; i < set.trials(); ++i) {
        const auto f = csp_transform(m, set.epoch(i), set.channels());
        for (std::size_t j = 0; j < f.size(); ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f[j];
    }
    return x;
}

inline AdnnConfig net_config(const PipelineOptions& o, const EpochSet& set, std::uint64_t seed) {
    AdnnConfig c = o.net;
    c.channels = set.channels();
    c.samples = set.samples();
    c.n_classes = set.n_classes();
    c.seed = seed;
    return c;
}

}  // namespace cv_detail

/// Splits a training set into (fit, checkpoint-validation) parts with one
/// stratified fold held out.
inline std::pair<EpochSet, EpochSet> inner_split(const EpochSet& set, std::size_t folds, std::uint64_t seed) {
    const auto f = stratified_folds(set.labels(), folds, seed);
    std::vector<std::size_t> fit;
    for (std::size_t g = 1; g < folds; ++g) fit.insert(fit.end(), f[g].begin(), f[g].end());
    std::sort(fit.begin(), fit.end());
    return {set.subset(fit), set.subset(f[0])};
}

/// Trains `pipeline` on `train` and predicts `test`; all fitting uses
/// `train` only.
inline std::vector<int> fit_predict(Pipeline p, const EpochSet& train, const EpochSet& test,
                                    const PipelineOptions& o, std::uint64_t seed) {
    switch (p) {
        case Pipeline::PsdSvm: {
            const auto m = svm_fit(cv_detail::psd_features(train), train.labels(), o.svm_c, o.svm_epochs, seed);
            return svm_predict(m, cv_detail::psd_features(test));
        }
        case Pipeline::CspLda: {
            const auto csp = csp_fit(train, o.csp_filters_per_class, o.csp_ridge);
            const auto lda = lda_fit(cv_detail::csp_features(csp, train), train.labels(), o.lda_ridge);
            return lda_predict(lda, cv_detail::csp_features(csp, test));
        }
        case Pipeline::EEGNet:
        case Pipeline::ADNN: {
            const auto kind = p == Pipeline::EEGNet ? ModelKind::EEGNet : ModelKind::ADNN;
            auto [fit, valid] = inner_split(train, o.inner_folds, Rng::derive(seed, 0x1a));
            TrainHyper h = o.hyper;
            h.seed = Rng::derive(seed, 0x2b);
            const auto model = imspeech::train(kind, cv_detail::net_config(o, train, Rng::derive(seed, 0x3c)), fit,
                                               valid, h);
            return predict(model, test).labels;
        }
    }
    fail(ErrorKind::InvalidConfig, "unknown pipeline");
}

/// Stratified k-fold CV of a named pipeline. Fold f's models are seeded
/// from (seed, f).
inline std::vector<double> cross_validate(Pipeline p, const EpochSet& data, std::size_t k, std::uint64_t seed,
                                          const PipelineOptions& o = {}) {
    return cross_validate(data, k, seed, [&](const EpochSet& train, const EpochSet& test, std::size_t f) {
        return fit_predict(p, train, test, o, Rng::derive(seed, 0xc0 + f));
    });
}

}  // namespace imspeech
