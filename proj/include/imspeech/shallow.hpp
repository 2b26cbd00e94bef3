#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "eegd.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace imspeech {

using FeatureMatrix = Eigen::MatrixXd;  // [samples x features]

namespace shallow_detail {

inline std::size_t class_count(std::span<const int> labels) {
    int k = 0;
    for (int l : labels) {
        require(l >= 0, ErrorKind::InvalidLabel, "negative class label");
        k = std::max(k, l + 1);
    }
    return static_cast<std::size_t>(k);
}

/// Lowest index wins ties.
inline std::vector<int> argmax_rows(const Eigen::MatrixXd& scores) {
    std::vector<int> out(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < scores.cols(); ++k)
            if (scores(i, k) > scores(i, best)) best = k;
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

inline eegd::NamedArray named(const std::string& name, const Eigen::MatrixXd& m) {
    std::vector<float> v;
    v.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(static_cast<float>(m(r, c)));
    return {name, {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v)};
}

inline Eigen::MatrixXd matrix(const eegd::NamedArray& a) {
    require(a.shape.size() == 2, ErrorKind::Format, "array '" + a.name + "' is not 2-D");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(a.shape[0]), static_cast<Eigen::Index>(a.shape[1]));
    for (std::size_t i = 0; i < a.values.size(); ++i)
        m(static_cast<Eigen::Index>(i / a.shape[1]), static_cast<Eigen::Index>(i % a.shape[1])) = a.values[i];
    return m;
}

}  // namespace shallow_detail

// ---------------------------------------------------------------------------
// Linear SVM

struct LinearSvmModel {
    Eigen::VectorXd mean;     // feature standardization
    Eigen::VectorXd std;      // clamped > 0
    Eigen::MatrixXd weights;  // [classes x features], standardized space
    Eigen::VectorXd bias;     // [classes]
    double C = 1.0;

    std::size_t n_features() const { return static_cast<std::size_t>(mean.size()); }
    std::size_t n_classes() const { return static_cast<std::size_t>(weights.rows()); }

    Eigen::MatrixXd standardize(const FeatureMatrix& x) const {
        return (x.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array();
    }

    Eigen::MatrixXd decision_values(const FeatureMatrix& x) const {
        require(static_cast<std::size_t>(x.cols()) == n_features(), ErrorKind::Shape,
                "feature dimension " + std::to_string(x.cols()) + " does not match model (" +
                    std::to_string(n_features()) + ")");
        return (standardize(x) * weights.transpose()).rowwise() + bias.transpose();
    }
};

constexpr double kDefaultSvmC = 1.0;
constexpr int kDefaultSvmEpochs = 200;

namespace shallow_detail {

/// Midpoint of the minimizer interval of sum_i max(0, 1 - y_i (s_i + b)).
inline double best_hinge_bias(std::span<const double> scores, std::span<const double> y) {
    std::vector<double> breaks;
    breaks.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) breaks.push_back(y[i] - scores[i]);
    std::sort(breaks.begin(), breaks.end());
    auto loss = [&](double b) {
        double s = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) s += std::max(0.0, 1.0 - y[i] * (scores[i] + b));
        return s;
    };
    double best = std::numeric_limits<double>::infinity();
    for (double b : breaks) best = std::min(best, loss(b));
    const double tol = 1e-9 * (1.0 + best);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double b : breaks) {
        if (loss(b) <= best + tol) {
            lo = std::min(lo, b);
            hi = std::max(hi, b);
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace shallow_detail

/// One-vs-rest L2-regularized hinge-loss classifiers on standardized
/// features, trained by Pegasos-style subgradient descent (step 1/(lambda t),
/// lambda = 1/(n C)) with seeded per-epoch shuffling. The bias is an
/// augmented, regularized coordinate during descent and is then refit
/// exactly to the hinge-loss minimizer for the final weights.
inline LinearSvmModel svm_fit(const FeatureMatrix& x, std::span<const int> labels, double C = kDefaultSvmC,
                              int epochs = kDefaultSvmEpochs, std::uint64_t seed = 0) {
    const auto n = static_cast<std::size_t>(x.rows());
    const auto d = static_cast<std::size_t>(x.cols());
    require(labels.size() == n, ErrorKind::Shape, "label count does not match feature rows");
    require(n >= 2, ErrorKind::InsufficientData, "need at least 2 samples");
    require(C > 0, ErrorKind::InvalidParameter, "C must be positive");
    require(epochs >= 1, ErrorKind::InvalidParameter, "epochs must be >= 1");
    require(x.allFinite(), ErrorKind::Numeric, "non-finite features");
    const std::size_t K = shallow_detail::class_count(labels);
    std::size_t present = 0;
    for (std::size_t k = 0; k < K; ++k) present += std::find(labels.begin(), labels.end(), static_cast<int>(k)) != labels.end();
    require(present >= 2, ErrorKind::InvalidLabel, "need at least two classes");

    LinearSvmModel m;
    m.C = C;
    m.mean = x.colwise().mean().transpose();
    m.std.resize(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) {
        const auto col = x.col(static_cast<Eigen::Index>(j));
        const double var = (col.array() - m.mean(static_cast<Eigen::Index>(j))).square().mean();
        const double sd = std::sqrt(var);
        m.std(static_cast<Eigen::Index>(j)) = sd > 1e-12 ? sd : 1.0;
    }
    const Eigen::MatrixXd z = m.standardize(x);
    const double lambda = 1.0 / (static_cast<double>(n) * C);
    const double radius = 1.0 / std::sqrt(lambda);

    m.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(d));
    m.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K));
    std::vector<std::size_t> order(n);
    for (std::size_t k = 0; k < K; ++k) {
        Rng rng(Rng::derive(seed, k));
        Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
        double b = 0;
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::size_t t = 0;
        for (int e = 0; e < epochs; ++e) {
            rng.shuffle(order);
            for (std::size_t i : order) {
                ++t;
                const double eta = 1.0 / (lambda * static_cast<double>(t));
                const double y = labels[i] == static_cast<int>(k) ? 1.0 : -1.0;
                const auto zi = z.row(static_cast<Eigen::Index>(i)).transpose();
                const double margin = y * (w.dot(zi) + b);
                const double shrink = 1.0 - eta * lambda;
                w *= shrink;
                b *= shrink;
                if (margin < 1.0) {
                    w += eta * y * zi;
                    b += eta * y;
                }
                const double norm = std::sqrt(w.squaredNorm() + b * b);
                if (norm > radius) {
                    w *= radius / norm;
                    b *= radius / norm;
                }
            }
        }
        std::vector<double> scores(n), ys(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = w.dot(z.row(static_cast<Eigen::Index>(i)).transpose());
            ys[i] = labels[i] == static_cast<int>(k) ? 1.0 : -1.0;
        }
        m.weights.row(static_cast<Eigen::Index>(k)) = w.transpose();
        m.bias(static_cast<Eigen::Index>(k)) = shallow_detail::best_hinge_bias(scores, ys);
    }
    require(m.weights.allFinite() && m.bias.allFinite(), ErrorKind::Numeric, "SVM weights diverged");
    return m;
}

inline std::vector<int> svm_predict(const LinearSvmModel& m, const FeatureMatrix& x) {
    return shallow_detail::argmax_rows(m.decision_values(x));
}

inline eegd::Container to_container(const LinearSvmModel& m) {
    using shallow_detail::named;
    return eegd::pack("svm",
                      {named("weights", m.weights), named("bias", m.bias.transpose()),
                       named("mean", m.mean.transpose()), named("std", m.std.transpose())},
                      {{"C", m.C}});
}

inline LinearSvmModel svm_from(const eegd::Container& c) {
    const auto arrays = eegd::unpack(c, "svm");
    LinearSvmModel m;
    m.C = c.header.at("meta").at("C").get<double>();
    m.weights = shallow_detail::matrix(eegd::find(arrays, "weights"));
    m.bias = shallow_detail::matrix(eegd::find(arrays, "bias")).row(0).transpose();
    m.mean = shallow_detail::matrix(eegd::find(arrays, "mean")).row(0).transpose();
    m.std = shallow_detail::matrix(eegd::find(arrays, "std")).row(0).transpose();
    return m;
}

// ---------------------------------------------------------------------------
// Linear discriminant analysis

struct LdaModel {
    Eigen::MatrixXd means;        // [classes x features]
    Eigen::MatrixXd cov_inverse;  // pooled, ridge-regularized
    Eigen::VectorXd priors;

    std::size_t n_features() const { return static_cast<std::size_t>(means.cols()); }

    /// delta_c(x) = x' S^-1 mu_c - mu_c' S^-1 mu_c / 2 + log pi_c
    Eigen::MatrixXd discriminants(const FeatureMatrix& x) const {
        require(static_cast<std::size_t>(x.cols()) == n_features(), ErrorKind::Shape,
                "feature dimension " + std::to_string(x.cols()) + " does not match model (" +
                    std::to_string(n_features()) + ")");
        const Eigen::MatrixXd coef = means * cov_inverse;  // [K x d]
        Eigen::VectorXd intercept(means.rows());
        for (Eigen::Index k = 0; k < means.rows(); ++k)
            intercept(k) = -0.5 * coef.row(k).dot(means.row(k)) + std::log(priors(k));
        return (x * coef.transpose()).rowwise() + intercept.transpose();
    }
};

constexpr double kDefaultLdaRidge = 1e-3;

/// Pooled within-class covariance uses the maximum-likelihood (1/N)
/// normalization, so duplicating every sample leaves the model unchanged.
inline LdaModel lda_fit(const FeatureMatrix& x, std::span<const int> labels, double ridge = kDefaultLdaRidge) {
    const auto n = static_cast<std::size_t>(x.rows());
    const auto d = x.cols();
    require(labels.size() == n, ErrorKind::Shape, "label count does not match feature rows");
    require(ridge >= 0, ErrorKind::InvalidParameter, "ridge must be non-negative");
    require(x.allFinite(), ErrorKind::Numeric, "non-finite features");
    const std::size_t K = shallow_detail::class_count(labels);
    require(K >= 1, ErrorKind::InsufficientData, "no samples");
    std::vector<std::size_t> counts(K, 0);
    for (int l : labels) ++counts[l];
    for (std::size_t k = 0; k < K; ++k)
        require(counts[k] >= 2, ErrorKind::InsufficientData, "class " + std::to_string(k) + " has fewer than 2 samples");

    LdaModel m;
    m.means = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), d);
    for (std::size_t i = 0; i < n; ++i) m.means.row(labels[i]) += x.row(static_cast<Eigen::Index>(i));
    for (std::size_t k = 0; k < K; ++k) m.means.row(static_cast<Eigen::Index>(k)) /= static_cast<double>(counts[k]);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::RowVectorXd r = x.row(static_cast<Eigen::Index>(i)) - m.means.row(labels[i]);
        cov.noalias() += r.transpose() * r;
    }
    cov /= static_cast<double>(n);
    cov.diagonal().array() += ridge * cov.trace() / static_cast<double>(d);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    require(llt.info() == Eigen::Success, ErrorKind::Numeric, "pooled covariance is not positive definite");
    m.cov_inverse = llt.solve(Eigen::MatrixXd::Identity(d, d));
    m.cov_inverse = 0.5 * (m.cov_inverse + m.cov_inverse.transpose());
    m.priors.resize(static_cast<Eigen::Index>(K));
    for (std::size_t k = 0; k < K; ++k) m.priors(static_cast<Eigen::Index>(k)) = static_cast<double>(counts[k]) / n;
    return m;
}

inline std::vector<int> lda_predict(const LdaModel& m, const FeatureMatrix& x) {
    return shallow_detail::argmax_rows(m.discriminants(x));
}

inline eegd::Container to_container(const LdaModel& m) {
    using shallow_detail::named;
    return eegd::pack("lda", {named("means", m.means), named("cov_inverse", m.cov_inverse),
                              named("priors", m.priors.transpose())});
}

inline LdaModel lda_from(const eegd::Container& c) {
    const auto arrays = eegd::unpack(c, "lda");
    LdaModel m;
    m.means = shallow_detail::matrix(eegd::find(arrays, "means"));
    m.cov_inverse = shallow_detail::matrix(eegd::find(arrays, "cov_inverse"));
    m.priors = shallow_detail::matrix(eegd::find(arrays, "priors")).row(0).transpose();
    return m;
}

}  // namespace imspeech
