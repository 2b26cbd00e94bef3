#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <fftw3.h>

#include "eegd.hpp"
#include "error.hpp"
#include "signal.hpp"

namespace imspeech {

// ---------------------------------------------------------------------------
// Welch power spectral density

struct Psd {
    std::size_t channels = 0;
    double fs = 0;
    std::vector<double> freqs;   // bin centre frequencies, spacing 1 / window length
    std::vector<double> values;  // [channels x freqs.size()]

    std::size_t bins() const { return freqs.size(); }
    double df() const { return freqs.size() > 1 ? freqs[1] - freqs[0] : fs; }
    std::span<const double> channel(std::size_t c) const {
        return std::span<const double>(values).subspan(c * bins(), bins());
    }
};

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
    return w;
}

namespace features_detail {

class RealFft {
public:
    explicit RealFft(std::size_t n) : n_(n) {
        in_ = fftw_alloc_real(n);
        out_ = fftw_alloc_complex(n / 2 + 1);
        plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
    }
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;
    ~RealFft() {
        fftw_destroy_plan(plan_);
        fftw_free(in_);
        fftw_free(out_);
    }

    double* input() { return in_; }

    /// Executes the transform and returns |X_k|^2 for k = 0..n/2.
    void power(std::vector<double>& out) {
        fftw_execute(plan_);
        out.resize(n_ / 2 + 1);
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
    }

private:
    std::size_t n_;
    double* in_;
    fftw_complex* out_;
    fftw_plan plan_;
};

}  // namespace features_detail

/// One-sided density-scaled Welch estimate of an epoch laid out as
/// [channels x samples]. Each segment is mean-removed and Hann-windowed.
inline Psd welch_psd(std::span<const float> epoch, std::size_t channels, double fs, double win_s = 1.0,
                     double overlap = 0.5) {
    require(channels >= 1 && epoch.size() % channels == 0, ErrorKind::Shape, "epoch is not channels x samples");
    require(fs > 0, ErrorKind::InvalidParameter, "fs must be positive");
    require(overlap >= 0.0 && overlap < 1.0, ErrorKind::InvalidParameter, "overlap must lie in [0, 1)");
    const std::size_t samples = epoch.size() / channels;
    const auto nseg = static_cast<std::size_t>(std::llround(win_s * fs));
    require(nseg >= 8, ErrorKind::InvalidParameter, "window must span at least 8 samples");
    require(nseg <= samples, ErrorKind::InvalidParameter, "window longer than epoch");
    const std::size_t step =
        std::max<std::size_t>(1, nseg - static_cast<std::size_t>(std::llround(overlap * static_cast<double>(nseg))));

    const auto w = hann_window(nseg);
    double wss = 0;
    for (double v : w) wss += v * v;

    Psd psd;
    psd.channels = channels;
    psd.fs = fs;
    const std::size_t bins = nseg / 2 + 1;
    for (std::size_t k = 0; k < bins; ++k) psd.freqs.push_back(static_cast<double>(k) * fs / nseg);
    psd.values.assign(channels * bins, 0.0);

    features_detail::RealFft fft(nseg);
    std::vector<double> power;
    std::size_t segments = 0;
    for (std::size_t start = 0; start + nseg <= samples; start += step) ++segments;
    for (std::size_t c = 0; c < channels; ++c) {
        const float* x = epoch.data() + c * samples;
        double* out = psd.values.data() + c * bins;
        for (std::size_t start = 0; start + nseg <= samples; start += step) {
            double mean = 0;
            for (std::size_t i = 0; i < nseg; ++i) mean += x[start + i];
            mean /= static_cast<double>(nseg);
            for (std::size_t i = 0; i < nseg; ++i) fft.input()[i] = (x[start + i] - mean) * w[i];
            fft.power(power);
            for (std::size_t k = 0; k < bins; ++k) out[k] += power[k];
        }
        const double scale = 1.0 / (fs * wss * static_cast<double>(segments));
        for (std::size_t k = 0; k < bins; ++k) {
            const bool edge = k == 0 || (nseg % 2 == 0 && k == bins - 1);
            out[k] *= edge ? scale : 2.0 * scale;
        }
    }
    return psd;
}

// ---------------------------------------------------------------------------
// Band powers

struct BandDefinition {
    std::string name;
    double lo_hz;
    double hi_hz;
};

inline const std::vector<BandDefinition>& default_bands() {
    static const std::vector<BandDefinition> bands{
        {"delta", 1.0, 4.0}, {"theta", 4.0, 8.0}, {"alpha", 8.0, 13.0}, {"beta", 13.0, 30.0}};
    return bands;
}

/// Mean PSD over the bins in [lo, hi) for every channel and band,
/// flattened channel-major.
inline std::vector<double> band_powers(const Psd& psd, const std::vector<BandDefinition>& bands = default_bands()) {
    require(!bands.empty(), ErrorKind::InvalidParameter, "no bands given");
    const double nyquist = psd.fs / 2.0;
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (const auto& b : bands) {
        require(b.lo_hz < b.hi_hz, ErrorKind::InvalidParameter, "band '" + b.name + "' has lo >= hi");
        require(b.lo_hz >= 0 && b.hi_hz <= nyquist, ErrorKind::InvalidParameter,
                "band '" + b.name + "' lies outside [0, Nyquist]");
        std::size_t first = psd.bins(), last = 0;
        for (std::size_t k = 0; k < psd.bins(); ++k) {
            if (psd.freqs[k] >= b.lo_hz && psd.freqs[k] < b.hi_hz) {
                first = std::min(first, k);
                last = k + 1;
            }
        }
        require(first < last, ErrorKind::InvalidParameter, "band '" + b.name + "' contains no frequency bins");
        ranges.emplace_back(first, last);
    }
    std::vector<double> out;
    out.reserve(psd.channels * bands.size());
    for (std::size_t c = 0; c < psd.channels; ++c) {
        auto row = psd.channel(c);
        for (auto [first, last] : ranges) {
            double s = 0;
            for (std::size_t k = first; k < last; ++k) s += row[k];
            out.push_back(s / static_cast<double>(last - first));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Common spatial patterns

using MatrixXd = Eigen::MatrixXd;
using VectorXd = Eigen::VectorXd;

struct GeneralizedEigen {
    VectorXd values;   // descending
    MatrixXd vectors;  // columns, B-orthonormal: V^T B V = I
};

/// Solves A v = lambda B v for symmetric A and symmetric positive definite B
/// by Cholesky whitening of B followed by a symmetric eigendecomposition.
inline GeneralizedEigen generalized_eigen(const MatrixXd& a, const MatrixXd& b) {
    require(a.rows() == a.cols() && b.rows() == b.cols() && a.rows() == b.rows(), ErrorKind::Shape,
            "generalized eigenproblem needs square matrices of equal size");
    require(a.allFinite() && b.allFinite(), ErrorKind::Numeric, "non-finite covariance");
    Eigen::LLT<MatrixXd> llt(b);
    require(llt.info() == Eigen::Success, ErrorKind::Numeric, "composite covariance is not positive definite");
    const MatrixXd l = llt.matrixL();
    const MatrixXd linv_a = l.triangularView<Eigen::Lower>().solve(a);
    const MatrixXd m = l.triangularView<Eigen::Lower>().solve(linv_a.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()));
    require(es.info() == Eigen::Success, ErrorKind::Numeric, "eigendecomposition failed");
    GeneralizedEigen out;
    out.values = es.eigenvalues().reverse();
    const MatrixXd v = es.eigenvectors().rowwise().reverse();
    out.vectors = l.transpose().triangularView<Eigen::Upper>().solve(v);
    return out;
}

/// Trace-normalized spatial covariance of one mean-removed epoch.
inline MatrixXd normalized_covariance(std::span<const float> epoch, std::size_t channels) {
    const std::size_t samples = epoch.size() / channels;
    MatrixXd x(channels, samples);
    for (std::size_t c = 0; c < channels; ++c) {
        double mean = 0;
        for (std::size_t t = 0; t < samples; ++t) mean += epoch[c * samples + t];
        mean /= static_cast<double>(samples);
        for (std::size_t t = 0; t < samples; ++t) x(c, t) = epoch[c * samples + t] - mean;
    }
    MatrixXd cov = x * x.transpose();
    const double tr = cov.trace();
    require(std::isfinite(tr), ErrorKind::Numeric, "non-finite covariance");
    require(tr > 0, ErrorKind::Degenerate, "epoch has zero variance");
    return cov / tr;
}

struct CspModel {
    std::size_t channels = 0;
    std::size_t class_count = 0;
    std::size_t filters_per_class = 0;
    double ridge = 0;
    MatrixXd filters;      // [class_count * filters_per_class x channels], unit rows
    MatrixXd eigenvalues;  // [class_count x channels], descending per class

    std::size_t n_filters() const { return static_cast<std::size_t>(filters.rows()); }
    /// Rows of `filters` belonging to class c: [first, first + filters_per_class).
    std::size_t first_filter(std::size_t c) const { return c * filters_per_class; }
};

constexpr std::size_t kDefaultCspFiltersPerClass = 4;
constexpr double kDefaultCspRidge = 1e-6;

/// One-vs-rest CSP. For each class, keeps filters_per_class/2 filters from
/// each end of the generalized spectrum of (class, class + rest).
inline CspModel csp_fit(const EpochSet& epochs, std::size_t filters_per_class = kDefaultCspFiltersPerClass,
                        double ridge = kDefaultCspRidge) {
    require(filters_per_class >= 2 && filters_per_class % 2 == 0, ErrorKind::InvalidParameter,
            "filters_per_class must be even and >= 2");
    require(ridge >= 0, ErrorKind::InvalidParameter, "ridge must be non-negative");
    const std::size_t C = epochs.channels();
    const std::size_t K = epochs.n_classes();
    require(filters_per_class <= C, ErrorKind::InvalidParameter, "more filters per class than channels");
    const auto counts = epochs.class_counts();
    for (std::size_t k = 0; k < K; ++k)
        require(counts[k] >= 2, ErrorKind::InsufficientData,
                "class " + std::to_string(k) + " has fewer than 2 trials");

    std::vector<MatrixXd> class_sum(K, MatrixXd::Zero(C, C));
    for (std::size_t i = 0; i < epochs.trials(); ++i)
        class_sum[epochs.labels()[i]] += normalized_covariance(epochs.epoch(i), C);
    MatrixXd total = MatrixXd::Zero(C, C);
    for (const auto& s : class_sum) total += s;

    auto regularize = [&](MatrixXd m) {
        m /= m.trace();
        m.diagonal().array() += ridge * m.trace() / static_cast<double>(C);
        return m;
    };

    CspModel model;
    model.channels = C;
    model.class_count = K;
    model.filters_per_class = filters_per_class;
    model.ridge = ridge;
    model.filters.resize(static_cast<Eigen::Index>(K * filters_per_class), static_cast<Eigen::Index>(C));
    model.eigenvalues.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(C));
    const std::size_t half = filters_per_class / 2;
    for (std::size_t k = 0; k < K; ++k) {
        const MatrixXd own = regularize(class_sum[k] / static_cast<double>(counts[k]));
        const MatrixXd rest = regularize((total - class_sum[k]) / static_cast<double>(epochs.trials() - counts[k]));
        const auto ge = generalized_eigen(own, own + rest);
        model.eigenvalues.row(static_cast<Eigen::Index>(k)) = ge.values.transpose();
        for (std::size_t j = 0; j < filters_per_class; ++j) {
            const std::size_t col = j < half ? j : C - filters_per_class + j;
            VectorXd w = ge.vectors.col(static_cast<Eigen::Index>(col));
            w /= w.norm();
            model.filters.row(static_cast<Eigen::Index>(k * filters_per_class + j)) = w.transpose();
        }
    }
    require(model.filters.allFinite(), ErrorKind::Numeric, "CSP produced non-finite filters");
    return model;
}

/// Log of each filtered signal's variance relative to the summed variance
/// over all of the model's filters.
inline std::vector<double> csp_transform(const CspModel& model, std::span<const float> epoch,
                                         std::size_t channels) {
    require(channels == model.channels && epoch.size() % channels == 0, ErrorKind::Shape,
            "epoch has " + std::to_string(channels) + " channels, model expects " + std::to_string(model.channels));
    const std::size_t samples = epoch.size() / channels;
    std::vector<double> mean(channels, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t t = 0; t < samples; ++t) mean[c] += epoch[c * samples + t];
        mean[c] /= static_cast<double>(samples);
    }
    const std::size_t nf = model.n_filters();
    std::vector<double> var(nf, 0.0);
    std::vector<double> z(samples);
    for (std::size_t f = 0; f < nf; ++f) {
        std::fill(z.begin(), z.end(), 0.0);
        for (std::size_t c = 0; c < channels; ++c) {
            const double w = model.filters(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(c));
            const float* x = epoch.data() + c * samples;
            for (std::size_t t = 0; t < samples; ++t) z[t] += w * (x[t] - mean[c]);
        }
        double s = 0;
        for (double v : z) s += v * v;
        var[f] = s / static_cast<double>(samples);
    }
    double total = 0;
    for (double v : var) total += v;
    require(std::isfinite(total), ErrorKind::Numeric, "non-finite filtered variance");
    std::vector<double> out(nf);
    for (std::size_t f = 0; f < nf; ++f) {
        require(var[f] > 0 && total > 0, ErrorKind::Degenerate, "zero variance after spatial filtering");
        out[f] = std::log(var[f] / total);
    }
    return out;
}

inline eegd::Container to_container(const CspModel& m) {
    std::vector<float> filters, eig;
    for (Eigen::Index r = 0; r < m.filters.rows(); ++r)
        for (Eigen::Index c = 0; c < m.filters.cols(); ++c) filters.push_back(static_cast<float>(m.filters(r, c)));
    for (Eigen::Index r = 0; r < m.eigenvalues.rows(); ++r)
        for (Eigen::Index c = 0; c < m.eigenvalues.cols(); ++c) eig.push_back(static_cast<float>(m.eigenvalues(r, c)));
    return eegd::pack("csp",
                      {{"filters", {m.n_filters(), m.channels}, filters},
                       {"eigenvalues", {m.class_count, m.channels}, eig}},
                      {{"channels", m.channels},
                       {"class_count", m.class_count},
                       {"filters_per_class", m.filters_per_class},
                       {"ridge", m.ridge}});
}

inline CspModel csp_from(const eegd::Container& c) {
    const auto arrays = eegd::unpack(c, "csp");
    const auto& meta = c.header.at("meta");
    CspModel m;
    m.channels = meta.at("channels").get<std::size_t>();
    m.class_count = meta.at("class_count").get<std::size_t>();
    m.filters_per_class = meta.at("filters_per_class").get<std::size_t>();
    m.ridge = meta.at("ridge").get<double>();
    const auto& f = eegd::find(arrays, "filters");
    const auto& e = eegd::find(arrays, "eigenvalues");
    require(f.shape.size() == 2 && f.shape[1] == m.channels && e.shape.size() == 2, ErrorKind::Format,
            "CSP arrays have unexpected shapes");
    m.filters.resize(static_cast<Eigen::Index>(f.shape[0]), static_cast<Eigen::Index>(f.shape[1]));
    for (std::size_t i = 0; i < f.values.size(); ++i)
        m.filters(static_cast<Eigen::Index>(i / m.channels), static_cast<Eigen::Index>(i % m.channels)) = f.values[i];
    m.eigenvalues.resize(static_cast<Eigen::Index>(e.shape[0]), static_cast<Eigen::Index>(e.shape[1]));
    for (std::size_t i = 0; i < e.values.size(); ++i)
        m.eigenvalues(static_cast<Eigen::Index>(i / e.shape[1]), static_cast<Eigen::Index>(i % e.shape[1])) =
            e.values[i];
    return m;
}

}  // namespace imspeech
