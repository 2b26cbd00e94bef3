#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "schedule.hpp"

namespace imspeech {

constexpr std::size_t kDefaultChannels = 58;
constexpr double kAcquisitionRateHz = 1000.0;
constexpr double kLineNoiseHz = 60.0;
constexpr double kDefaultNotchQuality = 30.0;
constexpr double kDefaultBandLoHz = 0.5;
constexpr double kDefaultBandHiHz = 40.0;
constexpr double kWorkingRateHz = 250.0;

inline std::vector<std::string> default_channel_names(std::size_t n) {
    std::vector<std::string> names;
    names.reserve(n);
    for (std::size_t i = 0; i < n; ++i) names.push_back("EEG" + std::to_string(i + 1));
    return names;
}

/// Continuous multichannel signal, row-major [channels x samples].
class RawRecording {
public:
    RawRecording(std::vector<float> data, double fs, std::vector<std::string> channel_names)
        : data_(std::move(data)), fs_(fs), names_(std::move(channel_names)) {
        require(!names_.empty(), ErrorKind::InvalidParameter, "recording needs at least one channel");
        require(fs_ > 0 && std::isfinite(fs_), ErrorKind::InvalidParameter, "sampling rate must be positive");
        require(!data_.empty() && data_.size() % names_.size() == 0, ErrorKind::Shape,
                "data length is not a positive multiple of the channel count");
        for (float v : data_) require(std::isfinite(v), ErrorKind::Numeric, "recording contains non-finite samples");
    }

    std::size_t channels() const { return names_.size(); }
    std::size_t samples() const { return data_.size() / names_.size(); }
    double fs() const { return fs_; }
    const std::vector<std::string>& channel_names() const { return names_; }
    const std::vector<float>& data() const { return data_; }
    std::span<const float> channel(std::size_t c) const {
        return std::span<const float>(data_).subspan(c * samples(), samples());
    }

private:
    std::vector<float> data_;
    double fs_;
    std::vector<std::string> names_;
};

/// Labeled trials, row-major [trials x channels x samples].
class EpochSet {
public:
    EpochSet(std::vector<float> data, std::size_t channels, std::size_t samples, std::vector<int> labels,
             std::vector<std::string> class_names, double fs)
        : data_(std::move(data)),
          channels_(channels),
          samples_(samples),
          labels_(std::move(labels)),
          class_names_(std::move(class_names)),
          fs_(fs) {
        require(channels_ >= 1 && samples_ >= 1, ErrorKind::Shape, "epochs need channels and samples");
        require(data_.size() == labels_.size() * channels_ * samples_, ErrorKind::Shape,
                "epoch data length does not match trials x channels x samples");
        require(fs_ > 0, ErrorKind::InvalidParameter, "sampling rate must be positive");
        for (int l : labels_)
            require(l >= 0 && l < static_cast<int>(class_names_.size()), ErrorKind::InvalidLabel,
                    "label " + std::to_string(l) + " outside class list");
    }

    std::size_t trials() const { return labels_.size(); }
    std::size_t channels() const { return channels_; }
    std::size_t samples() const { return samples_; }
    std::size_t n_classes() const { return class_names_.size(); }
    double fs() const { return fs_; }
    const std::vector<int>& labels() const { return labels_; }
    const std::vector<std::string>& class_names() const { return class_names_; }
    const std::vector<float>& data() const { return data_; }

    std::size_t epoch_size() const { return channels_ * samples_; }
    std::span<const float> epoch(std::size_t i) const {
        return std::span<const float>(data_).subspan(i * epoch_size(), epoch_size());
    }

    EpochSet subset(std::span<const std::size_t> indices) const {
        std::vector<float> d;
        d.reserve(indices.size() * epoch_size());
        std::vector<int> l;
        l.reserve(indices.size());
        for (std::size_t i : indices) {
            require(i < trials(), ErrorKind::OutOfRange, "trial index out of range");
            auto e = epoch(i);
            d.insert(d.end(), e.begin(), e.end());
            l.push_back(labels_[i]);
        }
        return EpochSet(std::move(d), channels_, samples_, std::move(l), class_names_, fs_);
    }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> n(n_classes(), 0);
        for (int l : labels_) ++n[l];
        return n;
    }

private:
    std::vector<float> data_;
    std::size_t channels_;
    std::size_t samples_;
    std::vector<int> labels_;
    std::vector<std::string> class_names_;
    double fs_;
};

// ---------------------------------------------------------------------------
// IIR filtering

/// Second-order section, a0 normalized to 1.
struct Biquad {
    double b0, b1, b2, a1, a2;

    double dc_gain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }

    /// Magnitude response at frequency f for sampling rate fs.
    double magnitude(double f, double fs) const {
        const double w = 2.0 * std::numbers::pi * f / fs;
        const double c1 = std::cos(w), s1 = std::sin(w), c2 = std::cos(2 * w), s2 = std::sin(2 * w);
        const double nr = b0 + b1 * c1 + b2 * c2, ni = -(b1 * s1 + b2 * s2);
        const double dr = 1.0 + a1 * c1 + a2 * c2, di = -(a1 * s1 + a2 * s2);
        return std::sqrt((nr * nr + ni * ni) / (dr * dr + di * di));
    }
};

using SosCascade = std::vector<Biquad>;

inline Biquad design_notch(double center_hz, double quality, double fs) {
    const double w0 = 2.0 * std::numbers::pi * center_hz / fs;
    const double alpha = std::sin(w0) / (2.0 * quality);
    const double a0 = 1.0 + alpha;
    const double c = -2.0 * std::cos(w0);
    return {1.0 / a0, c / a0, 1.0 / a0, c / a0, (1.0 - alpha) / a0};
}

// Second-order Butterworth sections via the bilinear transform (Q = 1/sqrt 2).
inline Biquad design_butter_lowpass(double cutoff_hz, double fs, double q = std::numbers::sqrt2 / 2) {
    const double w0 = 2.0 * std::numbers::pi * cutoff_hz / fs;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double cw = std::cos(w0);
    const double a0 = 1.0 + alpha;
    return {(1 - cw) / 2 / a0, (1 - cw) / a0, (1 - cw) / 2 / a0, -2 * cw / a0, (1 - alpha) / a0};
}

inline Biquad design_butter_highpass(double cutoff_hz, double fs, double q = std::numbers::sqrt2 / 2) {
    const double w0 = 2.0 * std::numbers::pi * cutoff_hz / fs;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double cw = std::cos(w0);
    const double a0 = 1.0 + alpha;
    return {(1 + cw) / 2 / a0, -(1 + cw) / a0, (1 + cw) / 2 / a0, -2 * cw / a0, (1 - alpha) / a0};
}

namespace detail {

// Direct form II transposed, with the state initialised to the step
// steady-state scaled by the first input sample.
inline void sos_filter_inplace(const SosCascade& sos, std::vector<double>& x) {
    if (x.empty()) return;
    double x0 = x.front();
    for (const auto& s : sos) {
        const double g = s.dc_gain();
        double s2 = (s.b2 - s.a2 * g) * x0;
        double s1 = (s.b1 - s.a1 * g) * x0 + s2;
        for (double& v : x) {
            const double in = v;
            const double y = s.b0 * in + s1;
            s1 = s.b1 * in - s.a1 * y + s2;
            s2 = s.b2 * in - s.a2 * y;
            v = y;
        }
        x0 *= g;
    }
}

/// Odd extension of length pad at both ends.
inline std::vector<double> odd_extend(std::span<const float> x, std::size_t pad) {
    const std::size_t n = x.size();
    std::vector<double> out(n + 2 * pad);
    for (std::size_t i = 0; i < pad; ++i) {
        out[pad - 1 - i] = 2.0 * x[0] - x[i + 1];
        out[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];
    }
    for (std::size_t i = 0; i < n; ++i) out[pad + i] = x[i];
    return out;
}

}  // namespace detail

/// Zero-phase forward-backward application of a biquad cascade.
inline std::vector<float> filtfilt(const SosCascade& sos, std::span<const float> x, std::size_t padlen) {
    if (x.size() < 2) return {x.begin(), x.end()};
    const std::size_t pad = std::min(padlen, x.size() - 1);
    auto y = detail::odd_extend(x, pad);
    detail::sos_filter_inplace(sos, y);
    std::reverse(y.begin(), y.end());
    detail::sos_filter_inplace(sos, y);
    std::reverse(y.begin(), y.end());
    return {y.begin() + static_cast<std::ptrdiff_t>(pad), y.end() - static_cast<std::ptrdiff_t>(pad)};
}

inline RawRecording filtfilt(const RawRecording& rec, const SosCascade& sos, std::size_t padlen) {
    std::vector<float> out;
    out.reserve(rec.data().size());
    for (std::size_t c = 0; c < rec.channels(); ++c) {
        auto y = filtfilt(sos, rec.channel(c), padlen);
        out.insert(out.end(), y.begin(), y.end());
    }
    return RawRecording(std::move(out), rec.fs(), rec.channel_names());
}

// Edge padding long enough for the slowest pole of the cascade to settle
// (about five time constants, at least one second of signal).
inline std::size_t settling_padlen(double slowest_hz, double fs) {
    return static_cast<std::size_t>(std::ceil(std::max(fs, 5.0 * fs / (2.0 * std::numbers::pi * slowest_hz))));
}

inline RawRecording notch_filter(const RawRecording& rec, double center_hz = kLineNoiseHz,
                                 double quality = kDefaultNotchQuality) {
    require(center_hz > 0 && center_hz < rec.fs() / 2, ErrorKind::InvalidParameter,
            "notch center must lie in (0, Nyquist)");
    require(quality > 0, ErrorKind::InvalidParameter, "notch quality must be positive");
    const SosCascade sos{design_notch(center_hz, quality, rec.fs())};
    // Notch bandwidth is center/quality; its poles decay at that rate.
    return filtfilt(rec, sos, settling_padlen(center_hz / quality / 2.0, rec.fs()));
}

inline SosCascade design_bandpass(double lo_hz, double hi_hz, double fs) {
    return {design_butter_highpass(lo_hz, fs), design_butter_lowpass(hi_hz, fs)};
}

inline RawRecording bandpass_filter(const RawRecording& rec, double lo_hz = kDefaultBandLoHz,
                                    double hi_hz = kDefaultBandHiHz) {
    require(lo_hz > 0 && lo_hz < hi_hz && hi_hz < rec.fs() / 2, ErrorKind::InvalidParameter,
            "band must satisfy 0 < lo < hi < Nyquist");
    return filtfilt(rec, design_bandpass(lo_hz, hi_hz, rec.fs()), settling_padlen(lo_hz, rec.fs()));
}

// ---------------------------------------------------------------------------
// Resampling

/// Hamming-windowed sinc low-pass, unit DC gain, 2*half_len+1 taps.
inline std::vector<double> windowed_sinc(double cutoff_over_fs, std::size_t half_len) {
    const std::size_t n = 2 * half_len + 1;
    std::vector<double> h(n);
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double k = static_cast<double>(i) - static_cast<double>(half_len);
        const double x = 2.0 * cutoff_over_fs * k;
        const double sinc = k == 0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
        const double w = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / (n - 1));
        h[i] = sinc * w;
        sum += h[i];
    }
    for (double& v : h) v /= sum;
    return h;
}

/// Anti-alias low-pass then integer decimation. Only integer ratios
/// fs / to_hz are supported.
inline RawRecording resample(const RawRecording& rec, double to_hz) {
    require(to_hz > 0, ErrorKind::InvalidParameter, "target rate must be positive");
    require(to_hz <= rec.fs(), ErrorKind::UnsupportedUpsample, "upsampling is not supported");
    const double ratio = rec.fs() / to_hz;
    const auto factor = static_cast<std::size_t>(std::llround(ratio));
    require(std::abs(ratio - static_cast<double>(factor)) < 1e-9, ErrorKind::InvalidParameter,
            "only integer decimation factors are supported");
    if (factor == 1) return rec;

    const std::size_t half = 10 * factor;
    const auto h = windowed_sinc(0.4 * to_hz / rec.fs(), half);
    const std::size_t n = rec.samples();
    const std::size_t n_out = n / factor;
    std::vector<float> out;
    out.reserve(rec.channels() * n_out);
    for (std::size_t c = 0; c < rec.channels(); ++c) {
        const auto ext = detail::odd_extend(rec.channel(c), std::min(half, n - 1));
        const std::size_t pad = std::min(half, n - 1);
        for (std::size_t j = 0; j < n_out; ++j) {
            // Centre tap on input sample j*factor; zero-phase by symmetry.
            const std::ptrdiff_t centre = static_cast<std::ptrdiff_t>(j * factor + pad);
            double acc = 0;
            for (std::size_t k = 0; k < h.size(); ++k) {
                const std::ptrdiff_t idx = centre + static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(half);
                if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(ext.size())) acc += h[k] * ext[idx];
            }
            out.push_back(static_cast<float>(acc));
        }
    }
    return RawRecording(std::move(out), to_hz, rec.channel_names());
}

// ---------------------------------------------------------------------------
// Epoching

/// One epoch per blank interval of the schedule, labeled by its cued word.
inline EpochSet epoch_stream(const RawRecording& rec, const ParadigmSchedule& schedule) {
    schedule.validate();
    const auto len = static_cast<std::size_t>(std::llround(kBlankSeconds * rec.fs()));
    std::vector<float> data;
    std::vector<int> labels;
    for (const auto& e : schedule.events) {
        if (e.kind != EventKind::Blank) continue;
        const auto start = static_cast<std::size_t>(std::llround(e.start_s * rec.fs()));
        require(start + len <= rec.samples(), ErrorKind::OutOfRange,
                "blank interval at " + std::to_string(e.start_s) + " s exceeds the recording");
        for (std::size_t c = 0; c < rec.channels(); ++c) {
            auto ch = rec.channel(c).subspan(start, len);
            data.insert(data.end(), ch.begin(), ch.end());
        }
        labels.push_back(*e.word);
    }
    return EpochSet(std::move(data), rec.channels(), len, std::move(labels), schedule.words, rec.fs());
}

/// The standard chain: line-noise notch, band-pass, resample, epoch.
inline EpochSet preprocess(const RawRecording& rec, const ParadigmSchedule& schedule,
                           double to_hz = kWorkingRateHz) {
    auto r = notch_filter(rec);
    r = bandpass_filter(r);
    r = resample(r, to_hz);
    return epoch_stream(r, schedule);
}

}  // namespace imspeech
