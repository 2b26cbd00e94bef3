#pragma once

// Surrogate EEG with a known class structure, laid out on the paradigm
// schedule. Background: unit-variance 1/f noise per channel plus a shared
// 10 Hz alpha rhythm. During each blank interval the cued word's signature
// (narrowband burst, fixed spatial pattern, Hann envelope) is added with
// amplitude proportional to `separability`.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "signal.hpp"

namespace imspeech {

struct SynthConfig {
    std::size_t n_channels = kDefaultChannels;
    double fs = kAcquisitionRateHz;
    std::vector<std::string> words = default_words();
    double separability = 1.0;
    double noise_scale = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        require(n_channels >= 1, ErrorKind::InvalidParameter, "n_channels must be >= 1");
        require(fs > 0, ErrorKind::InvalidParameter, "fs must be positive");
        require(!words.empty(), ErrorKind::InvalidParameter, "word list is empty");
        require(separability >= 0.0 && separability <= 1.0, ErrorKind::InvalidParameter,
                "separability must lie in [0, 1]");
        require(noise_scale > 0, ErrorKind::InvalidParameter, "noise_scale must be positive");
    }
};

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
    SynthConfig c;
    try {
        c.n_channels = j.value("n_channels", c.n_channels);
        c.fs = j.value("fs", c.fs);
        c.words = j.value("words", c.words);
        c.separability = j.value("separability", c.separability);
        c.noise_scale = j.value("noise_scale", c.noise_scale);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& ex) {
        fail(ErrorKind::Format, std::string("synth config: ") + ex.what());
    }
    c.validate();
    return c;
}

inline nlohmann::ordered_json to_json(const SynthConfig& c) {
    return {{"n_channels", c.n_channels}, {"fs", c.fs},
            {"words", c.words},           {"separability", c.separability},
            {"noise_scale", c.noise_scale}, {"seed", c.seed}};
}

namespace synth_detail {

// Paul Kellet's pink-noise filter: six leaky integrators plus direct and
// one-sample-delayed white terms.
struct PinkFilter {
    static constexpr std::array<double, 6> pole{0.99886, 0.99332, 0.96900, 0.86650, 0.55000, -0.7616};
    static constexpr std::array<double, 6> gain{0.0555179, 0.0750759, 0.1538520, 0.3104856, 0.5329522, -0.0168980};
    static constexpr double direct = 0.5362;
    static constexpr double delayed = 0.115926;

    std::array<double, 6> state{};
    double prev_white = 0;

    double step(double white) {
        double out = direct * white + delayed * prev_white;
        for (std::size_t i = 0; i < 6; ++i) {
            state[i] = pole[i] * state[i] + gain[i] * white;
            out += state[i];
        }
        prev_white = white;
        return out;
    }

    /// Stationary output variance for unit-variance white input.
    static double stationary_variance() {
        double v = direct * direct + delayed * delayed;
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = 0; j < 6; ++j) v += gain[i] * gain[j] / (1.0 - pole[i] * pole[j]);
            v += 2.0 * direct * gain[i] + 2.0 * delayed * gain[i] * pole[i];
        }
        return v;
    }
};

}  // namespace synth_detail

/// Per-word signature amplitude at separability 1, in units of the
/// background standard deviation. Frozen so that the default generator
/// is separable by both the spectral and the spatial baselines.
constexpr double kSignatureAmplitude = 3.0;
constexpr double kAlphaAmplitude = 0.8;
constexpr double kAlphaHz = 10.0;

inline double signature_frequency(std::size_t word) { return 6.0 + 4.0 * static_cast<double>(word); }

/// Seeded spatial pattern of a word: about a third of the channels carry it,
/// with weights in [0.5, 1] and random sign.
inline std::vector<double> signature_pattern(const SynthConfig& cfg, std::size_t word) {
    Rng rng(Rng::derive(cfg.seed, 100 + word));
    std::vector<std::size_t> idx(cfg.n_channels);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    const std::size_t active = std::max<std::size_t>(1, (cfg.n_channels + 2) / 3);
    std::vector<double> w(cfg.n_channels, 0.0);
    for (std::size_t i = 0; i < active; ++i) {
        const double mag = rng.uniform(0.5, 1.0);
        w[idx[i]] = rng.uniform() < 0.5 ? -mag : mag;
    }
    return w;
}

inline RawRecording synthesize_recording(const ParadigmSchedule& schedule, const SynthConfig& cfg) {
    cfg.validate();
    schedule.validate();
    require(schedule.words.size() <= cfg.words.size(), ErrorKind::InvalidParameter,
            "schedule names more words than the config");
    const auto n = static_cast<std::size_t>(std::ceil(schedule.duration_s() * cfg.fs));
    require(n >= 1, ErrorKind::InvalidParameter, "schedule is empty");
    const std::size_t C = cfg.n_channels;
    std::vector<double> x(C * n, 0.0);

    // Background 1/f noise, one independent stream per channel.
    const double pink_norm = cfg.noise_scale / std::sqrt(synth_detail::PinkFilter::stationary_variance());
    for (std::size_t c = 0; c < C; ++c) {
        Rng rng(Rng::derive(cfg.seed, 1000 + c));
        synth_detail::PinkFilter pf;
        for (int i = 0; i < 4000; ++i) pf.step(rng.normal());  // burn-in
        for (std::size_t t = 0; t < n; ++t) x[c * n + t] = pink_norm * pf.step(rng.normal());
    }

    // Shared alpha rhythm with a slowly wandering phase and a fixed
    // per-channel gain.
    {
        Rng rng(Rng::derive(cfg.seed, 2));
        std::vector<double> gain(C);
        for (auto& g : gain) g = rng.uniform(0.5, 1.5);
        double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double dphi = 2.0 * std::numbers::pi * kAlphaHz / cfg.fs;
        const double amp = kAlphaAmplitude * cfg.noise_scale;
        for (std::size_t t = 0; t < n; ++t) {
            phase += dphi + 0.02 * rng.normal();
            const double s = amp * std::sin(phase);
            for (std::size_t c = 0; c < C; ++c) x[c * n + t] += gain[c] * s;
        }
    }

    // Class signatures. Per-trial draws happen regardless of separability so
    // the background is unchanged when only separability varies.
    std::vector<std::vector<double>> patterns;
    for (std::size_t w = 0; w < cfg.words.size(); ++w) patterns.push_back(signature_pattern(cfg, w));
    Rng trial_rng(Rng::derive(cfg.seed, 3));
    const double amp = kSignatureAmplitude * cfg.separability * cfg.noise_scale;
    for (const auto& e : schedule.events) {
        if (e.kind != EventKind::Blank) continue;
        const auto word = static_cast<std::size_t>(*e.word);
        const double f = signature_frequency(word) + trial_rng.uniform(-0.5, 0.5);
        const double phase = trial_rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double gain = amp * (1.0 + 0.2 * trial_rng.normal());
        if (amp == 0.0) continue;
        const auto start = static_cast<std::size_t>(std::llround(e.start_s * cfg.fs));
        const auto len = static_cast<std::size_t>(std::llround(e.duration_s * cfg.fs));
        for (std::size_t k = 0; k < len && start + k < n; ++k) {
            const double env = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / (len - 1));
            const double s = gain * env * std::sin(2.0 * std::numbers::pi * f * k / cfg.fs + phase);
            for (std::size_t c = 0; c < C; ++c)
                if (patterns[word][c] != 0.0) x[c * n + start + k] += patterns[word][c] * s;
        }
    }

    std::vector<float> data(x.begin(), x.end());
    return RawRecording(std::move(data), cfg.fs, default_channel_names(C));
}

}  // namespace imspeech
