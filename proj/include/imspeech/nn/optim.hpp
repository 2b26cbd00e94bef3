#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "../error.hpp"
#include "layers.hpp"
#include "tape.hpp"

namespace imspeech::nn {

template <class T>
struct AdamState {
    std::map<std::string, std::vector<T>> m;
    std::map<std::string, std::vector<T>> v;
};

/// One bias-corrected Adam update at step t (1-based). Parameters without
/// a gradient entry are left unchanged.
template <class T>
void adam_step(std::map<std::string, Tensor<T>>& params, const std::map<std::string, Tensor<T>>& grads,
               AdamState<T>& state, double lr, double beta1, double beta2, double eps, long t) {
    require(t >= 1, ErrorKind::InvalidParameter, "adam step index must be >= 1");
    require(lr >= 0 && beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0, ErrorKind::InvalidParameter,
            "invalid adam hyperparameters");
    for (const auto& [name, g] : grads) {
        for (T x : g.data)
            require(std::isfinite(static_cast<double>(x)), ErrorKind::Numeric,
                    "non-finite gradient for parameter '" + name + "'");
    }
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (const auto& [name, g] : grads) {
        auto it = params.find(name);
        require(it != params.end(), ErrorKind::Shape, "gradient for unknown parameter '" + name + "'");
        auto& p = it->second.data;
        require(p.size() == g.size(), ErrorKind::Shape, "gradient shape mismatch for '" + name + "'");
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != p.size()) m.assign(p.size(), T(0));
        if (v.size() != p.size()) v.assign(p.size(), T(0));
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g.data[i];
            const double mi = beta1 * m[i] + (1.0 - beta1) * gi;
            const double vi = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            p[i] = static_cast<T>(p[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
        }
    }
}

/// Central differences (f(p+h) - f(p-h)) / 2h per coordinate, in double.
inline std::vector<double> finite_difference_grad(const std::function<double(const std::vector<double>&)>& fn,
                                                  std::vector<double> params, double h) {
    require(h > 0, ErrorKind::InvalidParameter, "finite-difference step must be positive");
    std::vector<double> g(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double p0 = params[i];
        params[i] = p0 + h;
        const double fp = fn(params);
        params[i] = p0 - h;
        const double fm = fn(params);
        params[i] = p0;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// Largest elementwise |a - n| / max(|a|, |n|, floor).
inline double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                 double floor = 1e-6) {
    require(analytic.size() == numeric.size(), ErrorKind::Shape, "gradient length mismatch");
    double worst = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i], n = numeric[i];
        const double denom = std::max({std::abs(a), std::abs(n), floor});
        worst = std::max(worst, std::abs(a - n) / denom);
    }
    return worst;
}

struct GradCheckResult {
    double max_rel_error = 0;
    std::string worst;  // "<param>" or "input"
    std::size_t checked = 0;
};

/// Compares backward against central differences for every parameter and
/// the input of a stack, with loss = sum(coeffs * output). Runs in eval
/// mode if requested so dropout and batch statistics are deterministic
/// functions of the input; train mode reuses the same seed each call.
inline GradCheckResult gradient_check(const LayerStack& layers, ParamStore<double> store, const Tensor<double>& input,
                                      Mode mode, std::uint64_t seed, double h = 1e-5, double floor = 1e-6) {
    auto loss_of = [&](ParamStore<double>& s, const Tensor<double>& x, std::vector<double>* coeffs) {
        auto r = forward(layers, s, x, mode, seed);
        const auto& out = r.tape.value(r.output);
        if (coeffs->empty()) {
            Rng rng(Rng::derive(seed, 0xc0ef));
            coeffs->resize(out.size());
            for (auto& c : *coeffs) c = rng.uniform(-1.0, 1.0);
        }
        double l = 0;
        for (std::size_t i = 0; i < out.size(); ++i) l += (*coeffs)[i] * out[i];
        return l;
    };
    std::vector<double> coeffs;
    // Buffers (running stats) are mutated by train-mode passes; restore them
    // before every evaluation so all passes see identical state.
    const auto buffers0 = store.buffers;
    {
        ParamStore<double> s = store;
        loss_of(s, input, &coeffs);
    }
    ParamStore<double> s = store;
    auto fr = forward(layers, s, input, mode, seed, true);
    auto g = backward(fr, std::span<const double>(coeffs));

    GradCheckResult res;
    auto check = [&](const std::string& label, const std::vector<double>& analytic,
                     const std::function<double(const std::vector<double>&)>& fn, std::vector<double> p0) {
        const auto numeric = finite_difference_grad(fn, std::move(p0), h);
        const double e = max_relative_error(analytic, numeric, floor);
        res.checked += analytic.size();
        if (e >= res.max_rel_error) {
            res.max_rel_error = e;
            res.worst = label;
        }
    };
    for (const auto& [name, t] : store.params) {
        auto it = g.params.find(name);
        const std::vector<double> analytic = it != g.params.end() ? it->second.data : std::vector<double>(t.size(), 0.0);
        check(name, analytic,
              [&](const std::vector<double>& p) {
                  ParamStore<double> s2 = store;
                  s2.buffers = buffers0;
                  s2.params.at(name).data = p;
                  return loss_of(s2, input, &coeffs);
              },
              t.data);
    }
    check("input", g.input.data,
          [&](const std::vector<double>& p) {
              ParamStore<double> s2 = store;
              s2.buffers = buffers0;
              return loss_of(s2, Tensor<double>(input.shape, p), &coeffs);
          },
          input.data);
    return res;
}

}  // namespace imspeech::nn
