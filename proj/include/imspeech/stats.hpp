#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace imspeech::stats {

struct MeanStd {
    double mean;
    double std;  // sample (n - 1) standard deviation
};

inline double mean(std::span<const double> v) {
    require(!v.empty(), ErrorKind::InsufficientData, "mean of an empty sample");
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline MeanStd mean_std(std::span<const double> v) {
    require(v.size() >= 2, ErrorKind::InsufficientData, "standard deviation needs at least 2 values");
    const double m = mean(v);
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

namespace stats_detail {

// Continued fraction for the incomplete beta (modified Lentz).
inline double beta_cf(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-16;
    const double qab = a + b, qap = a + 1, qam = a - 1;
    double c = 1, d = 1 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1 / d;
    double h = d;
    for (int m = 1; m <= 10000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1) < eps) return h;
    }
    fail(ErrorKind::Numeric, "incomplete beta continued fraction did not converge");
}

}  // namespace stats_detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
    require(a > 0 && b > 0, ErrorKind::InvalidParameter, "incomplete beta needs a, b > 0");
    require(x >= 0 && x <= 1, ErrorKind::InvalidParameter, "incomplete beta needs x in [0, 1]");
    if (x == 0 || x == 1) return x;
    const double ln_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1) / (a + b + 2)) return front * stats_detail::beta_cf(a, b, x) / a;
    return 1 - front * stats_detail::beta_cf(b, a, 1 - x) / b;
}

/// Two-sided tail probability P(|T| >= |t|) for Student's t with df degrees.
inline double t_two_sided_p(double t, double df) {
    require(df > 0, ErrorKind::InvalidParameter, "t distribution needs df > 0");
    if (!std::isfinite(t)) return 0.0;
    return std::clamp(incomplete_beta(df / 2, 0.5, df / (df + t * t)), 0.0, 1.0);
}

/// Upper tail P(F >= f) for the F distribution with (d1, d2) degrees.
inline double f_upper_p(double f, double d1, double d2) {
    require(d1 > 0 && d2 > 0, ErrorKind::InvalidParameter, "F distribution needs positive degrees of freedom");
    if (f <= 0) return 1.0;
    if (!std::isfinite(f)) return 0.0;
    return std::clamp(incomplete_beta(d2 / 2, d1 / 2, d2 / (d2 + d1 * f)), 0.0, 1.0);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Inverse standard normal CDF, refined to double precision by Halley steps.
inline double normal_quantile(double p) {
    require(p > 0 && p < 1, ErrorKind::InvalidParameter, "normal quantile needs p in (0, 1)");
    // Initial guess from a logistic-type approximation.
    const double q = p < 0.5 ? p : 1 - p;
    const double t = std::sqrt(-2 * std::log(q));
    double x = t - (2.515517 + 0.802853 * t + 0.010328 * t * t) /
                       (1 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t);
    if (p < 0.5) x = -x;
    for (int i = 0; i < 4; ++i) {
        const double e = normal_cdf(x) - p;
        const double u = e * std::sqrt(2 * std::numbers::pi) * std::exp(x * x / 2);
        x -= u / (1 + x * u / 2);
    }
    return x;
}

struct TTest {
    double t;
    double p;
    double df;
};

/// Paired two-sided t-test on a - b.
inline TTest paired_t_test(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), ErrorKind::Shape, "paired samples differ in length");
    require(a.size() >= 2, ErrorKind::InsufficientData, "paired t-test needs at least 2 pairs");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const auto [m, sd] = mean_std(d);
    require(sd > 0, ErrorKind::Degenerate, "paired differences have zero variance");
    const double n = static_cast<double>(d.size());
    const double t = m / (sd / std::sqrt(n));
    return {t, t_two_sided_p(t, n - 1), n - 1};
}

/// adjusted_i = min(1, m * p_i).
inline std::vector<double> bonferroni(std::span<const double> p, std::size_t m) {
    require(!p.empty(), ErrorKind::InvalidParameter, "bonferroni needs at least one p-value");
    require(m >= p.size(), ErrorKind::InvalidParameter, "family size m is smaller than the number of p-values");
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        require(p[i] >= 0 && p[i] <= 1, ErrorKind::InvalidParameter, "p-value outside [0, 1]");
        out[i] = std::min(1.0, static_cast<double>(m) * p[i]);
    }
    return out;
}

struct ShapiroWilk {
    double w;
    double p;
};

/// Shapiro-Wilk W and p-value following Royston's AS R94.
inline ShapiroWilk shapiro_wilk(std::span<const double> sample) {
    const std::size_t n = sample.size();
    require(n >= 3 && n <= 5000, ErrorKind::UnsupportedSize,
            "shapiro-wilk supports 3 <= n <= 5000, got " + std::to_string(n));
    std::vector<double> x(sample.begin(), sample.end());
    std::sort(x.begin(), x.end());
    require(x.back() - x.front() > 0, ErrorKind::Degenerate, "shapiro-wilk on a constant sample");

    auto poly = [](std::initializer_list<double> c, double v) {
        double r = 0, pw = 1;
        for (double ci : c) {
            r += ci * pw;
            pw *= v;
        }
        return r;
    };

    const std::size_t n2 = n / 2;
    const double an = static_cast<double>(n);
    std::vector<double> a(n2);
    if (n == 3) {
        a[0] = std::sqrt(0.5);
    } else {
        std::vector<double> m(n2);
        double summ2 = 0;
        for (std::size_t i = 0; i < n2; ++i) {
            m[i] = normal_quantile((static_cast<double>(i + 1) - 0.375) / (an + 0.25));
            summ2 += m[i] * m[i];
        }
        summ2 *= 2;
        const double ssumm2 = std::sqrt(summ2);
        const double rsn = 1 / std::sqrt(an);
        const double a1 = poly({0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056}, rsn) - m[0] / ssumm2;
        std::size_t i1;
        double fac;
        if (n > 5) {
            i1 = 2;
            const double a2 = -m[1] / ssumm2 + poly({0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633}, rsn);
            fac = std::sqrt((summ2 - 2 * m[0] * m[0] - 2 * m[1] * m[1]) / (1 - 2 * a1 * a1 - 2 * a2 * a2));
            a[1] = a2;
        } else {
            i1 = 1;
            fac = std::sqrt((summ2 - 2 * m[0] * m[0]) / (1 - 2 * a1 * a1));
        }
        a[0] = a1;
        for (std::size_t i = i1; i < n2; ++i) a[i] = -m[i] / fac;
    }

    // Centre and scale for a well-conditioned sum of squares.
    const double range = x.back() - x.front();
    const double mu = mean(x);
    double ssq = 0, num = 0;
    for (double v : x) ssq += ((v - mu) / range) * ((v - mu) / range);
    for (std::size_t i = 0; i < n2; ++i) num += a[i] * (x[n - 1 - i] - x[i]) / range;
    const double w = std::min(1.0, num * num / ssq);

    double p;
    if (n == 3) {
        constexpr double pi6 = 6.0 / std::numbers::pi;
        constexpr double stqr = std::numbers::pi / 3.0;
        p = std::max(0.0, pi6 * (std::asin(std::sqrt(w)) - stqr));
    } else {
        double w1 = std::log(1 - w);
        double m, s;
        if (n <= 11) {
            const double gamma = poly({-2.273, 0.459}, an);
            if (w1 >= gamma) return {w, 1e-99};
            w1 = -std::log(gamma - w1);
            m = poly({0.544, -0.39978, 0.025054, -6.714e-4}, an);
            s = std::exp(poly({1.3822, -0.77857, 0.062767, -0.0020322}, an));
        } else {
            const double xx = std::log(an);
            m = poly({-1.5861, -0.31082, -0.083751, 0.0038915}, xx);
            s = std::exp(poly({-0.4803, -0.082676, 0.0030302}, xx));
        }
        p = 1 - normal_cdf((w1 - m) / s);
    }
    return {w, std::clamp(p, 0.0, 1.0)};
}

struct Levene {
    double f;
    double p;
    double df1;
    double df2;
};

/// Classic Levene test on absolute deviations from each group's mean.
inline Levene levene(const std::vector<std::vector<double>>& groups) {
    require(groups.size() >= 2, ErrorKind::InsufficientData, "levene needs at least 2 groups");
    std::size_t total = 0;
    std::vector<std::vector<double>> z(groups.size());
    std::vector<double> zbar(groups.size());
    double grand = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        require(groups[g].size() >= 2, ErrorKind::InsufficientData, "each levene group needs at least 2 values");
        const double m = mean(groups[g]);
        for (double v : groups[g]) z[g].push_back(std::abs(v - m));
        zbar[g] = mean(z[g]);
        for (double v : z[g]) grand += v;
        total += groups[g].size();
    }
    grand /= static_cast<double>(total);
    double between = 0, within = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        between += static_cast<double>(z[g].size()) * (zbar[g] - grand) * (zbar[g] - grand);
        for (double v : z[g]) within += (v - zbar[g]) * (v - zbar[g]);
    }
    const double k = static_cast<double>(groups.size());
    const double nn = static_cast<double>(total);
    require(within > 0 || between > 0, ErrorKind::Degenerate, "levene: all absolute deviations are equal");
    const double f = within > 0 ? (nn - k) / (k - 1) * between / within : std::numeric_limits<double>::infinity();
    return {f, f_upper_p(f, k - 1, nn - k), k - 1, nn - k};
}

}  // namespace imspeech::stats
