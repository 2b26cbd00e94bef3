#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "format.hpp"
#include "report.hpp"
#include "stats.hpp"

namespace imspeech::fixtures {

/// Published per-subject accuracies with their printed summary rows.
struct PublishedTable {
    ResultTable table;
    std::vector<double> printed_avg;
    std::vector<double> printed_std;
};

inline std::vector<std::string> subject_ids() {
    std::vector<std::string> s;
    for (int i = 1; i <= 10; ++i) s.push_back("S" + std::to_string(i));
    return s;
}

inline const std::vector<double>& proposed_column() {
    static const std::vector<double> v{0.6084, 0.5834, 0.5497, 0.5597, 0.5697,
                                       0.5472, 0.5522, 0.5747, 0.5472, 0.5559};
    return v;
}

inline PublishedTable make_table(std::vector<std::string> methods, std::vector<std::vector<double>> columns,
                                 std::vector<double> avg, std::vector<double> sd) {
    PublishedTable p;
    p.table.methods = std::move(methods);
    p.table.subjects = subject_ids();
    for (std::size_t s = 0; s < 10; ++s) {
        std::vector<double> row;
        for (const auto& c : columns) row.push_back(c[s]);
        p.table.accuracy.push_back(row);
    }
    p.printed_avg = std::move(avg);
    p.printed_std = std::move(sd);
    return p;
}

/// Baselines vs the proposed model.
inline const PublishedTable& table1() {
    static const PublishedTable t = make_table(
        {"PSD-SVM", "CSP-LDA", "Proposed"},
        {{0.4723, 0.3471, 0.4386, 0.3972, 0.3550, 0.3477, 0.4631, 0.4055, 0.4382, 0.3550},
         {0.4944, 0.3840, 0.3621, 0.3967, 0.3735, 0.4070, 0.4736, 0.3742, 0.5072, 0.4291},
         proposed_column()},
        {0.4020, 0.4202, 0.5648}, {0.0491, 0.0535, 0.0197});
    return t;
}

/// Ablation: backbone alone, backbone with the earlier feature module,
/// backbone with attention.
inline const PublishedTable& table2() {
    static const PublishedTable t = make_table(
        {"EEGNet", "EEGNet with SEFE", "Proposed"},
        {{0.5642, 0.5254, 0.5142, 0.5254, 0.5067, 0.4854, 0.5004, 0.4929, 0.4929, 0.4979},
         {0.5361, 0.4911, 0.5536, 0.5374, 0.5111, 0.5124, 0.4899, 0.5111, 0.5186, 0.5111},
         proposed_column()},
        {0.5106, 0.5172, 0.5648}, {0.0233, 0.0201, 0.0197});
    return t;
}

/// Paired t statistics (proposed minus baseline) from an independent
/// statistics package, computed from the printed columns.
struct OracleT {
    std::string baseline;
    double t;
    double p;
};

inline const std::vector<OracleT>& oracle_t_table1() {
    static const std::vector<OracleT> v{{"PSD-SVM", 10.265357851984524, 2.876161271979701e-06},
                                        {"CSP-LDA", 8.26679405155173, 1.7015395106006732e-05}};
    return v;
}

inline const std::vector<OracleT>& oracle_t_table2() {
    static const std::vector<OracleT> v{{"EEGNet", 12.21252514321365, 6.629468844622792e-07},
                                        {"EEGNet with SEFE", 5.383833852864505, 0.0004422674288803903}};
    return v;
}

struct Check {
    int criterion;
    std::string name;
    bool passed;
    std::string detail;
};

constexpr double kSummaryTolerance = 5e-5;
constexpr double kTTolerance = 1e-3;

/// Criterion 1: column mean and sample std reproduce the printed rows.
inline std::vector<Check> summary_checks() {
    std::vector<Check> out;
    for (const auto* p : {&table1(), &table2()}) {
        const std::string tag = p == &table1() ? "table1" : "table2";
        for (std::size_t j = 0; j < p->table.methods.size(); ++j) {
            const auto ms = stats::mean_std(p->table.column(j));
            const double da = std::abs(ms.mean - p->printed_avg[j]);
            const double ds = std::abs(ms.std - p->printed_std[j]);
            out.push_back({1, tag + " " + p->table.methods[j] + " Avg.", da <= kSummaryTolerance,
                           "computed " + format_fixed(ms.mean, 6) + " printed " + format_fixed(p->printed_avg[j], 4) +
                               " |diff| " + format_fixed(da, 6)});
            out.push_back({1, tag + " " + p->table.methods[j] + " Std.", ds <= kSummaryTolerance,
                           "computed " + format_fixed(ms.std, 6) + " printed " + format_fixed(p->printed_std[j], 4) +
                               " |diff| " + format_fixed(ds, 6)});
        }
    }
    return out;
}

/// Criterion 2: paired t-tests (Bonferroni m = 2 per table), t against the
/// oracle, Shapiro-Wilk per column and Levene across each table's columns.
inline std::vector<Check> statistical_checks() {
    std::vector<Check> out;
    for (const auto* p : {&table1(), &table2()}) {
        const std::string tag = p == &table1() ? "table1" : "table2";
        const auto& oracle = p == &table1() ? oracle_t_table1() : oracle_t_table2();
        const auto rep = run_tests(p->table, 2, 2);
        for (std::size_t k = 0; k < rep.pairwise.size(); ++k) {
            const auto& r = rep.pairwise[k];
            const bool have = r.result.has_value();
            out.push_back({2, tag + " Proposed vs " + r.method + " adjusted p < 0.01",
                           have && r.adjusted_p < kSignificance, have ? "adjusted p " + report_detail::fmt_p(r.adjusted_p) : r.note});
            const double dt = have ? std::abs(r.result->t - oracle[k].t) : INFINITY;
            out.push_back({2, tag + " Proposed vs " + r.method + " t matches oracle", dt <= kTTolerance,
                           have ? "t " + format_fixed(r.result->t, 6) + " oracle " + format_fixed(oracle[k].t, 6) : r.note});
        }
        for (const auto& s : rep.shapiro)
            out.push_back({2, tag + " " + s.method + " Shapiro-Wilk p > 0.05", s.result && s.result->p > 0.05,
                           s.result ? "W " + format_fixed(s.result->w, 4) + " p " + format_fixed(s.result->p, 4) : s.note});
        out.push_back({2, tag + " Levene p > 0.05", rep.levene && rep.levene->p > 0.05,
                       rep.levene ? "F " + format_fixed(rep.levene->f, 4) + " p " + format_fixed(rep.levene->p, 4)
                                  : rep.levene_note});
    }
    return out;
}

}  // namespace imspeech::fixtures
