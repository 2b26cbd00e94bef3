#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "format.hpp"
#include "stats.hpp"

namespace imspeech {

/// Per-subject accuracies, one column per method.
struct ResultTable {
    std::vector<std::string> methods;
    std::vector<std::string> subjects;
    std::vector<std::vector<double>> accuracy;  // [subject][method]

    void validate() const {
        require(accuracy.size() == subjects.size(), ErrorKind::Shape, "one accuracy row per subject");
        for (const auto& row : accuracy) {
            require(row.size() == methods.size(), ErrorKind::Shape, "one accuracy per method in every row");
            for (double a : row) require(a >= 0 && a <= 1, ErrorKind::OutOfRange, "accuracy outside [0, 1]");
        }
    }

    std::vector<double> column(std::size_t m) const {
        std::vector<double> c;
        for (const auto& row : accuracy) c.push_back(row.at(m));
        return c;
    }

    bool operator==(const ResultTable&) const = default;
};

struct ShapiroRow {
    std::string method;
    std::optional<stats::ShapiroWilk> result;
    std::string note;  // why result is absent
};

struct PairRow {
    std::string method;     // compared method
    std::string reference;  // e.g. the proposed model
    std::optional<stats::TTest> result;
    double adjusted_p = 1;
    std::string note;
};

struct TestReport {
    std::vector<ShapiroRow> shapiro;
    std::optional<stats::Levene> levene;
    std::string levene_note;
    std::vector<PairRow> pairwise;
    std::size_t family_size = 0;  // Bonferroni m
};

constexpr double kSignificance = 0.01;

/// Shapiro-Wilk per method, Levene across all methods, and paired t-tests
/// of `reference` against every other method, Bonferroni-adjusted with
/// family size m (default: number of comparisons). Tests that are
/// undefined for the data (e.g. constant columns) are reported with a note.
inline TestReport run_tests(const ResultTable& t, std::size_t reference, std::optional<std::size_t> m = std::nullopt) {
    t.validate();
    require(reference < t.methods.size(), ErrorKind::InvalidParameter, "reference method index out of range");
    TestReport r;
    for (std::size_t j = 0; j < t.methods.size(); ++j) {
        ShapiroRow row{t.methods[j], std::nullopt, {}};
        try {
            row.result = stats::shapiro_wilk(t.column(j));
        } catch (const Error& e) {
            row.note = e.what();
        }
        r.shapiro.push_back(row);
    }
    if (t.methods.size() >= 2) {
        std::vector<std::vector<double>> groups;
        for (std::size_t j = 0; j < t.methods.size(); ++j) groups.push_back(t.column(j));
        try {
            r.levene = stats::levene(groups);
        } catch (const Error& e) {
            r.levene_note = e.what();
        }
    }
    std::vector<double> raw;
    for (std::size_t j = 0; j < t.methods.size(); ++j) {
        if (j == reference) continue;
        PairRow row{t.methods[j], t.methods[reference], std::nullopt, 1.0, {}};
        try {
            row.result = stats::paired_t_test(t.column(reference), t.column(j));
            raw.push_back(row.result->p);
        } catch (const Error& e) {
            row.note = e.what();
        }
        r.pairwise.push_back(row);
    }
    const std::size_t comparisons = r.pairwise.size();
    r.family_size = m.value_or(comparisons);
    if (!raw.empty()) {
        const auto adj = stats::bonferroni(raw, std::max(r.family_size, raw.size()));
        std::size_t k = 0;
        for (auto& row : r.pairwise)
            if (row.result) row.adjusted_p = adj[k++];
    }
    return r;
}

enum class ReportFormat { Markdown, Csv };

namespace report_detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

/// Splits RFC-4180 text into records of fields.
inline std::vector<std::vector<std::string>> csv_records(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> rec;
    std::string field;
    bool quoted = false, any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            rec.push_back(field);
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (any || !field.empty()) {
                rec.push_back(field);
                records.push_back(rec);
            }
            rec.clear();
            field.clear();
            any = false;
        } else {
            field += c;
            any = true;
        }
    }
    require(!quoted, ErrorKind::Format, "unterminated quoted CSV field");
    if (any || !field.empty()) {
        rec.push_back(field);
        records.push_back(rec);
    }
    return records;
}

inline std::string fmt_p(double p) {
    char buf[32];
    std::snprintf(buf, sizeof buf, p < 1e-4 ? "%.3e" : "%.4f", p);
    return buf;
}

inline std::string summary_cell(const std::vector<double>& col, bool want_std) {
    if (col.empty() || (want_std && col.size() < 2)) return "-";
    return format_fixed(want_std ? stats::mean_std(col).std : stats::mean(col), 4);
}

}  // namespace report_detail

/// Markdown: the table with Avg./Std. rows, then the test battery with
/// `*` marking adjusted p < 0.01. CSV: the table alone (per-subject values
/// at round-trip precision, Avg./Std. at 4 decimals).
inline std::string build_report(const ResultTable& t, const TestReport& tests, ReportFormat format) {
    t.validate();
    using namespace report_detail;
    std::ostringstream out;
    const std::size_t M = t.methods.size();
    if (format == ReportFormat::Csv) {
        out << "subject";
        for (const auto& m : t.methods) out << "," << csv_field(m);
        out << "\r\n";
        if (M == 0) return out.str();
        for (std::size_t s = 0; s < t.subjects.size(); ++s) {
            out << csv_field(t.subjects[s]);
            for (double a : t.accuracy[s]) out << "," << format_roundtrip(a);
            out << "\r\n";
        }
        for (bool want_std : {false, true}) {
            out << (want_std ? "Std." : "Avg.");
            for (std::size_t j = 0; j < M; ++j) out << "," << summary_cell(t.column(j), want_std);
            out << "\r\n";
        }
        return out.str();
    }

    out << "| Subject |";
    for (const auto& m : t.methods) out << " " << m << " |";
    out << "\n|---|";
    for (std::size_t j = 0; j < M; ++j) out << "---|";
    out << "\n";
    if (M == 0) return out.str();
    for (std::size_t s = 0; s < t.subjects.size(); ++s) {
        out << "| " << t.subjects[s] << " |";
        for (double a : t.accuracy[s]) out << " " << format_fixed(a, 4) << " |";
        out << "\n";
    }
    for (bool want_std : {false, true}) {
        out << "| " << (want_std ? "Std." : "Avg.") << " |";
        for (std::size_t j = 0; j < M; ++j) out << " " << summary_cell(t.column(j), want_std) << " |";
        out << "\n";
    }

    out << "\n### Normality (Shapiro-Wilk)\n\n| Method | W | p |\n|---|---|---|\n";
    for (const auto& r : tests.shapiro) {
        if (r.result)
            out << "| " << r.method << " | " << format_fixed(r.result->w, 4) << " | " << fmt_p(r.result->p) << " |\n";
        else
            out << "| " << r.method << " | n/a | n/a (" << r.note << ") |\n";
    }
    out << "\n### Homoscedasticity (Levene)\n\n";
    if (tests.levene)
        out << "F(" << tests.levene->df1 << ", " << tests.levene->df2 << ") = " << format_fixed(tests.levene->f, 4)
            << ", p = " << fmt_p(tests.levene->p) << "\n";
    else
        out << "n/a" << (tests.levene_note.empty() ? "" : " (" + tests.levene_note + ")") << "\n";
    out << "\n### Paired t-tests (Bonferroni m = " << tests.family_size << ")\n\n"
        << "| Comparison | t | df | p | adjusted p | p < 0.01 |\n|---|---|---|---|---|---|\n";
    for (const auto& r : tests.pairwise) {
        out << "| " << r.reference << " vs " << r.method << " | ";
        if (r.result)
            out << format_fixed(r.result->t, 4) << " | " << r.result->df << " | " << fmt_p(r.result->p) << " | "
                << fmt_p(r.adjusted_p) << " | " << (r.adjusted_p < kSignificance ? "*" : "") << " |\n";
        else
            out << "n/a | | | | (" << r.note << ") |\n";
    }
    return out.str();
}

/// Parses the CSV variant of build_report (Avg./Std. rows are derived and
/// skipped).
inline ResultTable parse_table_csv(const std::string& text) {
    const auto recs = report_detail::csv_records(text);
    require(!recs.empty() && !recs[0].empty() && recs[0][0] == "subject", ErrorKind::Format,
            "table CSV must start with a 'subject' header");
    ResultTable t;
    t.methods.assign(recs[0].begin() + 1, recs[0].end());
    for (std::size_t i = 1; i < recs.size(); ++i) {
        const auto& r = recs[i];
        if (r[0] == "Avg." || r[0] == "Std.") continue;
        require(r.size() == t.methods.size() + 1, ErrorKind::Format, "row " + std::to_string(i) + " has wrong width");
        t.subjects.push_back(r[0]);
        std::vector<double> row;
        for (std::size_t j = 1; j < r.size(); ++j) row.push_back(parse_double(r[j]));
        t.accuracy.push_back(row);
    }
    t.validate();
    return t;
}

/// One results row: a method's accuracy on one evaluation unit (a fold or
/// a subject).
struct ResultRow {
    std::string method;
    std::string unit;
    double accuracy;
};

inline std::string results_csv(const std::vector<ResultRow>& rows) {
    std::string out = "method,unit,accuracy\n";
    for (const auto& r : rows)
        out += report_detail::csv_field(r.method) + "," + report_detail::csv_field(r.unit) + "," +
               format_roundtrip(r.accuracy) + "\n";
    return out;
}

inline std::vector<ResultRow> parse_results_csv(const std::string& text) {
    const auto recs = report_detail::csv_records(text);
    require(!recs.empty() && recs[0] == std::vector<std::string>{"method", "unit", "accuracy"}, ErrorKind::Format,
            "results CSV must have header method,unit,accuracy");
    std::vector<ResultRow> rows;
    for (std::size_t i = 1; i < recs.size(); ++i) {
        require(recs[i].size() == 3, ErrorKind::Format, "results row " + std::to_string(i) + " needs 3 fields");
        rows.push_back({recs[i][0], recs[i][1], parse_double(recs[i][2])});
    }
    return rows;
}

/// Pivots results rows into a table: methods and units in order of first
/// appearance; every method must report every unit exactly once.
inline ResultTable pivot(const std::vector<ResultRow>& rows) {
    ResultTable t;
    std::map<std::pair<std::string, std::string>, double> cell;
    for (const auto& r : rows) {
        if (std::find(t.methods.begin(), t.methods.end(), r.method) == t.methods.end()) t.methods.push_back(r.method);
        if (std::find(t.subjects.begin(), t.subjects.end(), r.unit) == t.subjects.end()) t.subjects.push_back(r.unit);
        require(cell.emplace(std::pair{r.method, r.unit}, r.accuracy).second, ErrorKind::Format,
                "duplicate result for " + r.method + " / " + r.unit);
    }
    for (const auto& u : t.subjects) {
        std::vector<double> row;
        for (const auto& m : t.methods) {
            auto it = cell.find({m, u});
            require(it != cell.end(), ErrorKind::Format, "method " + m + " has no result for unit " + u);
            row.push_back(it->second);
        }
        t.accuracy.push_back(row);
    }
    t.validate();
    return t;
}

}  // namespace imspeech
