#include <malloc.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "imspeech/adnn.hpp"
#include "imspeech/cv.hpp"
#include "imspeech/eegd.hpp"
#include "imspeech/error.hpp"
#include "imspeech/features.hpp"
#include "imspeech/fixtures.hpp"
#include "imspeech/report.hpp"
#include "imspeech/schedule.hpp"
#include "imspeech/shallow.hpp"
#include "imspeech/signal.hpp"
#include "imspeech/synth.hpp"

namespace fs = std::filesystem;
using namespace imspeech;

namespace {

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    require(in.good(), ErrorKind::Io, "cannot read " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    require(out.good(), ErrorKind::Io, "cannot write " + p.string());
    out << text;
    require(out.good(), ErrorKind::Io, "write failed for " + p.string());
}

nlohmann::json read_json(const fs::path& p) {
    try {
        return nlohmann::json::parse(read_text(p));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Format, p.string() + ": " + e.what());
    }
}

EpochSet load_epochs(const fs::path& p) { return eegd::epochs_from(eegd::read_file(p)).epochs; }

struct NetFlags {
    int max_epochs = TrainHyper{}.max_epochs;
    int patience = TrainHyper{}.patience;
    int batch = static_cast<int>(TrainHyper{}.batch);
    double lr = TrainHyper{}.lr;
};

void add_net_flags(CLI::App* cmd, NetFlags& f) {
    cmd->add_option("--max-epochs", f.max_epochs, "Network training epochs")->check(CLI::PositiveNumber);
    cmd->add_option("--patience", f.patience, "Early-stop patience in epochs (0 = off)")->check(CLI::NonNegativeNumber);
    cmd->add_option("--batch-size", f.batch, "Mini-batch size")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", f.lr, "Adam learning rate")->check(CLI::PositiveNumber);
}

PipelineOptions options_from(const NetFlags& f) {
    PipelineOptions o;
    o.hyper.max_epochs = f.max_epochs;
    o.hyper.patience = f.patience;
    o.hyper.batch = static_cast<std::size_t>(f.batch);
    o.hyper.lr = f.lr;
    return o;
}

fs::path default_schedule_path(const fs::path& out) {
    fs::path p = out;
    return p.replace_extension(".schedule.json");
}

void run_synth(const fs::path& config, const fs::path& out, std::optional<fs::path> schedule_out,
               std::optional<std::uint64_t> seed, std::optional<int> trials_per_word) {
    const auto j = read_json(config);
    SynthConfig cfg = synth_config_from_json(j);
    if (seed) cfg.seed = *seed;
    int tpw = trials_per_word.value_or(j.value("trials_per_word", 50));
    const auto schedule = generate_schedule(tpw, cfg.seed, cfg.words);
    const auto rec = synthesize_recording(schedule, cfg);
    eegd::write_file(out, eegd::to_container(rec));
    const fs::path sp = schedule_out.value_or(default_schedule_path(out));
    write_text(sp, to_json(schedule).dump(2) + "\n");
    std::cout << "wrote " << out.string() << " (" << rec.channels() << " x " << rec.samples() << " @ " << rec.fs()
              << " Hz) and " << sp.string() << "\n";
}

void run_preprocess(const fs::path& in, const fs::path& schedule_path, const fs::path& out) {
    const auto rec = eegd::recording_from(eegd::read_file(in));
    const auto schedule = schedule_from_json(read_json(schedule_path));
    const auto ep = preprocess(rec, schedule);
    eegd::write_file(out, eegd::to_container(ep, rec.channel_names()));
    std::cout << "wrote " << out.string() << " (" << ep.trials() << " trials, " << ep.channels() << " x "
              << ep.samples() << " @ " << ep.fs() << " Hz)\n";
}

void run_train(Pipeline p, const fs::path& data, std::uint64_t seed, const fs::path& out, const NetFlags& f) {
    const EpochSet set = load_epochs(data);
    const PipelineOptions o = options_from(f);
    fs::create_directories(out);
    nlohmann::ordered_json meta{{"pipeline", to_string(p)}, {"seed", seed}, {"trials", set.trials()}};
    switch (p) {
        case Pipeline::PsdSvm: {
            const auto m = svm_fit(cv_detail::psd_features(set), set.labels(), o.svm_c, o.svm_epochs, seed);
            eegd::write_file(out / "svm.eegd", to_container(m));
            meta["train_accuracy"] = accuracy(svm_predict(m, cv_detail::psd_features(set)), set.labels());
            break;
        }
        case Pipeline::CspLda: {
            const auto csp = csp_fit(set, o.csp_filters_per_class, o.csp_ridge);
            const auto lda = lda_fit(cv_detail::csp_features(csp, set), set.labels(), o.lda_ridge);
            eegd::write_file(out / "csp.eegd", to_container(csp));
            eegd::write_file(out / "lda.eegd", to_container(lda));
            meta["train_accuracy"] = accuracy(lda_predict(lda, cv_detail::csp_features(csp, set)), set.labels());
            break;
        }
        case Pipeline::EEGNet:
        case Pipeline::ADNN: {
            auto [fit, valid] = inner_split(set, o.inner_folds, Rng::derive(seed, 0x1a));
            TrainHyper h = o.hyper;
            h.seed = Rng::derive(seed, 0x2b);
            const auto kind = p == Pipeline::EEGNet ? ModelKind::EEGNet : ModelKind::ADNN;
            const auto model = train(kind, cv_detail::net_config(o, set, Rng::derive(seed, 0x3c)), fit, valid, h);
            save_model(model, out);
            meta["best_epoch"] = model.best_epoch;
            meta["valid_accuracy"] = model.history.at(model.best_epoch - 1).valid_acc;
            break;
        }
    }
    write_text(out / "pipeline.json", meta.dump(2) + "\n");
    std::cout << "trained " << to_string(p) << " -> " << out.string() << "\n";
}

void run_evaluate(Pipeline p, const fs::path& data, int folds, std::uint64_t seed, const fs::path& out,
                  const NetFlags& f) {
    const EpochSet set = load_epochs(data);
    const auto acc = cross_validate(p, set, static_cast<std::size_t>(folds), seed, options_from(f));
    std::vector<ResultRow> rows;
    for (std::size_t i = 0; i < acc.size(); ++i) rows.push_back({to_string(p), "fold" + std::to_string(i + 1), acc[i]});
    write_text(out, results_csv(rows));
    double m = 0;
    for (double a : acc) m += a / static_cast<double>(acc.size());
    std::cout << to_string(p) << " mean accuracy " << format_fixed(m, 4) << " over " << acc.size() << " folds -> "
              << out.string() << "\n";
}

void run_compare(const std::vector<fs::path>& results, const fs::path& report, std::optional<std::string> reference,
                 std::optional<std::size_t> m, const std::string& format) {
    std::vector<ResultRow> rows;
    for (const auto& r : results) {
        const auto part = parse_results_csv(read_text(r));
        rows.insert(rows.end(), part.begin(), part.end());
    }
    const ResultTable table = pivot(rows);
    require(!table.methods.empty(), ErrorKind::InsufficientData, "no results to compare");
    std::size_t ref = table.methods.size() - 1;
    if (reference) {
        auto it = std::find(table.methods.begin(), table.methods.end(), *reference);
        require(it != table.methods.end(), ErrorKind::InvalidParameter, "reference method '" + *reference + "' not found");
        ref = static_cast<std::size_t>(it - table.methods.begin());
    }
    const auto tests = run_tests(table, ref, m);
    const auto fmt = format == "csv" ? ReportFormat::Csv : ReportFormat::Markdown;
    write_text(report, build_report(table, tests, fmt));
    std::cout << "compared " << table.methods.size() << " methods over " << table.subjects.size() << " units -> "
              << report.string() << "\n";
}

int run_fixtures() {
    int failed = 0;
    for (const auto& checks : {fixtures::summary_checks(), fixtures::statistical_checks()})
        for (const auto& c : checks) {
            std::cout << (c.passed ? "PASS" : "FAIL") << " [" << c.criterion << "] " << c.name << ": " << c.detail
                      << "\n";
            failed += c.passed ? 0 : 1;
        }
    std::cout << (failed == 0 ? "all fixture checks passed" : std::to_string(failed) + " fixture check(s) failed")
              << "\n";
    return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);

    CLI::App app{"Imagined-speech EEG decoding: synthesis, preprocessing, training, evaluation and comparison"};
    app.require_subcommand(1);

    const std::vector<std::string> pipelines{"psd_svm", "csp_lda", "eegnet", "adnn"};

    fs::path synth_config, synth_out;
    std::optional<fs::path> synth_schedule;
    std::optional<std::uint64_t> synth_seed;
    std::optional<int> synth_tpw;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic raw recording and its paradigm schedule");
    synth->add_option("--config", synth_config, "SynthConfig JSON")->required()->check(CLI::ExistingFile);
    synth->add_option("--out", synth_out, "Output recording (EEGD)")->required();
    synth->add_option("--schedule-out", synth_schedule, "Output schedule JSON (default: <out>.schedule.json)");
    synth->add_option("--seed", synth_seed, "Overrides the config seed");
    synth->add_option("--trials-per-word", synth_tpw, "Trials per word (default: config or 50)")
        ->check(CLI::PositiveNumber);

    fs::path pre_in, pre_schedule, pre_out;
    auto* pre = app.add_subcommand("preprocess", "Notch, band-pass, resample and epoch a raw recording");
    pre->add_option("--in", pre_in, "Raw recording (EEGD)")->required()->check(CLI::ExistingFile);
    pre->add_option("--schedule", pre_schedule, "Schedule JSON")->required()->check(CLI::ExistingFile);
    pre->add_option("--out", pre_out, "Output epochs (EEGD)")->required();

    std::string train_pipeline;
    fs::path train_data, train_out;
    std::uint64_t train_seed = 0;
    NetFlags train_flags;
    auto* trn = app.add_subcommand("train", "Fit one pipeline on an epoch set");
    trn->add_option("--pipeline", train_pipeline, "Pipeline")->required()->check(CLI::IsMember(pipelines));
    trn->add_option("--data", train_data, "Epochs (EEGD)")->required()->check(CLI::ExistingFile);
    trn->add_option("--seed", train_seed, "Seed");
    trn->add_option("--out", train_out, "Output model directory")->required();
    add_net_flags(trn, train_flags);

    std::string eval_pipeline;
    fs::path eval_data, eval_out;
    int eval_folds = 5;
    std::uint64_t eval_seed = 0;
    NetFlags eval_flags;
    auto* ev = app.add_subcommand("evaluate", "Stratified k-fold cross-validation of one pipeline");
    ev->add_option("--pipeline", eval_pipeline, "Pipeline")->required()->check(CLI::IsMember(pipelines));
    ev->add_option("--data", eval_data, "Epochs (EEGD)")->required()->check(CLI::ExistingFile);
    ev->add_option("--folds", eval_folds, "Number of folds")->check(CLI::Range(2, 1000));
    ev->add_option("--seed", eval_seed, "Seed");
    ev->add_option("--out", eval_out, "Results CSV")->required();
    add_net_flags(ev, eval_flags);

    std::vector<fs::path> cmp_results;
    fs::path cmp_report;
    std::optional<std::string> cmp_reference;
    std::optional<std::size_t> cmp_m;
    std::string cmp_format = "markdown";
    auto* cmp = app.add_subcommand("compare", "Statistical comparison of results files");
    cmp->add_option("--results", cmp_results, "Results CSVs")->required()->check(CLI::ExistingFile);
    cmp->add_option("--report", cmp_report, "Output report")->required();
    cmp->add_option("--reference", cmp_reference, "Reference method (default: last method)");
    cmp->add_option("--m", cmp_m, "Bonferroni family size (default: number of comparisons)")
        ->check(CLI::PositiveNumber);
    cmp->add_option("--format", cmp_format, "Report format")->check(CLI::IsMember({"markdown", "csv"}));

    bool fx_check = false;
    auto* fx = app.add_subcommand("fixtures", "Published-table oracle suite");
    fx->add_flag("--check", fx_check, "Run the checks")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) run_synth(synth_config, synth_out, synth_schedule, synth_seed, synth_tpw);
        if (*pre) run_preprocess(pre_in, pre_schedule, pre_out);
        if (*trn) run_train(pipeline_from(train_pipeline), train_data, train_seed, train_out, train_flags);
        if (*ev) run_evaluate(pipeline_from(eval_pipeline), eval_data, eval_folds, eval_seed, eval_out, eval_flags);
        if (*cmp) run_compare(cmp_results, cmp_report, cmp_reference, cmp_m, cmp_format);
        if (*fx) return run_fixtures();
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return is_numeric(e.kind()) ? 2 : 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: format: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
