// Command-line front end: train, eval, ablate, oracle, report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semppl/harness/checkpoint.hpp"
#include "semppl/harness/experiments.hpp"
#include "semppl/harness/report.hpp"

namespace fs = std::filesystem;
using namespace semppl;
using namespace semppl::harness;

namespace {

struct CommonOptions {
    std::string config = "base";
    std::optional<std::uint64_t> seed;
    std::string out;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o, const std::string& default_out) {
    o.out = default_out;
    cmd->add_option("--config", o.config, "Preset name (base, smoke) or INI file")->capture_default_str();
    cmd->add_option("--seed", o.seed, "Run seed (overrides train.seed)");
    cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
    cmd->add_flag("--quiet", o.quiet, "No per-epoch progress");
    cmd->allow_extras();
    cmd->footer("Any configuration key can be overridden with --section.key=value, e.g. --train.epochs=20.");
}

/// Config from --config, then --section.key=value extras, then --seed.
TrainConfig resolve_config(const CommonOptions& o, const std::vector<std::string>& extras) {
    TrainConfig cfg = load_config(o.config);
    for (const auto& arg : extras) {
        const auto eq = arg.find('=');
        if (arg.rfind("--", 0) != 0 || eq == std::string::npos) {
            throw ConfigError("unrecognised argument '" + arg + "' (overrides take the form --section.key=value)");
        }
        apply_setting(cfg, arg.substr(2, eq - 2), arg.substr(eq + 1));
    }
    if (o.seed) cfg.seed = *o.seed;
    cfg.validate();
    return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

fs::path prepare_out(const std::string& dir) {
    fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw Error("cannot create output directory " + dir + ": " + ec.message());
    return p;
}

EpochCallback progress(bool quiet) {
    if (quiet) return {};
    return [](const Trainer& t, const MetricsRow& row, const EpochStats&) {
        std::fprintf(stderr, "epoch %zu/%zu  loss %.4f  pl_accuracy %.4f  lr %.4g\n", row.epoch, t.config().epochs(),
                     row.loss_total, row.pl_accuracy, row.lr);
    };
}

void write_charts(const fs::path& dir, const std::vector<MetricsRow>& rows) {
    for (const auto& [name, svg] : metrics_charts(rows)) write_file(dir / name, svg);
}

int cmd_train(const CommonOptions& o, const std::vector<std::string>& extras, const std::string& resume,
              bool charts) {
    TrainConfig cfg = resolve_config(o, extras);
    const fs::path dir = prepare_out(o.out);
    Trainer trainer = resume.empty() ? Trainer(cfg) : load_checkpoint(resume);
    if (!resume.empty()) cfg = trainer.config();
    std::vector<MetricsRow> rows;
    if (!resume.empty() && fs::exists(dir / "metrics.csv")) rows = read_metrics_csv((dir / "metrics.csv").string());
    const RunOutcome outcome = run_to_end(trainer, progress(o.quiet));
    rows.insert(rows.end(), outcome.rows.begin(), outcome.rows.end());
    write_metrics_csv((dir / "metrics.csv").string(), rows);
    write_file(dir / "summary.json", run_summary_document(cfg, outcome.summary));
    save_checkpoint(trainer, (dir / "checkpoint.sppl").string());
    if (charts) write_charts(dir, rows);
    std::cout << "pl_accuracy " << outcome.summary.final_pl_accuracy << "  probe_linear " << outcome.summary.probe_linear
              << "  probe_knn " << outcome.summary.probe_knn << "\nwrote " << dir.string() << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& mode) {
    const Trainer trainer = load_checkpoint(checkpoint);
    nlohmann::json doc;
    doc["epoch"] = trainer.epoch();
    if (mode == "linear" || mode == "both") doc["probe_linear"] = trainer.probe(ProbeMode::linear);
    if (mode == "knn" || mode == "both") doc["probe_knn"] = trainer.probe(ProbeMode::knn);
    std::cout << doc.dump(2) << "\n";
    return 0;
}

int cmd_ablate(const CommonOptions& o, const std::vector<std::string>& extras, const std::vector<std::string>& specs) {
    const TrainConfig base = resolve_config(o, extras);
    std::vector<GridDimension> grid;
    for (const auto& s : specs) grid.push_back(parse_grid_dimension(s));
    const fs::path dir = prepare_out(o.out);
    const auto rows = run_ablation(base, grid, [&](const AblationRow& r) {
        if (o.quiet) return;
        std::string cell;
        for (const auto& [k, v] : r.settings) cell += k + "=" + v + " ";
        std::fprintf(stderr, "%s pl_accuracy %.4f  probe_linear %.4f\n", cell.c_str(), r.summary.final_pl_accuracy,
                     r.summary.probe_linear);
    });
    write_file(dir / "ablation.csv", ablation_csv(rows));
    std::cout << ablation_csv(rows) << "wrote " << (dir / "ablation.csv").string() << "\n";
    return 0;
}

int cmd_oracle(const CommonOptions& o, const std::vector<std::string>& extras) {
    const TrainConfig cfg = resolve_config(o, extras);
    const fs::path dir = prepare_out(o.out);
    const OracleReport r = run_oracle(cfg, progress(o.quiet));
    const std::string doc = oracle_document(cfg, r);
    write_file(dir / "oracle.json", doc);
    std::cout << doc;
    return 0;
}

int cmd_report(const std::string& metrics, const std::string& out) {
    const auto rows = read_metrics_csv(metrics);
    const fs::path dir = prepare_out(out.empty() ? fs::path(metrics).parent_path().string() : out);
    write_charts(dir, rows);
    if (!rows.empty()) {
        const MetricsRow& last = rows.back();
        std::cout << "epochs " << rows.size() << "  first pl_accuracy " << rows.front().pl_accuracy
                  << "  final pl_accuracy " << last.pl_accuracy << "  probe_linear " << last.probe_linear << "\n";
    }
    std::cout << "wrote charts to " << dir.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised contrastive learning with pseudo-labels and semantic positives"};
    app.require_subcommand(1);

    CommonOptions train_opts, ablate_opts, oracle_opts;
    std::string resume;
    bool charts = false;
    auto* train = app.add_subcommand("train", "Train one run; writes metrics.csv, summary.json and checkpoint.sppl");
    add_common(train, train_opts, "runs/train");
    train->add_option("--resume", resume, "Continue from a checkpoint (its config wins)");
    train->add_flag("--charts", charts, "Also write SVG charts");

    std::string checkpoint, mode = "both";
    auto* eval = app.add_subcommand("eval", "Probe the encoder of a checkpoint");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--mode", mode, "linear, knn or both")->check(CLI::IsMember({"linear", "knn", "both"}));

    std::vector<std::string> grid;
    auto* ablate = app.add_subcommand("ablate", "Grid of runs; writes ablation.csv");
    add_common(ablate, ablate_opts, "runs/ablate");
    ablate->add_option("--grid", grid, "name=v1,v2,... (P, epochs, voting, k, C, alpha or any section.key)")
        ->required();

    auto* oracle = app.add_subcommand("oracle", "Paired standard and oracle runs; writes oracle.json");
    add_common(oracle, oracle_opts, "runs/oracle");

    std::string metrics, report_out;
    auto* report = app.add_subcommand("report", "Charts from an existing metrics.csv");
    report->add_option("--metrics", metrics, "metrics.csv written by train")->required();
    report->add_option("--out", report_out, "Chart directory (default: next to the CSV)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*train) return cmd_train(train_opts, train->remaining(), resume, charts);
        if (*eval) return cmd_eval(checkpoint, mode);
        if (*ablate) return cmd_ablate(ablate_opts, ablate->remaining(), grid);
        if (*oracle) return cmd_oracle(oracle_opts, oracle->remaining());
        if (*report) return cmd_report(metrics, report_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
