#pragma once

#include <chrono>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "semppl/harness/config.hpp"
#include "semppl/harness/metrics.hpp"
#include "semppl/harness/trainer.hpp"

namespace semppl::harness {

/// Headline numbers of one finished run.
struct RunSummary {
    std::size_t epochs = 0;
    double first_pl_accuracy = 0.0;
    double final_pl_accuracy = 0.0;
    std::vector<double> final_precision, final_recall;
    double semantic_correctness = 1.0;
    double probe_linear = std::numeric_limits<double>::quiet_NaN();
    double probe_knn = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t view_hash = 0;
    double seconds = 0.0;
};

struct RunOutcome {
    RunSummary summary;
    std::vector<MetricsRow> rows;
};

inline RunSummary summarize(const Trainer& trainer, const TrainResult& result, double seconds) {
    RunSummary s;
    s.epochs = result.rows.size();
    s.semantic_correctness = result.semantic_correctness;
    s.view_hash = trainer.view_hash();
    s.seconds = seconds;
    if (!result.rows.empty()) {
        const MetricsRow& last = result.rows.back();
        s.first_pl_accuracy = result.rows.front().pl_accuracy;
        s.final_pl_accuracy = last.pl_accuracy;
        s.final_precision = last.precision;
        s.final_recall = last.recall;
        s.probe_linear = last.probe_linear;
        s.probe_knn = last.probe_knn;
    }
    return s;
}

/// Trains `trainer` to completion. Without any epoch to run, probes are
/// taken on the current networks.
inline RunOutcome run_to_end(Trainer& trainer, const EpochCallback& on_epoch = {}) {
    const auto start = std::chrono::steady_clock::now();
    const TrainResult result = train(trainer, on_epoch);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    RunOutcome out{summarize(trainer, result, seconds), result.rows};
    if (result.rows.empty()) {
        out.summary.probe_linear = trainer.probe(ProbeMode::linear);
        out.summary.probe_knn = trainer.probe(ProbeMode::knn);
    }
    return out;
}

inline RunOutcome run_config(const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    Trainer trainer(cfg);
    return run_to_end(trainer, on_epoch);
}

struct OracleReport {
    RunSummary standard, oracle;
    /// Both runs hashed the same augmentation stream.
    bool paired = false;
};

/// Two runs differing only in oracle mode.
inline OracleReport run_oracle(TrainConfig cfg, const EpochCallback& on_epoch = {}) {
    OracleReport r;
    cfg.oracle = false;
    r.standard = run_config(cfg, on_epoch).summary;
    cfg.oracle = true;
    r.oracle = run_config(cfg, on_epoch).summary;
    r.paired = r.standard.view_hash == r.oracle.view_hash;
    return r;
}

struct GridDimension {
    std::string key;  // canonical section.key
    std::vector<std::string> values;
};

/// Short names accepted in grid specs.
inline const std::map<std::string, std::string>& grid_aliases() {
    static const std::map<std::string, std::string> aliases = {
        {"P", "loss.num_semantic"}, {"epochs", "train.epochs"},        {"voting", "train.voting"},
        {"k", "train.k"},           {"C", "train.queue_capacity"},     {"alpha", "loss.alpha"},
    };
    return aliases;
}

/// Parses "name=v1,v2,..." where name is an alias or any section.key.
inline GridDimension parse_grid_dimension(const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("grid: expected name=v1,v2,... but got '" + spec + "'");
    const std::string name = spec.substr(0, eq);
    const auto alias = grid_aliases().find(name);
    GridDimension dim{alias == grid_aliases().end() ? name : alias->second, {}};
    std::stringstream ss(spec.substr(eq + 1));
    std::string value;
    while (std::getline(ss, value, ',')) {
        if (!value.empty()) dim.values.push_back(value);
    }
    if (dim.values.empty()) throw ConfigError("grid: dimension '" + name + "' has no values");
    TrainConfig probe;
    get_setting(probe, dim.key);  // throws for unknown keys
    return dim;
}

struct AblationRow {
    std::vector<std::pair<std::string, std::string>> settings;
    RunSummary summary;
};

/// Every cell of the grid, first dimension varying slowest.
inline std::vector<std::vector<std::pair<std::string, std::string>>> grid_cells(
    const std::vector<GridDimension>& grid) {
    if (grid.empty()) throw ConfigError("grid: no dimensions given");
    for (const auto& d : grid) {
        if (d.values.empty()) throw ConfigError("grid: dimension '" + d.key + "' has no values");
    }
    std::vector<std::vector<std::pair<std::string, std::string>>> cells{{}};
    for (const auto& d : grid) {
        std::vector<std::vector<std::pair<std::string, std::string>>> next;
        for (const auto& cell : cells)
            for (const auto& v : d.values) {
                auto c = cell;
                c.emplace_back(d.key, v);
                next.push_back(std::move(c));
            }
        cells = std::move(next);
    }
    return cells;
}

/// Sequential runs over the grid, all from `base` (and so sharing its seed).
/// When the grid varies the batch size but not the capacity, each cell keeps C = 20B.
inline std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<GridDimension>& grid,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
    const auto cells = grid_cells(grid);
    for (const auto& cell : cells) {  // validate everything before the first run
        TrainConfig cfg = base;
        for (const auto& [k, v] : cell) apply_setting(cfg, k, v);
        cfg.validate();
    }
    std::vector<AblationRow> rows;
    for (const auto& cell : cells) {
        TrainConfig cfg = base;
        for (const auto& [k, v] : cell) apply_setting(cfg, k, v);
        rows.push_back({cell, run_config(cfg).summary});
        if (on_row) on_row(rows.back());
    }
    return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    if (rows.empty()) return {};
    std::string out;
    for (const auto& [k, v] : rows.front().settings) out += k + ",";
    out += "probe_linear,probe_knn,pl_accuracy,first_pl_accuracy,semantic_correctness\n";
    for (const auto& r : rows) {
        for (const auto& [k, v] : r.settings) out += v + ",";
        out += detail::csv_number(r.summary.probe_linear) + "," + detail::csv_number(r.summary.probe_knn) + "," +
               detail::csv_number(r.summary.final_pl_accuracy) + "," + detail::csv_number(r.summary.first_pl_accuracy) +
               "," + detail::csv_number(r.summary.semantic_correctness) + "\n";
    }
    return out;
}

}  // namespace semppl::harness
