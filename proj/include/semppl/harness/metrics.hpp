#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "semppl/error.hpp"
#include "semppl/plqueue.hpp"

namespace semppl::harness {

inline constexpr std::size_t kMaxThreshold = 16;
inline constexpr const char* kMetricsVersionLine = "# semppl-metrics v1";

struct PrecisionRecall {
    /// Indexed by voting threshold t = 0..16.
    std::vector<double> precision, recall;
    /// empty[t] is set when no record reached threshold t (precision is then 1).
    std::vector<bool> empty;
    double accuracy = 0.0;
    std::size_t records = 0;
};

/// Precision and recall of pseudo-labels by voting threshold. A record is
/// selected at threshold t when its winning label drew at least t votes;
/// recall is the number of correct selected records over all records.
inline PrecisionRecall pseudo_label_report(std::span<const plqueue::VoteRecord> records) {
    PrecisionRecall r;
    r.records = records.size();
    std::vector<std::size_t> selected(kMaxThreshold + 1, 0), correct(kMaxThreshold + 1, 0);
    std::size_t total_correct = 0;
    for (const auto& rec : records) {
        if (!rec.truth) throw ContractError("report: vote record " + std::to_string(rec.datum) + " has no ground truth");
        const bool ok = rec.winner == *rec.truth;
        total_correct += ok;
        for (std::size_t t = 0; t <= kMaxThreshold && t <= rec.winner_count; ++t) {
            ++selected[t];
            correct[t] += ok;
        }
    }
    const double n = static_cast<double>(records.size());
    r.accuracy = records.empty() ? 0.0 : static_cast<double>(total_correct) / n;
    for (std::size_t t = 0; t <= kMaxThreshold; ++t) {
        r.empty.push_back(selected[t] == 0);
        r.precision.push_back(selected[t] == 0 ? 1.0 : static_cast<double>(correct[t]) / static_cast<double>(selected[t]));
        r.recall.push_back(records.empty() ? 0.0 : static_cast<double>(correct[t]) / n);
    }
    return r;
}

struct MetricsRow {
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0, loss_augm = 0.0, loss_sempos = 0.0, inv_augm = 0.0, inv_sempos = 0.0;
    double pl_accuracy = 0.0;
    std::vector<double> precision = std::vector<double>(kMaxThreshold + 1, 1.0);
    std::vector<double> recall = std::vector<double>(kMaxThreshold + 1, 0.0);
    std::size_t fallbacks = 0;
    double probe_linear = std::numeric_limits<double>::quiet_NaN();
    double probe_knn = std::numeric_limits<double>::quiet_NaN();
};

inline std::string metrics_header() {
    std::string h = "epoch,lr,loss_total,loss_augm,loss_sempos,inv_augm,inv_sempos,pl_accuracy";
    for (std::size_t t = 0; t <= kMaxThreshold; ++t) h += ",precision_t" + std::to_string(t);
    for (std::size_t t = 0; t <= kMaxThreshold; ++t) h += ",recall_t" + std::to_string(t);
    return h + ",fallbacks,probe_linear,probe_knn";
}

namespace detail {

inline std::string csv_number(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace detail

inline std::string metrics_line(const MetricsRow& r) {
    using detail::csv_number;
    std::string s = std::to_string(r.epoch) + "," + csv_number(r.lr) + "," + csv_number(r.loss_total) + "," +
                    csv_number(r.loss_augm) + "," + csv_number(r.loss_sempos) + "," + csv_number(r.inv_augm) + "," +
                    csv_number(r.inv_sempos) + "," + csv_number(r.pl_accuracy);
    for (double p : r.precision) s += "," + csv_number(p);
    for (double p : r.recall) s += "," + csv_number(p);
    return s + "," + std::to_string(r.fallbacks) + "," + csv_number(r.probe_linear) + "," + csv_number(r.probe_knn);
}

inline std::string metrics_csv(std::span<const MetricsRow> rows) {
    std::string out = std::string(kMetricsVersionLine) + "\n" + metrics_header() + "\n";
    for (const auto& r : rows) out += metrics_line(r) + "\n";
    return out;
}

inline void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << metrics_csv(rows);
}

/// Parses a file written by write_metrics_csv.
inline std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("metrics: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kMetricsVersionLine) {
        throw VersionError("metrics: " + path + " does not start with '" + kMetricsVersionLine + "'");
    }
    if (!std::getline(in, line) || line != metrics_header()) throw FormatError("metrics: unexpected header in " + path);
    std::vector<MetricsRow> rows;
    std::size_t line_no = 2;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> v;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                v.push_back(cell == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(cell));
            } catch (const std::exception&) {
                throw FormatError("metrics: line " + std::to_string(line_no) + " has a bad cell '" + cell + "'");
            }
        }
        const std::size_t t = kMaxThreshold + 1;
        if (v.size() != 8 + 2 * t + 3) throw FormatError("metrics: line " + std::to_string(line_no) + " is ragged");
        MetricsRow r;
        r.epoch = static_cast<std::size_t>(v[0]);
        r.lr = v[1];
        r.loss_total = v[2];
        r.loss_augm = v[3];
        r.loss_sempos = v[4];
        r.inv_augm = v[5];
        r.inv_sempos = v[6];
        r.pl_accuracy = v[7];
        r.precision.assign(v.begin() + 8, v.begin() + 8 + t);
        r.recall.assign(v.begin() + 8 + t, v.begin() + 8 + 2 * t);
        r.fallbacks = static_cast<std::size_t>(v[8 + 2 * t]);
        r.probe_linear = v[9 + 2 * t];
        r.probe_knn = v[10 + 2 * t];
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace semppl::harness
