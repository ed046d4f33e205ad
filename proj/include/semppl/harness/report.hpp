#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "semppl/harness/config.hpp"
#include "semppl/harness/experiments.hpp"
#include "semppl/harness/metrics.hpp"

namespace semppl::harness {

struct Series {
    std::string name;
    std::vector<double> x, y;
};

namespace detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace detail

/// Dependency-free SVG line chart, one polyline per series. Non-finite
/// points are skipped.
inline std::string svg_line_chart(const std::string& title, const std::string& x_label,
                                  const std::vector<Series>& series) {
    constexpr double width = 640, height = 400, left = 60, right = 150, top = 40, bottom = 50;
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series)
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y0 -= 0.5, y1 += 0.5;
    const double pw = width - left - right, ph = height - top - bottom;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    using detail::fmt;
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" +
                      fmt(height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + fmt(width / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" +
           detail::xml_escape(title) + "</text>\n";
    svg += "<rect x=\"" + fmt(left) + "\" y=\"" + fmt(top) + "\" width=\"" + fmt(pw) + "\" height=\"" + fmt(ph) +
           "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double fy = y0 + (y1 - y0) * t / 4.0, fx = x0 + (x1 - x0) * t / 4.0;
        svg += "<text x=\"" + fmt(left - 6) + "\" y=\"" + fmt(py(fy) + 4) + "\" text-anchor=\"end\">" +
               detail::fmt_tick(fy) + "</text>\n";
        svg += "<text x=\"" + fmt(px(fx)) + "\" y=\"" + fmt(top + ph + 16) + "\" text-anchor=\"middle\">" +
               detail::fmt_tick(fx) + "</text>\n";
    }
    svg += "<text x=\"" + fmt(left + pw / 2) + "\" y=\"" + fmt(height - 10) + "\" text-anchor=\"middle\">" +
           detail::xml_escape(x_label) + "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = colors[k % std::size(colors)];
        std::string points;
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            points += fmt(px(s.x[i])) + "," + fmt(py(s.y[i])) + " ";
        }
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + points +
               "\"/>\n";
        const double ly = top + 14 + 18.0 * static_cast<double>(k);
        svg += "<line x1=\"" + fmt(left + pw + 10) + "\" y1=\"" + fmt(ly - 4) + "\" x2=\"" + fmt(left + pw + 30) +
               "\" y2=\"" + fmt(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + fmt(left + pw + 35) + "\" y=\"" + fmt(ly) + "\">" + detail::xml_escape(s.name) +
               "</text>\n";
    }
    return svg + "</svg>\n";
}

/// Loss, pseudo-label accuracy and final precision/recall charts.
inline std::vector<std::pair<std::string, std::string>> metrics_charts(const std::vector<MetricsRow>& rows) {
    Series total{"total", {}, {}}, augm{"augm", {}, {}}, sempos{"sempos", {}, {}}, acc{"pl accuracy", {}, {}};
    for (const auto& r : rows) {
        const double e = static_cast<double>(r.epoch);
        for (Series* s : {&total, &augm, &sempos, &acc}) s->x.push_back(e);
        total.y.push_back(r.loss_total);
        augm.y.push_back(r.loss_augm);
        sempos.y.push_back(r.loss_sempos);
        acc.y.push_back(r.pl_accuracy);
    }
    std::vector<std::pair<std::string, std::string>> out;
    out.emplace_back("loss.svg", svg_line_chart("Training loss", "epoch", {total, augm, sempos}));
    out.emplace_back("pl_accuracy.svg", svg_line_chart("Pseudo-label accuracy", "epoch", {acc}));
    if (!rows.empty()) {
        Series precision{"precision", {}, {}}, recall{"recall", {}, {}};
        for (std::size_t t = 0; t <= kMaxThreshold; ++t) {
            precision.x.push_back(static_cast<double>(t));
            recall.x.push_back(static_cast<double>(t));
            precision.y.push_back(rows.back().precision[t]);
            recall.y.push_back(rows.back().recall[t]);
        }
        out.emplace_back("precision_recall.svg",
                         svg_line_chart("Pseudo-labels at the last epoch", "voting threshold", {precision, recall}));
    }
    return out;
}

inline nlohmann::json summary_json(const RunSummary& s) {
    auto number = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {
        {"epochs", s.epochs},
        {"first_pl_accuracy", number(s.first_pl_accuracy)},
        {"final_pl_accuracy", number(s.final_pl_accuracy)},
        {"final_precision", s.final_precision},
        {"final_recall", s.final_recall},
        {"semantic_correctness", number(s.semantic_correctness)},
        {"probe_linear", number(s.probe_linear)},
        {"probe_knn", number(s.probe_knn)},
        {"view_hash", s.view_hash},
        {"seconds", number(s.seconds)},
    };
}

/// Run summary document: config echo plus headline numbers.
inline std::string run_summary_document(const TrainConfig& cfg, const RunSummary& s) {
    nlohmann::json doc;
    doc["config"] = to_ini(cfg);
    doc["summary"] = summary_json(s);
    return doc.dump(2) + "\n";
}

inline std::string oracle_document(const TrainConfig& cfg, const OracleReport& r) {
    nlohmann::json doc;
    doc["config"] = to_ini(cfg);
    doc["standard"] = summary_json(r.standard);
    doc["oracle"] = summary_json(r.oracle);
    doc["paired"] = r.paired;
    return doc.dump(2) + "\n";
}

}  // namespace semppl::harness
