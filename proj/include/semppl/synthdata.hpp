#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semppl/error.hpp"
#include "semppl/ndgrad/tensor.hpp"
#include "semppl/rng.hpp"

namespace semppl::synthdata {

struct DatasetSpec {
    std::size_t num_classes = 10;
    std::size_t dim = 32;
    std::size_t samples_per_class = 500;
    double class_separation = 6.0;
    double within_class_noise = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_classes < 2) throw SpecError("dataset: num_classes must be >= 2");
        if (dim < 1) throw SpecError("dataset: dim must be >= 1");
        if (samples_per_class < 1) throw SpecError("dataset: samples_per_class must be >= 1");
        if (!(class_separation > 0.0)) throw SpecError("dataset: class_separation must be > 0");
        if (!(within_class_noise >= 0.0)) throw SpecError("dataset: within_class_noise must be >= 0");
    }
};

/// Row-major points with optional integer labels.
struct Dataset {
    std::size_t dim = 0;
    std::size_t num_classes = 0;
    std::vector<double> features;
    std::vector<int> labels;
    std::vector<double> class_means;

    std::size_t size() const noexcept { return dim == 0 ? 0 : features.size() / dim; }
    bool has_labels() const noexcept { return !labels.empty(); }
    std::span<const double> point(std::size_t i) const { return {features.data() + i * dim, dim}; }
};

namespace detail {

inline std::vector<double> sample_means(const DatasetSpec& spec) {
    constexpr std::size_t kMaxAttempts = 10000;
    CounterRng rng = make_stream(spec.seed, StreamPurpose::dataset_means);
    // Spread chosen so typical pairwise distances are ~1.4x the separation.
    const double spread = spec.class_separation / std::sqrt(static_cast<double>(spec.dim));
    std::vector<double> means;
    std::vector<double> candidate(spec.dim);
    std::size_t attempts = 0;
    while (means.size() < spec.num_classes * spec.dim) {
        if (attempts++ >= kMaxAttempts) {
            throw SpecError("dataset: could not place " + std::to_string(spec.num_classes) +
                            " class means at separation " + std::to_string(spec.class_separation) + " in " +
                            std::to_string(kMaxAttempts) + " attempts");
        }
        for (double& v : candidate) v = spread * rng.normal();
        bool ok = true;
        for (std::size_t c = 0; ok && c < means.size() / spec.dim; ++c) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < spec.dim; ++k) {
                const double diff = candidate[k] - means[c * spec.dim + k];
                d2 += diff * diff;
            }
            ok = std::sqrt(d2) >= spec.class_separation;
        }
        if (ok) means.insert(means.end(), candidate.begin(), candidate.end());
    }
    return means;
}

inline Dataset sample_points(const DatasetSpec& spec, std::vector<double> means, std::size_t per_class,
                             StreamPurpose purpose) {
    Dataset ds;
    ds.dim = spec.dim;
    ds.num_classes = spec.num_classes;
    ds.features.reserve(spec.num_classes * per_class * spec.dim);
    ds.labels.reserve(spec.num_classes * per_class);
    CounterRng rng = make_stream(spec.seed, purpose);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t s = 0; s < per_class; ++s) {
            for (std::size_t k = 0; k < spec.dim; ++k) {
                const double noise = spec.within_class_noise > 0.0 ? spec.within_class_noise * rng.normal() : 0.0;
                ds.features.push_back(means[c * spec.dim + k] + noise);
            }
            ds.labels.push_back(static_cast<int>(c));
        }
    }
    ds.class_means = std::move(means);
    return ds;
}

}  // namespace detail

/// Gaussian mixture: one isotropic blob per class around rejection-sampled
/// means. Points are stored class by class.
inline Dataset generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    return detail::sample_points(spec, detail::sample_means(spec), spec.samples_per_class,
                                 StreamPurpose::dataset_points);
}

/// Fresh points from the same class means as generate_dataset(spec).
inline Dataset generate_holdout(const DatasetSpec& spec, std::size_t samples_per_class) {
    spec.validate();
    return detail::sample_points(spec, detail::sample_means(spec), samples_per_class, StreamPurpose::holdout_points);
}

struct LabeledSplit {
    std::vector<std::size_t> labeled;
    std::vector<std::size_t> unlabeled;
    double label_fraction = 0.0;
};

/// Stratified split: ceil(fraction * class_count) labelled points per class.
inline LabeledSplit split_labels(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (!ds.has_labels()) throw SpecError("split: dataset has no labels");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw SpecError("split: fraction must lie in (0, 1]");
    if (fraction * static_cast<double>(ds.size()) < static_cast<double>(ds.num_classes)) {
        throw SpecError("split: fraction " + std::to_string(fraction) + " of " + std::to_string(ds.size()) +
                        " points cannot cover " + std::to_string(ds.num_classes) + " classes");
    }
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(static_cast<std::size_t>(ds.labels[i])).push_back(i);

    CounterRng rng = make_stream(seed, StreamPurpose::label_split);
    std::vector<bool> is_labeled(ds.size(), false);
    for (auto& members : by_class) {
        if (members.empty()) continue;
        // Guard against 0.1 * 100 rounding up to 11.
        const double want = fraction * static_cast<double>(members.size());
        auto take = static_cast<std::size_t>(std::ceil(want - 1e-9));
        take = std::clamp<std::size_t>(take, 1, members.size());
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t j = i + rng.below(members.size() - i);
            std::swap(members[i], members[j]);
            is_labeled[members[i]] = true;
        }
    }
    LabeledSplit split;
    split.label_fraction = fraction;
    for (std::size_t i = 0; i < ds.size(); ++i) (is_labeled[i] ? split.labeled : split.unlabeled).push_back(i);
    return split;
}

/// Parametric stand-in for an image augmentation pipeline.
struct AugmentationSpec {
    std::size_t num_large = 4;
    std::size_t num_small = 2;
    /// Additive Gaussian noise per view slot (large slots first). A single
    /// value applies to every slot.
    std::vector<double> noise_sigma{0.5};
    /// Fraction of coordinates zeroed in every view.
    double mask_fraction = 0.125;
    double scale_lo = 0.8;
    double scale_hi = 1.2;
    /// Coordinates kept by small views; 0 means "same as the input".
    std::size_t small_view_dims = 24;

    double sigma_for(std::size_t slot) const { return noise_sigma.size() == 1 ? noise_sigma[0] : noise_sigma.at(slot); }

    void validate(std::size_t dim) const {
        if (num_large < 1) throw SpecError("augmentation: need at least one large view");
        if (!(mask_fraction >= 0.0 && mask_fraction < 1.0)) throw SpecError("augmentation: mask_fraction must lie in [0, 1)");
        if (noise_sigma.empty() || (noise_sigma.size() != 1 && noise_sigma.size() != num_large + num_small)) {
            throw SpecError("augmentation: noise_sigma needs 1 or num_large + num_small entries");
        }
        for (double s : noise_sigma)
            if (!(s >= 0.0)) throw SpecError("augmentation: noise_sigma must be >= 0");
        if (!(scale_lo > 0.0 && scale_lo <= scale_hi)) throw SpecError("augmentation: need 0 < scale_lo <= scale_hi");
        if (small_view_dims > dim) throw SpecError("augmentation: small_view_dims exceeds input dimension");
    }
};

struct ViewSet {
    std::vector<std::vector<double>> large;
    std::vector<std::vector<double>> small;
    std::optional<int> label;
};

namespace detail {

/// First `count` entries of a uniformly random permutation of [0, dim).
inline std::vector<std::size_t> random_subset(std::size_t dim, std::size_t count, CounterRng& rng) {
    std::vector<std::size_t> idx(dim);
    for (std::size_t i = 0; i < dim; ++i) idx[i] = i;
    for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(dim - i)]);
    idx.resize(count);
    return idx;
}

inline std::vector<double> corrupt(std::span<const double> x, const AugmentationSpec& spec, double sigma,
                                   CounterRng& rng) {
    const std::size_t dim = x.size();
    const double scale = spec.scale_lo == spec.scale_hi ? spec.scale_lo : rng.uniform(spec.scale_lo, spec.scale_hi);
    std::vector<double> v(dim);
    for (std::size_t k = 0; k < dim; ++k) v[k] = scale * (x[k] + (sigma > 0.0 ? sigma * rng.normal() : 0.0));
    const auto masked = static_cast<std::size_t>(std::llround(spec.mask_fraction * static_cast<double>(dim)));
    for (std::size_t k : random_subset(dim, masked, rng)) v[k] = 0.0;
    return v;
}

}  // namespace detail

/// Corrupted copies of x: each large view is scale * (x + noise) with a
/// fixed number of coordinates zeroed; small views additionally keep only a
/// random subset of small_view_dims coordinates.
inline ViewSet make_views(std::span<const double> x, const AugmentationSpec& spec, CounterRng& rng,
                          std::optional<int> label = std::nullopt) {
    spec.validate(x.size());
    ViewSet views;
    views.label = label;
    for (std::size_t i = 0; i < spec.num_large; ++i) views.large.push_back(detail::corrupt(x, spec, spec.sigma_for(i), rng));
    const std::size_t keep = spec.small_view_dims == 0 ? x.size() : spec.small_view_dims;
    for (std::size_t i = 0; i < spec.num_small; ++i) {
        std::vector<double> v = detail::corrupt(x, spec, spec.sigma_for(spec.num_large + i), rng);
        std::vector<double> small(x.size(), 0.0);
        for (std::size_t k : detail::random_subset(x.size(), keep, rng)) small[k] = v[k];
        views.small.push_back(std::move(small));
    }
    return views;
}

/// Views of a batch laid out per view slot: large[i] and small[i] are
/// [B x dim] matrices whose row b belongs to indices[b].
struct ViewBatch {
    std::vector<ndgrad::Tensor> large;
    std::vector<ndgrad::Tensor> small;
};

/// The stream of datum `index` is keyed by (seed, epoch, batch, index), so a
/// batch's views do not depend on anything else that happened in the run.
inline CounterRng view_stream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch, std::uint64_t index) {
    return make_stream(seed, StreamPurpose::views, {epoch, batch, index});
}

inline ViewBatch make_view_batch(const Dataset& ds, std::span<const std::size_t> indices, const AugmentationSpec& spec,
                                 std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch) {
    const std::size_t rows = indices.size(), dim = ds.dim;
    std::vector<std::vector<double>> large(spec.num_large, std::vector<double>(rows * dim));
    std::vector<std::vector<double>> small(spec.num_small, std::vector<double>(rows * dim));
    for (std::size_t b = 0; b < rows; ++b) {
        CounterRng rng = view_stream(seed, epoch, batch, indices[b]);
        const ViewSet vs = make_views(ds.point(indices[b]), spec, rng);
        for (std::size_t i = 0; i < spec.num_large; ++i) std::copy(vs.large[i].begin(), vs.large[i].end(), large[i].begin() + b * dim);
        for (std::size_t i = 0; i < spec.num_small; ++i) std::copy(vs.small[i].begin(), vs.small[i].end(), small[i].begin() + b * dim);
    }
    ViewBatch out;
    for (auto& v : large) out.large.push_back(ndgrad::Tensor::matrix(rows, dim, std::move(v)));
    for (auto& v : small) out.small.push_back(ndgrad::Tensor::matrix(rows, dim, std::move(v)));
    return out;
}

struct CsvOptions {
    bool has_labels = true;
    bool skip_header = false;
};

/// Reads comma-separated rows of `dim` reals, optionally followed by an
/// integer class label. Row numbers in errors are 1-based file lines.
inline Dataset ingest_csv(const std::string& path, CsvOptions options = {}) {
    std::ifstream in(path);
    if (!in) throw FormatError("csv: cannot open " + path);
    Dataset ds;
    std::string line;
    std::size_t line_no = 0, expected_fields = 0;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1 && options.skip_header) continue;
        if (line.empty()) continue;

        std::vector<std::string_view> fields;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (expected_fields == 0) {
            expected_fields = fields.size();
            if (options.has_labels && expected_fields < 2) {
                throw FormatError("csv: row " + std::to_string(line_no) + " needs at least one feature and a label");
            }
            ds.dim = options.has_labels ? expected_fields - 1 : expected_fields;
        } else if (fields.size() != expected_fields) {
            throw FormatError("csv: row " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                              " fields, expected " + std::to_string(expected_fields));
        }
        for (std::size_t f = 0; f < ds.dim; ++f) {
            std::string_view s = fields[f];
            while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
            while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
                throw FormatError("csv: row " + std::to_string(line_no) + " field " + std::to_string(f + 1) +
                                  " is not a finite number: '" + std::string(s) + "'");
            }
            ds.features.push_back(v);
        }
        if (options.has_labels) {
            std::string_view s = fields.back();
            while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
            while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
            int label = 0;
            const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), label);
            if (ec != std::errc() || ptr != s.data() + s.size() || label < 0) {
                throw FormatError("csv: row " + std::to_string(line_no) + " label is not a non-negative integer: '" +
                                  std::string(s) + "'");
            }
            ds.labels.push_back(label);
            max_label = std::max(max_label, label);
        }
    }
    if (ds.size() == 0) throw FormatError("csv: " + path + " contains no data rows (empty dataset)");
    ds.num_classes = static_cast<std::size_t>(max_label + 1);
    return ds;
}

}  // namespace semppl::synthdata
