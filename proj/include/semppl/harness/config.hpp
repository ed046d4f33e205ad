#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "semppl/error.hpp"
#include "semppl/nets.hpp"
#include "semppl/objective.hpp"
#include "semppl/optim.hpp"
#include "semppl/synthdata.hpp"

namespace semppl::harness {

struct ProbeConfig {
    std::size_t holdout_per_class = 100;
    std::size_t linear_steps = 500;
    double linear_lr = 0.5;
    double linear_weight_decay = 1e-4;
    std::size_t knn_k = 5;
};

struct TrainConfig {
    synthdata::DatasetSpec data;
    double label_fraction = 0.10;
    synthdata::AugmentationSpec augment;
    std::size_t encoder_hidden = 128, encoder_output = 64;
    std::size_t projector_hidden = 128, projector_output = 32;
    std::size_t predictor_hidden = 128;
    bool use_batch_norm = true;
    double ema_rate = 0.996;
    /// Desk-scale invariance weight: lambda 5 stalls pseudo-labels at chance
    /// on the synthetic data within 100 epochs.
    objective::LossConfig loss = [] {
        objective::LossConfig l;
        l.lambda = 0.5;
        return l;
    }();
    optim::LarsConfig optim;
    std::size_t batch_size = 256;
    /// 0 means 20 * batch_size.
    std::size_t queue_capacity = 0;
    std::size_t knn_k = 1;
    std::uint64_t seed = 0;
    bool oracle = false;
    bool voting = true;
    ProbeConfig probe;

    std::size_t epochs() const { return optim.total_epochs; }
    std::size_t capacity() const { return queue_capacity == 0 ? 20 * batch_size : queue_capacity; }

    nets::MlpSpec encoder_spec() const { return {data.dim, encoder_hidden, encoder_output, use_batch_norm}; }
    nets::MlpSpec projector_spec() const { return {encoder_output, projector_hidden, projector_output, use_batch_norm}; }
    nets::MlpSpec predictor_spec() const {
        return {projector_output, predictor_hidden, projector_output, use_batch_norm};
    }

    /// Loss settings with the view counts taken from the augmentation.
    objective::LossConfig loss_config() const {
        objective::LossConfig l = loss;
        l.num_large = augment.num_large;
        l.num_small = augment.num_small;
        return l;
    }

    void validate() const {
        try {
            data.validate();
            augment.validate(data.dim);
            loss_config().validate();
            optim.validate();
            encoder_spec().validate("encoder");
            projector_spec().validate("projector");
            predictor_spec().validate("predictor");
        } catch (const SpecError& e) {
            throw ConfigError(e.what());
        }
        if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
        if (!(label_fraction > 0.0 && label_fraction <= 1.0)) throw ConfigError("data.label_fraction must lie in (0, 1]");
        if (knn_k < 1) throw ConfigError("train.k must be >= 1");
        if (capacity() < knn_k || capacity() < data.num_classes) {
            throw ConfigError("train.queue_capacity must hold at least k entries and one entry per class");
        }
        if (!(ema_rate >= 0.0 && ema_rate <= 1.0)) throw ConfigError("network.ema_rate must lie in [0, 1]");
        if (probe.knn_k < 1) throw ConfigError("probe.knn_k must be >= 1");
    }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t");
    if (first == std::string::npos) return {};
    return s.substr(first, s.find_last_not_of(" \t") - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
    const std::string s = trim(raw);
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigError(key + ": cannot parse '" + raw + "' as a number");
    }
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
    const std::string s = trim(raw);
    if (s == "true" || s == "on" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "off" || s == "0" || s == "no") return false;
    throw ConfigError(key + ": expected a boolean, got '" + raw + "'");
}

struct Field {
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string& key, const std::string&)> set;
};

/// Binds a key to the member selected by `ref`, a generic lambda usable on
/// both const and mutable configurations.
template <typename Ref>
Field field(Ref ref) {
    using T = std::remove_cvref_t<decltype(ref(std::declval<TrainConfig&>()))>;
    return {[ref](const TrainConfig& c) -> std::string {
                const T& v = ref(c);
                if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
                else if constexpr (std::is_floating_point_v<T>) return format_double(v);
                else return std::to_string(v);
            },
            [ref](TrainConfig& c, const std::string& k, const std::string& v) {
                if constexpr (std::is_same_v<T, bool>) ref(c) = parse_bool(k, v);
                else ref(c) = parse_number<T>(k, v);
            }};
}

inline Field sigma_field() {
    return {[](const TrainConfig& c) {
                std::string out;
                for (double s : c.augment.noise_sigma) out += (out.empty() ? "" : ",") + format_double(s);
                return out;
            },
            [](TrainConfig& c, const std::string& k, const std::string& v) {
                std::vector<double> sig;
                std::stringstream ss(v);
                std::string item;
                while (std::getline(ss, item, ',')) sig.push_back(parse_number<double>(k, item));
                if (sig.empty()) throw ConfigError(k + ": empty list");
                c.augment.noise_sigma = std::move(sig);
            }};
}

/// Every configurable key, in canonical (section, key) order.
inline const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> t;
        t["data.num_classes"] = field([](auto& c) -> auto& { return c.data.num_classes; });
        t["data.dim"] = field([](auto& c) -> auto& { return c.data.dim; });
        t["data.samples_per_class"] = field([](auto& c) -> auto& { return c.data.samples_per_class; });
        t["data.class_separation"] = field([](auto& c) -> auto& { return c.data.class_separation; });
        t["data.within_class_noise"] = field([](auto& c) -> auto& { return c.data.within_class_noise; });
        t["data.label_fraction"] = field([](auto& c) -> auto& { return c.label_fraction; });
        t["augment.num_large"] = field([](auto& c) -> auto& { return c.augment.num_large; });
        t["augment.num_small"] = field([](auto& c) -> auto& { return c.augment.num_small; });
        t["augment.noise_sigma"] = sigma_field();
        t["augment.mask_fraction"] = field([](auto& c) -> auto& { return c.augment.mask_fraction; });
        t["augment.scale_lo"] = field([](auto& c) -> auto& { return c.augment.scale_lo; });
        t["augment.scale_hi"] = field([](auto& c) -> auto& { return c.augment.scale_hi; });
        t["augment.small_view_dims"] = field([](auto& c) -> auto& { return c.augment.small_view_dims; });
        t["network.encoder_hidden"] = field([](auto& c) -> auto& { return c.encoder_hidden; });
        t["network.encoder_output"] = field([](auto& c) -> auto& { return c.encoder_output; });
        t["network.projector_hidden"] = field([](auto& c) -> auto& { return c.projector_hidden; });
        t["network.projector_output"] = field([](auto& c) -> auto& { return c.projector_output; });
        t["network.predictor_hidden"] = field([](auto& c) -> auto& { return c.predictor_hidden; });
        t["network.batch_norm"] = field([](auto& c) -> auto& { return c.use_batch_norm; });
        t["network.ema_rate"] = field([](auto& c) -> auto& { return c.ema_rate; });
        t["loss.tau"] = field([](auto& c) -> auto& { return c.loss.tau; });
        t["loss.alpha"] = field([](auto& c) -> auto& { return c.loss.alpha; });
        t["loss.lambda"] = field([](auto& c) -> auto& { return c.loss.lambda; });
        t["loss.contrastive_scale"] = field([](auto& c) -> auto& { return c.loss.contrastive_scale; });
        t["loss.num_negatives"] = field([](auto& c) -> auto& { return c.loss.num_negatives; });
        t["loss.num_semantic"] = field([](auto& c) -> auto& { return c.loss.num_semantic; });
        t["optim.base_lr"] = field([](auto& c) -> auto& { return c.optim.base_lr; });
        t["optim.weight_decay"] = field([](auto& c) -> auto& { return c.optim.weight_decay; });
        t["optim.trust_coefficient"] = field([](auto& c) -> auto& { return c.optim.trust_coefficient; });
        t["optim.momentum"] = field([](auto& c) -> auto& { return c.optim.momentum; });
        t["optim.warmup_epochs"] = field([](auto& c) -> auto& { return c.optim.warmup_epochs; });
        t["train.epochs"] = field([](auto& c) -> auto& { return c.optim.total_epochs; });
        t["train.batch_size"] = field([](auto& c) -> auto& { return c.batch_size; });
        t["train.queue_capacity"] = field([](auto& c) -> auto& { return c.queue_capacity; });
        t["train.k"] = field([](auto& c) -> auto& { return c.knn_k; });
        t["train.seed"] = field([](auto& c) -> auto& { return c.seed; });
        t["train.oracle"] = field([](auto& c) -> auto& { return c.oracle; });
        t["train.voting"] = field([](auto& c) -> auto& { return c.voting; });
        t["probe.holdout_per_class"] = field([](auto& c) -> auto& { return c.probe.holdout_per_class; });
        t["probe.linear_steps"] = field([](auto& c) -> auto& { return c.probe.linear_steps; });
        t["probe.linear_lr"] = field([](auto& c) -> auto& { return c.probe.linear_lr; });
        t["probe.linear_weight_decay"] = field([](auto& c) -> auto& { return c.probe.linear_weight_decay; });
        t["probe.knn_k"] = field([](auto& c) -> auto& { return c.probe.knn_k; });
        return t;
    }();
    return table;
}

}  // namespace detail

/// Sets `section.key` from its textual value.
inline void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
    const auto& f = detail::fields();
    const auto it = f.find(key);
    if (it == f.end()) throw ConfigError("unknown setting '" + key + "'");
    it->second.set(cfg, key, value);
}

inline std::string get_setting(const TrainConfig& cfg, const std::string& key) {
    const auto& f = detail::fields();
    const auto it = f.find(key);
    if (it == f.end()) throw ConfigError("unknown setting '" + key + "'");
    return it->second.get(cfg);
}

/// Canonical INI text; parsing it back gives an identical configuration.
inline std::string to_ini(const TrainConfig& cfg) {
    std::string out, section;
    for (const auto& [key, field] : detail::fields()) {
        const auto dot = key.find('.');
        if (key.substr(0, dot) != section) {
            section = key.substr(0, dot);
            out += (out.empty() ? "[" : "\n[") + section + "]\n";
        }
        out += key.substr(dot + 1) + " = " + field.get(cfg) + "\n";
    }
    return out;
}

/// Applies INI text (sections of `key = value`, `;` comments) on top of `base`.
inline TrainConfig parse_ini(const std::string& text, TrainConfig base = {}, const std::string& origin = "config") {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    for (const auto& [section, entries] : tree) {
        if (entries.empty()) throw ConfigError(origin + ": setting '" + section + "' is outside any section");
        for (const auto& [key, value] : entries) apply_setting(base, section + "." + key, value.data());
    }
    return base;
}

/// Built-in configurations.
inline const std::map<std::string, std::string>& presets() {
    static const std::map<std::string, std::string> table{
        {"base", ""},
        {"smoke",
         "[data]\nnum_classes = 4\ndim = 8\nsamples_per_class = 40\nlabel_fraction = 0.25\n"
         "[augment]\nsmall_view_dims = 6\n"
         "[network]\nencoder_hidden = 16\nencoder_output = 8\nprojector_hidden = 16\nprojector_output = 8\n"
         "predictor_hidden = 16\n"
         "[optim]\nwarmup_epochs = 1\n"
         "[train]\nepochs = 3\nbatch_size = 32\n"
         "[probe]\nholdout_per_class = 20\nlinear_steps = 100\n"},
    };
    return table;
}

/// A preset name or the path of an INI file.
inline TrainConfig load_config(const std::string& name_or_path) {
    const auto& p = presets();
    if (const auto it = p.find(name_or_path); it != p.end()) return parse_ini(it->second, {}, name_or_path);
    std::ifstream in(name_or_path);
    if (!in) throw ConfigError("cannot open config file '" + name_or_path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_ini(buf.str(), {}, name_or_path);
}

}  // namespace semppl::harness
