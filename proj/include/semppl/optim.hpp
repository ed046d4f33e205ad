#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "semppl/error.hpp"
#include "semppl/nets.hpp"

namespace semppl::optim {

using ndgrad::Tensor;

struct LarsConfig {
    /// Peak learning rate is base_lr * batch_size / 256.
    double base_lr = 0.3;
    double weight_decay = 1e-6;
    double trust_coefficient = 1e-3;
    double momentum = 0.9;
    std::size_t warmup_epochs = 5;
    std::size_t total_epochs = 100;

    void validate() const {
        if (!(base_lr >= 0.0) || !(weight_decay >= 0.0) || !(trust_coefficient >= 0.0) || !(momentum >= 0.0)) {
            throw SpecError("optimizer: rates must be >= 0");
        }
        if (warmup_epochs > total_epochs) throw SpecError("optimizer: warmup longer than training");
    }

    double peak_lr(std::size_t batch_size) const { return base_lr * static_cast<double>(batch_size) / 256.0; }
};

/// Linear warmup from 0 to `peak`, then cosine decay to 0 at the final step.
inline double lr_at(std::size_t step, std::size_t steps_per_epoch, const LarsConfig& cfg, double peak) {
    const double warmup = static_cast<double>(cfg.warmup_epochs * steps_per_epoch);
    const double total = static_cast<double>(cfg.total_epochs * steps_per_epoch);
    const double s = static_cast<double>(step);
    if (s < warmup) return peak * s / warmup;
    if (total <= warmup) return peak;
    const double progress = std::min(1.0, (s - warmup) / (total - warmup));
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Momentum buffers, one per parameter in online_parameters() order.
struct LarsState {
    std::vector<std::vector<double>> momentum;
};

inline double l2_norm(std::span<const double> v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    return std::sqrt(ss);
}

/// Trust ratio eta * |w| / (|g'| + 1e-9); 1 when either norm is 0.
inline double local_lr(double weight_norm, double update_norm, double eta) {
    if (weight_norm > 0.0 && update_norm > 0.0) return eta * weight_norm / (update_norm + 1e-9);
    return 1.0;
}

/// One LARS update. Biases and batch-norm parameters get neither weight
/// decay nor trust-ratio adaptation.
inline void lars_step(std::vector<nets::ParamRef>& params, std::span<const Tensor> grads, double lr,
                      const LarsConfig& cfg, LarsState& state) {
    if (grads.size() != params.size()) {
        throw DimensionError("optimizer: " + std::to_string(grads.size()) + " gradients for " +
                             std::to_string(params.size()) + " parameters");
    }
    if (state.momentum.empty()) {
        for (const auto& p : params) state.momentum.emplace_back(p.value->size(), 0.0);
    }
    if (state.momentum.size() != params.size()) throw DimensionError("optimizer: momentum state does not match");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& w = *params[i].value;
        const Tensor& g = grads[i];
        if (g.shape() != w.shape() || state.momentum[i].size() != w.size()) {
            throw DimensionError("optimizer: gradient of " + params[i].name + " has shape " +
                                 ndgrad::shape_string(g.shape()) + ", parameter " + ndgrad::shape_string(w.shape()));
        }
        const bool excluded = params[i].flags.is_bias || params[i].flags.is_batch_norm;
        std::vector<double> update = g.to_vector();
        double scale = lr;
        if (!excluded) {
            for (std::size_t k = 0; k < update.size(); ++k) update[k] += cfg.weight_decay * w[k];
            scale *= local_lr(l2_norm(w.values()), l2_norm(update), cfg.trust_coefficient);
        }
        std::vector<double>& m = state.momentum[i];
        std::vector<double> next = w.to_vector();
        for (std::size_t k = 0; k < next.size(); ++k) {
            m[k] = cfg.momentum * m[k] + scale * update[k];
            next[k] -= m[k];
        }
        w = Tensor(w.shape(), std::move(next));
    }
}

}  // namespace semppl::optim
