#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "semppl/ndgrad/ops.hpp"

namespace semppl::ndgrad {

enum class Mode { train, eval };

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;

    static BatchNormState identity(std::size_t width) {
        return {std::vector<double>(width, 0.0), std::vector<double>(width, 1.0)};
    }
};

struct BatchNormOptions {
    double epsilon = 1e-5;
    /// Weight of the previous running moment in each update.
    double momentum = 0.9;
};

/// Batch normalisation of x [B x d] with learnable scale and shift [d].
///
/// Train mode normalises with the biased batch variance and, if `state` is
/// non-null, folds the batch moments into the running moments (unbiased
/// variance). Eval mode normalises with the running moments.
inline Tensor batch_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, BatchNormState* state, Mode mode,
                         const BatchNormOptions& options = {}) {
    detail::require_rank(x, 2, "batch_norm");
    const std::size_t batch = x.rows(), width = x.cols();
    if (scale.shape() != Shape{width} || shift.shape() != Shape{width}) {
        throw DimensionError("batch_norm: scale/shift must be [" + std::to_string(width) + "], got " +
                             shape_string(scale.shape()) + " and " + shape_string(shift.shape()));
    }
    if (mode == Mode::train && batch < 2) {
        throw BatchTooSmallError("batch_norm: train mode needs a batch of at least 2, got " + std::to_string(batch));
    }
    if (mode == Mode::eval && !state) throw ContractError("batch_norm: eval mode needs running moments");
    if (state && (state->running_mean.size() != width || state->running_var.size() != width)) {
        throw DimensionError("batch_norm: running moments do not match width " + std::to_string(width));
    }

    std::vector<double> mu(width, 0.0), var(width, 0.0);
    if (mode == Mode::train) {
        for (std::size_t r = 0; r < batch; ++r)
            for (std::size_t c = 0; c < width; ++c) mu[c] += x[r * width + c];
        for (double& m : mu) m /= static_cast<double>(batch);
        for (std::size_t r = 0; r < batch; ++r)
            for (std::size_t c = 0; c < width; ++c) {
                const double d = x[r * width + c] - mu[c];
                var[c] += d * d;
            }
        for (double& v : var) v /= static_cast<double>(batch);
        if (state) {
            const double rho = options.momentum;
            const double unbias = static_cast<double>(batch) / static_cast<double>(batch - 1);
            for (std::size_t c = 0; c < width; ++c) {
                state->running_mean[c] = rho * state->running_mean[c] + (1.0 - rho) * mu[c];
                state->running_var[c] = rho * state->running_var[c] + (1.0 - rho) * var[c] * unbias;
            }
        }
    } else {
        mu = state->running_mean;
        var = state->running_var;
    }

    auto inv_std = std::make_shared<std::vector<double>>(width);
    for (std::size_t c = 0; c < width; ++c) (*inv_std)[c] = 1.0 / std::sqrt(var[c] + options.epsilon);
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t c = 0; c < width; ++c) {
            const std::size_t i = r * width + c;
            (*xhat)[i] = (x[i] - mu[c]) * (*inv_std)[c];
            out[i] = scale[c] * (*xhat)[i] + shift[c];
        }

    auto sv = scale.shared_storage();
    const bool batch_stats = mode == Mode::train;
    return detail::make_result(
        x.shape(), std::move(out), {&x, &scale, &shift},
        [xhat, inv_std, sv, batch, width, batch_stats](std::span<const double> g,
                                                       std::span<std::vector<double>* const> gin) {
            const double n = static_cast<double>(batch);
            for (std::size_t c = 0; c < width; ++c) {
                double g_sum = 0.0, g_xhat = 0.0;
                for (std::size_t r = 0; r < batch; ++r) {
                    const std::size_t i = r * width + c;
                    g_sum += g[i];
                    g_xhat += g[i] * (*xhat)[i];
                }
                if (gin[1]) (*gin[1])[c] += g_xhat;
                if (gin[2]) (*gin[2])[c] += g_sum;
                if (!gin[0]) continue;
                const double k = (*sv)[c] * (*inv_std)[c];
                for (std::size_t r = 0; r < batch; ++r) {
                    const std::size_t i = r * width + c;
                    if (batch_stats) {
                        (*gin[0])[i] += k * (g[i] - g_sum / n - (*xhat)[i] * g_xhat / n);
                    } else {
                        (*gin[0])[i] += k * g[i];
                    }
                }
            }
        });
}

}  // namespace semppl::ndgrad
