#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "semppl/ndgrad/tensor.hpp"

namespace semppl::ndgrad {

/// Compares the tape gradient of a scalar function against central finite
/// differences. Returns max_i |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
///
/// `f` is called once with `x` tracked on a fresh tape and 2*size(x) times
/// with perturbed constant copies.
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
    Tape tape;
    const Tensor xv = tape.variable(x);
    const Tensor y = f(xv);
    std::vector<double> analytic(x.size(), 0.0);
    if (y.requires_grad()) {
        const Gradients grads = tape.backward(y);
        analytic = grads.of(xv).to_vector();
    }

    double worst = 0.0;
    std::vector<double> probe = x.to_vector();
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double up = f(Tensor(x.shape(), probe)).item();
        probe[i] = orig - h;
        const double down = f(Tensor(x.shape(), probe)).item();
        probe[i] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace semppl::ndgrad
