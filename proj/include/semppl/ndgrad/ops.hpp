#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "semppl/ndgrad/tensor.hpp"

namespace semppl::ndgrad {

namespace detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_string(t.shape()));
    }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

/// Leading extent, treating a rank-1 tensor as a single row.
inline std::size_t row_count(const Tensor& t) { return t.rank() <= 1 ? 1 : t.size() / t.shape().back(); }
inline std::size_t row_width(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

template <typename F>
std::vector<double> unary(const Tensor& a, F&& f) {
    std::vector<double> out(a.size());
    std::transform(a.values().begin(), a.values().end(), out.begin(), f);
    return out;
}

}  // namespace detail

/// Dense matrix product of [m x k] and [k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    std::vector<double> out(m * n);
    detail::ConstMap am(a.values().data(), m, k), bm(b.values().data(), k, n);
    detail::MutMap(out.data(), m, n).noalias() = am * bm;
    auto av = a.shared_storage(), bv = b.shared_storage();
    return detail::make_result(Shape{m, n}, std::move(out), {&a, &b},
                               [av, bv, m, k, n](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                                   detail::ConstMap gm(g.data(), m, n);
                                   if (gin[0]) {
                                       detail::MutMap(gin[0]->data(), m, k).noalias() +=
                                           gm * detail::ConstMap(bv->data(), k, n).transpose();
                                   }
                                   if (gin[1]) {
                                       detail::MutMap(gin[1]->data(), k, n).noalias() +=
                                           detail::ConstMap(av->data(), m, k).transpose() * gm;
                                   }
                               });
}

/// Elementwise sum. `b` may also be a row vector [n] added to every row of a
/// rank-2 `a` [m x n].
inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) {
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
        return detail::make_result(a.shape(), std::move(out), {&a, &b},
                                   [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                                       for (auto* slot : gin) {
                                           if (!slot) continue;
                                           for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
                                       }
                                   });
    }
    if (a.rank() == 2 && b.rank() == 1 && b.size() == a.cols()) {
        const std::size_t m = a.rows(), n = a.cols();
        std::vector<double> out(a.size());
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a[r * n + c] + b[c];
        return detail::make_result(a.shape(), std::move(out), {&a, &b},
                                   [m, n](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                                       if (gin[0])
                                           for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                                       if (gin[1])
                                           for (std::size_t r = 0; r < m; ++r)
                                               for (std::size_t c = 0; c < n; ++c) (*gin[1])[c] += g[r * n + c];
                                   });
    }
    throw DimensionError("add: cannot combine " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::make_result(a.shape(), std::move(out), {&a, &b},
                               [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                                   if (gin[1])
                                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
                               });
}

/// Elementwise (Hadamard) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    auto av = a.shared_storage(), bv = b.shared_storage();
    return detail::make_result(a.shape(), std::move(out), {&a, &b},
                               [av, bv](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*bv)[i];
                                   if (gin[1])
                                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * (*av)[i];
                               });
}

inline Tensor mul_scalar(const Tensor& a, double s) {
    auto out = detail::unary(a, [s](double x) { return x * s; });
    return detail::make_result(a.shape(), std::move(out), {&a},
                               [s](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * s;
                               });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    auto out = detail::unary(a, [s](double x) { return x + s; });
    return detail::make_result(a.shape(), std::move(out), {&a},
                               [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                               });
}

/// Rectifier; the subgradient at exactly 0 is 0.
inline Tensor relu(const Tensor& a) {
    auto out = detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; });
    auto av = a.shared_storage();
    return detail::make_result(a.shape(), std::move(out), {&a},
                               [av](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < g.size(); ++i)
                                           if ((*av)[i] > 0.0) (*gin[0])[i] += g[i];
                               });
}

inline Tensor exp(const Tensor& a) {
    auto out = std::make_shared<std::vector<double>>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) (*out)[i] = std::exp(a[i]);
    std::vector<double> values = *out;
    return detail::make_result(a.shape(), std::move(values), {&a},
                               [out](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*out)[i];
                               });
}

inline Tensor log(const Tensor& a) {
    for (double x : a.values()) {
        if (!(x > 0.0)) throw DimensionError("log: argument must be positive, got " + std::to_string(x));
    }
    auto out = detail::unary(a, [](double x) { return std::log(x); });
    auto av = a.shared_storage();
    return detail::make_result(a.shape(), std::move(out), {&a},
                               [av](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                                   if (gin[0])
                                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] / (*av)[i];
                               });
}

/// Row-wise inner products of two [B x p] tensors, giving [B].
inline Tensor dot_rows(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "dot_rows");
    if (a.rank() != 1 && a.rank() != 2) throw DimensionError("dot_rows: expected rank 1 or 2, got " + shape_string(a.shape()));
    const std::size_t rows = detail::row_count(a), p = detail::row_width(a);
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < p; ++c) s += a[r * p + c] * b[r * p + c];
        out[r] = s;
    }
    auto av = a.shared_storage(), bv = b.shared_storage();
    return detail::make_result(Shape{rows}, std::move(out), {&a, &b},
                               [av, bv, rows, p](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                                   for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t c = 0; c < p; ++c) {
                                           const std::size_t i = r * p + c;
                                           if (gin[0]) (*gin[0])[i] += g[r] * (*bv)[i];
                                           if (gin[1]) (*gin[1])[i] += g[r] * (*av)[i];
                                       }
                               });
}

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) s += x;
    return detail::make_result(Shape{}, {s}, {&a},
                               [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                                   if (gin[0])
                                       for (double& x : *gin[0]) x += g[0];
                               });
}

inline Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size())); }

/// Sums each row of a [B x K] tensor, giving [B].
inline Tensor sum_rows(const Tensor& a) {
    detail::require_rank(a, 2, "sum_rows");
    const std::size_t rows = a.rows(), k = a.cols();
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < k; ++c) out[r] += a[r * k + c];
    return detail::make_result(Shape{rows}, std::move(out), {&a},
                               [rows, k](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                                   if (gin[0])
                                       for (std::size_t r = 0; r < rows; ++r)
                                           for (std::size_t c = 0; c < k; ++c) (*gin[0])[r * k + c] += g[r];
                               });
}

inline constexpr double kNormEpsilon = 1e-12;

/// Divides every trailing-dimension row by its Euclidean norm.
inline Tensor l2_normalize(const Tensor& v) {
    if (v.rank() != 1 && v.rank() != 2) {
        throw DimensionError("l2_normalize: expected rank 1 or 2, got " + shape_string(v.shape()));
    }
    const std::size_t rows = detail::row_count(v), p = detail::row_width(v);
    auto out = std::make_shared<std::vector<double>>(v.size());
    auto norms = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double ss = 0.0;
        for (std::size_t c = 0; c < p; ++c) ss += v[r * p + c] * v[r * p + c];
        const double norm = std::sqrt(ss);
        if (!(norm > kNormEpsilon)) {
            throw DegenerateVectorError("l2_normalize: row " + std::to_string(r) + " has norm " + std::to_string(norm));
        }
        (*norms)[r] = norm;
        for (std::size_t c = 0; c < p; ++c) (*out)[r * p + c] = v[r * p + c] / norm;
    }
    std::vector<double> values = *out;
    return detail::make_result(v.shape(), std::move(values), {&v},
                               [out, norms, rows, p](std::span<const double> g,
                                                     std::span<std::vector<double>* const> gin) {
                                   if (!gin[0]) return;
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       double gy = 0.0;
                                       for (std::size_t c = 0; c < p; ++c) gy += g[r * p + c] * (*out)[r * p + c];
                                       for (std::size_t c = 0; c < p; ++c) {
                                           const std::size_t i = r * p + c;
                                           (*gin[0])[i] += (g[i] - (*out)[i] * gy) / (*norms)[r];
                                       }
                                   }
                               });
}

/// Numerically stable log-softmax over the last axis of a [B x K] tensor.
inline Tensor log_softmax(const Tensor& x) {
    detail::require_rank(x, 2, "log_softmax");
    const std::size_t rows = x.rows(), k = x.cols();
    auto probs = std::make_shared<std::vector<double>>(x.size());
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.values().data() + r * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t c = 0; c < k; ++c) {
            out[r * k + c] = row[c] - lse;
            (*probs)[r * k + c] = std::exp(out[r * k + c]);
        }
    }
    return detail::make_result(x.shape(), std::move(out), {&x},
                               [probs, rows, k](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                                   if (!gin[0]) return;
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       double gs = 0.0;
                                       for (std::size_t c = 0; c < k; ++c) gs += g[r * k + c];
                                       for (std::size_t c = 0; c < k; ++c) {
                                           const std::size_t i = r * k + c;
                                           (*gin[0])[i] += g[i] - (*probs)[i] * gs;
                                       }
                                   }
                               });
}

/// out[b, j] = <anchors[b], candidates[b, j]> for anchors [B x p] and
/// candidates [B x K x p].
inline Tensor dot_candidates(const Tensor& anchors, const Tensor& candidates) {
    detail::require_rank(anchors, 2, "dot_candidates");
    detail::require_rank(candidates, 3, "dot_candidates");
    const std::size_t rows = anchors.rows(), p = anchors.cols(), k = candidates.extent(1);
    if (candidates.extent(0) != rows || candidates.extent(2) != p) {
        throw DimensionError("dot_candidates: anchors " + shape_string(anchors.shape()) + " vs candidates " +
                             shape_string(candidates.shape()));
    }
    std::vector<double> out(rows * k);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < p; ++c) s += anchors[r * p + c] * candidates[(r * k + j) * p + c];
            out[r * k + j] = s;
        }
    auto av = anchors.shared_storage(), cv = candidates.shared_storage();
    return detail::make_result(Shape{rows, k}, std::move(out), {&anchors, &candidates},
                               [av, cv, rows, p, k](std::span<const double> g,
                                                    std::span<std::vector<double>* const> gin) {
                                   for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t j = 0; j < k; ++j) {
                                           const double gr = g[r * k + j];
                                           for (std::size_t c = 0; c < p; ++c) {
                                               const std::size_t ci = (r * k + j) * p + c;
                                               if (gin[0]) (*gin[0])[r * p + c] += gr * (*cv)[ci];
                                               if (gin[1]) (*gin[1])[ci] += gr * (*av)[r * p + c];
                                           }
                                       }
                               });
}

/// out[b] = x[b, index[b]] for x [B x K].
inline Tensor pick(const Tensor& x, std::span<const std::size_t> index) {
    detail::require_rank(x, 2, "pick");
    const std::size_t rows = x.rows(), k = x.cols();
    if (index.size() != rows) throw DimensionError("pick: need one index per row of " + shape_string(x.shape()));
    std::vector<std::size_t> idx(index.begin(), index.end());
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        if (idx[r] >= k) throw DimensionError("pick: column " + std::to_string(idx[r]) + " out of range");
        out[r] = x[r * k + idx[r]];
    }
    return detail::make_result(Shape{rows}, std::move(out), {&x},
                               [idx, k](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                                   if (gin[0])
                                       for (std::size_t r = 0; r < idx.size(); ++r) (*gin[0])[r * k + idx[r]] += g[r];
                               });
}

inline Tensor select_column(const Tensor& x, std::size_t column) {
    detail::require_rank(x, 2, "select_column");
    std::vector<std::size_t> idx(x.rows(), column);
    return pick(x, idx);
}

}  // namespace semppl::ndgrad
