#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "semppl/error.hpp"
#include "semppl/ndgrad.hpp"
#include "semppl/rng.hpp"

namespace semppl::objective {

using ndgrad::Tensor;

struct LossConfig {
    double tau = 0.2;
    double alpha = 0.2;
    double lambda = 5.0;
    double contrastive_scale = 0.3;
    std::size_t num_negatives = 10;
    std::size_t num_large = 4;
    std::size_t num_small = 2;
    std::size_t num_semantic = 3;

    void validate() const {
        if (!(tau > 0.0)) throw SpecError("loss: temperature must be > 0");
        if (!(alpha >= 0.0) || !(lambda >= 0.0) || !(contrastive_scale >= 0.0)) {
            throw SpecError("loss: alpha, lambda and contrastive scale must be >= 0");
        }
        if (num_large < 1) throw SpecError("loss: need at least one large view");
    }
};

/// tau * exp(<u, v> / tau).
inline double phi(std::span<const double> u, std::span<const double> v, double tau) {
    if (u.size() != v.size()) throw DimensionError("phi: operand sizes differ");
    double d = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) d += u[k] * v[k];
    return tau * std::exp(d / tau);
}

struct NegativeSample {
    std::vector<std::size_t> indices;
    /// Set when fewer than the requested negatives were available.
    bool clamped = false;
};

/// Batch indices other than `anchor`, drawn uniformly without replacement.
inline NegativeSample sample_negatives(std::size_t batch, std::size_t anchor, std::size_t count, CounterRng& rng) {
    if (batch < 2) throw BatchTooSmallError("negatives: batch of " + std::to_string(batch) + " has no negatives");
    if (anchor >= batch) throw ContractError("negatives: anchor outside the batch");
    NegativeSample out;
    if (count > batch - 1) {
        count = batch - 1;
        out.clamped = true;
    }
    std::vector<std::size_t> pool(batch - 1);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i < anchor ? i : i + 1;
    for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    out.indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
    return out;
}

/// Log-probabilities log p over [positive, negatives...] for every anchor:
/// log_softmax(<anchor, candidate> / tau). Candidates are [B x K x p] with
/// the positive first.
inline Tensor candidate_log_probs(const Tensor& anchors, const Tensor& candidates, double tau) {
    return ndgrad::log_softmax(ndgrad::mul_scalar(ndgrad::dot_candidates(anchors, candidates), 1.0 / tau));
}

struct ContrastiveResult {
    /// -log p(anchor; positive).
    Tensor loss;
    /// p over [positive, negatives...].
    Tensor probabilities;
};

/// Contrastive loss of one anchor; gradient flows through `anchor` only.
inline ContrastiveResult contrastive_term(const Tensor& anchor, std::span<const double> positive,
                                          std::span<const std::vector<double>> negatives, double tau) {
    const std::size_t p = anchor.size();
    if (positive.size() != p) throw DimensionError("contrastive: positive size differs from anchor");
    std::vector<double> cand(positive.begin(), positive.end());
    for (const auto& n : negatives) {
        if (n.size() != p) throw DimensionError("contrastive: negative size differs from anchor");
        cand.insert(cand.end(), n.begin(), n.end());
    }
    const Tensor logp = candidate_log_probs(anchor.reshaped({1, p}), Tensor({1, 1 + negatives.size(), p}, cand), tau);
    return {ndgrad::mul_scalar(ndgrad::sum(ndgrad::select_column(logp, 0)), -1.0),
            ndgrad::exp(logp).reshaped({1 + negatives.size()})};
}

struct InvarianceResult {
    /// Per-anchor KL(p_forward || p_swapped), [B]. p_forward is held
    /// constant, so gradient reaches only the swapped log-probabilities.
    Tensor penalty;
    /// Per-anchor value of the constant expectation E_pf[log pf], [B].
    std::vector<double> stopgrad;
};

/// Takes log-probabilities over the same candidate index set.
inline InvarianceResult invariance_term(const Tensor& log_forward, const Tensor& log_swapped) {
    if (log_forward.shape() != log_swapped.shape()) throw DimensionError("invariance: probability shapes differ");
    const Tensor p_fwd = ndgrad::exp(log_forward).detach();
    const std::size_t rows = log_forward.rows(), k = log_forward.cols();
    std::vector<double> frozen(rows, 0.0);
    for (std::size_t b = 0; b < rows; ++b)
        for (std::size_t c = 0; c < k; ++c) frozen[b] += p_fwd.at(b, c) * log_forward.at(b, c);
    const Tensor cross = ndgrad::sum_rows(ndgrad::mul(p_fwd, log_swapped));
    return {ndgrad::sub(Tensor::vector(frozen), cross), std::move(frozen)};
}

struct LossBreakdown {
    Tensor total;
    double l_augm = 0.0;
    double l_sempos = 0.0;
    double i_augm = 0.0;
    double i_sempos = 0.0;
    /// Value of the stop-gradient part of the total; gradient checks hold it
    /// fixed.
    double stopgrad = 0.0;
    std::size_t fallback_count = 0;
    bool negatives_clamped = false;
};

struct ViewEmbeddings {
    /// Online embeddings, [B x p] per view; large views first.
    std::vector<Tensor> online_large, online_small;
    /// Target embeddings of the large views, [B x p], untracked.
    std::vector<Tensor> target_large;
    /// Semantic positives per large target view, [B x P x p].
    std::vector<Tensor> semantic;
    /// Negative indices per anchor; every anchor has the same count.
    std::vector<std::vector<std::size_t>> negatives;
};

namespace detail {

/// [B x (1+n) x p] candidates: the given positives then target rows of the
/// anchor's negatives.
inline Tensor gather_candidates(std::span<const double> positives, std::size_t positive_stride, const Tensor& target,
                                const std::vector<std::vector<std::size_t>>& negatives) {
    const std::size_t rows = target.rows(), p = target.cols(), n = negatives.front().size();
    const auto t = target.values();
    std::vector<double> out;
    out.reserve(rows * (1 + n) * p);
    for (std::size_t b = 0; b < rows; ++b) {
        const double* pos = positives.data() + b * positive_stride;
        out.insert(out.end(), pos, pos + p);
        for (std::size_t idx : negatives[b]) out.insert(out.end(), t.begin() + idx * p, t.begin() + (idx + 1) * p);
    }
    return Tensor({rows, 1 + n, p}, std::move(out));
}

inline Tensor semantic_candidates(const ViewEmbeddings& v, std::size_t j, std::size_t s) {
    const Tensor& sem = v.semantic[j];
    const std::size_t p = sem.shape()[2], count = sem.shape()[1];
    return gather_candidates(sem.values().subspan(s * p), count * p, v.target_large[j], v.negatives);
}

inline void check_inputs(const ViewEmbeddings& v, const LossConfig& cfg) {
    if (v.online_large.size() != cfg.num_large || v.target_large.size() != cfg.num_large) {
        throw ContractError("loss: expected " + std::to_string(cfg.num_large) + " large views");
    }
    if (v.online_small.size() != cfg.num_small) {
        throw ContractError("loss: expected " + std::to_string(cfg.num_small) + " small views");
    }
    const std::size_t rows = v.online_large[0].rows(), p = v.online_large[0].cols();
    if (rows < 2) throw BatchTooSmallError("loss: batch of " + std::to_string(rows) + " has no negatives");
    if (v.negatives.size() != rows) throw ContractError("loss: need one negative set per anchor");
    for (const auto& n : v.negatives) {
        if (n.size() != v.negatives.front().size()) throw ContractError("loss: negative sets differ in size");
    }
    if (cfg.num_semantic > 0) {
        if (v.semantic.size() != cfg.num_large) throw ContractError("loss: need semantic positives per large view");
        for (const Tensor& s : v.semantic) {
            if (s.shape() != ndgrad::Shape{rows, cfg.num_semantic, p}) {
                throw DimensionError("loss: semantic positives have shape " + ndgrad::shape_string(s.shape()));
            }
        }
    }
}

}  // namespace detail

/// The full multi-view objective:
///   total = c * (l_augm + alpha * l_sempos) + lambda * (i_augm + i_sempos)
/// with the contrastive sums averaged over the batch and divided by
/// (L + S) * L * (1 + P).
inline LossBreakdown aggregate_views(const ViewEmbeddings& v, const LossConfig& cfg) {
    cfg.validate();
    detail::check_inputs(v, cfg);
    const std::size_t rows = v.online_large[0].rows();
    const std::size_t L = cfg.num_large, P = cfg.num_semantic;

    std::vector<Tensor> augm_cand, sem_cand;  // [j], [j * P + s]
    for (std::size_t j = 0; j < L; ++j) {
        augm_cand.push_back(detail::gather_candidates(v.target_large[j].values(), v.target_large[j].cols(),
                                                      v.target_large[j], v.negatives));
        for (std::size_t s = 0; s < P; ++s) sem_cand.push_back(detail::semantic_candidates(v, j, s));
    }

    std::vector<const Tensor*> anchors;
    for (const Tensor& t : v.online_large) anchors.push_back(&t);
    for (const Tensor& t : v.online_small) anchors.push_back(&t);

    Tensor augm_sum = Tensor::scalar(0.0), sem_sum = Tensor::scalar(0.0);
    for (const Tensor* anchor : anchors)
        for (std::size_t j = 0; j < L; ++j) {
            const Tensor lp = candidate_log_probs(*anchor, augm_cand[j], cfg.tau);
            augm_sum = ndgrad::add(augm_sum, ndgrad::sum(ndgrad::select_column(lp, 0)));
            for (std::size_t s = 0; s < P; ++s) {
                const Tensor sp = candidate_log_probs(*anchor, sem_cand[j * P + s], cfg.tau);
                sem_sum = ndgrad::add(sem_sum, ndgrad::sum(ndgrad::select_column(sp, 0)));
            }
        }
    const double norm = -1.0 / static_cast<double>(rows * anchors.size() * L * (1 + P));
    const Tensor l_augm = ndgrad::mul_scalar(augm_sum, norm);
    const Tensor l_sempos = ndgrad::mul_scalar(sem_sum, norm);

    Tensor i_augm = Tensor::scalar(0.0), i_sempos = Tensor::scalar(0.0);
    double frozen = 0.0;
    if (L >= 2 && cfg.lambda > 0.0) {
        auto penalty = [&](const Tensor& fwd_cand, const Tensor& swp_cand) {
            const InvarianceResult r =
                invariance_term(candidate_log_probs(v.online_large[0], fwd_cand, cfg.tau),
                                candidate_log_probs(v.online_large[1], swp_cand, cfg.tau));
            double sg = 0.0;
            for (double x : r.stopgrad) sg += x;
            frozen += sg / static_cast<double>(rows);
            return ndgrad::mean(r.penalty);
        };
        i_augm = penalty(augm_cand[1], augm_cand[0]);
        if (P > 0) {
            // The semantic positive has no online embedding, so both roles
            // share the stored positive and only the negatives swap views.
            const Tensor& sem = v.semantic[1];
            i_sempos = penalty(sem_cand[1 * P], detail::gather_candidates(sem.values(), P * sem.shape()[2],
                                                                          v.target_large[0], v.negatives));
        }
    }

    LossBreakdown out;
    out.total = ndgrad::add(
        ndgrad::mul_scalar(ndgrad::add(l_augm, ndgrad::mul_scalar(l_sempos, cfg.alpha)), cfg.contrastive_scale),
        ndgrad::mul_scalar(ndgrad::add(i_augm, i_sempos), cfg.lambda));
    out.l_augm = l_augm.item();
    out.l_sempos = l_sempos.item();
    out.i_augm = i_augm.item();
    out.i_sempos = i_sempos.item();
    out.stopgrad = cfg.lambda * frozen;
    out.negatives_clamped = v.negatives.front().size() < cfg.num_negatives;
    return out;
}

}  // namespace semppl::objective
