#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include <Eigen/Core>

#include "semppl/harness/config.hpp"
#include "semppl/nets.hpp"
#include "semppl/synthdata.hpp"

namespace semppl::harness {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ProbeMode { linear, knn };

/// Frozen encoder outputs f(x) in eval mode, one row per datum.
inline Matrix encode_features(const nets::NetworkPair& pair, const synthdata::Dataset& ds) {
    nets::NetworkPair frozen = pair;
    const nets::OnlineVars vars = nets::constant_online(frozen);
    const ndgrad::Tensor x = ndgrad::Tensor::matrix(ds.size(), ds.dim, ds.features);
    const ndgrad::Tensor f = nets::encode(vars, x, nets::Mode::eval);
    return Eigen::Map<const Matrix>(f.values().data(), static_cast<Eigen::Index>(f.rows()),
                                    static_cast<Eigen::Index>(f.cols()));
}

/// Multinomial logistic regression on standardised features, trained by
/// full-batch gradient descent from zero; returns test accuracy.
inline double linear_probe(const Matrix& train, std::span<const int> train_labels, const Matrix& test,
                           std::span<const int> test_labels, std::size_t num_classes, const ProbeConfig& cfg) {
    const Eigen::Index n = train.rows(), d = train.cols(), c = static_cast<Eigen::Index>(num_classes);
    const Eigen::RowVectorXd mean = train.colwise().mean();
    Eigen::RowVectorXd sd = ((train.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(n)).sqrt();
    for (Eigen::Index k = 0; k < d; ++k) sd[k] = std::max(sd[k], 1e-8);
    const Matrix xs = (train.rowwise() - mean).array().rowwise() / sd.array();
    const Matrix xt = (test.rowwise() - mean).array().rowwise() / sd.array();

    Matrix onehot = Matrix::Zero(n, c);
    for (Eigen::Index i = 0; i < n; ++i) onehot(i, train_labels[static_cast<std::size_t>(i)]) = 1.0;

    Matrix w = Matrix::Zero(d, c);
    Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(c);
    Matrix p(n, c);
    for (std::size_t step = 0; step < cfg.linear_steps; ++step) {
        p.noalias() = xs * w;
        p.rowwise() += b;
        for (Eigen::Index i = 0; i < n; ++i) {
            p.row(i).array() -= p.row(i).maxCoeff();
            p.row(i) = p.row(i).array().exp();
            p.row(i) /= p.row(i).sum();
        }
        p -= onehot;
        const Matrix gw = xs.transpose() * p / static_cast<double>(n) + cfg.linear_weight_decay * w;
        const Eigen::RowVectorXd gb = p.colwise().sum() / static_cast<double>(n);
        w -= cfg.linear_lr * gw;
        b -= cfg.linear_lr * gb;
    }

    Matrix logits = xt * w;
    logits.rowwise() += b;
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index arg = 0;
        logits.row(i).maxCoeff(&arg);
        correct += static_cast<int>(arg) == test_labels[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(correct) / static_cast<double>(test.rows());
}

/// k-NN by cosine similarity; majority label, ties to the label whose
/// nearest member ranks first.
inline double knn_probe(const Matrix& train, std::span<const int> train_labels, const Matrix& test,
                        std::span<const int> test_labels, std::size_t k) {
    auto normalised = [](Matrix m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            const double norm = m.row(i).norm();
            if (norm > 0.0) m.row(i) /= norm;
        }
        return m;
    };
    const Matrix a = normalised(train), q = normalised(test);
    const Matrix sims = q * a.transpose();
    k = std::min<std::size_t>(k, static_cast<std::size_t>(a.rows()));
    std::size_t correct = 0;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(a.rows()));
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<Eigen::Index>(j);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](Eigen::Index x, Eigen::Index y) {
                              return sims(i, x) != sims(i, y) ? sims(i, x) > sims(i, y) : x < y;
                          });
        std::map<int, std::pair<std::size_t, std::size_t>> tally;  // label -> (count, first rank)
        for (std::size_t r = 0; r < k; ++r) {
            auto [it, fresh] = tally.try_emplace(train_labels[static_cast<std::size_t>(order[r])], 0, r);
            ++it->second.first;
        }
        int label = 0;
        std::size_t best = 0, rank = 0;
        for (const auto& [l, cr] : tally) {
            if (cr.first > best || (cr.first == best && cr.second < rank)) {
                label = l;
                best = cr.first;
                rank = cr.second;
            }
        }
        correct += label == test_labels[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(correct) / static_cast<double>(q.rows());
}

/// Accuracy on `test` of a probe fitted on the frozen encoder features of
/// the fully labelled `train`.
inline double evaluate_probe(const nets::NetworkPair& pair, const synthdata::Dataset& train,
                             const synthdata::Dataset& test, ProbeMode mode, const ProbeConfig& cfg) {
    if (!train.has_labels() || !test.has_labels()) throw ContractError("probe: datasets need labels");
    const Matrix ftrain = encode_features(pair, train), ftest = encode_features(pair, test);
    if (mode == ProbeMode::linear) {
        return linear_probe(ftrain, train.labels, ftest, test.labels, std::max(train.num_classes, test.num_classes), cfg);
    }
    return knn_probe(ftrain, train.labels, ftest, test.labels, cfg.knn_k);
}

}  // namespace semppl::harness
