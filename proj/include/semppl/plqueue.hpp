#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "semppl/error.hpp"
#include "semppl/ndgrad/tensor.hpp"
#include "semppl/rng.hpp"

namespace semppl::plqueue {

inline constexpr double kUnitTolerance = 1e-6;

struct Neighbor {
    int label = 0;
    double similarity = 0.0;
    /// Insertion number of the matched entry; smaller is older.
    std::uint64_t insertion = 0;
};

/// Fixed-capacity FIFO of (unit embedding, label) pairs backed by a ring
/// buffer. Entries occupy slots [0, size()) of the slot arrays; logical FIFO
/// order starts at the oldest slot.
class LabeledQueue {
public:
    LabeledQueue() = default;
    LabeledQueue(std::size_t capacity, std::size_t dim)
        : capacity_(capacity), dim_(dim), embeddings_(capacity * dim), labels_(capacity), insertions_(capacity) {
        if (capacity == 0 || dim == 0) throw SpecError("queue: capacity and dimension must be positive");
    }

    /// Appends an entry, evicting the oldest when full.
    void push(std::span<const double> embedding, int label) {
        if (embedding.size() != dim_) {
            throw DimensionError("queue: embedding has " + std::to_string(embedding.size()) + " values, expected " +
                                 std::to_string(dim_));
        }
        double ss = 0.0;
        for (double v : embedding) ss += v * v;
        if (!(std::abs(std::sqrt(ss) - 1.0) <= kUnitTolerance)) {
            throw ContractError("queue: embedding norm " + std::to_string(std::sqrt(ss)) + " is not unit");
        }
        push_unchecked(embedding, label, counter_);
    }

    std::size_t size() const noexcept { return size_; }
    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t dim() const noexcept { return dim_; }
    /// Total number of pushes so far; also the insertion number of the next push.
    std::uint64_t counter() const noexcept { return counter_; }

    /// Entry `i` in FIFO order, 0 being the oldest.
    std::span<const double> embedding(std::size_t i) const { return slot_embedding(slot_of(i)); }
    int label(std::size_t i) const { return labels_[slot_of(i)]; }
    std::uint64_t insertion(std::size_t i) const { return insertions_[slot_of(i)]; }
    /// Storage slot of entry `i`.
    std::size_t slot(std::size_t i) const { return slot_of(i); }

    std::span<const double> slot_embedding(std::size_t slot) const { return {embeddings_.data() + slot * dim_, dim_}; }
    int slot_label(std::size_t slot) const { return labels_[slot]; }
    std::uint64_t slot_insertion(std::size_t slot) const { return insertions_[slot]; }
    /// Slot storage, row-major [size() x dim()].
    const double* slot_data() const noexcept { return embeddings_.data(); }

    /// Restores an entry exactly (checkpoint loading). Entries must arrive
    /// oldest first.
    void restore(std::span<const double> embedding, int label, std::uint64_t insertion) {
        push_unchecked(embedding, label, insertion);
    }
    void set_counter(std::uint64_t counter) noexcept { counter_ = counter; }

private:
    std::size_t slot_of(std::size_t i) const {
        if (i >= size_) throw QueryError("queue: entry " + std::to_string(i) + " out of range");
        return (head_ + i) % capacity_;
    }

    void push_unchecked(std::span<const double> embedding, int label, std::uint64_t insertion) {
        std::size_t slot;
        if (size_ < capacity_) {
            slot = (head_ + size_) % capacity_;
            ++size_;
        } else {
            slot = head_;
            head_ = (head_ + 1) % capacity_;
        }
        std::copy(embedding.begin(), embedding.end(), embeddings_.begin() + slot * dim_);
        labels_[slot] = label;
        insertions_[slot] = insertion;
        counter_ = std::max(counter_, insertion + 1);
    }

    std::size_t capacity_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> embeddings_;
    std::vector<int> labels_;
    std::vector<std::uint64_t> insertions_;
    std::size_t head_ = 0;
    std::size_t size_ = 0;
    std::uint64_t counter_ = 0;
};

/// One queue per large view.
struct QueueBank {
    std::vector<LabeledQueue> queues;
    std::vector<int> class_ids;

    QueueBank() = default;
    QueueBank(std::size_t num_views, std::size_t capacity, std::size_t dim) {
        if (num_views == 0) throw SpecError("queue bank: need at least one view");
        queues.assign(num_views, LabeledQueue(capacity, dim));
    }

    std::size_t num_views() const noexcept { return queues.size(); }
};

/// Fills every queue to capacity with random unit vectors whose labels cycle
/// through `class_ids`.
inline void init_random(QueueBank& bank, std::span<const int> class_ids, std::uint64_t seed) {
    if (class_ids.empty()) throw SpecError("queue init: no classes");
    for (std::size_t v = 0; v < bank.queues.size(); ++v) {
        LabeledQueue& q = bank.queues[v];
        if (q.capacity() < class_ids.size()) {
            throw SpecError("queue init: capacity " + std::to_string(q.capacity()) + " < " +
                            std::to_string(class_ids.size()) + " classes");
        }
        q = LabeledQueue(q.capacity(), q.dim());
        CounterRng rng = make_stream(seed, StreamPurpose::queue_init, {v});
        std::vector<double> e(q.dim());
        for (std::size_t n = 0; n < q.capacity(); ++n) {
            double ss = 0.0;
            do {
                ss = 0.0;
                for (double& x : e) {
                    x = rng.normal();
                    ss += x * x;
                }
            } while (ss <= 1e-24);
            const double norm = std::sqrt(ss);
            for (double& x : e) x /= norm;
            q.push(e, class_ids[n % class_ids.size()]);
        }
    }
    bank.class_ids.assign(class_ids.begin(), class_ids.end());
}

inline void enqueue_labeled(QueueBank& bank, std::size_t view, std::span<const double> embedding, int label) {
    if (view >= bank.queues.size()) {
        throw ContractError("enqueue: view " + std::to_string(view) + " out of range for " +
                            std::to_string(bank.queues.size()) + " queues");
    }
    bank.queues[view].push(embedding, label);
}

inline bool neighbor_before(const Neighbor& a, const Neighbor& b) noexcept {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.insertion < b.insertion;
}

/// Top-k slots of a queue given per-slot scores, ordered by descending
/// score and then by older insertion.
inline std::vector<Neighbor> top_k(const LabeledQueue& queue, std::span<const double> scores, std::size_t k) {
    if (k == 0 || k > queue.size()) {
        throw QueryError("knn: k = " + std::to_string(k) + " but queue holds " + std::to_string(queue.size()));
    }
    std::vector<Neighbor> best;
    best.reserve(k + 1);
    double floor = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < queue.size(); ++s) {
        if (scores[s] < floor) continue;
        const Neighbor cand{queue.slot_label(s), scores[s], queue.slot_insertion(s)};
        if (best.size() == k && !neighbor_before(cand, best.back())) continue;
        auto pos = std::upper_bound(best.begin(), best.end(), cand, neighbor_before);
        best.insert(pos, cand);
        if (best.size() > k) best.pop_back();
        if (best.size() == k) floor = best.back().similarity;
    }
    return best;
}

/// Exact k nearest neighbours by dot product (cosine for unit vectors).
inline std::vector<Neighbor> knn_query(const LabeledQueue& queue, std::span<const double> query, std::size_t k) {
    if (query.size() != queue.dim()) throw DimensionError("knn: query dimension mismatch");
    if (k == 0 || k > queue.size()) {
        throw QueryError("knn: k = " + std::to_string(k) + " but queue holds " + std::to_string(queue.size()));
    }
    std::vector<double> scores(queue.size());
    for (std::size_t s = 0; s < queue.size(); ++s) {
        const auto e = queue.slot_embedding(s);
        double d = 0.0;
        for (std::size_t c = 0; c < e.size(); ++c) d += query[c] * e[c];
        scores[s] = d;
    }
    return top_k(queue, scores, k);
}

struct Vote {
    std::size_t queue_view = 0;
    std::size_t query_view = 0;
    int label = 0;
    double top_similarity = 0.0;
};

struct VoteRecord {
    std::size_t datum = 0;
    std::vector<Vote> votes;
    int winner = 0;
    std::size_t winner_count = 0;
    /// Ground truth when known (synthetic data); used only for reporting.
    std::optional<int> truth;
};

/// Collapses k neighbours into one vote: the most frequent label, ties going
/// to the label whose best neighbour ranks first.
inline Vote reduce_neighbors(std::span<const Neighbor> neighbors, std::size_t queue_view, std::size_t query_view) {
    std::map<int, std::pair<std::size_t, std::size_t>> tally;  // label -> (count, first rank)
    for (std::size_t r = 0; r < neighbors.size(); ++r) {
        auto [it, inserted] = tally.try_emplace(neighbors[r].label, 0, r);
        ++it->second.first;
    }
    int label = neighbors.front().label;
    std::size_t best_count = 0, best_rank = 0;
    for (const auto& [l, cr] : tally) {
        if (cr.first > best_count || (cr.first == best_count && cr.second < best_rank)) {
            label = l;
            best_count = cr.first;
            best_rank = cr.second;
        }
    }
    return Vote{queue_view, query_view, label, neighbors[best_rank].similarity};
}

/// Mode of the votes; ties go to the larger summed top similarity, then to
/// the smaller class id.
inline void tally_votes(VoteRecord& record) {
    std::map<int, std::pair<std::size_t, double>> tally;
    for (const Vote& v : record.votes) {
        auto& t = tally[v.label];
        ++t.first;
        t.second += v.top_similarity;
    }
    bool first = true;
    std::size_t best_count = 0;
    double best_sim = 0.0;
    for (const auto& [label, cs] : tally) {  // ascending label order
        if (first || cs.first > best_count || (cs.first == best_count && cs.second > best_sim)) {
            record.winner = label;
            best_count = cs.first;
            best_sim = cs.second;
            first = false;
        }
    }
    record.winner_count = best_count;
}

/// Pseudo-label of one datum from its online embeddings (one per large
/// view). With voting every (queue i, query j) pair casts a vote; without,
/// only queue 0 is queried with view 0.
inline VoteRecord vote_pseudo_label(const QueueBank& bank, std::span<const std::vector<double>> embeddings,
                                    std::size_t k, bool voting = true) {
    if (embeddings.size() != bank.num_views()) {
        throw ContractError("vote: need one embedding per large view (" + std::to_string(bank.num_views()) + ")");
    }
    VoteRecord record;
    const std::size_t views = voting ? bank.num_views() : 1;
    for (std::size_t i = 0; i < views; ++i)
        for (std::size_t j = 0; j < views; ++j) {
            const auto nn = knn_query(bank.queues[i], embeddings[j], k);
            record.votes.push_back(reduce_neighbors(nn, i, j));
        }
    tally_votes(record);
    return record;
}

/// Label -> slots index of one queue, for repeated sampling. Slots are
/// listed oldest first, so draws do not depend on the ring buffer layout.
class LabelIndex {
public:
    LabelIndex() = default;
    explicit LabelIndex(const LabeledQueue& queue) {
        for (std::size_t i = 0; i < queue.size(); ++i) {
            const std::size_t s = queue.slot(i);
            slots_[queue.slot_label(s)].push_back(s);
        }
    }
    std::span<const std::size_t> slots(int label) const {
        auto it = slots_.find(label);
        if (it == slots_.end()) return {};
        return it->second;
    }

private:
    std::map<int, std::vector<std::size_t>> slots_;
};

struct SemanticPositive {
    std::vector<double> embedding;
    /// True when the queue held no entry with the requested label and the
    /// caller's augmentation positive was returned instead.
    bool fallback = false;
};

/// Uniform draw among the queue entries carrying `label`.
inline SemanticPositive sample_semantic_positive(const LabeledQueue& queue, const LabelIndex& index, int label,
                                                 CounterRng& rng, std::span<const double> fallback) {
    const auto slots = index.slots(label);
    if (slots.empty()) return {std::vector<double>(fallback.begin(), fallback.end()), true};
    const auto e = queue.slot_embedding(slots[rng.below(slots.size())]);
    return {std::vector<double>(e.begin(), e.end()), false};
}

inline SemanticPositive sample_semantic_positive(const LabeledQueue& queue, int label, CounterRng& rng,
                                                 std::span<const double> fallback) {
    return sample_semantic_positive(queue, LabelIndex(queue), label, rng, fallback);
}

struct PseudoLabelOptions {
    std::size_t k = 1;
    bool voting = true;
    /// Replace predictions by ground truth (votes are still recorded).
    bool oracle = false;
};

struct PseudoLabels {
    /// pl(x) for every datum of the batch.
    std::vector<int> labels;
    /// One record per unlabelled datum.
    std::vector<VoteRecord> records;
};

/// pl(x) for a batch. `online` holds the online embeddings of each large
/// view ([B x p] each); `given[b]` is the label of labelled data;
/// `truth[b]`, if non-empty, is the ground truth for every datum.
inline PseudoLabels pseudo_label_batch(const QueueBank& bank, std::span<const ndgrad::Tensor> online,
                                       std::span<const std::optional<int>> given, std::span<const int> truth,
                                       const PseudoLabelOptions& options) {
    using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    if (online.size() != bank.num_views()) throw ContractError("pseudo-label: need one embedding matrix per large view");
    const std::size_t rows = given.size();
    if (options.oracle && truth.size() != rows) throw ContractError("pseudo-label: oracle mode needs ground truth");

    PseudoLabels out;
    out.labels.resize(rows);
    std::vector<std::size_t> unlabeled;
    for (std::size_t b = 0; b < rows; ++b) {
        if (given[b]) {
            out.labels[b] = *given[b];
        } else {
            unlabeled.push_back(b);
        }
    }
    if (unlabeled.empty()) return out;

    const std::size_t views = options.voting ? bank.num_views() : 1;
    const std::size_t dim = online[0].cols(), u = unlabeled.size();
    // Queries of every voting view stacked: row j * u + n is datum n, view j.
    Matrix queries(views * u, dim);
    for (std::size_t j = 0; j < views; ++j)
        for (std::size_t n = 0; n < u; ++n)
            for (std::size_t c = 0; c < dim; ++c) queries(j * u + n, c) = online[j].at(unlabeled[n], c);

    out.records.resize(u);
    for (std::size_t n = 0; n < u; ++n) {
        out.records[n].datum = unlabeled[n];
        if (!truth.empty()) out.records[n].truth = truth[unlabeled[n]];
    }
    Matrix scores;
    for (std::size_t i = 0; i < views; ++i) {
        const LabeledQueue& q = bank.queues[i];
        Eigen::Map<const Matrix> stored(q.slot_data(), static_cast<Eigen::Index>(q.size()), static_cast<Eigen::Index>(dim));
        scores.noalias() = queries * stored.transpose();
        for (std::size_t j = 0; j < views; ++j)
            for (std::size_t n = 0; n < u; ++n) {
                const auto row = static_cast<Eigen::Index>(j * u + n);
                const auto nn = top_k(q, std::span<const double>(scores.row(row).data(), q.size()), options.k);
                out.records[n].votes.push_back(reduce_neighbors(nn, i, j));
            }
    }
    for (std::size_t n = 0; n < u; ++n) {
        tally_votes(out.records[n]);
        out.labels[unlabeled[n]] = options.oracle ? truth[unlabeled[n]] : out.records[n].winner;
    }
    return out;
}

}  // namespace semppl::plqueue
