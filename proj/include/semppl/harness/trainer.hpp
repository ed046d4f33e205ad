#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "semppl/harness/config.hpp"
#include "semppl/harness/metrics.hpp"
#include "semppl/harness/probe.hpp"
#include "semppl/nets.hpp"
#include "semppl/objective.hpp"
#include "semppl/optim.hpp"
#include "semppl/plqueue.hpp"
#include "semppl/synthdata.hpp"

namespace semppl::harness {

/// FNV-1a over raw bytes.
class Fnv1a {
public:
    void update(const void* data, std::size_t size) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < size; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ULL;
        }
    }
    std::uint64_t value() const noexcept { return hash_; }
    void reset(std::uint64_t value) noexcept { hash_ = value; }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

/// Everything fixed by the configuration: the data and its label split.
struct RunData {
    synthdata::Dataset train;
    synthdata::Dataset holdout;
    synthdata::LabeledSplit split;
    /// Label per training datum when it belongs to the labelled part.
    std::vector<std::optional<int>> given;

    static RunData build(const TrainConfig& cfg) {
        synthdata::DatasetSpec spec = cfg.data;
        spec.seed = cfg.seed;
        RunData d;
        try {
            d.train = synthdata::generate_dataset(spec);
            d.holdout = synthdata::generate_holdout(spec, cfg.probe.holdout_per_class);
            d.split = synthdata::split_labels(d.train, cfg.label_fraction, cfg.seed);
        } catch (const SpecError& e) {
            throw ConfigError(e.what());
        }
        d.given.assign(d.train.size(), std::nullopt);
        for (std::size_t i : d.split.labeled) d.given[i] = d.train.labels[i];
        return d;
    }
};

/// Statistics accumulated over one epoch.
struct EpochStats {
    std::size_t steps = 0;
    double lr = 0.0;
    double loss_total = 0.0, loss_augm = 0.0, loss_sempos = 0.0, inv_augm = 0.0, inv_sempos = 0.0;
    std::vector<plqueue::VoteRecord> records;
    std::size_t fallbacks = 0;
    std::size_t enqueued = 0;
    std::size_t labeled_seen = 0;
    std::size_t semantic_total = 0;
    /// Semantic positives whose queue label equals the anchor's true label.
    std::size_t semantic_correct = 0;
};

/// A training run: networks, optimiser, queues and counters.
class Trainer {
public:
    explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        data_ = RunData::build(cfg_);
        pair_ = nets::build_networks(cfg_.encoder_spec(), cfg_.projector_spec(), cfg_.predictor_spec(), cfg_.seed,
                                     cfg_.ema_rate);
        bank_ = plqueue::QueueBank(cfg_.augment.num_large, cfg_.capacity(), cfg_.projector_output);
        std::vector<int> classes(data_.train.num_classes);
        for (std::size_t c = 0; c < classes.size(); ++c) classes[c] = static_cast<int>(c);
        plqueue::init_random(bank_, classes, cfg_.seed);
        steps_per_epoch_ = data_.train.size() / cfg_.batch_size;
        if (steps_per_epoch_ == 0) throw ConfigError("train.batch_size exceeds the dataset size");
    }

    const TrainConfig& config() const noexcept { return cfg_; }
    const RunData& data() const noexcept { return data_; }
    nets::NetworkPair& networks() noexcept { return pair_; }
    const nets::NetworkPair& networks() const noexcept { return pair_; }
    plqueue::QueueBank& bank() noexcept { return bank_; }
    const plqueue::QueueBank& bank() const noexcept { return bank_; }
    optim::LarsState& optimizer() noexcept { return lars_; }
    const optim::LarsState& optimizer() const noexcept { return lars_; }

    std::size_t epoch() const noexcept { return epoch_; }
    std::uint64_t step() const noexcept { return step_; }
    std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }
    std::uint64_t view_hash() const noexcept { return views_.value(); }
    bool finished() const noexcept { return epoch_ >= cfg_.epochs(); }

    /// Counters restored from a checkpoint.
    void restore_counters(std::size_t epoch, std::uint64_t step, std::uint64_t view_hash) {
        epoch_ = epoch;
        step_ = step;
        views_.reset(view_hash);
    }

    double peak_lr() const { return cfg_.optim.peak_lr(cfg_.batch_size); }
    double lr_at_step(std::uint64_t step) const {
        return optim::lr_at(static_cast<std::size_t>(step), steps_per_epoch_, cfg_.optim, peak_lr());
    }

    /// Runs one epoch over a fresh shuffle, dropping the final partial batch.
    EpochStats run_epoch() {
        EpochStats stats;
        std::vector<std::size_t> order(data_.train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        CounterRng shuffle = make_stream(cfg_.seed, StreamPurpose::epoch_shuffle, {epoch_});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
        for (std::size_t b = 0; b < steps_per_epoch_; ++b) {
            const std::span<const std::size_t> idx(order.data() + b * cfg_.batch_size, cfg_.batch_size);
            try {
                train_step(idx, b, stats);
            } catch (const Error& e) {
                throw Error("epoch " + std::to_string(epoch_) + ", step " + std::to_string(b) + ": " + e.what());
            }
        }
        const double n = static_cast<double>(stats.steps);
        stats.loss_total /= n;
        stats.loss_augm /= n;
        stats.loss_sempos /= n;
        stats.inv_augm /= n;
        stats.inv_sempos /= n;
        ++epoch_;
        return stats;
    }

    /// Metrics row for a finished epoch; probes run when `with_probes`.
    MetricsRow metrics_row(const EpochStats& s, bool with_probes) const {
        MetricsRow row;
        row.epoch = epoch_;
        row.lr = s.lr;
        row.loss_total = s.loss_total;
        row.loss_augm = s.loss_augm;
        row.loss_sempos = s.loss_sempos;
        row.inv_augm = s.inv_augm;
        row.inv_sempos = s.inv_sempos;
        const PrecisionRecall pr = pseudo_label_report(s.records);
        row.pl_accuracy = pr.accuracy;
        row.precision = pr.precision;
        row.recall = pr.recall;
        row.fallbacks = s.fallbacks;
        if (with_probes) {
            row.probe_linear = probe(ProbeMode::linear);
            row.probe_knn = probe(ProbeMode::knn);
        }
        return row;
    }

    double probe(ProbeMode mode) const {
        return evaluate_probe(pair_, data_.train, data_.holdout, mode, cfg_.probe);
    }

private:
    void train_step(std::span<const std::size_t> idx, std::size_t batch_index, EpochStats& stats) {
        const std::size_t rows = idx.size(), L = cfg_.augment.num_large, P = cfg_.loss.num_semantic;
        const std::size_t p = cfg_.projector_output;
        const synthdata::ViewBatch views =
            synthdata::make_view_batch(data_.train, idx, cfg_.augment, cfg_.seed, epoch_, batch_index);
        for (const auto* group : {&views.large, &views.small})
            for (const auto& v : *group) views_.update(v.values().data(), v.size() * sizeof(double));

        ndgrad::Tape tape;
        const nets::OnlineVars vars = nets::bind_online(pair_, tape);
        objective::ViewEmbeddings emb;
        for (const auto& v : views.large) emb.online_large.push_back(nets::forward_online(vars, v, nets::Mode::train));
        for (const auto& v : views.small) emb.online_small.push_back(nets::forward_online(vars, v, nets::Mode::train));
        for (const auto& v : views.large) emb.target_large.push_back(nets::forward_target(pair_, v, nets::Mode::train));

        std::vector<std::optional<int>> given(rows);
        std::vector<int> truth(rows);
        for (std::size_t b = 0; b < rows; ++b) {
            given[b] = data_.given[idx[b]];
            truth[b] = data_.train.labels[idx[b]];
        }
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t b = 0; b < rows; ++b)
                if (given[b]) {
                    plqueue::enqueue_labeled(bank_, i, emb.target_large[i].values().subspan(b * p, p), *given[b]);
                    ++stats.enqueued;
                }
        for (std::size_t b = 0; b < rows; ++b) stats.labeled_seen += given[b].has_value();

        std::vector<ndgrad::Tensor> queries;
        for (const auto& t : emb.online_large) queries.push_back(t.detach());
        plqueue::PseudoLabels pl =
            plqueue::pseudo_label_batch(bank_, queries, given, truth, {cfg_.knn_k, cfg_.voting, cfg_.oracle});
        for (auto& r : pl.records) {
            r.datum = idx[r.datum];
            stats.records.push_back(std::move(r));
        }

        std::size_t fallbacks = 0;
        if (P > 0) {
            CounterRng rng = make_stream(cfg_.seed, StreamPurpose::semantic_positives, {epoch_, batch_index});
            for (std::size_t j = 0; j < L; ++j) {
                const plqueue::LabeledQueue& q = bank_.queues[j];
                const plqueue::LabelIndex index(q);
                const auto target = emb.target_large[j].values();
                std::vector<double> sem;
                sem.reserve(rows * P * p);
                for (std::size_t b = 0; b < rows; ++b)
                    for (std::size_t s = 0; s < P; ++s) {
                        const auto slots = index.slots(pl.labels[b]);
                        if (slots.empty()) {
                            ++fallbacks;
                            ++stats.semantic_correct;
                            sem.insert(sem.end(), target.begin() + b * p, target.begin() + (b + 1) * p);
                        } else {
                            const std::size_t slot = slots[rng.below(slots.size())];
                            const auto e = q.slot_embedding(slot);
                            stats.semantic_correct += q.slot_label(slot) == truth[b];
                            sem.insert(sem.end(), e.begin(), e.end());
                        }
                        ++stats.semantic_total;
                    }
                emb.semantic.push_back(ndgrad::Tensor({rows, P, p}, std::move(sem)));
            }
        }

        CounterRng neg = make_stream(cfg_.seed, StreamPurpose::negatives, {epoch_, batch_index});
        for (std::size_t b = 0; b < rows; ++b)
            emb.negatives.push_back(objective::sample_negatives(rows, b, cfg_.loss.num_negatives, neg).indices);

        objective::LossBreakdown loss = objective::aggregate_views(emb, cfg_.loss_config());
        loss.fallback_count = fallbacks;
        const ndgrad::Gradients grads = tape.backward(loss.total);
        std::vector<ndgrad::Tensor> g;
        for (const auto& leaf : vars.leaves) g.push_back(grads.of(leaf));
        auto params = nets::online_parameters(pair_);
        const double lr = lr_at_step(step_);
        optim::lars_step(params, g, lr, cfg_.optim, lars_);
        nets::ema_update(pair_);

        ++step_;
        ++stats.steps;
        stats.lr = lr;
        stats.loss_total += loss.total.item();
        stats.loss_augm += loss.l_augm;
        stats.loss_sempos += loss.l_sempos;
        stats.inv_augm += loss.i_augm;
        stats.inv_sempos += loss.i_sempos;
        stats.fallbacks += fallbacks;
    }

    TrainConfig cfg_;
    RunData data_;
    nets::NetworkPair pair_;
    plqueue::QueueBank bank_;
    optim::LarsState lars_;
    std::size_t steps_per_epoch_ = 0;
    std::size_t epoch_ = 0;
    std::uint64_t step_ = 0;
    Fnv1a views_;
};

struct TrainResult {
    std::vector<MetricsRow> rows;
    /// Pseudo-label accuracy of each epoch.
    std::vector<double> pl_accuracy;
    double semantic_correctness = 1.0;
};

using EpochCallback = std::function<void(const Trainer&, const MetricsRow&, const EpochStats&)>;

/// Trains until the configured epoch count; probes run after the last epoch.
inline TrainResult train(Trainer& trainer, const EpochCallback& on_epoch = {}) {
    TrainResult result;
    std::size_t sem_total = 0, sem_correct = 0;
    while (!trainer.finished()) {
        const EpochStats stats = trainer.run_epoch();
        const MetricsRow row = trainer.metrics_row(stats, trainer.finished());
        sem_total += stats.semantic_total;
        sem_correct += stats.semantic_correct;
        result.rows.push_back(row);
        result.pl_accuracy.push_back(row.pl_accuracy);
        if (on_epoch) on_epoch(trainer, row, stats);
    }
    if (sem_total > 0) result.semantic_correctness = static_cast<double>(sem_correct) / static_cast<double>(sem_total);
    return result;
}

}  // namespace semppl::harness
