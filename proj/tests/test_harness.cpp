#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "semppl/harness/checkpoint.hpp"
#include "semppl/harness/experiments.hpp"
#include "semppl/harness/report.hpp"

using namespace semppl;
using namespace semppl::harness;
using plqueue::VoteRecord;

namespace {

TrainConfig smoke(std::size_t epochs = 3) {
    TrainConfig cfg = load_config("smoke");
    cfg.optim.total_epochs = epochs;
    cfg.optim.warmup_epochs = std::min(cfg.optim.warmup_epochs, epochs);
    return cfg;
}

VoteRecord record(int winner, std::size_t count, int truth) {
    VoteRecord r;
    r.winner = winner;
    r.winner_count = count;
    r.truth = truth;
    return r;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("semppl_test_" + name)).string();
}

synthdata::Dataset only_class(const synthdata::Dataset& ds, int label) {
    synthdata::Dataset out;
    out.dim = ds.dim;
    out.num_classes = ds.num_classes;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.labels[i] != label) continue;
        const auto p = ds.point(i);
        out.features.insert(out.features.end(), p.begin(), p.end());
        out.labels.push_back(label);
    }
    return out;
}

}  // namespace

TEST_CASE("config text round-trips and accepts overrides", "[harness][config]") {
    TrainConfig cfg = smoke();
    apply_setting(cfg, "loss.alpha", "0.5");
    apply_setting(cfg, "augment.noise_sigma", "0.25,0.75");
    apply_setting(cfg, "train.voting", "false");
    const std::string text = to_ini(cfg);
    const TrainConfig back = parse_ini(text);
    CHECK(to_ini(back) == text);
    CHECK(back.loss.alpha == 0.5);
    CHECK_FALSE(back.voting);
    CHECK(get_setting(back, "augment.noise_sigma") == get_setting(cfg, "augment.noise_sigma"));

    CHECK(parse_ini("[train]\nbatch_size = 16\n", cfg).batch_size == 16);
    CHECK_THROWS_AS(apply_setting(cfg, "train.nope", "1"), ConfigError);
    CHECK_THROWS_AS(apply_setting(cfg, "train.batch_size", "many"), ConfigError);
    CHECK_THROWS_AS(parse_ini("[train\nk = 1\n"), ConfigError);
}

TEST_CASE("queue capacity defaults to 20 B", "[harness][config]") {
    TrainConfig cfg;
    CHECK(cfg.capacity() == 20 * cfg.batch_size);
    cfg.queue_capacity = 77;
    CHECK(cfg.capacity() == 77);
}

TEST_CASE("missing config file names its path", "[harness][config]") {
    try {
        load_config("/nonexistent/dir/base.ini");
        FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("/nonexistent/dir/base.ini") != std::string::npos);
    }
}

TEST_CASE("pseudo_label_report examples", "[harness][report]") {
    SECTION("three records at threshold 10") {
        const std::vector<VoteRecord> recs = {record(0, 16, 0), record(1, 9, 2), record(3, 9, 3)};
        const PrecisionRecall pr = pseudo_label_report(recs);
        CHECK(pr.precision[10] == 1.0);
        CHECK(pr.recall[10] == Catch::Approx(1.0 / 3.0).epsilon(1e-15));
        CHECK_FALSE(pr.empty[10]);
        CHECK(pr.precision[9] == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
    }
    SECTION("unanimous and correct") {
        const std::vector<VoteRecord> recs = {record(1, 16, 1), record(2, 16, 2)};
        const PrecisionRecall pr = pseudo_label_report(recs);
        for (std::size_t t = 0; t <= kMaxThreshold; ++t) {
            CHECK(pr.precision[t] == 1.0);
            CHECK(pr.recall[t] == 1.0);
        }
    }
    SECTION("empty selection has precision 1 and is flagged") {
        const std::vector<VoteRecord> recs = {record(1, 4, 0)};
        const PrecisionRecall pr = pseudo_label_report(recs);
        CHECK(pr.empty[5]);
        CHECK(pr.precision[5] == 1.0);
        CHECK(pr.recall[5] == 0.0);
    }
    SECTION("missing ground truth is a contract error") {
        std::vector<VoteRecord> recs(1);
        CHECK_THROWS_AS(pseudo_label_report(recs), ContractError);
    }
}

TEST_CASE("report properties over random records", "[harness][report][property]") {
    CounterRng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<VoteRecord> recs(1 + rng.below(40));
        for (auto& r : recs) r = record(static_cast<int>(rng.below(3)), 1 + rng.below(16), static_cast<int>(rng.below(3)));
        const PrecisionRecall pr = pseudo_label_report(recs);
        CHECK(pr.recall[0] == pr.accuracy);
        for (std::size_t t = 0; t <= kMaxThreshold; ++t) {
            CHECK(pr.precision[t] >= 0.0);
            CHECK(pr.precision[t] <= 1.0);
            if (t > 0) CHECK(pr.recall[t] <= pr.recall[t - 1]);
        }
    }
}

TEST_CASE("metrics CSV has the fixed schema and round-trips", "[harness][metrics]") {
    const std::string header = metrics_header();
    CHECK(header.rfind("epoch,lr,loss_total,loss_augm,loss_sempos,inv_augm,inv_sempos,pl_accuracy,precision_t0,", 0) == 0);
    CHECK(header.find("precision_t16,recall_t0,") != std::string::npos);
    CHECK(header.ends_with(",recall_t16,fallbacks,probe_linear,probe_knn"));
    std::size_t commas = 0;
    for (char c : header) commas += c == ',';
    CHECK(commas + 1 == 8 + 2 * 17 + 3);

    MetricsRow a;
    a.epoch = 3;
    a.lr = 0.1 / 3.0;
    a.loss_total = 1.0 / 7.0;
    a.precision[4] = 0.875;
    a.recall[2] = 0.25;
    a.fallbacks = 2;
    MetricsRow b = a;
    b.probe_linear = 0.5;
    const std::vector<MetricsRow> rows = {a, b};
    const std::string path = temp_path("metrics.csv");
    write_metrics_csv(path, rows);
    const auto back = read_metrics_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(metrics_csv(back) == metrics_csv(rows));
    CHECK(std::isnan(back[0].probe_linear));
    CHECK(back[1].probe_linear == 0.5);
    std::filesystem::remove(path);
}

TEST_CASE("zero epochs leaves the run at its initialization", "[harness][train]") {
    Trainer fresh(smoke(0));
    Trainer run(smoke(0));
    const RunOutcome out = run_to_end(run);
    CHECK(out.rows.empty());
    CHECK(serialize_checkpoint(run) == serialize_checkpoint(fresh));
}

TEST_CASE("identical seeds give byte-identical metrics", "[harness][train][determinism]") {
    const auto a = run_config(smoke()), b = run_config(smoke());
    CHECK(metrics_csv(a.rows) == metrics_csv(b.rows));
    TrainConfig other = smoke();
    other.seed = 99;
    CHECK(metrics_csv(run_config(other).rows) != metrics_csv(a.rows));
}

TEST_CASE("queues grow by four entries per labelled example", "[harness][train]") {
    Trainer t(smoke(2));
    while (!t.finished()) {
        const std::uint64_t before = t.bank().queues[0].counter();
        const EpochStats s = t.run_epoch();
        CHECK(s.enqueued == t.config().augment.num_large * s.labeled_seen);
        for (const auto& q : t.bank().queues) CHECK(q.counter() - before == s.labeled_seen);
        CHECK(s.records.size() + s.labeled_seen == s.steps * t.config().batch_size);
    }
}

TEST_CASE("checkpoints round-trip and resume bit-exactly", "[harness][checkpoint]") {
    Trainer straight(smoke(3));
    const TrainResult full = train(straight);

    Trainer first(smoke(3));
    std::vector<MetricsRow> rows;
    {
        const EpochStats s = first.run_epoch();
        rows.push_back(first.metrics_row(s, first.finished()));
    }
    const std::string path = temp_path("resume.sppl");
    save_checkpoint(first, path);
    Trainer resumed = load_checkpoint(path);
    CHECK(serialize_checkpoint(resumed) == serialize_checkpoint(first));
    const TrainResult rest = train(resumed);
    rows.insert(rows.end(), rest.rows.begin(), rest.rows.end());

    CHECK(metrics_csv(rows) == metrics_csv(full.rows));
    CHECK(serialize_checkpoint(resumed) == serialize_checkpoint(straight));
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint integrity errors", "[harness][checkpoint]") {
    Trainer t(smoke(1));
    t.run_epoch();
    const std::string bytes = serialize_checkpoint(t);

    SECTION("corrupted byte") {
        for (std::size_t at : {std::size_t{9}, bytes.size() / 2, bytes.size() - 10}) {
            std::string bad = bytes;
            bad[at] = static_cast<char>(bad[at] ^ 0x40);
            CHECK_THROWS_AS(deserialize_checkpoint(bad), ChecksumError);
        }
    }
    SECTION("future version") {
        std::string future = bytes.substr(0, bytes.size() - 4);
        future[4] = 2;
        boost::crc_32_type crc;
        crc.process_bytes(future.data(), future.size());
        const std::uint32_t c = crc.checksum();
        for (int i = 0; i < 4; ++i) future.push_back(static_cast<char>((c >> (8 * i)) & 0xff));
        CHECK_THROWS_AS(deserialize_checkpoint(future), VersionError);
    }
    SECTION("truncation") {
        CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, 7)), FormatError);
        CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)), FormatError);
    }
    SECTION("layout starts with magic and version 1") {
        CHECK(bytes.substr(0, 4) == "SPPL");
        CHECK(bytes[4] == 1);
        CHECK(bytes[5] == 0);
    }
}

TEST_CASE("probe on a one-class dataset is perfect", "[harness][probe]") {
    synthdata::DatasetSpec spec;
    spec.num_classes = 2;
    spec.dim = 8;
    spec.samples_per_class = 30;
    const auto train_ds = only_class(synthdata::generate_dataset(spec), 1);
    const auto test_ds = only_class(synthdata::generate_holdout(spec, 10), 1);
    const Trainer t(smoke(0));
    CHECK(evaluate_probe(t.networks(), train_ds, test_ds, ProbeMode::linear, t.config().probe) == 1.0);
    CHECK(evaluate_probe(t.networks(), train_ds, test_ds, ProbeMode::knn, t.config().probe) == 1.0);
}

TEST_CASE("probing leaves the encoder untouched", "[harness][probe]") {
    Trainer t(smoke(1));
    t.run_epoch();
    const std::string before = serialize_checkpoint(t);
    t.probe(ProbeMode::linear);
    t.probe(ProbeMode::knn);
    CHECK(serialize_checkpoint(t) == before);
}

TEST_CASE("untrained encoder probe lies in the sanity band", "[harness][probe]") {
    // Ten overlapping classes, so a random encoder is neither at chance nor at the ceiling.
    TrainConfig cfg;
    cfg.optim.total_epochs = 0;
    cfg.optim.warmup_epochs = 0;
    cfg.data.samples_per_class = 100;
    cfg.data.class_separation = 0.5;
    cfg.probe.holdout_per_class = 50;
    cfg.batch_size = 64;
    Trainer t(cfg);
    for (ProbeMode mode : {ProbeMode::linear, ProbeMode::knn}) {
        const double acc = t.probe(mode);
        CHECK(acc >= 0.05);
        CHECK(acc <= 0.60);
    }
}

TEST_CASE("oracle runs use ground truth and the same views", "[harness][oracle]") {
    const OracleReport r = run_oracle(smoke(2));
    CHECK(r.paired);
    CHECK(r.oracle.semantic_correctness == 1.0);
    CHECK(r.standard.semantic_correctness <= 1.0);
}

TEST_CASE("voting disabled casts exactly one vote", "[harness][voting]") {
    TrainConfig cfg = smoke(1);
    cfg.voting = false;
    Trainer t(cfg);
    const EpochStats s = t.run_epoch();
    REQUIRE_FALSE(s.records.empty());
    for (const auto& r : s.records) {
        REQUIRE(r.votes.size() == 1);
        CHECK(r.votes[0].queue_view == 0);
        CHECK(r.votes[0].query_view == 0);
        CHECK(r.winner_count == 1);
    }
    Trainer on(smoke(1));
    for (const auto& r : on.run_epoch().records) CHECK(r.votes.size() == 16);
}

TEST_CASE("ablation grids", "[harness][ablation]") {
    SECTION("empty dimension is named") {
        try {
            parse_grid_dimension("k=");
            FAIL("expected a ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("'k'") != std::string::npos);
        }
        try {
            grid_cells({{"loss.alpha", {}}});
            FAIL("expected a ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("loss.alpha") != std::string::npos);
        }
        CHECK_THROWS_AS(grid_cells({}), ConfigError);
    }
    SECTION("aliases and cartesian product") {
        const auto k = parse_grid_dimension("k=1,2,3,5,10");
        CHECK(k.key == "train.k");
        CHECK(k.values == std::vector<std::string>{"1", "2", "3", "5", "10"});
        CHECK(parse_grid_dimension("C=64").key == "train.queue_capacity");
        CHECK(parse_grid_dimension("alpha=0").key == "loss.alpha");
        CHECK_THROWS_AS(parse_grid_dimension("bogus=1"), ConfigError);
        const auto cells = grid_cells({k, parse_grid_dimension("voting=true,false")});
        REQUIRE(cells.size() == 10);
        CHECK(cells[1] == std::vector<std::pair<std::string, std::string>>{{"train.k", "1"}, {"train.voting", "false"}});
    }
    SECTION("one row per cell") {
        const auto rows = run_ablation(smoke(1), {parse_grid_dimension("voting=true,false")});
        REQUIRE(rows.size() == 2);
        const std::string csv = ablation_csv(rows);
        CHECK(csv.rfind("train.voting,probe_linear,", 0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    }
}

TEST_CASE("charts and summary documents", "[harness][report]") {
    const RunOutcome out = run_config(smoke(2));
    const auto charts = metrics_charts(out.rows);
    REQUIRE(charts.size() == 3);
    for (const auto& [name, svg] : charts) {
        CHECK(svg.rfind("<svg", 0) == 0);
        CHECK(svg.find("<polyline") != std::string::npos);
    }
    const auto doc = nlohmann::json::parse(run_summary_document(smoke(2), out.summary));
    CHECK(doc["summary"]["epochs"] == 2);
    CHECK(doc["summary"]["final_precision"].size() == kMaxThreshold + 1);
    CHECK(parse_ini(doc["config"].get<std::string>()).epochs() == 2);
}
