#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

#include "semppl/synthdata.hpp"

using namespace semppl;
using namespace semppl::synthdata;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& contents) {
    const auto path = std::filesystem::temp_directory_path() / ("semppl_test_" + name);
    std::ofstream(path) << contents;
    return path;
}

AugmentationSpec identity_augmentation() {
    AugmentationSpec a;
    a.noise_sigma = {0.0};
    a.mask_fraction = 0.0;
    a.scale_lo = a.scale_hi = 1.0;
    a.small_view_dims = 0;
    return a;
}

}  // namespace

TEST_CASE("generate_dataset with zero noise places every point on its mean", "[synthdata]") {
    DatasetSpec spec{3, 5, 4, 2.0, 0.0, 9};
    const Dataset ds = generate_dataset(spec);
    REQUIRE(ds.size() == 12);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto c = static_cast<std::size_t>(ds.labels[i]);
        for (std::size_t k = 0; k < spec.dim; ++k) CHECK(ds.point(i)[k] == ds.class_means[c * spec.dim + k]);
    }
}

TEST_CASE("generate_dataset is deterministic per seed and respects separation", "[synthdata]") {
    DatasetSpec spec;
    spec.samples_per_class = 20;
    const Dataset a = generate_dataset(spec), b = generate_dataset(spec);
    CHECK(a.features == b.features);
    CHECK(a.labels == b.labels);
    spec.seed = 1;
    CHECK(generate_dataset(spec).features != a.features);

    for (std::size_t i = 0; i < a.num_classes; ++i)
        for (std::size_t j = i + 1; j < a.num_classes; ++j) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < a.dim; ++k) {
                const double d = a.class_means[i * a.dim + k] - a.class_means[j * a.dim + k];
                d2 += d * d;
            }
            CHECK(std::sqrt(d2) >= spec.class_separation);
        }
}

TEST_CASE("well separated two-class data is perfectly 1-NN classifiable", "[synthdata]") {
    const Dataset ds = generate_dataset({2, 8, 100, 10.0, 0.1, 4});
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int label = -1;
        for (std::size_t j = 0; j < ds.size(); ++j) {
            if (i == j) continue;
            double d2 = 0.0;
            for (std::size_t k = 0; k < ds.dim; ++k) d2 += std::pow(ds.point(i)[k] - ds.point(j)[k], 2);
            if (d2 < best) {
                best = d2;
                label = ds.labels[j];
            }
        }
        correct += label == ds.labels[i];
    }
    CHECK(correct == ds.size());
}

TEST_CASE("unattainable separation raises a generation error", "[synthdata]") {
    CHECK_THROWS_AS(generate_dataset({50, 1, 2, 100.0, 1.0, 0}), SpecError);
    CHECK_THROWS_AS(generate_dataset({1, 4, 2, 1.0, 1.0, 0}), SpecError);
}

TEST_CASE("generate_holdout shares class means", "[synthdata]") {
    DatasetSpec spec;
    spec.samples_per_class = 5;
    const Dataset train = generate_dataset(spec), test = generate_holdout(spec, 3);
    CHECK(train.class_means == test.class_means);
    CHECK(test.size() == 30);
    CHECK(std::vector<double>(test.features.begin(), test.features.begin() + 32) !=
          std::vector<double>(train.features.begin(), train.features.begin() + 32));
}

TEST_CASE("split_labels", "[synthdata]") {
    const Dataset ds = generate_dataset({10, 4, 100, 1.0, 1.0, 2});

    SECTION("fraction 1 labels everything") {
        const auto s = split_labels(ds, 1.0, 0);
        CHECK(s.unlabeled.empty());
        CHECK(s.labeled.size() == 1000);
    }
    SECTION("ten percent of balanced classes gives ten per class") {
        const auto s = split_labels(ds, 0.10, 0);
        std::map<int, int> counts;
        for (auto i : s.labeled) ++counts[ds.labels[i]];
        REQUIRE(counts.size() == 10);
        for (auto [c, n] : counts) CHECK(n == 10);
        CHECK(s.labeled.size() + s.unlabeled.size() == ds.size());
        std::vector<bool> seen(ds.size(), false);
        for (auto i : s.labeled) seen[i] = true;
        for (auto i : s.unlabeled) {
            CHECK_FALSE(seen[i]);
            seen[i] = true;
        }
        CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
    }
    SECTION("infeasible fraction") {
        const Dataset small = generate_dataset({10, 4, 10, 1.0, 1.0, 2});
        CHECK_THROWS_AS(split_labels(small, 0.001, 0), SpecError);
    }
    SECTION("stratification differs by at most one across classes") {
        for (double f : {0.01, 0.03, 0.07, 0.25, 0.33}) {
            const auto s = split_labels(ds, f, 5);
            std::map<int, int> counts;
            for (auto i : s.labeled) ++counts[ds.labels[i]];
            int lo = 1 << 30, hi = 0;
            for (auto [c, n] : counts) {
                lo = std::min(lo, n);
                hi = std::max(hi, n);
            }
            CHECK(counts.size() == 10);
            CHECK(hi - lo <= 1);
        }
    }
}

TEST_CASE("make_views", "[synthdata]") {
    const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8};

    SECTION("identity augmentation returns x six times") {
        CounterRng rng(1);
        const ViewSet v = make_views(x, identity_augmentation(), rng);
        REQUIRE(v.large.size() == 4);
        REQUIRE(v.small.size() == 2);
        for (const auto& l : v.large) CHECK(l == x);
        for (const auto& s : v.small) CHECK(s == x);
    }
    SECTION("mask fraction 0.25 zeroes exactly two of eight coordinates") {
        AugmentationSpec a = identity_augmentation();
        a.mask_fraction = 0.25;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            CounterRng rng(seed);
            const ViewSet v = make_views(x, a, rng);
            for (const auto& l : v.large) CHECK(std::count(l.begin(), l.end(), 0.0) == 2);
        }
    }
    SECTION("small views keep exactly small_view_dims coordinates") {
        AugmentationSpec a = identity_augmentation();
        a.small_view_dims = 3;
        CounterRng rng(4);
        const ViewSet v = make_views(x, a, rng);
        for (const auto& s : v.small) CHECK(std::count(s.begin(), s.end(), 0.0) == 5);
    }
    SECTION("same stream gives the same views; outputs are finite") {
        AugmentationSpec a;
        const std::vector<double> y(32, 0.5);
        CounterRng r1(7), r2(7);
        const ViewSet v1 = make_views(y, a, r1), v2 = make_views(y, a, r2);
        CHECK(v1.large == v2.large);
        CHECK(v1.small == v2.small);
        for (const auto& l : v1.large)
            for (double z : l) CHECK(std::isfinite(z));
    }
    SECTION("invalid specs") {
        AugmentationSpec a;
        a.mask_fraction = 1.0;
        CounterRng rng(1);
        CHECK_THROWS_AS(make_views(x, a, rng), SpecError);
        a = AugmentationSpec{};
        a.small_view_dims = 9;
        CHECK_THROWS_AS(make_views(x, a, rng), SpecError);
    }
}

TEST_CASE("batch views depend only on (seed, epoch, batch, datum)", "[synthdata]") {
    DatasetSpec spec;
    spec.samples_per_class = 3;
    const Dataset ds = generate_dataset(spec);
    const AugmentationSpec aug;
    const std::vector<std::size_t> ab{3, 17}, ba{17, 3};
    const ViewBatch x = make_view_batch(ds, ab, aug, 1, 2, 3);
    const ViewBatch y = make_view_batch(ds, ba, aug, 1, 2, 3);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t k = 0; k < ds.dim; ++k) {
            CHECK(x.large[i].at(0, k) == y.large[i].at(1, k));
            CHECK(x.large[i].at(1, k) == y.large[i].at(0, k));
        }
    }
    const ViewBatch z = make_view_batch(ds, ab, aug, 1, 3, 3);
    CHECK(z.large[0].to_vector() != x.large[0].to_vector());
}

TEST_CASE("ingest_csv", "[synthdata]") {
    SECTION("labelled smoke case") {
        const auto p = write_temp("smoke.csv", "1.0,2.0,0\n3.0,4.0,1\n");
        const Dataset ds = ingest_csv(p.string());
        CHECK(ds.size() == 2);
        CHECK(ds.dim == 2);
        CHECK(ds.labels == std::vector<int>{0, 1});
        CHECK(ds.features == std::vector<double>{1, 2, 3, 4});
        CHECK(ds.num_classes == 2);
    }
    SECTION("ragged row names its index") {
        const auto p = write_temp("ragged.csv", "1,2\n3,4\n5,6,7\n");
        try {
            (void)ingest_csv(p.string(), {false, false});
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("row 3") != std::string::npos);
        }
    }
    SECTION("empty file") {
        const auto p = write_temp("empty.csv", "");
        CHECK_THROWS_AS(ingest_csv(p.string()), FormatError);
    }
    SECTION("header skipping and unlabeled rows") {
        const auto p = write_temp("header.csv", "a,b,c\n0.5,1.5,2.5\n");
        const Dataset ds = ingest_csv(p.string(), {false, true});
        CHECK(ds.dim == 3);
        CHECK_FALSE(ds.has_labels());
    }
    SECTION("bad number") {
        const auto p = write_temp("bad.csv", "1.0,x,0\n");
        CHECK_THROWS_AS(ingest_csv(p.string()), FormatError);
    }
}
