#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "semppl/ndgrad.hpp"
#include "semppl/rng.hpp"

using namespace semppl;
using namespace semppl::ndgrad;
using Catch::Approx;

namespace {

using oracles::random_tensor;

constexpr double kGradTolerance = 1e-4;
constexpr double kStep = 1e-5;

}  // namespace

TEST_CASE("matmul evaluates the matrix product", "[ndgrad]") {
    const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
    const Tensor b = Tensor::matrix(2, 2, {5, 6, 7, 8});
    CHECK(matmul(eye, b).to_vector() == std::vector<double>{5, 6, 7, 8});

    const Tensor row = Tensor::matrix(1, 2, {1, 2});
    const Tensor col = Tensor::matrix(2, 1, {3, 4});
    const Tensor r = matmul(row, col);
    CHECK(r.shape() == Shape{1, 1});
    CHECK(r[0] == 11.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions naming both shapes", "[ndgrad]") {
    const Tensor a = Tensor::zeros({2, 3});
    const Tensor b = Tensor::zeros({2, 3});
    try {
        (void)matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("l2_normalize", "[ndgrad]") {
    const Tensor v = l2_normalize(Tensor::vector({3, 4}));
    CHECK(v[0] == Approx(0.6).margin(1e-15));
    CHECK(v[1] == Approx(0.8).margin(1e-15));

    const Tensor unit = Tensor::vector({0.0, 1.0, 0.0});
    CHECK(l2_normalize(unit).to_vector() == unit.to_vector());

    CHECK_THROWS_AS(l2_normalize(Tensor::vector({0, 0})), DegenerateVectorError);

    CounterRng rng(11);
    const Tensor rows = l2_normalize(random_tensor({16, 7}, rng));
    for (std::size_t r = 0; r < 16; ++r) {
        double ss = 0.0;
        for (std::size_t c = 0; c < 7; ++c) ss += rows.at(r, c) * rows.at(r, c);
        CHECK(std::abs(std::sqrt(ss) - 1.0) <= 1e-12);
    }
}

TEST_CASE("batch_norm train and eval behaviour", "[ndgrad]") {
    const Tensor scale = Tensor::vector({1.0, 2.0});
    const Tensor shift = Tensor::vector({0.0, 0.5});

    SECTION("constant column maps to the shift") {
        const Tensor x = Tensor::matrix(3, 2, {1.0, 4.0, 2.0, 4.0, 3.0, 4.0});
        auto state = BatchNormState::identity(2);
        const Tensor y = batch_norm(x, scale, shift, &state, Mode::train);
        for (std::size_t r = 0; r < 3; ++r) CHECK(y.at(r, 1) == 0.5);
    }
    SECTION("unit-variance column is unchanged as epsilon goes to zero") {
        const Tensor x = Tensor::matrix(2, 1, {-1.0, 1.0});
        const Tensor y = batch_norm(x, Tensor::vector({1.0}), Tensor::vector({0.0}), nullptr, Mode::train,
                                    BatchNormOptions{1e-14, 0.9});
        CHECK(y[0] == Approx(-1.0).margin(1e-12));
        CHECK(y[1] == Approx(1.0).margin(1e-12));
    }
    SECTION("eval with identity statistics leaves input unchanged") {
        auto state = BatchNormState::identity(1);
        const Tensor x = Tensor::matrix(3, 1, {0.3, -2.0, 7.0});
        const Tensor y = batch_norm(x, Tensor::vector({1.0}), Tensor::vector({0.0}), &state, Mode::eval,
                                    BatchNormOptions{0.0, 0.9});
        CHECK(y.to_vector() == x.to_vector());
    }
    SECTION("train mode updates running moments with momentum 0.9") {
        auto state = BatchNormState::identity(1);
        const Tensor x = Tensor::matrix(2, 1, {1.0, 3.0});
        (void)batch_norm(x, Tensor::vector({1.0}), Tensor::vector({0.0}), &state, Mode::train);
        // batch mean 2, unbiased variance 2
        CHECK(state.running_mean[0] == Approx(0.9 * 0.0 + 0.1 * 2.0));
        CHECK(state.running_var[0] == Approx(0.9 * 1.0 + 0.1 * 2.0));
    }
    SECTION("train mode needs two rows") {
        auto state = BatchNormState::identity(2);
        CHECK_THROWS_AS(batch_norm(Tensor::zeros({1, 2}), scale, shift, &state, Mode::train), BatchTooSmallError);
    }
}

TEST_CASE("elementwise suite", "[ndgrad]") {
    CHECK(relu(Tensor::scalar(-2.0)).item() == 0.0);
    CHECK(relu(Tensor::scalar(3.0)).item() == 3.0);
    CHECK(dot_rows(Tensor::vector({0.6, 0.8}), Tensor::vector({0.6, 0.8})).item() == Approx(1.0).margin(1e-15));
    CHECK(log(exp(Tensor::scalar(1.5))).item() == Approx(1.5).margin(1e-15));
    CHECK(sum(Tensor::matrix(2, 2, {1, 2, 3, 4})).item() == 10.0);
    CHECK(mean(Tensor::matrix(2, 2, {1, 2, 3, 4})).item() == 2.5);
    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
    CHECK_THROWS_AS(sub(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
    CHECK_THROWS_AS(dot_rows(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})), DimensionError);
    CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), DimensionError);

    const Tensor withbias = add(Tensor::matrix(2, 2, {1, 2, 3, 4}), Tensor::vector({10, 20}));
    CHECK(withbias.to_vector() == std::vector<double>{11, 22, 13, 24});

    const Tensor ls = log_softmax(Tensor::matrix(1, 3, {1.0, 2.0, 3.0}));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(ls[0] == Approx(1.0 - std::log(z)).margin(1e-14));
}

TEST_CASE("backward computes leaf gradients and consumes the tape", "[ndgrad]") {
    Tape tape;
    const Tensor x = tape.variable(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    const Tensor loss = sum(x);
    const Gradients g = tape.backward(loss);
    CHECK(g.of(x).to_vector() == std::vector<double>(6, 1.0));
    CHECK(g.of(x).shape() == x.shape());

    Tape tape2;
    const Tensor v = tape2.variable(Tensor::vector({1.0, 2.0}));
    const Tensor sq = sum(mul(v, v));
    const Gradients g2 = tape2.backward(sq);
    CHECK(g2.of(v).to_vector() == std::vector<double>{2.0, 4.0});
    CHECK_THROWS_AS(tape2.backward(sq), StaleTapeError);
    CHECK_THROWS_AS(sum(v), StaleTapeError);

    Tape tape3;
    const Tensor w = tape3.variable(Tensor::vector({1.0, 2.0}));
    CHECK_THROWS_AS(tape3.backward(mul_scalar(w, 2.0)), RankError);
}

TEST_CASE("constants never appear in the gradient map", "[ndgrad]") {
    Tape tape;
    const Tensor w = tape.variable(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    const Tensor c = Tensor::matrix(2, 2, {1, 1, 1, 1});
    const Tensor loss = sum(matmul(w, c));
    const Gradients g = tape.backward(loss);
    CHECK(g.size() == 1);
    CHECK_FALSE(c.requires_grad());
}

TEST_CASE("finite_diff_check basics", "[ndgrad]") {
    CounterRng rng(3);
    const Tensor x = random_tensor({8}, rng);
    CHECK(finite_diff_check([](const Tensor& t) { return sum(mul(t, t)); }, x, kStep) <= kGradTolerance);
    CHECK(finite_diff_check([](const Tensor&) { return Tensor::scalar(4.0); }, x, kStep) == 0.0);
}

TEST_CASE("every differentiable op passes the finite-difference oracle", "[ndgrad][gradcheck]") {
    for (std::uint64_t trial = 0; trial < 5; ++trial)
        for (const auto& [name, err] : oracles::op_gradient_errors(100 + trial, kStep)) {
            INFO(name);
            CHECK(err <= kGradTolerance);
        }
}

TEST_CASE("forward results are bit-identical across repeated runs", "[ndgrad]") {
    auto run = [] {
        CounterRng rng(77);
        const Tensor a = random_tensor({32, 16}, rng);
        const Tensor w = random_tensor({16, 8}, rng);
        const Tensor s = Tensor::filled({8}, 1.0), t = Tensor::zeros({8});
        return l2_normalize(relu(batch_norm(matmul(a, w), s, t, nullptr, Mode::train))).to_vector();
    };
    CHECK(run() == run());
}
