#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "semppl/optim.hpp"

using namespace semppl;
using namespace semppl::optim;
using ndgrad::Tensor;

namespace {

nets::ParamRef param(Tensor& t, bool bias = false, bool bn = false) { return {"p", &t, {bias, bn}}; }

}  // namespace

TEST_CASE("lr_at schedule", "[optim]") {
    LarsConfig cfg;
    cfg.warmup_epochs = 2;
    cfg.total_epochs = 10;
    const std::size_t spe = 7;
    const double peak = 1.5;
    CHECK(lr_at(0, spe, cfg, peak) == 0.0);
    CHECK(lr_at(7, spe, cfg, peak) == Catch::Approx(peak / 2).epsilon(1e-15));
    CHECK(lr_at(14, spe, cfg, peak) == Catch::Approx(peak).epsilon(1e-15));
    CHECK(lr_at(14 + 28, spe, cfg, peak) == Catch::Approx(peak / 2).epsilon(1e-12));
    CHECK(std::abs(lr_at(70, spe, cfg, peak)) <= 1e-12);
    // Continuity at the warmup boundary.
    const double before = peak * (14 - 1e-9) / 14.0;
    CHECK(std::abs(lr_at(14, spe, cfg, peak) - before) <= 1e-9);

    double prev = peak;
    for (std::size_t s = 14; s <= 70; ++s) {
        const double lr = lr_at(s, spe, cfg, peak);
        CHECK(lr <= prev + 1e-15);
        prev = lr;
    }
}

TEST_CASE("LarsConfig validation and scaling", "[optim]") {
    LarsConfig cfg;
    CHECK(cfg.peak_lr(256) == Catch::Approx(0.3));
    CHECK(cfg.peak_lr(512) == Catch::Approx(0.6));
    cfg.warmup_epochs = 200;
    CHECK_THROWS_AS(cfg.validate(), SpecError);
}

TEST_CASE("trust ratio", "[optim]") {
    CHECK(local_lr(1.0, 2.0, 1e-3) == Catch::Approx(5e-4).epsilon(1e-8));
    CHECK(local_lr(0.0, 2.0, 1e-3) == 1.0);
    CHECK(local_lr(1.0, 0.0, 1e-3) == 1.0);
}

TEST_CASE("lars_step on an adapted parameter", "[optim]") {
    LarsConfig cfg;
    cfg.weight_decay = 0.0;
    cfg.momentum = 0.9;
    Tensor w = Tensor::vector({0.6, 0.8});  // |w| = 1
    std::vector<nets::ParamRef> params{param(w)};
    const std::vector<Tensor> g{Tensor::vector({2.0, 0.0})};  // |g| = 2
    LarsState state;
    lars_step(params, g, 0.1, cfg, state);
    const double local = 1e-3 * 1.0 / (2.0 + 1e-9);
    CHECK(w[0] == Catch::Approx(0.6 - 0.1 * local * 2.0).epsilon(1e-14));
    CHECK(w[1] == 0.8);
    CHECK(state.momentum[0][0] == Catch::Approx(0.1 * local * 2.0).epsilon(1e-14));

    // Momentum carries over.
    const double m0 = state.momentum[0][0];
    const std::vector<Tensor> zero{Tensor::zeros({2})};
    const double w0 = w[0];
    lars_step(params, zero, 0.1, cfg, state);
    CHECK(w[0] == Catch::Approx(w0 - 0.9 * m0).epsilon(1e-14));
}

TEST_CASE("zero gradient and zero momentum leave only weight decay", "[optim]") {
    LarsConfig cfg;
    cfg.weight_decay = 1e-2;
    cfg.momentum = 0.0;
    Tensor w = Tensor::vector({3.0, 4.0});
    std::vector<nets::ParamRef> params{param(w)};
    LarsState state;
    lars_step(params, std::vector<Tensor>{Tensor::zeros({2})}, 0.5, cfg, state);
    // g' = wd * w, local = eta * |w| / |g'| = eta / wd
    const double local = 1e-3 * 5.0 / (1e-2 * 5.0 + 1e-9);
    CHECK(w[0] == Catch::Approx(3.0 - 0.5 * local * 1e-2 * 3.0).epsilon(1e-14));

    cfg.weight_decay = 0.0;
    Tensor v = Tensor::vector({3.0, 4.0});
    std::vector<nets::ParamRef> pv{param(v)};
    LarsState sv;
    lars_step(pv, std::vector<Tensor>{Tensor::zeros({2})}, 0.5, cfg, sv);
    CHECK(v.to_vector() == std::vector<double>{3.0, 4.0});
}

TEST_CASE("excluded parameters skip decay and adaptation", "[optim]") {
    LarsConfig cfg;
    cfg.weight_decay = 1e-6;
    for (auto [bias, bn] : {std::pair{true, false}, std::pair{false, true}}) {
        Tensor w = Tensor::vector({1.0, -2.0});
        std::vector<nets::ParamRef> params{param(w, bias, bn)};
        LarsState state;
        lars_step(params, std::vector<Tensor>{Tensor::zeros({2})}, 0.3, cfg, state);
        CHECK(w.to_vector() == std::vector<double>{1.0, -2.0});
    }
}

TEST_CASE("excluded parameter with no decay or momentum is plain gradient descent", "[optim][property]") {
    LarsConfig cfg;
    cfg.weight_decay = 0.0;
    cfg.momentum = 0.0;
    CounterRng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> wv(5), gv(5);
        for (double& x : wv) x = rng.normal();
        for (double& x : gv) x = rng.normal();
        Tensor w = Tensor::vector(wv);
        std::vector<nets::ParamRef> params{param(w, true)};
        LarsState state;
        const double lr = rng.uniform(0.0, 1.0);
        lars_step(params, std::vector<Tensor>{Tensor::vector(gv)}, lr, cfg, state);
        for (std::size_t k = 0; k < 5; ++k) REQUIRE(w[k] == wv[k] - lr * gv[k]);
    }
}

TEST_CASE("lars_step rejects misaligned gradients", "[optim]") {
    LarsConfig cfg;
    Tensor w = Tensor::vector({1.0, 2.0});
    std::vector<nets::ParamRef> params{param(w)};
    LarsState state;
    CHECK_THROWS_AS(lars_step(params, std::vector<Tensor>{Tensor::zeros({3})}, 0.1, cfg, state), DimensionError);
    CHECK_THROWS_AS(lars_step(params, std::vector<Tensor>{}, 0.1, cfg, state), DimensionError);
}

TEST_CASE("the optimizer never sees target parameters", "[optim]") {
    nets::NetworkPair pair = nets::build_networks({4, 8, 6}, {6, 8, 3}, {3, 8, 3}, 1);
    const auto online = nets::online_parameters(pair);
    for (const auto& p : online) CHECK(p.name.starts_with("online."));
    for (const auto& t : nets::target_parameters(pair))
        for (const auto& p : online) CHECK(t.value != p.value);
}
