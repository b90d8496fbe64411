#include "testing.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

#include "pasta/diffusion.hpp"
#include "pasta/errors.hpp"

using namespace pasta;
using namespace pasta::diffusion;

namespace {

torch::Tensor randn64(std::vector<std::int64_t> shape, std::uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    return torch::randn(shape, gen, torch::kFloat64);
}

}  // namespace

TEST_CASE("cosine schedule invariants") {
    for (int T : {2, 4, 100, 1000}) {
        const auto s = build_cosine_schedule(T);
        REQUIRE(s.alpha_bar.size() == static_cast<std::size_t>(T + 1));
        CHECK(s.alpha_bar[0] == 1.0);
        CHECK(s.alpha_bar[T] < 1e-3);
        for (int t = 1; t <= T; ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        for (int t = 0; t <= T; ++t) {
            CHECK(s.alpha_bar[t] > 0.0);
            CHECK(std::abs(s.alpha[t] * s.alpha[t] + s.sigma[t] * s.sigma[t] - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("cosine schedule closed form at T=4") {
    // Reference values from a 40-digit evaluation of f(u)/f(0), f(u) = cos^2((u+s)/(1+s) pi/2).
    const auto s = build_cosine_schedule(4);
    CHECK(s.alpha_bar[1] == doctest::Approx(0.8470121613269047345).epsilon(1e-14));
    CHECK(s.alpha_bar[2] == doctest::Approx(0.4938435904406377133).epsilon(1e-14));
    CHECK(s.alpha_bar[3] == doctest::Approx(0.1442721023857357109).epsilon(1e-14));
    // The last step's beta hits the 0.999 clamp.
    CHECK(s.alpha_bar[4] == doctest::Approx(0.1442721023857357109 * 1e-3).epsilon(1e-12));
}

TEST_CASE("cosine schedule rejects bad arguments") {
    CHECK_THROWS_AS(build_cosine_schedule(0), ConfigError);
    CHECK_THROWS_AS(build_cosine_schedule(1), ConfigError);
    CHECK_THROWS_AS(build_cosine_schedule(10, 0.0), ConfigError);
    CHECK_THROWS_AS(build_cosine_schedule(10, 1.0), ConfigError);
}

TEST_CASE("forward diffusion") {
    const auto s = build_cosine_schedule(1000);
    const auto x0 = randn64({3, 4, 4}, 1);
    const auto eps = randn64({3, 4, 4}, 2);

    SUBCASE("t = 0 returns x0 bit-exactly") {
        auto n = forward_diffuse(x0, 0, eps, s);
        CHECK(torch::equal(n.x_t, x0));
        CHECK(n.t == 0);
    }
    SUBCASE("zero noise scales by alpha") {
        auto n = forward_diffuse(x0, 500, torch::zeros_like(x0), s);
        CHECK(torch::allclose(n.x_t, x0 * s.alpha[500], 0, 1e-15));
    }
    SUBCASE("round trip recovers x0") {
        for (int t : {1, 10, 500, 999, 1000}) {
            auto n = forward_diffuse(x0, t, eps, s);
            auto back = (n.x_t - s.sigma[t] * eps) / s.alpha[t];
            CHECK((back - x0).abs().max().item<double>() <= 1e-10);
        }
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(forward_diffuse(x0, 3, torch::zeros({2, 2}, torch::kFloat64), s), ContractViolation);
        CHECK_THROWS_AS(forward_diffuse(x0, 1001, eps, s), ContractViolation);
    }
}

TEST_CASE("forward diffusion at alpha_bar = 1/4") {
    DiffusionSchedule s;
    s.T = 1;
    s.alpha_bar = {1.0, 0.25};
    s.alpha = {1.0, 0.5};
    s.sigma = {0.0, std::sqrt(0.75)};
    const auto ones = torch::ones({2, 2}, torch::kFloat64);
    auto n = forward_diffuse(ones, 1, ones, s);
    CHECK(torch::allclose(n.x_t, ones * (0.5 + std::sqrt(0.75)), 0, 1e-15));
}

TEST_CASE("batched forward diffusion matches per-element") {
    const auto s = build_cosine_schedule(100);
    const auto x0 = randn64({3, 2, 4, 4}, 3);
    const auto eps = randn64({3, 2, 4, 4}, 4);
    const auto t = torch::tensor({0, 37, 100}, torch::kLong);
    auto xt = forward_diffuse_batch(x0, t, eps, s);
    for (int i = 0; i < 3; ++i) {
        auto ref = forward_diffuse(x0[i], static_cast<int>(t[i].item<std::int64_t>()), eps[i], s).x_t;
        CHECK(torch::allclose(xt[i], ref, 0, 1e-15));
    }
}

TEST_CASE("ddim step") {
    const auto s = build_cosine_schedule(1000);
    const auto x0 = randn64({2, 8, 8}, 5);
    const auto eps = randn64({2, 8, 8}, 6);
    const auto xt = forward_diffuse(x0, 700, eps, s).x_t;

    SUBCASE("implied noise inverts forward diffusion") {
        CHECK((implied_noise(xt, x0, 700, s) - eps).abs().max().item<double>() <= 1e-10);
    }
    SUBCASE("t_prev = 0 returns the prediction") {
        auto out = ddim_step(xt, x0, 700, 0, s);
        CHECK(torch::equal(out, x0));
    }
    SUBCASE("oracle step lands on the forward marginal") {
        auto out = ddim_step(xt, x0, 700, 300, s);
        auto expected = forward_diffuse(x0, 300, eps, s).x_t;
        CHECK((out - expected).abs().max().item<double>() <= 1e-10);
    }
    SUBCASE("contract checks") {
        CHECK_THROWS_AS(ddim_step(xt, x0, 300, 700, s), ContractViolation);
        CHECK_THROWS_AS(ddim_step(xt, x0, 700, 300, s, 0.5), ContractViolation);  // eta > 0 without a generator
        CHECK_THROWS_AS(ddim_step(xt, x0, 700, 300, s, 1.5), ConfigError);
    }
}

TEST_CASE("sampling timesteps") {
    auto ts = sampling_timesteps(1000, 50);
    REQUIRE(ts.size() == 51);
    CHECK(ts.front() == 1000);
    CHECK(ts.back() == 0);
    for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
    CHECK(sampling_timesteps(10, 10) == std::vector<int>{10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0});
    CHECK_THROWS_AS(sampling_timesteps(10, 11), ConfigError);
    CHECK_THROWS_AS(sampling_timesteps(10, 0), ConfigError);
}

TEST_CASE("oracle chain recovers x0 regardless of step count") {
    const auto s = build_cosine_schedule(1000);
    const auto x0 = torch::rand({16, 16}, at::make_generator<at::CPUGeneratorImpl>(7), torch::kFloat64);
    X0Predictor oracle = [&](const torch::Tensor& x, int) { return x0.to(x.scalar_type()); };
    ChainOptions opts;
    opts.seed = 11;
    opts.dtype = torch::kFloat64;
    torch::Tensor prev;
    for (int n : {1, 50, 1000}) {
        opts.n_steps = n;
        auto out = sample_chain(oracle, {16, 16}, s, opts);
        CHECK((out - x0).abs().max().item<double>() <= 1e-5);
        if (prev.defined()) CHECK((out - prev).abs().max().item<double>() <= 1e-5);
        prev = out;
    }
}

TEST_CASE("chain is deterministic per seed") {
    const auto s = build_cosine_schedule(100);
    // A predictor that depends on x_t, so the initial noise matters.
    X0Predictor shrink = [](const torch::Tensor& x, int t) { return x * (0.5 + 0.001 * t); };
    ChainOptions opts;
    opts.n_steps = 20;
    opts.seed = 3;
    auto a = sample_chain(shrink, {4, 4}, s, opts);
    auto b = sample_chain(shrink, {4, 4}, s, opts);
    CHECK(torch::equal(a, b));
    opts.seed = 4;
    CHECK_FALSE(torch::equal(a, sample_chain(shrink, {4, 4}, s, opts)));
    opts.eta = 0.5;
    auto c = sample_chain(shrink, {4, 4}, s, opts);
    CHECK(torch::equal(c, sample_chain(shrink, {4, 4}, s, opts)));
}

TEST_CASE("chain rejects predictor shape changes") {
    const auto s = build_cosine_schedule(10);
    X0Predictor bad = [](const torch::Tensor&, int) { return torch::zeros({3}); };
    ChainOptions opts;
    opts.n_steps = 5;
    CHECK_THROWS_AS(sample_chain(bad, {4, 4}, s, opts), ContractViolation);
}
