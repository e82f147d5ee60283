#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "offsetlab/engine.hpp"
#include "offsetlab/metrics.hpp"
#include "offsetlab/rng.hpp"

using namespace offsetlab;

namespace {

RunConfig small_config() {
    RunConfig cfg;
    cfg.timesteps = 8;
    cfg.layers = 4;
    cfg.channels = 8;
    cfg.patches = 4;
    cfg.patch_dim = 4;
    cfg.record_states = false;
    return cfg;
}

}  // namespace

TEST_CASE("mse examples") {
    Tensor3 a(1, 2, 2), b(1, 2, 2);
    CHECK(mse(a, b) == 0.0);
    for (double& x : b.data) x = 1.0;
    CHECK(mse(a, b) == 1.0);

    Tensor3 c(1, 1, 2), d(1, 1, 2);
    d.at(0, 0, 0) = 1.0;
    CHECK(mse(c, d) == 0.5);
    CHECK(mse(c, d) == mse(d, c));

    Tensor3 bad(1, 1, 3);
    CHECK_THROWS_AS(mse(c, bad), Error);
}

TEST_CASE("psnr examples") {
    Tensor3 a(1, 2, 2), b(1, 2, 2);
    CHECK(psnr(a, b, 1.0) == 99.0);
    for (double& x : b.data) x = 1.0;
    CHECK(psnr(a, b, 1.0) == Catch::Approx(0.0).margin(1e-12));
    CHECK(psnr_from_mse(0.01, 1.0) == Catch::Approx(20.0).epsilon(1e-12));
    CHECK(psnr(a, b, 1.0) == psnr(b, a, 1.0));

    // strictly decreasing in mse for fixed peak
    double prev = psnr_from_mse(1e-6, 1.0);
    for (double m : {1e-5, 1e-4, 1e-3, 1e-2, 1e-1}) {
        double cur = psnr_from_mse(m, 1.0);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("ssim self similarity and constants") {
    SplitMix64 rng(51);
    ImageGrid a(16, 16);
    for (double& p : a.pixels) p = rng.next_double();
    CHECK(ssim(a, a, 1.0) == 1.0);

    ImageGrid c1(8, 8), c2(8, 8);
    for (double& p : c1.pixels) p = 0.4;
    for (double& p : c2.pixels) p = 0.4;
    CHECK(ssim(c1, c2, 1.0) == 1.0);
}

TEST_CASE("ssim mean shift matches the closed form") {
    // constant images a = 0.25, b = 0.75: variances vanish, so
    // ssim = (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1)
    ImageGrid a(8, 8), b(8, 8);
    for (double& p : a.pixels) p = 0.25;
    for (double& p : b.pixels) p = 0.75;
    double c1 = 0.01 * 0.01;
    double expected = (2.0 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
    double got = ssim(a, b, 1.0);
    CHECK(std::abs(got - expected) < 1e-9);
    CHECK(got < 1.0);
    CHECK(got > 0.0);

    ImageGrid tiny(4, 4);
    CHECK_THROWS_AS(ssim(tiny, tiny, 1.0), Error);
    try {
        ssim(tiny, tiny, 1.0);
    } catch (const Error& e) {
        CHECK(e.code() == "ImageTooSmall");
    }
}

TEST_CASE("cost_summary on degenerate policies") {
    RunConfig cfg = small_config();
    cfg.policy.kind = PolicyKind::FullRecompute;
    RunTrace full = run_inference(cfg);
    CostSummary cs = cost_summary(full);
    CHECK(cs.eval_fraction == 1.0);
    CHECK(cs.mean_weight == 1.0);
    CHECK(cs.total_block_evals == cfg.layers * cfg.timesteps);
    CHECK(cs.predicted_fraction == 0.0);

    cfg.policy.kind = PolicyKind::PureReuse;
    RunTrace pure = run_inference(cfg);
    cs = cost_summary(pure);
    // warmup pass on eligible layers plus the always-computed boundary layers
    long eligible = static_cast<long>(pure.eligible_layers.size());
    long expected = (cfg.layers - eligible) * cfg.timesteps + eligible;
    CHECK(cs.total_block_evals == expected);

    cfg.policy.kind = PolicyKind::Adaptive;
    cfg.policy.mode = ExecutionMode::Faithful;
    RunTrace faithful = run_inference(cfg);
    cs = cost_summary(faithful);
    CHECK(cs.eval_fraction == 1.0);
    CHECK(cs.mean_weight < 1.0);
}

TEST_CASE("economic mode never costs more than faithful") {
    RunConfig cfg = small_config();
    cfg.policy.kind = PolicyKind::Adaptive;
    cfg.policy.mode = ExecutionMode::Faithful;
    long faithful = cost_summary(run_inference(cfg)).total_block_evals;
    cfg.policy.mode = ExecutionMode::Economic;
    long economic = cost_summary(run_inference(cfg)).total_block_evals;
    CHECK(economic <= faithful);
    CHECK(faithful <= static_cast<long>(cfg.layers) * cfg.timesteps);
}
