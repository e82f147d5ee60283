#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "offsetlab/offset.hpp"
#include "offsetlab/rng.hpp"

using namespace offsetlab;

namespace {

Tensor3 random_tensor(SplitMix64& rng, int b, int p, int d, double lo = -3.0, double hi = 3.0) {
    Tensor3 t(b, p, d);
    for (double& x : t.data) x = rng.next_in(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("temporal_deviation examples") {
    Tensor3 a(1, 1, 2);
    a.at(0, 0, 0) = 3.0;
    a.at(0, 0, 1) = 4.0;
    Tensor3 z(1, 1, 2);
    CHECK(temporal_deviation(a, a) == 0.0);
    CHECK(temporal_deviation(a, z) == Catch::Approx(5.0).epsilon(1e-15));

    Tensor3 c(1, 2, 1), p(1, 2, 1);
    c.at(0, 0, 0) = 1.0;
    c.at(0, 1, 0) = 3.0;
    CHECK(temporal_deviation(c, p) == Catch::Approx(2.0).epsilon(1e-15));

    Tensor3 bad(1, 3, 1);
    CHECK_THROWS_AS(temporal_deviation(c, bad), Error);
}

TEST_CASE("temporal_deviation symmetry and triangle property") {
    SplitMix64 rng(21);
    for (int it = 0; it < 30; ++it) {
        Tensor3 a = random_tensor(rng, 2, 3, 5);
        Tensor3 b = random_tensor(rng, 2, 3, 5);
        Tensor3 c = random_tensor(rng, 2, 3, 5);
        CHECK(temporal_deviation(a, b) == temporal_deviation(b, a));
        CHECK(temporal_deviation(a, c) <=
              temporal_deviation(a, b) + temporal_deviation(b, c) + 1e-12);
    }
}

TEST_CASE("spatial_variation examples") {
    Tensor3 constant(2, 3, 4);
    for (double& x : constant.data) x = 2.5;
    CHECK(spatial_variation(constant) == 0.0);

    Tensor3 single(1, 1, 2);
    single.at(0, 0, 0) = 0.0;
    single.at(0, 0, 1) = 2.0;
    CHECK(spatial_variation(single) == Catch::Approx(1.0).epsilon(1e-15));

    Tensor3 two(1, 2, 2);
    two.at(0, 0, 0) = 0.0;
    two.at(0, 0, 1) = 2.0;
    two.at(0, 1, 0) = 1.0;
    two.at(0, 1, 1) = 3.0;
    CHECK(spatial_variation(two) == Catch::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("spatial_variation per-token translation invariance") {
    SplitMix64 rng(22);
    Tensor3 t = random_tensor(rng, 2, 4, 6);
    Tensor3 shifted = t;
    for (int b = 0; b < t.batch; ++b) {
        for (int i = 0; i < t.patches; ++i) {
            double c = rng.next_in(-50.0, 50.0);
            for (int d = 0; d < t.channels; ++d) shifted.at(b, i, d) += c;
        }
    }
    CHECK(std::abs(spatial_variation(shifted) - spatial_variation(t)) < 1e-12);
}

TEST_CASE("patch_variation_map examples and mean identity") {
    Tensor3 constant(1, 4, 3);
    for (double& x : constant.data) x = 1.0;
    Matrix map = patch_variation_map(constant);
    for (double x : map.data) CHECK(x == 0.0);

    Tensor3 t(1, 2, 2);
    t.at(0, 0, 0) = 0.0;
    t.at(0, 0, 1) = 2.0;
    t.at(0, 1, 0) = 5.0;
    t.at(0, 1, 1) = 5.0;
    map = patch_variation_map(t);
    CHECK(map.at(0, 0) == Catch::Approx(1.0).epsilon(1e-15));
    CHECK(map.at(0, 1) == 0.0);

    SplitMix64 rng(23);
    for (int it = 0; it < 20; ++it) {
        Tensor3 r = random_tensor(rng, 2, 5, 7);
        Matrix m = patch_variation_map(r);
        double mean = 0.0;
        for (double x : m.data) mean += x;
        mean /= static_cast<double>(m.data.size());
        CHECK(std::abs(mean - spatial_variation(r)) < 1e-12);
    }
}

TEST_CASE("offset_score examples and monotonicity") {
    CHECK(offset_score(0.0, 0.0, 1.0) == 0.0);
    CHECK(offset_score(0.3, 0.4, 1.0) == Catch::Approx(0.7).epsilon(1e-15));
    CHECK(offset_score(0.3, 0.4, 0.5) == Catch::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(offset_score(0.1, 0.1, -0.5), Error);
    try {
        offset_score(0.1, 0.1, -0.5);
    } catch (const Error& e) {
        CHECK(e.code() == "BadWeight");
    }

    SplitMix64 rng(24);
    for (int it = 0; it < 50; ++it) {
        double t = rng.next_double(), s = rng.next_double(), w = rng.next_double();
        double dt = rng.next_double(), ds = rng.next_double();
        CHECK(offset_score(t + dt, s, w) >= offset_score(t, s, w));
        CHECK(offset_score(t, s + ds, w) >= offset_score(t, s, w));
    }
}

TEST_CASE("normalize_score ema behavior") {
    NormState st;
    st.decay = 0.9;
    auto [n0, st0] = normalize_score(5.0, st);
    CHECK(n0 == 1.0);
    CHECK(st0.ema == 5.0);
    CHECK(st0.count == 1);

    NormState cur;
    cur.decay = 0.9;
    for (int i = 0; i < 20; ++i) {
        auto [n, next] = normalize_score(3.0, cur);
        CHECK(n == Catch::Approx(1.0).epsilon(1e-12));
        cur = next;
    }

    // stream of ones followed by a 2: normalized = 2 / (0.9*1 + 0.1*2)
    NormState s2;
    s2.decay = 0.9;
    for (int i = 0; i < 10; ++i) s2 = normalize_score(1.0, s2).second;
    auto [nf, sf] = normalize_score(2.0, s2);
    CHECK(nf == Catch::Approx(2.0 / 1.1).epsilon(1e-12));
    CHECK(sf.ema == Catch::Approx(1.1).epsilon(1e-12));

    // an all-zero stream normalizes to zero, not a unit score
    NormState z;
    auto [nz, zz] = normalize_score(0.0, z);
    CHECK(nz == 0.0);
}

TEST_CASE("estimate_lipschitz on known maps") {
    auto identity = [](const Tensor3& t) { return t; };
    CHECK(estimate_lipschitz(identity, 1, 3, 4, 32, 0.1, 5) == Catch::Approx(1.0).margin(1e-9));

    auto doubling = [](const Tensor3& t) {
        Tensor3 out = t;
        for (double& x : out.data) x *= 2.0;
        return out;
    };
    CHECK(estimate_lipschitz(doubling, 1, 3, 4, 32, 0.1, 5) == Catch::Approx(2.0).margin(1e-9));

    auto constant = [](const Tensor3& t) {
        Tensor3 out(t.batch, t.patches, t.channels);
        for (double& x : out.data) x = 42.0;
        return out;
    };
    CHECK(estimate_lipschitz(constant, 1, 3, 4, 16, 0.1, 5) == 0.0);

    // deterministic given the seed
    auto a = estimate_lipschitz(identity, 2, 2, 3, 8, 0.25, 77);
    auto b = estimate_lipschitz(identity, 2, 2, 3, 8, 0.25, 77);
    CHECK(a == b);
}
