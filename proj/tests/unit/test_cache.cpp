#include <catch2/catch_amalgamated.hpp>

#include "offsetlab/cache.hpp"

using namespace offsetlab;

namespace {

Tensor3 filled(int b, int p, int d, double value) {
    Tensor3 t(b, p, d);
    for (double& x : t.data) x = value;
    return t;
}

}  // namespace

TEST_CASE("put then get round trip with age") {
    ActivationCache cache(8);
    cache.put(3, filled(1, 2, 2, 1.0), filled(1, 2, 2, 2.0), 10);
    auto hit = cache.get(3, 9, 4);
    REQUIRE(hit.has_value());
    CHECK(hit->age == 1);
    CHECK(hit->entry->input.data[0] == 1.0);
    CHECK(hit->entry->output.data[0] == 2.0);
    CHECK(cache.stats.lookups == 1);
    CHECK(cache.stats.hits == 1);
}

TEST_CASE("second put wins and layers are isolated") {
    ActivationCache cache(8);
    cache.put(3, filled(1, 1, 1, 1.0), filled(1, 1, 1, 1.0), 10);
    cache.put(3, filled(1, 1, 1, 5.0), filled(1, 1, 1, 6.0), 9);
    auto hit = cache.get(3, 9, 4);
    REQUIRE(hit.has_value());
    CHECK(hit->entry->input.data[0] == 5.0);
    CHECK(hit->age == 0);
    CHECK(cache.entry_count() == 1);

    CHECK_FALSE(cache.get(5, 9, 4).has_value());
    CHECK(cache.stats.misses == 1);
}

TEST_CASE("empty store misses") {
    ActivationCache cache(4);
    CHECK_FALSE(cache.get(0, 10, 4).has_value());
    CHECK(cache.stats.lookups == 1);
    CHECK(cache.stats.hits + cache.stats.misses == cache.stats.lookups);
}

TEST_CASE("stale entries evict and report miss") {
    ActivationCache cache(4);
    cache.put(1, filled(1, 1, 1, 1.0), filled(1, 1, 1, 1.0), 10);
    auto ok = cache.get(1, 9, 4);
    CHECK(ok.has_value());
    auto stale = cache.get(1, 5, 4);
    CHECK_FALSE(stale.has_value());
    CHECK(cache.stats.stale_evictions == 1);
    auto edge = cache.get(1, 6, 4);
    REQUIRE(edge.has_value());
    CHECK(edge->age == 4);
}

TEST_CASE("reuse accounting") {
    ActivationCache cache(2);
    cache.record_reuse(0.0, true);
    CHECK(cache.stats.reuse_weight_sum == 1.0);
    cache.record_reuse(1.0, false);
    CHECK(cache.stats.reuse_weight_sum == 1.0);
    cache.record_reuse(0.3, false);
    cache.record_reuse(0.3, false);
    CHECK(cache.stats.reuse_weight_sum == Catch::Approx(2.4).epsilon(1e-15));
    CHECK(cache.stats.eligible_steps == 4);
    CHECK(cache.stats.skip_count == 1);
    CHECK(cache.stats.reuse_weight_sum <= static_cast<double>(cache.stats.eligible_steps));
    CHECK_THROWS_AS(cache.record_reuse(1.5, false), Error);
}

TEST_CASE("hit_rate examples") {
    ActivationCache all_reuse(2);
    for (int i = 0; i < 5; ++i) all_reuse.record_reuse(0.0, true);
    CHECK(all_reuse.hit_rate() == 1.0);

    ActivationCache all_fresh(2);
    for (int i = 0; i < 5; ++i) all_fresh.record_reuse(1.0, false);
    CHECK(all_fresh.hit_rate() == 0.0);

    ActivationCache mixed(2);
    mixed.record_reuse(0.0, true);
    mixed.record_reuse(1.0, false);
    mixed.record_reuse(0.5, false);
    mixed.record_reuse(0.5, false);
    CHECK(mixed.hit_rate() == Catch::Approx(0.5).epsilon(1e-15));

    ActivationCache empty(2);
    CHECK_THROWS_AS(empty.hit_rate(), Error);
    try {
        empty.hit_rate();
    } catch (const Error& e) {
        CHECK(e.code() == "NoEligibleSteps");
    }
}

TEST_CASE("store capacity is one slot per layer") {
    ActivationCache cache(3);
    for (int step = 0; step < 10; ++step) {
        for (int l = 0; l < 3; ++l) {
            cache.put(l, filled(1, 1, 1, step), filled(1, 1, 1, step), 20 - step);
        }
        CHECK(cache.entry_count() <= 3);
    }
    CHECK(cache.entry_count() == 3);
    CHECK_THROWS_AS(cache.put(7, filled(1, 1, 1, 0), filled(1, 1, 1, 0), 0), Error);
}
