#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "offsetlab/tensor.hpp"

namespace offsetlab {

// Single slot per layer: the input seen at store time, the output produced
// from it, and when it was stored.
struct CacheEntry {
    int layer = 0;
    Tensor3 input;
    Tensor3 output;
    long stored_clock = 0;
};

struct CacheStats {
    long lookups = 0;
    long hits = 0;
    long misses = 0;
    long stale_evictions = 0;
    double reuse_weight_sum = 0.0;  // sum of (1 - weight) over eligible steps
    long eligible_steps = 0;
    long skip_count = 0;  // eligible steps whose weight was at or below the skip threshold

    bool operator==(const CacheStats&) const = default;
};

// Per-run activation cache. The clock argument decreases by one per sampling
// step (it is the timestep in a single run), so age = stored_clock - clock
// counts sampling steps elapsed.
class ActivationCache {
public:
    explicit ActivationCache(int layer_count)
        : slots_(static_cast<size_t>(layer_count)) {}

    int layer_count() const noexcept { return static_cast<int>(slots_.size()); }

    void put(int layer, Tensor3 input, Tensor3 output, long clock) {
        check_layer(layer);
        slots_[static_cast<size_t>(layer)] =
            CacheEntry{layer, std::move(input), std::move(output), clock};
    }

    struct Lookup {
        const CacheEntry* entry = nullptr;  // valid until the next put on that layer
        int age = 0;
    };

    // Returns the entry iff one exists with age <= max_age; stale entries
    // count as evictions and report a miss.
    std::optional<Lookup> get(int layer, long clock, int max_age) {
        check_layer(layer);
        stats.lookups += 1;
        const auto& slot = slots_[static_cast<size_t>(layer)];
        if (!slot.has_value()) {
            stats.misses += 1;
            return std::nullopt;
        }
        long age = slot->stored_clock - clock;
        if (age > max_age) {
            stats.misses += 1;
            stats.stale_evictions += 1;
            return std::nullopt;
        }
        stats.hits += 1;
        return Lookup{&*slot, static_cast<int>(age)};
    }

    void record_reuse(double weight, bool below_skip_threshold) {
        if (!(weight >= 0.0 && weight <= 1.0)) {
            throw Error("BadWeight", "recorded weight outside [0,1]");
        }
        stats.eligible_steps += 1;
        stats.reuse_weight_sum += 1.0 - weight;
        if (below_skip_threshold) stats.skip_count += 1;
    }

    // Mean reuse weight (1 - weight) over cache-eligible steps. Reduces to
    // the classical hit ratio when weights are binary.
    double hit_rate() const {
        if (stats.eligible_steps == 0) {
            throw Error("NoEligibleSteps", "hit_rate with no eligible steps");
        }
        return stats.reuse_weight_sum / static_cast<double>(stats.eligible_steps);
    }

    // Fraction of eligible steps at or below the skip threshold.
    double binary_hit_rate() const {
        if (stats.eligible_steps == 0) {
            throw Error("NoEligibleSteps", "binary_hit_rate with no eligible steps");
        }
        return static_cast<double>(stats.skip_count) /
               static_cast<double>(stats.eligible_steps);
    }

    size_t entry_count() const noexcept {
        size_t n = 0;
        for (const auto& s : slots_)
            if (s.has_value()) ++n;
        return n;
    }

    CacheStats stats;

private:
    void check_layer(int layer) const {
        if (layer < 0 || layer >= layer_count()) {
            throw Error("BadLayer", "cache layer " + std::to_string(layer) + " not below " +
                                        std::to_string(layer_count()));
        }
    }

    std::vector<std::optional<CacheEntry>> slots_;
};

}  // namespace offsetlab
