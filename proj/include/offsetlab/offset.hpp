#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "offsetlab/rng.hpp"
#include "offsetlab/tensor.hpp"

namespace offsetlab {

inline constexpr double kScoreSentinel = std::numeric_limits<double>::infinity();

// Per-(layer, step) drift measurements. A cache miss leaves temporal and the
// scores at the +inf sentinel, which the correction weight maps to full
// fresh compute.
struct OffsetSignals {
    int layer = 0;
    int step = 0;
    double temporal = kScoreSentinel;
    double spatial = 0.0;
    double score_raw = kScoreSentinel;
    double score_used = kScoreSentinel;  // normalized when normalization is on, else raw
};

// Running per-layer EMA of raw scores. Owned by a single run; never shared.
struct NormState {
    double ema = 0.0;
    double decay = 0.9;
    long count = 0;
};

// Mean over tokens of the channel-wise L2 distance between two states.
inline double temporal_deviation(const Tensor3& cur, const Tensor3& prev) {
    if (!cur.same_shape(prev)) throw Error("ShapeMismatch", "temporal_deviation shapes differ");
    double acc = 0.0;
    std::vector<double> diff(static_cast<size_t>(cur.channels));
    for (int b = 0; b < cur.batch; ++b) {
        for (int i = 0; i < cur.patches; ++i) {
            auto a = cur.token(b, i);
            auto p = prev.token(b, i);
            for (int c = 0; c < cur.channels; ++c) diff[static_cast<size_t>(c)] = a[c] - p[c];
            acc += l2_norm(diff);
        }
    }
    return acc / (static_cast<double>(cur.batch) * static_cast<double>(cur.patches));
}

// Mean over tokens of the channel-wise standard deviation.
inline double spatial_variation(const Tensor3& h) {
    double acc = 0.0;
    for (int b = 0; b < h.batch; ++b) {
        for (int i = 0; i < h.patches; ++i) acc += std::sqrt(population_variance(h.token(b, i)));
    }
    return acc / (static_cast<double>(h.batch) * static_cast<double>(h.patches));
}

// Per-token dispersion before averaging; mean of the map equals
// spatial_variation. Row b of the result is the map for batch element b.
inline Matrix patch_variation_map(const Tensor3& h) {
    Matrix map(h.batch, h.patches);
    for (int b = 0; b < h.batch; ++b) {
        for (int i = 0; i < h.patches; ++i) {
            map.at(b, i) = std::sqrt(population_variance(h.token(b, i)));
        }
    }
    return map;
}

inline double offset_score(double temporal, double spatial, double spatial_weight) {
    if (spatial_weight < 0.0) throw Error("BadWeight", "spatial weight must be >= 0");
    return temporal + spatial_weight * spatial;
}

// EMA-relative normalization: returns raw / updated_ema, which is 1.0 on the
// first observation and for any constant stream. A zero score normalizes to
// zero.
inline std::pair<double, NormState> normalize_score(double raw, NormState state) {
    if (state.count == 0) {
        state.ema = raw;
    } else {
        state.ema = state.decay * state.ema + (1.0 - state.decay) * raw;
    }
    state.count += 1;
    double normalized = state.ema > 0.0 ? raw / state.ema : 0.0;
    return {normalized, state};
}

// Empirical lower bound on a block's Lipschitz constant: max over random
// probe pairs (h, h + delta) with ||delta|| = radius of the output/input
// change ratio. Deterministic given the seed.
inline double estimate_lipschitz(const std::function<Tensor3(const Tensor3&)>& block, int batch,
                                 int patches, int channels, int probe_count, double radius,
                                 uint64_t seed) {
    if (probe_count < 1) throw Error("BadConfig", "probe_count must be >= 1");
    if (radius <= 0.0) throw Error("BadConfig", "probe radius must be > 0");
    SplitMix64 rng(seed);
    double best = 0.0;
    for (int p = 0; p < probe_count; ++p) {
        Tensor3 h(batch, patches, channels);
        for (double& v : h.data) v = rng.next_in(-1.0, 1.0);
        Tensor3 delta(batch, patches, channels);
        for (double& v : delta.data) v = rng.next_in(-1.0, 1.0);
        double norm = frobenius_norm(delta);
        if (norm == 0.0) continue;
        double rescale = radius / norm;
        Tensor3 shifted = h;
        for (size_t i = 0; i < shifted.data.size(); ++i) {
            delta.data[i] *= rescale;
            shifted.data[i] += delta.data[i];
        }
        Tensor3 base_out = block(h);
        Tensor3 shift_out = block(shifted);
        double ratio = frobenius_norm(subtract(shift_out, base_out)) / frobenius_norm(delta);
        best = std::max(best, ratio);
    }
    return best;
}

}  // namespace offsetlab
