#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "offsetlab/tensor.hpp"

namespace offsetlab {

enum class PolicyKind { Adaptive, StaticInterval, BinaryThreshold, FullRecompute, PureReuse };

// Faithful always computes the fresh activation and interpolates, measuring
// quality effects only. Economic skips fresh computation when the weight is
// at or below skip_threshold, realizing actual savings.
enum class ExecutionMode { Faithful, Economic };

struct PolicyConfig {
    PolicyKind kind = PolicyKind::Adaptive;
    ExecutionMode mode = ExecutionMode::Faithful;
    double sensitivity = 1.0;        // scales score -> correction weight
    double spatial_weight = 1.0;     // weight of the spatial term in the offset score
    double skip_threshold = 0.05;    // Economic mode reuses when weight <= this
    int interval = 4;                // StaticInterval recompute period
    double binary_threshold = 0.5;   // score cutoff for the binary baseline
    int max_cache_age = 4;           // entries older than this count as stale
    bool normalize_scores = true;
    double ema_decay = 0.9;
    int refresh_interval = 0;        // 0 disables; else every Nth step forces full compute
    std::vector<int> eligible_layers;  // empty selects the default set

    bool operator==(const PolicyConfig&) const = default;
};

inline const char* policy_kind_name(PolicyKind k) {
    switch (k) {
        case PolicyKind::Adaptive: return "Adaptive";
        case PolicyKind::StaticInterval: return "StaticInterval";
        case PolicyKind::BinaryThreshold: return "BinaryThreshold";
        case PolicyKind::FullRecompute: return "FullRecompute";
        case PolicyKind::PureReuse: return "PureReuse";
    }
    return "?";
}

inline const char* mode_name(ExecutionMode m) {
    return m == ExecutionMode::Faithful ? "Faithful" : "Economic";
}

enum class ReuseAction { Reuse, BlendCompute, FullCompute };

inline const char* action_name(ReuseAction a) {
    switch (a) {
        case ReuseAction::Reuse: return "reuse";
        case ReuseAction::BlendCompute: return "blend";
        case ReuseAction::FullCompute: return "full";
    }
    return "?";
}

// weight is the fraction of fresh computation in the blend: 0 = pure reuse,
// 1 = full recompute.
struct ReuseDecision {
    ReuseAction action = ReuseAction::FullCompute;
    double weight = 1.0;
};

// clip(sensitivity * score, 0, 1); the +inf miss sentinel maps to 1 (full
// fresh compute) regardless of sensitivity.
inline double correction_weight(double score, double sensitivity) {
    if (sensitivity < 0.0) throw Error("BadSensitivity", "sensitivity must be >= 0");
    if (std::isinf(score)) return 1.0;
    if (score < 0.0) throw Error("BadWeight", "score must be >= 0");
    return clip_unit(sensitivity * score);
}

// Convex combination (1 - weight) * cached + weight * fresh. The endpoints
// return the inputs bit-exactly so endpoint-equivalence checks can compare
// images byte for byte.
inline Tensor3 blend(const Tensor3& cached, const Tensor3& fresh, double weight) {
    if (!cached.same_shape(fresh)) throw Error("ShapeMismatch", "blend shapes differ");
    if (!(weight >= 0.0 && weight <= 1.0)) {
        throw Error("BadWeight", "blend weight outside [0,1]");
    }
    if (weight == 0.0) return cached;
    if (weight == 1.0) return fresh;
    Tensor3 out = cached;
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = (1.0 - weight) * cached.data[i] + weight * fresh.data[i];
    }
    return out;
}

// Maps the computed weight plus cache state to an action. cache_age is empty
// when no valid entry exists. step is the position on the sampling axis the
// interval baseline cycles over (the timestep in single runs, the frame
// index in sequence runs).
inline ReuseDecision decide(const PolicyConfig& config, double weight, int step, int layer,
                            std::optional<int> cache_age) {
    (void)layer;
    if (!cache_age.has_value() || *cache_age > config.max_cache_age) {
        return {ReuseAction::FullCompute, 1.0};
    }
    switch (config.kind) {
        case PolicyKind::Adaptive:
            if (config.mode == ExecutionMode::Economic && weight <= config.skip_threshold) {
                return {ReuseAction::Reuse, weight};
            }
            return {ReuseAction::BlendCompute, weight};
        case PolicyKind::StaticInterval:
            if (step % config.interval != 0) return {ReuseAction::Reuse, 0.0};
            return {ReuseAction::FullCompute, 1.0};
        case PolicyKind::BinaryThreshold: {
            // Recover the score the weight was derived from by inverting the
            // clip scaling; saturates at 1/sensitivity once the clip binds.
            double score = config.sensitivity > 0.0 ? weight / config.sensitivity : 0.0;
            if (score < config.binary_threshold) return {ReuseAction::Reuse, 0.0};
            return {ReuseAction::FullCompute, 1.0};
        }
        case PolicyKind::FullRecompute:
            return {ReuseAction::FullCompute, 1.0};
        case PolicyKind::PureReuse:
            return {ReuseAction::Reuse, 0.0};
    }
    return {ReuseAction::FullCompute, 1.0};
}

}  // namespace offsetlab
