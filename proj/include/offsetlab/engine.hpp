#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "offsetlab/cache.hpp"
#include "offsetlab/metrics.hpp"
#include "offsetlab/model.hpp"
#include "offsetlab/offset.hpp"
#include "offsetlab/policy.hpp"
#include "offsetlab/scene.hpp"
#include "offsetlab/trace.hpp"

namespace offsetlab {

// Boundary layers drift the least benefit from reuse in layer-wise
// diagnostics, so the default cacheable set is everything except the first
// and last layer. Fully overridable through PolicyConfig::eligible_layers.
inline std::vector<int> default_eligible_layers(int layer_count) {
    std::vector<int> out;
    for (int l = 1; l + 1 < layer_count; ++l) out.push_back(l);
    return out;
}

inline int exact_sqrt(int n) {
    int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    return r * r == n ? r : -1;
}

inline void validate_config(const RunConfig& c) {
    auto fail = [](const std::string& field, const std::string& why) {
        throw Error("BadConfig", field + ": " + why);
    };
    if (c.layers < 1) fail("model.layers", "must be >= 1");
    if (c.channels < 1) fail("model.channels", "must be >= 1");
    if (c.patches < 1) fail("model.patches", "must be >= 1");
    if (c.patch_dim < 1) fail("model.patch_dim", "must be >= 1");
    if (c.num_classes < 1) fail("model.num_classes", "must be >= 1");
    if (c.batch < 1) fail("model.batch", "must be >= 1");
    if (c.timesteps < 2) fail("model.timesteps", "must be >= 2");
    if (!(c.weight_scale > 0.0) || !std::isfinite(c.weight_scale)) {
        fail("model.weight_scale", "must be a positive finite value");
    }
    if (c.label < 0 || c.label >= c.num_classes) fail("run.label", "must be below num_classes");
    if (!(c.step_size >= 0.0) || !std::isfinite(c.step_size)) {
        fail("run.step_size", "must be a nonnegative finite value");
    }
    const PolicyConfig& p = c.policy;
    if (p.sensitivity < 0.0) fail("policy.gamma", "must be >= 0");
    if (p.spatial_weight < 0.0) fail("policy.lambda_spatial", "must be >= 0");
    if (!(p.skip_threshold >= 0.0 && p.skip_threshold <= 1.0)) {
        fail("policy.skip_threshold", "must be in [0,1]");
    }
    if (p.interval < 1) fail("policy.interval", "must be >= 1");
    if (p.binary_threshold < 0.0) fail("policy.binary_threshold", "must be >= 0");
    if (p.max_cache_age < 1) fail("policy.tau_max", "must be >= 1");
    if (!(p.ema_decay > 0.0 && p.ema_decay < 1.0)) fail("policy.ema_decay", "must be in (0,1)");
    if (p.refresh_interval < 0) fail("policy.refresh_interval", "must be >= 0");
    for (int l : p.eligible_layers) {
        if (l < 0 || l >= c.layers) fail("policy.eligible_layers", "layer index out of range");
    }
    if (c.scene.has_value()) {
        const SceneSpec& s = *c.scene;
        if (s.height < 1) fail("scene.height", "must be >= 1");
        if (s.width < 1) fail("scene.width", "must be >= 1");
        if (s.frames < 2) fail("scene.frames", "must be >= 2");
        for (const Blob& b : s.blobs) {
            if (!(b.radius > 0.0)) fail("scene.blobs", "radius must be > 0");
        }
        int side = exact_sqrt(c.patch_dim);
        if (side < 1) fail("model.patch_dim", "must be a perfect square in scene mode");
        if (s.height % side != 0) fail("scene.height", "must be divisible by the patch side");
        if (s.width % side != 0) fail("scene.width", "must be divisible by the patch side");
        if ((s.height / side) * (s.width / side) != c.patches) {
            fail("scene.height", "scene does not tile into model.patches patches");
        }
    }
}

namespace detail {

struct Sampler {
    RunConfig config;
    ModelWeights weights;
    ActivationCache cache;
    std::vector<NormState> norm;
    std::vector<bool> eligible_mask;
    std::vector<int> eligible;
    long step_counter = 0;

    explicit Sampler(const RunConfig& c)
        : config(c),
          weights(init_weights(c.weights_seed, c.layers, c.channels, c.patches, c.patch_dim,
                               c.timesteps, c.num_classes)),
          cache(c.layers),
          norm(static_cast<size_t>(c.layers)),
          eligible_mask(static_cast<size_t>(c.layers), false) {
        if (c.weight_scale != 1.0) scale_weights(weights, c.weight_scale);
        eligible = c.policy.eligible_layers.empty() ? default_eligible_layers(c.layers)
                                                    : c.policy.eligible_layers;
        for (int l : eligible) eligible_mask[static_cast<size_t>(l)] = true;
        for (auto& n : norm) n.decay = c.policy.ema_decay;
    }

    // Clock decreases by one per sampling step; equals the timestep in a
    // single run and keeps decreasing across frames in sequence mode.
    long clock() const noexcept { return static_cast<long>(config.timesteps - 1) - step_counter; }

    Tensor3 process_layer(const Tensor3& h, int layer, int timestep, int policy_step, int frame,
                          std::vector<TraceRecord>& records) {
        const PolicyConfig& pol = config.policy;
        TraceRecord rec;
        rec.frame = frame;
        rec.step_index = step_counter;
        rec.timestep = timestep;
        rec.layer = layer;
        rec.eligible = eligible_mask[static_cast<size_t>(layer)];
        rec.signals.layer = layer;
        rec.signals.step = policy_step;
        rec.signals.spatial = spatial_variation(h);

        std::optional<ActivationCache::Lookup> hit;
        if (rec.eligible) hit = cache.get(layer, clock(), pol.max_cache_age);

        double weight = 1.0;
        std::optional<int> age;
        if (hit.has_value()) {
            rec.cache_hit = true;
            rec.cache_age = hit->age;
            age = hit->age;
            rec.signals.temporal = temporal_deviation(h, hit->entry->input);
            rec.signals.score_raw =
                offset_score(rec.signals.temporal, rec.signals.spatial, pol.spatial_weight);
            if (pol.normalize_scores) {
                auto [normalized, next] =
                    normalize_score(rec.signals.score_raw, norm[static_cast<size_t>(layer)]);
                norm[static_cast<size_t>(layer)] = next;
                rec.signals.score_used = normalized;
            } else {
                rec.signals.score_used = rec.signals.score_raw;
            }
            weight = correction_weight(rec.signals.score_used, pol.sensitivity);
        } else {
            weight = correction_weight(kScoreSentinel, pol.sensitivity);
        }

        rec.forced_refresh =
            pol.refresh_interval > 0 && step_counter % pol.refresh_interval == 0;
        ReuseDecision decision = rec.forced_refresh
                                     ? ReuseDecision{ReuseAction::FullCompute, 1.0}
                                     : decide(pol, weight, policy_step, layer, age);
        rec.action = decision.action;
        rec.weight = decision.weight;

        Tensor3 out;
        switch (decision.action) {
            case ReuseAction::FullCompute: {
                out = block_forward(h, layer, timestep, weights);
                rec.block_evals = 1;
                break;
            }
            case ReuseAction::BlendCompute: {
                Tensor3 fresh = block_forward(h, layer, timestep, weights);
                out = blend(hit->entry->output, fresh, decision.weight);
                rec.block_evals = 1;
                rec.has_blend_devs = true;
                rec.dev_fresh_blend = frobenius_norm(subtract(fresh, out));
                rec.dev_fresh_cached = frobenius_norm(subtract(fresh, hit->entry->output));
                break;
            }
            case ReuseAction::Reuse: {
                out = hit->entry->output;
                rec.block_evals = 0;
                break;
            }
        }

        cache.put(layer, h, out, clock());
        if (rec.eligible) {
            cache.record_reuse(decision.weight, decision.weight <= pol.skip_threshold);
        }
        if (config.record_states) rec.output_state = out;
        records.push_back(std::move(rec));
        return out;
    }

    // One full forward pass: embed, all layers, decode.
    Tensor3 evaluate(const Tensor3& x, int timestep, int policy_step, int frame,
                     RunTrace& trace, bool keep_image) {
        auto start = std::chrono::steady_clock::now();
        Tensor3 h = embed(LatentState{x, timestep}, config.label, weights);
        for (int layer = 0; layer < config.layers; ++layer) {
            h = process_layer(h, layer, timestep, policy_step, frame, trace.records);
        }
        Tensor3 image = decode(h, weights);
        StepTrace st;
        st.frame = frame;
        st.step_index = step_counter;
        st.timestep = timestep;
        st.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                               start)
                         .count();
        if (keep_image) {
            st.image = image;
            const Matrix map = patch_variation_map(h);
            st.patch_variation.assign(map.data.begin(), map.data.end());
        }
        trace.wall_ms_total += st.wall_ms;
        trace.steps.push_back(std::move(st));
        step_counter += 1;
        return image;
    }
};

inline Tensor3 initial_latent(const RunConfig& c) {
    Tensor3 x(c.batch, c.patches, c.patch_dim);
    SplitMix64 rng(c.latent_seed);
    for (double& v : x.data) v = rng.next_in(-1.0, 1.0);
    return x;
}

}  // namespace detail

// Runs the full denoising loop: one forward pass per timestep from T-1 down
// to 0 with a scheduler update between passes. Per layer and step the cache
// is consulted, drift signals computed against the stored input, the policy
// decides reuse/blend/full, and the cache slot is refreshed with the
// produced output. Deterministic given the config.
inline RunTrace run_inference(const RunConfig& config) {
    validate_config(config);
    detail::Sampler sampler(config);
    RunTrace trace;
    trace.config = config;
    trace.eligible_layers = sampler.eligible;

    LatentState state{detail::initial_latent(config), config.timesteps - 1};
    for (int step = 0; step < config.timesteps; ++step) {
        bool last = state.t == 0;
        Tensor3 eps = sampler.evaluate(state.x, state.t, state.t, 0, trace,
                                       config.trace_images || last);
        if (last) {
            trace.final_image = std::move(eps);
            break;
        }
        state = scheduler_step(state, eps, config.step_size);
    }
    trace.cache_stats = sampler.cache.stats;
    return trace;
}

// The fidelity oracle: identical workload with the policy forced to
// FullRecompute.
inline RunTrace run_reference(const RunConfig& config) {
    RunConfig ref = config;
    ref.policy.kind = PolicyKind::FullRecompute;
    return run_inference(ref);
}

// Long-horizon temporal stress: one forward evaluation per scene frame at a
// fixed timestep, with cache state carried across frames so the frame axis
// is the sampling axis. A static scene therefore produces zero temporal
// deviation from the second frame on. The interval baseline cycles over the
// frame index.
inline std::vector<RunTrace> run_sequence(const RunConfig& config, const SceneSpec& scene) {
    RunConfig cfg = config;
    cfg.scene = scene;
    validate_config(cfg);
    detail::Sampler sampler(cfg);
    int side = exact_sqrt(cfg.patch_dim);
    int fixed_t = cfg.timesteps - 1;

    std::vector<RunTrace> traces;
    traces.reserve(static_cast<size_t>(scene.frames));
    for (int frame = 0; frame < scene.frames; ++frame) {
        RunTrace trace;
        trace.config = cfg;
        trace.eligible_layers = sampler.eligible;
        Tensor3 x = patchify(synthetic_scene(scene, frame), side);
        bool keep_image = cfg.trace_images || frame + 1 == scene.frames;
        trace.final_image = sampler.evaluate(x, fixed_t, frame, frame, trace, keep_image);
        trace.cache_stats = sampler.cache.stats;
        traces.push_back(std::move(trace));
    }
    return traces;
}

inline std::vector<double> estimate_layer_lipschitz(const RunConfig& config,
                                                    int probe_count = 64, double radius = 0.1) {
    validate_config(config);
    ModelWeights weights =
        init_weights(config.weights_seed, config.layers, config.channels, config.patches,
                     config.patch_dim, config.timesteps, config.num_classes);
    if (config.weight_scale != 1.0) scale_weights(weights, config.weight_scale);
    int probe_t = config.timesteps / 2;
    std::vector<double> out;
    out.reserve(static_cast<size_t>(config.layers));
    for (int layer = 0; layer < config.layers; ++layer) {
        auto block = [&weights, layer, probe_t](const Tensor3& h) {
            return block_forward(h, layer, probe_t, weights);
        };
        out.push_back(estimate_lipschitz(block, config.batch, config.patches, config.channels,
                                         probe_count, radius,
                                         config.weights_seed + 1000003ULL * (layer + 1)));
    }
    return out;
}

// Deviation diagnostics of a corrected run against its full-recompute
// reference. The bound slack uses the empirical Lipschitz lower bound, so a
// negative slack flags the estimate, not an arithmetic failure; likewise the
// stale-reuse displacement bound is measured, never asserted.
struct ErrorReport {
    std::vector<double> step_mse;
    std::vector<double> step_psnr;
    double final_mse = 0.0;
    double final_psnr = 0.0;
    std::optional<double> final_ssim;
    std::optional<double> hidden_dev_mean;
    std::optional<double> hidden_dev_max;
    std::vector<double> layer_hidden_dev_mean;
    std::vector<double> hidden_dev_per_record;  // aligned with the test trace's records
    std::optional<double> prop1_max_rel_err;
    std::optional<double> prop1_bound_min_slack;
    std::optional<double> prop1_bound_satisfaction;
    std::optional<double> eq4_satisfaction_rate;
    std::vector<double> lipschitz_per_layer;
    long compared_state_records = 0;
    long blend_records = 0;
    long hit_records = 0;
};

inline ErrorReport compare_runs(const RunTrace& test, const RunTrace& ref,
                                const std::vector<double>* lipschitz = nullptr) {
    if (!test.config.same_workload(ref.config)) {
        throw Error("IncomparableRuns", "traces come from different workloads");
    }
    ErrorReport report;

    report.final_mse = mse(test.final_image, ref.final_image);
    report.final_psnr = psnr_from_mse(report.final_mse, 1.0);
    int grid_cols = exact_sqrt(test.config.patches);
    int patch_side = exact_sqrt(test.config.patch_dim);
    if (grid_cols > 0 && patch_side > 0 && grid_cols * patch_side >= 8) {
        double acc = 0.0;
        for (int b = 0; b < test.final_image.batch; ++b) {
            acc += ssim(unpatchify(test.final_image, b, grid_cols, patch_side),
                        unpatchify(ref.final_image, b, grid_cols, patch_side), 1.0);
        }
        report.final_ssim = acc / test.final_image.batch;
    }

    size_t steps = std::min(test.steps.size(), ref.steps.size());
    for (size_t s = 0; s < steps; ++s) {
        if (test.steps[s].image.has_value() && ref.steps[s].image.has_value() &&
            test.steps[s].step_index == ref.steps[s].step_index) {
            double m = mse(*test.steps[s].image, *ref.steps[s].image);
            report.step_mse.push_back(m);
            report.step_psnr.push_back(psnr_from_mse(m, 1.0));
        }
    }

    report.lipschitz_per_layer =
        lipschitz != nullptr ? *lipschitz : estimate_layer_lipschitz(test.config);

    size_t records = std::min(test.records.size(), ref.records.size());
    double dev_sum = 0.0;
    double dev_max = 0.0;
    std::vector<double> layer_sum(static_cast<size_t>(test.config.layers), 0.0);
    std::vector<long> layer_n(static_cast<size_t>(test.config.layers), 0);
    double prop1_max = 0.0;
    double slack_min = std::numeric_limits<double>::infinity();
    long slack_ok = 0;
    long eq4_ok = 0;
    for (size_t i = 0; i < records; ++i) {
        const TraceRecord& tr = test.records[i];
        const TraceRecord& rr = ref.records[i];
        if (tr.output_state.has_value() && rr.output_state.has_value() &&
            tr.layer == rr.layer && tr.step_index == rr.step_index) {
            double dev = frobenius_norm(subtract(*tr.output_state, *rr.output_state));
            report.hidden_dev_per_record.push_back(dev);
            dev_sum += dev;
            dev_max = std::max(dev_max, dev);
            layer_sum[static_cast<size_t>(tr.layer)] += dev;
            layer_n[static_cast<size_t>(tr.layer)] += 1;
            report.compared_state_records += 1;
        }
        if (tr.has_blend_devs) {
            report.blend_records += 1;
            double expected = (1.0 - tr.weight) * tr.dev_fresh_cached;
            double rel = expected > 0.0 ? std::abs(tr.dev_fresh_blend - expected) / expected
                                        : std::abs(tr.dev_fresh_blend - expected);
            prop1_max = std::max(prop1_max, rel);
            double bound = (1.0 - tr.weight) *
                           report.lipschitz_per_layer[static_cast<size_t>(tr.layer)] *
                           tr.cache_age * tr.signals.score_raw;
            double slack = bound - tr.dev_fresh_blend;
            slack_min = std::min(slack_min, slack);
            if (slack >= 0.0) slack_ok += 1;
        }
        if (tr.cache_hit) {
            report.hit_records += 1;
            if (tr.signals.temporal <= tr.cache_age * tr.signals.score_raw) eq4_ok += 1;
        }
    }
    if (report.compared_state_records > 0) {
        report.hidden_dev_mean = dev_sum / static_cast<double>(report.compared_state_records);
        report.hidden_dev_max = dev_max;
        report.layer_hidden_dev_mean.resize(layer_sum.size(), 0.0);
        for (size_t l = 0; l < layer_sum.size(); ++l) {
            report.layer_hidden_dev_mean[l] =
                layer_n[l] > 0 ? layer_sum[l] / static_cast<double>(layer_n[l]) : 0.0;
        }
    }
    if (report.blend_records > 0) {
        report.prop1_max_rel_err = prop1_max;
        report.prop1_bound_min_slack = slack_min;
        report.prop1_bound_satisfaction =
            static_cast<double>(slack_ok) / static_cast<double>(report.blend_records);
    }
    if (report.hit_records > 0) {
        report.eq4_satisfaction_rate =
            static_cast<double>(eq4_ok) / static_cast<double>(report.hit_records);
    }
    return report;
}

// Combines per-frame comparisons of a sequence run into one report. The
// aggregate image error is the mean of per-frame final MSEs.
inline ErrorReport merge_reports(const std::vector<ErrorReport>& parts) {
    if (parts.empty()) throw Error("BadConfig", "merge_reports needs at least one part");
    ErrorReport out;
    out.lipschitz_per_layer = parts.front().lipschitz_per_layer;
    double mse_sum = 0.0;
    double ssim_sum = 0.0;
    bool all_ssim = true;
    double dev_sum = 0.0, dev_max = 0.0;
    double prop1_max = 0.0;
    double slack_min = std::numeric_limits<double>::infinity();
    double slack_ok_weighted = 0.0, eq4_ok_weighted = 0.0;
    std::vector<double> layer_sum;
    std::vector<long> layer_count;
    for (const ErrorReport& p : parts) {
        mse_sum += p.final_mse;
        out.step_mse.push_back(p.final_mse);
        out.step_psnr.push_back(p.final_psnr);
        if (p.final_ssim.has_value()) {
            ssim_sum += *p.final_ssim;
        } else {
            all_ssim = false;
        }
        if (p.hidden_dev_mean.has_value()) {
            dev_sum += *p.hidden_dev_mean * static_cast<double>(p.compared_state_records);
            dev_max = std::max(dev_max, *p.hidden_dev_max);
        }
        if (layer_sum.empty()) {
            layer_sum.assign(p.layer_hidden_dev_mean.size(), 0.0);
            layer_count.assign(p.layer_hidden_dev_mean.size(), 0);
        }
        for (size_t l = 0; l < p.layer_hidden_dev_mean.size(); ++l) {
            layer_sum[l] += p.layer_hidden_dev_mean[l];
            layer_count[l] += 1;
        }
        out.hidden_dev_per_record.insert(out.hidden_dev_per_record.end(),
                                         p.hidden_dev_per_record.begin(),
                                         p.hidden_dev_per_record.end());
        out.compared_state_records += p.compared_state_records;
        out.blend_records += p.blend_records;
        out.hit_records += p.hit_records;
        if (p.prop1_max_rel_err.has_value()) {
            prop1_max = std::max(prop1_max, *p.prop1_max_rel_err);
            slack_min = std::min(slack_min, *p.prop1_bound_min_slack);
            slack_ok_weighted += *p.prop1_bound_satisfaction * static_cast<double>(p.blend_records);
        }
        if (p.eq4_satisfaction_rate.has_value()) {
            eq4_ok_weighted += *p.eq4_satisfaction_rate * static_cast<double>(p.hit_records);
        }
    }
    out.final_mse = mse_sum / static_cast<double>(parts.size());
    out.final_psnr = psnr_from_mse(out.final_mse, 1.0);
    if (all_ssim) out.final_ssim = ssim_sum / static_cast<double>(parts.size());
    if (out.compared_state_records > 0) {
        out.hidden_dev_mean = dev_sum / static_cast<double>(out.compared_state_records);
        out.hidden_dev_max = dev_max;
        out.layer_hidden_dev_mean.resize(layer_sum.size());
        for (size_t l = 0; l < layer_sum.size(); ++l) {
            out.layer_hidden_dev_mean[l] =
                layer_count[l] > 0 ? layer_sum[l] / static_cast<double>(layer_count[l]) : 0.0;
        }
    }
    if (out.blend_records > 0) {
        out.prop1_max_rel_err = prop1_max;
        out.prop1_bound_min_slack = slack_min;
        out.prop1_bound_satisfaction = slack_ok_weighted / static_cast<double>(out.blend_records);
    }
    if (out.hit_records > 0) {
        out.eq4_satisfaction_rate = eq4_ok_weighted / static_cast<double>(out.hit_records);
    }
    return out;
}

}  // namespace offsetlab
