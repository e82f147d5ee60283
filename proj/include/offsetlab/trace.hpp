#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "offsetlab/cache.hpp"
#include "offsetlab/offset.hpp"
#include "offsetlab/policy.hpp"
#include "offsetlab/scene.hpp"
#include "offsetlab/tensor.hpp"

namespace offsetlab {

// Everything that determines a run byte-for-byte. All randomness flows from
// weights_seed and latent_seed.
struct RunConfig {
    // model
    uint64_t weights_seed = 7;
    int layers = 8;
    int channels = 32;
    int patches = 16;
    int patch_dim = 16;
    int timesteps = 50;
    int num_classes = 10;
    int batch = 1;
    double weight_scale = 1.0;
    // run
    uint64_t latent_seed = 7;
    int label = 0;
    double step_size = 0.1;
    bool trace_images = false;   // decode and keep the image at every step, not just the last
    bool record_states = true;   // keep per-record output states for cross-run comparison
    PolicyConfig policy;
    std::optional<SceneSpec> scene;  // present -> sequence mode

    bool operator==(const RunConfig&) const = default;

    bool same_workload(const RunConfig& o) const {
        bool scenes_match = scene.has_value() == o.scene.has_value();
        if (scenes_match && scene.has_value()) {
            scenes_match = scene->height == o.scene->height && scene->width == o.scene->width &&
                           scene->frames == o.scene->frames && scene->seed == o.scene->seed &&
                           scene->velocity_row == o.scene->velocity_row &&
                           scene->velocity_col == o.scene->velocity_col &&
                           scene->blobs.size() == o.scene->blobs.size();
        }
        return weights_seed == o.weights_seed && layers == o.layers && channels == o.channels &&
               patches == o.patches && patch_dim == o.patch_dim && timesteps == o.timesteps &&
               num_classes == o.num_classes && batch == o.batch &&
               weight_scale == o.weight_scale && latent_seed == o.latent_seed &&
               label == o.label && step_size == o.step_size && scenes_match;
    }
};

// One (layer, step) event. dev_fresh_blend and dev_fresh_cached hold
// Frobenius norms of (fresh - output) and (fresh - cached) and are only
// meaningful for blend records.
struct TraceRecord {
    int frame = 0;
    long step_index = 0;  // global position on the sampling axis
    int timestep = 0;
    int layer = 0;
    bool eligible = false;
    bool cache_hit = false;
    int cache_age = 0;  // valid iff cache_hit
    OffsetSignals signals;
    ReuseAction action = ReuseAction::FullCompute;
    double weight = 1.0;
    int block_evals = 1;
    bool forced_refresh = false;
    bool has_blend_devs = false;
    double dev_fresh_blend = 0.0;
    double dev_fresh_cached = 0.0;
    std::optional<Tensor3> output_state;  // populated when record_states is on
};

struct StepTrace {
    int frame = 0;
    long step_index = 0;
    int timestep = 0;
    double wall_ms = 0.0;
    std::optional<Tensor3> image;        // decoded model output at this step
    std::vector<double> patch_variation;  // per-token dispersion of the final hidden state
};

struct RunTrace {
    RunConfig config;
    std::vector<int> eligible_layers;
    std::vector<TraceRecord> records;  // layer-major within each step
    std::vector<StepTrace> steps;
    Tensor3 final_image;
    CacheStats cache_stats;  // cumulative at trace end (running totals in sequence mode)
    double wall_ms_total = 0.0;
};

}  // namespace offsetlab
