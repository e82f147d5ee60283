#pragma once

#include <atomic>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "offsetlab/engine.hpp"
#include "offsetlab/version.hpp"

namespace offsetlab {

using json = nlohmann::json;

// ---------------------------------------------------------------- config io

namespace detail {

inline void check_keys(const json& obj, const std::string& path,
                       std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                ok = true;
                break;
            }
        }
        if (!ok) throw Error("BadConfig", path + "." + it.key() + ": unknown field");
    }
}

inline double get_number(const json& obj, const std::string& path, const char* key,
                         double fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number()) throw Error("BadConfig", path + "." + key + ": expected number");
    return obj[key].get<double>();
}

inline long get_integer(const json& obj, const std::string& path, const char* key,
                        long fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number_integer()) {
        throw Error("BadConfig", path + "." + key + ": expected integer");
    }
    return obj[key].get<long>();
}

inline uint64_t get_seed(const json& obj, const std::string& path, const char* key,
                         uint64_t fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number_integer() && !obj[key].is_number_unsigned()) {
        throw Error("BadConfig", path + "." + key + ": expected integer seed");
    }
    return obj[key].get<uint64_t>();
}

inline bool get_bool(const json& obj, const std::string& path, const char* key, bool fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_boolean()) throw Error("BadConfig", path + "." + key + ": expected bool");
    return obj[key].get<bool>();
}

inline std::string get_string(const json& obj, const std::string& path, const char* key,
                              const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_string()) throw Error("BadConfig", path + "." + key + ": expected string");
    return obj[key].get<std::string>();
}

inline PolicyKind parse_policy_kind(const std::string& name, const std::string& path) {
    if (name == "Adaptive") return PolicyKind::Adaptive;
    if (name == "StaticInterval") return PolicyKind::StaticInterval;
    if (name == "BinaryThreshold") return PolicyKind::BinaryThreshold;
    if (name == "FullRecompute") return PolicyKind::FullRecompute;
    if (name == "PureReuse") return PolicyKind::PureReuse;
    throw Error("BadConfig", path + ": unknown policy kind '" + name + "'");
}

inline ExecutionMode parse_mode(const std::string& name, const std::string& path) {
    if (name == "Faithful") return ExecutionMode::Faithful;
    if (name == "Economic") return ExecutionMode::Economic;
    throw Error("BadConfig", path + ": unknown mode '" + name + "'");
}

}  // namespace detail

inline RunConfig config_from_json(const json& root) {
    if (!root.is_object()) throw Error("BadConfig", "config root must be an object");
    detail::check_keys(root, "config", {"schema_version", "model", "run", "policy", "scene"});
    long version = detail::get_integer(root, "config", "schema_version", 1);
    if (version != 1) throw Error("BadConfig", "schema_version: only version 1 is supported");

    RunConfig c;
    if (root.contains("model")) {
        const json& m = root["model"];
        if (!m.is_object()) throw Error("BadConfig", "model: expected object");
        detail::check_keys(m, "model",
                           {"weights_seed", "layers", "channels", "patches", "patch_dim",
                            "timesteps", "num_classes", "batch", "weight_scale"});
        c.weights_seed = detail::get_seed(m, "model", "weights_seed", c.weights_seed);
        c.layers = static_cast<int>(detail::get_integer(m, "model", "layers", c.layers));
        c.channels = static_cast<int>(detail::get_integer(m, "model", "channels", c.channels));
        c.patches = static_cast<int>(detail::get_integer(m, "model", "patches", c.patches));
        c.patch_dim = static_cast<int>(detail::get_integer(m, "model", "patch_dim", c.patch_dim));
        c.timesteps = static_cast<int>(detail::get_integer(m, "model", "timesteps", c.timesteps));
        c.num_classes =
            static_cast<int>(detail::get_integer(m, "model", "num_classes", c.num_classes));
        c.batch = static_cast<int>(detail::get_integer(m, "model", "batch", c.batch));
        c.weight_scale = detail::get_number(m, "model", "weight_scale", c.weight_scale);
    }
    if (root.contains("run")) {
        const json& r = root["run"];
        if (!r.is_object()) throw Error("BadConfig", "run: expected object");
        detail::check_keys(r, "run",
                           {"latent_seed", "label", "step_size", "trace_images", "record_states"});
        c.latent_seed = detail::get_seed(r, "run", "latent_seed", c.latent_seed);
        c.label = static_cast<int>(detail::get_integer(r, "run", "label", c.label));
        c.step_size = detail::get_number(r, "run", "step_size", c.step_size);
        c.trace_images = detail::get_bool(r, "run", "trace_images", c.trace_images);
        c.record_states = detail::get_bool(r, "run", "record_states", c.record_states);
    }
    if (root.contains("policy")) {
        const json& p = root["policy"];
        if (!p.is_object()) throw Error("BadConfig", "policy: expected object");
        detail::check_keys(p, "policy",
                           {"kind", "mode", "gamma", "lambda_spatial", "skip_threshold",
                            "interval", "binary_threshold", "tau_max", "normalize_scores",
                            "ema_decay", "refresh_interval", "eligible_layers"});
        PolicyConfig& pc = c.policy;
        pc.kind = detail::parse_policy_kind(
            detail::get_string(p, "policy", "kind", policy_kind_name(pc.kind)), "policy.kind");
        pc.mode = detail::parse_mode(detail::get_string(p, "policy", "mode", mode_name(pc.mode)),
                                     "policy.mode");
        pc.sensitivity = detail::get_number(p, "policy", "gamma", pc.sensitivity);
        pc.spatial_weight = detail::get_number(p, "policy", "lambda_spatial", pc.spatial_weight);
        pc.skip_threshold = detail::get_number(p, "policy", "skip_threshold", pc.skip_threshold);
        pc.interval = static_cast<int>(detail::get_integer(p, "policy", "interval", pc.interval));
        pc.binary_threshold =
            detail::get_number(p, "policy", "binary_threshold", pc.binary_threshold);
        pc.max_cache_age =
            static_cast<int>(detail::get_integer(p, "policy", "tau_max", pc.max_cache_age));
        pc.normalize_scores =
            detail::get_bool(p, "policy", "normalize_scores", pc.normalize_scores);
        pc.ema_decay = detail::get_number(p, "policy", "ema_decay", pc.ema_decay);
        pc.refresh_interval = static_cast<int>(
            detail::get_integer(p, "policy", "refresh_interval", pc.refresh_interval));
        if (p.contains("eligible_layers") && !p["eligible_layers"].is_null()) {
            if (!p["eligible_layers"].is_array()) {
                throw Error("BadConfig", "policy.eligible_layers: expected array or null");
            }
            pc.eligible_layers.clear();
            for (const json& e : p["eligible_layers"]) {
                if (!e.is_number_integer()) {
                    throw Error("BadConfig", "policy.eligible_layers: expected integers");
                }
                pc.eligible_layers.push_back(e.get<int>());
            }
        }
    }
    if (root.contains("scene") && !root["scene"].is_null()) {
        const json& s = root["scene"];
        if (!s.is_object()) throw Error("BadConfig", "scene: expected object or null");
        detail::check_keys(s, "scene",
                           {"height", "width", "frames", "seed", "velocity", "blobs",
                            "blob_radius", "blob_list"});
        SceneSpec spec;
        spec.height = static_cast<int>(detail::get_integer(s, "scene", "height", spec.height));
        spec.width = static_cast<int>(detail::get_integer(s, "scene", "width", spec.width));
        spec.frames = static_cast<int>(detail::get_integer(s, "scene", "frames", spec.frames));
        spec.seed = detail::get_seed(s, "scene", "seed", spec.seed);
        if (s.contains("velocity")) {
            const json& v = s["velocity"];
            if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
                throw Error("BadConfig", "scene.velocity: expected [row, col] numbers");
            }
            spec.velocity_row = v[0].get<double>();
            spec.velocity_col = v[1].get<double>();
        }
        if (s.contains("blob_list")) {
            if (!s["blob_list"].is_array()) {
                throw Error("BadConfig", "scene.blob_list: expected array");
            }
            for (const json& b : s["blob_list"]) {
                if (!b.is_object()) throw Error("BadConfig", "scene.blob_list: expected objects");
                detail::check_keys(b, "scene.blob_list", {"row", "col", "radius"});
                Blob blob;
                blob.center_row = detail::get_number(b, "scene.blob_list", "row", 0.0);
                blob.center_col = detail::get_number(b, "scene.blob_list", "col", 0.0);
                blob.radius = detail::get_number(b, "scene.blob_list", "radius", 1.0);
                spec.blobs.push_back(blob);
            }
        } else {
            int count = static_cast<int>(detail::get_integer(s, "scene", "blobs", 3));
            double radius = detail::get_number(s, "scene", "blob_radius", 2.0);
            if (count < 0) throw Error("BadConfig", "scene.blobs: must be >= 0");
            SceneSpec generated =
                make_scene(spec.height, spec.width, spec.frames, spec.seed, spec.velocity_row,
                           spec.velocity_col, count, radius);
            spec.blobs = generated.blobs;
        }
        c.scene = spec;
    }
    validate_config(c);
    return c;
}

inline json config_to_json(const RunConfig& c) {
    json j;
    j["schema_version"] = 1;
    j["model"] = {{"weights_seed", c.weights_seed}, {"layers", c.layers},
                  {"channels", c.channels},        {"patches", c.patches},
                  {"patch_dim", c.patch_dim},      {"timesteps", c.timesteps},
                  {"num_classes", c.num_classes},  {"batch", c.batch},
                  {"weight_scale", c.weight_scale}};
    j["run"] = {{"latent_seed", c.latent_seed},
                {"label", c.label},
                {"step_size", c.step_size},
                {"trace_images", c.trace_images},
                {"record_states", c.record_states}};
    const PolicyConfig& p = c.policy;
    j["policy"] = {{"kind", policy_kind_name(p.kind)},
                   {"mode", mode_name(p.mode)},
                   {"gamma", p.sensitivity},
                   {"lambda_spatial", p.spatial_weight},
                   {"skip_threshold", p.skip_threshold},
                   {"interval", p.interval},
                   {"binary_threshold", p.binary_threshold},
                   {"tau_max", p.max_cache_age},
                   {"normalize_scores", p.normalize_scores},
                   {"ema_decay", p.ema_decay},
                   {"refresh_interval", p.refresh_interval}};
    if (p.eligible_layers.empty()) {
        j["policy"]["eligible_layers"] = nullptr;
    } else {
        j["policy"]["eligible_layers"] = p.eligible_layers;
    }
    if (c.scene.has_value()) {
        const SceneSpec& s = *c.scene;
        json blobs = json::array();
        for (const Blob& b : s.blobs) {
            blobs.push_back({{"row", b.center_row}, {"col", b.center_col}, {"radius", b.radius}});
        }
        j["scene"] = {{"height", s.height},
                      {"width", s.width},
                      {"frames", s.frames},
                      {"seed", s.seed},
                      {"velocity", {s.velocity_row, s.velocity_col}},
                      {"blob_list", blobs}};
    } else {
        j["scene"] = nullptr;
    }
    return j;
}

inline RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw Error("MissingFile", "cannot open config file " + path);
    json root;
    try {
        in >> root;
    } catch (const json::parse_error& e) {
        throw Error("BadConfig", std::string("config parse error: ") + e.what());
    }
    return config_from_json(root);
}

// ------------------------------------------------------------ report bundle

struct LayerAggregate {
    int layer = 0;
    long records = 0;
    bool eligible = false;
    std::optional<double> mean_score;     // raw offset score over cache hits
    std::optional<double> mean_temporal;  // over cache hits
    double mean_spatial = 0.0;
    double mean_weight = 0.0;
    double reuse_fraction = 0.0;  // mean (1 - weight)

    bool operator==(const LayerAggregate&) const = default;
};

struct FidelityNumbers {
    std::optional<double> mse;
    std::optional<double> psnr;
    std::optional<double> ssim;
    std::vector<double> step_mse;   // one entry per compared step image pair
    std::vector<double> step_psnr;  // (per frame in sequence mode)
    std::optional<double> mean_step_mse;
    std::optional<double> min_step_psnr;

    bool operator==(const FidelityNumbers&) const = default;
};

// Everything one run emits: config echo, cost and cache accounting,
// fidelity vs the reference run, per-layer aggregates, and the deviation
// diagnostics. Serializes losslessly through JSON.
struct ReportBundle {
    int schema_version = kReportSchemaVersion;
    std::string tool_name = kToolName;
    std::string tool_version = kToolVersion;
    std::string timestamp;
    RunConfig config;
    CostSummary cost;
    double wall_ms_total = 0.0;
    FidelityNumbers fidelity;
    CacheStats cache;
    std::optional<double> hit_rate;
    std::optional<double> binary_hit_rate;
    std::vector<LayerAggregate> layers;
    std::optional<double> hidden_dev_mean;
    std::optional<double> hidden_dev_max;
    std::optional<double> prop1_max_rel_err;
    std::optional<double> prop1_bound_min_slack;
    std::optional<double> prop1_bound_satisfaction;
    std::optional<double> eq4_satisfaction_rate;
    std::vector<double> lipschitz_per_layer;
    std::vector<std::string> heatmap_files;
    std::optional<int> frames;  // set in sequence mode

    bool operator==(const ReportBundle&) const = default;
};

namespace detail {

inline json opt_json(const std::optional<double>& v) {
    if (v.has_value()) return json(*v);
    return json(nullptr);
}

inline std::optional<double> opt_from(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<double>();
}

inline std::string iso_timestamp() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace detail

inline json report_to_json(const ReportBundle& r) {
    json j;
    j["schema_version"] = r.schema_version;
    j["tool"] = {{"name", r.tool_name}, {"version", r.tool_version}};
    j["timestamp"] = r.timestamp;
    j["config"] = config_to_json(r.config);
    j["policy"] = policy_kind_name(r.config.policy.kind);
    j["mode"] = mode_name(r.config.policy.mode);
    j["cost"] = {{"total_block_evals", r.cost.total_block_evals},
                 {"max_possible", r.cost.max_possible},
                 {"mean_weight", r.cost.mean_weight},
                 {"eval_fraction", r.cost.eval_fraction},
                 {"predicted_fraction", r.cost.predicted_fraction},
                 {"eligible_records", r.cost.eligible_records},
                 {"wall_ms_total", r.wall_ms_total}};
    j["fidelity"] = {{"mse", detail::opt_json(r.fidelity.mse)},
                     {"psnr", detail::opt_json(r.fidelity.psnr)},
                     {"ssim", detail::opt_json(r.fidelity.ssim)},
                     {"step_mse", r.fidelity.step_mse},
                     {"step_psnr", r.fidelity.step_psnr},
                     {"mean_step_mse", detail::opt_json(r.fidelity.mean_step_mse)},
                     {"min_step_psnr", detail::opt_json(r.fidelity.min_step_psnr)},
                     {"fid", nullptr},
                     {"t_fid", nullptr}};
    j["cache"] = {{"lookups", r.cache.lookups},
                  {"hits", r.cache.hits},
                  {"misses", r.cache.misses},
                  {"stale_evictions", r.cache.stale_evictions},
                  {"reuse_weight_sum", r.cache.reuse_weight_sum},
                  {"eligible_steps", r.cache.eligible_steps},
                  {"skip_count", r.cache.skip_count},
                  {"hit_rate", detail::opt_json(r.hit_rate)},
                  {"binary_hit_rate", detail::opt_json(r.binary_hit_rate)}};
    j["layers"] = json::array();
    for (const LayerAggregate& a : r.layers) {
        j["layers"].push_back({{"layer", a.layer},
                               {"records", a.records},
                               {"eligible", a.eligible},
                               {"mean_score", detail::opt_json(a.mean_score)},
                               {"mean_temporal", detail::opt_json(a.mean_temporal)},
                               {"mean_spatial", a.mean_spatial},
                               {"mean_weight", a.mean_weight},
                               {"reuse_fraction", a.reuse_fraction}});
    }
    j["error"] = {{"hidden_dev_mean", detail::opt_json(r.hidden_dev_mean)},
                  {"hidden_dev_max", detail::opt_json(r.hidden_dev_max)},
                  {"prop1_max_rel_err", detail::opt_json(r.prop1_max_rel_err)},
                  {"prop1_bound_min_slack", detail::opt_json(r.prop1_bound_min_slack)},
                  {"prop1_bound_satisfaction", detail::opt_json(r.prop1_bound_satisfaction)},
                  {"eq4_satisfaction_rate", detail::opt_json(r.eq4_satisfaction_rate)},
                  {"lipschitz_per_layer", r.lipschitz_per_layer}};
    j["heatmaps"] = r.heatmap_files;
    j["frames"] = r.frames.has_value() ? json(*r.frames) : json(nullptr);
    return j;
}

inline ReportBundle report_from_json(const json& j) {
    ReportBundle r;
    r.schema_version = j.at("schema_version").get<int>();
    r.tool_name = j.at("tool").at("name").get<std::string>();
    r.tool_version = j.at("tool").at("version").get<std::string>();
    r.timestamp = j.at("timestamp").get<std::string>();
    r.config = config_from_json(j.at("config"));
    const json& cost = j.at("cost");
    r.cost.total_block_evals = cost.at("total_block_evals").get<long>();
    r.cost.max_possible = cost.at("max_possible").get<long>();
    r.cost.mean_weight = cost.at("mean_weight").get<double>();
    r.cost.eval_fraction = cost.at("eval_fraction").get<double>();
    r.cost.predicted_fraction = cost.at("predicted_fraction").get<double>();
    r.cost.eligible_records = cost.at("eligible_records").get<long>();
    r.wall_ms_total = cost.at("wall_ms_total").get<double>();
    const json& fid = j.at("fidelity");
    r.fidelity.mse = detail::opt_from(fid, "mse");
    r.fidelity.psnr = detail::opt_from(fid, "psnr");
    r.fidelity.ssim = detail::opt_from(fid, "ssim");
    r.fidelity.step_mse = fid.at("step_mse").get<std::vector<double>>();
    r.fidelity.step_psnr = fid.at("step_psnr").get<std::vector<double>>();
    r.fidelity.mean_step_mse = detail::opt_from(fid, "mean_step_mse");
    r.fidelity.min_step_psnr = detail::opt_from(fid, "min_step_psnr");
    const json& cache = j.at("cache");
    r.cache.lookups = cache.at("lookups").get<long>();
    r.cache.hits = cache.at("hits").get<long>();
    r.cache.misses = cache.at("misses").get<long>();
    r.cache.stale_evictions = cache.at("stale_evictions").get<long>();
    r.cache.reuse_weight_sum = cache.at("reuse_weight_sum").get<double>();
    r.cache.eligible_steps = cache.at("eligible_steps").get<long>();
    r.cache.skip_count = cache.at("skip_count").get<long>();
    r.hit_rate = detail::opt_from(cache, "hit_rate");
    r.binary_hit_rate = detail::opt_from(cache, "binary_hit_rate");
    for (const json& a : j.at("layers")) {
        LayerAggregate agg;
        agg.layer = a.at("layer").get<int>();
        agg.records = a.at("records").get<long>();
        agg.eligible = a.at("eligible").get<bool>();
        agg.mean_score = detail::opt_from(a, "mean_score");
        agg.mean_temporal = detail::opt_from(a, "mean_temporal");
        agg.mean_spatial = a.at("mean_spatial").get<double>();
        agg.mean_weight = a.at("mean_weight").get<double>();
        agg.reuse_fraction = a.at("reuse_fraction").get<double>();
        r.layers.push_back(agg);
    }
    const json& err = j.at("error");
    r.hidden_dev_mean = detail::opt_from(err, "hidden_dev_mean");
    r.hidden_dev_max = detail::opt_from(err, "hidden_dev_max");
    r.prop1_max_rel_err = detail::opt_from(err, "prop1_max_rel_err");
    r.prop1_bound_min_slack = detail::opt_from(err, "prop1_bound_min_slack");
    r.prop1_bound_satisfaction = detail::opt_from(err, "prop1_bound_satisfaction");
    r.eq4_satisfaction_rate = detail::opt_from(err, "eq4_satisfaction_rate");
    r.lipschitz_per_layer = err.at("lipschitz_per_layer").get<std::vector<double>>();
    r.heatmap_files = j.at("heatmaps").get<std::vector<std::string>>();
    if (!j.at("frames").is_null()) r.frames = j.at("frames").get<int>();
    return r;
}

// --------------------------------------------------------------- aggregates

inline std::vector<LayerAggregate> layer_aggregates(const std::vector<const RunTrace*>& traces) {
    if (traces.empty() || traces.front()->records.empty()) return {};
    int layer_count = traces.front()->config.layers;
    std::vector<LayerAggregate> out(static_cast<size_t>(layer_count));
    std::vector<long> hits(static_cast<size_t>(layer_count), 0);
    std::vector<double> score_sum(static_cast<size_t>(layer_count), 0.0);
    std::vector<double> temporal_sum(static_cast<size_t>(layer_count), 0.0);
    for (int l = 0; l < layer_count; ++l) out[static_cast<size_t>(l)].layer = l;
    for (const RunTrace* t : traces) {
        for (int l : t->eligible_layers) out[static_cast<size_t>(l)].eligible = true;
        for (const TraceRecord& rec : t->records) {
            LayerAggregate& a = out[static_cast<size_t>(rec.layer)];
            a.records += 1;
            a.mean_spatial += rec.signals.spatial;
            a.mean_weight += rec.weight;
            a.reuse_fraction += 1.0 - rec.weight;
            if (rec.cache_hit) {
                hits[static_cast<size_t>(rec.layer)] += 1;
                score_sum[static_cast<size_t>(rec.layer)] += rec.signals.score_raw;
                temporal_sum[static_cast<size_t>(rec.layer)] += rec.signals.temporal;
            }
        }
    }
    for (int l = 0; l < layer_count; ++l) {
        LayerAggregate& a = out[static_cast<size_t>(l)];
        if (a.records > 0) {
            a.mean_spatial /= static_cast<double>(a.records);
            a.mean_weight /= static_cast<double>(a.records);
            a.reuse_fraction /= static_cast<double>(a.records);
        }
        if (hits[static_cast<size_t>(l)] > 0) {
            a.mean_score = score_sum[static_cast<size_t>(l)] /
                           static_cast<double>(hits[static_cast<size_t>(l)]);
            a.mean_temporal = temporal_sum[static_cast<size_t>(l)] /
                              static_cast<double>(hits[static_cast<size_t>(l)]);
        }
    }
    return out;
}

// ------------------------------------------------------------------ writers

namespace detail {

// Shortest round-trip decimal form, same as the JSON encoder uses.
inline std::string csv_number(double v) {
    if (!std::isfinite(v)) return "";
    return json(v).dump();
}

inline std::string csv_number(const std::optional<double>& v) {
    if (!v.has_value()) return "";
    return csv_number(*v);
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out.good()) throw Error("IoError", "cannot open " + path.string() + " for writing");
    out << content;
    out.flush();
    if (!out.good()) throw Error("IoError", "failed writing " + path.string());
}

}  // namespace detail

inline json record_to_json(const TraceRecord& r) {
    json j;
    j["frame"] = r.frame;
    j["step"] = r.step_index;
    j["t"] = r.timestep;
    j["layer"] = r.layer;
    j["eligible"] = r.eligible;
    j["cache_hit"] = r.cache_hit;
    j["age"] = r.cache_hit ? json(r.cache_age) : json(nullptr);
    // +inf sentinels (cache miss) serialize as null.
    j["temporal"] = r.signals.temporal;
    j["spatial"] = r.signals.spatial;
    j["score_raw"] = r.signals.score_raw;
    j["score_used"] = r.signals.score_used;
    j["weight"] = r.weight;
    j["action"] = action_name(r.action);
    j["evals"] = r.block_evals;
    j["forced_refresh"] = r.forced_refresh;
    j["dev_fresh_blend"] = r.has_blend_devs ? json(r.dev_fresh_blend) : json(nullptr);
    j["dev_fresh_cached"] = r.has_blend_devs ? json(r.dev_fresh_cached) : json(nullptr);
    return j;
}

inline std::string trace_to_jsonl(const std::vector<const RunTrace*>& traces) {
    std::string out;
    for (const RunTrace* t : traces) {
        for (const TraceRecord& r : t->records) {
            out += record_to_json(r).dump();
            out += '\n';
        }
    }
    return out;
}

inline std::string layers_csv(const std::vector<LayerAggregate>& aggs) {
    std::string out =
        "layer,records,eligible,mean_score,mean_temporal,mean_spatial,mean_weight,"
        "reuse_fraction\n";
    for (const LayerAggregate& a : aggs) {
        out += std::to_string(a.layer) + "," + std::to_string(a.records) + "," +
               (a.eligible ? "1" : "0") + "," + detail::csv_number(a.mean_score) + "," +
               detail::csv_number(a.mean_temporal) + "," + detail::csv_number(a.mean_spatial) +
               "," + detail::csv_number(a.mean_weight) + "," +
               detail::csv_number(a.reuse_fraction) + "\n";
    }
    return out;
}

inline std::string heatmap_csv(const std::vector<double>& patch_variation) {
    int cols = exact_sqrt(static_cast<int>(patch_variation.size()));
    if (cols < 1) cols = static_cast<int>(patch_variation.size());
    std::string out;
    for (size_t i = 0; i < patch_variation.size(); ++i) {
        out += detail::csv_number(patch_variation[i]);
        out += ((i + 1) % static_cast<size_t>(cols) == 0) ? '\n' : ',';
    }
    return out;
}

// ----------------------------------------------------------------- commands

namespace detail {

struct RunResult {
    std::vector<RunTrace> traces;      // one entry for single runs, per frame otherwise
    std::vector<RunTrace> references;  // matched reference traces
    ErrorReport report;
    CostSummary cost;
    CacheStats stats;
    double wall_ms = 0.0;
};

inline CostSummary sum_costs(const std::vector<RunTrace>& traces) {
    CostSummary total;
    double weight_sum = 0.0;
    for (const RunTrace& t : traces) {
        CostSummary cs = cost_summary(t);
        total.total_block_evals += cs.total_block_evals;
        total.max_possible += cs.max_possible;
        weight_sum += cs.mean_weight * static_cast<double>(cs.eligible_records);
        total.eligible_records += cs.eligible_records;
    }
    total.mean_weight = total.eligible_records > 0
                            ? weight_sum / static_cast<double>(total.eligible_records)
                            : 1.0;
    total.eval_fraction =
        static_cast<double>(total.total_block_evals) / static_cast<double>(total.max_possible);
    total.predicted_fraction = 1.0 - total.mean_weight;
    return total;
}

inline RunResult execute(const RunConfig& config, const std::vector<double>* lipschitz) {
    RunResult res;
    if (config.scene.has_value()) {
        res.traces = run_sequence(config, *config.scene);
        RunConfig ref_cfg = config;
        ref_cfg.policy.kind = PolicyKind::FullRecompute;
        res.references = run_sequence(ref_cfg, *config.scene);
        std::vector<double> lip =
            lipschitz != nullptr ? *lipschitz : estimate_layer_lipschitz(config);
        std::vector<ErrorReport> parts;
        parts.reserve(res.traces.size());
        for (size_t f = 0; f < res.traces.size(); ++f) {
            parts.push_back(compare_runs(res.traces[f], res.references[f], &lip));
        }
        res.report = merge_reports(parts);
    } else {
        res.traces.push_back(run_inference(config));
        res.references.push_back(run_reference(config));
        res.report = compare_runs(res.traces.front(), res.references.front(), lipschitz);
    }
    res.cost = sum_costs(res.traces);
    res.stats = res.traces.back().cache_stats;
    for (const RunTrace& t : res.traces) res.wall_ms += t.wall_ms_total;
    return res;
}

inline ReportBundle make_bundle(const RunConfig& config, const RunResult& res) {
    ReportBundle b;
    b.timestamp = iso_timestamp();
    b.config = config;
    b.cost = res.cost;
    b.wall_ms_total = res.wall_ms;
    b.fidelity.mse = res.report.final_mse;
    b.fidelity.psnr = res.report.final_psnr;
    b.fidelity.ssim = res.report.final_ssim;
    b.fidelity.step_mse = res.report.step_mse;
    b.fidelity.step_psnr = res.report.step_psnr;
    if (!res.report.step_mse.empty()) {
        double sum = 0.0;
        double min_psnr = kPsnrCap;
        for (double m : res.report.step_mse) sum += m;
        for (double p : res.report.step_psnr) min_psnr = std::min(min_psnr, p);
        b.fidelity.mean_step_mse = sum / static_cast<double>(res.report.step_mse.size());
        b.fidelity.min_step_psnr = min_psnr;
    }
    b.cache = res.stats;
    if (res.stats.eligible_steps > 0) {
        b.hit_rate = res.stats.reuse_weight_sum / static_cast<double>(res.stats.eligible_steps);
        b.binary_hit_rate =
            static_cast<double>(res.stats.skip_count) /
            static_cast<double>(res.stats.eligible_steps);
    }
    std::vector<const RunTrace*> ptrs;
    ptrs.reserve(res.traces.size());
    for (const RunTrace& t : res.traces) ptrs.push_back(&t);
    b.layers = layer_aggregates(ptrs);
    b.hidden_dev_mean = res.report.hidden_dev_mean;
    b.hidden_dev_max = res.report.hidden_dev_max;
    b.prop1_max_rel_err = res.report.prop1_max_rel_err;
    b.prop1_bound_min_slack = res.report.prop1_bound_min_slack;
    b.prop1_bound_satisfaction = res.report.prop1_bound_satisfaction;
    b.eq4_satisfaction_rate = res.report.eq4_satisfaction_rate;
    b.lipschitz_per_layer = res.report.lipschitz_per_layer;
    if (config.scene.has_value()) b.frames = config.scene->frames;
    return b;
}

inline int thread_budget(size_t jobs) {
    if (const char* env = std::getenv("OFFSETLAB_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<int>(std::min<long>(v, static_cast<long>(jobs)));
    }
    return static_cast<int>(jobs);
}

}  // namespace detail

// Runs the configured policy plus its full-recompute reference and writes
// report.json, trace.jsonl, layers.csv and heatmap CSVs into out_dir.
inline int cmd_run(const std::string& config_path, const std::string& out_dir,
                   bool trace_images_flag = false) {
    RunConfig config;
    try {
        config = parse_config(config_path);
        if (trace_images_flag) config.trace_images = true;
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    try {
        std::filesystem::path dir(out_dir);
        std::filesystem::create_directories(dir);
        detail::RunResult res = detail::execute(config, nullptr);
        ReportBundle bundle = detail::make_bundle(config, res);

        std::vector<const RunTrace*> ptrs;
        for (const RunTrace& t : res.traces) ptrs.push_back(&t);
        detail::write_file(dir / "trace.jsonl", trace_to_jsonl(ptrs));
        detail::write_file(dir / "layers.csv", layers_csv(bundle.layers));
        for (const RunTrace& t : res.traces) {
            for (const StepTrace& st : t.steps) {
                if (st.patch_variation.empty()) continue;
                std::string name = "heatmap_" + std::to_string(st.step_index) + ".csv";
                detail::write_file(dir / name, heatmap_csv(st.patch_variation));
                bundle.heatmap_files.push_back(name);
            }
        }
        detail::write_file(dir / "report.json", report_to_json(bundle).dump(2) + "\n");
        return 0;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
}

// One run per (gamma, lambda_spatial) grid point against a shared reference;
// emits sweep.csv. Grid points run concurrently up to OFFSETLAB_THREADS.
inline int cmd_sweep(const std::string& config_path, const std::string& out_dir,
                     std::vector<double> gammas = {}, std::vector<double> lambdas = {}) {
    RunConfig base;
    try {
        base = parse_config(config_path);
        if (gammas.empty()) gammas = {0.5, 1.0, 2.0};
        if (lambdas.empty()) lambdas = {0.5, 1.0, 2.0};
        for (double g : gammas) {
            if (g < 0.0) throw Error("BadConfig", "policy.gamma: sweep value must be >= 0");
        }
        for (double l : lambdas) {
            if (l < 0.0) {
                throw Error("BadConfig", "policy.lambda_spatial: sweep value must be >= 0");
            }
        }
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    try {
        std::filesystem::path dir(out_dir);
        std::filesystem::create_directories(dir);

        struct Point {
            double gamma;
            double lambda;
        };
        std::vector<Point> grid;
        for (double g : gammas) {
            for (double l : lambdas) grid.push_back({g, l});
        }
        std::vector<double> lipschitz = estimate_layer_lipschitz(base);

        struct Row {
            double gamma = 0.0, lambda = 0.0, mse = 0.0, psnr = 0.0;
            std::optional<double> hit_rate;
            double eval_fraction = 0.0;
        };
        std::vector<Row> rows(grid.size());
        std::atomic<size_t> cursor{0};
        auto worker = [&]() {
            for (;;) {
                size_t i = cursor.fetch_add(1);
                if (i >= grid.size()) return;
                RunConfig cfg = base;
                cfg.policy.sensitivity = grid[i].gamma;
                cfg.policy.spatial_weight = grid[i].lambda;
                detail::RunResult res = detail::execute(cfg, &lipschitz);
                Row& row = rows[i];
                row.gamma = grid[i].gamma;
                row.lambda = grid[i].lambda;
                row.mse = res.report.final_mse;
                row.psnr = res.report.final_psnr;
                if (res.stats.eligible_steps > 0) {
                    row.hit_rate = res.stats.reuse_weight_sum /
                                   static_cast<double>(res.stats.eligible_steps);
                }
                row.eval_fraction = res.cost.eval_fraction;
            }
        };
        int threads = detail::thread_budget(grid.size());
        std::vector<std::thread> pool;
        for (int i = 1; i < threads; ++i) pool.emplace_back(worker);
        worker();
        for (auto& th : pool) th.join();

        std::string csv = "gamma,lambda_spatial,mse_vs_ref,psnr,hit_rate,eval_fraction\n";
        for (const Row& row : rows) {
            csv += detail::csv_number(row.gamma) + "," + detail::csv_number(row.lambda) + "," +
                   detail::csv_number(row.mse) + "," + detail::csv_number(row.psnr) + "," +
                   detail::csv_number(row.hit_rate) + "," +
                   detail::csv_number(row.eval_fraction) + "\n";
        }
        detail::write_file(dir / "sweep.csv", csv);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
}

// "StaticInterval:4" -> kind + interval, "BinaryThreshold:0.3" -> kind +
// threshold. Bare names use the config's parameters.
inline PolicyConfig policy_from_spec(const PolicyConfig& base, const std::string& spec) {
    PolicyConfig out = base;
    std::string name = spec;
    std::string arg;
    if (auto pos = spec.find(':'); pos != std::string::npos) {
        name = spec.substr(0, pos);
        arg = spec.substr(pos + 1);
    }
    out.kind = detail::parse_policy_kind(name, "policies");
    if (!arg.empty()) {
        try {
            if (out.kind == PolicyKind::StaticInterval) {
                out.interval = std::stoi(arg);
            } else if (out.kind == PolicyKind::BinaryThreshold) {
                out.binary_threshold = std::stod(arg);
            } else {
                throw Error("BadConfig", "policies: '" + name + "' takes no argument");
            }
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            throw Error("BadConfig", "policies: bad argument '" + arg + "'");
        }
    }
    return out;
}

// One row per policy at the shared workload, all against one full-recompute
// reference; emits compare.csv.
inline int cmd_compare(const std::string& config_path, const std::string& out_dir,
                       const std::vector<std::string>& policies) {
    RunConfig base;
    std::vector<PolicyConfig> parsed;
    try {
        base = parse_config(config_path);
        if (policies.size() < 2) {
            throw Error("BadConfig", "policies: need at least two policies to compare");
        }
        for (const std::string& p : policies) parsed.push_back(policy_from_spec(base.policy, p));
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    try {
        std::filesystem::path dir(out_dir);
        std::filesystem::create_directories(dir);
        std::vector<double> lipschitz = estimate_layer_lipschitz(base);

        std::string csv =
            "policy,mode,mse_vs_ref,psnr,ssim,hit_rate,eval_fraction,block_evals,mean_weight\n";
        for (size_t i = 0; i < parsed.size(); ++i) {
            RunConfig cfg = base;
            cfg.policy = parsed[i];
            detail::RunResult res = detail::execute(cfg, &lipschitz);
            std::optional<double> hr;
            if (res.stats.eligible_steps > 0) {
                hr = res.stats.reuse_weight_sum /
                     static_cast<double>(res.stats.eligible_steps);
            }
            csv += policies[i] + "," + mode_name(cfg.policy.mode) + "," +
                   detail::csv_number(res.report.final_mse) + "," +
                   detail::csv_number(res.report.final_psnr) + "," +
                   detail::csv_number(res.report.final_ssim) + "," + detail::csv_number(hr) +
                   "," + detail::csv_number(res.cost.eval_fraction) + "," +
                   std::to_string(res.cost.total_block_evals) + "," +
                   detail::csv_number(res.cost.mean_weight) + "\n";
        }
        detail::write_file(dir / "compare.csv", csv);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
}

}  // namespace offsetlab
