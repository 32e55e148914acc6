#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "retro/engine.hpp"

namespace retro {

// One JSON document drives every command. Field precedence elsewhere is
// flags > file > defaults; this struct holds the merged result.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "runs/out";

    int train_scenarios = 2000;
    int val_scenarios = 500;
    GeneratorConfig generator;  // rollout, scenario_count, and seed are overwritten per split

    RolloutConfig rollout;
    PredictorConfig predictor;
    RetroConfig retro;

    Variant variant = Variant::none;
    int epochs = 150;
    int batch_size = 32;
    double lr = 1.5e-3;
    double lambda_ce = 0.1;
    int patience = 10;
    int warmup_epochs = 30;

    double ood_fraction = 0.10;
    std::vector<int> ablate_lengths = {1, 2, 4, 6};
};

namespace cfgdetail {

inline void check_keys(const nlohmann::json& j, const std::string& scope,
                       std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw ConfigError("unknown config field " + scope + "." + it.key());
    }
}

inline double get_num(const nlohmann::json& j, const std::string& scope, const char* key,
                      double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) throw ConfigError(scope + "." + key + " must be a number");
    return j.at(key).get<double>();
}

inline int get_int(const nlohmann::json& j, const std::string& scope, const char* key,
                   int fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number_integer()) throw ConfigError(scope + "." + key + " must be an integer");
    return j.at(key).get<int>();
}

inline bool get_bool(const nlohmann::json& j, const std::string& scope, const char* key,
                     bool fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_boolean()) throw ConfigError(scope + "." + key + " must be a boolean");
    return j.at(key).get<bool>();
}

inline std::string get_str(const nlohmann::json& j, const std::string& scope, const char* key,
                           std::string fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_string()) throw ConfigError(scope + "." + key + " must be a string");
    return j.at(key).get<std::string>();
}

}  // namespace cfgdetail

inline Variant parse_variant(const std::string& name) {
    if (name == "none") return Variant::none;
    if (name == "ret-s") return Variant::ret_s;
    if (name == "ret-c") return Variant::ret_c;
    throw ConfigError("variant must be one of none, ret-s, ret-c (got '" + name + "')");
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
    using namespace cfgdetail;
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    check_keys(j, "config",
               {"seed", "out_dir", "generator", "rollout", "model", "train", "ood", "ablate"});

    RunConfig c;
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer())
            throw ConfigError("config.seed must be an integer");
        c.seed = j.at("seed").get<std::uint64_t>();
    }
    c.out_dir = get_str(j, "config", "out_dir", c.out_dir);

    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        if (!g.is_object()) throw ConfigError("config.generator must be an object");
        check_keys(g, "generator",
                   {"train_scenarios", "val_scenarios", "duration_steps", "maneuver_weights",
                    "bias_accel_std", "bias_drift_std", "context_agents", "interaction",
                    "lead_prob", "interaction_gain", "interaction_range", "noise_std"});
        c.train_scenarios = get_int(g, "generator", "train_scenarios", c.train_scenarios);
        c.val_scenarios = get_int(g, "generator", "val_scenarios", c.val_scenarios);
        c.generator.duration_steps = get_int(g, "generator", "duration_steps",
                                             c.generator.duration_steps);
        if (g.contains("maneuver_weights")) {
            const auto& w = g.at("maneuver_weights");
            if (!w.is_object()) throw ConfigError("generator.maneuver_weights must be an object");
            check_keys(w, "generator.maneuver_weights",
                       {"const_velocity", "const_accel", "lane_change", "turn"});
            c.generator.w_const_velocity = get_num(w, "generator.maneuver_weights",
                                                   "const_velocity", c.generator.w_const_velocity);
            c.generator.w_const_accel = get_num(w, "generator.maneuver_weights", "const_accel",
                                                c.generator.w_const_accel);
            c.generator.w_lane_change = get_num(w, "generator.maneuver_weights", "lane_change",
                                                c.generator.w_lane_change);
            c.generator.w_turn = get_num(w, "generator.maneuver_weights", "turn", c.generator.w_turn);
        }
        c.generator.bias_accel_std = get_num(g, "generator", "bias_accel_std",
                                             c.generator.bias_accel_std);
        c.generator.bias_drift_std = get_num(g, "generator", "bias_drift_std",
                                             c.generator.bias_drift_std);
        c.generator.context_agents = get_int(g, "generator", "context_agents",
                                             c.generator.context_agents);
        c.generator.interaction = get_bool(g, "generator", "interaction", c.generator.interaction);
        c.generator.lead_prob = get_num(g, "generator", "lead_prob", c.generator.lead_prob);
        c.generator.interaction_gain = get_num(g, "generator", "interaction_gain",
                                               c.generator.interaction_gain);
        c.generator.interaction_range = get_num(g, "generator", "interaction_range",
                                                c.generator.interaction_range);
        c.generator.noise_std = get_num(g, "generator", "noise_std", c.generator.noise_std);
    }

    if (j.contains("rollout")) {
        const auto& r = j.at("rollout");
        if (!r.is_object()) throw ConfigError("config.rollout must be an object");
        check_keys(r, "rollout", {"history_steps", "future_steps", "rollout_steps", "stride",
                                  "mode_count", "buffer_len", "dt"});
        c.rollout.history_steps = get_int(r, "rollout", "history_steps", c.rollout.history_steps);
        c.rollout.future_steps = get_int(r, "rollout", "future_steps", c.rollout.future_steps);
        c.rollout.rollout_steps = get_int(r, "rollout", "rollout_steps", c.rollout.rollout_steps);
        c.rollout.stride = get_int(r, "rollout", "stride", c.rollout.stride);
        c.rollout.mode_count = get_int(r, "rollout", "mode_count", c.rollout.mode_count);
        c.rollout.buffer_len = get_int(r, "rollout", "buffer_len", c.rollout.buffer_len);
        c.rollout.dt = get_num(r, "rollout", "dt", c.rollout.dt);
    }

    if (j.contains("model")) {
        const auto& m = j.at("model");
        if (!m.is_object()) throw ConfigError("config.model must be an object");
        check_keys(m, "model", {"predictor", "retro"});
        if (m.contains("predictor")) {
            const auto& p = m.at("predictor");
            check_keys(p, "model.predictor", {"m_max", "agent_hidden", "agent_embed",
                                              "encoder_hidden", "latent", "input_scale"});
            c.predictor.m_max = get_int(p, "model.predictor", "m_max", c.predictor.m_max);
            c.predictor.agent_hidden = get_int(p, "model.predictor", "agent_hidden",
                                               c.predictor.agent_hidden);
            c.predictor.agent_embed = get_int(p, "model.predictor", "agent_embed",
                                              c.predictor.agent_embed);
            c.predictor.encoder_hidden = get_int(p, "model.predictor", "encoder_hidden",
                                                 c.predictor.encoder_hidden);
            c.predictor.latent = get_int(p, "model.predictor", "latent", c.predictor.latent);
            c.predictor.input_scale = get_num(p, "model.predictor", "input_scale",
                                              c.predictor.input_scale);
        }
        if (m.contains("retro")) {
            const auto& p = m.at("retro");
            check_keys(p, "model.retro",
                       {"d_model", "token_hidden", "query_hidden", "rets_mean_pool",
                        "buffer_stores_raw", "input_scale", "query_scale"});
            c.retro.d_model = get_int(p, "model.retro", "d_model", c.retro.d_model);
            c.retro.token_hidden = get_int(p, "model.retro", "token_hidden", c.retro.token_hidden);
            c.retro.query_hidden = get_int(p, "model.retro", "query_hidden", c.retro.query_hidden);
            c.retro.rets_mean_pool = get_bool(p, "model.retro", "rets_mean_pool",
                                              c.retro.rets_mean_pool);
            c.retro.buffer_stores_raw = get_bool(p, "model.retro", "buffer_stores_raw",
                                                 c.retro.buffer_stores_raw);
            c.retro.input_scale = get_num(p, "model.retro", "input_scale", c.retro.input_scale);
            c.retro.query_scale = get_num(p, "model.retro", "query_scale", c.retro.query_scale);
        }
    }

    if (j.contains("train")) {
        const auto& t = j.at("train");
        if (!t.is_object()) throw ConfigError("config.train must be an object");
        check_keys(t, "train",
                   {"variant", "epochs", "batch_size", "lr", "lambda_ce", "patience",
                    "warmup_epochs"});
        c.variant = parse_variant(get_str(t, "train", "variant", variant_name(c.variant)));
        c.epochs = get_int(t, "train", "epochs", c.epochs);
        c.batch_size = get_int(t, "train", "batch_size", c.batch_size);
        c.lr = get_num(t, "train", "lr", c.lr);
        c.lambda_ce = get_num(t, "train", "lambda_ce", c.lambda_ce);
        c.patience = get_int(t, "train", "patience", c.patience);
        c.warmup_epochs = get_int(t, "train", "warmup_epochs", c.warmup_epochs);
    }

    if (j.contains("ood")) {
        const auto& o = j.at("ood");
        if (!o.is_object()) throw ConfigError("config.ood must be an object");
        check_keys(o, "ood", {"drop_fraction"});
        c.ood_fraction = get_num(o, "ood", "drop_fraction", c.ood_fraction);
        if (c.ood_fraction < 0.0 || c.ood_fraction > 1.0)
            throw ConfigError("ood.drop_fraction must lie in [0, 1]");
    }

    if (j.contains("ablate")) {
        const auto& a = j.at("ablate");
        if (!a.is_object()) throw ConfigError("config.ablate must be an object");
        check_keys(a, "ablate", {"buffer_lengths"});
        if (a.contains("buffer_lengths")) {
            if (!a.at("buffer_lengths").is_array())
                throw ConfigError("ablate.buffer_lengths must be an array of integers");
            c.ablate_lengths.clear();
            for (const auto& v : a.at("buffer_lengths")) {
                if (!v.is_number_integer())
                    throw ConfigError("ablate.buffer_lengths must be an array of integers");
                c.ablate_lengths.push_back(v.get<int>());
            }
        }
    }
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

inline nlohmann::json run_config_json(const RunConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["generator"] = {
        {"train_scenarios", c.train_scenarios},
        {"val_scenarios", c.val_scenarios},
        {"duration_steps", c.generator.duration_steps},
        {"maneuver_weights",
         {{"const_velocity", c.generator.w_const_velocity},
          {"const_accel", c.generator.w_const_accel},
          {"lane_change", c.generator.w_lane_change},
          {"turn", c.generator.w_turn}}},
        {"bias_accel_std", c.generator.bias_accel_std},
        {"bias_drift_std", c.generator.bias_drift_std},
        {"context_agents", c.generator.context_agents},
        {"interaction", c.generator.interaction},
        {"lead_prob", c.generator.lead_prob},
        {"interaction_gain", c.generator.interaction_gain},
        {"interaction_range", c.generator.interaction_range},
        {"noise_std", c.generator.noise_std},
    };
    j["rollout"] = {
        {"history_steps", c.rollout.history_steps},   {"future_steps", c.rollout.future_steps},
        {"rollout_steps", c.rollout.rollout_steps},   {"stride", c.rollout.stride},
        {"mode_count", c.rollout.mode_count},         {"buffer_len", c.rollout.buffer_len},
        {"dt", c.rollout.dt},
    };
    j["model"] = {
        {"predictor",
         {{"m_max", c.predictor.m_max},
          {"agent_hidden", c.predictor.agent_hidden},
          {"agent_embed", c.predictor.agent_embed},
          {"encoder_hidden", c.predictor.encoder_hidden},
          {"latent", c.predictor.latent},
          {"input_scale", c.predictor.input_scale}}},
        {"retro",
         {{"d_model", c.retro.d_model},
          {"token_hidden", c.retro.token_hidden},
          {"query_hidden", c.retro.query_hidden},
          {"rets_mean_pool", c.retro.rets_mean_pool},
          {"buffer_stores_raw", c.retro.buffer_stores_raw},
          {"input_scale", c.retro.input_scale},
          {"query_scale", c.retro.query_scale}}},
    };
    j["train"] = {
        {"variant", variant_name(c.variant)}, {"epochs", c.epochs},
        {"batch_size", c.batch_size},         {"lr", c.lr},
        {"lambda_ce", c.lambda_ce},           {"patience", c.patience},
        {"warmup_epochs", c.warmup_epochs},
    };
    j["ood"] = {{"drop_fraction", c.ood_fraction}};
    j["ablate"] = {{"buffer_lengths", c.ablate_lengths}};
    return j;
}

// Hash over the fields that determine data and model identity. Output
// plumbing (out_dir) and the experiment selections (ood, ablate) stay out so
// a checkpoint remains valid when only those change.
inline std::string config_hash(const RunConfig& c) {
    nlohmann::json j = run_config_json(c);
    j.erase("out_dir");
    j.erase("ood");
    j.erase("ablate");
    std::uint64_t h = fnv1a(j.dump());
    char buf[17];
    static const char* digits = "0123456789abcdef";
    for (int i = 15; i >= 0; --i) {
        buf[i] = digits[h & 0xf];
        h >>= 4;
    }
    buf[16] = '\0';
    return std::string(buf);
}

inline GeneratorConfig generator_for_split(const RunConfig& c, bool val_split) {
    GeneratorConfig g = c.generator;
    g.rollout = c.rollout;
    g.scenario_count = val_split ? c.val_scenarios : c.train_scenarios;
    g.seed = substream_seed(c.seed, "data", val_split ? 1 : 0);
    return g;
}

inline TrainConfig train_config(const RunConfig& c) {
    TrainConfig t;
    t.epochs = c.epochs;
    t.batch_size = c.batch_size;
    t.lr = c.lr;
    t.loss.lambda_ce = c.lambda_ce;
    t.patience = c.patience;
    t.warmup_epochs = c.warmup_epochs;
    t.seed = c.seed;
    return t;
}

inline ModelBundle make_bundle(const RunConfig& c) {
    return ModelBundle::create(c.rollout, c.predictor, c.retro, c.variant, c.seed);
}

constexpr const char* kCheckpointFormat = "retroloop-ckpt-1";

struct Checkpoint {
    std::string config_hash;
    std::string variant;
    int epoch = 0;
    std::vector<std::pair<std::string, Matrix>> params;
};

inline void save_checkpoint(const std::string& path, const ParamStore& store,
                            const std::string& hash, Variant variant, int epoch) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["config_hash"] = hash;
    j["variant"] = variant_name(variant);
    j["epoch"] = epoch;
    nlohmann::json params = nlohmann::json::array();
    for (int i = 0; i < store.count(); ++i) {
        const Param& p = store.at(i);
        nlohmann::json entry;
        entry["name"] = p.name;
        entry["rows"] = p.value.rows();
        entry["cols"] = p.value.cols();
        entry["data"] = p.value.raw();
        params.push_back(std::move(entry));
    }
    j["params"] = std::move(params);
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open checkpoint for writing: " + path);
    out << j.dump() << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("checkpoint " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object() || j.value("format", "") != kCheckpointFormat)
        throw ConfigError("checkpoint " + path + " has an unknown format");
    Checkpoint c;
    c.config_hash = j.value("config_hash", "");
    c.variant = j.value("variant", "");
    c.epoch = j.value("epoch", 0);
    for (const auto& entry : j.at("params")) {
        int rows = entry.at("rows").get<int>();
        int cols = entry.at("cols").get<int>();
        Matrix m(rows, cols);
        const auto& data = entry.at("data");
        if (static_cast<int>(data.size()) != rows * cols)
            throw ConfigError("checkpoint parameter " + entry.at("name").get<std::string>() +
                              " has inconsistent shape");
        for (std::size_t i = 0; i < data.size(); ++i) m.raw()[i] = data[i].get<double>();
        c.params.emplace_back(entry.at("name").get<std::string>(), std::move(m));
    }
    return c;
}

inline void apply_checkpoint(const Checkpoint& c, ParamStore& store) {
    if (static_cast<int>(c.params.size()) != store.count())
        throw ConfigError("checkpoint holds " + std::to_string(c.params.size()) +
                          " parameters, model expects " + std::to_string(store.count()));
    for (const auto& [name, value] : c.params) {
        Param* p = store.find(name);
        if (!p) throw ConfigError("checkpoint parameter " + name + " is unknown to the model");
        if (!p->value.same_shape(value))
            throw ConfigError("checkpoint parameter " + name + " has the wrong shape");
        p->value = value;
    }
}

inline void write_manifest(const std::string& path, const std::string& command,
                           const RunConfig& c, const std::vector<std::string>& outputs) {
    nlohmann::json j;
    j["tool"] = "retroloop";
    j["manifest_version"] = 1;
    j["command"] = command;
    j["config"] = run_config_json(c);
    j["config_hash"] = config_hash(c);
    j["outputs"] = outputs;
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open manifest for writing: " + path);
    out << j.dump() << "\n";
}

}  // namespace retro
