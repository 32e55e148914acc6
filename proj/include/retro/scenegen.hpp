#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "retro/common.hpp"
#include "retro/domain.hpp"

namespace retro {

template <typename T>
struct Expected {
    std::optional<T> value;
    std::string error;

    bool ok() const { return value.has_value(); }
    T& operator*() { return *value; }
    const T& operator*() const { return *value; }
    T* operator->() { return &*value; }
    const T* operator->() const { return &*value; }
};

enum class ManeuverKind { constant_velocity, constant_accel, lane_change, turn };

struct GeneratorConfig {
    int scenario_count = 2000;
    int duration_steps = 24;  // tracked timesteps per scenario
    RolloutConfig rollout;

    // Maneuver mix weights (normalized at sampling time).
    double w_const_velocity = 0.22;
    double w_const_accel = 0.15;
    double w_lane_change = 0.38;
    double w_turn = 0.25;

    // Per-scenario latent bias, sampled once and held fixed. The bias starts
    // acting at the first prediction timestep, so step-1 histories carry no
    // trace of it.
    double bias_accel_std = 0.5;   // m/s^2 along the path
    double bias_drift_std = 0.10;  // m/s lateral

    int context_agents = 8;  // M, including the lead when present
    bool interaction = true;
    double lead_prob = 0.75;
    double interaction_gain = 4.0;    // decel = gain / gap
    double interaction_range = 18.0;  // meters along path
    double noise_std = 0.3;           // observation noise per coordinate

    uint64_t seed = 1;
};

namespace detail {

// Target centerline: a straight ray or a circular arc, parametrized by path
// length. The lateral maneuver profile rides on the unit left normal.
struct Path {
    bool is_arc = false;
    Waypoint p0;
    double heading = 0.0;
    Waypoint center;
    double radius = 1.0;
    double ang0 = 0.0;
    double turn_sign = 1.0;

    Waypoint at(double s) const {
        if (!is_arc) return {p0.x + std::cos(heading) * s, p0.y + std::sin(heading) * s};
        double a = ang0 + turn_sign * s / radius;
        return {center.x + radius * std::cos(a), center.y + radius * std::sin(a)};
    }

    Waypoint left_normal(double s) const {
        if (!is_arc) return {-std::sin(heading), std::cos(heading)};
        double a = ang0 + turn_sign * s / radius;
        // tangent = sign * (-sin a, cos a); left normal = rotate tangent +90deg
        return {-turn_sign * std::cos(a), -turn_sign * std::sin(a)};
    }

    static Path straight(Waypoint start, double heading) {
        Path p;
        p.p0 = start;
        p.heading = heading;
        return p;
    }

    static Path arc(Waypoint start, double heading, double radius, double sign) {
        Path p;
        p.is_arc = true;
        p.radius = radius;
        p.turn_sign = sign;
        // start at angle such that at(0) == start and the tangent matches heading
        p.ang0 = heading - sign * M_PI / 2.0;
        p.center = {start.x - radius * std::cos(p.ang0), start.y - radius * std::sin(p.ang0)};
        return p;
    }
};

}  // namespace detail

// Builds one scenario. The override pointers pin the latent bias without
// disturbing any other random draw (each concern has its own substream), which
// is what the bias-invisibility test leans on.
inline Scenario generate_scenario(const GeneratorConfig& cfg, int index,
                                  const double* accel_override = nullptr,
                                  const double* drift_override = nullptr) {
    const int n = cfg.duration_steps;
    const double dt = cfg.rollout.dt;
    const int onset = cfg.rollout.history_steps;

    Rng man = substream(cfg.seed, "maneuver", static_cast<uint64_t>(index));
    Rng ctx = substream(cfg.seed, "context", static_cast<uint64_t>(index));
    Rng bias_rng = substream(cfg.seed, "bias", static_cast<uint64_t>(index));
    Rng noise = substream(cfg.seed, "noise", static_cast<uint64_t>(index));

    Scenario sc;
    sc.scenario_id = "s" + std::to_string(index);
    sc.target_id = "t0";
    sc.dt = dt;
    sc.bias_onset = onset;

    // --- maneuver ---
    double wsum = cfg.w_const_velocity + cfg.w_const_accel + cfg.w_lane_change + cfg.w_turn;
    double pick = man.uniform() * wsum;
    ManeuverKind kind;
    if ((pick -= cfg.w_const_velocity) < 0.0) kind = ManeuverKind::constant_velocity;
    else if ((pick -= cfg.w_const_accel) < 0.0) kind = ManeuverKind::constant_accel;
    else if ((pick -= cfg.w_lane_change) < 0.0) kind = ManeuverKind::lane_change;
    else kind = ManeuverKind::turn;

    Waypoint start{man.uniform(-40.0, 40.0), man.uniform(-40.0, 40.0)};
    double heading = man.uniform(-M_PI, M_PI);
    double v0 = man.uniform(8.0, 14.0);

    double maneuver_accel = 0.0;
    double weave_amp = 0.0;
    double weave_period = 1.0;
    double weave_phase = 0.0;
    detail::Path path = detail::Path::straight(start, heading);
    switch (kind) {
        case ManeuverKind::constant_velocity:
            break;
        case ManeuverKind::constant_accel:
            maneuver_accel = man.uniform(-0.7, 0.7);
            break;
        case ManeuverKind::lane_change: {
            // Sinusoidal weaving between lane boundaries. The oscillation has
            // no onset and a uniformly random phase, so every rollout step
            // faces the same difficulty; amplitude and period are sampled per
            // scenario, which a short history window cannot pin down.
            weave_amp = man.uniform(1.0, 2.2);
            weave_period = man.uniform(5.0, 9.0);  // seconds
            weave_phase = man.uniform(0.0, 2.0 * M_PI);
            break;
        }
        case ManeuverKind::turn: {
            double radius = man.uniform(15.0, 60.0);
            double sign = man.bernoulli(0.5) ? 1.0 : -1.0;
            path = detail::Path::arc(start, heading, radius, sign);
            break;
        }
    }

    // --- latent bias ---
    double bias_accel = bias_rng.normal(0.0, cfg.bias_accel_std);
    double bias_drift = bias_rng.normal(0.0, cfg.bias_drift_std);
    if (accel_override) bias_accel = *accel_override;
    if (drift_override) bias_drift = *drift_override;
    sc.bias_accel = bias_accel;
    sc.bias_drift = bias_drift;

    // --- context agents ---
    // Slot 0 may be a lead vehicle on the target's own path; the rest are
    // traffic in adjacent lanes following the same road geometry at their own
    // constant speeds. Keeping the context flowing with the road keeps its
    // local-frame statistics the same at every rollout step, so the context
    // encoder sees one distribution instead of a per-step drift.
    // The initial gap spreads braking onsets roughly uniformly over the
    // episode (near gaps brake immediately, far ones close in later, the
    // farthest never), so no rollout step sees a systematically easier mix.
    bool lead = cfg.interaction && cfg.context_agents > 0 && ctx.bernoulli(cfg.lead_prob);
    double lead_gap0 = ctx.uniform(12.0, 60.0);
    double lead_speed = v0 * ctx.uniform(0.88, 1.0);

    struct Mover {
        double along0;
        double across;
        double speed;
    };
    std::vector<Mover> movers;
    for (int a = lead ? 1 : 0; a < cfg.context_agents; ++a) {
        Mover m;
        m.along0 = ctx.uniform(-30.0, 45.0);
        m.across = (ctx.bernoulli(0.5) ? 1.0 : -1.0) * ctx.uniform(3.0, 11.0);
        m.speed = v0 * ctx.uniform(0.85, 1.05);
        movers.push_back(m);
    }

    // --- target kinematics along the path ---
    std::vector<double> s(n, 0.0), v(n, v0);
    for (int i = 0; i + 1 < n; ++i) {
        double a = maneuver_accel;
        if (lead) {
            double gap = (lead_gap0 + lead_speed * i * dt) - s[i];
            if (gap > 0.0 && gap < cfg.interaction_range)
                a -= cfg.interaction_gain / std::max(gap, 2.0);
        }
        if (i >= onset) a += bias_accel;
        double v_next = v[i] + a * dt;
        if (v_next < 0.0) {  // no reversing: stop within the step instead
            a = -v[i] / dt;
            v_next = 0.0;
        }
        s[i + 1] = s[i] + v[i] * dt + 0.5 * a * dt * dt;
        v[i + 1] = v_next;
    }

    auto lane_profile = [&](int i) {
        if (kind != ManeuverKind::lane_change) return 0.0;
        return weave_amp * std::sin(2.0 * M_PI * i * dt / weave_period + weave_phase);
    };

    Scenario::Agent target;
    target.agent_id = sc.target_id;
    target.clean.resize(n);
    for (int i = 0; i < n; ++i) {
        double lat = lane_profile(i) + bias_drift * std::max(0, i - onset) * dt;
        Waypoint c = path.at(s[i]);
        Waypoint nrm = path.left_normal(s[i]);
        target.clean[i] = {c.x + lat * nrm.x, c.y + lat * nrm.y};
    }
    sc.agents.push_back(std::move(target));

    if (lead) {
        Scenario::Agent la;
        la.agent_id = "a1";
        la.clean.resize(n);
        for (int i = 0; i < n; ++i) la.clean[i] = path.at(lead_gap0 + lead_speed * i * dt);
        sc.agents.push_back(std::move(la));
    }
    for (std::size_t m = 0; m < movers.size(); ++m) {
        Scenario::Agent ag;
        ag.agent_id = "a" + std::to_string(m + (lead ? 2 : 1));
        ag.clean.resize(n);
        const Mover& mv = movers[m];
        for (int i = 0; i < n; ++i) {
            double sm = mv.along0 + mv.speed * i * dt;
            Waypoint c = path.at(sm);
            Waypoint nrm = path.left_normal(sm);
            ag.clean[i] = {c.x + mv.across * nrm.x, c.y + mv.across * nrm.y};
        }
        sc.agents.push_back(std::move(ag));
    }

    // --- observation noise, one draw per agent per timestep ---
    for (auto& ag : sc.agents) {
        ag.observed = ag.clean;
        if (cfg.noise_std > 0.0) {
            for (auto& w : ag.observed) {
                w.x += noise.normal(0.0, cfg.noise_std);
                w.y += noise.normal(0.0, cfg.noise_std);
            }
        }
    }
    return sc;
}

inline std::vector<Scenario> generate_scenarios(const GeneratorConfig& cfg) {
    std::vector<Scenario> out;
    out.reserve(cfg.scenario_count);
    for (int i = 0; i < cfg.scenario_count; ++i) out.push_back(generate_scenario(cfg, i));
    return out;
}

// Cuts R consecutive samples out of a scenario: sample r predicts from
// timestep T_h + (r-1)*stride. Histories come from the noisy observed tracks,
// futures from the clean ones.
inline Expected<Rollout> extract_rollout(const Scenario& sc, const RolloutConfig& cfg) {
    Expected<Rollout> res;
    const Scenario::Agent* target = sc.find_agent(sc.target_id);
    if (!target) {
        res.error = "scenario " + sc.scenario_id + ": target track missing";
        return res;
    }
    int need = cfg.min_scenario_steps();
    int have = static_cast<int>(target->clean.size());
    if (have < need) {
        res.error = "scenario " + sc.scenario_id + ": target tracked for " + std::to_string(have) +
                    " timesteps, rollout needs " + std::to_string(need);
        return res;
    }

    Rollout r;
    r.scenario_id = sc.scenario_id;
    r.config = cfg;
    r.config.dt = sc.dt;
    for (int step = 1; step <= cfg.rollout_steps; ++step) {
        int p = cfg.history_steps + (step - 1) * cfg.stride;
        Sample smp;
        smp.step_index = step;
        smp.target.agent_id = target->agent_id;
        smp.target.history.dt = sc.dt;
        for (int i = p - cfg.history_steps; i <= p; ++i)
            smp.target.history.waypoints.push_back(target->observed[i]);
        smp.future.dt = sc.dt;
        for (int i = p + 1; i <= p + cfg.future_steps; ++i)
            smp.future.waypoints.push_back(target->clean[i]);
        for (const auto& ag : sc.agents) {
            if (ag.agent_id == sc.target_id) continue;
            AgentTrack t;
            t.agent_id = ag.agent_id;
            t.history.dt = sc.dt;
            for (int i = p - cfg.history_steps; i <= p; ++i)
                t.history.waypoints.push_back(ag.observed[i]);
            smp.context.push_back(std::move(t));
        }
        r.samples.push_back(std::move(smp));
    }
    res.value = std::move(r);
    return res;
}

inline RolloutDataset extract_dataset(const std::vector<Scenario>& scenarios,
                                      const RolloutConfig& cfg) {
    RolloutDataset ds;
    for (const auto& sc : scenarios) {
        Expected<Rollout> r = extract_rollout(sc, cfg);
        if (r.ok()) ds.rollouts.push_back(std::move(*r));
    }
    return ds;
}

// Hides a seeded Bernoulli subset of non-target agents from every step of the
// rollout. Ground truth is untouched: the dropped agents still shaped it.
inline Rollout drop_agents(const Rollout& rollout, double fraction, uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0) throw ConfigError("drop fraction outside [0,1]");
    auto dropped = [&](const std::string& agent_id) {
        Rng r = substream(seed, "drop", fnv1a(rollout.scenario_id), fnv1a(agent_id));
        return r.uniform() < fraction;
    };
    Rollout out = rollout;
    for (auto& smp : out.samples) {
        std::vector<AgentTrack> kept;
        for (auto& c : smp.context)
            if (!dropped(c.agent_id)) kept.push_back(std::move(c));
        smp.context = std::move(kept);
    }
    return out;
}

// --- JSONL persistence -------------------------------------------------
// One JSON object per line per rollout:
// {"scenario_id": str, "config": {T_h,T_f,R,stride,dt}, "samples": [
//   {"i": int, "target": {"id": str, "history": [[x,y],..]},
//    "context": [{"id": str, "history": [[x,y],..]},..], "future": [[x,y],..]}]}

namespace detail {

inline nlohmann::json points_json(const std::vector<Waypoint>& pts) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& w : pts) arr.push_back({w.x, w.y});
    return arr;
}

inline std::vector<Waypoint> points_from_json(const nlohmann::json& arr) {
    std::vector<Waypoint> pts;
    for (const auto& p : arr) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    return pts;
}

}  // namespace detail

inline void write_jsonl(const RolloutDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open for writing: " + path);
    for (const auto& r : ds.rollouts) {
        nlohmann::json j;
        j["scenario_id"] = r.scenario_id;
        j["config"] = {{"T_h", r.config.history_steps},
                       {"T_f", r.config.future_steps},
                       {"R", r.config.rollout_steps},
                       {"stride", r.config.stride},
                       {"dt", r.config.dt}};
        nlohmann::json samples = nlohmann::json::array();
        for (const auto& s : r.samples) {
            nlohmann::json js;
            js["i"] = s.step_index;
            js["target"] = {{"id", s.target.agent_id},
                            {"history", detail::points_json(s.target.history.waypoints)}};
            nlohmann::json ctx = nlohmann::json::array();
            for (const auto& c : s.context)
                ctx.push_back({{"id", c.agent_id},
                               {"history", detail::points_json(c.history.waypoints)}});
            js["context"] = ctx;
            js["future"] = detail::points_json(s.future.waypoints);
            samples.push_back(std::move(js));
        }
        j["samples"] = std::move(samples);
        out << j.dump() << '\n';
    }
}

inline RolloutDataset read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open for reading: " + path);
    RolloutDataset ds;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
        }
        try {
            Rollout r;
            r.scenario_id = j.at("scenario_id").get<std::string>();
            const auto& c = j.at("config");
            r.config.history_steps = c.at("T_h").get<int>();
            r.config.future_steps = c.at("T_f").get<int>();
            r.config.rollout_steps = c.at("R").get<int>();
            r.config.stride = c.at("stride").get<int>();
            r.config.dt = c.at("dt").get<double>();
            for (const auto& js : j.at("samples")) {
                Sample s;
                s.step_index = js.at("i").get<int>();
                s.target.agent_id = js.at("target").at("id").get<std::string>();
                s.target.history.dt = r.config.dt;
                s.target.history.waypoints =
                    detail::points_from_json(js.at("target").at("history"));
                for (const auto& jc : js.at("context")) {
                    AgentTrack t;
                    t.agent_id = jc.at("id").get<std::string>();
                    t.history.dt = r.config.dt;
                    t.history.waypoints = detail::points_from_json(jc.at("history"));
                    s.context.push_back(std::move(t));
                }
                s.future.dt = r.config.dt;
                s.future.waypoints = detail::points_from_json(js.at("future"));
                r.samples.push_back(std::move(s));
            }
            ds.rollouts.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("schema violation: ") + e.what(), line_no);
        }
    }
    return ds;
}

}  // namespace retro
