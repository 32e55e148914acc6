#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "retro/common.hpp"

namespace retro {

struct Waypoint {
    double x = 0.0;
    double y = 0.0;

    Waypoint operator+(const Waypoint& o) const { return {x + o.x, y + o.y}; }
    Waypoint operator-(const Waypoint& o) const { return {x - o.x, y - o.y}; }
    Waypoint operator*(double s) const { return {x * s, y * s}; }
    bool operator==(const Waypoint& o) const { return x == o.x && y == o.y; }
};

inline double norm(const Waypoint& w) { return std::hypot(w.x, w.y); }
inline double distance(const Waypoint& a, const Waypoint& b) { return norm(a - b); }

struct Trajectory {
    std::vector<Waypoint> waypoints;
    double dt = 0.5;  // seconds per step

    std::size_t length() const { return waypoints.size(); }
    const Waypoint& back() const { return waypoints.back(); }
};

// A tracked agent's past: T_h+1 points covering indices -T_h..0 inclusive.
struct AgentTrack {
    std::string agent_id;
    Trajectory history;
};

// One prediction instance inside a rollout. step_index runs 1..R.
struct Sample {
    int step_index = 1;
    AgentTrack target;
    std::vector<AgentTrack> context;
    Trajectory future;  // ground truth, length T_f
};

struct RolloutConfig {
    int history_steps = 4;   // T_h: past steps before the prediction time
    int future_steps = 12;   // T_f: predicted steps
    int rollout_steps = 7;   // R: consecutive samples per scenario
    int stride = 1;          // prediction timesteps between samples
    int mode_count = 5;      // K
    int buffer_len = 6;      // B
    double dt = 0.5;

    // Tracked timesteps a scenario must provide to host one full rollout.
    int min_scenario_steps() const {
        return (history_steps + 1) + future_steps + stride * (rollout_steps - 1);
    }
};

struct PredictionSet {
    std::vector<Trajectory> modes;  // K trajectories of length T_f
    std::vector<double> probs;      // nonnegative, sum to 1

    int argmax_prob() const {
        int best = 0;
        for (std::size_t k = 1; k < probs.size(); ++k)
            if (probs[k] > probs[best]) best = static_cast<int>(k);
        return best;
    }
};

// Full synthetic scene: complete tracks for every agent plus generator-only
// metadata. Models never see `clean` futures ahead of time nor the bias
// fields; they are exported only through extract_rollout.
struct Scenario {
    struct Agent {
        std::string agent_id;
        std::vector<Waypoint> clean;     // true kinematics
        std::vector<Waypoint> observed;  // clean + per-timestep observation noise
    };

    std::string scenario_id;
    std::string target_id;
    std::vector<Agent> agents;
    double dt = 0.5;

    // Latent bias metadata (hidden from model inputs).
    double bias_accel = 0.0;  // m/s^2, along heading
    double bias_drift = 0.0;  // m/s, lateral
    int bias_onset = 0;       // timestep where the bias starts acting

    const Agent* find_agent(const std::string& id) const {
        for (const auto& a : agents)
            if (a.agent_id == id) return &a;
        return nullptr;
    }
};

struct Rollout {
    std::string scenario_id;
    RolloutConfig config;  // K and B carry model-side defaults; geometry fields bind the data
    std::vector<Sample> samples;
};

struct RolloutDataset {
    std::vector<Rollout> rollouts;
};

inline bool finite(const Waypoint& w) { return std::isfinite(w.x) && std::isfinite(w.y); }

inline bool finite(const Trajectory& t) {
    for (const auto& w : t.waypoints)
        if (!finite(w)) return false;
    return true;
}

// Diagnostic invariant check; returns every violation rather than throwing.
// Pass the prediction produced for this sample to also vet PredictionSet
// invariants.
inline std::vector<std::string> validate_sample(const Sample& s, const RolloutConfig& cfg,
                                                const PredictionSet* pred = nullptr) {
    std::vector<std::string> out;
    auto expect_history = static_cast<std::size_t>(cfg.history_steps + 1);
    if (s.target.history.length() != expect_history)
        out.push_back("target history length " + std::to_string(s.target.history.length()) +
                      " != " + std::to_string(expect_history));
    if (!finite(s.target.history)) out.push_back("target history has non-finite waypoint");
    if (s.target.history.dt <= 0.0) out.push_back("target history dt not positive");
    for (const auto& c : s.context) {
        if (c.history.length() != expect_history)
            out.push_back("context agent " + c.agent_id + " history length " +
                          std::to_string(c.history.length()));
        if (!finite(c.history)) out.push_back("context agent " + c.agent_id + " non-finite");
        if (c.agent_id == s.target.agent_id)
            out.push_back("target " + s.target.agent_id + " repeated in context");
    }
    if (s.future.length() != static_cast<std::size_t>(cfg.future_steps))
        out.push_back("future length " + std::to_string(s.future.length()) + " != " +
                      std::to_string(cfg.future_steps));
    if (!finite(s.future)) out.push_back("future has non-finite waypoint");
    if (s.step_index < 1 || s.step_index > cfg.rollout_steps)
        out.push_back("step index " + std::to_string(s.step_index) + " outside 1.." +
                      std::to_string(cfg.rollout_steps));
    if (pred) {
        if (pred->modes.size() != pred->probs.size())
            out.push_back("prediction mode/prob count mismatch");
        double sum = 0.0;
        for (double p : pred->probs) {
            if (p < 0.0) out.push_back("negative mode probability");
            sum += p;
        }
        if (!pred->probs.empty() && std::abs(sum - 1.0) > 1e-6)
            out.push_back("mode probabilities sum to " + std::to_string(sum));
        for (const auto& m : pred->modes)
            if (m.length() != static_cast<std::size_t>(cfg.future_steps))
                out.push_back("prediction mode length " + std::to_string(m.length()));
    }
    return out;
}

}  // namespace retro
