#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "retro/domain.hpp"
#include "retro/nn.hpp"

namespace retro {

// Pose of the target at prediction time. Model inputs and outputs live in
// this frame; world coordinates exist only at the boundaries.
struct TargetFrame {
    Waypoint origin;
    double rot = 0.0;  // heading of the last history segment, radians

    Waypoint to_local(const Waypoint& w) const {
        double c = std::cos(rot), s = std::sin(rot);
        Waypoint d = w - origin;
        return {c * d.x + s * d.y, -s * d.x + c * d.y};
    }

    Waypoint to_world(const Waypoint& l) const {
        double c = std::cos(rot), s = std::sin(rot);
        return {origin.x + c * l.x - s * l.y, origin.y + s * l.x + c * l.y};
    }
};

// Heading comes from the last history segment with measurable length; a
// stationary tail falls back to earlier segments, a fully stationary history
// to 0 rad.
inline TargetFrame target_frame(const Trajectory& history) {
    if (history.waypoints.empty()) throw InputError("target frame needs a non-empty history");
    TargetFrame f;
    f.origin = history.waypoints.back();
    for (int i = static_cast<int>(history.waypoints.size()) - 2; i >= 0; --i) {
        Waypoint seg = history.waypoints[i + 1] - history.waypoints[i];
        if (norm(seg) > 1e-12) {
            f.rot = std::atan2(seg.y, seg.x);
            break;
        }
    }
    return f;
}

// Frame-normalized model inputs: the target history flattened to one row and
// up to m_max context agents as rows of (flattened history, validity flag),
// nearest-first, zero-padded. Pure geometry; scaling happens in the model.
struct NormalizedInputs {
    Matrix target;   // 1 x 2*(T_h+1)
    Matrix context;  // m_max x (2*(T_h+1) + 1)
};

inline NormalizedInputs to_target_frame(const Sample& s, const TargetFrame& frame, int m_max) {
    const int hist_pts = static_cast<int>(s.target.history.waypoints.size());
    NormalizedInputs out;
    out.target = Matrix(1, 2 * hist_pts);
    for (int i = 0; i < hist_pts; ++i) {
        Waypoint l = frame.to_local(s.target.history.waypoints[i]);
        out.target(0, 2 * i) = l.x;
        out.target(0, 2 * i + 1) = l.y;
    }

    std::vector<int> order(s.context.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        double da = distance(s.context[a].history.waypoints.back(), frame.origin);
        double db = distance(s.context[b].history.waypoints.back(), frame.origin);
        if (da != db) return da < db;
        return s.context[a].agent_id < s.context[b].agent_id;
    });

    out.context = Matrix(m_max, 2 * hist_pts + 1);
    int slots = std::min<int>(m_max, static_cast<int>(order.size()));
    for (int slot = 0; slot < slots; ++slot) {
        const AgentTrack& agent = s.context[order[slot]];
        if (static_cast<int>(agent.history.waypoints.size()) != hist_pts)
            throw InputError("context agent " + agent.agent_id + " history length mismatch");
        for (int i = 0; i < hist_pts; ++i) {
            Waypoint l = frame.to_local(agent.history.waypoints[i]);
            out.context(slot, 2 * i) = l.x;
            out.context(slot, 2 * i + 1) = l.y;
        }
        out.context(slot, 2 * hist_pts) = 1.0;
    }
    return out;
}

inline Trajectory constant_velocity_predict(const Trajectory& history, int future_steps) {
    if (history.waypoints.size() < 2)
        throw InputError("constant-velocity extrapolation needs at least 2 history points");
    std::size_t n = history.waypoints.size();
    Waypoint last = history.waypoints[n - 1];
    Waypoint step = last - history.waypoints[n - 2];
    Trajectory out;
    out.dt = history.dt;
    for (int k = 1; k <= future_steps; ++k) out.waypoints.push_back(last + step * k);
    return out;
}

struct PredictorConfig {
    int m_max = 8;
    int agent_hidden = 32;
    int agent_embed = 32;
    int encoder_hidden = 64;
    int latent = 64;
    double input_scale = 0.1;  // meters -> roughly unit range
};

// The swappable backbone: encodes the target history plus mean-pooled context
// embeddings into a latent, then decodes K trajectory modes and their logits.
struct Predictor {
    PredictorConfig cfg;
    int history_steps = 4;
    int future_steps = 12;
    int mode_count = 5;

    Mlp agent_mlp;
    Mlp encoder;
    std::vector<DenseLayer> mode_heads;
    DenseLayer prob_head;

    static Predictor create(ParamStore& store, const RolloutConfig& rc,
                            const PredictorConfig& pc, Rng& rng) {
        Predictor p;
        p.cfg = pc;
        p.history_steps = rc.history_steps;
        p.future_steps = rc.future_steps;
        p.mode_count = rc.mode_count;
        int hist_w = 2 * (rc.history_steps + 1);
        p.agent_mlp = Mlp::create(store, "pred.agent", {hist_w + 1, pc.agent_hidden, pc.agent_embed},
                                  {Activation::relu, Activation::relu}, rng);
        p.encoder = Mlp::create(store, "pred.enc", {hist_w + pc.agent_embed, pc.encoder_hidden, pc.latent},
                                {Activation::relu, Activation::relu}, rng);
        for (int k = 0; k < rc.mode_count; ++k) {
            DenseLayer head;
            head.w = &store.add("pred.mode" + std::to_string(k) + ".w",
                                xavier_uniform(pc.latent, 2 * rc.future_steps, rng));
            head.b = &store.add("pred.mode" + std::to_string(k) + ".b", 1, 2 * rc.future_steps);
            p.mode_heads.push_back(head);
        }
        p.prob_head.w = &store.add("pred.prob.w", xavier_uniform(pc.latent, rc.mode_count, rng));
        p.prob_head.b = &store.add("pred.prob.b", 1, rc.mode_count);
        return p;
    }

    struct Forward {
        std::vector<Tape::Id> modes;  // K ids, each T_f x 2 in the target frame
        Tape::Id logits = -1;         // 1 x K
        std::vector<double> probs;    // softmax of logits, value level
    };

    Forward forward(Tape& t, const Sample& s, const TargetFrame& frame) const {
        NormalizedInputs in = to_target_frame(s, frame, cfg.m_max);
        for (double& v : in.target.raw()) v *= cfg.input_scale;
        for (int r = 0; r < in.context.rows(); ++r)
            for (int c = 0; c + 1 < in.context.cols(); ++c) in.context(r, c) *= cfg.input_scale;

        Tape::Id agents = agent_mlp.forward(t, t.constant(std::move(in.context)));
        check_finite(t, agents, "context encoder");
        Tape::Id pooled = t.mean_rows(agents);
        Tape::Id latent =
            encoder.forward(t, t.concat_cols(t.constant(std::move(in.target)), pooled));
        check_finite(t, latent, "history encoder");

        Forward out;
        for (int k = 0; k < mode_count; ++k) {
            Tape::Id flat = mode_heads[k].forward(t, latent);
            out.modes.push_back(t.reshape(flat, future_steps, 2));
            check_finite(t, out.modes.back(), "mode decoder " + std::to_string(k));
        }
        out.logits = prob_head.forward(t, latent);
        check_finite(t, out.logits, "probability head");

        const Matrix& lv = t.val(out.logits);
        double mx = lv(0, 0);
        for (int k = 1; k < mode_count; ++k) mx = std::max(mx, lv(0, k));
        double z = 0.0;
        out.probs.resize(mode_count);
        for (int k = 0; k < mode_count; ++k) {
            out.probs[k] = std::exp(lv(0, k) - mx);
            z += out.probs[k];
        }
        for (double& p : out.probs) p /= z;
        return out;
    }

    // Convenience wrapper producing a world-frame PredictionSet.
    PredictionSet predict(const Sample& s) const {
        Tape t(false);
        TargetFrame frame = target_frame(s.target.history);
        Forward f = forward(t, s, frame);
        PredictionSet set;
        set.probs = f.probs;
        for (int k = 0; k < mode_count; ++k) {
            const Matrix& m = t.val(f.modes[k]);
            Trajectory traj;
            traj.dt = s.target.history.dt;
            for (int i = 0; i < m.rows(); ++i)
                traj.waypoints.push_back(frame.to_world({m(i, 0), m(i, 1)}));
            set.modes.push_back(std::move(traj));
        }
        return set;
    }

  private:
    static void check_finite(Tape& t, Tape::Id id, const std::string& stage) {
        if (!t.val(id).all_finite())
            throw NumericError("predictor " + stage + " produced non-finite values");
    }
};

}  // namespace retro
