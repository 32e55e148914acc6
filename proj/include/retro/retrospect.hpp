#pragma once

#include <deque>
#include <string>
#include <vector>

#include "retro/nn.hpp"
#include "retro/predictor.hpp"

namespace retro {

enum class Variant { none, ret_s, ret_c };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::none: return "none";
        case Variant::ret_s: return "ret-s";
        case Variant::ret_c: return "ret-c";
    }
    return "none";
}

// One remembered prediction: what the model emitted at origin_step and the
// measurements that have arrived for it since. Coordinates stay in world
// frame; re-expression happens when features are built.
struct BufferEntry {
    int origin_step = 0;
    std::vector<Waypoint> predicted;  // T_f waypoints
    std::vector<Waypoint> measured;   // grows by stride per elapsed step
    TargetFrame frame;                // pose at origin_step
};

// Token input for one buffer age: T_f rows of
// (pred_x, pred_y, meas_x, meas_y, diff_x, diff_y, avail), plus a validity
// flag that distinguishes a never-filled slot from a real zero-error entry.
struct ErrorFeatures {
    Matrix rows;  // T_f x 7
    double validity = 0.0;
};

// Rolling store of the B most recent predictions and their measured outcomes.
class ErrorBuffer {
  public:
    ErrorBuffer(int capacity, int future_steps)
        : capacity_(capacity), future_steps_(future_steps) {
        if (capacity < 1) throw ConfigError("error buffer capacity must be at least 1");
    }

    int capacity() const { return capacity_; }
    int size() const { return static_cast<int>(entries_.size()); }
    const BufferEntry& entry(int i) const { return entries_[i]; }  // 0 = newest

    // Remember the representative (highest-probability) corrected mode.
    void push(const PredictionSet& corrected, const TargetFrame& frame, int step) {
        if (!entries_.empty() && step <= last_step_)
            throw SequencingError("buffer push at step " + std::to_string(step) +
                                  " after step " + std::to_string(last_step_));
        if (corrected.modes.empty()) throw InputError("cannot buffer an empty prediction set");
        BufferEntry e;
        e.origin_step = step;
        e.predicted = corrected.modes[corrected.argmax_prob()].waypoints;
        e.frame = frame;
        entries_.push_front(std::move(e));
        while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_back();
        last_step_ = step;
    }

    // Append one newly measured target position to every entry that still has
    // unmeasured horizon left; saturated entries ignore it.
    void observe(const Waypoint& measured) {
        for (auto& e : entries_)
            if (static_cast<int>(e.measured.size()) < future_steps_) e.measured.push_back(measured);
    }

    // Fixed-length, newest-first feature blocks in the current target frame.
    // Waypoints the system has not measured yet are zeroed with avail=0, so
    // nothing downstream can depend on them.
    std::vector<ErrorFeatures> build_features(const TargetFrame& current) const {
        std::vector<ErrorFeatures> out(capacity_);
        for (int i = 0; i < capacity_; ++i) {
            ErrorFeatures& f = out[i];
            f.rows = Matrix(future_steps_, 7);
            if (i >= size()) continue;
            const BufferEntry& e = entries_[i];
            f.validity = 1.0;
            for (int t = 0; t < future_steps_; ++t) {
                Waypoint p = current.to_local(e.predicted[t]);
                f.rows(t, 0) = p.x;
                f.rows(t, 1) = p.y;
                if (t < static_cast<int>(e.measured.size())) {
                    Waypoint m = current.to_local(e.measured[t]);
                    f.rows(t, 2) = m.x;
                    f.rows(t, 3) = m.y;
                    f.rows(t, 4) = p.x - m.x;
                    f.rows(t, 5) = p.y - m.y;
                    f.rows(t, 6) = 1.0;
                }
            }
        }
        return out;
    }

  private:
    int capacity_;
    int future_steps_;
    std::deque<BufferEntry> entries_;  // newest first
    int last_step_ = 0;
};

struct RetroConfig {
    int d_model = 64;
    int token_hidden = 128;
    int query_hidden = 32;
    bool rets_mean_pool = false;   // ablation: pool tokens instead of flattening
    bool buffer_stores_raw = false;  // ablation: buffer the uncorrected output
    double input_scale = 0.1;
    // Waypoints of the representative mode span the whole prediction horizon,
    // so they need a smaller scale than error vectors to stay in the active
    // range of the query embedding.
    double query_scale = 0.02;
};

// Tokenizer plus the two correction heads. Ret-S self-attends over the buffer
// tokens and maps the flattened sequence to offsets; Ret-C embeds the current
// prediction per waypoint and cross-attends against the buffer.
struct RetroModel {
    RetroConfig cfg;
    int future_steps = 12;
    int buffer_len = 6;
    bool has_ret_s = false;
    bool has_ret_c = false;

    Mlp tokenizer;
    AttentionBlock self_attn;
    DenseLayer rets_head;
    Mlp query_embed;
    AttentionBlock cross_attn;
    DenseLayer retc_head;

    Matrix pe_ages;    // buffer_len x d_model, cached
    Matrix pe_future;  // future_steps x d_model

    static RetroModel create(ParamStore& store, const RolloutConfig& rc, const RetroConfig& cc,
                             bool with_ret_s, bool with_ret_c, Rng& rng) {
        RetroModel m;
        m.cfg = cc;
        m.future_steps = rc.future_steps;
        m.buffer_len = rc.buffer_len;
        m.has_ret_s = with_ret_s;
        m.has_ret_c = with_ret_c;
        int token_in = rc.future_steps * 7 + 1;
        m.tokenizer = Mlp::create(store, "retro.token", {token_in, cc.token_hidden, cc.d_model},
                                  {Activation::relu, Activation::identity}, rng);
        m.pe_ages = sinusoidal_positional_encoding(rc.buffer_len, cc.d_model);
        m.pe_future = sinusoidal_positional_encoding(rc.future_steps, cc.d_model);
        // The offset heads start near zero so a fresh model corrects nothing;
        // large random offsets at init disturb the shared predictor early in
        // joint training.
        auto damped = [&](int rows, int cols) {
            Matrix w = xavier_uniform(rows, cols, rng);
            for (double& v : w.raw()) v *= 0.01;
            return w;
        };
        if (with_ret_s) {
            m.self_attn = AttentionBlock::create(store, "retro.s.attn", cc.d_model, rng);
            int head_in = cc.rets_mean_pool ? cc.d_model : rc.buffer_len * cc.d_model;
            m.rets_head.w = &store.add("retro.s.head.w", damped(head_in, 2 * rc.future_steps));
            m.rets_head.b = &store.add("retro.s.head.b", 1, 2 * rc.future_steps);
        }
        if (with_ret_c) {
            m.query_embed = Mlp::create(store, "retro.c.query", {2, cc.query_hidden, cc.d_model},
                                        {Activation::relu, Activation::identity}, rng);
            m.cross_attn = AttentionBlock::create(store, "retro.c.attn", cc.d_model, rng);
            m.retc_head.w = &store.add("retro.c.head.w", damped(cc.d_model, 2));
            m.retc_head.b = &store.add("retro.c.head.b", 1, 2);
        }
        return m;
    }

    // One token per buffer age: flatten the feature block, append the
    // validity flag, scale position channels to model range, run the MLP.
    Tape::Id tokenize(Tape& t, const std::vector<ErrorFeatures>& feats) const {
        if (static_cast<int>(feats.size()) != buffer_len)
            throw ConfigError("tokenize: expected " + std::to_string(buffer_len) +
                              " feature blocks, got " + std::to_string(feats.size()));
        int token_in = future_steps * 7 + 1;
        Matrix in(buffer_len, token_in);
        for (int b = 0; b < buffer_len; ++b) {
            const Matrix& r = feats[b].rows;
            if (r.rows() != future_steps || r.cols() != 7)
                throw ConfigError("tokenize: feature block shape mismatch");
            for (int i = 0; i < future_steps; ++i) {
                for (int c = 0; c < 4; ++c) in(b, i * 7 + c) = r(i, c) * cfg.input_scale;
                for (int c = 4; c < 7; ++c) in(b, i * 7 + c) = r(i, c);
            }
            in(b, token_in - 1) = feats[b].validity;
        }
        return tokenizer.forward(t, t.constant(std::move(in)));
    }

    // Self-attention head: tokens + age encoding, attended, flattened, mapped
    // linearly to one offset per future step.
    Tape::Id ret_s_offsets(Tape& t, Tape::Id tokens) const {
        if (!has_ret_s) throw ConfigError("ret_s parameters were not created");
        std::vector<bool> keep(buffer_len, true);
        Tape::Id x = t.add(tokens, t.constant_ref(pe_ages));
        Tape::Id attended = self_attn.forward(t, x, x, keep);
        Tape::Id head_in = cfg.rets_mean_pool ? t.mean_rows(attended)
                                              : t.reshape(attended, 1, buffer_len * cfg.d_model);
        return t.reshape(rets_head.forward(t, head_in), future_steps, 2);
    }

    // Cross-attention head: the representative mode (target frame, T_f x 2)
    // becomes per-waypoint queries against the buffer tokens.
    Tape::Id ret_c_offsets(Tape& t, Tape::Id rep_mode_local, Tape::Id tokens) const {
        if (!has_ret_c) throw ConfigError("ret_c parameters were not created");
        if (t.val(rep_mode_local).rows() != future_steps || t.val(rep_mode_local).cols() != 2)
            throw ConfigError("ret_c: representative mode must be T_f x 2");
        std::vector<bool> keep(buffer_len, true);
        Tape::Id q = query_embed.forward(t, t.scale(rep_mode_local, cfg.query_scale));
        q = t.add(q, t.constant_ref(pe_future));
        Tape::Id kv = t.add(tokens, t.constant_ref(pe_ages));
        Tape::Id attended = cross_attn.forward(t, q, kv, keep);
        return retc_head.forward(t, attended);  // row-wise d_model -> 2
    }
};

// Adds target-frame offsets to every mode of a world-frame prediction set.
// Probabilities are untouched.
inline PredictionSet apply_offsets(const PredictionSet& pred, const Matrix& offsets,
                                   const TargetFrame& frame) {
    if (pred.modes.empty()) throw ConfigError("apply_offsets: empty prediction set");
    if (offsets.rows() != static_cast<int>(pred.modes[0].waypoints.size()) || offsets.cols() != 2)
        throw ConfigError("apply_offsets: offsets must be T_f x 2");
    double c = std::cos(frame.rot), s = std::sin(frame.rot);
    PredictionSet out = pred;
    for (auto& mode : out.modes) {
        for (std::size_t i = 0; i < mode.waypoints.size(); ++i) {
            double ox = offsets(static_cast<int>(i), 0);
            double oy = offsets(static_cast<int>(i), 1);
            mode.waypoints[i].x += c * ox - s * oy;
            mode.waypoints[i].y += s * ox + c * oy;
        }
    }
    return out;
}

}  // namespace retro
