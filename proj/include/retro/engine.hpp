#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "retro/adam.hpp"
#include "retro/evalkit.hpp"
#include "retro/predictor.hpp"
#include "retro/retrospect.hpp"
#include "retro/scenegen.hpp"

namespace retro {

struct LossWeights {
    double lambda_ce = 0.1;  // weight on the mode-classification term
};

// Backbone plus (for the retrospection variants) the correction model, all
// parameters living in one store so the optimizer and checkpoints see a flat
// list. Variant none carries no retrospection parameters at all.
struct ModelBundle {
    RolloutConfig rollout;
    Variant variant = Variant::none;

    ParamStore store;
    Predictor predictor;
    RetroModel retro;

    static ModelBundle create(const RolloutConfig& rc, const PredictorConfig& pc,
                              const RetroConfig& cc, Variant v, std::uint64_t seed) {
        ModelBundle b;
        b.rollout = rc;
        b.variant = v;
        Rng init = substream(seed, "init");
        b.predictor = Predictor::create(b.store, rc, pc, init);
        if (v != Variant::none)
            b.retro = RetroModel::create(b.store, rc, cc, v == Variant::ret_s,
                                         v == Variant::ret_c, init);
        return b;
    }
};

// Winner-takes-all regression plus weighted classification. The best mode is
// picked at value level (minimum mean L2 distance to the ground truth), then
// only that mode's squared error enters the differentiable loss.
struct StepLoss {
    Tape::Id loss = -1;
    Tape::Id wta = -1;
    Tape::Id ce = -1;
    int best = 0;
};

inline StepLoss step_loss(Tape& t, const std::vector<Tape::Id>& mode_ids, Tape::Id logits,
                          const Matrix& gt, double lambda_ce) {
    if (mode_ids.empty()) throw InputError("step_loss needs at least one mode");
    if (lambda_ce < 0.0) throw ConfigError("lambda_ce must be nonnegative");
    StepLoss out;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < mode_ids.size(); ++k) {
        const Matrix& m = t.val(mode_ids[k]);
        if (m.rows() != gt.rows() || m.cols() != 2)
            throw ConfigError("step_loss: mode shape does not match ground truth");
        double sum = 0.0;
        for (int i = 0; i < m.rows(); ++i)
            sum += std::hypot(m(i, 0) - gt(i, 0), m(i, 1) - gt(i, 1));
        double mean = sum / m.rows();
        if (mean < best_d) {
            best_d = mean;
            out.best = static_cast<int>(k);
        }
    }
    Tape::Id d = t.sub(mode_ids[out.best], t.constant(gt));
    out.wta = t.scale(t.sum_all(t.mul(d, d)), 1.0 / gt.rows());
    out.ce = t.ce_with_index(logits, out.best);
    out.loss = t.add(out.wta, t.scale(out.ce, lambda_ce));
    return out;
}

struct StepResult {
    int step = 0;
    PredictionSet raw;
    Matrix offsets;  // T_f x 2 in the step's target frame; zero for variant none
    PredictionSet corrected;
    double wta = 0.0;
    double ce = 0.0;
};

struct RolloutResult {
    std::vector<StepResult> steps;
    Tape::Id loss = -1;  // mean over steps, on the tape passed to run_rollout
    double loss_value = 0.0;
};

// One closed-loop pass over a rollout: predict, correct from the buffer,
// record the corrected representative, then observe the ground truth the
// scene actually produced (teacher forcing, in training and evaluation
// alike). The buffer starts empty unless the caller passes a warm one.
inline RolloutResult run_rollout(Tape& t, const Rollout& ro, const ModelBundle& m,
                                 const LossWeights& w, ErrorBuffer* external_buffer = nullptr) {
    if (ro.samples.empty()) throw InputError("rollout has no samples");
    const RolloutConfig& rc = m.rollout;

    ErrorBuffer local(rc.buffer_len, rc.future_steps);
    ErrorBuffer& buffer = external_buffer ? *external_buffer : local;
    if (buffer.capacity() != rc.buffer_len)
        throw ConfigError("buffer capacity does not match the rollout config");

    RolloutResult out;
    std::vector<Tape::Id> step_losses;

    for (const Sample& s : ro.samples) {
        auto violations = validate_sample(s, rc);
        if (!violations.empty())
            throw InputError("rollout " + ro.scenario_id + " step " +
                             std::to_string(s.step_index) + ": " + violations.front());
        try {
            TargetFrame frame = target_frame(s.target.history);
            Predictor::Forward f = m.predictor.forward(t, s, frame);

            Tape::Id offsets_id = -1;
            if (m.variant != Variant::none) {
                auto feats = buffer.build_features(frame);
                Tape::Id tokens = m.retro.tokenize(t, feats);
                if (m.variant == Variant::ret_s) {
                    offsets_id = m.retro.ret_s_offsets(t, tokens);
                } else {
                    int rep = static_cast<int>(std::max_element(f.probs.begin(), f.probs.end()) -
                                               f.probs.begin());
                    offsets_id = m.retro.ret_c_offsets(t, f.modes[rep], tokens);
                }
                if (!t.val(offsets_id).all_finite())
                    throw NumericError("correction head produced non-finite offsets");
            }

            std::vector<Tape::Id> corrected_ids = f.modes;
            if (offsets_id != -1)
                for (Tape::Id& id : corrected_ids) id = t.add(id, offsets_id);

            Matrix gt_local(rc.future_steps, 2);
            for (int i = 0; i < rc.future_steps; ++i) {
                Waypoint l = frame.to_local(s.future.waypoints[i]);
                gt_local(i, 0) = l.x;
                gt_local(i, 1) = l.y;
            }
            StepLoss sl = step_loss(t, corrected_ids, f.logits, gt_local, w.lambda_ce);
            step_losses.push_back(sl.loss);

            StepResult res;
            res.step = s.step_index;
            res.offsets = offsets_id != -1 ? t.val(offsets_id) : Matrix::zeros(rc.future_steps, 2);
            res.wta = t.val(sl.wta)(0, 0);
            res.ce = t.val(sl.ce)(0, 0);
            res.raw.probs = f.probs;
            res.corrected.probs = f.probs;
            for (int k = 0; k < rc.mode_count; ++k) {
                const Matrix& rm = t.val(f.modes[k]);
                const Matrix& cm = t.val(corrected_ids[k]);
                Trajectory rt, ct;
                rt.dt = ct.dt = s.future.dt;
                for (int i = 0; i < rc.future_steps; ++i) {
                    rt.waypoints.push_back(frame.to_world({rm(i, 0), rm(i, 1)}));
                    ct.waypoints.push_back(frame.to_world({cm(i, 0), cm(i, 1)}));
                }
                res.raw.modes.push_back(std::move(rt));
                res.corrected.modes.push_back(std::move(ct));
            }

            if (m.variant != Variant::none) {
                buffer.push(m.retro.cfg.buffer_stores_raw ? res.raw : res.corrected, frame,
                            s.step_index);
                for (int j = 0; j < rc.stride; ++j) buffer.observe(s.future.waypoints[j]);
            }
            out.steps.push_back(std::move(res));
        } catch (const NumericError& e) {
            throw NumericError("rollout step " + std::to_string(s.step_index) + ": " + e.what());
        }
    }

    Tape::Id total = step_losses[0];
    for (std::size_t i = 1; i < step_losses.size(); ++i) total = t.add(total, step_losses[i]);
    out.loss = t.scale(total, 1.0 / static_cast<double>(step_losses.size()));
    out.loss_value = t.val(out.loss)(0, 0);
    return out;
}

struct EvalOutput {
    std::vector<std::vector<StepEval>> evals;  // evals[rollout][step]
    double mean_loss = 0.0;
};

inline EvalOutput evaluate_dataset(const ModelBundle& m, const RolloutDataset& data,
                                   const LossWeights& w) {
    if (data.rollouts.empty()) throw InputError("evaluation dataset is empty");
    EvalOutput out;
    double loss_sum = 0.0;
    for (const Rollout& ro : data.rollouts) {
        Tape t(false);
        RolloutResult r = run_rollout(t, ro, m, w);
        std::vector<StepEval> evals;
        for (std::size_t i = 0; i < r.steps.size(); ++i) {
            StepEval e;
            e.pred = std::move(r.steps[i].corrected);
            e.gt = ro.samples[i].future;
            evals.push_back(std::move(e));
        }
        out.evals.push_back(std::move(evals));
        loss_sum += r.loss_value;
    }
    out.mean_loss = loss_sum / static_cast<double>(data.rollouts.size());
    return out;
}

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    double lr = 1e-3;
    LossWeights loss;
    int patience = 10;
    int warmup_epochs = 0;
    std::uint64_t seed = 1;
};

struct TrainResult {
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_min_ade = std::numeric_limits<double>::infinity();
    bool diverged = false;
    std::vector<TrainLogRow> log;
};

// Joint training of the backbone and the correction heads over closed-loop
// rollouts. Shuffling, batching, and the optimizer are all driven by the
// seed, so two runs on the same data produce bit-identical parameters. On a
// non-finite loss the run aborts and the best parameters seen so far are
// restored.
inline TrainResult train(ModelBundle& m, const RolloutDataset& train_set,
                         const RolloutDataset& val_set, const TrainConfig& cfg) {
    if (train_set.rollouts.empty()) throw InputError("training dataset is empty");
    if (val_set.rollouts.empty()) throw InputError("validation dataset is empty");
    if (cfg.batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (cfg.epochs < 0) throw ConfigError("epoch count must be nonnegative");

    AdamConfig acfg;
    acfg.lr = cfg.lr;
    Adam opt(m.store, acfg);

    auto snapshot = [&m]() {
        std::vector<Matrix> vals;
        for (int i = 0; i < m.store.count(); ++i) vals.push_back(m.store.at(i).value);
        return vals;
    };
    auto restore = [&m](const std::vector<Matrix>& vals) {
        for (int i = 0; i < m.store.count(); ++i) m.store.at(i).value = vals[i];
    };

    TrainResult res;
    std::vector<Matrix> best = snapshot();
    const int n = static_cast<int>(train_set.rollouts.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    int stale_epochs = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // During the warmup phase the correction heads sit out: the
        // backbone trains alone so the heads later learn from a stable
        // error distribution instead of chasing an untrained predictor.
        const Variant full_variant = m.variant;
        const bool warmup = full_variant != Variant::none && epoch <= cfg.warmup_epochs;
        if (warmup) m.variant = Variant::none;
        // Cosine decay to 5% of the base rate; late epochs take small steps
        // so the stored parameters settle instead of jittering around the
        // optimum (per-step validation curves are read off a single
        // snapshot, which makes that jitter visible).
        if (cfg.epochs > 1) {
            double frac = static_cast<double>(epoch - 1) / static_cast<double>(cfg.epochs - 1);
            opt.set_lr(cfg.lr * (0.05 + 0.475 * (1.0 + std::cos(M_PI * frac))));
        }
        Rng shuffle_rng = substream(cfg.seed, "order", static_cast<std::uint64_t>(epoch));
        for (int i = n - 1; i > 0; --i) {
            int j = static_cast<int>(shuffle_rng.below(static_cast<std::uint64_t>(i) + 1));
            std::swap(order[i], order[j]);
        }

        double train_loss_sum = 0.0;
        std::vector<std::vector<StepEval>> train_evals;
        bool numeric_failure = false;

        for (int start = 0; start < n; start += cfg.batch_size) {
            int stop = std::min(n, start + cfg.batch_size);
            m.store.zero_grad();
            try {
                for (int i = start; i < stop; ++i) {
                    const Rollout& ro = train_set.rollouts[order[i]];
                    Tape t(true);
                    RolloutResult r = run_rollout(t, ro, m, cfg.loss);
                    if (!std::isfinite(r.loss_value))
                        throw NumericError("non-finite loss on rollout " + ro.scenario_id);
                    t.backward(r.loss);
                    train_loss_sum += r.loss_value;
                    std::vector<StepEval> evals;
                    for (std::size_t k = 0; k < r.steps.size(); ++k) {
                        StepEval e;
                        e.pred = std::move(r.steps[k].corrected);
                        e.gt = ro.samples[k].future;
                        evals.push_back(std::move(e));
                    }
                    train_evals.push_back(std::move(evals));
                }
            } catch (const NumericError&) {
                numeric_failure = true;
                break;
            }
            m.store.scale_grad(1.0 / static_cast<double>(stop - start));
            opt.step();
        }
        m.variant = full_variant;
        if (numeric_failure) {
            res.diverged = true;
            break;
        }

        res.epochs_run = epoch;
        double train_loss = train_loss_sum / static_cast<double>(n);
        EvalOutput val = evaluate_dataset(m, val_set, cfg.loss);

        for (const MetricRow& row : per_step_metrics(train_evals))
            res.log.push_back({epoch, "train", row, train_loss});
        std::vector<MetricRow> val_rows = per_step_metrics(val.evals);
        for (const MetricRow& row : val_rows)
            res.log.push_back({epoch, "val", row, val.mean_loss});

        double val_final = val_rows.back().min_ade;
        if (val_final < res.best_val_min_ade) {
            res.best_val_min_ade = val_final;
            res.best_epoch = epoch;
            best = snapshot();
            stale_epochs = 0;
        } else if (!warmup && ++stale_epochs >= cfg.patience) {
            break;
        }
    }

    restore(best);
    return res;
}

// Evaluation-time agent dropout: the models stay as trained, only the
// context thins out.
inline EvalOutput ood_eval(const ModelBundle& m, const RolloutDataset& data, double fraction,
                           std::uint64_t seed, const LossWeights& w) {
    RolloutDataset dropped;
    dropped.rollouts.reserve(data.rollouts.size());
    for (const Rollout& ro : data.rollouts) dropped.rollouts.push_back(drop_agents(ro, fraction, seed));
    return evaluate_dataset(m, dropped, w);
}

struct AblationPoint {
    int buffer_len = 0;
    std::vector<MetricRow> metrics;  // per-step validation metrics, trained model
    double final_min_ade = 0.0;
    bool diverged = false;
};

// Trains one model per requested buffer length and reports validation
// metrics; duplicates are collapsed so each length trains once.
inline std::vector<AblationPoint> ablation_buffer_length(
    const RolloutDataset& train_set, const RolloutDataset& val_set, RolloutConfig rc,
    const PredictorConfig& pc, const RetroConfig& cc, Variant v, const TrainConfig& tc,
    const std::vector<int>& buffer_lengths) {
    if (buffer_lengths.empty()) throw ConfigError("ablation needs at least one buffer length");
    if (v == Variant::none) throw ConfigError("buffer-length ablation needs a retrospection variant");

    std::vector<int> unique_lengths;
    for (int B : buffer_lengths) {
        if (std::find(unique_lengths.begin(), unique_lengths.end(), B) != unique_lengths.end()) {
            std::cerr << "ablation: duplicate buffer length " << B << " skipped\n";
            continue;
        }
        unique_lengths.push_back(B);
    }

    std::vector<AblationPoint> out;
    for (int B : unique_lengths) {
        rc.buffer_len = B;
        ModelBundle m = ModelBundle::create(rc, pc, cc, v, tc.seed);
        TrainResult tr = train(m, train_set, val_set, tc);
        AblationPoint point;
        point.buffer_len = B;
        point.diverged = tr.diverged;
        point.metrics = per_step_metrics(evaluate_dataset(m, val_set, tc.loss).evals);
        point.final_min_ade = point.metrics.back().min_ade;
        out.push_back(std::move(point));
    }
    return out;
}

}  // namespace retro
