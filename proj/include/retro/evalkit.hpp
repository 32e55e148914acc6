#pragma once

#include <charconv>
#include <fstream>
#include <string>
#include <vector>

#include "retro/domain.hpp"

namespace retro {

inline double mode_ade(const Trajectory& mode, const Trajectory& gt) {
    double sum = 0.0;
    for (std::size_t i = 0; i < gt.waypoints.size(); ++i)
        sum += distance(mode.waypoints[i], gt.waypoints[i]);
    return sum / static_cast<double>(gt.waypoints.size());
}

// Min over modes of the mean per-waypoint L2 distance. Probabilities play no
// role in any of these metrics.
inline double min_ade(const PredictionSet& pred, const Trajectory& gt) {
    if (pred.modes.empty()) throw InputError("min_ade: prediction has no modes");
    double best = mode_ade(pred.modes[0], gt);
    for (std::size_t k = 1; k < pred.modes.size(); ++k)
        best = std::min(best, mode_ade(pred.modes[k], gt));
    return best;
}

inline double min_fde(const PredictionSet& pred, const Trajectory& gt) {
    if (pred.modes.empty()) throw InputError("min_fde: prediction has no modes");
    double best = distance(pred.modes[0].back(), gt.back());
    for (std::size_t k = 1; k < pred.modes.size(); ++k)
        best = std::min(best, distance(pred.modes[k].back(), gt.back()));
    return best;
}

// A miss: the mode with the closest final waypoint still ends strictly more
// than two meters from the ground truth.
inline bool is_miss(const PredictionSet& pred, const Trajectory& gt) {
    return min_fde(pred, gt) > 2.0;
}

struct StepEval {
    PredictionSet pred;
    Trajectory gt;
};

inline double miss_rate(const std::vector<StepEval>& batch) {
    if (batch.empty()) throw InputError("miss_rate: empty batch");
    int misses = 0;
    for (const auto& e : batch)
        if (is_miss(e.pred, e.gt)) ++misses;
    return static_cast<double>(misses) / static_cast<double>(batch.size());
}

struct MetricRow {
    int step = 0;
    double min_ade = 0.0;
    double min_fde = 0.0;
    double miss_rate = 0.0;
    int n = 0;
};

// Averages metrics per rollout step index across a dataset of rollout
// evaluations. Every rollout must have the same length.
inline std::vector<MetricRow> per_step_metrics(const std::vector<std::vector<StepEval>>& rollouts) {
    if (rollouts.empty()) throw InputError("per_step_metrics: no rollouts");
    std::size_t steps = rollouts[0].size();
    for (const auto& r : rollouts)
        if (r.size() != steps)
            throw InputError("per_step_metrics: rollouts have mixed step counts");
    std::vector<MetricRow> rows(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        MetricRow& row = rows[s];
        row.step = static_cast<int>(s) + 1;
        int misses = 0;
        for (const auto& r : rollouts) {
            row.min_ade += min_ade(r[s].pred, r[s].gt);
            row.min_fde += min_fde(r[s].pred, r[s].gt);
            if (is_miss(r[s].pred, r[s].gt)) ++misses;
            ++row.n;
        }
        row.min_ade /= row.n;
        row.min_fde /= row.n;
        row.miss_rate = static_cast<double>(misses) / row.n;
    }
    return rows;
}

// Shortest round-trip decimal form; keeps CSV output byte-stable across runs.
inline std::string csv_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

struct MetricsCsvRow {
    std::string model;
    std::string variant;
    int buffer_len = 0;
    MetricRow metrics;
    uint64_t seed = 0;
};

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsCsvRow>& rows) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open for writing: " + path);
    out << "model,variant,B,step,minADE,minFDE,MR,n,seed\n";
    for (const auto& r : rows) {
        out << r.model << ',' << r.variant << ',' << r.buffer_len << ',' << r.metrics.step << ','
            << csv_double(r.metrics.min_ade) << ',' << csv_double(r.metrics.min_fde) << ','
            << csv_double(r.metrics.miss_rate) << ',' << r.metrics.n << ',' << r.seed << '\n';
    }
}

struct TrainLogRow {
    int epoch = 0;
    std::string split;
    MetricRow metrics;
    double loss = 0.0;
};

inline void write_train_log_csv(const std::string& path, const std::vector<TrainLogRow>& rows) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open for writing: " + path);
    out << "epoch,split,step,minADE,minFDE,MR,loss\n";
    for (const auto& r : rows) {
        out << r.epoch << ',' << r.split << ',' << r.metrics.step << ','
            << csv_double(r.metrics.min_ade) << ',' << csv_double(r.metrics.min_fde) << ','
            << csv_double(r.metrics.miss_rate) << ',' << csv_double(r.loss) << '\n';
    }
}

}  // namespace retro
