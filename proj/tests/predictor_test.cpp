#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "retro/predictor.hpp"
#include "retro/scenegen.hpp"

using namespace retro;
using Catch::Approx;

namespace {

Sample sample_from_generator(uint64_t seed) {
    GeneratorConfig cfg;
    cfg.scenario_count = 1;
    cfg.seed = seed;
    Expected<Rollout> r = extract_rollout(generate_scenario(cfg, 0), cfg.rollout);
    REQUIRE(r.ok());
    return r->samples[0];
}

Sample translated(const Sample& s, double dx, double dy) {
    Sample out = s;
    for (auto& w : out.target.history.waypoints) w = {w.x + dx, w.y + dy};
    for (auto& c : out.context)
        for (auto& w : c.history.waypoints) w = {w.x + dx, w.y + dy};
    for (auto& w : out.future.waypoints) w = {w.x + dx, w.y + dy};
    return out;
}

Sample rotated90(const Sample& s) {
    auto rot = [](Waypoint w) { return Waypoint{-w.y, w.x}; };
    Sample out = s;
    for (auto& w : out.target.history.waypoints) w = rot(w);
    for (auto& c : out.context)
        for (auto& w : c.history.waypoints) w = rot(w);
    for (auto& w : out.future.waypoints) w = rot(w);
    return out;
}

Predictor make_predictor(ParamStore& store, const RolloutConfig& rc, uint64_t seed) {
    Rng rng(seed);
    return Predictor::create(store, rc, PredictorConfig{}, rng);
}

}  // namespace

TEST_CASE("constant velocity extrapolation", "[predictor]") {
    SECTION("unit speed along x") {
        Trajectory h;
        h.waypoints = {{0, 0}, {1, 0}};
        Trajectory f = constant_velocity_predict(h, 3);
        REQUIRE(f.waypoints.size() == 3);
        REQUIRE(f.waypoints[0] == Waypoint{2, 0});
        REQUIRE(f.waypoints[1] == Waypoint{3, 0});
        REQUIRE(f.waypoints[2] == Waypoint{4, 0});
    }

    SECTION("stationary history stays put") {
        Trajectory h;
        h.waypoints = {{2, 3}, {2, 3}, {2, 3}};
        Trajectory f = constant_velocity_predict(h, 4);
        for (const auto& w : f.waypoints) REQUIRE(w == Waypoint{2, 3});
    }

    SECTION("oblique displacement") {
        Trajectory h;
        h.waypoints = {{0.7, 1.4}, {1.0, 1.0}};
        Trajectory f = constant_velocity_predict(h, 2);
        REQUIRE(f.waypoints[0].x == Approx(1.3).margin(1e-12));
        REQUIRE(f.waypoints[0].y == Approx(0.6).margin(1e-12));
        REQUIRE(f.waypoints[1].x == Approx(1.6).margin(1e-12));
        REQUIRE(f.waypoints[1].y == Approx(0.2).margin(1e-12));
    }

    SECTION("one point is not enough") {
        Trajectory h;
        h.waypoints = {{0, 0}};
        REQUIRE_THROWS_AS(constant_velocity_predict(h, 3), InputError);
    }
}

TEST_CASE("target frame construction and round trip", "[predictor]") {
    SECTION("already normalized history is the identity") {
        Trajectory h;
        h.waypoints = {{-2, 0}, {-1, 0}, {0, 0}};
        TargetFrame f = target_frame(h);
        REQUIRE(f.origin == Waypoint{0, 0});
        REQUIRE(f.rot == 0.0);
        Waypoint p{3.5, -1.25};
        REQUIRE(f.to_local(p) == p);
    }

    SECTION("stationary tail falls back to the previous segment") {
        Trajectory h;
        h.waypoints = {{0, 0}, {0, 1}, {0, 1}};
        TargetFrame f = target_frame(h);
        REQUIRE(f.rot == Approx(M_PI / 2));
    }

    SECTION("fully stationary history gets heading zero") {
        Trajectory h;
        h.waypoints = {{4, 4}, {4, 4}};
        REQUIRE(target_frame(h).rot == 0.0);
    }

    SECTION("transform then inverse restores the point") {
        Rng rng(77);
        for (int i = 0; i < 100; ++i) {
            TargetFrame f;
            f.origin = {rng.uniform(-50, 50), rng.uniform(-50, 50)};
            f.rot = rng.uniform(-M_PI, M_PI);
            Waypoint p{rng.uniform(-80, 80), rng.uniform(-80, 80)};
            Waypoint back = f.to_world(f.to_local(p));
            REQUIRE(distance(back, p) < 1e-9);
        }
    }
}

TEST_CASE("frame normalization is translation and rotation invariant", "[predictor]") {
    Sample s = sample_from_generator(41);
    TargetFrame f = target_frame(s.target.history);
    NormalizedInputs base = to_target_frame(s, f, 8);

    SECTION("translation") {
        Sample moved = translated(s, 5.0, 5.0);
        TargetFrame mf = target_frame(moved.target.history);
        NormalizedInputs got = to_target_frame(moved, mf, 8);
        REQUIRE(max_abs_diff(got.target, base.target) < 1e-9);
        REQUIRE(max_abs_diff(got.context, base.context) < 1e-9);
    }

    SECTION("rotation by 90 degrees") {
        Sample rot = rotated90(s);
        TargetFrame rf = target_frame(rot.target.history);
        NormalizedInputs got = to_target_frame(rot, rf, 8);
        REQUIRE(max_abs_diff(got.target, base.target) < 1e-9);
        REQUIRE(max_abs_diff(got.context, base.context) < 1e-9);
    }
}

TEST_CASE("predict with zero weights and K=1", "[predictor]") {
    Sample s = sample_from_generator(42);

    SECTION("zero weights decode the origin with uniform probabilities") {
        RolloutConfig rc;
        ParamStore store;
        Predictor p = make_predictor(store, rc, 1);
        for (int i = 0; i < store.count(); ++i) store.at(i).value.fill(0.0);
        PredictionSet out = p.predict(s);
        TargetFrame f = target_frame(s.target.history);
        REQUIRE(out.modes.size() == 5);
        for (const auto& m : out.modes)
            for (const auto& w : m.waypoints) REQUIRE(distance(w, f.origin) < 1e-9);
        for (double pr : out.probs) REQUIRE(pr == Approx(0.2).margin(1e-12));
    }

    SECTION("a single mode gets probability one") {
        RolloutConfig rc;
        rc.mode_count = 1;
        ParamStore store;
        Predictor p = make_predictor(store, rc, 1);
        PredictionSet out = p.predict(s);
        REQUIRE(out.probs.size() == 1);
        REQUIRE(out.probs[0] == 1.0);
    }
}

TEST_CASE("prediction equivariance under rigid transforms", "[predictor]") {
    RolloutConfig rc;
    ParamStore store;
    Predictor p = make_predictor(store, rc, 9);
    Sample s = sample_from_generator(43);
    PredictionSet base = p.predict(s);

    double psum = 0.0;
    for (double pr : base.probs) psum += pr;
    REQUIRE(psum == Approx(1.0).margin(1e-6));

    SECTION("translation moves every mode by the offset") {
        PredictionSet moved = p.predict(translated(s, 5.0, 5.0));
        for (std::size_t k = 0; k < base.modes.size(); ++k) {
            REQUIRE(moved.probs[k] == Approx(base.probs[k]).margin(1e-9));
            for (std::size_t i = 0; i < base.modes[k].waypoints.size(); ++i) {
                Waypoint expect = base.modes[k].waypoints[i] + Waypoint{5.0, 5.0};
                REQUIRE(distance(moved.modes[k].waypoints[i], expect) < 1e-6);
            }
        }
    }

    SECTION("rotation turns every mode with the scene") {
        PredictionSet rot = p.predict(rotated90(s));
        for (std::size_t k = 0; k < base.modes.size(); ++k) {
            REQUIRE(rot.probs[k] == Approx(base.probs[k]).margin(1e-9));
            for (std::size_t i = 0; i < base.modes[k].waypoints.size(); ++i) {
                Waypoint b = base.modes[k].waypoints[i];
                REQUIRE(distance(rot.modes[k].waypoints[i], Waypoint{-b.y, b.x}) < 1e-6);
            }
        }
    }
}

TEST_CASE("context permutation leaves predictions bit-identical", "[predictor]") {
    RolloutConfig rc;
    ParamStore store;
    Predictor p = make_predictor(store, rc, 13);
    Sample s = sample_from_generator(44);
    REQUIRE(s.context.size() >= 2);

    Sample shuffled = s;
    std::reverse(shuffled.context.begin(), shuffled.context.end());
    PredictionSet a = p.predict(s);
    PredictionSet b = p.predict(shuffled);
    for (std::size_t k = 0; k < a.modes.size(); ++k) {
        REQUIRE(a.probs[k] == b.probs[k]);
        for (std::size_t i = 0; i < a.modes[k].waypoints.size(); ++i)
            REQUIRE(a.modes[k].waypoints[i] == b.modes[k].waypoints[i]);
    }
}

TEST_CASE("non-finite forward pass names the stage", "[predictor]") {
    RolloutConfig rc;
    ParamStore store;
    Predictor p = make_predictor(store, rc, 15);
    store.find("pred.agent.l0.w")->value(0, 0) = std::numeric_limits<double>::quiet_NaN();
    Sample s = sample_from_generator(45);
    try {
        p.predict(s);
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        REQUIRE(std::string(e.what()).find("context encoder") != std::string::npos);
    }
}
