#include <catch2/catch_amalgamated.hpp>

#include "retro/domain.hpp"

using namespace retro;

namespace {

Sample make_sample(const RolloutConfig& cfg) {
    Sample s;
    s.step_index = 1;
    s.target.agent_id = "t0";
    s.target.history.dt = cfg.dt;
    for (int i = 0; i <= cfg.history_steps; ++i)
        s.target.history.waypoints.push_back({1.0 * i, 0.0});
    AgentTrack c;
    c.agent_id = "a1";
    c.history.dt = cfg.dt;
    for (int i = 0; i <= cfg.history_steps; ++i) c.history.waypoints.push_back({0.0, 2.0 * i});
    s.context.push_back(c);
    s.future.dt = cfg.dt;
    for (int i = 1; i <= cfg.future_steps; ++i)
        s.future.waypoints.push_back({cfg.history_steps + 1.0 * i, 0.0});
    return s;
}

}  // namespace

TEST_CASE("waypoint arithmetic", "[domain]") {
    Waypoint a{3.0, 4.0}, b{1.0, 1.0};
    REQUIRE(norm(a) == 5.0);
    REQUIRE(distance(a, b) == Catch::Approx(std::hypot(2.0, 3.0)));
    REQUIRE((a + b) == Waypoint{4.0, 5.0});
    REQUIRE((a - b) == Waypoint{2.0, 3.0});
    REQUIRE((a * 2.0) == Waypoint{6.0, 8.0});
}

TEST_CASE("rollout config length requirement", "[domain]") {
    RolloutConfig cfg;  // T_h=4, T_f=12, R=7, stride=1
    REQUIRE(cfg.min_scenario_steps() == 23);
    cfg.stride = 2;
    REQUIRE(cfg.min_scenario_steps() == 5 + 12 + 12);
    cfg.rollout_steps = 1;
    REQUIRE(cfg.min_scenario_steps() == 17);
}

TEST_CASE("validate_sample reports violations", "[domain]") {
    RolloutConfig cfg;
    Sample good = make_sample(cfg);

    SECTION("well-formed sample passes") {
        REQUIRE(validate_sample(good, cfg).empty());
    }

    SECTION("short future is reported") {
        Sample s = good;
        s.future.waypoints.pop_back();
        auto v = validate_sample(s, cfg);
        REQUIRE(v.size() == 1);
        REQUIRE(v[0].find("future length") != std::string::npos);
    }

    SECTION("bad probability sum in an attached prediction is reported") {
        Sample s = good;
        PredictionSet pred;
        for (int k = 0; k < cfg.mode_count; ++k) {
            Trajectory m;
            m.dt = cfg.dt;
            m.waypoints.assign(cfg.future_steps, {0.0, 0.0});
            pred.modes.push_back(m);
            pred.probs.push_back(0.18);  // sums to 0.9
        }
        auto v = validate_sample(s, cfg, &pred);
        REQUIRE(v.size() == 1);
        REQUIRE(v[0].find("probabilities sum") != std::string::npos);
    }

    SECTION("target appearing in context is reported") {
        Sample s = good;
        s.context.push_back(s.context[0]);
        s.context.back().agent_id = "t0";
        auto v = validate_sample(s, cfg);
        REQUIRE_FALSE(v.empty());
        REQUIRE(v.back().find("repeated in context") != std::string::npos);
    }

    SECTION("non-finite waypoint is reported") {
        Sample s = good;
        s.target.history.waypoints[2].x = std::numeric_limits<double>::quiet_NaN();
        auto v = validate_sample(s, cfg);
        REQUIRE(v.size() == 1);
        REQUIRE(v[0].find("non-finite") != std::string::npos);
    }
}

TEST_CASE("prediction set argmax", "[domain]") {
    PredictionSet p;
    p.probs = {0.2, 0.5, 0.3};
    REQUIRE(p.argmax_prob() == 1);
    p.probs = {0.5, 0.5};  // tie resolves to the first
    REQUIRE(p.argmax_prob() == 0);
}
