#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "retro/scenegen.hpp"

using namespace retro;

namespace {

GeneratorConfig quiet_config() {
    GeneratorConfig cfg;
    cfg.scenario_count = 4;
    cfg.w_const_velocity = 1.0;
    cfg.w_const_accel = 0.0;
    cfg.w_lane_change = 0.0;
    cfg.w_turn = 0.0;
    cfg.bias_accel_std = 0.0;
    cfg.bias_drift_std = 0.0;
    cfg.interaction = false;
    cfg.noise_std = 0.0;
    cfg.seed = 7;
    return cfg;
}

bool tracks_equal(const Scenario& a, const Scenario& b) {
    if (a.agents.size() != b.agents.size()) return false;
    for (std::size_t i = 0; i < a.agents.size(); ++i) {
        if (a.agents[i].agent_id != b.agents[i].agent_id) return false;
        if (a.agents[i].clean != b.agents[i].clean) return false;
        if (a.agents[i].observed != b.agents[i].observed) return false;
    }
    return true;
}

bool histories_equal(const Sample& a, const Sample& b) {
    if (a.target.history.waypoints != b.target.history.waypoints) return false;
    if (a.context.size() != b.context.size()) return false;
    for (std::size_t i = 0; i < a.context.size(); ++i) {
        if (a.context[i].agent_id != b.context[i].agent_id) return false;
        if (a.context[i].history.waypoints != b.context[i].history.waypoints) return false;
    }
    return true;
}

bool rollouts_equal(const Rollout& a, const Rollout& b) {
    if (a.scenario_id != b.scenario_id) return false;
    if (a.config.history_steps != b.config.history_steps) return false;
    if (a.config.future_steps != b.config.future_steps) return false;
    if (a.config.rollout_steps != b.config.rollout_steps) return false;
    if (a.config.stride != b.config.stride) return false;
    if (a.config.dt != b.config.dt) return false;
    if (a.samples.size() != b.samples.size()) return false;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        if (a.samples[i].step_index != b.samples[i].step_index) return false;
        if (!histories_equal(a.samples[i], b.samples[i])) return false;
        if (a.samples[i].future.waypoints != b.samples[i].future.waypoints) return false;
    }
    return true;
}

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "retro_scenegen_test";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("unbiased constant velocity is exactly linear", "[scenegen]") {
    Scenario sc = generate_scenario(quiet_config(), 0);
    const auto& pts = sc.find_agent("t0")->clean;
    REQUIRE(pts.size() == 24);
    for (std::size_t i = 2; i < pts.size(); ++i) {
        Waypoint d1 = pts[i - 1] - pts[i - 2];
        Waypoint d2 = pts[i] - pts[i - 1];
        REQUIRE(std::abs(d2.x - d1.x) < 1e-9);
        REQUIRE(std::abs(d2.y - d1.y) < 1e-9);
    }
}

TEST_CASE("longitudinal bias adds half a t squared", "[scenegen]") {
    GeneratorConfig cfg = quiet_config();
    double one = 1.0, zero = 0.0;
    Scenario biased = generate_scenario(cfg, 1, &one, &zero);
    Scenario plain = generate_scenario(cfg, 1, &zero, &zero);
    int onset = cfg.rollout.history_steps;
    REQUIRE(biased.bias_onset == onset);
    for (int i = 0; i < cfg.duration_steps; ++i) {
        double gap = distance(biased.agents[0].clean[i], plain.agents[0].clean[i]);
        double t = std::max(0, i - onset) * cfg.rollout.dt;
        REQUIRE(gap == Catch::Approx(0.5 * t * t).margin(1e-9));
    }
}

TEST_CASE("generation is deterministic per seed", "[scenegen]") {
    GeneratorConfig cfg;
    cfg.scenario_count = 3;
    cfg.seed = 11;
    auto a = generate_scenarios(cfg);
    auto b = generate_scenarios(cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(tracks_equal(a[i], b[i]));

    cfg.seed = 12;
    auto c = generate_scenarios(cfg);
    REQUIRE_FALSE(tracks_equal(a[0], c[0]));
}

TEST_CASE("rollout extraction length rule", "[scenegen]") {
    GeneratorConfig cfg = quiet_config();
    RolloutConfig rc;  // needs 23 timesteps

    SECTION("23 timesteps suffice") {
        cfg.duration_steps = 23;
        Expected<Rollout> r = extract_rollout(generate_scenario(cfg, 0), rc);
        REQUIRE(r.ok());
        REQUIRE(r->samples.size() == 7);
        for (int i = 0; i < 7; ++i) {
            REQUIRE(r->samples[i].step_index == i + 1);
            REQUIRE(r->samples[i].target.history.waypoints.size() == 5);
            REQUIRE(r->samples[i].future.waypoints.size() == 12);
            REQUIRE(validate_sample(r->samples[i], rc).empty());
        }
    }

    SECTION("22 timesteps are rejected with the needed length") {
        cfg.duration_steps = 22;
        Expected<Rollout> r = extract_rollout(generate_scenario(cfg, 0), rc);
        REQUIRE_FALSE(r.ok());
        REQUIRE(r.error.find("needs 23") != std::string::npos);
    }

    SECTION("single-step rollout is the open-loop case") {
        rc.rollout_steps = 1;
        Expected<Rollout> r = extract_rollout(generate_scenario(cfg, 0), rc);
        REQUIRE(r.ok());
        REQUIRE(r->samples.size() == 1);
    }
}

TEST_CASE("consecutive samples overlap by stride", "[scenegen]") {
    GeneratorConfig cfg;
    cfg.scenario_count = 1;
    cfg.seed = 21;
    Expected<Rollout> r = extract_rollout(generate_scenario(cfg, 0), cfg.rollout);
    REQUIRE(r.ok());
    int keep = cfg.rollout.history_steps + 1 - cfg.rollout.stride;
    for (std::size_t i = 0; i + 1 < r->samples.size(); ++i) {
        const auto& cur = r->samples[i].target.history.waypoints;
        const auto& nxt = r->samples[i + 1].target.history.waypoints;
        for (int k = 0; k < keep; ++k) {
            REQUIRE(cur[k + cfg.rollout.stride].x == nxt[k].x);
            REQUIRE(cur[k + cfg.rollout.stride].y == nxt[k].y);
        }
    }
}

TEST_CASE("bias is invisible at the first rollout step", "[scenegen]") {
    GeneratorConfig cfg;
    cfg.scenario_count = 1;
    cfg.seed = 33;
    double lo = 0.0, hi = 2.0, drift = 0.0;
    Scenario a = generate_scenario(cfg, 0, &lo, &drift);
    Scenario b = generate_scenario(cfg, 0, &hi, &drift);
    Expected<Rollout> ra = extract_rollout(a, cfg.rollout);
    Expected<Rollout> rb = extract_rollout(b, cfg.rollout);
    REQUIRE(ra.ok());
    REQUIRE(rb.ok());
    REQUIRE(histories_equal(ra->samples[0], rb->samples[0]));
    REQUIRE(ra->samples[0].future.waypoints != rb->samples[0].future.waypoints);
}

TEST_CASE("agent dropout", "[scenegen]") {
    GeneratorConfig cfg;
    cfg.scenario_count = 1;
    cfg.seed = 5;
    Expected<Rollout> r = extract_rollout(generate_scenario(cfg, 0), cfg.rollout);
    REQUIRE(r.ok());
    REQUIRE_FALSE(r->samples[0].context.empty());

    SECTION("fraction zero changes nothing") {
        REQUIRE(rollouts_equal(drop_agents(*r, 0.0, 99), *r));
    }

    SECTION("fraction one empties the context and keeps the target") {
        Rollout d = drop_agents(*r, 1.0, 99);
        for (const auto& s : d.samples) {
            REQUIRE(s.context.empty());
            REQUIRE(s.target.history.waypoints == r->samples[0].target.history.waypoints);
            break;
        }
    }

    SECTION("the dropped set is identical across steps") {
        Rollout d = drop_agents(*r, 0.5, 1234);
        std::set<std::string> first;
        for (const auto& c : d.samples[0].context) first.insert(c.agent_id);
        for (const auto& s : d.samples) {
            std::set<std::string> ids;
            for (const auto& c : s.context) ids.insert(c.agent_id);
            REQUIRE(ids == first);
        }
    }

    SECTION("dropped count concentrates near M times fraction") {
        // 20 agents, fraction 0.1, 1000 seeds: total ~ Binomial(20000, 0.1)
        Rollout wide = *r;
        wide.samples.resize(1);
        wide.samples[0].context.clear();
        for (int a = 0; a < 20; ++a) {
            AgentTrack t;
            t.agent_id = "a" + std::to_string(a + 1);
            t.history = wide.samples[0].target.history;
            wide.samples[0].context.push_back(t);
        }
        long total = 0;
        for (uint64_t seed = 0; seed < 1000; ++seed) {
            Rollout d = drop_agents(wide, 0.1, seed);
            total += 20 - static_cast<long>(d.samples[0].context.size());
        }
        double mean = 20000 * 0.1;
        double sd = std::sqrt(20000 * 0.1 * 0.9);
        REQUIRE(std::abs(total - mean) <= 3.0 * sd);
    }
}

TEST_CASE("jsonl round trip", "[scenegen]") {
    GeneratorConfig cfg;
    cfg.scenario_count = 5;
    cfg.seed = 17;
    RolloutDataset ds = extract_dataset(generate_scenarios(cfg), cfg.rollout);
    REQUIRE(ds.rollouts.size() == 5);

    SECTION("write then read preserves every field bit-exactly") {
        auto path = temp_file("roundtrip.jsonl");
        write_jsonl(ds, path.string());
        RolloutDataset back = read_jsonl(path.string());
        REQUIRE(back.rollouts.size() == ds.rollouts.size());
        for (std::size_t i = 0; i < ds.rollouts.size(); ++i)
            REQUIRE(rollouts_equal(ds.rollouts[i], back.rollouts[i]));
    }

    SECTION("empty dataset writes an empty file") {
        auto path = temp_file("empty.jsonl");
        write_jsonl(RolloutDataset{}, path.string());
        REQUIRE(std::filesystem::file_size(path) == 0);
        REQUIRE(read_jsonl(path.string()).rollouts.empty());
    }

    SECTION("truncated line three is reported with its line number") {
        auto good = temp_file("good.jsonl");
        write_jsonl(ds, good.string());
        std::ifstream in(good.string());
        std::string l1, l2, l3;
        std::getline(in, l1);
        std::getline(in, l2);
        std::getline(in, l3);
        auto bad = temp_file("bad.jsonl");
        {
            std::ofstream out(bad.string());
            out << l1 << '\n' << l2 << '\n' << l3.substr(0, l3.size() / 2) << '\n';
        }
        try {
            read_jsonl(bad.string());
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            REQUIRE(e.line == 3);
        }
    }
}
