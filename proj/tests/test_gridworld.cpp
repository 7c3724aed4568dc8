#include <doctest.h>

#include "cwm/gridworld.hpp"
#include "oracle_gridworld.hpp"

using namespace cwm;
using namespace cwm::env;

namespace {

GridState small_state() {
    GridState s;
    s.grid_size = 8;
    TrafficLight l0;
    l0.id = 0;
    l0.pos = {2, 1};
    l0.state = LightState::green;
    l0.color = {0, 255, 255};
    s.lights.push_back(l0);
    Vehicle v0;
    v0.id = 0;
    v0.pos = {2, 5};
    v0.orientation = Orientation::up;
    v0.color = {0, 0, 255};
    v0.light_id = 0;
    s.vehicles.push_back(v0);
    return s;
}

} // namespace

TEST_CASE("is_facing matches the four alignment conditions") {
    GridState s = small_state();
    CHECK(is_facing(s.vehicles[0], s.lights[0]));

    TrafficLight shifted = s.lights[0];
    shifted.pos = {3, 1};
    CHECK_FALSE(is_facing(s.vehicles[0], shifted));

    Vehicle left;
    left.pos = {4, 2};
    left.orientation = Orientation::left;
    TrafficLight at;
    at.pos = {1, 2};
    CHECK(is_facing(left, at));
}

TEST_CASE("next_position displaces one cell per orientation") {
    CHECK(next_position({2, 5}, Orientation::up) == Position{2, 4});
    CHECK(next_position({0, 0}, Orientation::left) == Position{-1, 0});
    CHECK(next_position({3, 3}, Orientation::right) == Position{4, 3});
}

TEST_CASE("dynamics_step moves a vehicle facing its green light") {
    GridState s = small_state();
    GridState after = dynamics_step(s);
    CHECK(after.vehicles[0].pos == Position{2, 4});
    CHECK(s.vehicles[0].pos == Position{2, 5});  // input untouched

    s.lights[0].state = LightState::red;
    CHECK(dynamics_step(s).vehicles[0].pos == Position{2, 5});

    s.lights[0].state = LightState::green;
    Obstacle o;
    o.id = 0;
    o.pos = {2, 4};
    s.obstacles.push_back(o);
    CHECK(dynamics_step(s).vehicles[0].pos == Position{2, 5});
}

TEST_CASE("apply_intervention cases") {
    GridState s = small_state();
    Rng rng(1);

    auto toggled = apply_intervention(s, Intervention::toggle_light(0), rng);
    CHECK(toggled.lights[0].state == LightState::red);

    // vehicle move requires a red light
    auto moved = apply_intervention(s, Intervention::move_vehicle(0), rng);
    CHECK(moved.vehicles[0].pos == s.vehicles[0].pos);
    s.lights[0].state = LightState::red;
    moved = apply_intervention(s, Intervention::move_vehicle(0), rng);
    CHECK(moved.vehicles[0].pos == Position{2, 4});

    auto same = apply_intervention(s, Intervention::noop(), rng);
    CHECK(oracle::states_equal(same, s));

    CHECK_THROWS_AS(apply_intervention(s, Intervention::toggle_light(7), rng), UnknownEntity);
}

TEST_CASE("intervention_cycle is dynamics then intervention") {
    GridState s = small_state();
    Rng rng(3);
    auto out = intervention_cycle(s, Intervention::toggle_light(0), rng);
    // vehicle moved under green, then the light turned red
    CHECK(out.vehicles[0].pos == Position{2, 4});
    CHECK(out.lights[0].state == LightState::red);

    GridState empty;
    empty.grid_size = 5;
    auto still = intervention_cycle(empty, Intervention::noop(), rng);
    CHECK(oracle::states_equal(still, empty));
}

TEST_CASE("valid_interventions per mode") {
    GridState s = small_state();
    TrafficLight l1;
    l1.id = 1;
    l1.pos = {6, 6};
    s.lights.push_back(l1);
    TrafficLight l2;
    l2.id = 2;
    l2.pos = {1, 6};
    s.lights.push_back(l2);

    auto planner = valid_interventions(s, ActionMode::planner);
    CHECK(planner.size() == 4);  // three toggles + noop
    CHECK(planner.back() == Intervention::noop());

    GridState no_lights;
    no_lights.grid_size = 4;
    auto only_noop = valid_interventions(no_lights, ActionMode::planner);
    REQUIRE(only_noop.size() == 1);
    CHECK(only_noop[0] == Intervention::noop());

    // vehicle at a green light is not movable in full mode
    auto full = valid_interventions(s, ActionMode::full);
    bool has_vehicle_move = false;
    for (auto& iv : full)
        if (iv.kind == InterventionKind::move_vehicle) has_vehicle_move = true;
    CHECK_FALSE(has_vehicle_move);
    s.lights[0].state = LightState::red;
    full = valid_interventions(s, ActionMode::full);
    has_vehicle_move = false;
    for (auto& iv : full)
        if (iv.kind == InterventionKind::move_vehicle) has_vehicle_move = true;
    CHECK(has_vehicle_move);
}

TEST_CASE("causal_vector layout and normalization") {
    GridState s = small_state();
    auto c = causal_vector(s);
    REQUIRE(c.size() == 3);  // one vehicle + one light
    CHECK(c[0] == doctest::Approx(2.0 / 7.0));
    CHECK(c[1] == doctest::Approx(5.0 / 7.0));
    CHECK(c[2] == 1.0);

    s.vehicles[0].pos = {0, 0};
    c = causal_vector(s);
    CHECK(c[0] == 0.0);
    CHECK(c[1] == 0.0);

    EnvConfig cfg;  // 2 vehicles, 1 obstacle, 2 lights
    CHECK(cfg.causal_dim() == 8);
}

TEST_CASE("state_from_causal round-trips exactly") {
    EnvConfig cfg;
    Rng rng(11);
    auto s = random_init(cfg, rng);
    auto c = causal_vector(s);
    auto back = state_from_causal(s, c);
    CHECK(oracle::states_equal(back, s));
}

TEST_CASE("denormalize_cell rounds to nearest, ties toward zero") {
    CHECK(denormalize_cell(0.2857, 8) == 2);  // 0.2857 * 7 = 1.9999 -> 2
    CHECK(denormalize_cell(2.5 / 7.0, 8) == 2);  // exact tie rounds down
    CHECK(denormalize_cell(0.0, 8) == 0);
    CHECK(denormalize_cell(1.0, 8) == 7);
    CHECK(denormalize_cell(1.4, 8) == 7);  // clamped
}

TEST_CASE("random_init respects layout and invariants") {
    EnvConfig cfg;
    cfg.seed = 42;
    Rng a(5), b(5);
    auto s1 = random_init(cfg, a);
    auto s2 = random_init(cfg, b);
    CHECK(oracle::states_equal(s1, s2));  // same seed, same state
    CHECK(s1.grid_size == 8);

    // lights sit where the config seed puts them, every vehicle faces its light
    Rng c(6);
    auto s3 = random_init(cfg, c);
    for (size_t i = 0; i < s1.lights.size(); ++i) CHECK(s1.lights[i].pos == s3.lights[i].pos);
    for (const auto& v : s1.vehicles) CHECK(is_facing(v, s1.lights[v.light_id]));

    // distinct cells at init
    for (size_t i = 0; i < s1.vehicles.size(); ++i)
        for (size_t j = i + 1; j < s1.vehicles.size(); ++j)
            CHECK_FALSE(s1.vehicles[i].pos == s1.vehicles[j].pos);
    for (const auto& v : s1.vehicles) {
        CHECK_FALSE(s1.obstacle_at(v.pos));
        CHECK_FALSE(s1.light_at(v.pos));
    }

    EnvConfig tiny;  // more entities than cells
    tiny.grid_size = 2;
    tiny.n_vehicles = 3;
    tiny.n_obstacles = 2;
    tiny.n_lights = 1;
    tiny.vehicle_colors = {{1, 1, 1}, {2, 2, 2}, {3, 3, 3}};
    tiny.obstacle_colors = {{4, 4, 4}, {5, 5, 5}};
    tiny.light_colors = {{6, 6, 6}};
    Rng r(1);
    CHECK_THROWS_AS(random_init(tiny, r), InfeasibleConfig);

    EnvConfig cramped;  // fits by count but vehicles cannot all align with one light
    cramped.grid_size = 3;
    cramped.n_vehicles = 5;
    cramped.n_obstacles = 0;
    cramped.n_lights = 1;
    cramped.vehicle_colors = {{1, 1, 1}, {2, 2, 2}, {3, 3, 3}, {4, 4, 4}, {5, 5, 5}};
    cramped.obstacle_colors = {};
    cramped.light_colors = {{6, 6, 6}};
    Rng r2(1);
    CHECK_THROWS_AS(random_init(cramped, r2), InfeasibleConfig);
}

TEST_CASE("red-light freeze and monotone single-step displacement") {
    EnvConfig cfg;
    cfg.seed = 9;
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        auto s = random_init(cfg, rng);
        for (auto& l : s.lights) l.state = LightState::red;
        CHECK(oracle::states_equal(dynamics_step(s), s));

        auto ivs = valid_interventions(s, ActionMode::full);
        auto iv = ivs[rng.index(ivs.size())];
        auto next = intervention_cycle(s, iv, rng);
        for (size_t i = 0; i < s.vehicles.size(); ++i) {
            int dx = std::abs(next.vehicles[i].pos.x - s.vehicles[i].pos.x);
            int dy = std::abs(next.vehicles[i].pos.y - s.vehicles[i].pos.y);
            CHECK(std::max(dx, dy) <= 1);
        }
        for (size_t i = 0; i < s.obstacles.size(); ++i) {
            int dx = std::abs(next.obstacles[i].pos.x - s.obstacles[i].pos.x);
            int dy = std::abs(next.obstacles[i].pos.y - s.obstacles[i].pos.y);
            CHECK(std::max(dx, dy) <= 1);
        }
    }
}

TEST_CASE("occupancy invariant holds after random cycles") {
    Rng rng(123);
    for (int trial = 0; trial < 200; ++trial) {
        auto s = oracle::random_state(rng);
        auto iv = oracle::random_intervention(s, rng);
        auto next = intervention_cycle(s, iv, rng);
        for (const auto& v : next.vehicles) {
            CHECK_FALSE(next.obstacle_at(v.pos));
            CHECK_FALSE(next.light_at(v.pos));
        }
        for (const auto& o : next.obstacles) {
            CHECK(next.in_bounds(o.pos));
        }
    }
}

TEST_CASE("naive oracle agrees with the implementation on random states") {
    Rng rng(2024);
    for (int trial = 0; trial < 2000; ++trial) {
        auto s = oracle::random_state(rng);
        auto iv = oracle::random_intervention(s, rng);
        CHECK(oracle::states_equal(dynamics_step(s), oracle::naive_dynamics(s)));
        uint64_t seed = rng.u64();
        Rng r1(seed), r2(seed);
        auto mine = apply_intervention(s, iv, r1);
        auto theirs = oracle::naive_apply(s, iv, r2);
        if (!oracle::states_equal(mine, theirs)) {
            CAPTURE(trial);
            REQUIRE(oracle::states_equal(mine, theirs));
        }
    }
}

TEST_CASE("env config json round-trip") {
    EnvConfig cfg;
    cfg.seed = 31337;
    auto j = to_json(cfg);
    auto back = env_config_from_json(j);
    CHECK(back.grid_size == cfg.grid_size);
    CHECK(back.seed == cfg.seed);
    CHECK(back.vehicle_colors == cfg.vehicle_colors);

    auto bad = j;
    bad.erase("n_lights");
    CHECK_THROWS_AS(env_config_from_json(bad), ConfigError);
}

TEST_CASE("grid state json round-trip") {
    EnvConfig cfg;
    Rng rng(4);
    auto s = random_init(cfg, rng);
    auto back = grid_state_from_json(to_json(s));
    CHECK(oracle::states_equal(back, s));
    CHECK(back.vehicles[0].color == s.vehicles[0].color);
}
