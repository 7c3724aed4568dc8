// Dynamic H x H grid environment: traffic lights, vehicles facing their
// assigned lights, obstacles, and single-cell interventions. All operations
// are pure; the caller supplies the random stream.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cwm/rng.hpp"

namespace cwm::env {

using nlohmann::json;

struct UnknownEntity : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InfeasibleConfig : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Rgb = std::array<int, 3>;

struct Position {
    int x = 0;
    int y = 0;
    bool operator==(const Position&) const = default;
};

enum class Orientation { up, down, left, right };

inline const char* orientation_name(Orientation o) {
    switch (o) {
        case Orientation::up: return "up";
        case Orientation::down: return "down";
        case Orientation::left: return "left";
        case Orientation::right: return "right";
    }
    return "?";
}

inline Orientation orientation_from_name(const std::string& s) {
    if (s == "up") return Orientation::up;
    if (s == "down") return Orientation::down;
    if (s == "left") return Orientation::left;
    if (s == "right") return Orientation::right;
    throw ConfigError("bad orientation: " + s);
}

enum class LightState { red, green };

struct TrafficLight {
    int id = 0;
    Position pos;  // immutable after construction
    LightState state = LightState::red;
    Rgb color{0, 0, 0};
};

struct Vehicle {
    int id = 0;
    Position pos;
    Orientation orientation = Orientation::up;
    Rgb color{0, 0, 0};
    int light_id = 0;
};

struct Obstacle {
    int id = 0;
    Position pos;
    Rgb color{0, 0, 0};
};

struct GridState {
    int grid_size = 8;
    std::vector<TrafficLight> lights;
    std::vector<Vehicle> vehicles;
    std::vector<Obstacle> obstacles;

    bool in_bounds(Position p) const {
        return p.x >= 0 && p.x < grid_size && p.y >= 0 && p.y < grid_size;
    }
    bool obstacle_at(Position p) const {
        for (const auto& o : obstacles)
            if (o.pos == p) return true;
        return false;
    }
    bool light_at(Position p) const {
        for (const auto& l : lights)
            if (l.pos == p) return true;
        return false;
    }
    bool vehicle_at(Position p) const {
        for (const auto& v : vehicles)
            if (v.pos == p) return true;
        return false;
    }
    bool cell_empty(Position p) const {
        return !obstacle_at(p) && !light_at(p) && !vehicle_at(p);
    }
};

enum class InterventionKind { toggle_light, move_obstacle, move_vehicle, noop };

struct Intervention {
    InterventionKind kind = InterventionKind::noop;
    int entity = -1;

    static Intervention toggle_light(int id) { return {InterventionKind::toggle_light, id}; }
    static Intervention move_obstacle(int id) { return {InterventionKind::move_obstacle, id}; }
    static Intervention move_vehicle(int id) { return {InterventionKind::move_vehicle, id}; }
    static Intervention noop() { return {InterventionKind::noop, -1}; }

    bool operator==(const Intervention&) const = default;
};

// ---------------------------------------------------------------- geometry

inline bool is_facing(const Vehicle& v, const TrafficLight& tl) {
    switch (v.orientation) {
        case Orientation::up: return v.pos.x == tl.pos.x && v.pos.y > tl.pos.y;
        case Orientation::down: return v.pos.x == tl.pos.x && v.pos.y < tl.pos.y;
        case Orientation::left: return v.pos.y == tl.pos.y && v.pos.x > tl.pos.x;
        case Orientation::right: return v.pos.y == tl.pos.y && v.pos.x < tl.pos.x;
    }
    return false;
}

inline Position next_position(Position p, Orientation o) {
    switch (o) {
        case Orientation::up: return {p.x, p.y - 1};
        case Orientation::down: return {p.x, p.y + 1};
        case Orientation::left: return {p.x - 1, p.y};
        case Orientation::right: return {p.x + 1, p.y};
    }
    return p;
}

// Direction index order used everywhere a displacement is drawn.
inline constexpr std::array<Orientation, 4> kDirections{Orientation::up, Orientation::down,
                                                        Orientation::left, Orientation::right};

// ---------------------------------------------------------------- dynamics

// One step of the autonomous dynamics: every vehicle facing its green light
// with a free, in-bounds target advances one cell. Vehicles do not block
// each other; resolution is in ascending vehicle id order.
inline GridState dynamics_step(const GridState& state) {
    GridState next = state;
    for (auto& v : next.vehicles) {
        if (v.light_id < 0 || v.light_id >= static_cast<int>(next.lights.size())) continue;
        const TrafficLight& tl = next.lights[v.light_id];
        if (!is_facing(v, tl)) continue;
        if (tl.state != LightState::green) continue;
        Position target = next_position(v.pos, v.orientation);
        if (!next.in_bounds(target)) continue;
        if (next.obstacle_at(target)) continue;
        if (next.light_at(target)) continue;
        v.pos = target;
    }
    return next;
}

namespace detail {
inline std::vector<int> free_obstacle_directions(const GridState& s, const Obstacle& o) {
    std::vector<int> dirs;
    for (int d = 0; d < 4; ++d) {
        Position t = next_position(o.pos, kDirections[d]);
        if (s.in_bounds(t) && s.cell_empty(t)) dirs.push_back(d);
    }
    return dirs;
}
} // namespace detail

// Apply one intervention. For move_obstacle the displacement direction is
// drawn uniformly from the in-bounds, unoccupied directions (fixed order
// up/down/left/right); if none exists the obstacle stays. drawn_dir, when
// non-null, receives the chosen direction index (-1 for no move) so replays
// can be exact.
inline GridState apply_intervention(const GridState& state, const Intervention& iv, Rng& rng,
                                    int* drawn_dir = nullptr) {
    if (drawn_dir) *drawn_dir = -1;
    GridState next = state;
    switch (iv.kind) {
        case InterventionKind::noop:
            break;
        case InterventionKind::toggle_light: {
            if (iv.entity < 0 || iv.entity >= static_cast<int>(next.lights.size()))
                throw UnknownEntity("toggle_light: no light " + std::to_string(iv.entity));
            auto& l = next.lights[iv.entity];
            l.state = (l.state == LightState::red) ? LightState::green : LightState::red;
            break;
        }
        case InterventionKind::move_obstacle: {
            if (iv.entity < 0 || iv.entity >= static_cast<int>(next.obstacles.size()))
                throw UnknownEntity("move_obstacle: no obstacle " + std::to_string(iv.entity));
            auto& o = next.obstacles[iv.entity];
            auto dirs = detail::free_obstacle_directions(next, o);
            if (!dirs.empty()) {
                int d = dirs[rng.index(dirs.size())];
                o.pos = next_position(o.pos, kDirections[d]);
                if (drawn_dir) *drawn_dir = d;
            }
            break;
        }
        case InterventionKind::move_vehicle: {
            if (iv.entity < 0 || iv.entity >= static_cast<int>(next.vehicles.size()))
                throw UnknownEntity("move_vehicle: no vehicle " + std::to_string(iv.entity));
            auto& v = next.vehicles[iv.entity];
            const TrafficLight& tl = next.lights.at(v.light_id);
            Position target = next_position(v.pos, v.orientation);
            if (tl.state == LightState::red && next.in_bounds(target) && !next.obstacle_at(target) &&
                !next.light_at(target)) {
                v.pos = target;
            }
            break;
        }
    }
    return next;
}

// Replay variant: move_obstacle takes the recorded direction (-1 = stayed).
inline GridState apply_intervention_replay(const GridState& state, const Intervention& iv, int dir) {
    if (iv.kind == InterventionKind::move_obstacle) {
        if (iv.entity < 0 || iv.entity >= static_cast<int>(state.obstacles.size()))
            throw UnknownEntity("move_obstacle: no obstacle " + std::to_string(iv.entity));
        GridState next = state;
        if (dir >= 0) next.obstacles[iv.entity].pos = next_position(next.obstacles[iv.entity].pos, kDirections[dir]);
        return next;
    }
    Rng unused(0);
    return apply_intervention(state, iv, unused);
}

// The canonical one-timestep transition: dynamics first, then intervention.
inline GridState intervention_cycle(const GridState& state, const Intervention& iv, Rng& rng,
                                    int* drawn_dir = nullptr) {
    return apply_intervention(dynamics_step(state), iv, rng, drawn_dir);
}

inline GridState intervention_cycle_replay(const GridState& state, const Intervention& iv, int dir) {
    return apply_intervention_replay(dynamics_step(state), iv, dir);
}

// ---------------------------------------------------------------- actions

enum class ActionMode { planner, full };

// Planner mode: one toggle per light plus noop. Full mode additionally
// returns the currently legal obstacle and vehicle moves (data generation).
inline std::vector<Intervention> valid_interventions(const GridState& state,
                                                     ActionMode mode = ActionMode::planner) {
    std::vector<Intervention> out;
    for (const auto& l : state.lights) out.push_back(Intervention::toggle_light(l.id));
    if (mode == ActionMode::full) {
        for (const auto& o : state.obstacles)
            if (!detail::free_obstacle_directions(state, o).empty())
                out.push_back(Intervention::move_obstacle(o.id));
        for (const auto& v : state.vehicles) {
            if (v.light_id < 0 || v.light_id >= static_cast<int>(state.lights.size())) continue;
            const TrafficLight& tl = state.lights[v.light_id];
            Position target = next_position(v.pos, v.orientation);
            if (tl.state == LightState::red && state.in_bounds(target) && !state.obstacle_at(target) &&
                !state.light_at(target))
                out.push_back(Intervention::move_vehicle(v.id));
        }
    }
    out.push_back(Intervention::noop());
    return out;
}

// ------------------------------------------------------------- causal view

// Flattening order: per vehicle (x, y), per obstacle (x, y), per light state.
// Positions are normalized to [0, 1] by H-1.
inline std::vector<double> causal_vector(const GridState& s) {
    double denom = static_cast<double>(s.grid_size - 1);
    std::vector<double> c;
    c.reserve(2 * s.vehicles.size() + 2 * s.obstacles.size() + s.lights.size());
    for (const auto& v : s.vehicles) {
        c.push_back(v.pos.x / denom);
        c.push_back(v.pos.y / denom);
    }
    for (const auto& o : s.obstacles) {
        c.push_back(o.pos.x / denom);
        c.push_back(o.pos.y / denom);
    }
    for (const auto& l : s.lights) c.push_back(l.state == LightState::green ? 1.0 : 0.0);
    return c;
}

inline std::vector<std::string> causal_var_names(const GridState& s) {
    std::vector<std::string> names;
    for (const auto& v : s.vehicles) {
        names.push_back("vehicle" + std::to_string(v.id) + "_x");
        names.push_back("vehicle" + std::to_string(v.id) + "_y");
    }
    for (const auto& o : s.obstacles) {
        names.push_back("obstacle" + std::to_string(o.id) + "_x");
        names.push_back("obstacle" + std::to_string(o.id) + "_y");
    }
    for (const auto& l : s.lights) names.push_back("light" + std::to_string(l.id) + "_state");
    return names;
}

// Nearest integer, ties toward zero.
inline int denormalize_cell(double v, int grid_size) {
    double x = v * (grid_size - 1);
    int cell = (x >= 0.0) ? static_cast<int>(std::ceil(x - 0.5)) : static_cast<int>(std::floor(x + 0.5));
    return std::clamp(cell, 0, grid_size - 1);
}

// Rebuild a concrete state from a causal vector, taking the static parts
// (light cells, orientations, colors, associations) from the template.
inline GridState state_from_causal(const GridState& tmpl, const std::vector<double>& c) {
    size_t expect = 2 * tmpl.vehicles.size() + 2 * tmpl.obstacles.size() + tmpl.lights.size();
    if (c.size() != expect) throw std::invalid_argument("state_from_causal: length mismatch");
    GridState s = tmpl;
    size_t i = 0;
    for (auto& v : s.vehicles) {
        v.pos.x = denormalize_cell(c[i++], s.grid_size);
        v.pos.y = denormalize_cell(c[i++], s.grid_size);
    }
    for (auto& o : s.obstacles) {
        o.pos.x = denormalize_cell(c[i++], s.grid_size);
        o.pos.y = denormalize_cell(c[i++], s.grid_size);
    }
    for (auto& l : s.lights) l.state = (c[i++] >= 0.5) ? LightState::green : LightState::red;
    return s;
}

// ------------------------------------------------------------------ config

struct EnvConfig {
    int grid_size = 8;
    int n_vehicles = 2;
    int n_obstacles = 1;
    int n_lights = 2;
    std::vector<Rgb> vehicle_colors{{0, 0, 255}, {255, 0, 0}};
    std::vector<Rgb> obstacle_colors{{139, 69, 19}};
    std::vector<Rgb> light_colors{{0, 255, 255}, {255, 255, 0}};
    uint64_t seed = 0;  // fixes the static layout: light cells and associations

    int causal_dim() const { return 2 * n_vehicles + 2 * n_obstacles + n_lights; }

    void validate() const {
        if (grid_size < 2) throw ConfigError("grid_size must be >= 2");
        if (n_vehicles < 0 || n_obstacles < 0 || n_lights < 0) throw ConfigError("negative entity count");
        if (static_cast<int>(vehicle_colors.size()) != n_vehicles) throw ConfigError("vehicle color count");
        if (static_cast<int>(obstacle_colors.size()) != n_obstacles) throw ConfigError("obstacle color count");
        if (static_cast<int>(light_colors.size()) != n_lights) throw ConfigError("light color count");
        if (n_vehicles > 0 && n_lights == 0) throw ConfigError("vehicles need at least one light");
    }
};

inline json to_json(const Rgb& c) { return json::array({c[0], c[1], c[2]}); }
inline Rgb rgb_from_json(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()}; }

inline json to_json(const EnvConfig& c) {
    json jv = json::array(), jo = json::array(), jl = json::array();
    for (auto& x : c.vehicle_colors) jv.push_back(to_json(x));
    for (auto& x : c.obstacle_colors) jo.push_back(to_json(x));
    for (auto& x : c.light_colors) jl.push_back(to_json(x));
    return json{{"grid_size", c.grid_size},   {"n_vehicles", c.n_vehicles}, {"n_obstacles", c.n_obstacles},
                {"n_lights", c.n_lights},     {"vehicle_colors", jv},       {"obstacle_colors", jo},
                {"light_colors", jl},         {"seed", c.seed}};
}

inline EnvConfig env_config_from_json(const json& j) {
    EnvConfig c;
    try {
        c.grid_size = j.at("grid_size").get<int>();
        c.n_vehicles = j.at("n_vehicles").get<int>();
        c.n_obstacles = j.at("n_obstacles").get<int>();
        c.n_lights = j.at("n_lights").get<int>();
        c.vehicle_colors.clear();
        c.obstacle_colors.clear();
        c.light_colors.clear();
        for (auto& x : j.at("vehicle_colors")) c.vehicle_colors.push_back(rgb_from_json(x));
        for (auto& x : j.at("obstacle_colors")) c.obstacle_colors.push_back(rgb_from_json(x));
        for (auto& x : j.at("light_colors")) c.light_colors.push_back(rgb_from_json(x));
        c.seed = j.at("seed").get<uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("env config: ") + e.what());
    }
    c.validate();
    return c;
}

inline json to_json(const GridState& s) {
    json jl = json::array(), jv = json::array(), jo = json::array();
    for (auto& l : s.lights)
        jl.push_back(json{{"id", l.id},
                          {"x", l.pos.x},
                          {"y", l.pos.y},
                          {"state", l.state == LightState::green ? "green" : "red"},
                          {"color", to_json(l.color)}});
    for (auto& v : s.vehicles)
        jv.push_back(json{{"id", v.id},
                          {"x", v.pos.x},
                          {"y", v.pos.y},
                          {"orientation", orientation_name(v.orientation)},
                          {"color", to_json(v.color)},
                          {"light_id", v.light_id}});
    for (auto& o : s.obstacles)
        jo.push_back(json{{"id", o.id}, {"x", o.pos.x}, {"y", o.pos.y}, {"color", to_json(o.color)}});
    return json{{"grid_size", s.grid_size}, {"lights", jl}, {"vehicles", jv}, {"obstacles", jo}};
}

inline GridState grid_state_from_json(const json& j) {
    GridState s;
    s.grid_size = j.at("grid_size").get<int>();
    for (auto& x : j.at("lights")) {
        TrafficLight l;
        l.id = x.at("id").get<int>();
        l.pos = {x.at("x").get<int>(), x.at("y").get<int>()};
        l.state = x.at("state").get<std::string>() == "green" ? LightState::green : LightState::red;
        l.color = rgb_from_json(x.at("color"));
        s.lights.push_back(l);
    }
    for (auto& x : j.at("vehicles")) {
        Vehicle v;
        v.id = x.at("id").get<int>();
        v.pos = {x.at("x").get<int>(), x.at("y").get<int>()};
        v.orientation = orientation_from_name(x.at("orientation").get<std::string>());
        v.color = rgb_from_json(x.at("color"));
        v.light_id = x.at("light_id").get<int>();
        s.vehicles.push_back(v);
    }
    for (auto& x : j.at("obstacles")) {
        Obstacle o;
        o.id = x.at("id").get<int>();
        o.pos = {x.at("x").get<int>(), x.at("y").get<int>()};
        o.color = rgb_from_json(x.at("color"));
        s.obstacles.push_back(o);
    }
    return s;
}

inline const char* kind_name(InterventionKind k) {
    switch (k) {
        case InterventionKind::toggle_light: return "toggle_light";
        case InterventionKind::move_obstacle: return "move_obstacle";
        case InterventionKind::move_vehicle: return "move_vehicle";
        case InterventionKind::noop: return "noop";
    }
    return "noop";
}

inline InterventionKind kind_from_name(const std::string& s) {
    if (s == "toggle_light") return InterventionKind::toggle_light;
    if (s == "move_obstacle") return InterventionKind::move_obstacle;
    if (s == "move_vehicle") return InterventionKind::move_vehicle;
    if (s == "noop") return InterventionKind::noop;
    throw ConfigError("bad intervention kind: " + s);
}

inline json to_json(const Intervention& iv) {
    return json{{"kind", kind_name(iv.kind)}, {"entity", iv.entity}};
}

inline Intervention intervention_from_json(const json& j) {
    return Intervention{kind_from_name(j.at("kind").get<std::string>()), j.at("entity").get<int>()};
}

// ---------------------------------------------------------------- sampling

namespace detail {
// Static layout derived from the config seed alone: where the lights sit and
// which light each vehicle faces. Shared by every episode of a dataset so
// the transition structure is stable and learnable.
struct Layout {
    std::vector<Position> light_cells;
    std::vector<int> vehicle_light;
};

inline Layout make_layout(const EnvConfig& cfg) {
    Rng rng(cfg.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
    Layout lay;
    std::vector<Position> taken;
    auto taken_at = [&](Position p) {
        for (auto& q : taken)
            if (q == p) return true;
        return false;
    };
    for (int i = 0; i < cfg.n_lights; ++i) {
        for (int attempt = 0;; ++attempt) {
            if (attempt >= 200) throw InfeasibleConfig("cannot place lights");
            // keep lights off the border so vehicles fit on any side
            int lo = cfg.grid_size > 4 ? 1 : 0;
            int hi = cfg.grid_size > 4 ? cfg.grid_size - 2 : cfg.grid_size - 1;
            Position p{lo + rng.index(hi - lo + 1), lo + rng.index(hi - lo + 1)};
            if (taken_at(p)) continue;
            taken.push_back(p);
            lay.light_cells.push_back(p);
            break;
        }
    }
    for (int v = 0; v < cfg.n_vehicles; ++v) lay.vehicle_light.push_back(cfg.n_lights > 0 ? v % cfg.n_lights : -1);
    return lay;
}
} // namespace detail

// Random initial state: light cells and associations from the config seed,
// vehicle/obstacle cells and light states from rng. Vehicles are placed in
// line with their assigned light, oriented toward it.
inline GridState random_init(const EnvConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.n_vehicles + cfg.n_obstacles + cfg.n_lights > cfg.grid_size * cfg.grid_size)
        throw InfeasibleConfig("entities do not fit on the grid");
    auto layout = detail::make_layout(cfg);
    const int retries = 100;
    for (int attempt = 0; attempt < retries; ++attempt) {
        GridState s;
        s.grid_size = cfg.grid_size;
        for (int i = 0; i < cfg.n_lights; ++i) {
            TrafficLight l;
            l.id = i;
            l.pos = layout.light_cells[i];
            l.state = rng.bernoulli(0.5) ? LightState::green : LightState::red;
            l.color = cfg.light_colors[i];
            s.lights.push_back(l);
        }
        bool ok = true;
        for (int i = 0; i < cfg.n_vehicles && ok; ++i) {
            const Position lp = layout.light_cells[layout.vehicle_light[i]];
            std::vector<std::pair<Position, Orientation>> options;
            for (int x = 0; x < cfg.grid_size; ++x) {
                if (x == lp.x) continue;
                Position p{x, lp.y};
                if (s.cell_empty(p)) options.push_back({p, x > lp.x ? Orientation::left : Orientation::right});
            }
            for (int y = 0; y < cfg.grid_size; ++y) {
                if (y == lp.y) continue;
                Position p{lp.x, y};
                if (s.cell_empty(p)) options.push_back({p, y > lp.y ? Orientation::up : Orientation::down});
            }
            if (options.empty()) {
                ok = false;
                break;
            }
            auto [pos, ori] = options[rng.index(options.size())];
            Vehicle v;
            v.id = i;
            v.pos = pos;
            v.orientation = ori;
            v.color = cfg.vehicle_colors[i];
            v.light_id = layout.vehicle_light[i];
            s.vehicles.push_back(v);
        }
        for (int i = 0; i < cfg.n_obstacles && ok; ++i) {
            std::vector<Position> free;
            for (int x = 0; x < cfg.grid_size; ++x)
                for (int y = 0; y < cfg.grid_size; ++y)
                    if (s.cell_empty({x, y})) free.push_back({x, y});
            if (free.empty()) {
                ok = false;
                break;
            }
            Obstacle o;
            o.id = i;
            o.pos = free[rng.index(free.size())];
            o.color = cfg.obstacle_colors[i];
            s.obstacles.push_back(o);
        }
        if (ok) return s;
    }
    throw InfeasibleConfig("random_init failed after " + std::to_string(retries) + " attempts");
}

} // namespace cwm::env
