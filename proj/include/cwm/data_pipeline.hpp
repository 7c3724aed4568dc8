// Dataset generation and persistence: trajectories with language-annotated
// interventions, spliced N-step episodes, ICL pools, self-evaluation samples
// and planning tasks, all as JSONL with a binding header line.
#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "cwm/action_text.hpp"
#include "cwm/decoder.hpp"
#include "cwm/gridworld.hpp"
#include "cwm/io.hpp"
#include "cwm/synth_obs.hpp"

namespace cwm::data {

using nlohmann::json;

struct WindowTooLong : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyDataset : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------------ types

struct StepRecord {
    std::vector<double> pre_causal;          // state before the cycle
    env::Intervention intervention;
    int obstacle_dir = -1;                   // recorded draw, -1 when none
    std::string action_text;
    std::array<double, 2> action_coords{-1.0, -1.0};  // normalized target cell, (-1,-1) for noop
    std::vector<double> observation;         // snapshot of the post-cycle state
    std::vector<double> post_causal;
};

struct Trajectory {
    uint64_t seed = 0;
    env::GridState initial_state;
    std::vector<double> initial_observation;
    std::vector<StepRecord> steps;
};

struct Episode {
    std::vector<double> start_causal;
    std::vector<std::string> actions;
    std::vector<env::Intervention> interventions;  // replay metadata
    std::vector<int> obstacle_dirs;
    std::vector<std::array<double, 2>> coords;
    std::vector<double> end_causal;
    env::GridState template_state;  // concrete start state
    int n = 0;
};

struct IclExample {
    std::vector<double> start_causal;
    std::vector<std::string> actions;
    std::vector<double> end_causal;
};

struct SelfEvalSample {
    std::string state_text;
    std::string action_text;
    bool good = false;
};

struct PlanningTask {
    env::GridState template_state;
    std::vector<double> start_causal;
    std::vector<int> goal_indices;
    std::vector<double> goal_values;
    int n = 0;
};

// --------------------------------------------------------------- generation

namespace detail {
inline std::array<double, 2> interaction_coords(const env::GridState& s, const env::Intervention& iv) {
    double denom = static_cast<double>(s.grid_size - 1);
    switch (iv.kind) {
        case env::InterventionKind::toggle_light: {
            const auto& p = s.lights.at(iv.entity).pos;
            return {p.x / denom, p.y / denom};
        }
        case env::InterventionKind::move_obstacle: {
            const auto& p = s.obstacles.at(iv.entity).pos;
            return {p.x / denom, p.y / denom};
        }
        case env::InterventionKind::move_vehicle: {
            const auto& p = s.vehicles.at(iv.entity).pos;
            return {p.x / denom, p.y / denom};
        }
        case env::InterventionKind::noop:
            return {-1.0, -1.0};
    }
    return {-1.0, -1.0};
}
} // namespace detail

// One trajectory: random init, then T cycles of dynamics + a uniformly
// random full-mode intervention chosen on the post-dynamics state.
inline Trajectory generate_trajectory(const env::EnvConfig& cfg, const obs::ObservationMap& map,
                                      const text::Pcfg& grammar, int t_len, uint64_t seed) {
    if (t_len < 1) throw EmptyDataset("trajectory length must be >= 1");
    Rng rng(seed);
    Trajectory traj;
    traj.seed = seed;
    traj.initial_state = env::random_init(cfg, rng);
    traj.initial_observation = obs::observe(map, env::causal_vector(traj.initial_state));
    env::GridState state = traj.initial_state;
    for (int t = 0; t < t_len; ++t) {
        env::GridState mid = env::dynamics_step(state);
        auto actions = env::valid_interventions(mid, env::ActionMode::full);
        env::Intervention iv = actions[rng.index(actions.size())];
        StepRecord rec;
        rec.pre_causal = env::causal_vector(state);
        rec.intervention = iv;
        rec.action_text = text::describe_action(iv, mid, grammar, rng);
        rec.action_coords = detail::interaction_coords(mid, iv);
        env::GridState next = env::apply_intervention(mid, iv, rng, &rec.obstacle_dir);
        rec.post_causal = env::causal_vector(next);
        rec.observation = obs::observe(map, rec.post_causal);
        traj.steps.push_back(std::move(rec));
        state = std::move(next);
    }
    return traj;
}

inline std::vector<Trajectory> generate_trajectories(const env::EnvConfig& cfg,
                                                     const obs::ObservationMap& map,
                                                     const text::Pcfg& grammar, int count, int t_len,
                                                     const Rng& base) {
    std::vector<Trajectory> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i)
        out.push_back(generate_trajectory(cfg, map, grammar, t_len, base.fork(i).u64()));
    return out;
}

// N consecutive steps spliced from uniformly sampled windows.
inline std::vector<Episode> splice_nstep(const std::vector<Trajectory>& trajs, int n, int count,
                                         Rng& rng) {
    if (trajs.empty()) throw EmptyDataset("splice_nstep: no trajectories");
    for (const auto& t : trajs)
        if (static_cast<int>(t.steps.size()) < n)
            throw WindowTooLong("splice_nstep: window " + std::to_string(n) + " exceeds trajectory");
    std::vector<Episode> out;
    out.reserve(count);
    for (int e = 0; e < count; ++e) {
        const Trajectory& traj = trajs[rng.index(trajs.size())];
        int last = static_cast<int>(traj.steps.size()) - n;
        int w = last == 0 ? 0 : rng.index(last + 1);
        Episode ep;
        ep.n = n;
        ep.start_causal = traj.steps[w].pre_causal;
        ep.template_state = env::state_from_causal(traj.initial_state, ep.start_causal);
        for (int t = w; t < w + n; ++t) {
            const auto& rec = traj.steps[t];
            ep.actions.push_back(rec.action_text);
            ep.interventions.push_back(rec.intervention);
            ep.obstacle_dirs.push_back(rec.obstacle_dir);
            ep.coords.push_back(rec.action_coords);
        }
        ep.end_causal = traj.steps[w + n - 1].post_causal;
        out.push_back(std::move(ep));
    }
    return out;
}

// Pool of (start causal vars, actions, end causal vars) demonstrations.
inline std::vector<IclExample> build_icl_pool(const std::vector<Trajectory>& trajs, int size, Rng& rng,
                                              int window = 1) {
    auto episodes = splice_nstep(trajs, window, size, rng);
    std::vector<IclExample> pool;
    for (auto& ep : episodes) pool.push_back({ep.start_causal, ep.actions, ep.end_causal});
    return pool;
}

// Draw two distinct examples for one query.
inline std::pair<const IclExample*, const IclExample*> sample_icl(const std::vector<IclExample>& pool,
                                                                  Rng& rng) {
    if (pool.size() < 2) throw EmptyDataset("icl pool needs at least two examples");
    int a = rng.index(pool.size());
    int b = rng.index(pool.size() - 1);
    if (b >= a) ++b;
    return {&pool[a], &pool[b]};
}

// Good/bad pairs from 1-step splices: good is the action actually taken, bad
// a uniformly random different valid action of the same situation.
inline std::vector<SelfEvalSample> build_self_eval_samples(const std::vector<Trajectory>& trajs,
                                                           int count, const decoder::EntityMeta& meta,
                                                           const text::Pcfg& grammar, Rng& rng) {
    std::vector<SelfEvalSample> out;
    if (trajs.empty()) return out;
    int guard = 0;
    while (static_cast<int>(out.size()) < 2 * count && guard++ < 50 * count) {
        const Trajectory& traj = trajs[rng.index(trajs.size())];
        int t = rng.index(traj.steps.size());
        const auto& rec = traj.steps[t];
        env::GridState pre = env::state_from_causal(traj.initial_state, rec.pre_causal);
        env::GridState mid = env::dynamics_step(pre);
        auto valid = env::valid_interventions(mid, env::ActionMode::full);
        std::vector<env::Intervention> others;
        for (auto& iv : valid)
            if (!(iv == rec.intervention)) others.push_back(iv);
        if (others.empty()) continue;  // no distinct bad action exists
        std::string state_text = decoder::describe_state(rec.pre_causal, meta);
        out.push_back({state_text, rec.action_text, true});
        const auto& bad = others[rng.index(others.size())];
        out.push_back({state_text, text::describe_action(bad, mid, grammar, rng), false});
    }
    return out;
}

// Tasks: execute n random planner-mode actions from a fresh start; the goal
// is the resulting light states and vehicle positions.
inline std::vector<PlanningTask> generate_tasks(const env::EnvConfig& cfg, int n, int count, Rng& rng) {
    std::vector<PlanningTask> out;
    auto goal_idx = decoder::EntityMeta::from_config(cfg).goal_indices();
    for (int i = 0; i < count; ++i) {
        PlanningTask task;
        task.n = n;
        task.template_state = env::random_init(cfg, rng);
        task.start_causal = env::causal_vector(task.template_state);
        env::GridState state = task.template_state;
        for (int t = 0; t < n; ++t) {
            auto actions = env::valid_interventions(env::dynamics_step(state), env::ActionMode::planner);
            auto iv = actions[rng.index(actions.size())];
            state = env::intervention_cycle(state, iv, rng);
        }
        auto end = env::causal_vector(state);
        task.goal_indices = goal_idx;
        for (int idx : goal_idx) task.goal_values.push_back(end[idx]);
        out.push_back(std::move(task));
    }
    return out;
}

// -------------------------------------------------------------- transitions

// Flat training arrays: consecutive snapshot pairs with their annotations.
struct TransitionSet {
    Mat e_prev;   // N x M
    Mat e_next;   // N x M
    Mat coords;   // N x 2
    Mat c_prev;   // N x K (ground truth, used for evaluation only)
    Mat c_next;   // N x K
    std::vector<std::vector<int>> tokens;  // N x l
};

inline TransitionSet build_transitions(const std::vector<Trajectory>& trajs,
                                       const obs::ObservationMap& map, const text::Vocabulary& vocab,
                                       int token_len) {
    size_t total = 0;
    for (const auto& t : trajs) total += t.steps.size();
    if (total == 0) throw EmptyDataset("no transitions");
    int k = map.causal_dim, m = map.latent_dim;
    TransitionSet set;
    set.e_prev = Mat(static_cast<int>(total), m);
    set.e_next = Mat(static_cast<int>(total), m);
    set.coords = Mat(static_cast<int>(total), 2);
    set.c_prev = Mat(static_cast<int>(total), k);
    set.c_next = Mat(static_cast<int>(total), k);
    set.tokens.reserve(total);
    int r = 0;
    for (const auto& traj : trajs) {
        std::vector<double> e_before = obs::encode(map, traj.initial_observation);
        for (const auto& rec : traj.steps) {
            std::vector<double> e_after = obs::encode(map, rec.observation);
            set.e_prev.set_row(r, e_before);
            set.e_next.set_row(r, e_after);
            set.coords.at(r, 0) = rec.action_coords[0];
            set.coords.at(r, 1) = rec.action_coords[1];
            set.c_prev.set_row(r, rec.pre_causal);
            set.c_next.set_row(r, rec.post_causal);
            set.tokens.push_back(text::tokenize_pad(rec.action_text, token_len, vocab).ids);
            e_before = std::move(e_after);
            ++r;
        }
    }
    return set;
}

// -------------------------------------------------------------------- JSONL

inline json step_to_json(const StepRecord& rec, int traj, int t) {
    return json{{"type", "step"},
                {"traj", traj},
                {"t", t},
                {"pre", rec.pre_causal},
                {"iv", env::to_json(rec.intervention)},
                {"dir", rec.obstacle_dir},
                {"text", rec.action_text},
                {"coords", rec.action_coords},
                {"obs", rec.observation},
                {"post", rec.post_causal}};
}

inline StepRecord step_from_json(const json& j) {
    StepRecord rec;
    rec.pre_causal = j.at("pre").get<std::vector<double>>();
    rec.intervention = env::intervention_from_json(j.at("iv"));
    rec.obstacle_dir = j.at("dir").get<int>();
    rec.action_text = j.at("text").get<std::string>();
    auto cv = j.at("coords").get<std::vector<double>>();
    rec.action_coords = {cv.at(0), cv.at(1)};
    rec.observation = j.at("obs").get<std::vector<double>>();
    rec.post_causal = j.at("post").get<std::vector<double>>();
    return rec;
}

inline void save_trajectories(const std::string& path, const std::vector<Trajectory>& trajs,
                              const env::EnvConfig& cfg, uint64_t vocab_hash) {
    std::vector<json> lines;
    for (size_t i = 0; i < trajs.size(); ++i) {
        const auto& traj = trajs[i];
        lines.push_back(json{{"type", "traj"},
                             {"index", i},
                             {"seed", traj.seed},
                             {"init", env::to_json(traj.initial_state)},
                             {"obs0", traj.initial_observation}});
        for (size_t t = 0; t < traj.steps.size(); ++t)
            lines.push_back(step_to_json(traj.steps[t], static_cast<int>(i), static_cast<int>(t)));
    }
    json header{{"kind", "trajectories"},
                {"env", env::to_json(cfg)},
                {"vocab_hash", vocab_hash},
                {"entity_order", trajs.empty() ? json::array()
                                               : json(env::causal_var_names(trajs[0].initial_state))},
                {"count", trajs.size()},
                {"traj_len", trajs.empty() ? 0 : trajs[0].steps.size()}};
    io::write_jsonl(path, header, lines);
}

inline std::vector<Trajectory> load_trajectories(const std::string& path) {
    auto f = io::read_jsonl(path);
    std::vector<Trajectory> trajs;
    for (const auto& line : f.lines) {
        auto type = line.at("type").get<std::string>();
        if (type == "traj") {
            Trajectory t;
            t.seed = line.at("seed").get<uint64_t>();
            t.initial_state = env::grid_state_from_json(line.at("init"));
            t.initial_observation = line.at("obs0").get<std::vector<double>>();
            trajs.push_back(std::move(t));
        } else if (type == "step") {
            if (trajs.empty()) throw io::DataError("step before trajectory header in " + path);
            trajs.back().steps.push_back(step_from_json(line));
        }
    }
    if (trajs.empty()) throw EmptyDataset("no trajectories in " + path);
    return trajs;
}

inline void save_episodes(const std::string& path, const std::vector<Episode>& eps,
                          const env::EnvConfig& cfg) {
    std::vector<json> lines;
    for (const auto& ep : eps) {
        json ivs = json::array(), dirs = json::array(), coords = json::array();
        for (auto& iv : ep.interventions) ivs.push_back(env::to_json(iv));
        for (int d : ep.obstacle_dirs) dirs.push_back(d);
        for (auto& c : ep.coords) coords.push_back(c);
        lines.push_back(json{{"start", ep.start_causal},
                             {"actions", ep.actions},
                             {"ivs", ivs},
                             {"dirs", dirs},
                             {"coords", coords},
                             {"end", ep.end_causal},
                             {"template", env::to_json(ep.template_state)},
                             {"n", ep.n}});
    }
    io::write_jsonl(path, json{{"kind", "episodes"}, {"env", env::to_json(cfg)}, {"count", eps.size()}},
                    lines);
}

inline std::vector<Episode> load_episodes(const std::string& path) {
    auto f = io::read_jsonl(path);
    std::vector<Episode> eps;
    for (const auto& line : f.lines) {
        Episode ep;
        ep.start_causal = line.at("start").get<std::vector<double>>();
        ep.actions = line.at("actions").get<std::vector<std::string>>();
        for (const auto& iv : line.at("ivs")) ep.interventions.push_back(env::intervention_from_json(iv));
        ep.obstacle_dirs = line.at("dirs").get<std::vector<int>>();
        for (const auto& c : line.at("coords")) {
            auto v = c.get<std::vector<double>>();
            ep.coords.push_back({v.at(0), v.at(1)});
        }
        ep.end_causal = line.at("end").get<std::vector<double>>();
        ep.template_state = env::grid_state_from_json(line.at("template"));
        ep.n = line.at("n").get<int>();
        eps.push_back(std::move(ep));
    }
    return eps;
}

inline void save_icl_pool(const std::string& path, const std::vector<IclExample>& pool) {
    std::vector<json> lines;
    for (const auto& e : pool)
        lines.push_back(json{{"start", e.start_causal}, {"actions", e.actions}, {"end", e.end_causal}});
    io::write_jsonl(path, json{{"kind", "icl_pool"}, {"count", pool.size()}}, lines);
}

inline std::vector<IclExample> load_icl_pool(const std::string& path) {
    auto f = io::read_jsonl(path);
    std::vector<IclExample> pool;
    for (const auto& line : f.lines)
        pool.push_back({line.at("start").get<std::vector<double>>(),
                        line.at("actions").get<std::vector<std::string>>(),
                        line.at("end").get<std::vector<double>>()});
    return pool;
}

inline void save_self_eval(const std::string& path, const std::vector<SelfEvalSample>& samples) {
    std::vector<json> lines;
    for (const auto& s : samples)
        lines.push_back(
            json{{"state", s.state_text}, {"action", s.action_text}, {"label", s.good ? "good" : "bad"}});
    io::write_jsonl(path, json{{"kind", "self_eval"}, {"count", samples.size()}}, lines);
}

inline std::vector<SelfEvalSample> load_self_eval(const std::string& path) {
    auto f = io::read_jsonl(path);
    std::vector<SelfEvalSample> out;
    for (const auto& line : f.lines)
        out.push_back({line.at("state").get<std::string>(), line.at("action").get<std::string>(),
                       line.at("label").get<std::string>() == "good"});
    return out;
}

inline void save_tasks(const std::string& path, const std::vector<PlanningTask>& tasks) {
    std::vector<json> lines;
    for (const auto& t : tasks)
        lines.push_back(json{{"template", env::to_json(t.template_state)},
                             {"start", t.start_causal},
                             {"goal_idx", t.goal_indices},
                             {"goal_val", t.goal_values},
                             {"n", t.n}});
    io::write_jsonl(path, json{{"kind", "tasks"}, {"count", tasks.size()}}, lines);
}

inline std::vector<PlanningTask> load_tasks(const std::string& path) {
    auto f = io::read_jsonl(path);
    std::vector<PlanningTask> out;
    for (const auto& line : f.lines) {
        PlanningTask t;
        t.template_state = env::grid_state_from_json(line.at("template"));
        t.start_causal = line.at("start").get<std::vector<double>>();
        t.goal_indices = line.at("goal_idx").get<std::vector<int>>();
        t.goal_values = line.at("goal_val").get<std::vector<double>>();
        t.n = line.at("n").get<int>();
        out.push_back(std::move(t));
    }
    return out;
}

// ------------------------------------------------------------ labeled sets

// Labeled subset for decoder fitting: one JSON object per line carrying the
// ground-truth causal vector plus either an observation or a latent vector.
struct LabeledSample {
    std::vector<double> observation;  // empty when latent given directly
    std::vector<double> latent;
    std::vector<double> causal;
};

inline void save_labeled_subset(const std::string& path, const std::vector<LabeledSample>& samples) {
    std::vector<json> lines;
    for (const auto& s : samples) {
        json j{{"causal", s.causal}};
        if (!s.latent.empty())
            j["latent"] = s.latent;
        else
            j["obs"] = s.observation;
        lines.push_back(std::move(j));
    }
    io::write_jsonl(path, json{{"kind", "labeled_subset"}, {"count", samples.size()}}, lines);
}

inline std::vector<LabeledSample> load_labeled_subset(const std::string& path) {
    auto f = io::read_jsonl(path);
    std::vector<LabeledSample> out;
    for (const auto& line : f.lines) {
        LabeledSample s;
        s.causal = line.at("causal").get<std::vector<double>>();
        if (line.contains("latent")) s.latent = line.at("latent").get<std::vector<double>>();
        if (line.contains("obs")) s.observation = line.at("obs").get<std::vector<double>>();
        out.push_back(std::move(s));
    }
    return out;
}

// ------------------------------------------------------------- full bundles

struct GenSpec {
    env::EnvConfig env_cfg;
    text::Pcfg grammar;
    double scale = 0.05;  // fraction of the full-size counts
    uint64_t seed = 0;
    int traj_len = 100;
    int token_len = 32;
    int obs_dim = 16;
    int latent_dim = 16;
    obs::Nonlinearity nonlinearity = obs::Nonlinearity::smooth;
    // full-scale counts, scaled by `scale`
    int train_traj = 10000;
    int val_traj = 1000;
    int test_traj = 1000;
    int icl_traj = 100;
    std::vector<int> nstep_values{1, 2, 4, 6, 8};
    int nstep_episodes = 100;
    int icl_pool_size = 10;
    int self_eval_count = 100;
    std::vector<int> task_ns{2, 4, 6, 8};
    int task_count = 100;

    int scaled(int full) const { return std::max(1, static_cast<int>(std::lround(full * scale))); }
};

// Generate every dataset of a run into `dir`. Returns the vocabulary hash.
inline uint64_t generate_datasets(const GenSpec& spec, const std::string& dir) {
    std::filesystem::create_directories(dir);
    auto vocab = text::build_vocabulary(spec.grammar);
    Rng root(spec.seed);
    auto map = obs::make_mixing(spec.env_cfg.causal_dim(), spec.obs_dim, spec.latent_dim,
                                root, spec.nonlinearity);

    io::write_text_file(dir + "/env.json", env::to_json(spec.env_cfg).dump(2) + "\n");
    io::write_text_file(dir + "/grammar.json", text::to_json(spec.grammar).dump(2) + "\n");
    io::write_text_file(dir + "/vocab.txt", vocab.serialize());
    io::write_text_file(dir + "/obsmap.json", obs::to_json(map).dump() + "\n");

    uint64_t vh = vocab.hash();
    // disjoint seed streams per split
    Rng train_rng = root.fork(1), val_rng = root.fork(2), test_rng = root.fork(3), icl_rng = root.fork(4);
    auto train = generate_trajectories(spec.env_cfg, map, spec.grammar, spec.scaled(spec.train_traj),
                                       spec.traj_len, train_rng);
    save_trajectories(dir + "/train.jsonl", train, spec.env_cfg, vh);
    auto val = generate_trajectories(spec.env_cfg, map, spec.grammar, spec.scaled(spec.val_traj),
                                     spec.traj_len, val_rng);
    save_trajectories(dir + "/val.jsonl", val, spec.env_cfg, vh);
    auto test = generate_trajectories(spec.env_cfg, map, spec.grammar, spec.scaled(spec.test_traj),
                                      spec.traj_len, test_rng);
    save_trajectories(dir + "/test.jsonl", test, spec.env_cfg, vh);
    auto icl_trajs = generate_trajectories(spec.env_cfg, map, spec.grammar, spec.scaled(spec.icl_traj),
                                           spec.traj_len, icl_rng);
    save_trajectories(dir + "/icl.jsonl", icl_trajs, spec.env_cfg, vh);

    Rng splice_rng = root.fork(5);
    for (int n : spec.nstep_values)
        save_episodes(dir + "/nstep_" + std::to_string(n) + ".jsonl",
                      splice_nstep(test, n, spec.nstep_episodes, splice_rng), spec.env_cfg);

    Rng pool_rng = root.fork(6);
    save_icl_pool(dir + "/icl_pool.jsonl", build_icl_pool(icl_trajs, spec.icl_pool_size, pool_rng));

    Rng se_rng = root.fork(7);
    auto meta = decoder::EntityMeta::from_config(spec.env_cfg);
    save_self_eval(dir + "/self_eval.jsonl",
                   build_self_eval_samples(icl_trajs, spec.self_eval_count, meta, spec.grammar, se_rng));

    Rng task_rng = root.fork(8);
    for (int n : spec.task_ns)
        save_tasks(dir + "/tasks_" + std::to_string(n) + ".jsonl",
                   generate_tasks(spec.env_cfg, n, spec.task_count, task_rng));

    // default labeled subset for decoder fitting, drawn from validation states
    Rng label_rng = root.fork(9);
    std::vector<LabeledSample> labels;
    size_t label_budget = 500;
    while (labels.size() < label_budget) {
        const auto& traj = val[label_rng.index(val.size())];
        const auto& rec = traj.steps[label_rng.index(traj.steps.size())];
        labels.push_back({rec.observation, {}, rec.post_causal});
    }
    save_labeled_subset(dir + "/labels.jsonl", labels);
    return vh;
}

} // namespace cwm::data
