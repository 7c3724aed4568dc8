// Causally-aware MCTS: UCT selection, expansion through a world model,
// greedy simulation on immediate rewards, and mean-return backpropagation
// with max aggregation into Q. Rewards come from a pluggable action scorer;
// the bundled scorers are a goal-distance heuristic, a uniform baseline and
// a subprocess bridge speaking line-delimited JSON.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "cwm/action_text.hpp"
#include "cwm/data_pipeline.hpp"
#include "cwm/decoder.hpp"
#include "cwm/gridworld.hpp"
#include "cwm/runtime.hpp"
#include "cwm/subprocess.hpp"

namespace cwm::mcts {

using nlohmann::json;

struct NotExpanded : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Opaque planner state: a causal estimate plus its text rendering; z is
// carried when a learned model produced the state.
struct PlanState {
    std::vector<double> causal;
    std::string text;
    std::vector<double> z;
};

class WorldModel {
public:
    virtual ~WorldModel() = default;
    virtual PlanState initial() = 0;
    virtual std::vector<std::string> actions(const PlanState& s) = 0;
    virtual PlanState step(const PlanState& s, const std::string& action) = 0;
};

class ActionScorer {
public:
    virtual ~ActionScorer() = default;
    virtual double intuition(const std::string& state_text, const std::string& action_text) = 0;
    virtual double self_eval(const std::string& state_text, const std::string& action_text) = 0;
    double score(const std::string& state_text, const std::string& action_text) {
        return intuition(state_text, action_text) + self_eval(state_text, action_text);
    }
};

using GoalPredicate = std::function<bool(const PlanState&)>;

enum class QAggregation { max_of_means, mean_of_means };

struct PlannerConfig {
    int rollouts = 50;
    int depth_limit = 4;
    double exploration = 1.0;
    QAggregation aggregation = QAggregation::max_of_means;

    void validate() const {
        if (rollouts < 1 || depth_limit < 1 || exploration < 0)
            throw env::ConfigError("planner config out of range");
    }
};

struct PlanNode {
    PlanState state;
    bool expanded = false;
    bool terminal = false;
    int visits = 0;
    std::vector<std::string> actions;
    std::vector<int> children;
    std::vector<double> rewards;
    std::vector<double> q;
    std::vector<int> q_updates;
};

class Planner {
public:
    Planner(WorldModel& wm, GoalPredicate goal, ActionScorer& scorer, PlannerConfig cfg)
        : wm_(wm), goal_(std::move(goal)), scorer_(scorer), cfg_(cfg) {
        cfg_.validate();
        PlanNode root;
        root.state = wm_.initial();
        root.terminal = goal_(root.state);
        nodes_.push_back(std::move(root));
    }

    const PlanNode& node(int id) const { return nodes_[id]; }
    int root_visits() const { return nodes_[0].visits; }

    // UCT argmax; unvisited children score +infinity and win by index order.
    int uct_select(int id) const {
        const PlanNode& n = nodes_[id];
        if (!n.expanded) throw NotExpanded("uct_select on an unexpanded node");
        if (n.actions.empty()) throw NotExpanded("uct_select on a node with no actions");
        int best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (size_t a = 0; a < n.actions.size(); ++a) {
            int child_visits = nodes_[n.children[a]].visits;
            double score;
            if (child_visits == 0) {
                score = std::numeric_limits<double>::infinity();
            } else {
                score = n.q[a] +
                        cfg_.exploration * std::sqrt(std::log(std::max(1, n.visits)) / child_visits);
            }
            if (score > best_score) {
                best_score = score;
                best = static_cast<int>(a);
            }
        }
        return best;
    }

    // One child per valid action; rewards are intuition + self-evaluation.
    void expand(int id) {
        if (nodes_[id].expanded || nodes_[id].terminal) return;
        // copy: growing nodes_ below invalidates references into it
        const PlanState state = nodes_[id].state;
        for (const auto& a : wm_.actions(state)) {
            PlanNode child;
            child.state = wm_.step(state, a);
            child.terminal = goal_(child.state);
            int cid = static_cast<int>(nodes_.size());
            nodes_.push_back(std::move(child));
            PlanNode& cur = nodes_[id];
            cur.actions.push_back(a);
            cur.children.push_back(cid);
            cur.rewards.push_back(scorer_.score(state.text, a));
            cur.q.push_back(0.0);
            cur.q_updates.push_back(0);
        }
        nodes_[id].expanded = true;
    }

    // Greedy action on stored immediate rewards, ties by index.
    int simulate_greedy(int id) const {
        const PlanNode& n = nodes_[id];
        if (!n.expanded) throw NotExpanded("simulate_greedy on an unexpanded node");
        if (n.actions.empty()) throw NotExpanded("simulate_greedy with no actions");
        int best = 0;
        for (size_t a = 1; a < n.actions.size(); ++a)
            if (n.rewards[a] > n.rewards[best]) best = static_cast<int>(a);
        return best;
    }

    struct PathEntry {
        int node;
        int action;
        double reward;
    };

    // Returns at each prefix are the mean of the remaining rewards; Q keeps
    // the best return seen (or the running mean, per configuration).
    void backpropagate(const std::vector<PathEntry>& path) {
        if (path.empty()) return;
        double suffix = 0.0;
        int count = 0;
        for (auto it = path.rbegin(); it != path.rend(); ++it) {
            suffix += it->reward;
            ++count;
            double g = suffix / count;
            PlanNode& n = nodes_[it->node];
            if (cfg_.aggregation == QAggregation::max_of_means) {
                if (n.q_updates[it->action] == 0 || g > n.q[it->action]) n.q[it->action] = g;
            } else {
                n.q[it->action] =
                    (n.q[it->action] * n.q_updates[it->action] + g) / (n.q_updates[it->action] + 1);
            }
            n.q_updates[it->action] += 1;
        }
    }

    void rollout() {
        std::vector<PathEntry> path;
        int cur = 0;
        int depth = 0;
        // selection through visited, expanded nodes
        while (nodes_[cur].visits > 0 && nodes_[cur].expanded && !nodes_[cur].terminal &&
               depth < cfg_.depth_limit && !nodes_[cur].actions.empty()) {
            nodes_[cur].visits += 1;
            int a = uct_select(cur);
            path.push_back({cur, a, nodes_[cur].rewards[a]});
            cur = nodes_[cur].children[a];
            ++depth;
        }
        // expansion and greedy simulation to the depth limit
        while (!nodes_[cur].terminal && depth < cfg_.depth_limit) {
            nodes_[cur].visits += 1;
            if (!nodes_[cur].expanded) expand(cur);
            if (nodes_[cur].actions.empty()) break;
            int a = simulate_greedy(cur);
            path.push_back({cur, a, nodes_[cur].rewards[a]});
            cur = nodes_[cur].children[a];
            ++depth;
        }
        nodes_[cur].visits += 1;  // terminal or depth-limited leaf
        backpropagate(path);
    }

    // Full loop; the answer follows argmax-Q from the root.
    std::vector<std::string> plan() {
        if (nodes_[0].terminal) return {};
        for (int n = 0; n < cfg_.rollouts; ++n) rollout();
        std::vector<std::string> actions;
        int cur = 0;
        int depth = 0;
        while (depth < cfg_.depth_limit && nodes_[cur].expanded && !nodes_[cur].terminal) {
            int best = -1;
            for (size_t a = 0; a < nodes_[cur].actions.size(); ++a) {
                if (nodes_[cur].q_updates[a] == 0) continue;
                if (best < 0 || nodes_[cur].q[a] > nodes_[cur].q[best]) best = static_cast<int>(a);
            }
            if (best < 0) break;
            actions.push_back(nodes_[cur].actions[best]);
            cur = nodes_[cur].children[best];
            ++depth;
        }
        return actions;
    }

private:
    WorldModel& wm_;
    GoalPredicate goal_;
    ActionScorer& scorer_;
    PlannerConfig cfg_;
    std::vector<PlanNode> nodes_;
};

inline std::vector<std::string> plan(WorldModel& wm, const GoalPredicate& goal, ActionScorer& scorer,
                                     const PlannerConfig& cfg) {
    Planner planner(wm, goal, scorer, cfg);
    return planner.plan();
}

// ------------------------------------------------------------ world models

// Ground-truth simulator behind the planner interface. Deterministic: the
// planner action set (toggles + noop) never moves obstacles.
class OracleWorldModel : public WorldModel {
public:
    OracleWorldModel(env::GridState start, decoder::EntityMeta meta, text::Pcfg grammar)
        : start_(std::move(start)), meta_(std::move(meta)), grammar_(std::move(grammar)) {}

    PlanState initial() override {
        return make_state(start_);
    }

    std::vector<std::string> actions(const PlanState& s) override {
        env::GridState state = state_of(s);
        std::vector<std::string> out;
        for (const auto& iv : env::valid_interventions(state, env::ActionMode::planner))
            out.push_back(text::canonical_describe(iv, state));
        return out;
    }

    PlanState step(const PlanState& s, const std::string& action) override {
        env::GridState state = state_of(s);
        auto iv = text::parse_action(action, state, grammar_, env::ActionMode::planner);
        Rng rng(0);  // planner-mode interventions draw nothing
        return make_state(env::intervention_cycle(state, iv, rng));
    }

private:
    PlanState make_state(const env::GridState& g) const {
        PlanState s;
        s.causal = env::causal_vector(g);
        s.text = decoder::describe_state(s.causal, meta_);
        return s;
    }
    env::GridState state_of(const PlanState& s) const {
        return env::state_from_causal(start_, s.causal);
    }

    env::GridState start_;
    decoder::EntityMeta meta_;
    text::Pcfg grammar_;
};

// Learned model behind the same interface: transitions in latent space,
// valid actions enumerated from the decoded state text.
class CwmWorldModel : public WorldModel {
public:
    CwmWorldModel(const crl::CwmParams& params, env::GridState start_template,
                  std::vector<double> start_observation)
        : params_(params), template_(std::move(start_template)), x0_(std::move(start_observation)) {}

    PlanState initial() override {
        auto latent = runtime::encode_obs(params_, x0_);
        return make_state(latent.z);
    }

    std::vector<std::string> actions(const PlanState& s) override {
        // decoded text -> concrete state estimate -> planner action set
        env::GridState est = template_;
        if (auto parsed = decoder::parse_state_description(s.text, params_.meta))
            est = env::state_from_causal(template_, *parsed);
        std::vector<std::string> out;
        for (const auto& iv : env::valid_interventions(est, env::ActionMode::planner))
            out.push_back(text::canonical_describe(iv, est));
        return out;
    }

    PlanState step(const PlanState& s, const std::string& action) override {
        runtime::LatentState latent;
        latent.z = s.z;
        auto next = runtime::sample_next_state(params_, latent, runtime::encode_action(params_, action),
                                               runtime::LatentState::Mode::mean);
        return make_state(next.z_next.z);
    }

private:
    PlanState make_state(const std::vector<double>& z) const {
        PlanState s;
        s.z = z;
        runtime::LatentState latent;
        latent.z = z;
        s.causal = runtime::map_causal(params_, latent);
        s.text = decoder::describe_state(s.causal, params_.meta);
        return s;
    }

    const crl::CwmParams& params_;
    env::GridState template_;
    std::vector<double> x0_;
};

// ----------------------------------------------------------------- scorers

class UniformScorer : public ActionScorer {
public:
    double intuition(const std::string&, const std::string&) override { return 0.0; }
    double self_eval(const std::string&, const std::string&) override { return 0.0; }
};

// Negative count of mismatched goal variables after a one-step lookahead in
// the ground-truth dynamics, computed from the decoded state text.
class GoalDistanceScorer : public ActionScorer {
public:
    GoalDistanceScorer(env::GridState tmpl, decoder::EntityMeta meta, text::Pcfg grammar,
                       std::vector<int> goal_indices, std::vector<double> goal_values)
        : template_(std::move(tmpl)),
          meta_(std::move(meta)),
          grammar_(std::move(grammar)),
          goal_indices_(std::move(goal_indices)),
          goal_values_(std::move(goal_values)) {}

    double intuition(const std::string& state_text, const std::string& action_text) override {
        env::GridState state = template_;
        if (auto parsed = decoder::parse_state_description(state_text, meta_))
            state = env::state_from_causal(template_, *parsed);
        auto iv = text::parse_action(action_text, state, grammar_, env::ActionMode::planner);
        Rng rng(0);
        auto next = env::causal_vector(env::intervention_cycle(state, iv, rng));
        int mismatches = 0;
        for (size_t i = 0; i < goal_indices_.size(); ++i) {
            int idx = goal_indices_[i];
            if (env::denormalize_cell(next[idx], template_.grid_size) !=
                env::denormalize_cell(goal_values_[i], template_.grid_size))
                ++mismatches;
        }
        return -static_cast<double>(mismatches);
    }
    double self_eval(const std::string&, const std::string&) override { return 0.0; }

private:
    env::GridState template_;
    decoder::EntityMeta meta_;
    text::Pcfg grammar_;
    std::vector<int> goal_indices_;
    std::vector<double> goal_values_;
};

// Bridges scorer queries to a child process over line-delimited JSON.
// Request: {state_text, action_text, icl:[...], kind:"intuition"|"self_eval"}
// Response: {"value": <real>}. Timeouts fall back to 0 and are logged.
class ExternalScorer : public ActionScorer {
public:
    ExternalScorer(const std::string& command, std::vector<data::IclExample> icl_pool,
                   std::vector<data::SelfEvalSample> self_eval_pool, uint64_t seed = 0,
                   int timeout_ms = 10000)
        : proc_(command),
          icl_pool_(std::move(icl_pool)),
          self_eval_pool_(std::move(self_eval_pool)),
          rng_(seed),
          timeout_ms_(timeout_ms) {}

    double intuition(const std::string& state_text, const std::string& action_text) override {
        return query(state_text, action_text, "intuition");
    }
    double self_eval(const std::string& state_text, const std::string& action_text) override {
        return query(state_text, action_text, "self_eval");
    }

    int timeouts() const { return timeouts_; }

private:
    double query(const std::string& state_text, const std::string& action_text,
                 const std::string& kind) {
        json icl = json::array();
        if (icl_pool_.size() >= 2) {
            auto [a, b] = data::sample_icl(icl_pool_, rng_);
            for (const auto* ex : {a, b})
                icl.push_back(json{{"start", ex->start_causal},
                                   {"actions", ex->actions},
                                   {"end", ex->end_causal}});
        }
        json req{{"state_text", state_text},
                 {"action_text", action_text},
                 {"icl", icl},
                 {"kind", kind}};
        std::string line;
        try {
            proc_.write_line(req.dump());
            if (!proc_.read_line(line, timeout_ms_)) {
                ++timeouts_;
                std::fprintf(stderr, "external scorer timeout; treating query as neutral\n");
                return 0.0;
            }
            return json::parse(line).at("value").get<double>();
        } catch (const std::exception& e) {
            ++timeouts_;
            std::fprintf(stderr, "external scorer error: %s\n", e.what());
            return 0.0;
        }
    }

    proc::Subprocess proc_;
    std::vector<data::IclExample> icl_pool_;
    std::vector<data::SelfEvalSample> self_eval_pool_;
    Rng rng_;
    int timeout_ms_;
    int timeouts_ = 0;
};

} // namespace cwm::mcts
