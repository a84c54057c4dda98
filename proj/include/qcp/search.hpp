#pragma once

#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "qcp/game.hpp"
#include "qcp/qfunction.hpp"

namespace qcp {

/// How the admissibility slack delta is derived from the predictive variance.
enum class DeltaMode {
    kStochastic,  // delta = |z|, z ~ N(0, variance)
    kLiteral,     // delta = variance, no randomness
};

/// Which actions a tree node may expand.
enum class AdmissibilityMode {
    kGated,   // variance-gated threshold test plus random rescue
    kAll,     // every action (vanilla UCT)
    kRandom,  // exactly one uniformly random action per node visit
};

struct SearchConfig {
    int horizon = 4;                  // maximum tree depth per iteration
    int budget = 64;                  // tree iterations (trajectories for the TD variant)
    double exploration = 0.7;         // scale of the UCB bonus
    double lambda = 0.6;              // admissibility threshold factor
    double epsilon_admissible = 0.3;  // rescue probability for gated-out actions
    double epsilon_rollout = 0.1;     // exploration rate inside roll-outs
    int rollout_count = 3;            // roll-outs averaged per leaf
    int rollout_cap = 25;             // maximum roll-out length
    double alpha = 0.2;               // target learning rate
    double gamma = 0.8;               // discount
    DeltaMode delta_mode = DeltaMode::kStochastic;
    bool count_rollout_states = false;  // include roll-out states in the explored set
    std::ostream* trace = nullptr;      // per-iteration diagnostics when set
};

struct SearchResult {
    std::vector<Sample> samples;  // regression targets along the final greedy path
    int new_states = 0;           // states newly added to the explored set
    int tree_nodes = 0;
    long sim_steps = 0;           // simulated environment transitions
};

// ---------------------------------------------------------------------------
// Explored-state accounting
// ---------------------------------------------------------------------------

/// Set of visited states. Grid games with integral features use exact byte
/// hashing; continuous games deduplicate within the per-feature tolerance via
/// a bucket index (bucket width twice the tolerance, so any two states within
/// tolerance land in the same or an adjacent bucket on every axis).
class ExploredSet {
public:
    ExploredSet(std::vector<double> tolerance, bool exact)
        : tolerance_(std::move(tolerance)), exact_(exact) {
        if (!exact_) {
            widths_.reserve(tolerance_.size());
            for (double t : tolerance_) widths_.push_back(t > 0.0 ? 2.0 * t : 1.0);
        }
    }

    explicit ExploredSet(const Game& game) : ExploredSet(game.tolerance(), game.integral_grid()) {}

    /// Returns true when the state was not already present.
    bool insert(const std::vector<double>& features) {
        if (exact_) return exact_keys_.insert(feature_hash(features)).second;
        if (find_within_tolerance(features)) return false;
        const std::uint64_t key = bucket_key(features, nullptr);
        states_.push_back(features);
        buckets_[key].push_back(static_cast<std::uint32_t>(states_.size() - 1));
        return true;
    }

    bool insert(const GameState& state) { return insert(state.features); }

    bool contains(const std::vector<double>& features) const {
        if (exact_) return exact_keys_.count(feature_hash(features)) > 0;
        return find_within_tolerance(features);
    }

    std::size_t size() const { return exact_ ? exact_keys_.size() : states_.size(); }

private:
    std::uint64_t bucket_key(const std::vector<double>& features, const long long* shifted) const {
        std::uint64_t h = 1469598103934665603ull;
        for (std::size_t i = 0; i < features.size(); ++i) {
            long long cell = shifted ? shifted[i]
                                     : static_cast<long long>(std::floor(features[i] / widths_[i]));
            const auto* bytes = reinterpret_cast<const unsigned char*>(&cell);
            for (std::size_t b = 0; b < sizeof(cell); ++b) {
                h ^= bytes[b];
                h *= 1099511628211ull;
            }
        }
        return h;
    }

    bool matches(const std::vector<double>& a, const std::vector<double>& b) const {
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (std::abs(a[i] - b[i]) > tolerance_[i]) return false;
        }
        return true;
    }

    bool find_within_tolerance(const std::vector<double>& features) const {
        const std::size_t dims = features.size();
        std::vector<long long> base(dims), cell(dims);
        for (std::size_t i = 0; i < dims; ++i) {
            base[i] = static_cast<long long>(std::floor(features[i] / widths_[i]));
        }
        // Walk every neighboring bucket combination.
        std::vector<int> offset(dims, -1);
        while (true) {
            for (std::size_t i = 0; i < dims; ++i) cell[i] = base[i] + offset[i];
            auto it = buckets_.find(bucket_key(features, cell.data()));
            if (it != buckets_.end()) {
                for (std::uint32_t idx : it->second) {
                    if (matches(features, states_[idx])) return true;
                }
            }
            std::size_t d = 0;
            while (d < dims && offset[d] == 1) offset[d++] = -1;
            if (d == dims) break;
            ++offset[d];
        }
        return false;
    }

    std::vector<double> tolerance_;
    std::vector<double> widths_;
    bool exact_;
    std::unordered_set<std::uint64_t> exact_keys_;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> buckets_;
    std::vector<std::vector<double>> states_;
};

// ---------------------------------------------------------------------------
// Admissibility and selection rules
// ---------------------------------------------------------------------------

/// Actions whose predicted value clears lambda * max minus a slack drawn from
/// the predictive variance. Gated-out actions are rescued with probability
/// epsilon; the argmax action is always kept. Returns ascending action ids.
inline std::vector<int> admissible_actions(const std::vector<gmm::Prediction>& preds, double lambda,
                                           double epsilon, DeltaMode mode, Rng& rng) {
    require(!preds.empty(), "admissible_actions: no actions");
    int arg = 0;
    for (int a = 1; a < static_cast<int>(preds.size()); ++a) {
        if (preds[static_cast<std::size_t>(a)].mean > preds[static_cast<std::size_t>(arg)].mean) arg = a;
    }
    const double threshold = lambda * preds[static_cast<std::size_t>(arg)].mean;
    std::vector<int> out;
    out.reserve(preds.size());
    for (int a = 0; a < static_cast<int>(preds.size()); ++a) {
        bool keep = (a == arg);
        if (!keep) {
            const double gap = threshold - preds[static_cast<std::size_t>(a)].mean;
            if (gap <= 0.0) {
                keep = true;
            } else {
                const double delta = mode == DeltaMode::kStochastic
                                         ? std::abs(normal_draw(rng, preds[static_cast<std::size_t>(a)].variance))
                                         : preds[static_cast<std::size_t>(a)].variance;
                keep = delta >= gap;
                if (!keep && epsilon > 0.0 && uniform_unit(rng) < epsilon) keep = true;
            }
        }
        if (keep) out.push_back(a);
    }
    return out;
}

/// Convenience overload evaluating the approximator at the state first.
inline std::vector<int> admissible_actions(const QApproximator& qhat, const GameState& state,
                                           double lambda, double epsilon, DeltaMode mode, Rng& rng) {
    return admissible_actions(qhat.predict_all(state.features), lambda, epsilon, mode, rng);
}

/// Per-node candidate actions under each expansion strategy: the gated set,
/// every action, or exactly one uniformly random action.
inline std::vector<int> admissible_under_mode(const std::vector<gmm::Prediction>& preds,
                                              int n_actions, AdmissibilityMode mode,
                                              const SearchConfig& cfg, Rng& rng) {
    switch (mode) {
        case AdmissibilityMode::kGated:
            return admissible_actions(preds, cfg.lambda, cfg.epsilon_admissible, cfg.delta_mode, rng);
        case AdmissibilityMode::kAll: {
            std::vector<int> all(static_cast<std::size_t>(n_actions));
            std::iota(all.begin(), all.end(), 0);
            return all;
        }
        case AdmissibilityMode::kRandom:
            return std::vector<int>{uniform_index(rng, n_actions)};
    }
    return {};
}

/// UCB bonus: c * sqrt(log(total) / visits), infinite for unvisited actions.
inline double ucb_exploration(long total_visits, long action_visits, double c) {
    if (action_visits <= 0) return std::numeric_limits<double>::infinity();
    return c * std::sqrt(std::log(static_cast<double>(total_visits)) / static_cast<double>(action_visits));
}

/// Picks the admissible action maximizing predicted value plus the UCB bonus.
/// The visit total is taken over the admissible subset; ties resolve to the
/// lowest action id.
inline int select_action_ucb(const std::vector<gmm::Prediction>& preds,
                             const std::vector<long>& visits, const std::vector<int>& admissible,
                             double c) {
    require(!admissible.empty(), "select_action_ucb: empty admissible set");
    long total = 0;
    for (int a : admissible) total += visits[static_cast<std::size_t>(a)];
    int best = admissible.front();
    double best_value = -std::numeric_limits<double>::infinity();
    for (int a : admissible) {
        const double value = preds[static_cast<std::size_t>(a)].mean +
                             ucb_exploration(total, visits[static_cast<std::size_t>(a)], c);
        if (value > best_value) {
            best_value = value;
            best = a;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Roll-outs
// ---------------------------------------------------------------------------

/// Discounted return of one epsilon-greedy play-out by all agents. When
/// `collect` is given, visited states enter the explored set and additions
/// are tallied into `new_states`.
inline double rollout(const Game& game, const GameState& start,
                      const std::vector<const QApproximator*>& approximators,
                      const SearchConfig& cfg, Rng& rng, long& sim_steps,
                      ExploredSet* collect = nullptr, int* new_states = nullptr) {
    GameState state = start;
    double value = 0.0;
    double discount = 1.0;
    for (int t = 0; t < cfg.rollout_cap && !state.terminal; ++t) {
        JointAction joint;
        joint.action_ids.resize(static_cast<std::size_t>(game.agent_count()));
        for (int j = 0; j < game.agent_count(); ++j) {
            joint.action_ids[static_cast<std::size_t>(j)] =
                epsilon_greedy_action(*approximators[static_cast<std::size_t>(j)], state,
                                      cfg.epsilon_rollout, rng);
        }
        const StepOutcome outcome = step(game, state, joint, rng);
        ++sim_steps;
        value += discount * outcome.reward;
        discount *= cfg.gamma;
        state = outcome.next_state;
        if (collect && collect->insert(state) && new_states) ++*new_states;
    }
    return value;
}

// ---------------------------------------------------------------------------
// Tree search engine
// ---------------------------------------------------------------------------

namespace detail {

struct OutcomeEntry {
    double reward = 0.0;
    long visits = 0;
    int node = -1;
};

struct ActionEdge {
    long visits = 0;
    double value_sum = 0.0;
    std::vector<OutcomeEntry> outcomes;
};

struct TreeNode {
    GameState state;
    std::vector<ActionEdge> edges;
    // Candidate actions, fixed per node: the admissible subset is a property
    // of the state, decided once when the node is first selected from.
    // Empty means "not yet computed" (a computed set is never empty because
    // the predicted-value argmax is always kept).
    std::vector<int> admissible;
};

inline SearchResult tree_search(const Game& game, const GameState& root, int agent_id,
                                const std::vector<const QApproximator*>& approximators,
                                AdmissibilityMode mode, const SearchConfig& cfg,
                                ExploredSet& explored, Rng& rng) {
    require(agent_id >= 0 && agent_id < game.agent_count(), "tree_search: agent out of range");
    require(static_cast<int>(approximators.size()) == game.agent_count(),
            "tree_search: one approximator per agent required");
    require(!root.terminal, "tree_search: root state is terminal");
    const int n_actions = game.action_count(agent_id);
    const std::vector<double> xi = game.tolerance();
    const QApproximator& self = *approximators[static_cast<std::size_t>(agent_id)];

    SearchResult result;
    std::vector<TreeNode> nodes;
    nodes.reserve(static_cast<std::size_t>(cfg.budget * cfg.horizon + 1));
    nodes.push_back(TreeNode{root, std::vector<ActionEdge>(static_cast<std::size_t>(n_actions))});
    if (explored.insert(root)) ++result.new_states;

    struct PathStep {
        int node;
        int action;
        int entry;
    };
    std::vector<PathStep> path;
    std::vector<long> visits(static_cast<std::size_t>(n_actions));

    for (int it = 0; it < cfg.budget; ++it) {
        path.clear();
        int node = 0;
        std::string root_admissible;
        int root_action = -1;
        for (int depth = 0; depth < cfg.horizon; ++depth) {
            if (nodes[static_cast<std::size_t>(node)].state.terminal) break;
            const auto& preds = self.predict_all(nodes[static_cast<std::size_t>(node)].state.features);
            if (nodes[static_cast<std::size_t>(node)].admissible.empty()) {
                nodes[static_cast<std::size_t>(node)].admissible =
                    admissible_under_mode(preds, n_actions, mode, cfg, rng);
            }
            const std::vector<int> admissible = nodes[static_cast<std::size_t>(node)].admissible;
            for (int a = 0; a < n_actions; ++a) {
                visits[static_cast<std::size_t>(a)] =
                    nodes[static_cast<std::size_t>(node)].edges[static_cast<std::size_t>(a)].visits;
            }
            const int action = select_action_ucb(preds, visits, admissible, cfg.exploration);
            if (depth == 0 && cfg.trace) {
                for (const int a : admissible) {
                    if (!root_admissible.empty()) root_admissible += ',';
                    root_admissible += std::to_string(a);
                }
                root_action = action;
            }

            JointAction joint;
            joint.action_ids.resize(static_cast<std::size_t>(game.agent_count()));
            for (int j = 0; j < game.agent_count(); ++j) {
                joint.action_ids[static_cast<std::size_t>(j)] =
                    j == agent_id
                        ? action
                        : greedy_action_deterministic(*approximators[static_cast<std::size_t>(j)],
                                                      nodes[static_cast<std::size_t>(node)].state);
            }
            const StepOutcome outcome = step(game, nodes[static_cast<std::size_t>(node)].state, joint, rng);
            ++result.sim_steps;

            auto& edge = nodes[static_cast<std::size_t>(node)].edges[static_cast<std::size_t>(action)];
            int entry_index = -1;
            for (std::size_t e = 0; e < edge.outcomes.size(); ++e) {
                const int child = edge.outcomes[e].node;
                if (states_equal(outcome.next_state, nodes[static_cast<std::size_t>(child)].state, xi)) {
                    entry_index = static_cast<int>(e);
                    break;
                }
            }
            if (entry_index < 0) {
                const int child = static_cast<int>(nodes.size());
                nodes.push_back(TreeNode{
                    outcome.next_state,
                    std::vector<ActionEdge>(static_cast<std::size_t>(n_actions)),
                });
                edge.outcomes.push_back(OutcomeEntry{outcome.reward, 0, child});
                entry_index = static_cast<int>(edge.outcomes.size()) - 1;
                if (explored.insert(outcome.next_state)) ++result.new_states;
            }
            edge.outcomes[static_cast<std::size_t>(entry_index)].visits++;
            path.push_back(PathStep{node, action, entry_index});
            node = edge.outcomes[static_cast<std::size_t>(entry_index)].node;
        }

        double value = 0.0;
        if (!nodes[static_cast<std::size_t>(node)].state.terminal) {
            ExploredSet* collect = cfg.count_rollout_states ? &explored : nullptr;
            for (int m = 0; m < cfg.rollout_count; ++m) {
                value += rollout(game, nodes[static_cast<std::size_t>(node)].state, approximators, cfg,
                                 rng, result.sim_steps, collect, &result.new_states);
            }
            value /= std::max(1, cfg.rollout_count);
        }
        for (auto rit = path.rbegin(); rit != path.rend(); ++rit) {
            auto& edge = nodes[static_cast<std::size_t>(rit->node)].edges[static_cast<std::size_t>(rit->action)];
            value = edge.outcomes[static_cast<std::size_t>(rit->entry)].reward + cfg.gamma * value;
            edge.visits++;
            edge.value_sum += value;
        }
        if (cfg.trace) {
            *cfg.trace << "iter=" << it << " depth=" << path.size() << " state=" << std::hex
                       << feature_hash(root.features) << std::dec << " admissible=" << root_admissible
                       << " action=" << root_action << " value=" << value << '\n';
        }
    }

    // Extract regression samples along the greedy path of backed-up values.
    int node = 0;
    for (int depth = 0; depth < cfg.horizon; ++depth) {
        const TreeNode& nd = nodes[static_cast<std::size_t>(node)];
        if (nd.state.terminal) break;
        int best_action = -1;
        double best_value = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < n_actions; ++a) {
            const auto& edge = nd.edges[static_cast<std::size_t>(a)];
            if (edge.visits <= 0) continue;
            const double v = edge.value_sum / static_cast<double>(edge.visits);
            if (v > best_value) {
                best_value = v;
                best_action = a;
            }
        }
        if (best_action < 0) break;
        const auto& edge = nd.edges[static_cast<std::size_t>(best_action)];
        int best_entry = 0;
        for (std::size_t e = 1; e < edge.outcomes.size(); ++e) {
            if (edge.outcomes[e].visits > edge.outcomes[static_cast<std::size_t>(best_entry)].visits) {
                best_entry = static_cast<int>(e);
            }
        }
        const auto& entry = edge.outcomes[static_cast<std::size_t>(best_entry)];
        const GameState& next = nodes[static_cast<std::size_t>(entry.node)].state;
        Sample sample;
        sample.state = nd.state;
        sample.action_id = best_action;
        sample.reward = entry.reward;
        sample.next_state = next;
        sample.q_target = q_target(self, nd.state.features, best_action, entry.reward, next.features,
                                   next.terminal, cfg.alpha, cfg.gamma);
        result.samples.push_back(std::move(sample));
        node = entry.node;
    }

    result.tree_nodes = static_cast<int>(nodes.size());
    if (cfg.trace) {
        *cfg.trace << "extracted=" << result.samples.size() << " nodes=" << result.tree_nodes
                   << " new_states=" << result.new_states << '\n';
    }
    return result;
}

}  // namespace detail

/// Variance-gated tree search: expansion restricted to admissible actions.
inline SearchResult qcp_search(const Game& game, const GameState& root, int agent_id,
                               const std::vector<const QApproximator*>& approximators,
                               const SearchConfig& cfg, ExploredSet& explored, Rng& rng) {
    return detail::tree_search(game, root, agent_id, approximators, AdmissibilityMode::kGated, cfg,
                               explored, rng);
}

/// Plain UCT over the full action set.
inline SearchResult vanilla_uct_search(const Game& game, const GameState& root, int agent_id,
                                       const std::vector<const QApproximator*>& approximators,
                                       const SearchConfig& cfg, ExploredSet& explored, Rng& rng) {
    return detail::tree_search(game, root, agent_id, approximators, AdmissibilityMode::kAll, cfg,
                               explored, rng);
}

/// UCT over a uniformly random admissible subset per node visit.
inline SearchResult random_uct_search(const Game& game, const GameState& root, int agent_id,
                                      const std::vector<const QApproximator*>& approximators,
                                      const SearchConfig& cfg, ExploredSet& explored, Rng& rng) {
    return detail::tree_search(game, root, agent_id, approximators, AdmissibilityMode::kRandom, cfg,
                               explored, rng);
}

/// Temporal-difference search baseline: the budget is spent on trajectories
/// from the root, learning a simulation-local action-value table seeded from
/// the current approximator. No tree is kept, so every distinct simulated
/// state counts as explored.
inline SearchResult td_search(const Game& game, const GameState& root, int agent_id,
                              const std::vector<const QApproximator*>& approximators,
                              const SearchConfig& cfg, ExploredSet& explored, Rng& rng) {
    require(agent_id >= 0 && agent_id < game.agent_count(), "td_search: agent out of range");
    require(static_cast<int>(approximators.size()) == game.agent_count(),
            "td_search: one approximator per agent required");
    require(!root.terminal, "td_search: root state is terminal");
    const int n_actions = game.action_count(agent_id);
    const QApproximator& self = *approximators[static_cast<std::size_t>(agent_id)];

    SearchResult result;
    std::unordered_map<std::vector<double>, std::vector<double>, detail::StateKeyHash> table;
    auto local_values = [&](const GameState& state) -> std::vector<double>& {
        auto it = table.find(state.features);
        if (it != table.end()) return it->second;
        const auto& preds = self.predict_all(state.features);
        std::vector<double> values(static_cast<std::size_t>(n_actions));
        for (int a = 0; a < n_actions; ++a) values[static_cast<std::size_t>(a)] = preds[static_cast<std::size_t>(a)].mean;
        return table.emplace(state.features, std::move(values)).first->second;
    };
    auto table_max = [&](const std::vector<double>& values) {
        double best = values.front();
        for (double v : values) best = std::max(best, v);
        return best;
    };
    auto make_joint = [&](const GameState& state, int own_action) {
        JointAction joint;
        joint.action_ids.resize(static_cast<std::size_t>(game.agent_count()));
        for (int j = 0; j < game.agent_count(); ++j) {
            joint.action_ids[static_cast<std::size_t>(j)] =
                j == agent_id
                    ? own_action
                    : greedy_action_deterministic(*approximators[static_cast<std::size_t>(j)], state);
        }
        return joint;
    };

    if (explored.insert(root)) ++result.new_states;
    for (int traj = 0; traj < cfg.budget; ++traj) {
        GameState state = root;
        for (int t = 0; t < cfg.horizon && !state.terminal; ++t) {
            std::vector<double>& values = local_values(state);
            int action;
            if (uniform_unit(rng) < cfg.epsilon_rollout) {
                action = uniform_index(rng, n_actions);
            } else {
                const double best = table_max(values);
                int ties = 0;
                action = 0;
                for (int a = 0; a < n_actions; ++a) {
                    if (values[static_cast<std::size_t>(a)] == best) {
                        ++ties;
                        if (uniform_index(rng, ties) == 0) action = a;
                    }
                }
            }
            const StepOutcome outcome = step(game, state, make_joint(state, action), rng);
            ++result.sim_steps;
            const double bootstrap =
                outcome.next_state.terminal ? 0.0 : table_max(local_values(outcome.next_state));
            values[static_cast<std::size_t>(action)] +=
                cfg.alpha * (outcome.reward + cfg.gamma * bootstrap - values[static_cast<std::size_t>(action)]);
            if (explored.insert(outcome.next_state)) ++result.new_states;
            state = outcome.next_state;
        }
        if (cfg.trace) *cfg.trace << "traj=" << traj << '\n';
    }

    // Final greedy trajectory provides the regression targets.
    GameState state = root;
    for (int t = 0; t < cfg.horizon && !state.terminal; ++t) {
        const std::vector<double>& values = local_values(state);
        int action = 0;
        for (int a = 1; a < n_actions; ++a) {
            if (values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(action)]) action = a;
        }
        const StepOutcome outcome = step(game, state, make_joint(state, action), rng);
        ++result.sim_steps;
        Sample sample;
        sample.state = state;
        sample.action_id = action;
        sample.q_target = values[static_cast<std::size_t>(action)];
        sample.reward = outcome.reward;
        sample.next_state = outcome.next_state;
        result.samples.push_back(std::move(sample));
        state = outcome.next_state;
    }
    result.tree_nodes = static_cast<int>(table.size());
    return result;
}

}  // namespace qcp
