#pragma once

#include <cstdlib>
#include <functional>
#include <utility>

#include "qcp/common.hpp"

namespace qcp {

/// Environment state: a fixed-length feature vector plus a terminal flag.
struct GameState {
    std::vector<double> features;
    bool terminal = false;
};

struct AgentAction {
    int agent_id = 0;
    int action_id = 0;
};

/// One action per agent, indexed by agent id.
struct JointAction {
    std::vector<int> action_ids;

    JointAction() = default;
    explicit JointAction(std::vector<int> ids) : action_ids(std::move(ids)) {}

    int operator[](int agent) const { return action_ids[static_cast<std::size_t>(agent)]; }
    int& operator[](int agent) { return action_ids[static_cast<std::size_t>(agent)]; }
    int size() const { return static_cast<int>(action_ids.size()); }
};

struct StepOutcome {
    GameState next_state;
    double reward = 0.0;
};

/// Fully collaborative stochastic game. Implementations provide a
/// deterministic joint-action resolution (`resolve`); action stochasticity
/// (each agent's command replaced by a uniformly random one with probability
/// `action_noise`) is layered on top by `step`.
class Game {
public:
    virtual ~Game() = default;

    virtual std::string name() const = 0;
    virtual int agent_count() const = 0;
    virtual int action_count(int agent) const = 0;
    virtual int feature_count() const = 0;

    /// Human-readable snapshot of a state. The default dumps the features.
    virtual std::string render(const GameState& state) const {
        std::string out;
        for (std::size_t f = 0; f < state.features.size(); ++f) {
            if (f) out += ' ';
            out += std::to_string(state.features[f]);
        }
        if (state.terminal) out += " (terminal)";
        return out;
    }

    /// Per-feature comparison threshold ξ.
    virtual std::vector<double> tolerance() const = 0;

    /// True when every state feature is an exact grid coordinate, so that
    /// ξ below the cell size makes states_equal an exact-equality test.
    virtual bool integral_grid() const { return false; }

    virtual GameState sample_initial_state(Rng& rng) const = 0;

    /// Deterministic transition: same (state, joint) always yields the same outcome.
    virtual StepOutcome resolve(const GameState& state, const JointAction& joint) const = 0;

    double action_noise() const { return action_noise_; }
    void set_action_noise(double p) { action_noise_ = p; }

protected:
    double action_noise_ = 0.05;
};

/// True iff |a_f - b_f| <= xi_f for every feature. Reflexive and symmetric,
/// deliberately not transitive.
inline bool states_equal(const GameState& a, const GameState& b, const std::vector<double>& xi) {
    require(a.features.size() == b.features.size(), "states_equal: mismatched feature lengths");
    require(a.features.size() == xi.size(), "states_equal: tolerance length mismatch");
    for (std::size_t f = 0; f < a.features.size(); ++f) {
        if (std::abs(a.features[f] - b.features[f]) > xi[f]) return false;
    }
    return true;
}

/// Executes one joint step: validates the action, applies per-agent action
/// randomization, then the deterministic transition.
inline StepOutcome step(const Game& game, const GameState& state, const JointAction& joint, Rng& rng) {
    require(!state.terminal, "step: cannot step a terminal state");
    require(joint.size() == game.agent_count(), "step: joint action arity mismatch");
    for (int j = 0; j < game.agent_count(); ++j) {
        require(joint[j] >= 0 && joint[j] < game.action_count(j), "step: action id out of range");
    }
    JointAction executed = joint;
    const double noise = game.action_noise();
    if (noise > 0.0) {
        for (int j = 0; j < game.agent_count(); ++j) {
            if (uniform_unit(rng) < noise) {
                executed[j] = uniform_index(rng, game.action_count(j));
            }
        }
    }
    return game.resolve(state, executed);
}

/// Per-agent policy: maps a state to an action id, possibly consuming randomness.
using Policy = std::function<int(const GameState&, Rng&)>;

struct Transition {
    GameState state;
    JointAction joint;
    double reward = 0.0;
};

/// Rolls the game forward under the given policies for at most max_steps
/// transitions, stopping early at a terminal state.
inline std::vector<Transition> run_episode(const Game& game, const std::vector<Policy>& policies,
                                           const GameState& initial, int max_steps, Rng& rng) {
    require(max_steps >= 1, "run_episode: max_steps must be >= 1");
    require(static_cast<int>(policies.size()) == game.agent_count(),
            "run_episode: one policy per agent required");
    std::vector<Transition> trajectory;
    GameState state = initial;
    for (int t = 0; t < max_steps && !state.terminal; ++t) {
        JointAction joint;
        joint.action_ids.resize(policies.size());
        for (int j = 0; j < game.agent_count(); ++j) {
            joint[j] = policies[static_cast<std::size_t>(j)](state, rng);
        }
        StepOutcome out = step(game, state, joint, rng);
        trajectory.push_back({state, joint, out.reward});
        state = std::move(out.next_state);
    }
    return trajectory;
}

}  // namespace qcp
