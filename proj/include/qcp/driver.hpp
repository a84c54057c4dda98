#pragma once

#include <chrono>
#include <functional>
#include <map>

#include "qcp/search.hpp"

namespace qcp {

enum class Algorithm { kQcp, kVanilla, kRandom, kTd };

inline const char* algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::kQcp: return "qcp";
        case Algorithm::kVanilla: return "vanilla";
        case Algorithm::kRandom: return "random";
        case Algorithm::kTd: return "td";
    }
    return "?";
}

inline Algorithm algorithm_from_name(const std::string& name) {
    if (name == "qcp") return Algorithm::kQcp;
    if (name == "vanilla") return Algorithm::kVanilla;
    if (name == "random") return Algorithm::kRandom;
    if (name == "td") return Algorithm::kTd;
    throw std::invalid_argument("unknown algorithm: " + name);
}

/// One recorded policy-execution decision, with the predicted means it was
/// based on (for audit tests).
struct StepDecision {
    int iteration = 0;
    int agent = 0;
    std::vector<double> state;
    int action = 0;
    std::vector<double> means;
};

struct TrainConfig {
    Algorithm algorithm = Algorithm::kQcp;
    int iterations = 10;   // outer iterations I
    int steps = 5;         // policy-execution timesteps T per iteration
    SearchConfig search;   // search.lambda is overwritten by the schedule below
    QFitOptions fit;
    double lambda0 = 0.5;
    double lambda_growth = 0.4;  // lambda_i = min(lambda_max, lambda0 + growth * i / I)
    double lambda_max = 0.95;
    double sigma0 = 1.0;         // flat-prior predictive variance before the first fit
    std::uint64_t seed = 0;
    bool noise_in_search = true;   // apply action randomization inside simulations too
    bool refresh_targets = true;   // re-derive stored targets against current models each iteration
    std::ostream* warnings = nullptr;
    std::vector<StepDecision>* decision_log = nullptr;
    std::function<void(int iteration, int step, const GameState&, double reward)> on_step;
};

struct IterationMetrics {
    int iteration = 0;       // 1-based
    double mean_reward = 0;  // mean shaped reward over the T executed steps
    long cum_states = 0;     // distinct explored states so far (whole run)
    long new_states = 0;     // added this iteration
    long sim_steps = 0;      // simulated transitions spent this iteration
    double wall_ms = 0;      // measured, excluded from determinism guarantees
};

struct TrainResult {
    std::vector<IterationMetrics> history;
    std::vector<QApproximator> approximators;
    std::vector<AggregatedDataset> datasets;
};

namespace detail {

/// View of a game with action randomization turned off; used when the
/// configuration restricts noise to real policy execution.
class NoiselessView : public Game {
public:
    explicit NoiselessView(const Game& base) : base_(base) { action_noise_ = 0.0; }

    std::string name() const override { return base_.name(); }
    int agent_count() const override { return base_.agent_count(); }
    int action_count(int agent) const override { return base_.action_count(agent); }
    int feature_count() const override { return base_.feature_count(); }
    std::vector<double> tolerance() const override { return base_.tolerance(); }
    bool integral_grid() const override { return base_.integral_grid(); }
    GameState sample_initial_state(Rng& rng) const override { return base_.sample_initial_state(rng); }
    StepOutcome resolve(const GameState& s, const JointAction& j) const override {
        return base_.resolve(s, j);
    }
    std::string render(const GameState& s) const override { return base_.render(s); }

private:
    const Game& base_;
};

}  // namespace detail

/// Iterative policy generation: execute the frozen previous-iteration greedy
/// policies for T steps, and at every visited state let each agent search,
/// aggregate its dataset, refit its value model and thereby update its
/// policy. Initial policies are uniform random (flat-prior approximators).
inline TrainResult train(const Game& game, const TrainConfig& cfg) {
    require(cfg.iterations >= 1, "train: iterations must be >= 1");
    require(cfg.steps >= 1, "train: steps must be >= 1");
    require(cfg.lambda0 >= 0.0 && cfg.lambda0 <= 1.0, "train: lambda0 in [0,1] required");
    const int n = game.agent_count();

    TrainResult out;
    std::vector<QApproximator> approximators;
    approximators.reserve(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        approximators.emplace_back(game.feature_count(), game.action_count(j), cfg.sigma0);
    }
    std::vector<const QApproximator*> live;
    for (int j = 0; j < n; ++j) live.push_back(&approximators[static_cast<std::size_t>(j)]);
    std::vector<AggregatedDataset> datasets(static_cast<std::size_t>(n));
    ExploredSet explored(game);

    detail::NoiselessView quiet(game);
    const Game& sim = cfg.noise_in_search ? game : static_cast<const Game&>(quiet);
    Rng exec(mix_seed(cfg.seed, 0x100 + static_cast<std::uint64_t>(cfg.algorithm)));

    auto run_search = [&](const GameState& s, int j, const SearchConfig& sc) {
        switch (cfg.algorithm) {
            case Algorithm::kVanilla: return vanilla_uct_search(sim, s, j, live, sc, explored, exec);
            case Algorithm::kRandom: return random_uct_search(sim, s, j, live, sc, explored, exec);
            case Algorithm::kTd: return td_search(sim, s, j, live, sc, explored, exec);
            case Algorithm::kQcp: break;
        }
        return qcp_search(sim, s, j, live, sc, explored, exec);
    };

    for (int i = 1; i <= cfg.iterations; ++i) {
        const auto started = std::chrono::steady_clock::now();
        SearchConfig sc = cfg.search;
        sc.lambda = std::min(cfg.lambda_max,
                             cfg.lambda0 + cfg.lambda_growth * static_cast<double>(i) / cfg.iterations);

        // Frozen snapshot: policy execution uses the previous iteration's models.
        const std::vector<QApproximator> frozen = approximators;
        // Re-derive every stored target from its recorded transition against
        // the snapshot models, so the aggregate regressed this iteration
        // reflects the current value estimates rather than the stale ones the
        // old samples were collected under.
        if (cfg.refresh_targets) {
            for (int j = 0; j < n; ++j) {
                refresh_q_targets(datasets[static_cast<std::size_t>(j)],
                                  frozen[static_cast<std::size_t>(j)], cfg.search.alpha,
                                  cfg.search.gamma);
            }
        }
        // Initial-state stream is independent of the algorithm and of how much
        // randomness the searches consume, so paired-seed comparisons across
        // algorithms see identical state sequences.
        Rng init(mix_seed(cfg.seed, 0x5100 + static_cast<std::uint64_t>(i)));
        GameState state = game.sample_initial_state(init);

        double reward_sum = 0.0;
        long new_states = 0;
        long sim_steps = 0;
        for (int t = 1; t <= cfg.steps; ++t) {
            JointAction joint;
            joint.action_ids.resize(static_cast<std::size_t>(n));
            for (int j = 0; j < n; ++j) {
                const int action = greedy_action(frozen[static_cast<std::size_t>(j)], state, exec);
                joint[j] = action;
                if (cfg.decision_log) {
                    StepDecision d;
                    d.iteration = i;
                    d.agent = j;
                    d.state = state.features;
                    d.action = action;
                    const auto& preds = frozen[static_cast<std::size_t>(j)].predict_all(state.features);
                    for (const auto& p : preds) d.means.push_back(p.mean);
                    cfg.decision_log->push_back(std::move(d));
                }
            }
            const StepOutcome outcome = step(game, state, joint, exec);
            reward_sum += outcome.reward;
            state = outcome.next_state;
            if (cfg.on_step) cfg.on_step(i, t, state, outcome.reward);
            if (state.terminal) state = game.sample_initial_state(init);

            for (int j = 0; j < n; ++j) {
                const SearchResult r = run_search(state, j, sc);
                datasets[static_cast<std::size_t>(j)].aggregate(r.samples);
                approximators[static_cast<std::size_t>(j)].refit(datasets[static_cast<std::size_t>(j)],
                                                                 cfg.fit, exec, cfg.warnings);
                new_states += r.new_states;
                sim_steps += r.sim_steps;
            }
        }

        IterationMetrics m;
        m.iteration = i;
        m.mean_reward = reward_sum / cfg.steps;
        m.cum_states = static_cast<long>(explored.size());
        m.new_states = new_states;
        m.sim_steps = sim_steps;
        m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started)
                        .count();
        out.history.push_back(m);
    }

    out.approximators = std::move(approximators);
    out.datasets = std::move(datasets);
    return out;
}

struct EvalResult {
    double mean = 0.0;
    double stddev = 0.0;
};

/// Undiscounted shaped-reward totals of full episodes under the given
/// policies, starting from freshly sampled initial states.
inline EvalResult evaluate_policy(const Game& game, const std::vector<Policy>& policies, int episodes,
                                  int max_steps, Rng& rng) {
    require(episodes >= 1, "evaluate_policy: episodes must be >= 1");
    std::vector<double> totals;
    totals.reserve(static_cast<std::size_t>(episodes));
    for (int e = 0; e < episodes; ++e) {
        const GameState initial = game.sample_initial_state(rng);
        double total = 0.0;
        for (const Transition& tr : run_episode(game, policies, initial, max_steps, rng)) {
            total += tr.reward;
        }
        totals.push_back(total);
    }
    EvalResult result;
    for (double t : totals) result.mean += t;
    result.mean /= episodes;
    double var = 0.0;
    for (double t : totals) var += (t - result.mean) * (t - result.mean);
    result.stddev = std::sqrt(var / episodes);
    return result;
}

/// Scales per-algorithm reward curves by their global maximum, mapping the
/// best observed value to 1.
inline std::map<std::string, std::vector<double>> normalize_rewards(
    const std::map<std::string, std::vector<double>>& curves) {
    double peak = 0.0;
    for (const auto& [name, curve] : curves) {
        for (double v : curve) peak = std::max(peak, v);
    }
    std::map<std::string, std::vector<double>> out = curves;
    if (peak <= 0.0) return out;
    for (auto& [name, curve] : out) {
        for (double& v : curve) v /= peak;
    }
    return out;
}

}  // namespace qcp
