#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <thread>

#include "qcp/config.hpp"
#include "qcp/driver.hpp"
#include "qcp/envs.hpp"

namespace qcp {

/// Full description of one benchmark experiment: which scenario, which
/// algorithms to compare, over which seeds, with what training settings.
struct ExperimentConfig {
    std::string scenario = "nav";
    std::vector<Algorithm> algorithms;
    std::vector<std::uint64_t> seeds;
    std::string output_dir = "qcp-out";
    int workers = 1;
    TrainConfig base;  // algorithm and seed fields are overridden per run
    double action_noise = 0.05;
    NavConfig nav;
    DoorConfig door;
    HandoverConfig handover;
};

/// Benchmark defaults per scenario: iteration counts follow the reported
/// experiments (49 navigation, 29 door, 5 hand-over), mixture sizes are 5,
/// 6 and 5 respectively, and all runs average over ten seeds.
inline ExperimentConfig scenario_defaults(const std::string& scenario) {
    ExperimentConfig cfg;
    cfg.scenario = scenario;
    cfg.algorithms = {Algorithm::kQcp, Algorithm::kVanilla, Algorithm::kRandom, Algorithm::kTd};
    for (std::uint64_t s = 0; s < 10; ++s) cfg.seeds.push_back(s);
    // Benchmarks plan on the nominal dynamics: action noise perturbs executed
    // steps only, not the searches' simulations.
    cfg.base.noise_in_search = false;
    if (scenario == "nav") {
        cfg.base.iterations = 49;
        cfg.base.steps = 5;
        cfg.base.fit.components = 5;
        cfg.nav.targets = {{3, 3}, {0, 3}, {3, 0}};
    } else if (scenario == "door") {
        cfg.base.iterations = 29;
        cfg.base.steps = 10;
        cfg.base.fit.components = 6;
    } else if (scenario == "handover") {
        cfg.base.iterations = 5;
        cfg.base.steps = 30;
        cfg.base.fit.components = 5;
    } else {
        throw ConfigError(0, "scenario.name", "unknown scenario '" + scenario + "'");
    }
    return cfg;
}

inline std::unique_ptr<Game> make_game(const ExperimentConfig& cfg) {
    std::unique_ptr<Game> game;
    if (cfg.scenario == "nav") {
        game = std::make_unique<NavGame>(cfg.nav);
    } else if (cfg.scenario == "door") {
        game = std::make_unique<DoorGame>(cfg.door);
    } else if (cfg.scenario == "handover") {
        game = std::make_unique<HandoverGame>(cfg.handover);
    } else {
        throw ConfigError(0, "scenario.name", "unknown scenario '" + cfg.scenario + "'");
    }
    game->set_action_noise(cfg.action_noise);
    return game;
}

/// Parses a grid cell written as "x:y".
inline std::pair<int, int> parse_cell(const ConfigMap& map, const std::string& key,
                                      const std::string& text) {
    const auto colon = text.find(':');
    if (colon != std::string::npos) {
        try {
            return {std::stoi(text.substr(0, colon)), std::stoi(text.substr(colon + 1))};
        } catch (const std::exception&) {
        }
    }
    throw ConfigError(map.line_of(key), key, "expected a cell as x:y, got '" + text + "'");
}

inline std::string cell_to_string(std::pair<int, int> cell) {
    return std::to_string(cell.first) + ":" + std::to_string(cell.second);
}

/// Builds an experiment from a parsed key-value config, starting from the
/// scenario preset and applying overrides. Unknown keys are rejected.
inline ExperimentConfig experiment_from_config(const ConfigMap& map) {
    ExperimentConfig cfg = scenario_defaults(map.get_string("scenario.name", "nav"));

    if (map.has("run.algorithms")) {
        cfg.algorithms.clear();
        for (const std::string& name : map.get_list("run.algorithms", {})) {
            try {
                cfg.algorithms.push_back(algorithm_from_name(name));
            } catch (const std::invalid_argument& e) {
                throw ConfigError(map.line_of("run.algorithms"), "run.algorithms", e.what());
            }
        }
    }
    if (map.has("run.seeds")) {
        cfg.seeds.clear();
        for (const std::string& s : map.get_list("run.seeds", {})) {
            try {
                cfg.seeds.push_back(std::stoull(s));
            } catch (const std::exception&) {
                throw ConfigError(map.line_of("run.seeds"), "run.seeds", "bad seed '" + s + "'");
            }
        }
    }
    cfg.output_dir = map.get_string("run.output_dir", cfg.output_dir);
    cfg.workers = static_cast<int>(map.get_int("run.workers", cfg.workers));

    TrainConfig& b = cfg.base;
    b.iterations = static_cast<int>(map.get_int("train.iterations", b.iterations));
    b.steps = static_cast<int>(map.get_int("train.steps", b.steps));

    b.search.horizon = static_cast<int>(map.get_int("search.horizon", b.search.horizon));
    b.search.rollout_count = static_cast<int>(map.get_int("search.rollouts", b.search.rollout_count));
    b.search.exploration = map.get_double("search.exploration", b.search.exploration);
    b.lambda0 = map.get_double("search.lambda0", b.lambda0);
    b.search.epsilon_admissible =
        map.get_double("search.epsilon_admissible", b.search.epsilon_admissible);
    b.search.epsilon_rollout = map.get_double("search.epsilon_rollout", b.search.epsilon_rollout);
    b.search.rollout_cap = static_cast<int>(map.get_int("search.rollout_cap", b.search.rollout_cap));
    b.search.budget = static_cast<int>(map.get_int("search.budget", b.search.budget));
    b.search.delta_mode = map.get_bool("search.delta_literal", b.search.delta_mode == DeltaMode::kLiteral)
                              ? DeltaMode::kLiteral
                              : DeltaMode::kStochastic;
    b.search.count_rollout_states =
        map.get_bool("search.count_rollout_states", b.search.count_rollout_states);

    b.fit.components = static_cast<int>(map.get_int("learn.components", b.fit.components));
    b.fit.select_components = map.get_bool("learn.select_components", b.fit.select_components);
    b.search.alpha = map.get_double("learn.alpha", b.search.alpha);
    b.search.gamma = map.get_double("learn.gamma", b.search.gamma);
    b.sigma0 = map.get_double("learn.sigma0", b.sigma0);

    cfg.action_noise = map.get_double("game.action_noise", cfg.action_noise);
    b.noise_in_search = map.get_bool("game.noise_in_search", b.noise_in_search);

    cfg.nav.width = static_cast<int>(map.get_int("nav.width", cfg.nav.width));
    cfg.nav.height = static_cast<int>(map.get_int("nav.height", cfg.nav.height));
    cfg.nav.robots = static_cast<int>(map.get_int("nav.robots", cfg.nav.robots));
    if (map.has("nav.targets")) {
        cfg.nav.targets.clear();
        const auto items = map.get_list("nav.targets", {});
        if (!(items.size() == 1 && items.front() == "random")) {
            for (const std::string& item : items) {
                cfg.nav.targets.push_back(parse_cell(map, "nav.targets", item));
            }
        }
        if (!cfg.nav.targets.empty() && static_cast<int>(cfg.nav.targets.size()) != cfg.nav.robots) {
            throw ConfigError(map.line_of("nav.targets"), "nav.targets",
                              "need one target cell per robot or the single word 'random'");
        }
    } else if (static_cast<int>(cfg.nav.targets.size()) != cfg.nav.robots ||
               cfg.nav.width != 4 || cfg.nav.height != 4) {
        // The preset's fixed cells only fit the default grid; revert to
        // per-episode random targets when the caller reshapes the game.
        cfg.nav.targets.clear();
    }
    cfg.door.width = static_cast<int>(map.get_int("door.width", cfg.door.width));
    cfg.door.height = static_cast<int>(map.get_int("door.height", cfg.door.height));
    cfg.door.wall_x = static_cast<int>(map.get_int("door.wall_x", cfg.door.wall_x));
    cfg.door.door_y = static_cast<int>(map.get_int("door.door_y", cfg.door.door_y));
    if (map.has("door.target0")) {
        cfg.door.target0 = parse_cell(map, "door.target0", map.get_string("door.target0", ""));
    }
    if (map.has("door.target1")) {
        cfg.door.target1 = parse_cell(map, "door.target1", map.get_string("door.target1", ""));
    }
    cfg.handover.base_step = map.get_double("handover.base_step", cfg.handover.base_step);
    cfg.handover.arm_step = map.get_double("handover.arm_step", cfg.handover.arm_step);

    map.reject_unconsumed();

    if (cfg.algorithms.empty()) throw ConfigError(0, "run.algorithms", "need at least one algorithm");
    if (cfg.seeds.empty()) throw ConfigError(0, "run.seeds", "need at least one seed");
    if (cfg.workers < 1) throw ConfigError(map.line_of("run.workers"), "run.workers", "must be >= 1");
    if (cfg.base.iterations < 1)
        throw ConfigError(map.line_of("train.iterations"), "train.iterations", "must be >= 1");
    if (cfg.base.steps < 1) throw ConfigError(map.line_of("train.steps"), "train.steps", "must be >= 1");
    if (cfg.action_noise < 0.0 || cfg.action_noise > 1.0)
        throw ConfigError(map.line_of("game.action_noise"), "game.action_noise", "must be in [0,1]");
    return cfg;
}

/// Canonical serialization of the effective experiment settings.
inline std::string serialize_experiment(const ExperimentConfig& cfg) {
    ConfigMap map;
    auto fmt = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    map.set("scenario.name", cfg.scenario);
    std::string algos;
    for (const Algorithm a : cfg.algorithms) {
        if (!algos.empty()) algos += ',';
        algos += algorithm_name(a);
    }
    map.set("run.algorithms", algos);
    std::string seeds;
    for (const std::uint64_t s : cfg.seeds) {
        if (!seeds.empty()) seeds += ',';
        seeds += std::to_string(s);
    }
    map.set("run.seeds", seeds);
    map.set("run.output_dir", cfg.output_dir);
    map.set("run.workers", std::to_string(cfg.workers));
    map.set("train.iterations", std::to_string(cfg.base.iterations));
    map.set("train.steps", std::to_string(cfg.base.steps));
    map.set("search.horizon", std::to_string(cfg.base.search.horizon));
    map.set("search.rollouts", std::to_string(cfg.base.search.rollout_count));
    map.set("search.exploration", fmt(cfg.base.search.exploration));
    map.set("search.lambda0", fmt(cfg.base.lambda0));
    map.set("search.epsilon_admissible", fmt(cfg.base.search.epsilon_admissible));
    map.set("search.epsilon_rollout", fmt(cfg.base.search.epsilon_rollout));
    map.set("search.rollout_cap", std::to_string(cfg.base.search.rollout_cap));
    map.set("search.budget", std::to_string(cfg.base.search.budget));
    map.set("search.delta_literal", cfg.base.search.delta_mode == DeltaMode::kLiteral ? "true" : "false");
    map.set("search.count_rollout_states", cfg.base.search.count_rollout_states ? "true" : "false");
    map.set("learn.components", std::to_string(cfg.base.fit.components));
    map.set("learn.select_components", cfg.base.fit.select_components ? "true" : "false");
    map.set("learn.alpha", fmt(cfg.base.search.alpha));
    map.set("learn.gamma", fmt(cfg.base.search.gamma));
    map.set("learn.sigma0", fmt(cfg.base.sigma0));
    map.set("game.action_noise", fmt(cfg.action_noise));
    map.set("game.noise_in_search", cfg.base.noise_in_search ? "true" : "false");
    map.set("nav.width", std::to_string(cfg.nav.width));
    map.set("nav.height", std::to_string(cfg.nav.height));
    map.set("nav.robots", std::to_string(cfg.nav.robots));
    if (cfg.nav.targets.empty()) {
        map.set("nav.targets", "random");
    } else {
        std::string cells;
        for (const auto& c : cfg.nav.targets) {
            if (!cells.empty()) cells += ", ";
            cells += cell_to_string(c);
        }
        map.set("nav.targets", cells);
    }
    map.set("door.width", std::to_string(cfg.door.width));
    map.set("door.height", std::to_string(cfg.door.height));
    map.set("door.wall_x", std::to_string(cfg.door.wall_x));
    map.set("door.door_y", std::to_string(cfg.door.door_y));
    map.set("door.target0", cell_to_string(cfg.door.target0));
    map.set("door.target1", cell_to_string(cfg.door.target1));
    map.set("handover.base_step", fmt(cfg.handover.base_step));
    map.set("handover.arm_step", fmt(cfg.handover.arm_step));
    return map.serialize();
}

// ---------------------------------------------------------------------------
// Runs and metric files
// ---------------------------------------------------------------------------

struct RunRecord {
    Algorithm algorithm = Algorithm::kQcp;
    std::uint64_t seed = 0;
    std::vector<IterationMetrics> history;
};

inline constexpr const char* kMetricsHeader =
    "algorithm\tseed\titeration\tmean_reward\tcum_states\tnew_states";

/// Deterministic per-run table. Wall-clock times live in the separate
/// timings file so reruns of the same seed produce identical bytes here.
inline void write_metrics(std::ostream& os, const RunRecord& run) {
    os << kMetricsHeader << '\n';
    char buf[64];
    for (const IterationMetrics& m : run.history) {
        std::snprintf(buf, sizeof(buf), "%.17g", m.mean_reward);
        os << algorithm_name(run.algorithm) << '\t' << run.seed << '\t' << m.iteration << '\t' << buf
           << '\t' << m.cum_states << '\t' << m.new_states << '\n';
    }
}

inline std::vector<RunRecord> read_metrics(std::istream& is, const std::string& origin) {
    std::string header;
    if (!std::getline(is, header) || header != kMetricsHeader) {
        throw std::runtime_error(origin + ": unrecognized metrics schema");
    }
    std::vector<RunRecord> runs;
    std::string line;
    int number = 1;
    while (std::getline(is, line)) {
        ++number;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string algo;
        RunRecord key;
        IterationMetrics m;
        if (!std::getline(row, algo, '\t')) {
            throw std::runtime_error(origin + " line " + std::to_string(number) + ": bad row");
        }
        std::string field;
        auto next = [&](const char* what) {
            if (!std::getline(row, field, '\t')) {
                throw std::runtime_error(origin + " line " + std::to_string(number) + ": missing " +
                                         what);
            }
            return field;
        };
        try {
            key.algorithm = algorithm_from_name(algo);
            key.seed = std::stoull(next("seed"));
            m.iteration = std::stoi(next("iteration"));
            m.mean_reward = std::stod(next("mean_reward"));
            m.cum_states = std::stol(next("cum_states"));
            m.new_states = std::stol(next("new_states"));
        } catch (const std::exception& e) {
            throw std::runtime_error(origin + " line " + std::to_string(number) + ": " + e.what());
        }
        if (runs.empty() || runs.back().algorithm != key.algorithm || runs.back().seed != key.seed) {
            runs.push_back(key);
        }
        runs.back().history.push_back(m);
    }
    return runs;
}

inline std::vector<RunRecord> read_metrics_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open metrics file: " + path);
    return read_metrics(is, path);
}

/// Mean per-iteration reward curve of each algorithm across its seeds.
inline std::map<std::string, std::vector<double>> mean_reward_curves(
    const std::vector<RunRecord>& runs) {
    std::map<std::string, std::vector<double>> sums;
    std::map<std::string, std::vector<int>> counts;
    for (const RunRecord& run : runs) {
        auto& sum = sums[algorithm_name(run.algorithm)];
        auto& count = counts[algorithm_name(run.algorithm)];
        for (std::size_t i = 0; i < run.history.size(); ++i) {
            if (sum.size() <= i) {
                sum.push_back(0.0);
                count.push_back(0);
            }
            sum[i] += run.history[i].mean_reward;
            count[i] += 1;
        }
    }
    for (auto& [name, sum] : sums) {
        const auto& count = counts[name];
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] /= count[i];
    }
    return sums;
}

/// Aggregated per-iteration table: reward mean/std across seeds plus the
/// normalized mean curve and mean explored-state counts.
inline void write_summary(std::ostream& os, const std::vector<RunRecord>& runs) {
    os << "algorithm\titeration\treward_mean\treward_std\treward_norm\tcum_states_mean\tnew_states_"
          "mean\n";
    const auto curves = mean_reward_curves(runs);
    const auto normalized = normalize_rewards(curves);
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const auto& [name, curve] : curves) {
        for (std::size_t i = 0; i < curve.size(); ++i) {
            double sq = 0.0, states = 0.0, fresh = 0.0;
            int count = 0;
            for (const RunRecord& run : runs) {
                if (algorithm_name(run.algorithm) != name || run.history.size() <= i) continue;
                const double d = run.history[i].mean_reward - curve[i];
                sq += d * d;
                states += static_cast<double>(run.history[i].cum_states);
                fresh += static_cast<double>(run.history[i].new_states);
                ++count;
            }
            os << name << '\t' << (i + 1) << '\t' << fmt(curve[i]) << '\t'
               << fmt(std::sqrt(sq / count)) << '\t' << fmt(normalized.at(name)[i]) << '\t'
               << fmt(states / count) << '\t' << fmt(fresh / count) << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Experiment execution
// ---------------------------------------------------------------------------

struct RunTiming {
    Algorithm algorithm = Algorithm::kQcp;
    std::uint64_t seed = 0;
    double wall_ms = 0.0;
    long sim_steps = 0;
};

struct ExperimentResult {
    std::vector<RunRecord> runs;
    std::vector<RunTiming> timings;
    std::vector<std::string> metric_files;
};

inline std::string metrics_filename(Algorithm algorithm, std::uint64_t seed) {
    return std::string("metrics_") + algorithm_name(algorithm) + "_" + std::to_string(seed) + ".tsv";
}

/// Executes every (algorithm, seed) pair, optionally across a worker pool,
/// and writes per-run metric files plus summary and timing tables under the
/// configured output directory.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr,
                                       bool trace = false, bool render = false) {
    struct Task {
        Algorithm algorithm;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (const Algorithm a : cfg.algorithms) {
        for (const std::uint64_t s : cfg.seeds) tasks.push_back({a, s});
    }

    ExperimentResult result;
    result.runs.resize(tasks.size());
    result.timings.resize(tasks.size());

    const bool sequential = cfg.workers <= 1 || trace || render;
    auto execute = [&](std::size_t index) {
        const Task& task = tasks[index];
        TrainConfig train_cfg = cfg.base;
        train_cfg.algorithm = task.algorithm;
        train_cfg.seed = task.seed;
        if (trace && sequential) train_cfg.search.trace = &std::cerr;
        const std::unique_ptr<Game> game = make_game(cfg);
        if (render && sequential) {
            const Game* raw = game.get();
            train_cfg.on_step = [raw](int iteration, int step, const GameState& state, double reward) {
                std::cout << "i=" << iteration << " t=" << step << " r=" << reward << '\n'
                          << raw->render(state);
            };
        }
        const TrainResult train_result = train(*game, train_cfg);
        RunRecord& run = result.runs[index];
        run.algorithm = task.algorithm;
        run.seed = task.seed;
        run.history = train_result.history;
        RunTiming& timing = result.timings[index];
        timing.algorithm = task.algorithm;
        timing.seed = task.seed;
        for (const IterationMetrics& m : train_result.history) {
            timing.wall_ms += m.wall_ms;
            timing.sim_steps += m.sim_steps;
        }
    };

    if (sequential) {
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            execute(i);
            if (log) {
                *log << algorithm_name(tasks[i].algorithm) << " seed " << tasks[i].seed << " done ("
                     << result.timings[i].wall_ms << " ms)\n";
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        const int width = std::min<int>(cfg.workers, static_cast<int>(tasks.size()));
        for (int w = 0; w < width; ++w) {
            pool.emplace_back([&] {
                while (true) {
                    const std::size_t index = next.fetch_add(1);
                    if (index >= tasks.size()) break;
                    execute(index);
                }
            });
        }
        for (std::thread& t : pool) t.join();
        if (log) {
            for (std::size_t i = 0; i < tasks.size(); ++i) {
                *log << algorithm_name(tasks[i].algorithm) << " seed " << tasks[i].seed << " done ("
                     << result.timings[i].wall_ms << " ms)\n";
            }
        }
    }

    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);
    for (const RunRecord& run : result.runs) {
        const std::filesystem::path path = dir / metrics_filename(run.algorithm, run.seed);
        std::ofstream os(path);
        if (!os) throw std::runtime_error("cannot write " + path.string());
        write_metrics(os, run);
        result.metric_files.push_back(path.string());
    }
    {
        std::ofstream os(dir / "summary.tsv");
        write_summary(os, result.runs);
    }
    {
        std::ofstream os(dir / "timings.tsv");
        os << "# measured wall-clock; excluded from determinism guarantees\n";
        os << "algorithm\tseed\twall_ms\tsim_steps\n";
        for (const RunTiming& t : result.timings) {
            os << algorithm_name(t.algorithm) << '\t' << t.seed << '\t' << t.wall_ms << '\t'
               << t.sim_steps << '\n';
        }
    }
    {
        std::ofstream os(dir / "experiment.cfg");
        os << serialize_experiment(cfg);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

struct ComparisonRow {
    std::string algorithm;
    int runs = 0;
    double final_reward = 0.0;
    double final_reward_norm = 0.0;
    double final_cum_states = 0.0;
};

struct Comparison {
    std::vector<ComparisonRow> rows;
    std::optional<double> reward_parity;    // qcp final reward / vanilla final reward
    std::optional<double> state_reduction;  // qcp explored states / vanilla explored states
};

inline Comparison compare_runs(const std::vector<RunRecord>& runs) {
    Comparison cmp;
    const auto curves = mean_reward_curves(runs);
    const auto normalized = normalize_rewards(curves);
    for (const auto& [name, curve] : curves) {
        ComparisonRow row;
        row.algorithm = name;
        row.final_reward = curve.back();
        row.final_reward_norm = normalized.at(name).back();
        double states = 0.0;
        for (const RunRecord& run : runs) {
            if (algorithm_name(run.algorithm) != name) continue;
            ++row.runs;
            states += static_cast<double>(run.history.back().cum_states);
        }
        row.final_cum_states = states / row.runs;
        cmp.rows.push_back(row);
    }
    const auto find = [&](const char* name) -> const ComparisonRow* {
        for (const ComparisonRow& row : cmp.rows) {
            if (row.algorithm == name) return &row;
        }
        return nullptr;
    };
    const ComparisonRow* qcp = find("qcp");
    const ComparisonRow* vanilla = find("vanilla");
    if (qcp && vanilla && vanilla->final_reward != 0.0 && vanilla->final_cum_states != 0.0) {
        cmp.reward_parity = qcp->final_reward / vanilla->final_reward;
        cmp.state_reduction = qcp->final_cum_states / vanilla->final_cum_states;
    }
    return cmp;
}

inline std::string format_comparison(const Comparison& cmp) {
    std::ostringstream os;
    os << "algorithm\truns\tfinal_reward\tfinal_reward_norm\tfinal_cum_states\n";
    for (const ComparisonRow& row : cmp.rows) {
        os << row.algorithm << '\t' << row.runs << '\t' << row.final_reward << '\t'
           << row.final_reward_norm << '\t' << row.final_cum_states << '\n';
    }
    if (cmp.reward_parity) {
        os << "qcp/vanilla reward parity: " << *cmp.reward_parity << '\n';
        os << "qcp/vanilla state reduction: " << *cmp.state_reduction << '\n';
    }
    return os.str();
}

}  // namespace qcp
