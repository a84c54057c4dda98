// Command-line front end: `run` executes an experiment described by a config
// file and writes metric tables; `compare` summarizes previously written
// metric files side by side.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "qcp/harness.hpp"

namespace {

int do_run(const std::string& config_path, int workers_override, bool trace, bool render) {
    std::ifstream is(config_path);
    if (!is) {
        std::cerr << "error: cannot open config file: " << config_path << '\n';
        return 1;
    }
    qcp::ExperimentConfig cfg;
    try {
        qcp::ConfigMap map = qcp::ConfigMap::parse(is);
        cfg = qcp::experiment_from_config(map);
    } catch (const qcp::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    if (workers_override > 0) cfg.workers = workers_override;
    try {
        const qcp::ExperimentResult result = qcp::run_experiment(cfg, &std::cerr, trace, render);
        std::cout << qcp::format_comparison(qcp::compare_runs(result.runs));
        std::cout << "wrote " << result.metric_files.size() << " metric files to " << cfg.output_dir
                  << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

int do_compare(const std::vector<std::string>& paths) {
    std::vector<qcp::RunRecord> runs;
    try {
        for (const std::string& path : paths) {
            for (qcp::RunRecord& run : qcp::read_metrics_file(path)) {
                runs.push_back(std::move(run));
            }
        }
        std::cout << qcp::format_comparison(qcp::compare_runs(runs));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Q-guided cooperative planning experiments"};
    app.require_subcommand(1);

    std::string config_path;
    int workers = 0;
    bool trace = false;
    bool render = false;
    CLI::App* run = app.add_subcommand("run", "execute an experiment from a config file");
    run->add_option("--config", config_path, "path to experiment config")->required();
    run->add_option("--workers", workers, "override worker count from the config");
    run->add_flag("--trace", trace, "print per-simulation search traces (forces sequential runs)");
    run->add_flag("--render", render, "print rendered states while training (forces sequential runs)");

    std::vector<std::string> compare_paths;
    CLI::App* compare = app.add_subcommand("compare", "summarize metric files side by side");
    compare->add_option("files", compare_paths, "metric files to compare")->required();

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) return do_run(config_path, workers, trace, render);
    return do_compare(compare_paths);
}
