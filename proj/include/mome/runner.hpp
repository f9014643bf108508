#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mome/dataset_io.hpp"
#include "mome/pipeline.hpp"
#include "mome/training.hpp"

namespace mome {

/// High-level command entry points shared by the C API and the CLI. Every
/// operation is deterministic given config plus seed, and every output file
/// embeds the resolved config hash.

std::vector<Scene> synth_scenes(const ExperimentConfig& cfg, int count, std::uint64_t seed);
/// Held-out scenes live in a disjoint seed stream.
std::vector<Scene> holdout_scenes(const ExperimentConfig& cfg, int count);

SceneCensus run_synth(const ExperimentConfig& cfg, int count, std::uint64_t seed,
                      const std::string& out_path);
void run_corrupt(const ExperimentConfig& cfg, const std::string& in_path,
                 const std::string& spec, const std::string& out_path);

/// Empty data path: scenes are generated from the config. Log path empty:
/// "<ckpt>.log.csv".
void run_train_stage1(const ExperimentConfig& cfg, const std::string& data_path,
                      const std::string& ckpt_out, const std::string& log_path = "");
void run_train_stage2(const ExperimentConfig& cfg, const std::string& data_path,
                      const std::string& ckpt_in, const std::string& ckpt_out,
                      const std::string& log_path = "");

Scene corrupted_for_eval(const Scene& scene, const std::string& scenario_spec);

struct EvalRun {
    std::vector<ScenarioResult> rows;
    double perf_ratio_map = 0.0;  // 0 when no clean scenario present
    double perf_ratio_nds = 0.0;
};
/// method: "med" | "baseline" | "single". Scenario specs follow the
/// corruption mini-grammar; "clean" anchors the performance ratio.
EvalRun run_eval(const ExperimentConfig& cfg, const std::string& ckpt_path,
                 const std::string& data_path, const std::vector<std::string>& scenarios,
                 const std::string& method, const std::string& out_csv,
                 const std::string& out_json);

void run_route_stats(const ExperimentConfig& cfg, const std::string& ckpt_path,
                     const std::string& data_path, const std::vector<std::string>& scenarios,
                     const std::string& out_csv);

struct CostReport {
    std::uint64_t single = 0;
    std::uint64_t parallel = 0;
    std::uint64_t routed = 0;
    std::uint64_t router_visits = 0;
    double routed_over_single = 0.0;
    double parallel_over_single = 0.0;
};
CostReport run_bench_cost(const ExperimentConfig& cfg, const std::string& ckpt_path,
                          const std::string& data_path, const std::string& out_csv);

/// Merges eval JSON reports into one tidy CSV (scenario, method, metric,
/// value); duplicate keys are an error.
int run_plot_data(const std::vector<std::string>& report_paths, const std::string& out_csv);

Model load_model(const ExperimentConfig& cfg, const std::string& ckpt_path);

}  // namespace mome
