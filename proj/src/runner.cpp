#include "mome/runner.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <set>
#include <thread>

#include "mome/common.hpp"

namespace mome {

namespace {

constexpr std::uint64_t kHoldoutTag = 0x401d0ull;

std::vector<Scene> load_or_generate(const ExperimentConfig& cfg, const std::string& data_path,
                                    int count, std::uint64_t seed_tag) {
    if (!data_path.empty()) {
        Dataset ds = read_dataset(data_path);
        return std::move(ds.scenes);
    }
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        scenes.push_back(generate_scene(cfg, i, mix_seed(cfg.train.seed, seed_tag + i)));
    return scenes;
}

// Bounded parallel map over scene indices with deterministic assembly.
template <typename Fn>
auto parallel_over(std::size_t count, Fn fn) {
    using R = decltype(fn(std::size_t{0}));
    std::vector<R> results(count);
    const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                results[i] = fn(i);
            }
        });
    for (auto& t : pool) t.join();
    return results;
}

}  // namespace

std::vector<Scene> synth_scenes(const ExperimentConfig& cfg, int count, std::uint64_t seed) {
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) scenes.push_back(generate_scene(cfg, i, mix_seed(seed, i)));
    return scenes;
}

std::vector<Scene> holdout_scenes(const ExperimentConfig& cfg, int count) {
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        scenes.push_back(generate_scene(cfg, 100000 + i, mix_seed(cfg.train.seed, kHoldoutTag + i)));
    return scenes;
}

SceneCensus run_synth(const ExperimentConfig& cfg, int count, std::uint64_t seed,
                      const std::string& out_path) {
    cfg.validate();
    std::vector<Scene> scenes = synth_scenes(cfg, count, seed);
    DatasetHeader header;
    header.config_hash = cfg.hash_hex();
    header.count = count;
    write_dataset(out_path, header, scenes);
    Dataset check = read_dataset(out_path);  // validate what we just wrote
    return check.census();
}

void run_corrupt(const ExperimentConfig& cfg, const std::string& in_path,
                 const std::string& spec, const std::string& out_path) {
    CorruptionSpec parsed = parse_corruption_spec(spec);
    if (auto* occ = std::get_if<Occlusion>(&parsed))
        occ->rects = read_occlusion_file(occ->source_file);
    Dataset ds = read_dataset(in_path);
    std::vector<Scene> out;
    out.reserve(ds.scenes.size());
    for (const Scene& s : ds.scenes) out.push_back(apply_corruption(s, parsed));
    DatasetHeader header = ds.header;
    header.config_hash = cfg.hash_hex();
    header.corruption = spec;
    write_dataset(out_path, header, out);
    read_dataset(out_path);
}

namespace {

std::ofstream open_train_log(const std::string& ckpt_out, const std::string& log_path,
                             const ExperimentConfig& cfg) {
    const std::string path = log_path.empty() ? ckpt_out + ".log.csv" : log_path;
    std::ofstream log(path);
    if (!log) throw IoError("cannot write training log: " + path);
    log << "# config_hash=" << cfg.hash_hex() << "\n";
    log << "step,stage,L_l,L_c,L_lc,L_1st,L_2nd,route_acc\n";
    return log;
}

}  // namespace

void run_train_stage1(const ExperimentConfig& cfg, const std::string& data_path,
                      const std::string& ckpt_out, const std::string& log_path) {
    cfg.validate();
    std::vector<Scene> scenes = load_or_generate(cfg, data_path, cfg.train.scenes, 0);
    Model model = build_model(cfg);
    std::ofstream log = open_train_log(ckpt_out, log_path, cfg);
    char buf[256];
    train_stage1(model, scenes, cfg.train.stage1_steps, [&](const TrainLogRow& row) {
        std::snprintf(buf, sizeof(buf), "%d,1,%.6f,%.6f,%.6f,%.6f,,\n", row.step, row.s1.lidar,
                      row.s1.camera, row.s1.fused, row.s1.total());
        log << buf;
        if (row.step % 50 == 0)
            log_info("stage1 step " + std::to_string(row.step) +
                     " L_1st=" + std::to_string(row.s1.total()));
    });
    save_checkpoint(model, ckpt_out);
}

void run_train_stage2(const ExperimentConfig& cfg, const std::string& data_path,
                      const std::string& ckpt_in, const std::string& ckpt_out,
                      const std::string& log_path) {
    cfg.validate();
    std::vector<Scene> scenes = load_or_generate(cfg, data_path, cfg.train.scenes, 0);
    Model model = load_model(cfg, ckpt_in);
    std::ofstream log = open_train_log(ckpt_out, log_path, cfg);
    char buf[256];
    train_stage2(model, scenes, cfg.train.stage2_steps, [&](const TrainLogRow& row) {
        std::snprintf(buf, sizeof(buf), "%d,2,,,,,%.6f,%.4f\n", row.step, row.s2.ce_sum,
                      row.s2.route_accuracy);
        log << buf;
        if (row.step % 50 == 0)
            log_info("stage2 step " + std::to_string(row.step) +
                     " acc=" + std::to_string(row.s2.route_accuracy));
    });
    save_checkpoint(model, ckpt_out);
}

Model load_model(const ExperimentConfig& cfg, const std::string& ckpt_path) {
    Model model = build_model(cfg);
    load_checkpoint(model, ckpt_path);
    return model;
}

Scene corrupted_for_eval(const Scene& scene, const std::string& scenario_spec) {
    CorruptionSpec spec = parse_corruption_spec(scenario_spec);
    if (auto* occ = std::get_if<Occlusion>(&spec))
        occ->rects = read_occlusion_file(occ->source_file);
    return apply_corruption(scene, spec);
}

EvalRun run_eval(const ExperimentConfig& cfg, const std::string& ckpt_path,
                 const std::string& data_path, const std::vector<std::string>& scenarios,
                 const std::string& method, const std::string& out_csv,
                 const std::string& out_json) {
    if (method != "med" && method != "baseline" && method != "single")
        throw ConfigError("eval method must be med, baseline or single");
    Model model = load_model(cfg, ckpt_path);
    std::vector<Scene> scenes = !data_path.empty()
                                    ? load_or_generate(cfg, data_path, 0, 0)
                                    : holdout_scenes(cfg, cfg.train.holdout);

    EvalRun run;
    double clean_map = -1.0, clean_nds = -1.0;
    std::vector<double> adverse_map, adverse_nds;
    for (const std::string& scenario : scenarios) {
        struct PerScene {
            EvalFrame frame;
            std::vector<RouteDecision> decisions;
        };
        auto evals = parallel_over(scenes.size(), [&](std::size_t i) {
            const Scene corrupted = corrupted_for_eval(scenes[i], scenario);
            DecodeResult res = method == "med"        ? med_decode(model, corrupted)
                               : method == "baseline" ? baseline_confidence_select(model, corrupted)
                                                      : single_decode(model, corrupted, Modality::Fused);
            PerScene out;
            out.frame.gt = corrupted.boxes;
            out.frame.detections = std::move(res.detections);
            out.decisions = std::move(res.decisions);
            return out;
        });
        std::vector<EvalFrame> frames;
        std::vector<RouteDecision> decisions;
        for (auto& e : evals) {
            frames.push_back(std::move(e.frame));
            decisions.insert(decisions.end(), e.decisions.begin(), e.decisions.end());
        }
        EvalParams params;
        params.thresholds = cfg.eval.thresholds;
        params.score_floor = cfg.eval.score_floor;
        params.classes = cfg.model.classes;
        ScenarioResult row;
        row.scenario = scenario;
        row.method = method;
        row.metrics = evaluate_frames(frames, params);
        row.routes = route_statistics(decisions);
        if (scenario == "clean") {
            clean_map = row.metrics.mean_ap;
            clean_nds = row.metrics.nds_lite;
        } else {
            adverse_map.push_back(row.metrics.mean_ap);
            adverse_nds.push_back(row.metrics.nds_lite);
        }
        run.rows.push_back(std::move(row));
        log_info("eval " + scenario + " done");
    }
    if (clean_map > 0.0 && !adverse_map.empty()) {
        run.perf_ratio_map = perf_ratio(clean_map, adverse_map).second;
        run.perf_ratio_nds = perf_ratio(clean_nds, adverse_nds).second;
    }
    if (!out_csv.empty()) write_eval_csv(out_csv, run.rows, cfg.hash_hex());
    if (!out_json.empty())
        write_eval_json(out_json, run.rows, cfg.hash_hex(), run.perf_ratio_map, run.perf_ratio_nds);
    return run;
}

void run_route_stats(const ExperimentConfig& cfg, const std::string& ckpt_path,
                     const std::string& data_path, const std::vector<std::string>& scenarios,
                     const std::string& out_csv) {
    Model model = load_model(cfg, ckpt_path);
    std::vector<Scene> scenes = !data_path.empty()
                                    ? load_or_generate(cfg, data_path, 0, 0)
                                    : holdout_scenes(cfg, cfg.train.holdout);
    std::ofstream out(out_csv);
    if (!out) throw IoError("cannot write route stats: " + out_csv);
    out << "# config_hash=" << cfg.hash_hex() << "\n";
    out << "scenario,pct_lc,pct_l,pct_c\n";
    char buf[128];
    for (const std::string& scenario : scenarios) {
        auto stats = parallel_over(scenes.size(), [&](std::size_t i) {
            const Scene corrupted = corrupted_for_eval(scenes[i], scenario);
            return med_decode(model, corrupted).decisions;
        });
        std::vector<RouteDecision> decisions;
        for (auto& d : stats) decisions.insert(decisions.end(), d.begin(), d.end());
        const RouteStats rs = route_statistics(decisions);
        std::snprintf(buf, sizeof(buf), "%s,%.3f,%.3f,%.3f\n", scenario.c_str(), rs.pct_fused,
                      rs.pct_lidar, rs.pct_camera);
        out << buf;
    }
}

CostReport run_bench_cost(const ExperimentConfig& cfg, const std::string& ckpt_path,
                          const std::string& data_path, const std::string& out_csv) {
    Model model = load_model(cfg, ckpt_path);
    std::vector<Scene> scenes = !data_path.empty()
                                    ? load_or_generate(cfg, data_path, 0, 0)
                                    : holdout_scenes(cfg, std::min(cfg.train.holdout, 8));
    const FeatureLayout layout = model.layout();
    CostReport report;
    for (const Scene& scene : scenes) {
        DecodeResult res = med_decode(model, scene);
        report.routed += res.cost.kv_pairs;
        report.router_visits += res.cost.router_kv_pairs;
        report.single += single_decoder_cost(model.queries(), layout);
        report.parallel += parallel_baseline_cost(model.queries(), layout);
    }
    report.routed_over_single = static_cast<double>(report.routed) / report.single;
    report.parallel_over_single = static_cast<double>(report.parallel) / report.single;
    if (!out_csv.empty()) {
        std::ofstream out(out_csv);
        if (!out) throw IoError("cannot write cost report: " + out_csv);
        out << "# config_hash=" << cfg.hash_hex() << "\n";
        out << "counter,kv_pairs\n";
        out << "single," << report.single << "\n";
        out << "parallel_baseline," << report.parallel << "\n";
        out << "routed," << report.routed << "\n";
        out << "router_mask_visits," << report.router_visits << "\n";
        char buf[128];
        std::snprintf(buf, sizeof(buf), "ratio_routed_single,%.6f\nratio_parallel_single,%.6f\n",
                      report.routed_over_single, report.parallel_over_single);
        out << buf;
    }
    return report;
}

int run_plot_data(const std::vector<std::string>& report_paths, const std::string& out_csv) {
    std::vector<PlotRow> all;
    std::set<std::string> seen;
    for (const std::string& path : report_paths) {
        for (PlotRow& row : read_report_rows(path)) {
            const std::string key = row.scenario + "|" + row.method + "|" + row.metric;
            if (!seen.insert(key).second)
                throw ConfigError("duplicate scenario in plot data: " + key);
            all.push_back(std::move(row));
        }
    }
    std::ofstream out(out_csv);
    if (!out) throw IoError("cannot write plot data: " + out_csv);
    out << "scenario,method,metric,value\n";
    char buf[256];
    for (const PlotRow& r : all) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.6f\n", r.scenario.c_str(), r.method.c_str(),
                      r.metric.c_str(), r.value);
        out << buf;
    }
    return static_cast<int>(all.size());
}

}  // namespace mome
