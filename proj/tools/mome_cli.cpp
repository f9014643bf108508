// Command-line front end. Talks to the core exclusively through the C API.
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mome/capi.h"

namespace {

struct ConfigHandle {
    mome_config* cfg = nullptr;
    ~ConfigHandle() { mome_config_free(cfg); }
};

int die(mome_status status) {
    std::fprintf(stderr, "error (%s): %s\n", mome_status_str(status), mome_last_error());
    return 1;
}

// flag > file > default
int resolve_config(ConfigHandle& handle, const std::string& config_path,
                   const std::vector<std::string>& overrides) {
    mome_status s = config_path.empty() ? mome_config_default(&handle.cfg)
                                        : mome_config_load(config_path.c_str(), &handle.cfg);
    if (s != MOME_OK) return die(s);
    for (const std::string& o : overrides)
        if ((s = mome_config_override(handle.cfg, o.c_str())) != MOME_OK) return die(s);
    char hash[17];
    if ((s = mome_config_hash(handle.cfg, hash)) != MOME_OK) return die(s);
    std::fprintf(stderr, "[mome] resolved config hash %s\n", hash);
    return 0;
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += ",";
        out += parts[i];
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic LiDAR-camera multi-expert detection sandbox"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "config file (TOML-style key trees)");
    app.add_option("--set", overrides, "override, e.g. --set train.seed=7")->take_all();

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic scene dataset");
    int synth_count = 16;
    std::uint64_t synth_seed = 1;
    std::string synth_out;
    synth->add_option("--count", synth_count, "number of scenes");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out", synth_out, "output dataset file")->required();

    // corrupt
    auto* corrupt = app.add_subcommand("corrupt", "apply a sensor-failure spec to a dataset");
    std::string corrupt_in, corrupt_spec, corrupt_out;
    corrupt->add_option("--in", corrupt_in, "input dataset")->required();
    corrupt->add_option("--corrupt", corrupt_spec,
                        "spec: beams=4 | lidardrop | fov=-60:60 | objfail=0.5@seed7 | "
                        "viewdrop=0,1,2 | occl=<file>")
        ->required();
    corrupt->add_option("--out", corrupt_out, "output dataset")->required();

    // train-stage1
    auto* ts1 = app.add_subcommand("train-stage1", "train encoders, experts and heads on clean data");
    std::string ts1_data, ts1_out, ts1_log;
    ts1->add_option("--data", ts1_data, "training dataset (default: generated from config)");
    ts1->add_option("--out", ts1_out, "output checkpoint")->required();
    ts1->add_option("--log", ts1_log, "training log CSV (default: <out>.log.csv)");

    // train-stage2
    auto* ts2 = app.add_subcommand("train-stage2", "train the query router against frozen experts");
    std::string ts2_data, ts2_in, ts2_out, ts2_log;
    ts2->add_option("--data", ts2_data, "training dataset (default: generated from config)");
    ts2->add_option("--ckpt", ts2_in, "input checkpoint")->required();
    ts2->add_option("--out", ts2_out, "output checkpoint")->required();
    ts2->add_option("--log", ts2_log, "training log CSV (default: <out>.log.csv)");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint across failure scenarios");
    std::string ev_ckpt, ev_data, ev_method = "med", ev_out, ev_json;
    std::vector<std::string> ev_scenarios{"clean"};
    eval->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
    eval->add_option("--data", ev_data, "eval dataset (default: held-out scenes from config)");
    eval->add_option("--scenarios", ev_scenarios,
                     "comma-separated scenario specs (use viewdrop=0-5 ranges inside lists)")
        ->delimiter(',');
    eval->add_option("--method", ev_method, "med | baseline | single");
    eval->add_option("--out", ev_out, "report CSV")->required();
    eval->add_option("--json", ev_json, "full JSON report (default: <out>.json)");

    // route-stats
    auto* rs = app.add_subcommand("route-stats", "expert-allocation percentages per scenario");
    std::string rs_ckpt, rs_data, rs_out;
    std::vector<std::string> rs_scenarios{"clean"};
    rs->add_option("--ckpt", rs_ckpt, "checkpoint")->required();
    rs->add_option("--data", rs_data, "dataset (default: held-out scenes)");
    rs->add_option("--scenarios", rs_scenarios, "scenario specs")->delimiter(',');
    rs->add_option("--out", rs_out, "output CSV")->required();

    // bench-cost
    auto* bench = app.add_subcommand("bench-cost", "attended key-value pair counters");
    std::string bc_ckpt, bc_data, bc_out;
    bench->add_option("--ckpt", bc_ckpt, "checkpoint")->required();
    bench->add_option("--data", bc_data, "dataset (default: held-out scenes)");
    bench->add_option("--out", bc_out, "output CSV");

    // plot-data
    auto* plot = app.add_subcommand("plot-data", "merge eval reports into a tidy CSV");
    std::vector<std::string> plot_reports;
    std::string plot_out;
    plot->add_option("--report", plot_reports, "eval JSON report (repeatable)")->required();
    plot->add_option("--out", plot_out, "output CSV")->required();

    CLI11_PARSE(app, argc, argv);

    if (plot->parsed()) {  // needs no config
        std::vector<const char*> paths;
        for (const std::string& p : plot_reports) paths.push_back(p.c_str());
        const mome_status s =
            mome_plot_data(paths.data(), static_cast<int>(paths.size()), plot_out.c_str());
        if (s != MOME_OK) return die(s);
        std::printf("wrote %s\n", plot_out.c_str());
        return 0;
    }

    ConfigHandle cfg;
    if (int rc = resolve_config(cfg, config_path, overrides); rc != 0) return rc;

    mome_status s = MOME_OK;
    if (synth->parsed()) {
        mome_census census{};
        s = mome_synth(cfg.cfg, synth_count, synth_seed, synth_out.c_str(), &census);
        if (s != MOME_OK) return die(s);
        std::printf("scenes=%lld boxes=%lld points=%lld -> %s\n",
                    static_cast<long long>(census.scenes), static_cast<long long>(census.boxes),
                    static_cast<long long>(census.points), synth_out.c_str());
    } else if (corrupt->parsed()) {
        s = mome_corrupt(cfg.cfg, corrupt_in.c_str(), corrupt_spec.c_str(), corrupt_out.c_str());
        if (s != MOME_OK) return die(s);
        std::printf("wrote %s\n", corrupt_out.c_str());
    } else if (ts1->parsed()) {
        s = mome_train_stage1(cfg.cfg, ts1_data.empty() ? nullptr : ts1_data.c_str(),
                              ts1_out.c_str(), ts1_log.empty() ? nullptr : ts1_log.c_str());
        if (s != MOME_OK) return die(s);
        std::printf("wrote %s\n", ts1_out.c_str());
    } else if (ts2->parsed()) {
        s = mome_train_stage2(cfg.cfg, ts2_data.empty() ? nullptr : ts2_data.c_str(),
                              ts2_in.c_str(), ts2_out.c_str(),
                              ts2_log.empty() ? nullptr : ts2_log.c_str());
        if (s != MOME_OK) return die(s);
        std::printf("wrote %s\n", ts2_out.c_str());
    } else if (eval->parsed()) {
        const std::string json = ev_json.empty() ? ev_out + ".json" : ev_json;
        s = mome_eval(cfg.cfg, ev_ckpt.c_str(), ev_data.empty() ? nullptr : ev_data.c_str(),
                      join(ev_scenarios).c_str(), ev_method.c_str(), ev_out.c_str(), json.c_str());
        if (s != MOME_OK) return die(s);
        std::printf("wrote %s and %s\n", ev_out.c_str(), json.c_str());
    } else if (rs->parsed()) {
        s = mome_route_stats(cfg.cfg, rs_ckpt.c_str(), rs_data.empty() ? nullptr : rs_data.c_str(),
                             join(rs_scenarios).c_str(), rs_out.c_str());
        if (s != MOME_OK) return die(s);
        std::printf("wrote %s\n", rs_out.c_str());
    } else if (bench->parsed()) {
        mome_cost_report report{};
        s = mome_bench_cost(cfg.cfg, bc_ckpt.c_str(), bc_data.empty() ? nullptr : bc_data.c_str(),
                            bc_out.empty() ? nullptr : bc_out.c_str(), &report);
        if (s != MOME_OK) return die(s);
        std::printf("single=%llu parallel=%llu routed=%llu router_visits=%llu\n",
                    static_cast<unsigned long long>(report.single),
                    static_cast<unsigned long long>(report.parallel_baseline),
                    static_cast<unsigned long long>(report.routed),
                    static_cast<unsigned long long>(report.router_mask_visits));
        std::printf("routed/single=%.4f parallel/single=%.4f\n", report.routed_over_single,
                    report.parallel_over_single);
    }
    return 0;
}
