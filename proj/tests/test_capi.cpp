#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "mome/capi.h"

namespace {

std::string tmp(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

struct Cfg {
    mome_config* h = nullptr;
    ~Cfg() { mome_config_free(h); }
};

// micro experiment so the full C-API path stays fast
void make_micro(Cfg& cfg) {
    REQUIRE(mome_config_default(&cfg.h) == MOME_OK);
    const char* overrides[] = {
        "geometry.bev_cells=10",  "geometry.cam_feat_h=2", "geometry.cam_feat_w=5",
        "geometry.cam_views=4",   "geometry.window_cam=3", "model.dim=8",
        "model.heads=2",          "model.queries=4",       "model.layers=1",
        "model.classes=2",        "scene.bg_azimuth_steps=12", "scene.min_boxes=1",
        "scene.max_boxes=2",      "train.stage1_steps=4",  "train.stage2_steps=4",
        "train.batch=1",          "train.scenes=3",        "train.holdout=2",
    };
    for (const char* o : overrides) REQUIRE(mome_config_override(cfg.h, o) == MOME_OK);
}

}  // namespace

TEST_CASE("capi version and status strings") {
    CHECK(std::string(mome_version()) == "0.1.0");
    CHECK(std::string(mome_status_str(MOME_OK)) == "ok");
    CHECK(std::string(mome_status_str(MOME_ERR_CONFIG)) == "config error");
    CHECK(std::string(mome_status_str(MOME_ERR_IO)) == "io error");
}

TEST_CASE("capi null-argument handling") {
    CHECK(mome_config_default(nullptr) == MOME_ERR_INVALID_ARG);
    CHECK(std::strlen(mome_last_error()) > 0);
    CHECK(mome_synth(nullptr, 1, 1, "x", nullptr) == MOME_ERR_INVALID_ARG);
    CHECK(mome_plot_data(nullptr, 0, "x") == MOME_ERR_INVALID_ARG);
}

TEST_CASE("capi config lifecycle") {
    Cfg cfg;
    REQUIRE(mome_config_default(&cfg.h) == MOME_OK);
    CHECK(mome_config_override(cfg.h, "train.seed=5") == MOME_OK);
    CHECK(mome_config_override(cfg.h, "nope.key=1") == MOME_ERR_CONFIG);
    char hash[17];
    REQUIRE(mome_config_hash(cfg.h, hash) == MOME_OK);
    CHECK(std::strlen(hash) == 16);
    const char* text = nullptr;
    REQUIRE(mome_config_text(cfg.h, &text) == MOME_OK);
    CHECK(std::string(text).find("[model]") != std::string::npos);

    // file loading reports IO errors
    mome_config* bad = nullptr;
    CHECK(mome_config_load(tmp("missing_config.toml").c_str(), &bad) == MOME_ERR_IO);
}

TEST_CASE("capi end-to-end pipeline on a micro experiment") {
    Cfg cfg;
    make_micro(cfg);

    const std::string data = tmp("capi_data.jsonl");
    const std::string corrupted = tmp("capi_corrupt.jsonl");
    const std::string ckpt1 = tmp("capi_s1.ckpt");
    const std::string ckpt2 = tmp("capi_s2.ckpt");
    const std::string report_csv = tmp("capi_report.csv");
    const std::string report_json = tmp("capi_report.json");
    const std::string routes_csv = tmp("capi_routes.csv");
    const std::string cost_csv = tmp("capi_cost.csv");
    const std::string plot_csv = tmp("capi_plot.csv");

    mome_census census{};
    REQUIRE(mome_synth(cfg.h, 3, 11, data.c_str(), &census) == MOME_OK);
    CHECK(census.scenes == 3);
    CHECK(census.points > 0);

    REQUIRE(mome_corrupt(cfg.h, data.c_str(), "beams=4", corrupted.c_str()) == MOME_OK);
    CHECK(mome_corrupt(cfg.h, data.c_str(), "beams=5", corrupted.c_str()) == MOME_ERR_CONFIG);
    CHECK(mome_corrupt(cfg.h, tmp("nope.jsonl").c_str(), "beams=4", corrupted.c_str()) ==
          MOME_ERR_IO);

    REQUIRE(mome_train_stage1(cfg.h, data.c_str(), ckpt1.c_str(), nullptr) == MOME_OK);
    CHECK(std::filesystem::exists(ckpt1));
    CHECK(std::filesystem::exists(ckpt1 + ".log.csv"));
    REQUIRE(mome_train_stage2(cfg.h, data.c_str(), ckpt1.c_str(), ckpt2.c_str(), nullptr) ==
            MOME_OK);

    mome_model* model = nullptr;
    REQUIRE(mome_model_load(cfg.h, ckpt2.c_str(), &model) == MOME_OK);
    mome_model_free(model);
    CHECK(mome_model_load(cfg.h, tmp("missing.ckpt").c_str(), &model) == MOME_ERR_IO);

    REQUIRE(mome_eval(cfg.h, ckpt2.c_str(), nullptr, "clean,lidardrop", "med",
                      report_csv.c_str(), report_json.c_str()) == MOME_OK);
    CHECK(std::filesystem::exists(report_csv));
    CHECK(std::filesystem::exists(report_json));
    {
        std::ifstream in(report_csv);
        std::string first;
        std::getline(in, first);
        CHECK(first.find("config_hash=") != std::string::npos);
    }

    REQUIRE(mome_route_stats(cfg.h, ckpt2.c_str(), nullptr, "clean,lidardrop,viewdrop=0-3",
                             routes_csv.c_str()) == MOME_OK);
    {
        std::ifstream in(routes_csv);
        std::string line;
        std::getline(in, line);  // hash comment
        std::getline(in, line);
        CHECK(line == "scenario,pct_lc,pct_l,pct_c");
    }

    mome_cost_report cost{};
    REQUIRE(mome_bench_cost(cfg.h, ckpt2.c_str(), nullptr, cost_csv.c_str(), &cost) == MOME_OK);
    CHECK(cost.single > 0);
    CHECK(cost.parallel_baseline == 2 * cost.single);
    CHECK(cost.routed <= cost.single);
    CHECK(cost.parallel_over_single == 2.0);

    const char* reports[] = {report_json.c_str()};
    REQUIRE(mome_plot_data(reports, 1, plot_csv.c_str()) == MOME_OK);
    {
        std::ifstream in(plot_csv);
        std::string header;
        std::getline(in, header);
        CHECK(header == "scenario,method,metric,value");
        int rows = 0;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 4);  // 2 scenarios x 2 metrics
    }
    // duplicate reports collide
    const char* dup[] = {report_json.c_str(), report_json.c_str()};
    CHECK(mome_plot_data(dup, 2, plot_csv.c_str()) == MOME_ERR_CONFIG);

    for (const auto& p : {data, corrupted, ckpt1, ckpt2, report_csv, report_json, routes_csv,
                          cost_csv, plot_csv, ckpt1 + ".log.csv", ckpt2 + ".log.csv"})
        std::filesystem::remove(p);
}
