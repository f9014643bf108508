#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mome/config.hpp"
#include "mome/dataset_io.hpp"
#include "mome/model.hpp"
#include "mome/runner.hpp"

using namespace mome;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("default config validates and round-trips through its canonical text") {
    ExperimentConfig cfg;
    cfg.validate();
    const std::string text = cfg.canonical_text();
    ExperimentConfig back = parse_config_text(text);
    CHECK(back.hash() == cfg.hash());
    CHECK(back.geometry.bev_cells == 180);
    CHECK(back.model.queries == 128);
    CHECK(back.eval.thresholds.size() == 4);
}

TEST_CASE("unknown keys are rejected") {
    CHECK_THROWS_AS((void)parse_config_text("[model]\ndim = 32\nbogus = 1\n"), ConfigError);
    CHECK_THROWS_AS((void)parse_config_text("[nope]\ndim = 32\n"), ConfigError);
}

TEST_CASE("config value validation") {
    CHECK_THROWS_AS((void)parse_config_text("[model]\ndim = 30\nheads = 4\n"), ConfigError);
    CHECK_THROWS_AS((void)parse_config_text("[model]\nclasses = 11\n"), ConfigError);
    CHECK_THROWS_AS((void)parse_config_text("[geometry]\nwindow_bev = 4\n"), ConfigError);
    CHECK_THROWS_AS((void)parse_config_text("[geometry]\ncam_feat_h = 39\n"), ConfigError);
    CHECK_THROWS_AS((void)parse_config_text("[eval]\nthresholds = [2.0, 1.0]\n"), ConfigError);
    CHECK_THROWS_AS((void)parse_config_text("[model]\nrouter_mask = \"foo\"\n"), ConfigError);
}

TEST_CASE("overrides mutate one key and change the hash") {
    ExperimentConfig cfg;
    const auto h0 = cfg.hash();
    apply_override(cfg, "train.seed=42");
    CHECK(cfg.train.seed == 42);
    CHECK(cfg.hash() != h0);
    apply_override(cfg, "geometry.pc_range_min=[-10, -10, -2]");
    CHECK(cfg.geometry.range.min[0] == -10.0);
    CHECK_THROWS_AS(apply_override(cfg, "model.unknown=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "model.dim"), ConfigError);
}

TEST_CASE("config file loading with comments") {
    const std::string path = tmp_path("mome_cfg_test.toml");
    std::ofstream(path) << "# comment\n[model]\ndim = 16  # inline\nheads = 2\n\n[train]\nseed = 9\n";
    ExperimentConfig cfg = load_config_file(path);
    CHECK(cfg.model.dim == 16);
    CHECK(cfg.model.heads == 2);
    CHECK(cfg.train.seed == 9);
    std::filesystem::remove(path);
    CHECK_THROWS_AS((void)load_config_file(path), IoError);
}

TEST_CASE("dataset files round-trip and validate") {
    ExperimentConfig cfg;
    apply_override(cfg, "geometry.bev_cells=36");
    apply_override(cfg, "geometry.cam_feat_h=10");
    apply_override(cfg, "geometry.cam_feat_w=25");
    apply_override(cfg, "scene.bg_azimuth_steps=40");
    const std::string path = tmp_path("mome_ds_test.jsonl");
    const SceneCensus census = run_synth(cfg, 3, 7, path);
    CHECK(census.scenes == 3);
    CHECK(census.boxes > 0);
    CHECK(census.points > 0);

    Dataset ds = read_dataset(path);
    CHECK(ds.header.schema == kDatasetSchema);
    CHECK(ds.header.config_hash == cfg.hash_hex());
    CHECK(ds.header.corruption == "clean");
    const SceneCensus again = ds.census();
    CHECK(again.boxes == census.boxes);
    CHECK(again.points == census.points);

    // azimuths must be recomputed exactly on read
    for (const Scene& s : ds.scenes)
        for (const LidarPoint& p : s.points) CHECK(p.azimuth == std::atan2(p.y, p.x));
    std::filesystem::remove(path);
}

TEST_CASE("same seed gives byte-identical dataset files") {
    ExperimentConfig cfg;
    apply_override(cfg, "geometry.bev_cells=36");
    apply_override(cfg, "scene.bg_azimuth_steps=30");
    const std::string p1 = tmp_path("mome_ds_a.jsonl");
    const std::string p2 = tmp_path("mome_ds_b.jsonl");
    run_synth(cfg, 2, 5, p1);
    run_synth(cfg, 2, 5, p2);
    std::ifstream f1(p1), f2(p2);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK(!s1.empty());
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("rig file round-trip") {
    CameraRig rig = make_default_rig(6, 640, 1600, 40, 100, 70.0);
    const std::string path = tmp_path("mome_rig_test.json");
    write_rig(path, rig);
    CameraRig back = read_rig(path);
    CHECK(back.views == rig.views);
    CHECK(back.image_w == rig.image_w);
    CHECK(back.feat_h == rig.feat_h);
    for (int v = 0; v < rig.views; ++v)
        for (int i = 0; i < 16; ++i)
            CHECK(back.lidar2img[static_cast<std::size_t>(v)][static_cast<std::size_t>(i)] ==
                  rig.lidar2img[static_cast<std::size_t>(v)][static_cast<std::size_t>(i)]);
    std::filesystem::remove(path);
}

namespace {

ExperimentConfig tiny_model_cfg() {
    ExperimentConfig cfg;
    apply_override(cfg, "geometry.bev_cells=12");
    apply_override(cfg, "geometry.cam_feat_h=4");
    apply_override(cfg, "geometry.cam_feat_w=10");
    apply_override(cfg, "model.dim=16");
    apply_override(cfg, "model.queries=8");
    apply_override(cfg, "model.layers=2");
    apply_override(cfg, "model.heads=2");
    return cfg;
}

}  // namespace

TEST_CASE("checkpoint save/load round-trips every parameter") {
    ExperimentConfig cfg = tiny_model_cfg();
    Model model = build_model(cfg);
    const std::string path = tmp_path("mome_ckpt_test.bin");
    save_checkpoint(model, path);

    // header magic
    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "MOME");

    Model other = build_model(cfg);
    // perturb, then load back
    for (auto& p : other.params.all())
        for (auto& v : p.value) v += 1.0;
    const bool hash_ok = load_checkpoint(other, path);
    CHECK(hash_ok);
    CHECK(other.params.value_bytes() == model.params.value_bytes());
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint loading rejects mismatched shapes") {
    ExperimentConfig cfg = tiny_model_cfg();
    Model model = build_model(cfg);
    const std::string path = tmp_path("mome_ckpt_shape.bin");
    save_checkpoint(model, path);

    ExperimentConfig wider = tiny_model_cfg();
    apply_override(wider, "model.dim=32");
    apply_override(wider, "model.heads=4");
    Model other = build_model(wider);
    CHECK_THROWS_AS((void)load_checkpoint(other, path), IoError);
    std::filesystem::remove(path);

    CHECK_THROWS_AS((void)load_checkpoint(other, tmp_path("missing_ckpt.bin")), IoError);
}

TEST_CASE("checkpoint records a config-hash mismatch") {
    ExperimentConfig cfg = tiny_model_cfg();
    Model model = build_model(cfg);
    const std::string path = tmp_path("mome_ckpt_hash.bin");
    save_checkpoint(model, path);

    ExperimentConfig other_cfg = tiny_model_cfg();
    apply_override(other_cfg, "train.lr=0.5");  // same shapes, different hash
    Model other = build_model(other_cfg);
    CHECK_FALSE(load_checkpoint(other, path));
    std::filesystem::remove(path);
}
