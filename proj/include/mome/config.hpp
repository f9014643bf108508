#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mome/geometry.hpp"

namespace mome {

struct GeometryConfig {
    PcRange range;
    int bev_cells = 180;
    int cam_views = 6;
    int cam_feat_h = 40;
    int cam_feat_w = 100;
    int image_h = 640;
    int image_w = 1600;
    double cam_hfov_deg = 70.0;
    int window_bev = 5;   // BEV attention window side
    int window_cam = 15;  // camera attention window side

    BevGrid grid() const { return BevGrid{bev_cells, range}; }
};

struct ModelConfig {
    int dim = 32;
    int queries = 128;
    int layers = 6;
    int heads = 4;
    int classes = 4;
    int ffn_mult = 4;
    bool share_layers = false;     // reuse one layer's weights across depth
    std::string router_mask = "lam";  // "lam" | "global"
};

struct SceneConfig {
    int min_boxes = 3;
    int max_boxes = 12;
    int bg_azimuth_steps = 120;
    double ground_z = -1.8;
    double point_density = 60.0;  // surface points ~ density * area / distance
    int max_points_per_box = 400;
};

struct TrainConfig {
    double lr = 1e-3;
    int stage1_steps = 1000;
    int stage2_steps = 300;
    int batch = 1;
    std::uint64_t seed = 1;
    int scenes = 200;
    int holdout = 48;
    std::string optimizer = "adam";  // "adam" | "sgd"
    double lambda_cls = 2.0;
    double lambda_box = 5.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
};

struct EvalConfig {
    std::vector<double> thresholds{0.5, 1.0, 2.0, 4.0};
    double score_floor = 0.05;
};

struct ExperimentConfig {
    GeometryConfig geometry;
    ModelConfig model;
    SceneConfig scene;
    TrainConfig train;
    EvalConfig eval;
    std::string rig_file;  // optional path to a rig description JSON

    void validate() const;
    /// Canonical key-tree text (stable ordering, full float precision).
    std::string canonical_text() const;
    std::uint64_t hash() const;
    std::string hash_hex() const;

    CameraRig default_rig() const;
};

/// Parses the TOML-style config text; unknown keys are rejected.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

/// Applies a single "section.key=value" override.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

}  // namespace mome
