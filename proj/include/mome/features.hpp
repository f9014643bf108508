#pragma once

#include <array>
#include <span>
#include <vector>

#include "mome/config.hpp"
#include "mome/rng.hpp"
#include "mome/scene.hpp"
#include "mome/tensor.hpp"

namespace mome {

inline constexpr int kBevStats = 4;  // log1p(count), mean z, max z, occupancy
inline constexpr int kCamStats = 4;  // coverage, inverse depth, 2 class channels

/// Row layout of the flattened feature matrix: BEV block first (row-major),
/// then camera views in index order, each row-major. Attention masks use
/// the identical column layout.
struct FeatureLayout {
    int bev_cells = 180;
    int views = 6;
    int cam_h = 40;
    int cam_w = 100;
    int dim = 32;
    int bev_len() const { return bev_cells * bev_cells; }
    int view_len() const { return cam_h * cam_w; }
    int cam_len() const { return views * view_len(); }
    int total() const { return bev_len() + cam_len(); }
};

FeatureLayout make_layout(const ExperimentConfig& cfg);

struct FeatureBundle {
    FeatureLayout layout;
    Tensor flat;  // [(bev_len + cam_len) x D]
};

/// Per-cell BEV statistics from the point cloud; empty cells hold the
/// zero-stat vector. Row-major [cells^2 x kBevStats].
std::vector<double> bev_stats(const Scene& scene, const BevGrid& grid);

/// Per-cell camera statistics from projected box rectangles; dropped views
/// and views seeing nothing hold zero stats. [views*h*w x kCamStats].
std::vector<double> camera_stats(const Scene& scene);

void init_encoder_params(ParamStore& params, int dim, Rng& rng);

Tensor encode_bev(Tape& tape, Binding& binding, ParamStore& params, const Scene& scene,
                  const ExperimentConfig& cfg);
Tensor encode_cameras(Tape& tape, Binding& binding, ParamStore& params, const Scene& scene);
FeatureBundle flatten_concat(const Tensor& bev, const Tensor& cams, const FeatureLayout& layout);
FeatureBundle encode_features(Tape& tape, Binding& binding, ParamStore& params,
                              const Scene& scene, const ExperimentConfig& cfg);

/// Sinusoidal position encoding over normalized coordinates.
void sinusoidal_fill(std::span<double> out, std::span<const double> coords01);
/// [total x D]; deterministic function of cell coordinates, same layout as
/// the flattened features.
std::vector<double> feature_pos_encoding(const FeatureLayout& layout);
/// [N x D] from normalized reference points.
std::vector<double> query_pos_encoding(std::span<const std::array<double, 3>> refs, int dim);

}  // namespace mome
