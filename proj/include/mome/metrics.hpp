#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "mome/decoder.hpp"
#include "mome/router.hpp"
#include "mome/scene.hpp"

namespace mome {

/// One evaluated frame: ground truth plus whatever the model produced.
struct EvalFrame {
    std::vector<GtBox> gt;
    std::vector<Detection> detections;
};

/// AP for one class at one BEV center-distance threshold over a set of
/// frames. Detections are sorted by score; each greedily matches the
/// nearest unmatched GT within the threshold; AP integrates the PR curve
/// at 101 recall points. Returns -1 when the class has no GT anywhere.
double ap_at_threshold(std::span<const EvalFrame> frames, int class_id, double threshold,
                       double score_floor);

struct TpErrors {
    double translation = 0.0;  // meters, BEV center distance
    double scale = 0.0;        // 1 - IoU of centered, axis-aligned boxes
    double orientation = 0.0;  // radians, wrapped to [0, pi]
    int count = 0;
};
/// True-positive errors for one class at the 2 m matching threshold.
TpErrors tp_errors(std::span<const EvalFrame> frames, int class_id, double score_floor);

struct MetricsReport {
    std::map<int, std::map<double, double>> ap;  // class -> threshold -> AP
    double mean_ap = 0.0;
    double mate = 0.0;  // mean translation error (m)
    double mase = 0.0;  // mean scale error
    double maoe = 0.0;  // mean orientation error (rad)
    double nds_lite = 0.0;
};

struct EvalParams {
    std::vector<double> thresholds{0.5, 1.0, 2.0, 4.0};
    double score_floor = 0.05;
    int classes = 4;
};

MetricsReport evaluate_frames(std::span<const EvalFrame> frames, const EvalParams& params);

/// Composite score: (1/6) * (3*mAP + sum over errors of (1 - min(1, e/norm)))
/// with norms (0.5 m, 0.5, pi/2).
double nds_lite(double mean_ap, double mate, double mase, double maoe);

/// mP_R (mean adverse performance) and R = mP_R / clean.
std::pair<double, double> perf_ratio(double clean, std::span<const double> adverse);

/// Fractions (percent) of queries per expert, ordered (lc, l, c).
struct RouteStats {
    double pct_fused = 0.0;
    double pct_lidar = 0.0;
    double pct_camera = 0.0;
};
RouteStats route_statistics(std::span<const RouteDecision> decisions);

}  // namespace mome
