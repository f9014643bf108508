#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mome/corruption.hpp"
#include "mome/pipeline.hpp"

namespace mome {

/// Minimum-cost assignment of G rows (ground truths) to N columns
/// (queries), G <= N. Returns the matched column per row.
std::vector<int> hungarian_match(std::span<const double> cost, int rows, int cols);

/// Scalar focal loss for a single score/target pair (closed form, used by
/// tests and the matcher). Scores are clamped into [1e-7, 1-1e-7].
double focal_term(double score, int target, double alpha, double gamma);

/// Tape-side focal loss over a score matrix against a 0/1 target matrix,
/// summed over queries and classes, normalized by max(matched, 1).
Tensor focal_loss(const Tensor& scores, const std::vector<double>& targets, double alpha,
                  double gamma, int matched_count);

/// Mean absolute difference over the 8 regression targets of matched pairs.
Tensor l1_box_loss(const Tensor& pred_params, const std::vector<double>& gt_params,
                   int matched_count);

enum class DropState { None, LidarDropped, CameraDropped };
/// Uniform over the three states.
DropState sample_drop(Rng& rng);
/// One-hot routing label in (l, c, lc) order.
std::array<double, 3> route_label(DropState s);
Scene apply_drop(const Scene& scene, DropState s);

struct Stage1Losses {
    double lidar = 0.0, camera = 0.0, fused = 0.0;
    double total() const { return lidar + camera + fused; }
};

/// One clean-data step: every query through every expert, each expert
/// matched to GT independently, summed loss backpropagated, one optimizer
/// update on everything except the router.
Stage1Losses stage1_step(Model& model, std::span<const Scene> batch, Optimizer& opt);

struct Stage2Result {
    double ce_sum = 0.0;        // summed CE over queries, averaged over the batch
    double ce_per_query = 0.0;
    double route_accuracy = 0.0;
};

/// One router step under sampled sensor drops; only router.* parameters
/// move, experts and encoders stay frozen.
Stage2Result stage2_step(Model& model, std::span<const Scene> batch, Optimizer& opt, Rng& rng);

struct TrainLogRow {
    int step = 0;
    int stage = 1;
    Stage1Losses s1;
    Stage2Result s2;
};
using TrainLogFn = std::function<void(const TrainLogRow&)>;

void train_stage1(Model& model, std::span<const Scene> scenes, int steps, const TrainLogFn& log = {});
void train_stage2(Model& model, std::span<const Scene> scenes, int steps, const TrainLogFn& log = {});

/// Expert detection losses for one scene on a caller-provided tape; exposed
/// for tests that need gradients of a single expert path.
struct ExpertLoss {
    Tensor loss;
    int matched = 0;
};
ExpertLoss expert_detection_loss(Tape& tape, Model& model, const Scene& scene, Modality mod,
                                 const FeatureBundle& bundle, const Tensor& feat_pe,
                                 const Tensor& query_embed, const Tensor& query_pe,
                                 std::span<const LayerWeights> layers, const HeadWeights& heads);

}  // namespace mome
