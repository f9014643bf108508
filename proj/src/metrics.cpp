#include "mome/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace mome {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Candidate {
    double score;
    int frame;
    int det;  // index within the frame
};

double bev_distance(const Detection& d, const GtBox& g) {
    return std::hypot(d.center[0] - g.center[0], d.center[1] - g.center[1]);
}

// Sorted detection candidates of one class across frames, plus GT count.
std::pair<std::vector<Candidate>, int> class_candidates(std::span<const EvalFrame> frames,
                                                        int class_id, double score_floor) {
    std::vector<Candidate> cands;
    int total_gt = 0;
    for (int f = 0; f < static_cast<int>(frames.size()); ++f) {
        const EvalFrame& frame = frames[static_cast<std::size_t>(f)];
        for (const GtBox& g : frame.gt)
            if (g.class_id == class_id) ++total_gt;
        for (int d = 0; d < static_cast<int>(frame.detections.size()); ++d) {
            const Detection& det = frame.detections[static_cast<std::size_t>(d)];
            if (static_cast<int>(det.scores.size()) <= class_id) continue;
            const double s = det.scores[static_cast<std::size_t>(class_id)];
            if (s >= score_floor) cands.push_back({s, f, d});
        }
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    return {std::move(cands), total_gt};
}

// Greedy TP/FP flags in score order: nearest unmatched GT of the class
// within `threshold` wins.
std::vector<char> greedy_tp_flags(std::span<const EvalFrame> frames, int class_id,
                                  double threshold, std::span<const Candidate> cands) {
    std::vector<std::vector<char>> gt_used(frames.size());
    for (std::size_t f = 0; f < frames.size(); ++f)
        gt_used[f].assign(frames[f].gt.size(), 0);
    std::vector<char> tp(cands.size(), 0);
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const Candidate& c = cands[i];
        const EvalFrame& frame = frames[static_cast<std::size_t>(c.frame)];
        const Detection& det = frame.detections[static_cast<std::size_t>(c.det)];
        int best = -1;
        double best_dist = threshold;
        for (int g = 0; g < static_cast<int>(frame.gt.size()); ++g) {
            if (frame.gt[static_cast<std::size_t>(g)].class_id != class_id) continue;
            if (gt_used[static_cast<std::size_t>(c.frame)][static_cast<std::size_t>(g)]) continue;
            const double dist = bev_distance(det, frame.gt[static_cast<std::size_t>(g)]);
            // within range; strictly nearer wins, first candidate keeps ties
            if (best == -1 ? dist <= best_dist : dist < best_dist) {
                best = g;
                best_dist = dist;
            }
        }
        if (best >= 0) {
            tp[i] = 1;
            gt_used[static_cast<std::size_t>(c.frame)][static_cast<std::size_t>(best)] = 1;
        }
    }
    return tp;
}

}  // namespace

double ap_at_threshold(std::span<const EvalFrame> frames, int class_id, double threshold,
                       double score_floor) {
    auto [cands, total_gt] = class_candidates(frames, class_id, score_floor);
    if (total_gt == 0) return -1.0;  // undefined, excluded from means
    if (cands.empty()) return 0.0;
    std::vector<char> tp = greedy_tp_flags(frames, class_id, threshold, cands);

    // precision/recall at every prefix
    std::vector<double> precision(cands.size()), recall(cands.size());
    int tp_count = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        tp_count += tp[i];
        precision[i] = static_cast<double>(tp_count) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tp_count) / total_gt;
    }
    // 101-point interpolation: max precision at recall >= r
    double ap = 0.0;
    for (int k = 0; k <= 100; ++k) {
        const double r = k / 100.0;
        double best = 0.0;
        for (std::size_t i = 0; i < cands.size(); ++i)
            if (recall[i] >= r) best = std::max(best, precision[i]);
        ap += best;
    }
    return ap / 101.0;
}

TpErrors tp_errors(std::span<const EvalFrame> frames, int class_id, double score_floor) {
    constexpr double kMatchDist = 2.0;
    auto [cands, total_gt] = class_candidates(frames, class_id, score_floor);
    TpErrors err;
    if (total_gt == 0 || cands.empty()) return err;

    std::vector<std::vector<char>> gt_used(frames.size());
    for (std::size_t f = 0; f < frames.size(); ++f)
        gt_used[f].assign(frames[f].gt.size(), 0);
    for (const Candidate& c : cands) {
        const EvalFrame& frame = frames[static_cast<std::size_t>(c.frame)];
        const Detection& det = frame.detections[static_cast<std::size_t>(c.det)];
        int best = -1;
        double best_dist = kMatchDist;
        for (int g = 0; g < static_cast<int>(frame.gt.size()); ++g) {
            if (frame.gt[static_cast<std::size_t>(g)].class_id != class_id) continue;
            if (gt_used[static_cast<std::size_t>(c.frame)][static_cast<std::size_t>(g)]) continue;
            const double dist = bev_distance(det, frame.gt[static_cast<std::size_t>(g)]);
            if (best == -1 ? dist <= best_dist : dist < best_dist) {
                best = g;
                best_dist = dist;
            }
        }
        if (best < 0) continue;
        gt_used[static_cast<std::size_t>(c.frame)][static_cast<std::size_t>(best)] = 1;
        const GtBox& gt = frame.gt[static_cast<std::size_t>(best)];
        err.translation += best_dist;
        double iou = 1.0;
        for (int a = 0; a < 3; ++a) {
            const double lo = std::min(det.size[static_cast<std::size_t>(a)], gt.size[static_cast<std::size_t>(a)]);
            const double hi = std::max(det.size[static_cast<std::size_t>(a)], gt.size[static_cast<std::size_t>(a)]);
            iou *= hi > 0.0 ? lo / hi : 0.0;
        }
        err.scale += 1.0 - iou;
        double dyaw = std::fmod(std::abs(det.yaw - gt.yaw), 2.0 * kPi);
        if (dyaw > kPi) dyaw = 2.0 * kPi - dyaw;
        err.orientation += dyaw;
        ++err.count;
    }
    if (err.count > 0) {
        err.translation /= err.count;
        err.scale /= err.count;
        err.orientation /= err.count;
    }
    return err;
}

double nds_lite(double mean_ap, double mate, double mase, double maoe) {
    const double norms[3] = {0.5, 0.5, kPi / 2.0};
    const double errs[3] = {mate, mase, maoe};
    double score = 3.0 * mean_ap;
    for (int i = 0; i < 3; ++i) score += 1.0 - std::min(1.0, errs[i] / norms[i]);
    return score / 6.0;
}

MetricsReport evaluate_frames(std::span<const EvalFrame> frames, const EvalParams& params) {
    MetricsReport report;
    double ap_sum = 0.0;
    int ap_count = 0;
    double te = 0.0, se = 0.0, oe = 0.0;
    int err_classes = 0;
    for (int cls = 0; cls < params.classes; ++cls) {
        bool class_has_gt = false;
        for (double d : params.thresholds) {
            const double ap = ap_at_threshold(frames, cls, d, params.score_floor);
            if (ap < 0.0) continue;
            class_has_gt = true;
            report.ap[cls][d] = ap;
            ap_sum += ap;
            ++ap_count;
        }
        if (!class_has_gt) continue;
        const TpErrors err = tp_errors(frames, cls, params.score_floor);
        ++err_classes;
        if (err.count > 0) {
            te += err.translation;
            se += err.scale;
            oe += err.orientation;
        } else {
            // no true positives: saturate every error term
            te += 0.5;
            se += 0.5;
            oe += kPi / 2.0;
        }
    }
    report.mean_ap = ap_count > 0 ? ap_sum / ap_count : 0.0;
    if (err_classes > 0) {
        report.mate = te / err_classes;
        report.mase = se / err_classes;
        report.maoe = oe / err_classes;
    } else {
        report.mate = 0.5;
        report.mase = 0.5;
        report.maoe = kPi / 2.0;
    }
    report.nds_lite = nds_lite(report.mean_ap, report.mate, report.mase, report.maoe);
    return report;
}

std::pair<double, double> perf_ratio(double clean, std::span<const double> adverse) {
    if (!(clean > 0.0)) throw DomainError("perf_ratio: clean performance must be positive");
    if (adverse.empty()) throw DomainError("perf_ratio: no adverse values");
    double sum = 0.0;
    for (double v : adverse) sum += v;
    const double mean = sum / static_cast<double>(adverse.size());
    return {mean, mean / clean};
}

RouteStats route_statistics(std::span<const RouteDecision> decisions) {
    RouteStats stats;
    if (decisions.empty()) return stats;
    int counts[3] = {0, 0, 0};
    for (const RouteDecision& d : decisions) ++counts[static_cast<int>(d.chosen)];
    const double total = static_cast<double>(decisions.size());
    stats.pct_lidar = 100.0 * counts[0] / total;
    stats.pct_camera = 100.0 * counts[1] / total;
    stats.pct_fused = 100.0 * counts[2] / total;
    return stats;
}

}  // namespace mome
