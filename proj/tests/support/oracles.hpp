#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "mome/decoder.hpp"
#include "mome/geometry.hpp"
#include "mome/metrics.hpp"
#include "mome/scene.hpp"

// Independent reference implementations used by unit tests and the
// acceptance suite. These deliberately take different code paths from the
// library: flat-index decomposition instead of coordinate loops, dense
// additive masking instead of -inf skipping, exhaustive search instead of
// augmenting paths.

namespace mome::testsupport {

// Membership test for one (query, flattened position) pair.
inline bool mask_should_be_open(const ProjectedQuery& q, int position, int bev_cells, int views,
                                int cam_h, int cam_w, int l_bev, int l_cam) {
    const int bev_len = bev_cells * bev_cells;
    if (position < bev_len) {
        if (!q.bev.in_grid) return false;
        const int row = position / bev_cells;
        const int col = position % bev_cells;
        return std::abs(row - q.bev.row) <= l_bev / 2 && std::abs(col - q.bev.col) <= l_bev / 2;
    }
    if (!q.cam_valid) return false;
    const int rel = position - bev_len;
    const int view = rel / (cam_h * cam_w);
    const int cell = rel % (cam_h * cam_w);
    const int row = cell / cam_w;
    const int col = cell % cam_w;
    (void)views;
    return view == q.cam_view && std::abs(row - q.cam_row) <= l_cam / 2 &&
           std::abs(col - q.cam_col) <= l_cam / 2;
}

// Dense multi-head attention with -1e30 additive masking; rows whose keys
// are all masked yield zeros.
inline std::vector<double> dense_masked_attention(const std::vector<double>& q,
                                                  const std::vector<double>& k,
                                                  const std::vector<double>& v, int n, int m,
                                                  int d, int heads,
                                                  const std::vector<std::uint8_t>* blocked) {
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> out(static_cast<std::size_t>(n) * d, 0.0);
    for (int h = 0; h < heads; ++h) {
        const int off = h * dh;
        for (int i = 0; i < n; ++i) {
            std::vector<double> logits(static_cast<std::size_t>(m));
            bool any_open = false;
            for (int j = 0; j < m; ++j) {
                double s = 0.0;
                for (int c = 0; c < dh; ++c)
                    s += q[static_cast<std::size_t>(i) * d + off + c] *
                         k[static_cast<std::size_t>(j) * d + off + c];
                s *= scale;
                if (blocked != nullptr && (*blocked)[static_cast<std::size_t>(i) * m + j]) {
                    s += -1e30;
                } else {
                    any_open = true;
                }
                logits[static_cast<std::size_t>(j)] = s;
            }
            if (!any_open) continue;
            const double mx = *std::max_element(logits.begin(), logits.end());
            double denom = 0.0;
            for (double& l : logits) {
                l = std::exp(l - mx);
                denom += l;
            }
            for (int j = 0; j < m; ++j) {
                const double p = logits[static_cast<std::size_t>(j)] / denom;
                for (int c = 0; c < dh; ++c)
                    out[static_cast<std::size_t>(i) * d + off + c] +=
                        p * v[static_cast<std::size_t>(j) * d + off + c];
            }
        }
    }
    return out;
}

// Exhaustive minimum-cost injection of rows into columns, feasible for
// rows <= 7 and columns <= 10 or so.
inline double exhaustive_assignment_cost(const std::vector<double>& cost, int rows, int cols) {
    std::vector<int> cols_free(static_cast<std::size_t>(cols));
    for (int j = 0; j < cols; ++j) cols_free[static_cast<std::size_t>(j)] = j;
    double best = std::numeric_limits<double>::infinity();
    std::vector<char> used(static_cast<std::size_t>(cols), 0);
    // no pruning: costs may be negative, so partial sums say nothing
    std::function<void(int, double)> rec = [&](int row, double acc) {
        if (row == rows) {
            best = std::min(best, acc);
            return;
        }
        for (int j = 0; j < cols; ++j) {
            if (used[static_cast<std::size_t>(j)]) continue;
            used[static_cast<std::size_t>(j)] = 1;
            rec(row + 1, acc + cost[static_cast<std::size_t>(row) * cols + j]);
            used[static_cast<std::size_t>(j)] = 0;
        }
    };
    rec(0, 0.0);
    return best;
}

// Independent 101-point interpolated AP: walks every prefix of the
// score-sorted candidate list and takes the max precision at recall >= r.
// Matching is re-derived here with plain loops.
inline double reference_ap(const std::vector<EvalFrame>& frames, int class_id, double threshold,
                           double score_floor) {
    struct Cand {
        double score;
        int frame;
        int det;
    };
    std::vector<Cand> cands;
    int total_gt = 0;
    for (int f = 0; f < static_cast<int>(frames.size()); ++f) {
        for (const GtBox& g : frames[static_cast<std::size_t>(f)].gt)
            if (g.class_id == class_id) ++total_gt;
        const auto& dets = frames[static_cast<std::size_t>(f)].detections;
        for (int d = 0; d < static_cast<int>(dets.size()); ++d) {
            const auto& det = dets[static_cast<std::size_t>(d)];
            if (static_cast<int>(det.scores.size()) > class_id &&
                det.scores[static_cast<std::size_t>(class_id)] >= score_floor)
                cands.push_back({det.scores[static_cast<std::size_t>(class_id)], f, d});
        }
    }
    if (total_gt == 0) return -1.0;
    if (cands.empty()) return 0.0;
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.score > b.score; });

    std::vector<std::vector<char>> taken(frames.size());
    for (std::size_t f = 0; f < frames.size(); ++f) taken[f].assign(frames[f].gt.size(), 0);
    std::vector<int> tp_prefix;
    int tp = 0;
    for (const Cand& c : cands) {
        const auto& frame = frames[static_cast<std::size_t>(c.frame)];
        const auto& det = frame.detections[static_cast<std::size_t>(c.det)];
        int pick = -1;
        double pick_dist = std::numeric_limits<double>::infinity();
        for (int g = 0; g < static_cast<int>(frame.gt.size()); ++g) {
            const GtBox& gt = frame.gt[static_cast<std::size_t>(g)];
            if (gt.class_id != class_id || taken[static_cast<std::size_t>(c.frame)][static_cast<std::size_t>(g)])
                continue;
            const double dist =
                std::hypot(det.center[0] - gt.center[0], det.center[1] - gt.center[1]);
            if (dist <= threshold && dist < pick_dist) {
                pick = g;
                pick_dist = dist;
            }
        }
        if (pick >= 0) {
            taken[static_cast<std::size_t>(c.frame)][static_cast<std::size_t>(pick)] = 1;
            ++tp;
        }
        tp_prefix.push_back(tp);
    }
    double ap = 0.0;
    for (int k = 0; k <= 100; ++k) {
        const double want = k / 100.0;
        double best = 0.0;
        for (std::size_t i = 0; i < tp_prefix.size(); ++i) {
            const double recall = static_cast<double>(tp_prefix[i]) / total_gt;
            if (recall >= want)
                best = std::max(best, static_cast<double>(tp_prefix[i]) / static_cast<double>(i + 1));
        }
        ap += best;
    }
    return ap / 101.0;
}

}  // namespace mome::testsupport
