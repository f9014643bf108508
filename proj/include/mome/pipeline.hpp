#pragma once

#include <cstdint>
#include <vector>

#include "mome/model.hpp"
#include "mome/scene.hpp"

namespace mome {

/// Cross-attention work accounting in key-value pairs attended, the unit
/// the latency comparison is stated in. Expert cost is queries x slice
/// length, independent of layer depth.
struct DecodeCost {
    std::uint64_t kv_pairs = 0;         // sum over experts of n_mod * |slice|
    std::uint64_t router_kv_pairs = 0;  // unblocked mask entries visited by the router
    int n_lidar = 0, n_camera = 0, n_fused = 0;
};

std::uint64_t expert_cost(Modality mod, int n_queries, const FeatureLayout& layout);
std::uint64_t single_decoder_cost(int n_queries, const FeatureLayout& layout);
std::uint64_t parallel_baseline_cost(int n_queries, const FeatureLayout& layout);
std::uint64_t routed_cost(const Partition& part, const FeatureLayout& layout);

struct DecodeResult {
    std::vector<Detection> detections;     // [N], detection i derives from query i
    std::vector<RouteDecision> decisions;  // [N]
    Partition partition;
    DecodeCost cost;
};

/// Full routed forward pass: build the Local Attention Mask, route, split
/// the queries, run each expert on its group, merge by stable query index,
/// decode boxes. Inference only (no gradients).
DecodeResult med_decode(const Model& model, const Scene& scene);

/// Ablation baseline: every query through every expert, keep the detection
/// with the highest class score. Costs N * (|F_l| + |F_c| + |F_lc|).
DecodeResult baseline_confidence_select(const Model& model, const Scene& scene);

/// Baseline over an explicit expert set (exposed for degenerate-case tests).
DecodeResult baseline_confidence_select_over(const Model& model, const Scene& scene,
                                             std::span<const Modality> experts);

/// Single-decoder reference: all queries through one modality.
DecodeResult single_decode(const Model& model, const Scene& scene, Modality mod);

/// The mask the router would use for this scene's query projections.
LocalAttentionMask query_attention_mask(const Model& model, const Scene& scene);

}  // namespace mome
