#pragma once

#include <array>
#include <span>
#include <vector>

#include "mome/decoder.hpp"
#include "mome/features.hpp"
#include "mome/geometry.hpp"

namespace mome {

/// Per-query modal selection probabilities, ordered [p_l, p_c, p_lc],
/// and the argmax expert with ties broken toward lc, then l, then c.
struct RouteDecision {
    std::array<double, 3> p{};
    Modality chosen = Modality::Fused;
};

struct Partition {
    std::vector<int> lidar, camera, fused;
    const std::vector<int>& group(Modality m) const {
        switch (m) {
            case Modality::Lidar: return lidar;
            case Modality::Camera: return camera;
            default: return fused;
        }
    }
    std::size_t total() const { return lidar.size() + camera.size() + fused.size(); }
};

struct RouterWeights {
    AttnWeights attn;
    Tensor ln_g, ln_b;
    Tensor cls_w, cls_b;  // D -> 3
};

void init_router_params(ParamStore& params, const ModelConfig& mc, Rng& rng);
RouterWeights bind_router(Binding& binding, ParamStore& params, int heads);

struct RouteOutputs {
    Tensor logits;  // [N x 3], column order (l, c, lc)
    Tensor probs;   // softmax rows
};

/// Single masked cross-attention layer over the flattened features followed
/// by a 3-way linear classifier and softmax. A null mask attends globally.
RouteOutputs aqr_forward(const Tensor& query_embed, const Tensor& query_pe, const Tensor& feats,
                         const Tensor& feat_pe, const LocalAttentionMask* mask,
                         const RouterWeights& w);

std::vector<RouteDecision> route_decisions(const RouteOutputs& out);
Modality argmax_modality(const std::array<double, 3>& p);

/// Disjoint, exhaustive split of query indices 0..N-1 by chosen expert.
Partition make_partition(std::span<const RouteDecision> decisions);

}  // namespace mome
