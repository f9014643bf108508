#include "mome/router.hpp"

#include <cmath>

namespace mome {

void init_router_params(ParamStore& params, const ModelConfig& mc, Rng& rng) {
    init_attn_params(params, "router.attn", mc.dim, rng);
    params.add("router.ln.g", {mc.dim}, std::vector<double>(static_cast<std::size_t>(mc.dim), 1.0));
    params.add("router.ln.b", {mc.dim}, std::vector<double>(static_cast<std::size_t>(mc.dim), 0.0));
    const double a = std::sqrt(6.0 / (mc.dim + 3));
    std::vector<double> w(static_cast<std::size_t>(mc.dim) * 3);
    for (double& v : w) v = rng.uniform(-a, a);
    params.add("router.cls.w", {mc.dim, 3}, std::move(w));
    params.add("router.cls.b", {3}, std::vector<double>(3, 0.0));
}

RouterWeights bind_router(Binding& binding, ParamStore& params, int heads) {
    RouterWeights w;
    w.attn = bind_attn(binding, params, "router.attn", heads);
    w.ln_g = binding.use(params.at("router.ln.g"));
    w.ln_b = binding.use(params.at("router.ln.b"));
    w.cls_w = binding.use(params.at("router.cls.w"));
    w.cls_b = binding.use(params.at("router.cls.b"));
    return w;
}

RouteOutputs aqr_forward(const Tensor& query_embed, const Tensor& query_pe, const Tensor& feats,
                         const Tensor& feat_pe, const LocalAttentionMask* mask,
                         const RouterWeights& w) {
    if (mask != nullptr &&
        (mask->queries() != query_embed.rows() || mask->positions() != feats.rows()))
        throw DimensionError("aqr_forward: mask does not match queries/features");
    Tensor q = add(query_embed, query_pe);
    Tensor k = add(feats, feat_pe);
    AttnMask view;
    const AttnMask* attn_mask = nullptr;
    if (mask != nullptr) {
        view = mask->view();
        attn_mask = &view;
    }
    Tensor ctx = masked_mha(q, k, feats, w.attn, attn_mask);
    // residual keeps fully blocked queries a pure function of their embedding
    Tensor h = layernorm(add(query_embed, ctx), w.ln_g, w.ln_b);
    RouteOutputs out;
    out.logits = add_rowvec(matmul(h, w.cls_w), w.cls_b);
    out.probs = softmax(out.logits, 1);
    return out;
}

Modality argmax_modality(const std::array<double, 3>& p) {
    // exact ties break toward lc, then l, then c
    Modality best = Modality::Fused;
    double bestv = p[2];
    if (p[0] > bestv) {
        best = Modality::Lidar;
        bestv = p[0];
    }
    if (p[1] > bestv) best = Modality::Camera;
    return best;
}

std::vector<RouteDecision> route_decisions(const RouteOutputs& out) {
    const int n = out.probs.rows();
    auto pv = out.probs.values();
    std::vector<RouteDecision> decisions(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        RouteDecision& d = decisions[static_cast<std::size_t>(i)];
        d.p = {pv[static_cast<std::size_t>(i) * 3 + 0], pv[static_cast<std::size_t>(i) * 3 + 1],
               pv[static_cast<std::size_t>(i) * 3 + 2]};
        d.chosen = argmax_modality(d.p);
    }
    return decisions;
}

Partition make_partition(std::span<const RouteDecision> decisions) {
    Partition part;
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        switch (decisions[i].chosen) {
            case Modality::Lidar: part.lidar.push_back(static_cast<int>(i)); break;
            case Modality::Camera: part.camera.push_back(static_cast<int>(i)); break;
            case Modality::Fused: part.fused.push_back(static_cast<int>(i)); break;
        }
    }
    return part;
}

}  // namespace mome
