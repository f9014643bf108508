#include "mome/pipeline.hpp"

#include <numeric>

namespace mome {

std::uint64_t expert_cost(Modality mod, int n_queries, const FeatureLayout& layout) {
    const std::uint64_t slice = mod == Modality::Lidar    ? layout.bev_len()
                                : mod == Modality::Camera ? layout.cam_len()
                                                          : layout.total();
    return static_cast<std::uint64_t>(n_queries) * slice;
}

std::uint64_t single_decoder_cost(int n_queries, const FeatureLayout& layout) {
    return expert_cost(Modality::Fused, n_queries, layout);
}

std::uint64_t parallel_baseline_cost(int n_queries, const FeatureLayout& layout) {
    return expert_cost(Modality::Lidar, n_queries, layout) +
           expert_cost(Modality::Camera, n_queries, layout) +
           expert_cost(Modality::Fused, n_queries, layout);
}

std::uint64_t routed_cost(const Partition& part, const FeatureLayout& layout) {
    return expert_cost(Modality::Lidar, static_cast<int>(part.lidar.size()), layout) +
           expert_cost(Modality::Camera, static_cast<int>(part.camera.size()), layout) +
           expert_cost(Modality::Fused, static_cast<int>(part.fused.size()), layout);
}

LocalAttentionMask query_attention_mask(const Model& model, const Scene& scene) {
    const BevGrid grid = model.cfg.geometry.grid();
    std::vector<ProjectedQuery> projected;
    projected.reserve(model.query_refs.size());
    for (const auto& ref : model.query_refs) {
        const auto xyz = denormalize_reference(ref, model.cfg.geometry.range);
        projected.push_back(project_query(xyz, grid, scene.rig));
    }
    return build_local_attention_mask(projected, grid, scene.rig, model.cfg.geometry.window_bev,
                                      model.cfg.geometry.window_cam);
}

namespace {

struct ForwardContext {
    Tape tape{false};
    Binding binding{tape};
    FeatureBundle bundle;
    Tensor feat_pe;
    Tensor query_embed;
    Tensor query_pe;
};

void prepare(ForwardContext& ctx, const Model& model, const Scene& scene) {
    auto& params = const_cast<ParamStore&>(model.params);
    ctx.bundle = encode_features(ctx.tape, ctx.binding, params, scene, model.cfg);
    const FeatureLayout layout = model.layout();
    ctx.feat_pe = ctx.tape.leaf({layout.total(), layout.dim}, model.feat_pe);
    ctx.query_embed = ctx.binding.use(params.at("query.embed"));
    ctx.query_pe = ctx.tape.leaf({model.queries(), layout.dim}, model.query_pe);
}

std::vector<Detection> decode_group(ForwardContext& ctx, const Model& model,
                                    const std::vector<int>& group, Modality mod,
                                    std::span<const LayerWeights> layers,
                                    const HeadWeights& heads) {
    Tensor q = gather_rows(ctx.query_embed, group);
    Tensor qpe = gather_rows(ctx.query_pe, group);
    Tensor decoded = expert_decode(q, qpe, mod, ctx.bundle, ctx.feat_pe, layers);
    HeadOutputs ho = predict_heads(decoded, heads);
    std::vector<std::array<double, 3>> refs;
    refs.reserve(group.size());
    for (int i : group) refs.push_back(model.query_refs[static_cast<std::size_t>(i)]);
    return decode_detections(ho, refs, model.cfg.geometry.range, group);
}

}  // namespace

DecodeResult med_decode(const Model& model, const Scene& scene) {
    ForwardContext ctx;
    prepare(ctx, model, scene);
    auto& params = const_cast<ParamStore&>(model.params);

    DecodeResult result;
    const bool use_lam = model.cfg.model.router_mask == "lam";
    LocalAttentionMask mask = use_lam ? query_attention_mask(model, scene)
                                      : LocalAttentionMask(0, 0);
    RouterWeights rw = bind_router(ctx.binding, params, model.cfg.model.heads);
    RouteOutputs routed = aqr_forward(ctx.query_embed, ctx.query_pe, ctx.bundle.flat, ctx.feat_pe,
                                      use_lam ? &mask : nullptr, rw);
    result.decisions = route_decisions(routed);
    result.partition = make_partition(result.decisions);
    result.cost.router_kv_pairs = use_lam
                                      ? mask.unblocked_total()
                                      : static_cast<std::uint64_t>(model.queries()) *
                                            static_cast<std::uint64_t>(model.layout().total());

    auto layers = bind_decoder(ctx.binding, params, model.cfg.model);
    HeadWeights heads = bind_heads(ctx.binding, params);

    result.detections.resize(static_cast<std::size_t>(model.queries()));
    const FeatureLayout layout = model.layout();
    for (Modality mod : {Modality::Lidar, Modality::Camera, Modality::Fused}) {
        const std::vector<int>& group = result.partition.group(mod);
        if (group.empty()) continue;
        std::vector<Detection> dets = decode_group(ctx, model, group, mod, layers, heads);
        for (Detection& d : dets)
            result.detections[static_cast<std::size_t>(d.query_index)] = std::move(d);
        result.cost.kv_pairs += expert_cost(mod, static_cast<int>(group.size()), layout);
    }
    result.cost.n_lidar = static_cast<int>(result.partition.lidar.size());
    result.cost.n_camera = static_cast<int>(result.partition.camera.size());
    result.cost.n_fused = static_cast<int>(result.partition.fused.size());
    return result;
}

DecodeResult baseline_confidence_select_over(const Model& model, const Scene& scene,
                                             std::span<const Modality> experts) {
    ForwardContext ctx;
    prepare(ctx, model, scene);
    auto& params = const_cast<ParamStore&>(model.params);
    auto layers = bind_decoder(ctx.binding, params, model.cfg.model);
    HeadWeights heads = bind_heads(ctx.binding, params);

    const int n = model.queries();
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);

    DecodeResult result;
    result.detections.resize(static_cast<std::size_t>(n));
    const FeatureLayout layout = model.layout();
    bool first = true;
    for (Modality mod : experts) {
        std::vector<Detection> dets = decode_group(ctx, model, all, mod, layers, heads);
        result.cost.kv_pairs += expert_cost(mod, n, layout);
        for (int i = 0; i < n; ++i) {
            Detection& cand = dets[static_cast<std::size_t>(i)];
            Detection& cur = result.detections[static_cast<std::size_t>(i)];
            if (first || cand.max_score() > cur.max_score()) cur = std::move(cand);
        }
        first = false;
    }
    // the baseline routes nothing; report the degenerate all-kept decision
    result.decisions.assign(static_cast<std::size_t>(n), RouteDecision{{0.0, 0.0, 1.0}, Modality::Fused});
    return result;
}

DecodeResult baseline_confidence_select(const Model& model, const Scene& scene) {
    const Modality experts[] = {Modality::Lidar, Modality::Camera, Modality::Fused};
    return baseline_confidence_select_over(model, scene, experts);
}

DecodeResult single_decode(const Model& model, const Scene& scene, Modality mod) {
    const Modality experts[] = {mod};
    DecodeResult result = baseline_confidence_select_over(model, scene, experts);
    return result;
}

}  // namespace mome
