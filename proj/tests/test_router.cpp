#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mome/pipeline.hpp"
#include "mome/router.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace mome;
using namespace mome::testsupport;

namespace {

ExperimentConfig router_cfg() {
    ExperimentConfig cfg;
    apply_override(cfg, "geometry.bev_cells=6");
    apply_override(cfg, "geometry.cam_feat_h=2");
    apply_override(cfg, "geometry.cam_feat_w=5");
    apply_override(cfg, "geometry.cam_views=2");
    apply_override(cfg, "geometry.window_bev=3");
    apply_override(cfg, "geometry.window_cam=3");
    apply_override(cfg, "model.dim=8");
    apply_override(cfg, "model.heads=2");
    apply_override(cfg, "model.queries=6");
    apply_override(cfg, "model.layers=1");
    apply_override(cfg, "model.classes=2");
    apply_override(cfg, "scene.bg_azimuth_steps=16");
    cfg.validate();
    return cfg;
}

}  // namespace

TEST_CASE("zero router weights give the uniform distribution") {
    ExperimentConfig cfg = router_cfg();
    Rng rng(1);
    ParamStore params;
    init_router_params(params, cfg.model, rng);
    for (auto& p : params.all())
        for (auto& v : p.value) v = 0.0;

    const int n = 5, m = 7, d = cfg.model.dim;
    Tape tape(false);
    Binding binding(tape);
    RouterWeights w = bind_router(binding, params, cfg.model.heads);
    Tensor emb = tape.leaf({n, d}, random_vec(static_cast<std::size_t>(n) * d, rng));
    Tensor qpe = tape.leaf({n, d}, random_vec(static_cast<std::size_t>(n) * d, rng));
    Tensor feats = tape.leaf({m, d}, random_vec(static_cast<std::size_t>(m) * d, rng));
    Tensor fpe = tape.leaf({m, d}, random_vec(static_cast<std::size_t>(m) * d, rng));
    RouteOutputs out = aqr_forward(emb, qpe, feats, fpe, nullptr, w);
    for (double p : out.probs.values()) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("fully blocked queries are a pure function of the embedding") {
    ExperimentConfig cfg = router_cfg();
    Rng rng(2);
    ParamStore params;
    init_router_params(params, cfg.model, rng);

    const int n = 3, m = 8, d = cfg.model.dim;
    auto emb = random_vec(static_cast<std::size_t>(n) * d, rng);
    auto qpe = random_vec(static_cast<std::size_t>(n) * d, rng);
    LocalAttentionMask mask(n, m);  // constructed fully blocked

    auto probs_with_features = [&](const std::vector<double>& fv) {
        Tape tape(false);
        Binding binding(tape);
        RouterWeights w = bind_router(binding, params, cfg.model.heads);
        Tensor e = tape.leaf({n, d}, emb);
        Tensor qp = tape.leaf({n, d}, qpe);
        Tensor f = tape.leaf({m, d}, fv);
        Tensor fp = tape.leaf({m, d}, std::vector<double>(static_cast<std::size_t>(m) * d, 0.0));
        RouteOutputs out = aqr_forward(e, qp, f, fp, &mask, w);
        return std::vector<double>(out.probs.values().begin(), out.probs.values().end());
    };
    auto p1 = probs_with_features(random_vec(static_cast<std::size_t>(m) * d, rng));
    auto p2 = probs_with_features(random_vec(static_cast<std::size_t>(m) * d, rng, 3.0, 9.0));
    CHECK(p1 == p2);
}

TEST_CASE("router probabilities match an independent dense recomputation") {
    ExperimentConfig cfg = router_cfg();
    Rng rng(3);
    ParamStore params;
    init_router_params(params, cfg.model, rng);
    const int n = 4, m = 9, d = cfg.model.dim, heads = cfg.model.heads;

    auto emb = random_vec(static_cast<std::size_t>(n) * d, rng);
    auto qpe = random_vec(static_cast<std::size_t>(n) * d, rng);
    auto fv = random_vec(static_cast<std::size_t>(m) * d, rng);
    auto fpe = random_vec(static_cast<std::size_t>(m) * d, rng);
    LocalAttentionMask mask(n, m);
    Rng mrng(4);
    for (int q = 0; q < n; ++q)
        for (int p = 0; p < m; ++p)
            if (mrng.uniform() < 0.5) mask.unblock(q, p);

    Tape tape(false);
    Binding binding(tape);
    RouterWeights w = bind_router(binding, params, heads);
    RouteOutputs out = aqr_forward(tape.leaf({n, d}, emb), tape.leaf({n, d}, qpe),
                                   tape.leaf({m, d}, fv), tape.leaf({m, d}, fpe), &mask, w);

    // independent path: explicit projections, -1e30 additive mask, manual
    // layernorm and softmax
    auto matvec = [&](const std::vector<double>& x, int rows, const std::string& wn,
                      const std::string& bn, int out_cols) {
        const auto& W = params.at(wn).value;
        const auto& B = params.at(bn).value;
        std::vector<double> y(static_cast<std::size_t>(rows) * out_cols);
        for (int i = 0; i < rows; ++i)
            for (int c = 0; c < out_cols; ++c) {
                double s = B[static_cast<std::size_t>(c)];
                for (int j = 0; j < d; ++j)
                    s += x[static_cast<std::size_t>(i) * d + j] *
                         W[static_cast<std::size_t>(j) * out_cols + c];
                y[static_cast<std::size_t>(i) * out_cols + c] = s;
            }
        return y;
    };
    std::vector<double> q_in(static_cast<std::size_t>(n) * d), k_in(static_cast<std::size_t>(m) * d);
    for (std::size_t i = 0; i < q_in.size(); ++i) q_in[i] = emb[i] + qpe[i];
    for (std::size_t i = 0; i < k_in.size(); ++i) k_in[i] = fv[i] + fpe[i];
    std::vector<std::uint8_t> blocked(static_cast<std::size_t>(n) * m);
    for (int q = 0; q < n; ++q)
        for (int p = 0; p < m; ++p) blocked[static_cast<std::size_t>(q) * m + p] = mask.blocked(q, p);
    auto ctx = dense_masked_attention(matvec(q_in, n, "router.attn.wq", "router.attn.bq", d),
                                      matvec(k_in, m, "router.attn.wk", "router.attn.bk", d),
                                      matvec(fv, m, "router.attn.wv", "router.attn.bv", d), n, m, d,
                                      heads, &blocked);
    auto attn_out = matvec(ctx, n, "router.attn.wo", "router.attn.bo", d);
    for (int i = 0; i < n; ++i) {
        bool fully = true;
        for (int j = 0; j < m; ++j) fully = fully && blocked[static_cast<std::size_t>(i) * m + j];
        if (fully)
            for (int c = 0; c < d; ++c) attn_out[static_cast<std::size_t>(i) * d + c] = 0.0;
    }
    const auto& lng = params.at("router.ln.g").value;
    const auto& lnb = params.at("router.ln.b").value;
    std::vector<double> h(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
        double mu = 0.0, var = 0.0;
        std::vector<double> row(static_cast<std::size_t>(d));
        for (int c = 0; c < d; ++c) {
            row[static_cast<std::size_t>(c)] = emb[static_cast<std::size_t>(i) * d + c] +
                                               attn_out[static_cast<std::size_t>(i) * d + c];
            mu += row[static_cast<std::size_t>(c)];
        }
        mu /= d;
        for (int c = 0; c < d; ++c)
            var += (row[static_cast<std::size_t>(c)] - mu) * (row[static_cast<std::size_t>(c)] - mu);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (int c = 0; c < d; ++c)
            h[static_cast<std::size_t>(i) * d + c] =
                (row[static_cast<std::size_t>(c)] - mu) * inv * lng[static_cast<std::size_t>(c)] +
                lnb[static_cast<std::size_t>(c)];
    }
    auto logits = matvec(h, n, "router.cls.w", "router.cls.b", 3);
    for (int i = 0; i < n; ++i) {
        double mx = std::max({logits[static_cast<std::size_t>(i) * 3],
                              logits[static_cast<std::size_t>(i) * 3 + 1],
                              logits[static_cast<std::size_t>(i) * 3 + 2]});
        double denom = 0.0;
        double e[3];
        for (int j = 0; j < 3; ++j) {
            e[j] = std::exp(logits[static_cast<std::size_t>(i) * 3 + j] - mx);
            denom += e[j];
        }
        for (int j = 0; j < 3; ++j)
            CHECK(std::abs(out.probs.values()[static_cast<std::size_t>(i) * 3 + j] - e[j] / denom) <
                  1e-10);
    }
}

TEST_CASE("partition argmax and tie rules") {
    CHECK(argmax_modality({0.1, 0.2, 0.7}) == Modality::Fused);
    CHECK(argmax_modality({0.7, 0.2, 0.1}) == Modality::Lidar);
    CHECK(argmax_modality({0.2, 0.7, 0.1}) == Modality::Camera);
    // exact ties break toward lc, then l, then c
    CHECK(argmax_modality({1.0 / 3, 1.0 / 3, 1.0 / 3}) == Modality::Fused);
    CHECK(argmax_modality({0.4, 0.4, 0.2}) == Modality::Lidar);
    CHECK(argmax_modality({0.45, 0.45, 0.1}) == Modality::Lidar);

    std::vector<RouteDecision> ds(4);
    ds[0].chosen = Modality::Fused;
    ds[1].chosen = Modality::Lidar;
    ds[2].chosen = Modality::Camera;
    ds[3].chosen = Modality::Fused;
    Partition part = make_partition(ds);
    CHECK(part.fused == std::vector<int>{0, 3});
    CHECK(part.lidar == std::vector<int>{1});
    CHECK(part.camera == std::vector<int>{2});
    CHECK(part.total() == 4);
}

TEST_CASE("partition is invariant under monotone logit transforms") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        double logits[3] = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
        auto softmax3 = [](const double* l) {
            const double mx = std::max({l[0], l[1], l[2]});
            double e[3], denom = 0.0;
            for (int j = 0; j < 3; ++j) {
                e[j] = std::exp(l[j] - mx);
                denom += e[j];
            }
            return std::array<double, 3>{e[0] / denom, e[1] / denom, e[2] / denom};
        };
        double scaled[3];
        const double a = rng.uniform(0.1, 4.0);
        const double b = rng.uniform(-2.0, 2.0);
        for (int j = 0; j < 3; ++j) scaled[j] = a * logits[j] + b;
        CHECK(argmax_modality(softmax3(logits)) == argmax_modality(softmax3(scaled)));
    }
}

TEST_CASE("partition covers every query exactly once for random probabilities") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = rng.uniform_int(1, 40);
        std::vector<RouteDecision> ds(static_cast<std::size_t>(n));
        for (auto& d : ds) {
            double p[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
            const double s = p[0] + p[1] + p[2];
            d.p = {p[0] / s, p[1] / s, p[2] / s};
            d.chosen = argmax_modality(d.p);
        }
        Partition part = make_partition(ds);
        std::vector<int> all;
        all.insert(all.end(), part.lidar.begin(), part.lidar.end());
        all.insert(all.end(), part.camera.begin(), part.camera.end());
        all.insert(all.end(), part.fused.begin(), part.fused.end());
        std::sort(all.begin(), all.end());
        std::vector<int> want(static_cast<std::size_t>(n));
        std::iota(want.begin(), want.end(), 0);
        CHECK(all == want);
    }
}

TEST_CASE("med_decode with an all-fused partition equals the single decoder") {
    ExperimentConfig cfg = router_cfg();
    Model model = build_model(cfg);
    // bias the router classifier hard toward lc
    model.params.at("router.cls.b").value = {0.0, 0.0, 50.0};
    Scene scene = generate_scene(cfg, 0, 314);

    DecodeResult med = med_decode(model, scene);
    CHECK(med.partition.fused.size() == static_cast<std::size_t>(model.queries()));
    DecodeResult single = single_decode(model, scene, Modality::Fused);
    REQUIRE(med.detections.size() == single.detections.size());
    for (std::size_t i = 0; i < med.detections.size(); ++i) {
        CHECK(med.detections[i].center == single.detections[i].center);
        CHECK(med.detections[i].scores == single.detections[i].scores);
        CHECK(med.detections[i].raw == single.detections[i].raw);
        CHECK(med.detections[i].query_index == static_cast<int>(i));
    }
    // cost identity for the degenerate partition
    const FeatureLayout layout = model.layout();
    CHECK(med.cost.kv_pairs == single_decoder_cost(model.queries(), layout));
}

TEST_CASE("decode cost counters satisfy the closed forms") {
    ExperimentConfig cfg = router_cfg();
    Model model = build_model(cfg);
    const FeatureLayout layout = model.layout();
    Scene scene = generate_scene(cfg, 1, 217);

    DecodeResult med = med_decode(model, scene);
    const std::uint64_t expect =
        static_cast<std::uint64_t>(med.partition.lidar.size()) * layout.bev_len() +
        static_cast<std::uint64_t>(med.partition.camera.size()) * layout.cam_len() +
        static_cast<std::uint64_t>(med.partition.fused.size()) * layout.total();
    CHECK(med.cost.kv_pairs == expect);
    CHECK(med.cost.kv_pairs == routed_cost(med.partition, layout));
    CHECK(med.cost.kv_pairs <= single_decoder_cost(model.queries(), layout));

    DecodeResult base = baseline_confidence_select(model, scene);
    CHECK(base.cost.kv_pairs == parallel_baseline_cost(model.queries(), layout));
    CHECK(base.cost.kv_pairs ==
          static_cast<std::uint64_t>(model.queries()) *
              (static_cast<std::uint64_t>(layout.bev_len()) + layout.cam_len() + layout.total()));
    CHECK(base.cost.kv_pairs > med.cost.kv_pairs);

    // router visit counter equals the unblocked mask entries
    LocalAttentionMask mask = query_attention_mask(model, scene);
    CHECK(med.cost.router_kv_pairs == mask.unblocked_total());
}

TEST_CASE("baseline over identical experts equals a single decode") {
    ExperimentConfig cfg = router_cfg();
    Model model = build_model(cfg);
    Scene scene = generate_scene(cfg, 2, 218);
    const Modality same[] = {Modality::Fused, Modality::Fused, Modality::Fused};
    DecodeResult tripled = baseline_confidence_select_over(model, scene, same);
    DecodeResult single = single_decode(model, scene, Modality::Fused);
    for (std::size_t i = 0; i < tripled.detections.size(); ++i) {
        CHECK(tripled.detections[i].center == single.detections[i].center);
        CHECK(tripled.detections[i].scores == single.detections[i].scores);
    }
    CHECK(tripled.cost.kv_pairs == 3 * single.cost.kv_pairs);
}

TEST_CASE("confidently wrong expert fools the baseline but not forced routing") {
    // one query, one class, rigged weights: the fused expert sees garbage
    // BEV content and reports a huge confidence at a displaced box; the
    // camera expert sees clean content and stays at the reference point.
    ExperimentConfig cfg;
    apply_override(cfg, "geometry.bev_cells=2");
    apply_override(cfg, "geometry.cam_views=1");
    apply_override(cfg, "geometry.cam_feat_h=1");
    apply_override(cfg, "geometry.cam_feat_w=1");
    apply_override(cfg, "geometry.image_h=100");
    apply_override(cfg, "geometry.image_w=100");
    apply_override(cfg, "model.dim=4");
    apply_override(cfg, "model.heads=1");
    apply_override(cfg, "model.queries=1");
    apply_override(cfg, "model.layers=1");
    apply_override(cfg, "model.classes=1");
    cfg.validate();
    Model model = build_model(cfg);
    for (auto& p : model.params.all())
        if (p.name != "query.ref")
            for (auto& v : p.value) v = 0.0;
    // identity value/output paths in cross-attention; uniform attention
    auto& pwv = model.params.at("dec.l0.cross.wv");
    auto& pwo = model.params.at("dec.l0.cross.wo");
    for (int i = 0; i < 4; ++i) {
        pwv.value[static_cast<std::size_t>(i) * 4 + i] = 1.0;
        pwo.value[static_cast<std::size_t>(i) * 4 + i] = 1.0;
    }
    for (const char* ln : {"dec.l0.ln1.g", "dec.l0.ln2.g", "dec.l0.ln3.g"})
        model.params.at(ln).value = {1, 1, 1, 1};
    model.params.at("router.ln.g").value = {1, 1, 1, 1};
    // class score reads the first channel; box dx reads it too
    model.params.at("head.cls.w").value = {6.0, 0.0, 0.0, 0.0};
    auto& bw1 = model.params.at("head.box.w1");
    for (int i = 0; i < 4; ++i) bw1.value[static_cast<std::size_t>(i) * 4 + i] = 1.0;
    auto& bw2 = model.params.at("head.box.w2");
    std::fill(bw2.value.begin(), bw2.value.end(), 0.0);
    bw2.value[0] = 0.4;  // relu(ch0) -> dx offset

    const FeatureLayout layout = model.layout();
    // camera row small and clean, BEV rows large garbage on channel 0
    std::vector<double> flat(static_cast<std::size_t>(layout.total()) * layout.dim, 0.0);
    for (int r = 0; r < layout.bev_len(); ++r) flat[static_cast<std::size_t>(r) * 4] = 5.0;

    auto decode_modality = [&](Modality mod) {
        Tape tape(false);
        Binding binding(tape);
        FeatureBundle bundle;
        bundle.layout = layout;
        bundle.flat = tape.leaf({layout.total(), layout.dim}, flat);
        Tensor fpe = tape.zeros({layout.total(), layout.dim});
        Tensor q = binding.use(model.params.at("query.embed"));
        Tensor qpe = tape.zeros({1, layout.dim});
        auto layers = bind_decoder(binding, model.params, cfg.model);
        Tensor out = expert_decode(q, qpe, mod, bundle, fpe, layers);
        HeadWeights heads = bind_heads(binding, model.params);
        std::vector<int> idx{0};
        return decode_detections(predict_heads(out, heads), model.query_refs, cfg.geometry.range,
                                 idx)[0];
    };
    Detection cam = decode_modality(Modality::Camera);
    Detection fused = decode_modality(Modality::Fused);
    Detection lidar = decode_modality(Modality::Lidar);

    // the corrupted experts report the higher confidence...
    CHECK(fused.scores[0] > cam.scores[0]);
    CHECK(lidar.scores[0] > cam.scores[0]);
    // ...so max-confidence selection picks the displaced box
    const Detection& picked =
        (fused.scores[0] >= cam.scores[0] && fused.scores[0] >= lidar.scores[0]) ? fused : lidar;
    const auto ref = denormalize_reference(model.query_refs[0], cfg.geometry.range);
    const double err_picked = std::hypot(picked.center[0] - ref[0], picked.center[1] - ref[1]);
    const double err_cam = std::hypot(cam.center[0] - ref[0], cam.center[1] - ref[1]);
    CHECK(err_cam < 1e-9);      // clean expert stays on the reference
    CHECK(err_picked > 10.0);   // confidence-picked box lands far away
}

TEST_CASE("global router mask equals an all-open local mask") {
    ExperimentConfig cfg = router_cfg();
    Rng rng(9);
    ParamStore params;
    init_router_params(params, cfg.model, rng);
    const int n = 3, m = 7, d = cfg.model.dim;
    auto emb = random_vec(static_cast<std::size_t>(n) * d, rng);
    auto qpe = random_vec(static_cast<std::size_t>(n) * d, rng);
    auto fv = random_vec(static_cast<std::size_t>(m) * d, rng);
    auto fpe = random_vec(static_cast<std::size_t>(m) * d, rng);

    auto run = [&](const LocalAttentionMask* mask) {
        Tape tape(false);
        Binding binding(tape);
        RouterWeights w = bind_router(binding, params, cfg.model.heads);
        RouteOutputs out = aqr_forward(tape.leaf({n, d}, emb), tape.leaf({n, d}, qpe),
                                       tape.leaf({m, d}, fv), tape.leaf({m, d}, fpe), mask, w);
        return std::vector<double>(out.probs.values().begin(), out.probs.values().end());
    };
    LocalAttentionMask open(n, m);
    for (int q = 0; q < n; ++q)
        for (int p = 0; p < m; ++p) open.unblock(q, p);
    CHECK(run(nullptr) == run(&open));
}
