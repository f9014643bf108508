#include <doctest.h>

#include <cmath>

#include "mome/training.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace mome;
using namespace mome::testsupport;

namespace {

ExperimentConfig train_cfg() {
    ExperimentConfig cfg;
    apply_override(cfg, "geometry.bev_cells=12");
    apply_override(cfg, "geometry.cam_feat_h=2");
    apply_override(cfg, "geometry.cam_feat_w=5");
    apply_override(cfg, "geometry.cam_views=6");
    apply_override(cfg, "geometry.window_cam=3");
    apply_override(cfg, "model.dim=16");
    apply_override(cfg, "model.heads=2");
    apply_override(cfg, "model.queries=9");
    apply_override(cfg, "model.layers=2");
    apply_override(cfg, "model.classes=3");
    apply_override(cfg, "scene.bg_azimuth_steps=24");
    apply_override(cfg, "scene.min_boxes=2");
    apply_override(cfg, "scene.max_boxes=4");
    apply_override(cfg, "train.batch=2");
    cfg.validate();
    return cfg;
}

}  // namespace

TEST_CASE("hungarian solves separable cases") {
    std::vector<double> diag{0, 1, 1, 1, 0, 1, 1, 1, 0};
    auto m = hungarian_match(diag, 3, 3);
    CHECK(m == std::vector<int>{0, 1, 2});

    // unique row minima in distinct columns
    std::vector<double> cost{5, 1, 9, 9, 9, 2, 3, 9, 9, 9, 9, 1};
    auto m2 = hungarian_match(cost, 3, 4);
    CHECK(m2 == std::vector<int>{1, 2, 3});

    CHECK_THROWS_AS((void)hungarian_match(diag, 3, 2), ConfigError);
    CHECK(hungarian_match({}, 0, 5).empty());
    std::vector<double> inf_cost{std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS((void)hungarian_match(inf_cost, 1, 1), DomainError);
}

TEST_CASE("hungarian equals exhaustive search on random rectangles") {
    Rng rng(55);
    for (int trial = 0; trial < 60; ++trial) {
        const int g = rng.uniform_int(1, 6);
        const int n = rng.uniform_int(g, 9);
        std::vector<double> cost(static_cast<std::size_t>(g) * n);
        for (auto& c : cost) c = rng.uniform(-2.0, 5.0);
        auto match = hungarian_match(cost, g, n);
        double got = 0.0;
        std::vector<char> used(static_cast<std::size_t>(n), 0);
        for (int i = 0; i < g; ++i) {
            REQUIRE(match[static_cast<std::size_t>(i)] >= 0);
            CHECK(!used[static_cast<std::size_t>(match[static_cast<std::size_t>(i)])]);
            used[static_cast<std::size_t>(match[static_cast<std::size_t>(i)])] = 1;
            got += cost[static_cast<std::size_t>(i) * n + match[static_cast<std::size_t>(i)]];
        }
        const double best = exhaustive_assignment_cost(cost, g, n);
        CHECK(got == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("focal loss closed forms") {
    CHECK(focal_term(1.0 - 1e-7, 1, 0.25, 2.0) < 1e-18);
    // 0.25 * 0.25 * ln 2
    CHECK(focal_term(0.5, 1, 0.25, 2.0) == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));
    CHECK(focal_term(0.5, 1, 0.25, 2.0) == doctest::Approx(0.043321698784).epsilon(1e-9));
    // clamping keeps the loss finite at the endpoints
    CHECK(std::isfinite(focal_term(0.0, 1, 0.25, 2.0)));
    CHECK(std::isfinite(focal_term(1.0, 0, 0.25, 2.0)));
}

TEST_CASE("focal loss gradient w.r.t. logits matches finite differences") {
    Rng rng(66);
    auto logits = random_vec(6, rng, -2.0, 2.0);
    std::vector<double> targets{1, 0, 0, 1, 0, 1};
    auto res = gradcheck({{{2, 3}, logits}}, [&](Tape&, std::vector<Tensor>& ls) {
        return focal_loss(sigmoid(ls[0]), targets, 0.25, 2.0, 2);
    });
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("l1 box loss normalization") {
    Tape tape;
    std::vector<double> gt{0.1, 0.2, 0.3, 0.0, 0.1, 0.2, 0.0, 1.0};
    Tensor pred = tape.leaf({1, 8}, gt);
    CHECK(l1_box_loss(pred, gt, 1).scalar() == 0.0);

    auto off = gt;
    off[3] += 0.4;  // one coordinate off by delta
    Tensor pred2 = tape.leaf({1, 8}, off);
    CHECK(l1_box_loss(pred2, gt, 1).scalar() == doctest::Approx(0.4 / 8.0));

    Rng rng(67);
    auto pv = random_vec(16, rng);
    auto gv = random_vec(16, rng);
    auto res = gradcheck({{{2, 8}, pv}}, [&](Tape&, std::vector<Tensor>& ls) {
        return l1_box_loss(ls[0], gv, 2);
    });
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("drop sampling is uniform, seeded, and one-sided") {
    Rng rng(1);
    int counts[3] = {0, 0, 0};
    const int trials = 30000;
    for (int i = 0; i < trials; ++i) ++counts[static_cast<int>(sample_drop(rng))];
    for (int k = 0; k < 3; ++k) {
        const double f = static_cast<double>(counts[k]) / trials;
        CHECK(f > 1.0 / 3 - 0.01);
        CHECK(f < 1.0 / 3 + 0.01);
    }
    Rng a(9), b(9);
    for (int i = 0; i < 100; ++i) CHECK(sample_drop(a) == sample_drop(b));

    // labels: exactly one modality is ever dropped
    CHECK(route_label(DropState::LidarDropped) == std::array<double, 3>{0, 1, 0});
    CHECK(route_label(DropState::CameraDropped) == std::array<double, 3>{1, 0, 0});
    CHECK(route_label(DropState::None) == std::array<double, 3>{0, 0, 1});

    ExperimentConfig cfg = train_cfg();
    Scene s = generate_scene(cfg, 0, 5);
    Scene ld = apply_drop(s, DropState::LidarDropped);
    CHECK(ld.points.empty());
    CHECK(ld.dropped_views.empty());
    Scene cd = apply_drop(s, DropState::CameraDropped);
    CHECK(cd.points.size() == s.points.size());
    CHECK(cd.dropped_views.size() == static_cast<std::size_t>(s.rig.views));
}

TEST_CASE("stage-1 step trains everything except the router") {
    ExperimentConfig cfg = train_cfg();
    Model model = build_model(cfg);
    Optimizer opt;
    opt.lr = cfg.train.lr;
    std::vector<Scene> batch{generate_scene(cfg, 0, 100), generate_scene(cfg, 1, 101)};

    Stage1Losses losses = stage1_step(model, batch, opt);
    CHECK(losses.lidar > 0.0);
    CHECK(losses.camera > 0.0);
    CHECK(losses.fused > 0.0);
    CHECK(losses.total() ==
          doctest::Approx(losses.lidar + losses.camera + losses.fused).epsilon(1e-15));

    bool enc_grad = false, dec_grad = false, head_grad = false, embed_grad = false;
    for (const Param& p : model.params.all()) {
        double norm = 0.0;
        for (double g : p.grad) norm += std::abs(g);
        if (p.name.rfind("router.", 0) == 0) {
            CHECK(norm == 0.0);  // the router is not in the stage-1 graph
        }
        if (norm > 0.0) {
            enc_grad = enc_grad || p.name.rfind("enc.", 0) == 0;
            dec_grad = dec_grad || p.name.rfind("dec.", 0) == 0;
            head_grad = head_grad || p.name.rfind("head.", 0) == 0;
            embed_grad = embed_grad || p.name == "query.embed";
        }
    }
    CHECK(enc_grad);
    CHECK(dec_grad);
    CHECK(head_grad);
    CHECK(embed_grad);
}

TEST_CASE("stage-1 on a zero-box scene yields a classification-only loss") {
    ExperimentConfig cfg = train_cfg();
    apply_override(cfg, "scene.min_boxes=0");
    apply_override(cfg, "scene.max_boxes=0");
    Model model = build_model(cfg);
    Optimizer opt;
    std::vector<Scene> batch{generate_scene(cfg, 0, 55)};
    REQUIRE(batch[0].boxes.empty());
    Stage1Losses losses = stage1_step(model, batch, opt);
    CHECK(losses.fused > 0.0);  // focal term against all-negative targets
}

TEST_CASE("stage-1 is deterministic") {
    ExperimentConfig cfg = train_cfg();
    auto run = [&cfg] {
        Model model = build_model(cfg);
        Optimizer opt;
        std::vector<Scene> batch{generate_scene(cfg, 0, 100), generate_scene(cfg, 1, 101)};
        std::vector<double> trace;
        for (int step = 0; step < 3; ++step) {
            Stage1Losses l = stage1_step(model, batch, opt);
            trace.push_back(l.lidar);
            trace.push_back(l.camera);
            trace.push_back(l.fused);
        }
        return trace;
    };
    CHECK(run() == run());
}

TEST_CASE("stage-1 loss descends on a fixed scene set") {
    ExperimentConfig cfg = train_cfg();
    apply_override(cfg, "train.batch=4");
    Model model = build_model(cfg);
    std::vector<Scene> scenes;
    for (int i = 0; i < 8; ++i) scenes.push_back(generate_scene(cfg, i, 900 + i));

    std::vector<double> totals;
    train_stage1(model, scenes, 200, [&](const TrainLogRow& row) { totals.push_back(row.s1.total()); });
    REQUIRE(totals.size() == 200);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 20; ++i) head += totals[static_cast<std::size_t>(i)];
    for (int i = 180; i < 200; ++i) tail += totals[static_cast<std::size_t>(i)];
    CHECK(tail < head * 0.8);
}

TEST_CASE("stage-2 trains the router only and freezes everything else") {
    ExperimentConfig cfg = train_cfg();
    Model model = build_model(cfg);
    std::vector<Scene> scenes;
    for (int i = 0; i < 6; ++i) scenes.push_back(generate_scene(cfg, i, 300 + i));

    const auto frozen_before = model.params.value_bytes("enc.");
    const auto dec_before = model.params.value_bytes("dec.");
    const auto head_before = model.params.value_bytes("head.");
    const auto embed_before = model.params.value_bytes("query.");
    const auto router_before = model.params.value_bytes("router.");

    Optimizer opt;
    opt.lr = 1e-2;
    Rng rng(77);
    Stage2Result first{};
    Stage2Result last{};
    for (int step = 0; step < 30; ++step) {
        Stage2Result r = stage2_step(model, scenes, opt, rng);
        if (step == 0) first = r;
        last = r;
    }
    CHECK(model.params.value_bytes("enc.") == frozen_before);
    CHECK(model.params.value_bytes("dec.") == dec_before);
    CHECK(model.params.value_bytes("head.") == head_before);
    CHECK(model.params.value_bytes("query.") == embed_before);
    CHECK(model.params.value_bytes("router.") != router_before);
    // drop labels are trivially separable here, the router should improve
    CHECK(last.ce_per_query < first.ce_per_query);
    CHECK(last.route_accuracy > first.route_accuracy);
}

TEST_CASE("uniform router scores ln 3 per query") {
    ExperimentConfig cfg = train_cfg();
    Model model = build_model(cfg);
    for (auto& p : model.params.all())
        if (p.name.rfind("router.", 0) == 0)
            for (auto& v : p.value) v = 0.0;
    std::vector<Scene> batch{generate_scene(cfg, 0, 500)};
    Optimizer opt;
    opt.lr = 0.0;  // observe the loss without moving
    Rng rng(3);
    Stage2Result r = stage2_step(model, batch, opt, rng);
    CHECK(r.ce_per_query == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(r.ce_sum == doctest::Approx(model.queries() * std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("a router matching the labels scores near-zero cross entropy") {
    ExperimentConfig cfg = train_cfg();
    Model model = build_model(cfg);
    std::vector<Scene> batch{generate_scene(cfg, 0, 501)};
    Optimizer opt;
    opt.lr = 0.0;
    // find the sampled label for this seed, then pin the router bias to it
    Rng probe(11);
    const DropState drop = sample_drop(probe);
    const auto label = route_label(drop);
    for (auto& p : model.params.all())
        if (p.name.rfind("router.", 0) == 0)
            for (auto& v : p.value) v = 0.0;
    auto& bias = model.params.at("router.cls.b").value;
    for (int j = 0; j < 3; ++j) bias[static_cast<std::size_t>(j)] = 60.0 * label[static_cast<std::size_t>(j)];
    Rng rng(11);
    Stage2Result r = stage2_step(model, batch, opt, rng);
    CHECK(r.ce_per_query < 1e-9);
    CHECK(r.route_accuracy == 1.0);
}
