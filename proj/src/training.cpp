#include "mome/training.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>

namespace mome {

std::vector<int> hungarian_match(std::span<const double> cost, int rows, int cols) {
    if (rows > cols) throw ConfigError("hungarian_match: more rows than columns");
    if (static_cast<int>(cost.size()) != rows * cols)
        throw DimensionError("hungarian_match: cost size mismatch");
    for (double c : cost)
        if (!std::isfinite(c)) throw DomainError("hungarian_match: non-finite cost");
    if (rows == 0) return {};

    constexpr double kInf = std::numeric_limits<double>::infinity();
    // Jonker-Volgenant style shortest augmenting paths with potentials,
    // 1-indexed scratch arrays.
    std::vector<double> u(static_cast<std::size_t>(rows) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(cols) + 1, 0.0);
    std::vector<int> p(static_cast<std::size_t>(cols) + 1, 0);
    std::vector<int> way(static_cast<std::size_t>(cols) + 1, 0);
    for (int i = 1; i <= rows; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(cols) + 1, kInf);
        std::vector<char> used(static_cast<std::size_t>(cols) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = p[static_cast<std::size_t>(j0)];
            double delta = kInf;
            int j1 = 0;
            for (int j = 1; j <= cols; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost[static_cast<std::size_t>(i0 - 1) * cols + (j - 1)] -
                                   u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= cols; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> match(static_cast<std::size_t>(rows), -1);
    for (int j = 1; j <= cols; ++j)
        if (p[static_cast<std::size_t>(j)] > 0)
            match[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
    return match;
}

double focal_term(double score, int target, double alpha, double gamma) {
    const double p = std::clamp(score, 1e-7, 1.0 - 1e-7);
    if (target == 1) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
    return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

Tensor focal_loss(const Tensor& scores, const std::vector<double>& targets, double alpha,
                  double gamma, int matched_count) {
    Tape* tape = scores.tape();
    if (static_cast<std::int64_t>(targets.size()) != numel(scores.shape()))
        throw DimensionError("focal_loss: target size mismatch");
    Tensor t = tape->leaf(scores.shape(), targets);
    Tensor one_minus_t = affine(t, -1.0, 1.0);
    Tensor p = clamp_const(scores, 1e-7, 1.0 - 1e-7);
    Tensor one_minus_p = affine(p, -1.0, 1.0);
    Tensor pos = mul(t, mul(pow_const(one_minus_p, gamma), log_op(p)));
    Tensor neg = mul(one_minus_t, mul(pow_const(p, gamma), log_op(one_minus_p)));
    Tensor weighted = add(scale(pos, alpha), scale(neg, 1.0 - alpha));
    return scale(sum_all(weighted), -1.0 / std::max(matched_count, 1));
}

Tensor l1_box_loss(const Tensor& pred_params, const std::vector<double>& gt_params,
                   int matched_count) {
    Tape* tape = pred_params.tape();
    if (static_cast<std::int64_t>(gt_params.size()) != numel(pred_params.shape()))
        throw DimensionError("l1_box_loss: target size mismatch");
    Tensor gt = tape->leaf(pred_params.shape(), gt_params);
    Tensor diff = abs_op(sub(pred_params, gt));
    return scale(sum_all(diff), 1.0 / (8.0 * std::max(matched_count, 1)));
}

DropState sample_drop(Rng& rng) {
    switch (rng.uniform_int(0, 2)) {
        case 0: return DropState::None;
        case 1: return DropState::LidarDropped;
        default: return DropState::CameraDropped;
    }
}

std::array<double, 3> route_label(DropState s) {
    switch (s) {
        case DropState::LidarDropped: return {0.0, 1.0, 0.0};
        case DropState::CameraDropped: return {1.0, 0.0, 0.0};
        default: return {0.0, 0.0, 1.0};
    }
}

Scene apply_drop(const Scene& scene, DropState s) {
    if (s == DropState::LidarDropped) return apply_lidar_drop(scene);
    if (s == DropState::CameraDropped) {
        std::vector<int> all(static_cast<std::size_t>(scene.rig.views));
        for (int v = 0; v < scene.rig.views; ++v) all[static_cast<std::size_t>(v)] = v;
        return apply_view_drop(scene, all);
    }
    return scene;
}

namespace {

// GT regression targets in normalized parameter space.
std::vector<double> gt_box_params(std::span<const GtBox> boxes, const PcRange& range) {
    std::vector<double> out;
    out.reserve(boxes.size() * 8);
    for (const GtBox& b : boxes) {
        for (int a = 0; a < 3; ++a)
            out.push_back((b.center[static_cast<std::size_t>(a)] - range.min[static_cast<std::size_t>(a)]) /
                          range.extent(a));
        for (int a = 0; a < 3; ++a) out.push_back(std::log(b.size[static_cast<std::size_t>(a)]));
        out.push_back(std::sin(b.yaw));
        out.push_back(std::cos(b.yaw));
    }
    return out;
}

}  // namespace

ExpertLoss expert_detection_loss(Tape& tape, Model& model, const Scene& scene, Modality mod,
                                 const FeatureBundle& bundle, const Tensor& feat_pe,
                                 const Tensor& query_embed, const Tensor& query_pe,
                                 std::span<const LayerWeights> layers, const HeadWeights& heads) {
    const int n = model.queries();
    const int k = model.cfg.model.classes;
    const PcRange& range = model.cfg.geometry.range;
    const TrainConfig& tc = model.cfg.train;

    Tensor decoded = expert_decode(query_embed, query_pe, mod, bundle, feat_pe, layers);
    HeadOutputs ho = predict_heads(decoded, heads);
    Tensor scores = sigmoid(ho.cls_logits);

    // predicted parameters in normalized space: reference + offset, raw rest
    std::vector<double> refs_flat;
    refs_flat.reserve(static_cast<std::size_t>(n) * 3);
    for (const auto& r : model.query_refs) {
        refs_flat.push_back(r[0]);
        refs_flat.push_back(r[1]);
        refs_flat.push_back(r[2]);
    }
    Tensor refs = tape.leaf({n, 3}, std::move(refs_flat));
    Tensor centers = add(slice_cols(ho.box_raw, 0, 3), refs);
    std::array<Tensor, 2> param_parts{centers, slice_cols(ho.box_raw, 3, 8)};
    Tensor pred_params = concat_cols(param_parts);

    const int g = static_cast<int>(scene.boxes.size());
    std::vector<double> gt_params = gt_box_params(scene.boxes, range);

    std::vector<int> match;  // gt index -> query index
    if (g > 0) {
        auto sv = scores.values();
        auto pv = pred_params.values();
        std::vector<double> cost(static_cast<std::size_t>(g) * n);
        for (int gi = 0; gi < g; ++gi) {
            const int cls = scene.boxes[static_cast<std::size_t>(gi)].class_id;
            for (int qi = 0; qi < n; ++qi) {
                const double p = sv[static_cast<std::size_t>(qi) * k + cls];
                const double cls_cost = focal_term(p, 1, tc.focal_alpha, tc.focal_gamma) -
                                        focal_term(p, 0, tc.focal_alpha, tc.focal_gamma);
                double l1 = 0.0;
                for (int a = 0; a < 8; ++a)
                    l1 += std::abs(pv[static_cast<std::size_t>(qi) * 8 + a] -
                                   gt_params[static_cast<std::size_t>(gi) * 8 + a]);
                cost[static_cast<std::size_t>(gi) * n + qi] =
                    tc.lambda_cls * cls_cost + tc.lambda_box * (l1 / 8.0);
            }
        }
        match = hungarian_match(cost, g, n);
    }

    // classification targets: matched queries are positive for their class
    std::vector<double> targets(static_cast<std::size_t>(n) * k, 0.0);
    for (int gi = 0; gi < g; ++gi)
        targets[static_cast<std::size_t>(match[static_cast<std::size_t>(gi)]) * k +
                scene.boxes[static_cast<std::size_t>(gi)].class_id] = 1.0;

    Tensor cls_loss = focal_loss(scores, targets, tc.focal_alpha, tc.focal_gamma, g);
    Tensor loss = scale(cls_loss, tc.lambda_cls);
    if (g > 0) {
        std::vector<int> matched_queries(match.begin(), match.end());
        Tensor matched = gather_rows(pred_params, std::move(matched_queries));
        Tensor box_loss = l1_box_loss(matched, gt_params, g);
        loss = add(loss, scale(box_loss, tc.lambda_box));
    }
    ExpertLoss out;
    out.loss = loss;
    out.matched = g;
    return out;
}

namespace {

struct UnitResult {
    double loss_value = 0.0;
    Modality mod = Modality::Fused;
    std::vector<std::pair<Param*, std::vector<double>>> grads;
};

// One (scene, expert) work unit on its own tape; gradients come back for a
// serialized merge so the whole step stays deterministic.
UnitResult stage1_unit(Model& model, const Scene& scene, Modality mod, double loss_scale) {
    Tape tape(true);
    Binding binding(tape);
    FeatureBundle bundle = encode_features(tape, binding, model.params, scene, model.cfg);
    const FeatureLayout layout = model.layout();
    Tensor feat_pe = tape.leaf({layout.total(), layout.dim}, model.feat_pe);
    Tensor query_embed = binding.use(model.params.at("query.embed"));
    Tensor query_pe = tape.leaf({model.queries(), layout.dim}, model.query_pe);
    auto layers = bind_decoder(binding, model.params, model.cfg.model);
    HeadWeights heads = bind_heads(binding, model.params);

    ExpertLoss el = expert_detection_loss(tape, model, scene, mod, bundle, feat_pe, query_embed,
                                          query_pe, layers, heads);
    UnitResult res;
    res.mod = mod;
    res.loss_value = el.loss.scalar();
    tape.backward(scale(el.loss, loss_scale));
    res.grads = binding.take_grads();
    return res;
}

}  // namespace

Stage1Losses stage1_step(Model& model, std::span<const Scene> batch, Optimizer& opt) {
    if (batch.empty()) throw UsageError("stage1_step: empty batch");
    model.params.zero_grad();
    const double loss_scale = 1.0 / static_cast<double>(batch.size());

    struct Job {
        const Scene* scene;
        Modality mod;
    };
    std::vector<Job> jobs;
    for (const Scene& s : batch)
        for (Modality mod : {Modality::Lidar, Modality::Camera, Modality::Fused})
            jobs.push_back({&s, mod});

    std::vector<std::future<UnitResult>> futures;
    futures.reserve(jobs.size());
    for (const Job& j : jobs)
        futures.push_back(std::async(std::launch::async, [&model, &j, loss_scale] {
            return stage1_unit(model, *j.scene, j.mod, loss_scale);
        }));

    Stage1Losses losses;
    for (auto& f : futures) {
        UnitResult r = f.get();  // merge in submission order
        switch (r.mod) {
            case Modality::Lidar: losses.lidar += r.loss_value * loss_scale; break;
            case Modality::Camera: losses.camera += r.loss_value * loss_scale; break;
            case Modality::Fused: losses.fused += r.loss_value * loss_scale; break;
        }
        for (auto& [p, g] : r.grads)
            for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
    }
    opt.step(model.params, [](const Param& p) { return p.name.rfind("router.", 0) != 0; });
    return losses;
}

Stage2Result stage2_step(Model& model, std::span<const Scene> batch, Optimizer& opt, Rng& rng) {
    if (batch.empty()) throw UsageError("stage2_step: empty batch");
    model.params.zero_grad();
    const int n = model.queries();
    Stage2Result result;
    int correct = 0;

    for (const Scene& raw : batch) {
        const DropState drop = sample_drop(rng);
        const Scene scene = apply_drop(raw, drop);
        const auto label = route_label(drop);

        Tape tape(true);
        Binding binding(tape);
        FeatureBundle bundle = encode_features(tape, binding, model.params, scene, model.cfg);
        const FeatureLayout layout = model.layout();
        Tensor feat_pe = tape.leaf({layout.total(), layout.dim}, model.feat_pe);
        Tensor query_embed = binding.use(model.params.at("query.embed"));
        Tensor query_pe = tape.leaf({n, layout.dim}, model.query_pe);

        const bool use_lam = model.cfg.model.router_mask == "lam";
        LocalAttentionMask mask = use_lam ? query_attention_mask(model, scene)
                                          : LocalAttentionMask(0, 0);
        RouterWeights rw = bind_router(binding, model.params, model.cfg.model.heads);
        RouteOutputs routed = aqr_forward(query_embed, query_pe, bundle.flat, feat_pe,
                                          use_lam ? &mask : nullptr, rw);

        std::vector<double> targets(static_cast<std::size_t>(n) * 3);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 3; ++j)
                targets[static_cast<std::size_t>(i) * 3 + j] = label[static_cast<std::size_t>(j)];
        Tensor y = tape.leaf({n, 3}, std::move(targets));
        Tensor ce_sum = scale(sum_all(mul(log_softmax_rows(routed.logits), y)), -1.0);
        result.ce_sum += ce_sum.scalar() / static_cast<double>(batch.size());

        const Modality want = argmax_modality(label);
        for (const RouteDecision& d : route_decisions(routed))
            if (d.chosen == want) ++correct;

        tape.backward(scale(ce_sum, 1.0 / (static_cast<double>(n) * batch.size())));
        binding.accumulate();
    }
    result.ce_per_query = result.ce_sum / n;
    result.route_accuracy = static_cast<double>(correct) / (static_cast<double>(n) * batch.size());
    opt.step(model.params, [](const Param& p) { return p.name.rfind("router.", 0) == 0; });
    return result;
}

namespace {

Optimizer make_optimizer(const TrainConfig& tc) {
    Optimizer opt;
    opt.kind = tc.optimizer == "sgd" ? OptKind::Sgd : OptKind::Adam;
    opt.lr = tc.lr;
    return opt;
}

}  // namespace

void train_stage1(Model& model, std::span<const Scene> scenes, int steps, const TrainLogFn& log) {
    if (scenes.empty()) throw UsageError("train_stage1: no scenes");
    Optimizer opt = make_optimizer(model.cfg.train);
    const int batch = model.cfg.train.batch;
    std::vector<Scene> window;
    for (int step = 0; step < steps; ++step) {
        window.clear();
        for (int j = 0; j < batch; ++j)
            window.push_back(scenes[(static_cast<std::size_t>(step) * batch + j) % scenes.size()]);
        TrainLogRow row;
        row.step = step;
        row.stage = 1;
        row.s1 = stage1_step(model, window, opt);
        if (log) log(row);
    }
}

void train_stage2(Model& model, std::span<const Scene> scenes, int steps, const TrainLogFn& log) {
    if (scenes.empty()) throw UsageError("train_stage2: no scenes");
    Optimizer opt = make_optimizer(model.cfg.train);
    Rng rng(mix_seed(model.cfg.train.seed, 0xd209ull));
    const int batch = model.cfg.train.batch;
    std::vector<Scene> window;
    for (int step = 0; step < steps; ++step) {
        window.clear();
        for (int j = 0; j < batch; ++j)
            window.push_back(scenes[(static_cast<std::size_t>(step) * batch + j) % scenes.size()]);
        TrainLogRow row;
        row.step = step;
        row.stage = 2;
        row.s2 = stage2_step(model, window, opt, rng);
        if (log) log(row);
    }
}

}  // namespace mome
