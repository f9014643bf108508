#include "mome/decoder.hpp"

#include <cmath>

namespace mome {

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::Lidar: return "l";
        case Modality::Camera: return "c";
        case Modality::Fused: return "lc";
    }
    return "?";
}

double Detection::max_score() const {
    double best = 0.0;
    for (double s : scores) best = std::max(best, s);
    return best;
}

int Detection::best_class() const {
    int k = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[static_cast<std::size_t>(k)]) k = static_cast<int>(i);
    return k;
}

namespace {

std::vector<double> xavier(int fin, int fout, Rng& rng) {
    const double a = std::sqrt(6.0 / (fin + fout));
    std::vector<double> w(static_cast<std::size_t>(fin) * fout);
    for (double& v : w) v = rng.uniform(-a, a);
    return w;
}

std::vector<double> zeros(int n) { return std::vector<double>(static_cast<std::size_t>(n), 0.0); }
std::vector<double> ones(int n) { return std::vector<double>(static_cast<std::size_t>(n), 1.0); }

}  // namespace

void init_attn_params(ParamStore& params, const std::string& prefix, int dim, Rng& rng) {
    for (const char* part : {"wq", "wk", "wv", "wo"})
        params.add(prefix + "." + part, {dim, dim}, xavier(dim, dim, rng));
    for (const char* part : {"bq", "bk", "bv", "bo"})
        params.add(prefix + "." + part, {dim}, zeros(dim));
}

void init_decoder_params(ParamStore& params, const ModelConfig& mc, Rng& rng) {
    const int d = mc.dim;
    const int hidden = d * mc.ffn_mult;
    const int count = mc.share_layers ? 1 : mc.layers;
    for (int i = 0; i < count; ++i) {
        const std::string p = "dec.l" + std::to_string(i);
        init_attn_params(params, p + ".self", d, rng);
        init_attn_params(params, p + ".cross", d, rng);
        for (const char* ln : {"ln1", "ln2", "ln3"}) {
            params.add(p + "." + ln + ".g", {d}, ones(d));
            params.add(p + "." + ln + ".b", {d}, zeros(d));
        }
        params.add(p + ".ffn.w1", {d, hidden}, xavier(d, hidden, rng));
        params.add(p + ".ffn.b1", {hidden}, zeros(hidden));
        params.add(p + ".ffn.w2", {hidden, d}, xavier(hidden, d, rng));
        params.add(p + ".ffn.b2", {d}, zeros(d));
    }
}

void init_head_params(ParamStore& params, const ModelConfig& mc, Rng& rng) {
    const int d = mc.dim;
    params.add("head.cls.w", {d, mc.classes}, xavier(d, mc.classes, rng));
    // prior-probability bias keeps early focal loss stable
    const double pi = 0.1;
    params.add("head.cls.b", {mc.classes},
               std::vector<double>(static_cast<std::size_t>(mc.classes), -std::log((1.0 - pi) / pi)));
    params.add("head.box.w1", {d, d}, xavier(d, d, rng));
    params.add("head.box.b1", {d}, zeros(d));
    params.add("head.box.w2", {d, 8}, xavier(d, 8, rng));
    params.add("head.box.b2", {8}, zeros(8));
}

AttnWeights bind_attn(Binding& binding, ParamStore& params, const std::string& prefix, int heads) {
    AttnWeights w;
    w.heads = heads;
    w.wq = binding.use(params.at(prefix + ".wq"));
    w.bq = binding.use(params.at(prefix + ".bq"));
    w.wk = binding.use(params.at(prefix + ".wk"));
    w.bk = binding.use(params.at(prefix + ".bk"));
    w.wv = binding.use(params.at(prefix + ".wv"));
    w.bv = binding.use(params.at(prefix + ".bv"));
    w.wo = binding.use(params.at(prefix + ".wo"));
    w.bo = binding.use(params.at(prefix + ".bo"));
    return w;
}

LayerWeights bind_layer(Binding& binding, ParamStore& params, const std::string& prefix, int heads) {
    LayerWeights w;
    w.self_attn = bind_attn(binding, params, prefix + ".self", heads);
    w.cross_attn = bind_attn(binding, params, prefix + ".cross", heads);
    w.ln1_g = binding.use(params.at(prefix + ".ln1.g"));
    w.ln1_b = binding.use(params.at(prefix + ".ln1.b"));
    w.ln2_g = binding.use(params.at(prefix + ".ln2.g"));
    w.ln2_b = binding.use(params.at(prefix + ".ln2.b"));
    w.ln3_g = binding.use(params.at(prefix + ".ln3.g"));
    w.ln3_b = binding.use(params.at(prefix + ".ln3.b"));
    w.ffn_w1 = binding.use(params.at(prefix + ".ffn.w1"));
    w.ffn_b1 = binding.use(params.at(prefix + ".ffn.b1"));
    w.ffn_w2 = binding.use(params.at(prefix + ".ffn.w2"));
    w.ffn_b2 = binding.use(params.at(prefix + ".ffn.b2"));
    return w;
}

std::vector<LayerWeights> bind_decoder(Binding& binding, ParamStore& params, const ModelConfig& mc) {
    std::vector<LayerWeights> layers;
    layers.reserve(static_cast<std::size_t>(mc.layers));
    if (mc.share_layers) {
        LayerWeights shared = bind_layer(binding, params, "dec.l0", mc.heads);
        for (int i = 0; i < mc.layers; ++i) layers.push_back(shared);
        return layers;
    }
    for (int i = 0; i < mc.layers; ++i)
        layers.push_back(bind_layer(binding, params, "dec.l" + std::to_string(i), mc.heads));
    return layers;
}

HeadWeights bind_heads(Binding& binding, ParamStore& params) {
    HeadWeights w;
    w.cls_w = binding.use(params.at("head.cls.w"));
    w.cls_b = binding.use(params.at("head.cls.b"));
    w.box_w1 = binding.use(params.at("head.box.w1"));
    w.box_b1 = binding.use(params.at("head.box.b1"));
    w.box_w2 = binding.use(params.at("head.box.w2"));
    w.box_b2 = binding.use(params.at("head.box.b2"));
    return w;
}

Tensor masked_mha(const Tensor& q, const Tensor& k, const Tensor& v, const AttnWeights& w,
                  const AttnMask* mask) {
    Tensor qp = add_rowvec(matmul(q, w.wq), w.bq);
    Tensor kp = add_rowvec(matmul(k, w.wk), w.bk);
    Tensor vp = add_rowvec(matmul(v, w.wv), w.bv);
    Tensor ctx = attn_heads(qp, kp, vp, w.heads, mask);
    Tensor out = add_rowvec(matmul(ctx, w.wo), w.bo);
    if (mask != nullptr) {
        // fully blocked rows emit the zero vector, bias included
        std::vector<double> factors(static_cast<std::size_t>(mask->n), 1.0);
        bool any = false;
        for (int i = 0; i < mask->n; ++i) {
            bool open = false;
            for (int j = 0; j < mask->m; ++j)
                if (!mask->blocked(i, j)) {
                    open = true;
                    break;
                }
            if (!open) {
                factors[static_cast<std::size_t>(i)] = 0.0;
                any = true;
            }
        }
        if (any) out = scale_rows(out, std::move(factors));
    }
    return out;
}

Tensor decoder_layer(const Tensor& x, const Tensor& feats, const Tensor& feat_pe,
                     const Tensor& query_pe, const LayerWeights& w, const AttnMask* mask) {
    // self-attention, positional terms on q and k
    Tensor x1 = layernorm(x, w.ln1_g, w.ln1_b);
    Tensor qk = add(x1, query_pe);
    Tensor x2 = add(x, masked_mha(qk, qk, x1, w.self_attn));
    // cross-attention to the features
    Tensor x2n = layernorm(x2, w.ln2_g, w.ln2_b);
    Tensor q = add(x2n, query_pe);
    Tensor kf = add(feats, feat_pe);
    Tensor x3 = add(x2, masked_mha(q, kf, feats, w.cross_attn, mask));
    // feed-forward
    Tensor x3n = layernorm(x3, w.ln3_g, w.ln3_b);
    Tensor h = relu(add_rowvec(matmul(x3n, w.ffn_w1), w.ffn_b1));
    return add(x3, add_rowvec(matmul(h, w.ffn_w2), w.ffn_b2));
}

Tensor expert_decode(const Tensor& queries, const Tensor& query_pe, Modality mod,
                     const FeatureBundle& bundle, const Tensor& feat_pe,
                     std::span<const LayerWeights> layers) {
    const FeatureLayout& L = bundle.layout;
    int r0 = 0, r1 = L.total();
    if (mod == Modality::Lidar) r1 = L.bev_len();
    if (mod == Modality::Camera) r0 = L.bev_len();
    Tensor feats = slice_rows(bundle.flat, r0, r1);
    Tensor pe = slice_rows(feat_pe, r0, r1);
    Tensor x = queries;
    for (const LayerWeights& w : layers) x = decoder_layer(x, feats, pe, query_pe, w);
    return x;
}

HeadOutputs predict_heads(const Tensor& decoded, const HeadWeights& w) {
    HeadOutputs out;
    out.cls_logits = add_rowvec(matmul(decoded, w.cls_w), w.cls_b);
    Tensor h = relu(add_rowvec(matmul(decoded, w.box_w1), w.box_b1));
    out.box_raw = add_rowvec(matmul(h, w.box_w2), w.box_b2);
    return out;
}

std::vector<Detection> decode_detections(const HeadOutputs& heads,
                                         std::span<const std::array<double, 3>> refs,
                                         const PcRange& range,
                                         std::span<const int> query_indices) {
    const int n = heads.box_raw.rows();
    const int k = heads.cls_logits.cols();
    if (static_cast<int>(refs.size()) != n || static_cast<int>(query_indices.size()) != n)
        throw DimensionError("decode_detections: row count mismatch");
    auto raw = heads.box_raw.values();
    auto logits = heads.cls_logits.values();
    std::vector<Detection> dets(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Detection& d = dets[static_cast<std::size_t>(i)];
        d.query_index = query_indices[static_cast<std::size_t>(i)];
        for (int j = 0; j < 8; ++j) d.raw[static_cast<std::size_t>(j)] = raw[static_cast<std::size_t>(i) * 8 + j];
        for (int a = 0; a < 3; ++a) {
            const double c01 = refs[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)] +
                               d.raw[static_cast<std::size_t>(a)];
            d.center[static_cast<std::size_t>(a)] = c01 * range.extent(a) + range.min[static_cast<std::size_t>(a)];
            d.size[static_cast<std::size_t>(a)] = std::exp(d.raw[static_cast<std::size_t>(3 + a)]);
        }
        double sn = d.raw[6], cs = d.raw[7];
        const double norm = std::hypot(sn, cs);
        if (norm < 1e-12) {
            sn = 0.0;
            cs = 1.0;
        } else {
            sn /= norm;
            cs /= norm;
        }
        d.yaw = std::atan2(sn, cs);
        d.scores.resize(static_cast<std::size_t>(k));
        for (int j = 0; j < k; ++j) {
            const double z = logits[static_cast<std::size_t>(i) * k + j];
            d.scores[static_cast<std::size_t>(j)] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                                             : std::exp(z) / (1.0 + std::exp(z));
        }
    }
    return dets;
}

}  // namespace mome
