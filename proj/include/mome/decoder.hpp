#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "mome/features.hpp"
#include "mome/geometry.hpp"
#include "mome/rng.hpp"
#include "mome/tensor.hpp"

namespace mome {

enum class Modality { Lidar = 0, Camera = 1, Fused = 2 };
const char* modality_name(Modality m);

struct AttnWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    int heads = 4;
};

struct LayerWeights {
    AttnWeights self_attn, cross_attn;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct HeadWeights {
    Tensor cls_w, cls_b;
    Tensor box_w1, box_b1, box_w2, box_b2;
};

/// A decoded box before and after denormalization. raw holds the regression
/// targets [dx,dy,dz,log w,log l,log h,sin,cos] in normalized space.
struct Detection {
    std::array<double, 8> raw{};
    std::array<double, 3> center{};  // meters
    std::array<double, 3> size{};    // meters
    double yaw = 0.0;
    std::vector<double> scores;  // [K], sigmoid
    int query_index = -1;
    double max_score() const;
    int best_class() const;
};

void init_attn_params(ParamStore& params, const std::string& prefix, int dim, Rng& rng);
void init_decoder_params(ParamStore& params, const ModelConfig& mc, Rng& rng);
void init_head_params(ParamStore& params, const ModelConfig& mc, Rng& rng);

AttnWeights bind_attn(Binding& binding, ParamStore& params, const std::string& prefix, int heads);
LayerWeights bind_layer(Binding& binding, ParamStore& params, const std::string& prefix, int heads);
/// One bound weight set per layer; with share_layers the first layer's
/// parameters are reused at every depth.
std::vector<LayerWeights> bind_decoder(Binding& binding, ParamStore& params, const ModelConfig& mc);
HeadWeights bind_heads(Binding& binding, ParamStore& params);

/// Projected multi-head attention: q/k/v are unprojected inputs, mask
/// true-entries are blocked, fully blocked query rows give zero outputs.
Tensor masked_mha(const Tensor& q, const Tensor& k, const Tensor& v, const AttnWeights& w,
                  const AttnMask* mask = nullptr);

/// Pre-norm transformer decoder layer: masked(-optional) cross-attention
/// over the feature rows with positional terms added to queries and keys.
Tensor decoder_layer(const Tensor& x, const Tensor& feats, const Tensor& feat_pe,
                     const Tensor& query_pe, const LayerWeights& w,
                     const AttnMask* mask = nullptr);

/// Runs the stacked layers against the modality's slice of the flattened
/// features (and the matching positional-encoding slice). Queries never
/// attend outside the slice. An empty query set returns an empty tensor.
Tensor expert_decode(const Tensor& queries, const Tensor& query_pe, Modality mod,
                     const FeatureBundle& bundle, const Tensor& feat_pe,
                     std::span<const LayerWeights> layers);

struct HeadOutputs {
    Tensor cls_logits;  // [n x K]
    Tensor box_raw;     // [n x 8]
};
HeadOutputs predict_heads(const Tensor& decoded, const HeadWeights& w);

/// Normalized raw outputs -> metric detections. sin/cos renormalized,
/// sizes through exp, center = reference + offset then denormalized.
std::vector<Detection> decode_detections(const HeadOutputs& heads,
                                         std::span<const std::array<double, 3>> refs,
                                         const PcRange& range,
                                         std::span<const int> query_indices);

}  // namespace mome
