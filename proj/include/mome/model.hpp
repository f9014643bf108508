#pragma once

#include <array>
#include <string>
#include <vector>

#include "mome/config.hpp"
#include "mome/decoder.hpp"
#include "mome/features.hpp"
#include "mome/router.hpp"

namespace mome {

/// Everything persistent: the config it was built under, all named
/// parameters (the checkpoint manifest), the fixed query reference points
/// and cached positional encodings.
struct Model {
    ExperimentConfig cfg;
    ParamStore params;
    CameraRig rig;
    std::vector<std::array<double, 3>> query_refs;  // [N], normalized
    std::vector<double> feat_pe;                    // [total x D]
    std::vector<double> query_pe;                   // [N x D]

    FeatureLayout layout() const { return make_layout(cfg); }
    int queries() const { return cfg.model.queries; }
};

/// Builds a freshly initialized model; parameter init and reference-point
/// jitter derive from cfg.train.seed.
Model build_model(const ExperimentConfig& cfg);

/// Stratified reference points over the BEV footprint at a fixed
/// near-ground height.
std::vector<std::array<double, 3>> make_query_refs(const ExperimentConfig& cfg);

// Checkpoint format: magic "MOME", format version u32, then per parameter
// (u32 name length, utf8 name, u32 rank, u64 dims..., little-endian f64
// payload) until EOF. Records named "meta.*" are reserved; the loader
// requires all manifest parameters to be present with matching shapes.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const Model& model, const std::string& path);
/// Loads parameter values into an already-built model; the stored config
/// hash is compared against the model's and mismatch is reported via the
/// return value.
bool load_checkpoint(Model& model, const std::string& path);

}  // namespace mome
