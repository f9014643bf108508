#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "mome/scene.hpp"

namespace mome {

struct BeamReduction {
    int kept_beams = 4;  // one of {1, 4, 8, 16, 32}
};
struct LidarDrop {};
struct LimitedFov {
    double min_deg = -60.0;
    double max_deg = 60.0;
};
struct ObjectFailure {
    double rate = 0.5;
    std::uint64_t seed = 0;
};
struct ViewDrop {
    std::vector<int> views;
};
struct Occlusion {
    std::vector<OcclusionRect> rects;
    std::string source_file;  // recorded for config echoing, may be empty
};
struct NoCorruption {};

using CorruptionSpec = std::variant<NoCorruption, BeamReduction, LidarDrop, LimitedFov,
                                    ObjectFailure, ViewDrop, Occlusion>;

Scene apply_beam_reduction(const Scene& scene, int kept_beams);
Scene apply_lidar_drop(const Scene& scene);
/// Keeps points whose azimuth lies in the closed interval [min_deg, max_deg].
Scene apply_limited_fov(const Scene& scene, double min_deg, double max_deg);
/// Per box, one independent seeded draw; on failure every point owned by
/// that box is deleted. GT boxes are never touched.
Scene apply_object_failure(const Scene& scene, double rate, std::uint64_t seed);
Scene apply_view_drop(const Scene& scene, const std::vector<int>& views);
Scene apply_occlusion(const Scene& scene, const std::vector<OcclusionRect>& rects);

Scene apply_corruption(const Scene& scene, const CorruptionSpec& spec);

/// Parses the CLI mini-grammar:
///   clean | lidardrop | beams=<k> | fov=<min>:<max> |
///   objfail=<rate>[@[seed]<n>] | viewdrop=<list> | occl=<file>
/// where <list> is comma- or plus-separated indices and a-b ranges.
CorruptionSpec parse_corruption_spec(const std::string& text);
std::string corruption_spec_string(const CorruptionSpec& spec);

}  // namespace mome
