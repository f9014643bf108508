#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mome/config.hpp"
#include "mome/geometry.hpp"

namespace mome {

inline constexpr int kNumBeams = 32;

struct GtBox {
    std::array<double, 3> center{};  // meters
    std::array<double, 3> size{};    // w (across), l (along yaw), h
    double yaw = 0.0;                // radians in (-pi, pi]
    int class_id = 0;
    int object_id = 0;
};

struct LidarPoint {
    double x = 0.0, y = 0.0, z = 0.0;
    int ring = 0;          // beam index, 0..31
    double azimuth = 0.0;  // atan2(y, x)
    int owner = -1;        // object_id, -1 for background
};

struct OcclusionRect {
    int view = 0;
    double u0 = 0.0, v0 = 0.0, u1 = 0.0, v1 = 0.0;  // pixel box, u1/v1 exclusive
    bool contains(double u, double v) const { return u >= u0 && u < u1 && v >= v0 && v < v1; }
};

struct Scene {
    int id = 0;
    std::uint64_t seed = 0;
    std::vector<GtBox> boxes;
    std::vector<LidarPoint> points;
    CameraRig rig;
    std::vector<int> dropped_views;           // sorted, unique
    std::vector<OcclusionRect> occlusions;
    bool view_dropped(int v) const;
};

/// Beam elevation angle in radians for a ring index (32-beam pattern,
/// -30.67 deg to +10.67 deg).
double beam_elevation(int ring);
/// Nearest ring for an elevation angle (radians).
int ring_for_elevation(double elev);

/// Class-conditional mean box dimensions (w, l, h) for class ids 0..9.
std::array<double, 3> class_size_prior(int class_id);

/// The 8 box corners in meters.
std::array<std::array<double, 3>, 8> box_corners(const GtBox& box);

/// Deterministic synthetic scene: boxes with class-conditional sizes,
/// surface LiDAR points (density falling off with distance), and
/// ground-plane background rings.
Scene generate_scene(const ExperimentConfig& cfg, int scene_id, std::uint64_t seed);

struct SceneCensus {
    std::int64_t scenes = 0;
    std::int64_t boxes = 0;
    std::int64_t points = 0;
};

}  // namespace mome
