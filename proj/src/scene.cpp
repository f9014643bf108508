#include "mome/scene.hpp"

#include <algorithm>
#include <cmath>

#include "mome/rng.hpp"

namespace mome {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kBeamLoDeg = -30.67;
constexpr double kBeamHiDeg = 10.67;

// (w, l, h) means per class; classes beyond 3 cycle through plausible
// road-user shapes so any K in [1,10] works.
const std::array<std::array<double, 3>, 10> kSizePriors = {{
    {1.9, 4.5, 1.7},   // car
    {2.5, 8.0, 3.0},   // truck
    {0.7, 0.7, 1.75},  // pedestrian
    {0.6, 1.8, 1.4},   // cyclist
    {2.9, 10.5, 3.5},  // bus
    {2.0, 5.5, 2.2},   // van
    {0.8, 2.2, 1.6},   // motorcycle
    {2.3, 6.5, 2.6},   // trailer
    {0.6, 0.6, 1.1},   // barrier-ish clutter
    {1.5, 3.2, 1.6},   // compact car
}};

}  // namespace

bool Scene::view_dropped(int v) const {
    return std::find(dropped_views.begin(), dropped_views.end(), v) != dropped_views.end();
}

double beam_elevation(int ring) {
    const double step = (kBeamHiDeg - kBeamLoDeg) / (kNumBeams - 1);
    return (kBeamLoDeg + step * ring) * kPi / 180.0;
}

int ring_for_elevation(double elev) {
    const double lo = kBeamLoDeg * kPi / 180.0;
    const double step = ((kBeamHiDeg - kBeamLoDeg) / (kNumBeams - 1)) * kPi / 180.0;
    int ring = static_cast<int>(std::lround((elev - lo) / step));
    return std::clamp(ring, 0, kNumBeams - 1);
}

std::array<double, 3> class_size_prior(int class_id) {
    return kSizePriors[static_cast<std::size_t>(class_id % 10)];
}

std::array<std::array<double, 3>, 8> box_corners(const GtBox& box) {
    std::array<std::array<double, 3>, 8> out{};
    const double c = std::cos(box.yaw), s = std::sin(box.yaw);
    int idx = 0;
    for (int dl = -1; dl <= 1; dl += 2)
        for (int dw = -1; dw <= 1; dw += 2)
            for (int dh = -1; dh <= 1; dh += 2) {
                const double lx = dl * box.size[1] / 2.0;  // along yaw
                const double wy = dw * box.size[0] / 2.0;  // across
                const double hz = dh * box.size[2] / 2.0;
                out[static_cast<std::size_t>(idx)][0] = box.center[0] + c * lx - s * wy;
                out[static_cast<std::size_t>(idx)][1] = box.center[1] + s * lx + c * wy;
                out[static_cast<std::size_t>(idx)][2] = box.center[2] + hz;
                ++idx;
            }
    return out;
}

namespace {

LidarPoint make_point(double x, double y, double z, int owner) {
    LidarPoint p;
    p.x = x;
    p.y = y;
    p.z = z;
    p.azimuth = std::atan2(y, x);
    p.ring = ring_for_elevation(std::atan2(z, std::hypot(x, y)));
    p.owner = owner;
    return p;
}

// Uniform point on the box surface, faces weighted by area.
LidarPoint sample_surface_point(const GtBox& box, Rng& rng) {
    const double w = box.size[0], l = box.size[1], h = box.size[2];
    const double a_side = l * h;   // two faces normal to width axis
    const double a_front = w * h;  // two faces normal to length axis
    const double a_top = w * l;    // top and bottom
    const double total = 2.0 * (a_side + a_front + a_top);
    double u = rng.uniform() * total;
    double lx, wy, hz;
    if (u < 2.0 * a_side) {
        const int sign = u < a_side ? 1 : -1;
        lx = rng.uniform(-l / 2, l / 2);
        wy = sign * w / 2.0;
        hz = rng.uniform(-h / 2, h / 2);
    } else if (u < 2.0 * (a_side + a_front)) {
        u -= 2.0 * a_side;
        const int sign = u < a_front ? 1 : -1;
        lx = sign * l / 2.0;
        wy = rng.uniform(-w / 2, w / 2);
        hz = rng.uniform(-h / 2, h / 2);
    } else {
        u -= 2.0 * (a_side + a_front);
        const int sign = u < a_top ? 1 : -1;
        lx = rng.uniform(-l / 2, l / 2);
        wy = rng.uniform(-w / 2, w / 2);
        hz = sign * h / 2.0;
    }
    const double c = std::cos(box.yaw), s = std::sin(box.yaw);
    return make_point(box.center[0] + c * lx - s * wy, box.center[1] + s * lx + c * wy,
                      box.center[2] + hz, box.object_id);
}

}  // namespace

Scene generate_scene(const ExperimentConfig& cfg, int scene_id, std::uint64_t seed) {
    cfg.validate();
    if (cfg.model.classes < 1) throw ConfigError("scene generation needs at least one class");
    Scene scene;
    scene.id = scene_id;
    scene.seed = seed;
    scene.rig = cfg.default_rig();

    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(scene_id)));
    const PcRange& range = cfg.geometry.range;
    const double ground = cfg.scene.ground_z;

    // Boxes: uniform centers with a margin, rejection-spaced in the plane.
    const int n_boxes = rng.uniform_int(cfg.scene.min_boxes, cfg.scene.max_boxes);
    for (int b = 0; b < n_boxes; ++b) {
        GtBox box;
        box.object_id = b;
        box.class_id = rng.uniform_int(0, cfg.model.classes - 1);
        const auto prior = class_size_prior(box.class_id);
        for (int i = 0; i < 3; ++i)
            box.size[static_cast<std::size_t>(i)] =
                prior[static_cast<std::size_t>(i)] * std::exp(rng.normal(0.0, 0.1));
        const double margin = 6.0;
        bool placed = false;
        for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            box.center[0] = rng.uniform(range.min[0] + margin, range.max[0] - margin);
            box.center[1] = rng.uniform(range.min[1] + margin, range.max[1] - margin);
            placed = true;
            for (const GtBox& other : scene.boxes) {
                const double dx = box.center[0] - other.center[0];
                const double dy = box.center[1] - other.center[1];
                if (dx * dx + dy * dy < 5.0 * 5.0) {
                    placed = false;
                    break;
                }
            }
        }
        if (!placed) continue;  // crowded scene, skip this box
        box.center[2] = ground + box.size[2] / 2.0 + rng.normal(0.0, 0.05);
        box.center[2] = std::clamp(box.center[2], range.min[2] + 0.1, range.max[2] - 0.1);
        box.yaw = kPi - rng.uniform() * 2.0 * kPi;  // (-pi, pi]
        scene.boxes.push_back(box);
    }
    // object ids must stay unique and dense for ownership bookkeeping
    for (std::size_t i = 0; i < scene.boxes.size(); ++i)
        scene.boxes[i].object_id = static_cast<int>(i);

    // Surface points, count falling off with distance. Returns outside the
    // sensor's elevation fan never happen on a real 32-beam unit, so they
    // are discarded rather than clamped onto a wrong ring.
    const double half_band = 0.5 * (beam_elevation(1) - beam_elevation(0));
    const double fan_lo = beam_elevation(0) - half_band;
    const double fan_hi = beam_elevation(kNumBeams - 1) + half_band;
    for (const GtBox& box : scene.boxes) {
        const double dist = std::max(1.0, std::hypot(box.center[0], box.center[1]));
        const double w = box.size[0], l = box.size[1], h = box.size[2];
        const double area = 2.0 * (w * h + l * h + w * l);
        int count = static_cast<int>(std::lround(cfg.scene.point_density * area / dist));
        count = std::clamp(count, 3, cfg.scene.max_points_per_box);
        for (int i = 0; i < count; ++i) {
            LidarPoint p = sample_surface_point(box, rng);
            const double elev = std::atan2(p.z, std::hypot(p.x, p.y));
            if (elev < fan_lo || elev > fan_hi) continue;
            scene.points.push_back(p);
        }
    }

    // Ground returns for every downward-looking beam: each ring hits the
    // plane z = ground on a circle of radius h/tan(-elev).
    const double sensor_h = -ground;
    for (int ring = 0; ring < kNumBeams; ++ring) {
        const double elev = beam_elevation(ring);
        if (elev >= -1e-3) continue;  // horizontal and up never hit ground
        const double radius = sensor_h / std::tan(-elev);
        if (radius > 70.0) continue;
        for (int k = 0; k < cfg.scene.bg_azimuth_steps; ++k) {
            const double az = -kPi + (2.0 * kPi) * (k + rng.uniform() * 0.5) / cfg.scene.bg_azimuth_steps;
            const double r = radius * (1.0 + rng.normal(0.0, 0.01));
            const double x = r * std::cos(az);
            const double y = r * std::sin(az);
            if (x < range.min[0] || x >= range.max[0] || y < range.min[1] || y >= range.max[1])
                continue;
            LidarPoint p = make_point(x, y, ground + rng.normal(0.0, 0.02), -1);
            const double pe = std::atan2(p.z, std::hypot(p.x, p.y));
            if (pe < fan_lo || pe > fan_hi) continue;
            scene.points.push_back(p);
        }
    }
    return scene;
}

}  // namespace mome
