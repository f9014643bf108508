#include "mome/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "mome/rng.hpp"

namespace mome {

namespace {

constexpr double kRadToDeg = 57.29577951308232087680;

void check_kept_beams(int k) {
    if (k != 1 && k != 4 && k != 8 && k != 16 && k != 32)
        throw ConfigError("kept_beams must be one of {1,4,8,16,32}");
}

}  // namespace

Scene apply_beam_reduction(const Scene& scene, int kept_beams) {
    check_kept_beams(kept_beams);
    Scene out = scene;
    if (kept_beams == kNumBeams) return out;
    const int stride = kNumBeams / kept_beams;
    out.points.clear();
    for (const LidarPoint& p : scene.points)
        if (p.ring % stride == 0) out.points.push_back(p);
    return out;
}

Scene apply_lidar_drop(const Scene& scene) {
    Scene out = scene;
    out.points.clear();
    return out;
}

Scene apply_limited_fov(const Scene& scene, double min_deg, double max_deg) {
    if (!(min_deg < max_deg) || min_deg < -180.0 || max_deg > 180.0)
        throw ConfigError("limited-fov interval must satisfy -180 <= min < max <= 180");
    Scene out = scene;
    out.points.clear();
    for (const LidarPoint& p : scene.points) {
        const double az_deg = p.azimuth * kRadToDeg;
        if (az_deg >= min_deg && az_deg <= max_deg) out.points.push_back(p);
    }
    return out;
}

Scene apply_object_failure(const Scene& scene, double rate, std::uint64_t seed) {
    if (rate < 0.0 || rate > 1.0) throw ConfigError("object-failure rate must lie in [0,1]");
    Scene out = scene;
    std::set<int> failed;
    for (const GtBox& box : scene.boxes) {
        // one draw per box, independent of iteration history
        Rng rng(mix_seed(seed, (static_cast<std::uint64_t>(scene.id) << 20) ^
                                   static_cast<std::uint64_t>(box.object_id)));
        if (rng.uniform() < rate) failed.insert(box.object_id);
    }
    out.points.clear();
    for (const LidarPoint& p : scene.points)
        if (p.owner < 0 || failed.count(p.owner) == 0) out.points.push_back(p);
    return out;
}

Scene apply_view_drop(const Scene& scene, const std::vector<int>& views) {
    Scene out = scene;
    for (int v : views) {
        if (v < 0 || v >= scene.rig.views)
            throw ConfigError("view index out of range: " + std::to_string(v));
        if (!out.view_dropped(v)) out.dropped_views.push_back(v);
    }
    std::sort(out.dropped_views.begin(), out.dropped_views.end());
    return out;
}

Scene apply_occlusion(const Scene& scene, const std::vector<OcclusionRect>& rects) {
    Scene out = scene;
    for (const OcclusionRect& r : rects) {
        if (r.view < 0 || r.view >= scene.rig.views)
            throw ConfigError("occlusion view index out of range");
        if (r.u1 <= r.u0 || r.v1 <= r.v0) continue;  // zero-area, no effect
        out.occlusions.push_back(r);
    }
    return out;
}

Scene apply_corruption(const Scene& scene, const CorruptionSpec& spec) {
    return std::visit(
        [&](const auto& s) -> Scene {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, NoCorruption>) return scene;
            else if constexpr (std::is_same_v<T, BeamReduction>) return apply_beam_reduction(scene, s.kept_beams);
            else if constexpr (std::is_same_v<T, LidarDrop>) return apply_lidar_drop(scene);
            else if constexpr (std::is_same_v<T, LimitedFov>) return apply_limited_fov(scene, s.min_deg, s.max_deg);
            else if constexpr (std::is_same_v<T, ObjectFailure>) return apply_object_failure(scene, s.rate, s.seed);
            else if constexpr (std::is_same_v<T, ViewDrop>) return apply_view_drop(scene, s.views);
            else return apply_occlusion(scene, s.rects);
        },
        spec);
}

namespace {

std::vector<int> parse_view_list(const std::string& text) {
    std::vector<int> views;
    std::string item;
    auto flush = [&](const std::string& tok) {
        if (tok.empty()) throw ConfigError("empty view index in list");
        const std::size_t dash = tok.find('-');
        if (dash != std::string::npos && dash > 0) {
            const int a = std::stoi(tok.substr(0, dash));
            const int b = std::stoi(tok.substr(dash + 1));
            if (b < a) throw ConfigError("bad view range: " + tok);
            for (int v = a; v <= b; ++v) views.push_back(v);
        } else {
            views.push_back(std::stoi(tok));
        }
    };
    std::string tok;
    for (char ch : text) {
        if (ch == ',' || ch == '+') {
            flush(tok);
            tok.clear();
        } else {
            tok += ch;
        }
    }
    flush(tok);
    return views;
}

}  // namespace

CorruptionSpec parse_corruption_spec(const std::string& text) {
    if (text.empty() || text == "clean") return NoCorruption{};
    if (text == "lidardrop") return LidarDrop{};
    const std::size_t eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("bad corruption spec: " + text);
    const std::string key = text.substr(0, eq);
    const std::string val = text.substr(eq + 1);
    try {
        if (key == "beams") {
            BeamReduction b;
            b.kept_beams = std::stoi(val);
            check_kept_beams(b.kept_beams);
            return b;
        }
        if (key == "fov") {
            const std::size_t colon = val.find(':', 1);  // minimum may be negative
            if (colon == std::string::npos) throw ConfigError("fov needs min:max: " + text);
            LimitedFov f;
            f.min_deg = std::stod(val.substr(0, colon));
            f.max_deg = std::stod(val.substr(colon + 1));
            if (!(f.min_deg < f.max_deg) || f.min_deg < -180.0 || f.max_deg > 180.0)
                throw ConfigError("bad fov interval: " + text);
            return f;
        }
        if (key == "objfail") {
            ObjectFailure o;
            const std::size_t at = val.find('@');
            o.rate = std::stod(val.substr(0, at));
            if (o.rate < 0.0 || o.rate > 1.0) throw ConfigError("objfail rate outside [0,1]");
            if (at != std::string::npos) {
                std::string s = val.substr(at + 1);
                if (s.rfind("seed", 0) == 0) s = s.substr(4);
                o.seed = static_cast<std::uint64_t>(std::stoull(s));
            }
            return o;
        }
        if (key == "viewdrop") {
            ViewDrop v;
            v.views = parse_view_list(val);
            return v;
        }
        if (key == "occl") {
            Occlusion o;
            o.source_file = val;  // rectangles loaded by the I/O layer
            return o;
        }
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        throw ConfigError("bad corruption spec: " + text);
    }
    throw ConfigError("unknown corruption kind: " + key);
}

std::string corruption_spec_string(const CorruptionSpec& spec) {
    char buf[128];
    return std::visit(
        [&](const auto& s) -> std::string {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, NoCorruption>) return "clean";
            else if constexpr (std::is_same_v<T, BeamReduction>) return "beams=" + std::to_string(s.kept_beams);
            else if constexpr (std::is_same_v<T, LidarDrop>) return "lidardrop";
            else if constexpr (std::is_same_v<T, LimitedFov>) {
                std::snprintf(buf, sizeof(buf), "fov=%g:%g", s.min_deg, s.max_deg);
                return buf;
            } else if constexpr (std::is_same_v<T, ObjectFailure>) {
                std::snprintf(buf, sizeof(buf), "objfail=%g@%llu", s.rate,
                              static_cast<unsigned long long>(s.seed));
                return buf;
            } else if constexpr (std::is_same_v<T, ViewDrop>) {
                std::string out = "viewdrop=";
                for (std::size_t i = 0; i < s.views.size(); ++i) {
                    if (i) out += ",";
                    out += std::to_string(s.views[static_cast<std::size_t>(i)]);
                }
                return out;
            } else {
                return "occl=" + s.source_file;
            }
        },
        spec);
}

}  // namespace mome
