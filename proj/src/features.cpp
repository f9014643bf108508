#include "mome/features.hpp"

#include <algorithm>
#include <cmath>

namespace mome {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

FeatureLayout make_layout(const ExperimentConfig& cfg) {
    FeatureLayout l;
    l.bev_cells = cfg.geometry.bev_cells;
    l.views = cfg.geometry.cam_views;
    l.cam_h = cfg.geometry.cam_feat_h;
    l.cam_w = cfg.geometry.cam_feat_w;
    l.dim = cfg.model.dim;
    return l;
}

std::vector<double> bev_stats(const Scene& scene, const BevGrid& grid) {
    const int cells = grid.cells;
    const std::size_t n = static_cast<std::size_t>(cells) * cells;
    std::vector<int> count(n, 0);
    std::vector<double> sum_z(n, 0.0);
    std::vector<double> max_z(n, 0.0);
    for (const LidarPoint& p : scene.points) {
        const BevCell c = bev_cell(p.x, p.y, grid);
        if (!c.in_grid) continue;
        const std::size_t i = static_cast<std::size_t>(c.row) * cells + c.col;
        if (count[i] == 0 || p.z > max_z[i]) max_z[i] = p.z;
        sum_z[i] += p.z;
        ++count[i];
    }
    std::vector<double> stats(n * kBevStats, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (count[i] == 0) continue;
        stats[i * kBevStats + 0] = std::log1p(static_cast<double>(count[i]));
        stats[i * kBevStats + 1] = sum_z[i] / count[i];
        stats[i * kBevStats + 2] = max_z[i];
        stats[i * kBevStats + 3] = 1.0;
    }
    return stats;
}

std::vector<double> camera_stats(const Scene& scene) {
    const CameraRig& rig = scene.rig;
    const int vl = rig.feat_h * rig.feat_w;
    std::vector<double> stats(static_cast<std::size_t>(rig.views) * vl * kCamStats, 0.0);
    const double scale = static_cast<double>(rig.feat_h) / rig.image_h;
    const double cell_px = 1.0 / scale;

    for (int v = 0; v < rig.views; ++v) {
        if (scene.view_dropped(v)) continue;
        const auto& m = rig.lidar2img[static_cast<std::size_t>(v)];
        for (const GtBox& box : scene.boxes) {
            // visible corners, occlusion rectangles hide corners
            double u0 = 1e30, v0 = 1e30, u1 = -1e30, v1 = -1e30;
            double depth_sum = 0.0;
            int visible = 0;
            for (const auto& corner : box_corners(box)) {
                const double hx = m[0] * corner[0] + m[1] * corner[1] + m[2] * corner[2] + m[3];
                const double hy = m[4] * corner[0] + m[5] * corner[1] + m[6] * corner[2] + m[7];
                const double hz = m[8] * corner[0] + m[9] * corner[1] + m[10] * corner[2] + m[11];
                if (!(hz > 0.0)) continue;
                const double u = hx / std::max(hz, 1e-5);
                const double vv = hy / std::max(hz, 1e-5);
                if (u < 0.0 || u >= rig.image_w || vv < 0.0 || vv >= rig.image_h) continue;
                bool occluded = false;
                for (const OcclusionRect& r : scene.occlusions)
                    if (r.view == v && r.contains(u, vv)) {
                        occluded = true;
                        break;
                    }
                if (occluded) continue;
                u0 = std::min(u0, u);
                u1 = std::max(u1, u);
                v0 = std::min(v0, vv);
                v1 = std::max(v1, vv);
                depth_sum += hz;
                ++visible;
            }
            if (visible == 0) continue;
            const double invd = 1.0 / std::max(depth_sum / visible, 1e-5);
            const double theta = 2.0 * kPi * box.class_id / 10.0;
            const double code_a = std::cos(theta);
            const double code_b = std::sin(theta);
            // rasterize the pixel rectangle onto feature cells
            const int c0 = std::max(0, static_cast<int>(std::floor(u0 / cell_px)));
            const int c1 = std::min(rig.feat_w - 1, static_cast<int>(std::floor(u1 / cell_px)));
            const int r0 = std::max(0, static_cast<int>(std::floor(v0 / cell_px)));
            const int r1 = std::min(rig.feat_h - 1, static_cast<int>(std::floor(v1 / cell_px)));
            for (int r = r0; r <= r1; ++r) {
                const double cell_v0 = r * cell_px, cell_v1 = (r + 1) * cell_px;
                const double ov = std::min(v1, cell_v1) - std::max(v0, cell_v0);
                if (ov <= 0.0) continue;
                for (int c = c0; c <= c1; ++c) {
                    const double cell_u0 = c * cell_px, cell_u1 = (c + 1) * cell_px;
                    const double ou = std::min(u1, cell_u1) - std::max(u0, cell_u0);
                    if (ou <= 0.0) continue;
                    const double coverage = (ou * ov) / (cell_px * cell_px);
                    double* s = stats.data() +
                                (static_cast<std::size_t>(v) * vl + static_cast<std::size_t>(r) * rig.feat_w + c) * kCamStats;
                    s[0] += coverage;
                    s[1] = std::max(s[1], invd);
                    s[2] += coverage * code_a;
                    s[3] += coverage * code_b;
                }
            }
        }
    }
    return stats;
}

void init_encoder_params(ParamStore& params, int dim, Rng& rng) {
    auto xavier = [&](int fin, int fout) {
        const double a = std::sqrt(6.0 / (fin + fout));
        std::vector<double> w(static_cast<std::size_t>(fin) * fout);
        for (double& v : w) v = rng.uniform(-a, a);
        return w;
    };
    params.add("enc.bev.w", {kBevStats, dim}, xavier(kBevStats, dim));
    params.add("enc.bev.b", {dim}, std::vector<double>(static_cast<std::size_t>(dim), 0.0));
    params.add("enc.cam.w", {kCamStats, dim}, xavier(kCamStats, dim));
    params.add("enc.cam.b", {dim}, std::vector<double>(static_cast<std::size_t>(dim), 0.0));
}

Tensor encode_bev(Tape& tape, Binding& binding, ParamStore& params, const Scene& scene,
                  const ExperimentConfig& cfg) {
    const BevGrid grid = cfg.geometry.grid();
    std::vector<double> stats = bev_stats(scene, grid);
    const int n = grid.cells * grid.cells;
    Tensor s = tape.leaf({n, kBevStats}, std::move(stats));
    Tensor w = binding.use(params.at("enc.bev.w"));
    Tensor b = binding.use(params.at("enc.bev.b"));
    return tanh_op(add_rowvec(matmul(s, w), b));
}

Tensor encode_cameras(Tape& tape, Binding& binding, ParamStore& params, const Scene& scene) {
    std::vector<double> stats = camera_stats(scene);
    const int n = scene.rig.views * scene.rig.feat_h * scene.rig.feat_w;
    Tensor s = tape.leaf({n, kCamStats}, std::move(stats));
    Tensor w = binding.use(params.at("enc.cam.w"));
    Tensor b = binding.use(params.at("enc.cam.b"));
    return add_rowvec(matmul(s, w), b);
}

FeatureBundle flatten_concat(const Tensor& bev, const Tensor& cams, const FeatureLayout& layout) {
    if (bev.rows() != layout.bev_len() || cams.rows() != layout.cam_len() ||
        bev.cols() != layout.dim || cams.cols() != layout.dim)
        throw DimensionError("flatten_concat: block shapes do not match layout");
    std::array<Tensor, 2> parts{bev, cams};
    FeatureBundle out;
    out.layout = layout;
    out.flat = concat_rows(parts);
    return out;
}

FeatureBundle encode_features(Tape& tape, Binding& binding, ParamStore& params,
                              const Scene& scene, const ExperimentConfig& cfg) {
    FeatureLayout layout = make_layout(cfg);
    Tensor bev = encode_bev(tape, binding, params, scene, cfg);
    Tensor cams = encode_cameras(tape, binding, params, scene);
    return flatten_concat(bev, cams, layout);
}

void sinusoidal_fill(std::span<double> out, std::span<const double> coords01) {
    const int dim = static_cast<int>(out.size());
    const int ncoords = static_cast<int>(coords01.size());
    for (int d = 0; d < dim; ++d) {
        const int i = d / 2;
        const double coord = coords01[static_cast<std::size_t>(i % ncoords)];
        const int band = i / ncoords;
        const double omega = kPi * std::pow(2.0, static_cast<double>(band));
        const double angle = coord * omega;
        out[static_cast<std::size_t>(d)] = (d % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
}

std::vector<double> feature_pos_encoding(const FeatureLayout& layout) {
    std::vector<double> pe(static_cast<std::size_t>(layout.total()) * layout.dim);
    std::size_t row = 0;
    for (int r = 0; r < layout.bev_cells; ++r)
        for (int c = 0; c < layout.bev_cells; ++c, ++row) {
            const double coords[2] = {(r + 0.5) / layout.bev_cells, (c + 0.5) / layout.bev_cells};
            sinusoidal_fill({pe.data() + row * layout.dim, static_cast<std::size_t>(layout.dim)},
                            coords);
        }
    for (int v = 0; v < layout.views; ++v)
        for (int r = 0; r < layout.cam_h; ++r)
            for (int c = 0; c < layout.cam_w; ++c, ++row) {
                const double coords[2] = {
                    (v * layout.cam_h + r + 0.5) / (layout.views * layout.cam_h),
                    (c + 0.5) / layout.cam_w};
                sinusoidal_fill({pe.data() + row * layout.dim, static_cast<std::size_t>(layout.dim)},
                                coords);
            }
    return pe;
}

std::vector<double> query_pos_encoding(std::span<const std::array<double, 3>> refs, int dim) {
    std::vector<double> pe(refs.size() * static_cast<std::size_t>(dim));
    for (std::size_t i = 0; i < refs.size(); ++i)
        sinusoidal_fill({pe.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)},
                        refs[i]);
    return pe;
}

}  // namespace mome
