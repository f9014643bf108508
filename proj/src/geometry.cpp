#include "mome/geometry.hpp"

#include <cmath>

namespace mome {

void PcRange::validate() const {
    for (int i = 0; i < 3; ++i)
        if (!(max[static_cast<std::size_t>(i)] > min[static_cast<std::size_t>(i)]))
            throw ConfigError("pc range max must exceed min on every axis");
}

void CameraRig::validate() const {
    if (views <= 0) throw ConfigError("camera rig needs at least one view");
    if (static_cast<int>(lidar2img.size()) != views)
        throw ConfigError("camera rig matrix count does not match views");
    if (image_h <= 0 || image_w <= 0 || feat_h <= 0 || feat_w <= 0)
        throw ConfigError("camera rig sizes must be positive");
    const double sy = static_cast<double>(feat_h) / image_h;
    const double sx = static_cast<double>(feat_w) / image_w;
    if (std::abs(sy - sx) > 1e-12)
        throw ConfigError("feature-to-image scale must be uniform");
    for (const auto& m : lidar2img)
        for (double v : m)
            if (!std::isfinite(v)) throw ConfigError("camera matrix has non-finite entries");
}

int LocalAttentionMask::unblocked_count(int q) const {
    const std::uint8_t* row = blocked_.data() + static_cast<std::size_t>(q) * positions_;
    int n = 0;
    for (int p = 0; p < positions_; ++p) n += (row[p] == 0);
    return n;
}

std::uint64_t LocalAttentionMask::unblocked_total() const {
    std::uint64_t n = 0;
    for (std::uint8_t b : blocked_) n += (b == 0);
    return n;
}

std::array<double, 3> denormalize_reference(const std::array<double, 3>& ref01,
                                            const PcRange& range) {
    std::array<double, 3> out{};
    for (int i = 0; i < 3; ++i) {
        const double r = ref01[static_cast<std::size_t>(i)];
        if (!(r >= 0.0 && r <= 1.0))
            throw DomainError("reference component outside [0,1]");
        out[static_cast<std::size_t>(i)] =
            r * range.extent(i) + range.min[static_cast<std::size_t>(i)];
    }
    return out;
}

BevCell bev_cell(double x, double y, const BevGrid& grid) {
    // Scale factor applied after the shift, matching cells/extent division
    // order; this keeps exact-cell-boundary inputs on the expected side.
    const double sx = grid.cells / grid.range.extent(0);
    const double sy = grid.cells / grid.range.extent(1);
    BevCell c;
    c.row = static_cast<int>(std::floor((y - grid.range.min[1]) * sy));
    c.col = static_cast<int>(std::floor((x - grid.range.min[0]) * sx));
    c.in_grid = c.row >= 0 && c.row < grid.cells && c.col >= 0 && c.col < grid.cells;
    return c;
}

void project_to_camera(const std::array<double, 3>& xyz, const CameraRig& rig,
                       ProjectedQuery& out) {
    out.cam_valid = false;
    out.cam_view = -1;
    const double scale = static_cast<double>(rig.feat_h) / rig.image_h;
    for (int v = 0; v < rig.views; ++v) {
        const auto& m = rig.lidar2img[static_cast<std::size_t>(v)];
        const double hx = m[0] * xyz[0] + m[1] * xyz[1] + m[2] * xyz[2] + m[3];
        const double hy = m[4] * xyz[0] + m[5] * xyz[1] + m[6] * xyz[2] + m[7];
        const double hz = m[8] * xyz[0] + m[9] * xyz[1] + m[10] * xyz[2] + m[11];
        if (!(hz > 0.0)) continue;
        const double depth = std::max(hz, 1e-5);
        const double u = hx / depth;
        const double vpix = hy / depth;
        if (u < 0.0 || u >= rig.image_w || vpix < 0.0 || vpix >= rig.image_h) continue;
        out.cam_valid = true;
        out.cam_view = v;
        out.cam_row = static_cast<int>(std::floor(vpix * scale));
        out.cam_col = static_cast<int>(std::floor(u * scale));
        return;  // first valid view wins
    }
}

ProjectedQuery project_query(const std::array<double, 3>& xyz, const BevGrid& grid,
                             const CameraRig& rig) {
    ProjectedQuery p;
    p.bev = bev_cell(xyz[0], xyz[1], grid);
    project_to_camera(xyz, rig, p);
    return p;
}

LocalAttentionMask build_local_attention_mask(std::span<const ProjectedQuery> projected,
                                              const BevGrid& grid, const CameraRig& rig,
                                              int l_bev, int l_cam) {
    if (l_bev <= 0 || l_bev % 2 == 0 || l_cam <= 0 || l_cam % 2 == 0)
        throw ConfigError("attention window sizes must be odd and positive");
    const int bev_len = grid.cells * grid.cells;
    const int view_len = rig.feat_h * rig.feat_w;
    const int positions = bev_len + rig.views * view_len;
    LocalAttentionMask mask(static_cast<int>(projected.size()), positions);

    const int hb = l_bev / 2;
    const int hc = l_cam / 2;
    for (int q = 0; q < static_cast<int>(projected.size()); ++q) {
        const ProjectedQuery& p = projected[static_cast<std::size_t>(q)];
        if (p.bev.in_grid) {
            for (int dr = -hb; dr <= hb; ++dr) {
                const int r = p.bev.row + dr;
                if (r < 0 || r >= grid.cells) continue;
                for (int dc = -hb; dc <= hb; ++dc) {
                    const int c = p.bev.col + dc;
                    if (c < 0 || c >= grid.cells) continue;
                    mask.unblock(q, r * grid.cells + c);
                }
            }
        }
        if (p.cam_valid) {
            const int base = bev_len + p.cam_view * view_len;
            for (int dr = -hc; dr <= hc; ++dr) {
                const int r = p.cam_row + dr;
                if (r < 0 || r >= rig.feat_h) continue;
                for (int dc = -hc; dc <= hc; ++dc) {
                    const int c = p.cam_col + dc;
                    if (c < 0 || c >= rig.feat_w) continue;
                    mask.unblock(q, base + r * rig.feat_w + c);
                }
            }
        }
    }
    return mask;
}

CameraRig make_default_rig(int views, int image_h, int image_w, int feat_h, int feat_w,
                           double hfov_deg) {
    CameraRig rig;
    rig.views = views;
    rig.image_h = image_h;
    rig.image_w = image_w;
    rig.feat_h = feat_h;
    rig.feat_w = feat_w;
    const double f = (image_w / 2.0) / std::tan(hfov_deg * M_PI / 180.0 / 2.0);
    const double cx = image_w / 2.0;
    const double cy = image_h / 2.0;
    for (int v = 0; v < views; ++v) {
        const double yaw = 2.0 * M_PI * v / views;
        // camera axes in the LiDAR frame: z outward along azimuth, x right,
        // y down; world->camera rotation rows are those axes
        const double zx = std::cos(yaw), zy = std::sin(yaw);
        const double xx = std::sin(yaw), xy = -std::cos(yaw);
        // K * [R | 0] laid out as a 4x4
        std::array<double, 16> m{};
        m[0] = f * xx + cx * zx;
        m[1] = f * xy + cx * zy;
        m[2] = 0.0;
        m[3] = 0.0;
        m[4] = cy * zx;
        m[5] = cy * zy;
        m[6] = -f;  // y_cam = (0,0,-1): image v grows as z drops
        m[7] = 0.0;
        m[8] = zx;
        m[9] = zy;
        m[10] = 0.0;
        m[11] = 0.0;
        m[15] = 1.0;
        rig.lidar2img.push_back(m);
    }
    rig.validate();
    return rig;
}

}  // namespace mome
