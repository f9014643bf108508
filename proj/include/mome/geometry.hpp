#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mome/common.hpp"
#include "mome/tensor.hpp"

namespace mome {

/// Metric extent of the point-cloud volume, in meters.
struct PcRange {
    std::array<double, 3> min{-54.0, -54.0, -5.0};
    std::array<double, 3> max{54.0, 54.0, 3.0};
    double extent(int axis) const { return max[static_cast<std::size_t>(axis)] - min[static_cast<std::size_t>(axis)]; }
    void validate() const;
};

/// Calibrated multi-view rig. lidar2img maps homogeneous points in the
/// LiDAR frame to (u*depth, v*depth, depth, 1); feature-to-image scale is
/// uniform (feat_h / image_h == feat_w / image_w).
struct CameraRig {
    int views = 6;
    int image_h = 640;
    int image_w = 1600;
    int feat_h = 40;
    int feat_w = 100;
    std::vector<std::array<double, 16>> lidar2img;  // row-major 4x4 per view
    void validate() const;
};

/// Square BEV grid spanning the x/y footprint of a PcRange.
struct BevGrid {
    int cells = 180;
    PcRange range;
    double cell_size() const { return range.extent(0) / cells; }
};

struct BevCell {
    int row = -1;
    int col = -1;
    bool in_grid = false;
};

struct ProjectedQuery {
    BevCell bev;
    bool cam_valid = false;
    int cam_view = -1;
    int cam_row = -1;
    int cam_col = -1;
};

/// Per-query boolean rows over all flattened feature positions, BEV block
/// first, then camera views in index order (row-major within each view).
/// true = attention blocked.
class LocalAttentionMask {
  public:
    LocalAttentionMask(int queries, int positions)
        : queries_(queries), positions_(positions),
          blocked_(static_cast<std::size_t>(queries) * positions, 1) {}

    int queries() const { return queries_; }
    int positions() const { return positions_; }
    bool blocked(int q, int p) const {
        return blocked_[static_cast<std::size_t>(q) * positions_ + p] != 0;
    }
    void unblock(int q, int p) { blocked_[static_cast<std::size_t>(q) * positions_ + p] = 0; }
    int unblocked_count(int q) const;
    std::uint64_t unblocked_total() const;
    const std::uint8_t* data() const { return blocked_.data(); }
    AttnMask view() const { return AttnMask{blocked_.data(), queries_, positions_}; }
    bool row_fully_blocked(int q) const { return unblocked_count(q) == 0; }

  private:
    int queries_;
    int positions_;
    std::vector<std::uint8_t> blocked_;
};

/// Maps a reference point in [0,1]^3 to meters; components outside [0,1]
/// raise DomainError.
std::array<double, 3> denormalize_reference(const std::array<double, 3>& ref01, const PcRange& range);

/// row from y, col from x: floor((coord - min) * cells/extent), flagged
/// out-of-grid when either index leaves [0, cells).
BevCell bev_cell(double x, double y, const BevGrid& grid);

/// Projects a metric point into the first camera view (lowest index) whose
/// image contains it with positive depth; returns the feature cell. The
/// perspective divide clamps depth below at 1e-5.
void project_to_camera(const std::array<double, 3>& xyz, const CameraRig& rig, ProjectedQuery& out);

ProjectedQuery project_query(const std::array<double, 3>& xyz, const BevGrid& grid, const CameraRig& rig);

/// Window sizes must be odd. Per query: unblocks the l_bev x l_bev BEV
/// window around its BEV cell (clipped, no wrap-around) and the
/// l_cam x l_cam window around its camera cell within that single view.
/// Out-of-grid BEV or no visible camera leaves the block fully masked.
LocalAttentionMask build_local_attention_mask(std::span<const ProjectedQuery> projected,
                                              const BevGrid& grid, const CameraRig& rig,
                                              int l_bev, int l_cam);

/// Outward-facing ring of `views` pinhole cameras at the LiDAR origin,
/// evenly spaced in azimuth, z-forward optics, principal point at the
/// image center.
CameraRig make_default_rig(int views, int image_h, int image_w, int feat_h, int feat_w,
                           double hfov_deg);

}  // namespace mome
