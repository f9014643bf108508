#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mome/corruption.hpp"
#include "mome/metrics.hpp"
#include "mome/scene.hpp"

namespace mome {

/// Newline-delimited scene records behind a versioned header line.
inline constexpr int kDatasetSchema = 1;

struct DatasetHeader {
    int schema = kDatasetSchema;
    std::string config_hash;
    std::string corruption = "clean";
    int count = 0;
};

void write_dataset(const std::string& path, const DatasetHeader& header,
                   std::span<const Scene> scenes);

struct Dataset {
    DatasetHeader header;
    std::vector<Scene> scenes;
    SceneCensus census() const;
};
Dataset read_dataset(const std::string& path);

/// Rig description file: per-view 4x4 row-major lidar2img plus image and
/// feature sizes.
void write_rig(const std::string& path, const CameraRig& rig);
CameraRig read_rig(const std::string& path);

std::vector<OcclusionRect> read_occlusion_file(const std::string& path);

/// Fully resolved scenario result for reports.
struct ScenarioResult {
    std::string scenario;
    std::string method;
    MetricsReport metrics;
    RouteStats routes;
};

void write_eval_csv(const std::string& path, std::span<const ScenarioResult> rows,
                    const std::string& config_hash);
void write_eval_json(const std::string& path, std::span<const ScenarioResult> rows,
                     const std::string& config_hash, double perf_ratio_map,
                     double perf_ratio_nds);

struct PlotRow {
    std::string scenario;
    std::string method;
    std::string metric;
    double value = 0.0;
};
/// Reads rows back from an eval JSON report.
std::vector<PlotRow> read_report_rows(const std::string& path);

}  // namespace mome
