#include "mome/dataset_io.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace mome {

using nlohmann::json;

namespace {

json rig_to_json(const CameraRig& rig) {
    json views = json::array();
    for (const auto& m : rig.lidar2img) views.push_back(m);
    return json{{"views", rig.views},   {"image_h", rig.image_h}, {"image_w", rig.image_w},
                {"feat_h", rig.feat_h}, {"feat_w", rig.feat_w},   {"lidar2img", views}};
}

CameraRig rig_from_json(const json& j) {
    CameraRig rig;
    rig.views = j.at("views").get<int>();
    rig.image_h = j.at("image_h").get<int>();
    rig.image_w = j.at("image_w").get<int>();
    rig.feat_h = j.at("feat_h").get<int>();
    rig.feat_w = j.at("feat_w").get<int>();
    for (const auto& m : j.at("lidar2img")) rig.lidar2img.push_back(m.get<std::array<double, 16>>());
    rig.validate();
    return rig;
}

json scene_to_json(const Scene& scene) {
    json boxes = json::array();
    for (const GtBox& b : scene.boxes)
        boxes.push_back(json{{"c", b.center},
                             {"s", b.size},
                             {"yaw", b.yaw},
                             {"cls", b.class_id},
                             {"oid", b.object_id}});
    json points = json::array();
    for (const LidarPoint& p : scene.points)
        points.push_back(json::array({p.x, p.y, p.z, p.ring, p.owner}));
    json occl = json::array();
    for (const OcclusionRect& r : scene.occlusions)
        occl.push_back(json{{"view", r.view}, {"rect", std::array<double, 4>{r.u0, r.v0, r.u1, r.v1}}});
    return json{{"id", scene.id},
                {"seed", scene.seed},
                {"boxes", boxes},
                {"points", points},
                {"rig", rig_to_json(scene.rig)},
                {"dropped_views", scene.dropped_views},
                {"occlusions", occl}};
}

Scene scene_from_json(const json& j) {
    Scene scene;
    scene.id = j.at("id").get<int>();
    scene.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& b : j.at("boxes")) {
        GtBox box;
        box.center = b.at("c").get<std::array<double, 3>>();
        box.size = b.at("s").get<std::array<double, 3>>();
        box.yaw = b.at("yaw").get<double>();
        box.class_id = b.at("cls").get<int>();
        box.object_id = b.at("oid").get<int>();
        scene.boxes.push_back(box);
    }
    for (const auto& p : j.at("points")) {
        LidarPoint pt;
        pt.x = p.at(0).get<double>();
        pt.y = p.at(1).get<double>();
        pt.z = p.at(2).get<double>();
        pt.ring = p.at(3).get<int>();
        pt.owner = p.at(4).get<int>();
        pt.azimuth = std::atan2(pt.y, pt.x);
        scene.points.push_back(pt);
    }
    scene.rig = rig_from_json(j.at("rig"));
    scene.dropped_views = j.at("dropped_views").get<std::vector<int>>();
    for (const auto& o : j.at("occlusions")) {
        OcclusionRect r;
        r.view = o.at("view").get<int>();
        const auto rect = o.at("rect").get<std::array<double, 4>>();
        r.u0 = rect[0];
        r.v0 = rect[1];
        r.u1 = rect[2];
        r.v1 = rect[3];
        scene.occlusions.push_back(r);
    }
    return scene;
}

}  // namespace

void write_dataset(const std::string& path, const DatasetHeader& header,
                   std::span<const Scene> scenes) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write dataset: " + path);
    json h{{"kind", "mome.dataset"},
           {"schema", header.schema},
           {"config_hash", header.config_hash},
           {"corruption", header.corruption},
           {"count", static_cast<int>(scenes.size())}};
    out << h.dump() << "\n";
    for (const Scene& s : scenes) out << scene_to_json(s).dump() << "\n";
    if (!out) throw IoError("short write on dataset: " + path);
}

Dataset read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty dataset file: " + path);
    json h = json::parse(line, nullptr, false);
    if (h.is_discarded() || h.value("kind", "") != "mome.dataset")
        throw IoError("not a dataset file: " + path);
    Dataset ds;
    ds.header.schema = h.at("schema").get<int>();
    if (ds.header.schema != kDatasetSchema)
        throw IoError("unsupported dataset schema in " + path);
    ds.header.config_hash = h.value("config_hash", "");
    ds.header.corruption = h.value("corruption", "clean");
    ds.header.count = h.value("count", 0);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw IoError("bad scene record in " + path);
        ds.scenes.push_back(scene_from_json(j));
    }
    if (static_cast<int>(ds.scenes.size()) != ds.header.count)
        throw IoError("dataset count mismatch in " + path);
    return ds;
}

SceneCensus Dataset::census() const {
    SceneCensus c;
    c.scenes = static_cast<std::int64_t>(scenes.size());
    for (const Scene& s : scenes) {
        c.boxes += static_cast<std::int64_t>(s.boxes.size());
        c.points += static_cast<std::int64_t>(s.points.size());
    }
    return c;
}

void write_rig(const std::string& path, const CameraRig& rig) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write rig file: " + path);
    out << rig_to_json(rig).dump(2) << "\n";
}

CameraRig read_rig(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open rig file: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw IoError("bad rig JSON: " + path);
    return rig_from_json(j);
}

std::vector<OcclusionRect> read_occlusion_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open occlusion file: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_array()) throw IoError("bad occlusion JSON: " + path);
    std::vector<OcclusionRect> rects;
    for (const auto& o : j) {
        OcclusionRect r;
        r.view = o.at("view").get<int>();
        const auto rect = o.at("rect").get<std::array<double, 4>>();
        r.u0 = rect[0];
        r.v0 = rect[1];
        r.u1 = rect[2];
        r.v1 = rect[3];
        rects.push_back(r);
    }
    return rects;
}

namespace {

json result_to_json(const ScenarioResult& r) {
    json ap = json::object();
    for (const auto& [cls, by_thr] : r.metrics.ap) {
        json row = json::object();
        for (const auto& [thr, v] : by_thr) row[std::to_string(thr)] = v;
        ap[std::to_string(cls)] = row;
    }
    return json{{"scenario", r.scenario},
                {"method", r.method},
                {"mAP", r.metrics.mean_ap},
                {"NDS_lite", r.metrics.nds_lite},
                {"mATE", r.metrics.mate},
                {"mASE", r.metrics.mase},
                {"mAOE", r.metrics.maoe},
                {"ap", ap},
                {"routes",
                 {{"pct_lc", r.routes.pct_fused}, {"pct_l", r.routes.pct_lidar}, {"pct_c", r.routes.pct_camera}}}};
}

}  // namespace

void write_eval_csv(const std::string& path, std::span<const ScenarioResult> rows,
                    const std::string& config_hash) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path);
    out << "# config_hash=" << config_hash << "\n";
    out << "scenario,method,mAP,NDS_lite,mATE,mASE,mAOE,pct_lc,pct_l,pct_c\n";
    char buf[256];
    for (const ScenarioResult& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.3f,%.3f,%.3f\n",
                      r.scenario.c_str(), r.method.c_str(), r.metrics.mean_ap,
                      r.metrics.nds_lite, r.metrics.mate, r.metrics.mase, r.metrics.maoe,
                      r.routes.pct_fused, r.routes.pct_lidar, r.routes.pct_camera);
        out << buf;
    }
}

void write_eval_json(const std::string& path, std::span<const ScenarioResult> rows,
                     const std::string& config_hash, double perf_ratio_map,
                     double perf_ratio_nds) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path);
    json scenarios = json::array();
    for (const ScenarioResult& r : rows) scenarios.push_back(result_to_json(r));
    json j{{"kind", "mome.report"},
           {"config_hash", config_hash},
           {"scenarios", scenarios},
           {"perf_ratio_mAP", perf_ratio_map},
           {"perf_ratio_NDS", perf_ratio_nds}};
    out << j.dump(2) << "\n";
}

std::vector<PlotRow> read_report_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || j.value("kind", "") != "mome.report")
        throw IoError("not an eval report: " + path);
    std::vector<PlotRow> rows;
    for (const auto& s : j.at("scenarios")) {
        const std::string scenario = s.at("scenario").get<std::string>();
        const std::string method = s.at("method").get<std::string>();
        rows.push_back({scenario, method, "mAP", s.at("mAP").get<double>()});
        rows.push_back({scenario, method, "NDS_lite", s.at("NDS_lite").get<double>()});
    }
    return rows;
}

}  // namespace mome
