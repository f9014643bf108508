#include "mome/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mome/common.hpp"

namespace mome {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Value {
    enum Kind { Int, Float, Bool, Str, FloatList } kind = Int;
    long long i = 0;
    double f = 0.0;
    bool b = false;
    std::string s;
    std::vector<double> list;
};

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

Value parse_value(const std::string& raw, const std::string& where) {
    Value v;
    std::string s = trim(raw);
    if (s.empty()) throw ConfigError("empty value for " + where);
    if (s == "true" || s == "false") {
        v.kind = Value::Bool;
        v.b = (s == "true");
        return v;
    }
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"') throw ConfigError("unterminated string for " + where);
        v.kind = Value::Str;
        v.s = s.substr(1, s.size() - 2);
        return v;
    }
    if (s.front() == '[') {
        if (s.back() != ']') throw ConfigError("unterminated array for " + where);
        v.kind = Value::FloatList;
        std::string inner = s.substr(1, s.size() - 2);
        std::stringstream ss(inner);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            try {
                v.list.push_back(std::stod(item));
            } catch (...) {
                throw ConfigError("bad array element '" + item + "' for " + where);
            }
        }
        return v;
    }
    // number: integer when it round-trips without '.', 'e'
    bool looks_float = s.find_first_of(".eE") != std::string::npos;
    try {
        if (!looks_float) {
            std::size_t pos = 0;
            v.i = std::stoll(s, &pos);
            if (pos != s.size()) throw std::invalid_argument("trail");
            v.kind = Value::Int;
            v.f = static_cast<double>(v.i);
            return v;
        }
        std::size_t pos = 0;
        v.f = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trail");
        v.kind = Value::Float;
        return v;
    } catch (...) {
        throw ConfigError("bad value '" + s + "' for " + where);
    }
}

// One mutable binding per known key.
struct Field {
    std::function<void(const Value&, const std::string&)> set;
    std::function<std::string()> get;
};

std::map<std::string, Field> field_table(ExperimentConfig& c) {
    std::map<std::string, Field> t;
    auto num = [](const Value& v, const std::string& where) -> double {
        if (v.kind != Value::Int && v.kind != Value::Float)
            throw ConfigError("expected a number for " + where);
        return v.kind == Value::Int ? static_cast<double>(v.i) : v.f;
    };
    auto add_int = [&](const std::string& key, int& ref) {
        t[key] = Field{[&ref, num](const Value& v, const std::string& w) {
                           if (v.kind != Value::Int) throw ConfigError("expected an integer for " + w);
                           ref = static_cast<int>(v.i);
                           (void)num;
                       },
                       [&ref] { return std::to_string(ref); }};
    };
    auto add_u64 = [&](const std::string& key, std::uint64_t& ref) {
        t[key] = Field{[&ref](const Value& v, const std::string& w) {
                           if (v.kind != Value::Int || v.i < 0)
                               throw ConfigError("expected a non-negative integer for " + w);
                           ref = static_cast<std::uint64_t>(v.i);
                       },
                       [&ref] { return std::to_string(ref); }};
    };
    auto add_double = [&](const std::string& key, double& ref) {
        t[key] = Field{[&ref, num](const Value& v, const std::string& w) { ref = num(v, w); },
                       [&ref] { return fmt_double(ref); }};
    };
    auto add_bool = [&](const std::string& key, bool& ref) {
        t[key] = Field{[&ref](const Value& v, const std::string& w) {
                           if (v.kind != Value::Bool) throw ConfigError("expected true/false for " + w);
                           ref = v.b;
                       },
                       [&ref] { return std::string(ref ? "true" : "false"); }};
    };
    auto add_str = [&](const std::string& key, std::string& ref) {
        t[key] = Field{[&ref](const Value& v, const std::string& w) {
                           if (v.kind != Value::Str) throw ConfigError("expected a string for " + w);
                           ref = v.s;
                       },
                       [&ref] { return "\"" + ref + "\""; }};
    };
    auto add_vec3 = [&](const std::string& key, std::array<double, 3>& ref) {
        t[key] = Field{[&ref](const Value& v, const std::string& w) {
                           if (v.kind != Value::FloatList || v.list.size() != 3)
                               throw ConfigError("expected a 3-element array for " + w);
                           for (int i = 0; i < 3; ++i) ref[static_cast<std::size_t>(i)] = v.list[static_cast<std::size_t>(i)];
                       },
                       [&ref] {
                           return "[" + fmt_double(ref[0]) + ", " + fmt_double(ref[1]) + ", " +
                                  fmt_double(ref[2]) + "]";
                       }};
    };
    auto add_dlist = [&](const std::string& key, std::vector<double>& ref) {
        t[key] = Field{[&ref](const Value& v, const std::string& w) {
                           if (v.kind != Value::FloatList || v.list.empty())
                               throw ConfigError("expected a non-empty array for " + w);
                           ref = v.list;
                       },
                       [&ref] {
                           std::string s = "[";
                           for (std::size_t i = 0; i < ref.size(); ++i) {
                               if (i) s += ", ";
                               s += fmt_double(ref[i]);
                           }
                           return s + "]";
                       }};
    };

    add_vec3("geometry.pc_range_min", c.geometry.range.min);
    add_vec3("geometry.pc_range_max", c.geometry.range.max);
    add_int("geometry.bev_cells", c.geometry.bev_cells);
    add_int("geometry.cam_views", c.geometry.cam_views);
    add_int("geometry.cam_feat_h", c.geometry.cam_feat_h);
    add_int("geometry.cam_feat_w", c.geometry.cam_feat_w);
    add_int("geometry.image_h", c.geometry.image_h);
    add_int("geometry.image_w", c.geometry.image_w);
    add_double("geometry.cam_hfov_deg", c.geometry.cam_hfov_deg);
    add_int("geometry.window_bev", c.geometry.window_bev);
    add_int("geometry.window_cam", c.geometry.window_cam);

    add_int("model.dim", c.model.dim);
    add_int("model.queries", c.model.queries);
    add_int("model.layers", c.model.layers);
    add_int("model.heads", c.model.heads);
    add_int("model.classes", c.model.classes);
    add_int("model.ffn_mult", c.model.ffn_mult);
    add_bool("model.share_layers", c.model.share_layers);
    add_str("model.router_mask", c.model.router_mask);

    add_int("scene.min_boxes", c.scene.min_boxes);
    add_int("scene.max_boxes", c.scene.max_boxes);
    add_int("scene.bg_azimuth_steps", c.scene.bg_azimuth_steps);
    add_double("scene.ground_z", c.scene.ground_z);
    add_double("scene.point_density", c.scene.point_density);
    add_int("scene.max_points_per_box", c.scene.max_points_per_box);

    add_double("train.lr", c.train.lr);
    add_int("train.stage1_steps", c.train.stage1_steps);
    add_int("train.stage2_steps", c.train.stage2_steps);
    add_int("train.batch", c.train.batch);
    add_u64("train.seed", c.train.seed);
    add_int("train.scenes", c.train.scenes);
    add_int("train.holdout", c.train.holdout);
    add_str("train.optimizer", c.train.optimizer);
    add_double("train.lambda_cls", c.train.lambda_cls);
    add_double("train.lambda_box", c.train.lambda_box);
    add_double("train.focal_alpha", c.train.focal_alpha);
    add_double("train.focal_gamma", c.train.focal_gamma);

    add_dlist("eval.thresholds", c.eval.thresholds);
    add_double("eval.score_floor", c.eval.score_floor);

    add_str("io.rig_file", c.rig_file);
    return t;
}

// Canonical section/key ordering for serialization and hashing.
const std::vector<std::pair<std::string, std::vector<std::string>>>& canonical_keys() {
    static const std::vector<std::pair<std::string, std::vector<std::string>>> order = {
        {"geometry",
         {"pc_range_min", "pc_range_max", "bev_cells", "cam_views", "cam_feat_h", "cam_feat_w",
          "image_h", "image_w", "cam_hfov_deg", "window_bev", "window_cam"}},
        {"model",
         {"dim", "queries", "layers", "heads", "classes", "ffn_mult", "share_layers",
          "router_mask"}},
        {"scene",
         {"min_boxes", "max_boxes", "bg_azimuth_steps", "ground_z", "point_density",
          "max_points_per_box"}},
        {"train",
         {"lr", "stage1_steps", "stage2_steps", "batch", "seed", "scenes", "holdout", "optimizer",
          "lambda_cls", "lambda_box", "focal_alpha", "focal_gamma"}},
        {"eval", {"thresholds", "score_floor"}},
        {"io", {"rig_file"}},
    };
    return order;
}

}  // namespace

void ExperimentConfig::validate() const {
    geometry.range.validate();
    if (geometry.bev_cells <= 0) throw ConfigError("bev_cells must be positive");
    if (geometry.cam_views <= 0) throw ConfigError("cam_views must be positive");
    if (geometry.window_bev % 2 == 0 || geometry.window_cam % 2 == 0 ||
        geometry.window_bev <= 0 || geometry.window_cam <= 0)
        throw ConfigError("attention window sizes must be odd and positive");
    const double sy = static_cast<double>(geometry.cam_feat_h) / geometry.image_h;
    const double sx = static_cast<double>(geometry.cam_feat_w) / geometry.image_w;
    if (std::abs(sy - sx) > 1e-12) throw ConfigError("camera feature scale must be uniform");
    if (model.dim <= 0 || model.heads <= 0 || model.dim % model.heads != 0)
        throw ConfigError("heads must divide model dim");
    if (model.queries <= 0 || model.layers <= 0 || model.ffn_mult <= 0)
        throw ConfigError("model dims must be positive");
    if (model.classes < 1 || model.classes > 10)
        throw ConfigError("classes must lie in [1,10]");
    if (model.router_mask != "lam" && model.router_mask != "global")
        throw ConfigError("router_mask must be \"lam\" or \"global\"");
    if (scene.min_boxes < 0 || scene.max_boxes < scene.min_boxes)
        throw ConfigError("box count bounds invalid");
    if (train.batch <= 0 || train.scenes <= 0) throw ConfigError("train sizes must be positive");
    if (train.optimizer != "adam" && train.optimizer != "sgd")
        throw ConfigError("optimizer must be \"adam\" or \"sgd\"");
    if (eval.thresholds.empty()) throw ConfigError("eval thresholds must be non-empty");
    for (std::size_t i = 1; i < eval.thresholds.size(); ++i)
        if (eval.thresholds[i] <= eval.thresholds[i - 1])
            throw ConfigError("eval thresholds must be sorted ascending");
}

std::string ExperimentConfig::canonical_text() const {
    auto& self = const_cast<ExperimentConfig&>(*this);
    auto table = field_table(self);
    std::string out;
    for (const auto& [section, keys] : canonical_keys()) {
        out += "[" + section + "]\n";
        for (const auto& key : keys) {
            const std::string full = section + "." + key;
            out += key + " = " + table.at(full).get() + "\n";
        }
        out += "\n";
    }
    return out;
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(canonical_text()); }
std::string ExperimentConfig::hash_hex() const { return hex_u64(hash()); }

CameraRig ExperimentConfig::default_rig() const {
    return make_default_rig(geometry.cam_views, geometry.image_h, geometry.image_w,
                            geometry.cam_feat_h, geometry.cam_feat_w, geometry.cam_hfov_deg);
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    auto table = field_table(cfg);
    std::stringstream ss(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::size_t hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("bad section header at line " + std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key = value at line " + std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string full = section.empty() ? key : section + "." + key;
        auto it = table.find(full);
        if (it == table.end()) throw ConfigError("unknown config key: " + full);
        it->second.set(parse_value(line.substr(eq + 1), full), full);
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
    // no validate here: related keys (e.g. both camera feature dims) may
    // arrive as consecutive overrides; consumers validate the final config
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must look like section.key=value: " + assignment);
    const std::string key = trim(assignment.substr(0, eq));
    auto table = field_table(cfg);
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key: " + key);
    it->second.set(parse_value(assignment.substr(eq + 1), key), key);
}

}  // namespace mome
