#include "mome/capi.h"

#include <cstring>
#include <sstream>
#include <string>

#include "mome/common.hpp"
#include "mome/runner.hpp"

using namespace mome;

struct mome_config {
    ExperimentConfig cfg;
    std::string text_cache;
};

struct mome_model {
    Model model;
};

namespace {

thread_local std::string g_last_error;

mome_status fail(mome_status code, const std::string& msg) {
    g_last_error = msg;
    return code;
}

template <typename Fn>
mome_status guarded(Fn fn) {
    try {
        fn();
        return MOME_OK;
    } catch (const ConfigError& e) {
        return fail(MOME_ERR_CONFIG, e.what());
    } catch (const DimensionError& e) {
        return fail(MOME_ERR_DIMENSION, e.what());
    } catch (const DomainError& e) {
        return fail(MOME_ERR_DOMAIN, e.what());
    } catch (const UsageError& e) {
        return fail(MOME_ERR_USAGE, e.what());
    } catch (const IoError& e) {
        return fail(MOME_ERR_IO, e.what());
    } catch (const std::exception& e) {
        return fail(MOME_ERR_INTERNAL, e.what());
    }
}

mome_status require_arg(bool ok, const char* what) {
    if (ok) return MOME_OK;
    return fail(MOME_ERR_INVALID_ARG, std::string("missing or null argument: ") + what);
}

std::string opt(const char* s) { return s == nullptr ? std::string() : std::string(s); }

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

}  // namespace

extern "C" {

const char* mome_version(void) { return "0.1.0"; }

const char* mome_status_str(mome_status status) {
    switch (status) {
        case MOME_OK: return "ok";
        case MOME_ERR_INVALID_ARG: return "invalid argument";
        case MOME_ERR_CONFIG: return "config error";
        case MOME_ERR_DIMENSION: return "dimension error";
        case MOME_ERR_DOMAIN: return "domain error";
        case MOME_ERR_USAGE: return "usage error";
        case MOME_ERR_IO: return "io error";
        case MOME_ERR_INTERNAL: return "internal error";
    }
    return "unknown";
}

const char* mome_last_error(void) { return g_last_error.c_str(); }

mome_status mome_config_default(mome_config** out) {
    if (auto s = require_arg(out != nullptr, "out"); s != MOME_OK) return s;
    return guarded([&] {
        auto* cfg = new mome_config();
        cfg->cfg.validate();
        *out = cfg;
    });
}

mome_status mome_config_load(const char* path, mome_config** out) {
    if (auto s = require_arg(path != nullptr && out != nullptr, "path/out"); s != MOME_OK) return s;
    return guarded([&] {
        auto* cfg = new mome_config();
        cfg->cfg = load_config_file(path);
        *out = cfg;
    });
}

mome_status mome_config_override(mome_config* cfg, const char* assignment) {
    if (auto s = require_arg(cfg != nullptr && assignment != nullptr, "cfg/assignment"); s != MOME_OK)
        return s;
    return guarded([&] { apply_override(cfg->cfg, assignment); });
}

mome_status mome_config_text(mome_config* cfg, const char** out_text) {
    if (auto s = require_arg(cfg != nullptr && out_text != nullptr, "cfg/out_text"); s != MOME_OK)
        return s;
    return guarded([&] {
        cfg->text_cache = cfg->cfg.canonical_text();
        *out_text = cfg->text_cache.c_str();
    });
}

mome_status mome_config_hash(const mome_config* cfg, char out_hex[17]) {
    if (auto s = require_arg(cfg != nullptr && out_hex != nullptr, "cfg/out_hex"); s != MOME_OK)
        return s;
    return guarded([&] {
        const std::string h = cfg->cfg.hash_hex();
        std::memcpy(out_hex, h.c_str(), 17);
    });
}

void mome_config_free(mome_config* cfg) { delete cfg; }

mome_status mome_synth(const mome_config* cfg, int count, uint64_t seed, const char* out_path,
                       mome_census* census) {
    if (auto s = require_arg(cfg != nullptr && out_path != nullptr && count >= 0, "cfg/out_path/count");
        s != MOME_OK)
        return s;
    return guarded([&] {
        const SceneCensus c = run_synth(cfg->cfg, count, seed, out_path);
        if (census != nullptr) *census = mome_census{c.scenes, c.boxes, c.points};
    });
}

mome_status mome_corrupt(const mome_config* cfg, const char* in_path, const char* spec,
                         const char* out_path) {
    if (auto s = require_arg(cfg != nullptr && in_path != nullptr && spec != nullptr && out_path != nullptr,
                             "cfg/in/spec/out");
        s != MOME_OK)
        return s;
    return guarded([&] { run_corrupt(cfg->cfg, in_path, spec, out_path); });
}

mome_status mome_train_stage1(const mome_config* cfg, const char* data_path, const char* ckpt_out,
                              const char* log_path) {
    if (auto s = require_arg(cfg != nullptr && ckpt_out != nullptr, "cfg/ckpt_out"); s != MOME_OK)
        return s;
    return guarded([&] { run_train_stage1(cfg->cfg, opt(data_path), ckpt_out, opt(log_path)); });
}

mome_status mome_train_stage2(const mome_config* cfg, const char* data_path, const char* ckpt_in,
                              const char* ckpt_out, const char* log_path) {
    if (auto s = require_arg(cfg != nullptr && ckpt_in != nullptr && ckpt_out != nullptr,
                             "cfg/ckpt_in/ckpt_out");
        s != MOME_OK)
        return s;
    return guarded(
        [&] { run_train_stage2(cfg->cfg, opt(data_path), ckpt_in, ckpt_out, opt(log_path)); });
}

mome_status mome_model_load(const mome_config* cfg, const char* ckpt_path, mome_model** out) {
    if (auto s = require_arg(cfg != nullptr && ckpt_path != nullptr && out != nullptr,
                             "cfg/ckpt_path/out");
        s != MOME_OK)
        return s;
    return guarded([&] {
        auto* m = new mome_model{load_model(cfg->cfg, ckpt_path)};
        *out = m;
    });
}

void mome_model_free(mome_model* model) { delete model; }

mome_status mome_eval(const mome_config* cfg, const char* ckpt_path, const char* data_path,
                      const char* scenarios, const char* method, const char* out_csv,
                      const char* out_json) {
    if (auto s = require_arg(cfg != nullptr && ckpt_path != nullptr && scenarios != nullptr,
                             "cfg/ckpt_path/scenarios");
        s != MOME_OK)
        return s;
    return guarded([&] {
        run_eval(cfg->cfg, ckpt_path, opt(data_path), split_csv(scenarios),
                 method != nullptr ? method : "med", opt(out_csv), opt(out_json));
    });
}

mome_status mome_route_stats(const mome_config* cfg, const char* ckpt_path, const char* data_path,
                             const char* scenarios, const char* out_csv) {
    if (auto s = require_arg(cfg != nullptr && ckpt_path != nullptr && scenarios != nullptr &&
                                 out_csv != nullptr,
                             "cfg/ckpt_path/scenarios/out_csv");
        s != MOME_OK)
        return s;
    return guarded([&] {
        run_route_stats(cfg->cfg, ckpt_path, opt(data_path), split_csv(scenarios), out_csv);
    });
}

mome_status mome_bench_cost(const mome_config* cfg, const char* ckpt_path, const char* data_path,
                            const char* out_csv, mome_cost_report* report) {
    if (auto s = require_arg(cfg != nullptr && ckpt_path != nullptr, "cfg/ckpt_path"); s != MOME_OK)
        return s;
    return guarded([&] {
        const CostReport r = run_bench_cost(cfg->cfg, ckpt_path, opt(data_path), opt(out_csv));
        if (report != nullptr)
            *report = mome_cost_report{r.single,        r.parallel,
                                       r.routed,        r.router_visits,
                                       r.routed_over_single, r.parallel_over_single};
    });
}

mome_status mome_plot_data(const char* const* report_paths, int count, const char* out_csv) {
    if (auto s = require_arg(report_paths != nullptr && count > 0 && out_csv != nullptr,
                             "report_paths/count/out_csv");
        s != MOME_OK)
        return s;
    return guarded([&] {
        std::vector<std::string> paths;
        for (int i = 0; i < count; ++i) paths.emplace_back(report_paths[i]);
        run_plot_data(paths, out_csv);
    });
}

}  // extern "C"
