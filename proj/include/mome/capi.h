/* C interface to the mome core. Opaque handles, integer status codes,
 * thread-local error text. Handles are not thread-safe; distinct handles
 * are independent. */
#ifndef MOME_CAPI_H
#define MOME_CAPI_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mome_status {
    MOME_OK = 0,
    MOME_ERR_INVALID_ARG = 1,
    MOME_ERR_CONFIG = 2,
    MOME_ERR_DIMENSION = 3,
    MOME_ERR_DOMAIN = 4,
    MOME_ERR_USAGE = 5,
    MOME_ERR_IO = 6,
    MOME_ERR_INTERNAL = 7
} mome_status;

typedef struct mome_config mome_config;
typedef struct mome_model mome_model;

const char* mome_version(void);
const char* mome_status_str(mome_status status);
/* Message from the most recent failing call on this thread. */
const char* mome_last_error(void);

/* --- configuration ----------------------------------------------------- */

mome_status mome_config_default(mome_config** out);
mome_status mome_config_load(const char* path, mome_config** out);
/* assignment: "section.key=value", same grammar as the config file */
mome_status mome_config_override(mome_config* cfg, const char* assignment);
/* Canonical resolved text; caller must not free. Valid until the next call
 * on this config. */
mome_status mome_config_text(mome_config* cfg, const char** out_text);
mome_status mome_config_hash(const mome_config* cfg, char out_hex[17]);
void mome_config_free(mome_config* cfg);

/* --- dataset operations -------------------------------------------------- */

typedef struct mome_census {
    int64_t scenes;
    int64_t boxes;
    int64_t points;
} mome_census;

mome_status mome_synth(const mome_config* cfg, int count, uint64_t seed, const char* out_path,
                       mome_census* census /* nullable */);
mome_status mome_corrupt(const mome_config* cfg, const char* in_path, const char* spec,
                         const char* out_path);

/* --- training ------------------------------------------------------------ */

/* data_path may be NULL or empty: scenes come from the config. */
mome_status mome_train_stage1(const mome_config* cfg, const char* data_path,
                              const char* ckpt_out, const char* log_path /* nullable */);
mome_status mome_train_stage2(const mome_config* cfg, const char* data_path,
                              const char* ckpt_in, const char* ckpt_out,
                              const char* log_path /* nullable */);

/* --- models ---------------------------------------------------------------- */

mome_status mome_model_load(const mome_config* cfg, const char* ckpt_path, mome_model** out);
void mome_model_free(mome_model* model);

/* --- evaluation ------------------------------------------------------------ */

/* scenarios: comma-separated specs ("clean,beams=4,lidardrop,..."); method:
 * "med" | "baseline" | "single". Either output path may be NULL. */
mome_status mome_eval(const mome_config* cfg, const char* ckpt_path, const char* data_path,
                      const char* scenarios, const char* method, const char* out_csv,
                      const char* out_json);
mome_status mome_route_stats(const mome_config* cfg, const char* ckpt_path,
                             const char* data_path, const char* scenarios,
                             const char* out_csv);

typedef struct mome_cost_report {
    uint64_t single;
    uint64_t parallel_baseline;
    uint64_t routed;
    uint64_t router_mask_visits;
    double routed_over_single;
    double parallel_over_single;
} mome_cost_report;

mome_status mome_bench_cost(const mome_config* cfg, const char* ckpt_path,
                            const char* data_path, const char* out_csv,
                            mome_cost_report* report /* nullable */);

/* report_paths: array of eval JSON reports. */
mome_status mome_plot_data(const char* const* report_paths, int count, const char* out_csv);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MOME_CAPI_H */
