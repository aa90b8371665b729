/*
 * latgraph C API.
 *
 * Joint modelling of admission scores and a right-censored attempt count via
 * generalized linear mixed models sharing latent individual components, plus
 * Gaussian graphical model selection and separation queries over those
 * components.
 *
 * Conventions:
 *   - Every fallible call returns lg_status; LG_OK is 0.
 *   - Objects are opaque handles released with the matching *_free call.
 *   - Output strings are heap-allocated; release them with lg_free_string.
 *   - On failure, *error (when supplied) receives a message string owned by
 *     the caller.
 */

#ifndef LATGRAPH_H
#define LATGRAPH_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lg_status {
  LG_OK = 0,
  LG_ERROR_VALIDATION = 2,  /* bad inputs, schema violations, checksum mismatch */
  LG_ERROR_CONVERGENCE = 3, /* model fitting failures */
  LG_ERROR_INTERNAL = 4
} lg_status;

typedef struct lg_cohort lg_cohort;
typedef struct lg_scenario lg_scenario;
typedef struct lg_fit lg_fit;
typedef struct lg_graphs lg_graphs;

const char* lg_version(void);
void lg_free_string(char* s);

/* ---- cohort ------------------------------------------------------------ */

/* CSV schema: student_id,branch,gender,age_group,bonus,math,phys,chem,bio,
 * his,geo,port,attempts,passed */
lg_status lg_cohort_load_csv(const char* path, lg_cohort** out, char** error);
lg_status lg_cohort_parse_csv(const char* text, lg_cohort** out, char** error);
int lg_cohort_size(const lg_cohort* cohort);
lg_status lg_cohort_to_csv(const lg_cohort* cohort, char** out_text, char** error);
/* Risk-set expansion: student_id,t,event,gender,age_group,branch */
lg_status lg_cohort_person_period_csv(const lg_cohort* cohort, char** out_text,
                                      char** error);
void lg_cohort_free(lg_cohort* cohort);

/* ---- simulation --------------------------------------------------------- */

/* Accepts a scenario file path or a preset name (fig1a_no_bonus, fig1b_bonus,
 * paper_like). */
lg_status lg_scenario_load(const char* path_or_preset, lg_scenario** out,
                           char** error);
lg_status lg_scenario_parse(const char* json_text, lg_scenario** out, char** error);
lg_status lg_scenario_to_json(const lg_scenario* scenario, char** out_json,
                              char** error);
/* seed_override < 0 keeps the scenario's own seed. */
lg_status lg_simulate(const lg_scenario* scenario, int64_t seed_override,
                      lg_cohort** out_cohort, char** out_truth_json, char** error);
void lg_scenario_free(lg_scenario* scenario);

/* ---- fitting ------------------------------------------------------------ */

/* config_json may be NULL for the defaults (stratify by bonus, canonical
 * eight responses, stepwise selection, residual fraction 0.95). */
lg_status lg_fit_run(const lg_cohort* cohort, const char* config_json,
                     lg_fit** out, char** error);
lg_status lg_fit_to_json(const lg_fit* fit, char** out_json, char** error);
lg_status lg_fit_parse(const char* json_text, lg_fit** out, char** error);
int lg_fit_stratum_count(const lg_fit* fit);
lg_status lg_fit_stratum_name(const lg_fit* fit, int index, char** out_name,
                              char** error);
/* Person-period CSV of one stratum, empty string when unavailable. */
lg_status lg_fit_person_period_csv(const lg_fit* fit, int index, char** out_text,
                                   char** error);
void lg_fit_free(lg_fit* fit);

/* ---- graph selection ---------------------------------------------------- */

/* method: "stepwise" (default when NULL) or "exhaustive". */
lg_status lg_graphs_select(const lg_fit* fit, const char* method,
                           const char* fit_json_checksum, lg_graphs** out,
                           char** error);
lg_status lg_graphs_to_json(const lg_graphs* graphs, char** out_json, char** error);
lg_status lg_graphs_parse(const char* json_text, lg_graphs** out, char** error);
int lg_graphs_count(const lg_graphs* graphs);
lg_status lg_graphs_stratum_name(const lg_graphs* graphs, int index,
                                 char** out_name, char** error);
/* extended != 0 renders the latent-plus-observables graph. */
lg_status lg_graphs_to_dot(const lg_graphs* graphs, int index, int extended,
                           char** out_dot, char** error);
void lg_graphs_free(lg_graphs* graphs);

/* Canonical checksum of a JSON document (whitespace-insensitive). */
lg_status lg_json_checksum(const char* json_text, char** out_hex, char** error);

/* ---- queries ------------------------------------------------------------ */

/* graph_source: fixture name or graph JSON text. Label lists are
 * comma-separated; b may be "rest". For extended queries A/B name observable
 * responses and `given` names latent components. When not separated,
 * out_witness (if non-NULL) receives one violating path ("Geom -- Math").  */
lg_status lg_query(const char* graph_source, const char* stratum, const char* a,
                   const char* b, const char* given, int extended,
                   int* out_separated, char** out_witness, char** error);

/* ---- report ------------------------------------------------------------- */

lg_status lg_report_build(const char* fit_json, const char* graphs_json,
                          char** out_report_json, char** error);

/* ---- misc ---------------------------------------------------------------- */

const char* lg_analysis_config_schema(void);
const char* lg_scenario_schema(void);
lg_status lg_write_text_atomic(const char* path, const char* text, char** error);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* LATGRAPH_H */
