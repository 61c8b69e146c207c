/* C interface to the socio-spatial contagion analysis library. */

#ifndef SSC_H
#define SSC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of every fallible call.
 */
typedef enum SscStatus {
  SSC_STATUS_OK = 0,
  SSC_STATUS_NULL_POINTER = 1,
  SSC_STATUS_INVALID_UTF8 = 2,
  SSC_STATUS_INVALID_ARGUMENT = 3,
  SSC_STATUS_IO_ERROR = 4,
  /**
   * The dataset failed validation with hard errors.
   */
  SSC_STATUS_VALIDATION_FATAL = 5,
  SSC_STATUS_RUNTIME_ERROR = 6,
} SscStatus;

/**
 * A loaded dataset plus its validation report.
 */
typedef struct SscDataset SscDataset;

/**
 * Runtime parameters of a pipeline run. Obtain defaults from
 * [`ssc_run_config_default`] and override fields as needed.
 */
typedef struct SscRunConfig {
  /**
   * Master seed for all Monte Carlo draws.
   */
  uint64_t seed;
  /**
   * Null-model realizations per year pair (minimum 39).
   */
  uint32_t n_sims;
  /**
   * Distance grid spacing in meters.
   */
  double grid_step;
  /**
   * 0 = period-specific transition thresholds, 1 = global cuts.
   */
  int32_t threshold_mode;
  /**
   * Worker threads; 0 uses all cores.
   */
  uint32_t jobs;
  /**
   * Cap on isotropic edge-correction weights.
   */
  double weight_cap;
} SscRunConfig;

/**
 * Synthetic-region parameters for [`ssc_synth_region`].
 */
typedef struct SscSynthConfig {
  uint32_t n_communities;
  /**
   * 0 = CSTR, 1 = Thomas, 2 = contagion.
   */
  int32_t process;
  uint64_t seed;
  /**
   * Contagion attachment probability.
   */
  double p;
  /**
   * Contagion kernel scale, meters.
   */
  double kernel_sigma;
  /**
   * Thomas offspring displacement scale, meters.
   */
  double sigma;
  /**
   * Thomas mean offspring per parent per year.
   */
  double offspring_mean;
  uint32_t min_events;
  uint32_t max_events;
} SscSynthConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; do not free.
 */
const char *ssc_version(void);

/**
 * Last error message of the calling thread, or NULL when no error was
 * recorded. The caller owns the returned string; free it with
 * [`ssc_string_free`].
 */
char *ssc_last_error_message(void);

/**
 * Frees a string returned by this library. NULL is a no-op.
 *
 * # Safety
 * `s` must be a pointer previously returned by an `ssc_*` function that
 * transfers string ownership, and not freed before.
 */
void ssc_string_free(char *s);

/**
 * Loads and validates a dataset from the polygon and event feature
 * collections. On success writes a handle to `out`; the handle must be
 * released with [`ssc_dataset_free`]. Years are inferred from the events.
 *
 * # Safety
 * `polygons_path` and `events_path` must be NUL-terminated strings; `out`
 * must be a valid pointer.
 */
enum SscStatus ssc_dataset_load(const char *polygons_path,
                                const char *events_path,
                                struct SscDataset **out);

/**
 * Releases a dataset handle. NULL is a no-op.
 *
 * # Safety
 * `dataset` must come from [`ssc_dataset_load`] and not be used afterwards.
 */
void ssc_dataset_free(struct SscDataset *dataset);

/**
 * Number of communities in the dataset (0 for NULL).
 *
 * # Safety
 * `dataset` must be a live handle or NULL.
 */
uint64_t ssc_dataset_community_count(const struct SscDataset *dataset);

/**
 * Total number of adoption events in the dataset (0 for NULL).
 *
 * # Safety
 * `dataset` must be a live handle or NULL.
 */
uint64_t ssc_dataset_event_count(const struct SscDataset *dataset);

/**
 * Whether validation found hard errors (malformed polygons); such datasets
 * cannot be analyzed.
 *
 * # Safety
 * `dataset` must be a live handle or NULL.
 */
bool ssc_dataset_has_fatal_errors(const struct SscDataset *dataset);

/**
 * Validation report as a JSON string owned by the caller; free with
 * [`ssc_string_free`]. NULL on allocation failure.
 *
 * # Safety
 * `dataset` must be a live handle.
 */
char *ssc_dataset_validation_json(const struct SscDataset *dataset);

/**
 * Default run parameters: seed 0, 1000 simulations, 10 m grid,
 * period-specific thresholds, all cores.
 */
struct SscRunConfig ssc_run_config_default(void);

/**
 * Runs the full pipeline over a loaded dataset, writing the CSV bundle and
 * manifest into `out_dir`. When `manifest_hash_out` is non-NULL it receives
 * the manifest hash string (caller frees).
 *
 * # Safety
 * `dataset` must be a live handle; `config` and path pointers must be valid.
 */
enum SscStatus ssc_run_pipeline(const struct SscDataset *dataset,
                                const struct SscRunConfig *config,
                                const char *out_dir,
                                char **manifest_hash_out);

/**
 * Generates a synthetic region in the ingestion schema, writing
 * `polygons.json` and `events.json` into `out_dir`.
 *
 * # Safety
 * `config` and `out_dir` must be valid pointers.
 */
enum SscStatus ssc_synth_region(const struct SscSynthConfig *config, const char *out_dir);

/**
 * Default synthetic-region parameters: 20 contagion communities.
 */
struct SscSynthConfig ssc_synth_config_default(void);

/**
 * Validates a dataset without loading a handle: 0 when clean, the usual
 * status codes otherwise (ValidationFatal for malformed polygons).
 *
 * # Safety
 * Path pointers must be NUL-terminated strings.
 */
enum SscStatus ssc_validate_files(const char *polygons_path, const char *events_path);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SSC_H */
