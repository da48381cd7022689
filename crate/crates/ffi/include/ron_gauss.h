#ifndef RON_GAUSS_H
#define RON_GAUSS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RgMode {
  RG_MODE_UNSUPERVISED = 0,
  RG_MODE_SUPERVISED = 1,
  RG_MODE_GMM = 2,
} RgMode;

typedef enum RgCovarianceBound {
  // Sensitivity valid for per-entry Laplace noise. Default.
  RG_COVARIANCE_BOUND_ENTRYWISE = 0,
  // The smaller closed form `2√p/n`; only ε-DP for `p <= 2`.
  RG_COVARIANCE_BOUND_PUBLISHED = 1,
} RgCovarianceBound;

typedef enum RgStatus {
  RG_STATUS_OK = 0,
  // Invalid argument or parameter.
  RG_STATUS_USAGE = 1,
  // Input data could not be used.
  RG_STATUS_DATA = 2,
  // A numerical routine failed.
  RG_STATUS_NUMERIC = 3,
  // File system error.
  RG_STATUS_IO = 4,
  // A required pointer argument was null.
  RG_STATUS_NULL_POINTER = 5,
  // A panic was caught at the boundary.
  RG_STATUS_PANIC = 6,
} RgStatus;

typedef enum RgLabelKind {
  // Loader default: labels parse as real numbers.
  RG_LABEL_KIND_AUTO = 0,
  RG_LABEL_KIND_REAL = 1,
  RG_LABEL_KIND_CATEGORICAL = 2,
} RgLabelKind;

// Opaque dataset handle.
typedef struct RgDataset RgDataset;

// Opaque release handle.
typedef struct RgRelease RgRelease;

// Parameters of one synthesis run. Obtain defaults from [`rg_config_default`].
typedef struct RgConfig {
  enum RgMode mode;
  // Total privacy budget.
  double epsilon;
  // Share of `epsilon` spent on the mean.
  double mu_ratio;
  // Projected dimension; 0 picks the default for the feature count.
  size_t dim;
  // Synthetic sample count; 0 emits as many samples as the input has.
  size_t n_synth;
  // Label bound `a` for supervised mode. Labels are clipped to `[-a, a]`.
  double label_bound;
  double psd_floor;
  enum RgCovarianceBound covariance_bound;
  // Mixture mode: one projection shared by every class.
  bool shared_projection;
  // When false the generator is seeded from the operating system.
  bool has_seed;
  uint64_t seed;
} RgConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread, or null if no
// call has failed yet. Valid until the next failing call on this thread.
const char *rg_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *rg_version(void);

struct RgConfig rg_config_default(void);

// Builds a dataset from `n_rows × n_cols` row-major values.
//
// # Safety
// `data` must point to `n_rows * n_cols` readable doubles and `out` must be
// writable.
enum RgStatus rg_dataset_from_rows(const double *data,
                                   size_t n_rows,
                                   size_t n_cols,
                                   struct RgDataset **out);

// Loads a CSV file with a header row. `label_column` may be null.
//
// # Safety
// `path` and a non-null `label_column` must be NUL-terminated strings; `out`
// must be writable.
enum RgStatus rg_dataset_load_csv(const char *path,
                                  const char *label_column,
                                  enum RgLabelKind label_kind,
                                  struct RgDataset **out);

// Attaches real-valued labels, one per sample.
//
// # Safety
// `ds` must be a live dataset handle and `labels` must point to `len` doubles.
enum RgStatus rg_dataset_set_real_labels(struct RgDataset *ds, const double *labels, size_t len);

// Attaches class labels, one NUL-terminated string per sample.
//
// # Safety
// `ds` must be a live dataset handle and `labels` must point to `len` valid
// string pointers.
enum RgStatus rg_dataset_set_class_labels(struct RgDataset *ds,
                                          const char *const *labels,
                                          size_t len);

// Sample count and feature count.
//
// # Safety
// `ds` must be a live dataset handle; `n` and `m` must be writable.
enum RgStatus rg_dataset_shape(const struct RgDataset *ds, size_t *n, size_t *m);

// Frees a dataset. Null is ignored.
//
// # Safety
// `ds` must be null or a handle not yet freed.
void rg_dataset_free(struct RgDataset *ds);

// Runs the synthesis pipeline on `ds`.
//
// # Safety
// `ds` must be a live dataset handle, `cfg` must be readable and `out` must be
// writable.
enum RgStatus rg_synthesize(const struct RgDataset *ds,
                            const struct RgConfig *cfg,
                            struct RgRelease **out);

// Synthetic sample count, projected dimension and original feature count.
//
// # Safety
// `rel` must be a live release handle; the outputs must be writable.
enum RgStatus rg_release_shape(const struct RgRelease *rel, size_t *n_synth, size_t *p, size_t *m);

// Total ε charged by the release.
//
// # Safety
// `rel` must be a live release handle; `epsilon` must be writable.
enum RgStatus rg_release_epsilon(const struct RgRelease *rel, double *epsilon);

// Copies the projected synthetic features, `n_synth × p` row-major.
//
// # Safety
// `rel` must be a live release handle and `buf` must hold `len` doubles.
enum RgStatus rg_release_copy_features(const struct RgRelease *rel, double *buf, size_t len);

// Copies synthetic samples mapped back to the feature space, `n_synth × m`
// row-major.
//
// # Safety
// `rel` must be a live release handle and `buf` must hold `len` doubles.
enum RgStatus rg_release_copy_reconstructed(const struct RgRelease *rel, double *buf, size_t len);

// Copies the synthetic real labels of a supervised release (`n_synth` values).
//
// # Safety
// `rel` must be a live release handle and `buf` must hold `len` doubles.
enum RgStatus rg_release_copy_labels(const struct RgRelease *rel, double *buf, size_t len);

// Class of synthetic sample `index` in a mixture release. The string is owned
// by the release.
//
// # Safety
// `rel` must be a live release handle; `out` must be writable.
enum RgStatus rg_release_class_label(const struct RgRelease *rel, size_t index, const char **out);

// Writes `data.csv` and `metadata.json` into `out_dir`, creating it if needed.
//
// # Safety
// `rel` must be a live release handle and `out_dir` a NUL-terminated string.
enum RgStatus rg_release_write(const struct RgRelease *rel,
                               const char *out_dir,
                               bool save_projection);

// Frees a release. Null is ignored.
//
// # Safety
// `rel` must be null or a handle not yet freed.
void rg_release_free(struct RgRelease *rel);

// L1 sensitivity of the mean of `n` unit vectors in `m` dimensions.
//
// # Safety
// `out` must be writable.
enum RgStatus rg_sensitivity_mean(size_t m, size_t n, double *out);

// L1 sensitivity of the `p × p` second-moment matrix.
//
// # Safety
// `out` must be writable.
enum RgStatus rg_sensitivity_covariance(size_t p,
                                        size_t n,
                                        enum RgCovarianceBound which,
                                        double *out);

// L1 sensitivity of the label-augmented second-moment matrix.
//
// # Safety
// `out` must be writable.
enum RgStatus rg_sensitivity_augmented_covariance(size_t p,
                                                  size_t n,
                                                  double label_bound,
                                                  enum RgCovarianceBound which,
                                                  double *out);

// Largest projected dimension at which projections of `m`-dimensional data
// are expected to look Gaussian.
//
// # Safety
// `out` must be writable.
enum RgStatus rg_dfm_dimension_bound(size_t m, size_t *out);

// Projected dimension used when none is configured.
//
// # Safety
// `out` must be writable.
enum RgStatus rg_default_dimension(size_t m, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RON_GAUSS_H */
