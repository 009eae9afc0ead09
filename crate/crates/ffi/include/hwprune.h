#ifndef HWPRUNE_H
#define HWPRUNE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Values for the `mode` parameters.
typedef enum HwpMode {
  HWP_MODE_STREAMING = 0,
  HWP_MODE_TEMPORAL = 1,
} HwpMode;

// Result of every call.
typedef enum HwpStatus {
  HWP_STATUS_OK = 0,
  HWP_STATUS_NULL_POINTER = 1,
  HWP_STATUS_INVALID_ARGUMENT = 2,
  HWP_STATUS_FORMAT = 3,
  HWP_STATUS_IO = 4,
  HWP_STATUS_MODEL = 5,
  HWP_STATUS_NUMERIC = 6,
  HWP_STATUS_SIMULATION = 7,
  HWP_STATUS_BUFFER_TOO_SMALL = 8,
  HWP_STATUS_PANIC = 9,
} HwpStatus;

typedef struct HwpDataset HwpDataset;

// Trained float model.
typedef struct HwpModel HwpModel;

// INT8 model.
typedef struct HwpQuantModel HwpQuantModel;

// Whole-model estimate.
typedef struct HwpCost {
  uint64_t macs;
  // Sum of per-stage cycles.
  uint64_t cycles;
  // Slowest stage.
  uint64_t bottleneck_cycles;
  uint64_t dsp;
  uint64_t bram;
  double latency_seconds;
} HwpCost;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *hwp_last_error(void);

// Library version as a static string.
const char *hwp_version(void);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum HwpStatus hwp_model_load(const char *path, struct HwpModel **out);

// # Safety
// `data` must point to `len` readable bytes and `out` be a valid pointer.
enum HwpStatus hwp_model_from_bytes(const uint8_t *data, uintptr_t len, struct HwpModel **out);

// # Safety
// `model` must be null or a handle from this library, freed once.
void hwp_model_free(struct HwpModel *model);

// Input extents `(channels, height, width)`.
//
// # Safety
// `model` must be a live handle and `dims` point to three writable values.
enum HwpStatus hwp_model_input_dims(const struct HwpModel *model, uintptr_t *dims);

// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum HwpStatus hwp_model_estimate(const struct HwpModel *model,
                                  uint32_t mode,
                                  uint32_t pe_max,
                                  struct HwpCost *out);

// Float logits for one `C×H×W` image.
//
// # Safety
// `image` must hold `len` floats; `logits` must hold `cap` floats.
enum HwpStatus hwp_model_logits(const struct HwpModel *model,
                                const float *image,
                                uintptr_t len,
                                float *logits,
                                uintptr_t cap,
                                uintptr_t *out_len);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum HwpStatus hwp_qmodel_load(const char *path, struct HwpQuantModel **out);

// # Safety
// `data` must point to `len` readable bytes and `out` be a valid pointer.
enum HwpStatus hwp_qmodel_from_bytes(const uint8_t *data,
                                     uintptr_t len,
                                     struct HwpQuantModel **out);

// # Safety
// `q` must be null or a handle from this library, freed once.
void hwp_qmodel_free(struct HwpQuantModel *q);

// Integer reference inference; logits are dequantized.
//
// # Safety
// As for [`hwp_model_logits`].
enum HwpStatus hwp_qmodel_infer(const struct HwpQuantModel *q,
                                const float *image,
                                uintptr_t len,
                                float *logits,
                                uintptr_t cap,
                                uintptr_t *out_len);

// Runs the accelerator simulator and checks it against the integer
// reference and the analytical estimate; `cycles` receives the simulated
// end-to-end cycles of the conv and pool engines.
//
// # Safety
// As for [`hwp_model_logits`]; `cycles` must be a valid pointer.
enum HwpStatus hwp_qmodel_simulate(const struct HwpQuantModel *q,
                                   uint32_t mode,
                                   uint32_t pe_max,
                                   const float *image,
                                   uintptr_t len,
                                   float *logits,
                                   uintptr_t cap,
                                   uintptr_t *out_len,
                                   uint64_t *cycles);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum HwpStatus hwp_dataset_load(const char *path, struct HwpDataset **out);

// # Safety
// `ds` must be null or a handle from this library, freed once.
void hwp_dataset_free(struct HwpDataset *ds);

// # Safety
// `ds` must be a live handle and `len` a valid pointer.
enum HwpStatus hwp_dataset_len(const struct HwpDataset *ds, uintptr_t *len);

// Copies image `index` into `pixels` and its class into `label`.
//
// # Safety
// `pixels` must hold `cap` floats; `out_len` and `label` must be valid.
enum HwpStatus hwp_dataset_image(const struct HwpDataset *ds,
                                 uintptr_t index,
                                 float *pixels,
                                 uintptr_t cap,
                                 uintptr_t *out_len,
                                 uintptr_t *label);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HWPRUNE_H */
