#ifndef ROPNET_H
#define ROPNET_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RopStatus {
  ROP_STATUS_OK = 0,
  ROP_STATUS_NULL_POINTER = 1,
  ROP_STATUS_PARAMETER = 2,
  ROP_STATUS_SHAPE = 3,
  ROP_STATUS_FORMAT = 4,
  ROP_STATUS_NUMERIC = 5,
  ROP_STATUS_CAPABILITY = 6,
  ROP_STATUS_DATA = 7,
  ROP_STATUS_VALIDATION = 8,
  ROP_STATUS_IO = 9,
  ROP_STATUS_PANIC = 10,
} RopStatus;

/**
 * A loaded or freshly built model.
 */
typedef struct RopModel RopModel;

/**
 * A static execution plan for one model at a fixed batch size.
 */
typedef struct RopPlan RopPlan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *rop_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rop_version(void);

/**
 * Builds the custom network with freshly initialized weights.
 *
 * # Safety
 * `out` must be null or point to writable storage for one pointer.
 */
enum RopStatus rop_model_build_custom(size_t input_size,
                                      double width,
                                      uint64_t seed,
                                      struct RopModel **out);

/**
 * Builds the MobileNet-shaped baseline with freshly initialized weights.
 *
 * # Safety
 * `out` must be null or point to writable storage for one pointer.
 */
enum RopStatus rop_model_build_mobilenet(size_t input_size, uint64_t seed, struct RopModel **out);

/**
 * # Safety
 * `path` must be null or a NUL-terminated string; `out` as for the builders.
 */
enum RopStatus rop_model_load(const char *path, struct RopModel **out);

/**
 * # Safety
 * `model` must be null or a live handle; `path` a NUL-terminated string.
 */
enum RopStatus rop_model_save(const struct RopModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void rop_model_free(struct RopModel *model);

/**
 * Side length of the square RGB input the model expects.
 *
 * # Safety
 * `model` must be null or a live handle; `out` null or writable.
 */
enum RopStatus rop_model_input_size(const struct RopModel *model, size_t *out);

/**
 * # Safety
 * `model` must be null or a live handle; both outputs null or writable.
 */
enum RopStatus rop_model_count_parameters(const struct RopModel *model,
                                          size_t *trainable,
                                          size_t *total);

/**
 * Eager inference on `n` preprocessed NHWC images in `[0, 1]`.
 * `input_len` must equal `n * size * size * 3`; `out` receives `n`
 * probabilities.
 *
 * # Safety
 * `input` must hold `input_len` floats and `out` room for `n` floats.
 */
enum RopStatus rop_model_predict(const struct RopModel *model,
                                 const float *input,
                                 size_t input_len,
                                 size_t n,
                                 float *out);

/**
 * Loads a PPM image, resizes it to the model input and scores it.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum RopStatus rop_model_predict_ppm(const struct RopModel *model, const char *path, float *out);

/**
 * Plans execution of `model` for a fixed batch size. The plan keeps its
 * own reference to the model, which may be freed independently.
 *
 * # Safety
 * `model` must be null or a live handle; `out` null or writable.
 */
enum RopStatus rop_plan_create(const struct RopModel *model, size_t batch, struct RopPlan **out);

/**
 * # Safety
 * `plan` must be null or a handle not yet freed.
 */
void rop_plan_free(struct RopPlan *plan);

/**
 * # Safety
 * `plan` must be null or a live handle; `out` null or writable.
 */
enum RopStatus rop_plan_arena_bytes(const struct RopPlan *plan, size_t *out);

/**
 * Runs the plan on a full batch. `input_len` must equal the planned
 * batch times the per-image size; `out` receives one probability per image.
 *
 * # Safety
 * `input` must hold `input_len` floats and `out` room for `out_len` floats.
 * A plan must not be executed from two threads at once.
 */
enum RopStatus rop_plan_execute(struct RopPlan *plan,
                                const float *input,
                                size_t input_len,
                                float *out,
                                size_t out_len);

/**
 * Majority vote over one eye's image probabilities.
 *
 * # Safety
 * `probs` must hold `n` floats; both outputs null or writable.
 */
enum RopStatus rop_vote(const float *probs,
                        size_t n,
                        double threshold,
                        bool ties_positive,
                        uint8_t *decision,
                        size_t *positive_votes);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROPNET_H */
