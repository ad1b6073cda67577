#ifndef LORA_FORGE_H
#define LORA_FORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum LfStatus {
  LF_STATUS_OK = 0,
  LF_STATUS_NULL_ARGUMENT = 1,
  LF_STATUS_INVALID_ARGUMENT = 2,
  LF_STATUS_CONFIG = 3,
  LF_STATUS_DATA = 4,
  LF_STATUS_IO = 5,
  LF_STATUS_CORRUPT = 6,
  LF_STATUS_INCOMPATIBLE = 7,
  LF_STATUS_NUMERIC = 8,
  LF_STATUS_BUFFER_TOO_SMALL = 9,
  LF_STATUS_INTERNAL = 10,
} LfStatus;

/**
 * How modules are combined by [`lf_compose`].
 */
typedef enum LfCompositionMode {
  LF_COMPOSITION_MODE_AB_SPACE = 0,
  LF_COMPOSITION_MODE_DELTA_SPACE = 1,
} LfCompositionMode;

/**
 * Opaque base model with adapters applied.
 */
typedef struct LfAdapted LfAdapted;

/**
 * Opaque base model.
 */
typedef struct LfModel LfModel;

/**
 * Opaque adapter module.
 */
typedef struct LfModule LfModule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *lf_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `cap`). Returns the full message length without the NUL, or 0
 * when there is no error.
 */
size_t lf_last_error_message(char *buf, size_t cap);

/**
 * Builds a randomly initialized model from a JSON config with the fields
 * `vocab_size, d_model, n_heads, n_layers, d_ffn, max_seq_len, seed` and
 * optionally `tied_head`.
 */
enum LfStatus lf_model_new(const char *config_json, struct LfModel **out);

enum LfStatus lf_model_load(const char *path, struct LfModel **out);

enum LfStatus lf_model_save(const struct LfModel *model, const char *path);

void lf_model_free(struct LfModel *model);

/**
 * Vocabulary size, or 0 for a null model.
 */
size_t lf_model_vocab_size(const struct LfModel *model);

/**
 * Logits of the next token after `tokens` (length `vocab_size`).
 */
enum LfStatus lf_model_next_logits(const struct LfModel *model,
                                   const uint32_t *tokens,
                                   size_t len,
                                   float *out,
                                   size_t cap,
                                   size_t *out_len);

/**
 * Greedy continuation of `prompt`; `stop < 0` disables the stop token.
 */
enum LfStatus lf_model_generate(const struct LfModel *model,
                                const uint32_t *prompt,
                                size_t len,
                                size_t max_new,
                                int64_t stop,
                                uint32_t *out,
                                size_t cap,
                                size_t *out_len);

enum LfStatus lf_module_load(const char *path, struct LfModule **out);

enum LfStatus lf_module_save(const struct LfModule *module, const char *path);

void lf_module_free(struct LfModule *module);

/**
 * Adapter rank, or 0 for a null module.
 */
size_t lf_module_rank(const struct LfModule *module);

/**
 * CRC-32 of the module's serialized bytes.
 */
enum LfStatus lf_module_checksum(const struct LfModule *module, uint32_t *out);

/**
 * Weighted composition of `n` modules.
 */
enum LfStatus lf_compose(const struct LfModule *const *modules,
                         const double *weights,
                         size_t n,
                         enum LfCompositionMode mode,
                         struct LfModule **out);

/**
 * Attaches a module to a copy of `model`.
 */
enum LfStatus lf_apply(const struct LfModel *model,
                       const struct LfModule *module,
                       struct LfAdapted **out);

void lf_adapted_free(struct LfAdapted *adapted);

enum LfStatus lf_adapted_next_logits(const struct LfAdapted *adapted,
                                     const uint32_t *tokens,
                                     size_t len,
                                     float *out,
                                     size_t cap,
                                     size_t *out_len);

enum LfStatus lf_adapted_generate(const struct LfAdapted *adapted,
                                  const uint32_t *prompt,
                                  size_t len,
                                  size_t max_new,
                                  int64_t stop,
                                  uint32_t *out,
                                  size_t cap,
                                  size_t *out_len);

/**
 * Folds the adapters into the base weights as a new model.
 */
enum LfStatus lf_merge(const struct LfAdapted *adapted, struct LfModel **out);

/**
 * ROUGE F1 of `hyp` against `reference`: `n` = 1 or 2 for ROUGE-N, 0 for
 * ROUGE-L.
 */
enum LfStatus lf_rouge_f1(const uint32_t *hyp,
                          size_t hyp_len,
                          const uint32_t *reference,
                          size_t ref_len,
                          uint32_t n,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LORA_FORGE_H */
