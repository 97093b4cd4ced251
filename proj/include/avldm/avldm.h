/* C interface to the avldm two-stream audio-visual diffusion library.
 *
 * All entry points return avldm_status; AVLDM_OK is 0. On failure the
 * context stores a human-readable message retrievable with
 * avldm_last_error(). Handles are opaque and must be released with
 * avldm_ctx_free(). A context is not safe for concurrent use; create one
 * per thread instead.
 */
#ifndef AVLDM_H
#define AVLDM_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define AVLDM_API
#else
#define AVLDM_API __attribute__((visibility("default")))
#endif

typedef struct avldm_ctx avldm_ctx;

typedef enum avldm_status {
    AVLDM_OK = 0,
    AVLDM_ERR_INVALID_ARG = 1,
    AVLDM_ERR_IO = 2,
    AVLDM_ERR_CONFIG = 3,
    AVLDM_ERR_NUMERIC = 4,
    AVLDM_ERR_INTERNAL = 5
} avldm_status;

AVLDM_API const char* avldm_version(void);

AVLDM_API avldm_status avldm_ctx_new(avldm_ctx** out_ctx);
AVLDM_API void avldm_ctx_free(avldm_ctx* ctx);

/* Message from the most recent failing call on this context; never NULL. */
AVLDM_API const char* avldm_last_error(const avldm_ctx* ctx);

/* Generate a synthetic audible-video corpus under out_dir: `count` aligned
 * clips seeded from seed_base, plus `misaligned` swapped-audio controls.
 * Writes <out_dir>/manifest.jsonl. */
AVLDM_API avldm_status avldm_make_dataset(avldm_ctx* ctx, const char* out_dir, int count, uint64_t seed_base,
                                          int misaligned);

/* Train from a JSON config file. Writes loss_log.csv, checkpoints and
 * train_report.json under the config's out_dir. */
AVLDM_API avldm_status avldm_train(avldm_ctx* ctx, const char* config_path);

/* Train the learned codec pair on a corpus manifest and save both codec
 * checkpoints (video_codec.avw / audio_codec.avw) under out_dir. */
AVLDM_API avldm_status avldm_train_codec(avldm_ctx* ctx, const char* manifest_path, const char* out_dir, int steps,
                                         uint64_t seed);

/* Generate one audible-video sample from a checkpoint. Writes frames.avf,
 * audio.wav and metadata.json under out_dir (PNG frames too when
 * export_png != 0 and the library was built with libpng). */
AVLDM_API avldm_status avldm_sample(avldm_ctx* ctx, const char* ckpt_path, const char* caption, int steps,
                                    uint64_t seed, const char* out_dir, int export_png);

/* Evaluate metrics (comma-separated: avh,fvd,kvd,clipsim,fad) against a
 * reference manifest. `generated` may be a manifest, a directory of sample
 * outputs, or NULL for reference-only metrics. `provider` selects the
 * embedding backend ("toy" or "hash"). Writes a JSON report when
 * report_path is non-NULL. */
AVLDM_API avldm_status avldm_evaluate(avldm_ctx* ctx, const char* manifest, const char* generated,
                                      const char* metrics_csv, const char* provider, const char* report_path);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* AVLDM_H */
