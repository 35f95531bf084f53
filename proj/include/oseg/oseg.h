#ifndef OSEG_H
#define OSEG_H

/*
 * C interface to the overhead-imagery segmentation and sensor-adaptation
 * library. Every function that can fail returns an oseg_status; the message
 * for the most recent failure on the calling thread is available from
 * oseg_last_error(). Strings handed back through char** out-parameters are
 * malloc'd JSON documents the caller releases with oseg_string_free().
 */

#ifdef __cplusplus
extern "C" {
#endif

#define OSEG_VERSION "0.1.0"

typedef enum oseg_status {
    OSEG_OK = 0,
    OSEG_ERR_INVALID_ARGUMENT = 1,
    OSEG_ERR_IO = 2,
    OSEG_ERR_RUNTIME = 3
} oseg_status;

const char* oseg_version(void);

/* Message of the last failing call on this thread; "" after a success. */
const char* oseg_last_error(void);

/* Worker threads for tensor math; n <= 0 restores the hardware default. */
void oseg_set_threads(int n);

void oseg_string_free(char* s);

/* Applies a simulated sensor ("grayscale", "brg1", "brg2") to an RGB PNG. */
oseg_status oseg_simulate_sensor(const char* image_in, const char* sensor,
                                 const char* image_out);

/* Writes `count` synthetic scenes plus manifest.json into out_dir. Result
 * lists the manifest path and the split sizes. */
oseg_status oseg_generate_synthetic(const char* out_dir, int count, int size,
                                    unsigned long long seed,
                                    char** result_json);

/* Blends the six-class palette over an image; mask and image must agree in
 * size. Class 0 stays untouched. */
oseg_status oseg_render_overlay(const char* image_in, const char* mask_in,
                                double opacity, const char* image_out);

/* Confusion-matrix metrics between two mask PNGs with `classes` classes.
 * Result carries per-class iou/f1, miou, macro_f1, ignored_pixels. */
oseg_status oseg_evaluate_masks(const char* pred_path, const char* truth_path,
                                int classes, char** result_json);

/* Connected-component counts of one class in both masks; connectivity is 4
 * or 8, components below min_area are dropped. */
oseg_status oseg_count_buildings(const char* pred_path, const char* truth_path,
                                 int class_index, int connectivity,
                                 long long min_area, char** result_json);

/* Trains the refinement segmenter on the manifest's train split.
 * options_json keys (all optional): levels, filters, upsample ("zero-pad" |
 * "direct-copy"), scale, pool_kernel, classes, fuse_skips, steps,
 * batch_size, lr. Weights go to weights_out, the per-step loss log to
 * "<weights_out>.log.jsonl" as JSON lines. */
oseg_status oseg_train_segmenter(const char* manifest_path,
                                 const char* options_json,
                                 unsigned long long seed,
                                 const char* weights_out, char** result_json);

/* Trains the cycle-consistent translator between the train splits of two
 * manifests. options_json keys (all optional): base_filters, epochs,
 * batch_size, alpha, lambda, beta, gen_lr, disc_lr. Weights go to
 * weights_out, the per-epoch loss log to "<weights_out>.log.jsonl". */
oseg_status oseg_train_translator(const char* source_manifest,
                                  const char* target_manifest,
                                  const char* options_json,
                                  unsigned long long seed,
                                  const char* weights_out, char** result_json);

/* Runs the sensor-adaptation A/B experiment described by config_json (see
 * the sa-experiment CLI subcommand for the keys). Progress lines go to
 * stderr when verbose is nonzero. */
oseg_status oseg_run_sa_experiment(const char* config_json, int verbose,
                                   char** report_json);

/* A loaded segmentation model. */
typedef struct oseg_segmenter oseg_segmenter;

oseg_status oseg_segmenter_open(const char* weights_path,
                                oseg_segmenter** out);
void oseg_segmenter_close(oseg_segmenter* s);

/* Predicts a class mask for an RGB PNG. chip <= 0 runs the image whole
 * (dims must be divisible by 16); otherwise the image is tiled with the
 * given chip size and overlap and the logits are stitched. */
oseg_status oseg_segmenter_infer(oseg_segmenter* s, const char* image_in,
                                 const char* mask_out, int chip, int overlap);

/* A loaded translator (G and F plus both discriminators). */
typedef struct oseg_translator oseg_translator;

oseg_status oseg_translator_open(const char* weights_path,
                                 oseg_translator** out);
void oseg_translator_close(oseg_translator* t);

/* direction "forward" maps source toward target; "backward" the reverse. */
oseg_status oseg_translator_apply(oseg_translator* t, const char* direction,
                                  const char* image_in, const char* image_out);

#ifdef __cplusplus
}
#endif

#endif
