/*
 * Copyright 2026 The srwm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/* C interface to libsrwm.
 *
 * Every function returns an srwm_status. On failure, srwm_last_error() gives
 * a message for the calling thread, valid until that thread's next call.
 * Strings returned through char** must be released with srwm_string_free.
 */

#ifndef SRWM_SRWM_H_
#define SRWM_SRWM_H_

#include <stddef.h>
#include <stdint.h>

#if defined(SRWM_BUILDING_LIBRARY)
#define SRWM_API __attribute__((visibility("default")))
#else
#define SRWM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum srwm_status {
  SRWM_OK = 0,
  SRWM_ERR_ARGUMENT = 1, /* null pointer or invalid argument */
  SRWM_ERR_CONFIG = 2,   /* invalid or unknown configuration */
  SRWM_ERR_IO = 3,       /* file could not be read or written */
  SRWM_ERR_FORMAT = 4,   /* malformed tensor file or checkpoint */
  SRWM_ERR_NUMERIC = 5,  /* non-finite value during training */
  SRWM_ERR_INTERNAL = 6
} srwm_status;

typedef struct srwm_config srwm_config;
typedef struct srwm_checkpoint srwm_checkpoint;

SRWM_API const char* srwm_last_error(void);
SRWM_API const char* srwm_status_name(srwm_status status);
SRWM_API void srwm_string_free(char* s);

/* ---- configuration ---- */

/* Defaults, or a named preset ("full", "desk", "micro") when preset != NULL. */
SRWM_API srwm_status srwm_config_create(const char* preset, srwm_config** out);
SRWM_API void srwm_config_free(srwm_config* config);
/* Applies every "key = value" line of a file. */
SRWM_API srwm_status srwm_config_load(srwm_config* config, const char* path);
SRWM_API srwm_status srwm_config_set(srwm_config* config, const char* key, const char* value);
/* Full resolved configuration as "key=value" lines. */
SRWM_API srwm_status srwm_config_serialize(const srwm_config* config, char** out);
SRWM_API srwm_status srwm_config_validate(const srwm_config* config);

/* ---- training ---- */

typedef struct srwm_train_options {
  const char* checkpoint_path; /* required */
  const char* metrics_path;    /* CSV, optional */
  const char* resume_path;     /* continue from this checkpoint, optional */
  size_t stop_at;              /* 0 = configured steps */
  size_t log_every;            /* progress lines on stderr; 0 = silent */
} srwm_train_options;

typedef struct srwm_train_summary {
  size_t steps;
  double final_loss;
  double final_acc_student;
  double final_acc_teacher;
} srwm_train_summary;

SRWM_API srwm_status srwm_train(const srwm_config* config, const srwm_train_options* options,
                                srwm_train_summary* summary);

/* ---- checkpoints and evaluation ---- */

SRWM_API srwm_status srwm_checkpoint_open(const char* path, srwm_checkpoint** out);
SRWM_API void srwm_checkpoint_free(srwm_checkpoint* checkpoint);
/* Human-readable header, step and tensor listing. */
SRWM_API srwm_status srwm_checkpoint_describe(const srwm_checkpoint* checkpoint, char** out);

typedef struct srwm_eval_options {
  size_t episodes; /* 0 = 10000 */
  size_t queries;  /* 0 = 1 */
  uint64_t seed;
} srwm_eval_options;

SRWM_API srwm_status srwm_evaluate(const srwm_checkpoint* checkpoint, size_t k_test, const srwm_eval_options* options,
                                   double* accuracy);

/* Evaluates `count` checkpoints at each K_test. labels[i] names the config of
 * checkpoints[i]; checkpoints sharing a label are runs of that config. Any of
 * the output paths may be NULL; markdown_out receives the report table. */
SRWM_API srwm_status srwm_sweep(const char* const* labels, const char* const* checkpoints, size_t count,
                                const size_t* k_tests, size_t k_count, const srwm_eval_options* options,
                                const char* csv_path, const char* svg_path, const char* markdown_path,
                                char** markdown_out);

/* ---- tools ---- */

typedef struct srwm_gradcheck_result {
  double max_rel_error;
  size_t checked;
} srwm_gradcheck_result;

SRWM_API srwm_status srwm_gradcheck(const srwm_config* config, uint64_t seed, double eps,
                                    srwm_gradcheck_result* result);

/* Writes the configured synthetic pools as an image-directory dataset. */
SRWM_API srwm_status srwm_make_synthetic(const srwm_config* config, const char* out_dir, size_t examples_per_class,
                                         size_t* files_written);

/* Monte-Carlo accuracy of the nearest-true-center classifier on the test pool. */
SRWM_API srwm_status srwm_bayes_ceiling(const srwm_config* config, size_t episodes, uint64_t seed, double* out);

#ifdef __cplusplus
}
#endif

#endif /* SRWM_SRWM_H_ */
