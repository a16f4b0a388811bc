#ifndef LOCKSYNTH_H
#define LOCKSYNTH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ls_objective {
  LS_OBJECTIVE_NONE = 0,
  LS_OBJECTIVE_COARSE = 1,
  LS_OBJECTIVE_FINE = 2,
  LS_OBJECTIVE_PERF = 3,
} ls_objective;

typedef enum ls_status {
  LS_STATUS_OK = 0,
  /**
   * The program is not preemption-safe, violates the input precondition,
   * or the synthesized placement failed its self-check.
   */
  LS_STATUS_PROPERTY_FAILED = 1,
  LS_STATUS_NULL_ARGUMENT = 2,
  LS_STATUS_INVALID_UTF8 = 3,
  LS_STATUS_PARSE_ERROR = 4,
  LS_STATUS_INVALID_ARGUMENT = 5,
  LS_STATUS_SYNTHESIS_ERROR = 6,
  LS_STATUS_PANIC = 7,
} ls_status;

typedef struct ls_options ls_options;

typedef struct ls_program ls_program;

typedef struct ls_session ls_session;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *ls_last_error(void);

/**
 * # Safety
 * `src` must be a nul-terminated string and `out` a valid pointer.
 */
enum ls_status ls_program_parse(const char *src, struct ls_program **out);

/**
 * # Safety
 * `p` must come from `ls_program_parse` and not have been freed.
 */
void ls_program_free(struct ls_program *p);

struct ls_options *ls_options_new(void);

/**
 * # Safety
 * `o` must come from `ls_options_new` and not have been freed.
 */
void ls_options_free(struct ls_options *o);

/**
 * # Safety
 * `o` must be a live options handle.
 */
enum ls_status ls_options_set_objective(struct ls_options *o, enum ls_objective objective);

/**
 * Number of synthesized locks; 0 restores the default.
 *
 * # Safety
 * `o` must be a live options handle.
 */
enum ls_status ls_options_set_locks(struct ls_options *o, uint32_t locks);

/**
 * Largest displacement bound; the schedule doubles from 2 up to it.
 *
 * # Safety
 * `o` must be a live options handle.
 */
enum ls_status ls_options_set_bound(struct ls_options *o, uint32_t bound);

/**
 * # Safety
 * `o` must be a live options handle.
 */
enum ls_status ls_options_set_seed(struct ls_options *o, uint64_t seed);

/**
 * Check preemption-safety. `*report_json` (if non-null) receives the JSON
 * report, to be released with `ls_string_free`. Returns `Ok` when safe and
 * `PropertyFailed` otherwise.
 *
 * # Safety
 * `p` must be a live program; `o` may be null for defaults.
 */
enum ls_status ls_check(const struct ls_program *p, const struct ls_options *o, char **report_json);

/**
 * Run the pipeline. On `Ok` or a failed self-check (`PropertyFailed`),
 * `*out` receives a session.
 *
 * # Safety
 * `p` must be a live program, `o` live or null, `out` valid.
 */
enum ls_status ls_synthesize(const struct ls_program *p,
                             const struct ls_options *o,
                             struct ls_session **out);

/**
 * Patched source text, owned by the session.
 *
 * # Safety
 * `s` must be a live session or null.
 */
const char *ls_session_source(const struct ls_session *s);

/**
 * JSON report, owned by the session.
 *
 * # Safety
 * `s` must be a live session or null.
 */
const char *ls_session_report(const struct ls_session *s);

/**
 * Number of lock plus unlock statements inserted.
 *
 * # Safety
 * `s` must be a live session or null.
 */
uint32_t ls_session_insertions(const struct ls_session *s);

/**
 * # Safety
 * `s` must come from `ls_synthesize` and not have been freed.
 */
void ls_session_free(struct ls_session *s);

/**
 * # Safety
 * `s` must have been returned through a `char **` by this library.
 */
void ls_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* LOCKSYNTH_H */
