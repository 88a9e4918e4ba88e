#ifndef FAULTFORGE_H
#define FAULTFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>

/*
 Callers must pass one of the listed values; anything else is undefined behaviour.
 */
typedef enum ff_gadget_kind {
  FF_GADGET_KIND_DROP = 0,
  FF_GADGET_KIND_REPLAY = 1,
  FF_GADGET_KIND_REORDER = 2,
} ff_gadget_kind;

typedef enum ff_outcome {
  FF_OUTCOME_SAFE = 0,
  FF_OUTCOME_ATTACK = 1,
  FF_OUTCOME_INCONCLUSIVE = 2,
} ff_outcome;

/*
 Result of every fallible call.
 */
typedef enum ff_status {
  FF_STATUS_OK = 0,
  FF_STATUS_NULL_ARGUMENT = 1,
  FF_STATUS_INVALID_UTF8 = 2,
  FF_STATUS_PARSE_ERROR = 3,
  FF_STATUS_UNKNOWN_PROPERTY = 4,
  FF_STATUS_INVALID_GADGET = 5,
  FF_STATUS_SYNTHESIS_ERROR = 6,
  FF_STATUS_BASELINE_VIOLATED = 7,
  FF_STATUS_INCONCLUSIVE = 8,
  FF_STATUS_UNKNOWN_FIXTURE = 9,
  FF_STATUS_PANIC = 10,
} ff_status;

/*
 Callers must pass one of the listed values; anything else is undefined behaviour.
 */
typedef enum ff_trace_style {
  FF_TRACE_STYLE_HUMAN = 0,
  FF_TRACE_STYLE_MACHINE = 1,
} ff_trace_style;

/*
 A parsed model.
 */
typedef struct ff_model ff_model;

/*
 The verdict of one attack search.
 */
typedef struct ff_verdict ff_verdict;

/*
 One gadget of a threat model: `kind` attached to channel `victim` with
 fault limit `limit`.
 */
typedef struct ff_gadget_spec {
  enum ff_gadget_kind kind;
  const char *victim;
  size_t limit;
} ff_gadget_spec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the last failed call on this thread, or null. The
 pointer stays valid until the next call into this library on the same
 thread.
 */
const char *ff_last_error(void);

/*
 Library version as a static string.
 */
const char *ff_version(void);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must be null or a string obtained from this library, not yet freed.
 */
void ff_string_free(char *s);

/*
 Parses `.fproto` text into a model.

 # Safety
 `text` must be a nul-terminated string and `out` a valid pointer.
 */
enum ff_status ff_model_parse(const char *text, struct ff_model **out);

/*
 Loads a bundled model: `"tcp"` or `"abp"`.

 # Safety
 `name` must be a nul-terminated string and `out` a valid pointer.
 */
enum ff_status ff_model_fixture(const char *name, struct ff_model **out);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` must be null or a handle from this library, not yet freed.
 */
void ff_model_free(struct ff_model *model);

/*
 Number of properties declared in the model.

 # Safety
 `model` must be null or a live model handle.
 */
size_t ff_model_property_count(const struct ff_model *model);

/*
 Name of property `index`, as a new string.

 # Safety
 `model` must be a live model handle and `out` a valid pointer.
 */
enum ff_status ff_model_property_name(const struct ff_model *model, size_t index, char **out);

/*
 Checks every property without an attacker. `max_states` of 0 uses the
 default cap. Returns `BaselineViolated` naming the property in the last
 error if one fails.

 # Safety
 `model` must be a live model handle.
 */
enum ff_status ff_model_check(const struct ff_model *model, size_t max_states);

/*
 Searches for an attack on `property` under the given gadgets.
 `max_states` of 0 uses the default cap (or `FAULTFORGE_STATE_CAP`).

 # Safety
 `model` must be a live model handle, `property` a nul-terminated string,
 `gadgets` an array of `gadget_count` specs (may be null when the count is
 0) and `out` a valid pointer.
 */
enum ff_status ff_attack(const struct ff_model *model,
                         const char *property,
                         const struct ff_gadget_spec *gadgets,
                         size_t gadget_count,
                         size_t max_states,
                         struct ff_verdict **out);

/*
 Outcome of a verdict. A null handle reads as inconclusive.

 # Safety
 `verdict` must be null or a live verdict handle.
 */
enum ff_outcome ff_verdict_outcome(const struct ff_verdict *verdict);

/*
 Number of product states the search explored.

 # Safety
 `verdict` must be null or a live verdict handle.
 */
size_t ff_verdict_states(const struct ff_verdict *verdict);

/*
 The whole verdict, including any trace, as JSON.

 # Safety
 `verdict` must be a live verdict handle and `out` a valid pointer.
 */
enum ff_status ff_verdict_json(const struct ff_verdict *verdict, char **out);

/*
 The attack trace rendered in `style`; an empty string for verdicts
 without a trace.

 # Safety
 `verdict` must be a live verdict handle and `out` a valid pointer.
 */
enum ff_status ff_verdict_trace(const struct ff_verdict *verdict,
                                enum ff_trace_style style,
                                char **out);

/*
 Releases a verdict. Null is ignored.

 # Safety
 `verdict` must be null or a handle from this library, not yet freed.
 */
void ff_verdict_free(struct ff_verdict *verdict);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAULTFORGE_H */
