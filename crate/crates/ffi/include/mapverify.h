#ifndef MAPVERIFY_H
#define MAPVERIFY_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MvStatus {
  MV_STATUS_OK = 0,
  MV_STATUS_NULL_ARGUMENT = 1,
  MV_STATUS_INVALID_UTF8 = 2,
  MV_STATUS_MAP_ERROR = 3,
  MV_STATUS_RULES_ERROR = 4,
  MV_STATUS_CONFIG_ERROR = 5,
  MV_STATUS_EVAL_ERROR = 6,
  MV_STATUS_PANIC = 7,
} MvStatus;

typedef struct MvNetwork MvNetwork;

typedef struct MvReport MvReport;

typedef struct MvRuleset MvRuleset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses a map document.
 *
 * # Safety
 * `xml` is a NUL-terminated string; `out` is writable. On success `*out`
 * holds a network to release with [`mv_network_free`].
 */
enum MvStatus mv_network_from_xml(const char *xml, struct MvNetwork **out);

/**
 * # Safety
 * `net` is null or came from [`mv_network_from_xml`] and is not used again.
 */
void mv_network_free(struct MvNetwork *net);

/**
 * Number of lanelets; 0 for a null handle.
 *
 * # Safety
 * `net` is null or a live network handle.
 */
size_t mv_network_len(const struct MvNetwork *net);

/**
 * Loads and links a ruleset. Passing null for both sources selects the
 * shipped rules and predicates at default thresholds.
 *
 * # Safety
 * `rules` and `predicates` are null or NUL-terminated strings; `out` is
 * writable. Release the result with [`mv_ruleset_free`].
 */
enum MvStatus mv_ruleset_load(const char *rules, const char *predicates, struct MvRuleset **out);

/**
 * # Safety
 * `rules` is null or came from [`mv_ruleset_load`] and is not used again.
 */
void mv_ruleset_free(struct MvRuleset *rules);

/**
 * Evaluates every rule on `net`. `config_toml` is null for the default
 * evaluation settings.
 *
 * # Safety
 * Handles are live; `config_toml` is null or NUL-terminated; `out` is
 * writable. Release the result with [`mv_report_free`].
 */
enum MvStatus mv_verify(const struct MvRuleset *rules,
                        const struct MvNetwork *net,
                        const char *config_toml,
                        struct MvReport **out);

/**
 * # Safety
 * `report` is null or came from [`mv_verify`] and is not used again.
 */
void mv_report_free(struct MvReport *report);

/**
 * Number of rules with at least one violation; 0 for a null handle.
 *
 * # Safety
 * `report` is null or a live report handle.
 */
size_t mv_report_violated_count(const struct MvReport *report);

/**
 * Total violations across rules; 0 for a null handle.
 *
 * # Safety
 * `report` is null or a live report handle.
 */
size_t mv_report_violation_count(const struct MvReport *report);

/**
 * Renders the JSON report. `map_name` is recorded in the `run` block and
 * may be null.
 *
 * # Safety
 * `report` is live; `map_name` is null or NUL-terminated; `out` is
 * writable. Release the string with [`mv_string_free`].
 */
enum MvStatus mv_report_to_json(const struct MvReport *report, const char *map_name, char **out);

/**
 * # Safety
 * `s` is null or a string returned by this library, not freed before.
 */
void mv_string_free(char *s);

/**
 * Message for the last failed call on this thread, or null after a
 * success. The pointer stays valid until the next call into the library
 * from the same thread.
 */
const char *mv_last_error_message(void);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* MAPVERIFY_H */
