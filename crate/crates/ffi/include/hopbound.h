#ifndef HOPBOUND_H
#define HOPBOUND_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HbMode {
  HB_MODE_DETERMINISTIC = 0,
  HB_MODE_EFFECTIVE = 1,
} HbMode;

typedef enum HbStatus {
  HB_STATUS_OK = 0,
  HB_STATUS_NULL_POINTER = 1,
  // Bad numeric parameter, non-UTF-8 string or malformed flow spec.
  HB_STATUS_INVALID_ARGUMENT = 2,
  // Scenario could not be read, parsed or validated.
  HB_STATUS_SCENARIO = 3,
  // Admitting the flow would push the long-run rate to capacity.
  HB_STATUS_UNSTABLE = 4,
  // Reservation state does not allow the operation (duplicate, unknown,
  // expired or stale nonce).
  HB_STATUS_PROTOCOL = 5,
  // Any other simulation failure.
  HB_STATUS_SIMULATION = 6,
  HB_STATUS_PANIC = 7,
} HbStatus;

typedef struct HbRouter HbRouter;

typedef struct HbRunResult HbRunResult;

typedef struct HbScenario HbScenario;

typedef struct HbSummary {
  uint64_t admitted;
  uint64_t rejected;
  double utilization;
  double max_cum_bound;
  uint64_t samples;
  uint64_t violations;
  double violation_freq;
  uint64_t hop_violations;
  uint64_t lost_packets;
  uint64_t protocol_errors;
  uint64_t events;
} HbSummary;

// Traffic contract of one flow. A non-finite `peak_rate` means unbounded.
typedef struct HbFlowSpec {
  const char *flow_id;
  double peak_rate;
  double sustained_rate;
  double burst;
  double epsilon;
  double app_delay_bound;
} HbFlowSpec;

typedef struct HbDelayBound {
  double value;
  double busy_period;
  double achieved_at;
} HbDelayBound;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static string.
const char *hb_version(void);

// Message of the most recent failure on this thread, or NULL.
// The pointer stays valid until the next failing call on the same thread.
const char *hb_last_error(void);

// Frees a string returned by this library. NULL is ignored.
//
// # Safety
// `s` is NULL or came from this library and was not freed before.
void hb_string_free(char *s);

// Reads and validates a TOML scenario file.
//
// # Safety
// `path` is a NUL-terminated string; `out` is writable.
enum HbStatus hb_scenario_load(const char *path, struct HbScenario **out);

// Parses and validates a TOML scenario held in memory.
//
// # Safety
// `text` is a NUL-terminated string; `out` is writable.
enum HbStatus hb_scenario_parse(const char *text, struct HbScenario **out);

// # Safety
// `scenario` is a live handle.
enum HbStatus hb_scenario_set_seed(struct HbScenario *scenario, uint64_t seed);

// # Safety
// `scenario` is a live handle.
enum HbStatus hb_scenario_set_mode(struct HbScenario *scenario, enum HbMode mode);

// # Safety
// `scenario` is NULL or a handle not freed before.
void hb_scenario_free(struct HbScenario *scenario);

// Runs a scenario to quiescence. With `admit_only` the data plane is off
// and only the signaling exchange is simulated.
//
// # Safety
// `scenario` is a live handle; `out` is writable.
enum HbStatus hb_run(const struct HbScenario *scenario, bool admit_only, struct HbRunResult **out);

// # Safety
// `result` is a live handle; `out` is writable.
enum HbStatus hb_result_summary(const struct HbRunResult *result, struct HbSummary *out);

// Full summary as pretty JSON; free it with [`hb_string_free`].
//
// # Safety
// `result` is a live handle; `out` is writable.
enum HbStatus hb_result_summary_json(const struct HbRunResult *result, char **out);

// Number of admission decisions the home agents took. 0 for NULL.
//
// # Safety
// `result` is NULL or a live handle.
size_t hb_result_decision_count(const struct HbRunResult *result);

// # Safety
// `result` is NULL or a handle not freed before.
void hb_result_free(struct HbRunResult *result);

// A standalone reservable interface.
//
// # Safety
// `router_id` is a NUL-terminated string; `out` is writable.
enum HbStatus hb_router_new(const char *router_id,
                            double capacity,
                            double node_epsilon,
                            double packet_size,
                            enum HbMode mode,
                            struct HbRouter **out);

// Delay bound the router would report for `spec` on top of what it holds.
// Does not change router state.
//
// # Safety
// `router` is a live handle; `spec` and `out` are valid pointers.
enum HbStatus hb_router_local_bound(const struct HbRouter *router,
                                    const struct HbFlowSpec *spec,
                                    struct HbDelayBound *out);

// Places a tentative reservation and reports the resulting bound.
//
// # Safety
// As for [`hb_router_local_bound`].
enum HbStatus hb_router_reserve(struct HbRouter *router,
                                const struct HbFlowSpec *spec,
                                uint64_t nonce,
                                double now,
                                struct HbDelayBound *out);

// Promotes a tentative reservation to admitted.
//
// # Safety
// `router` is a live handle; `flow_id` is a NUL-terminated string.
enum HbStatus hb_router_commit(struct HbRouter *router, const char *flow_id, uint64_t nonce);

// Drops a tentative or admitted reservation.
//
// # Safety
// As for [`hb_router_commit`].
enum HbStatus hb_router_release(struct HbRouter *router, const char *flow_id, uint64_t nonce);

// Expires tentative reservations whose lifetime ended by `now`; writes
// how many were dropped to `expired` when it is not NULL.
//
// # Safety
// `router` is a live handle; `expired` is NULL or writable.
enum HbStatus hb_router_expire(struct HbRouter *router, double now, size_t *expired);

// Admitted reservations held. 0 for NULL.
//
// # Safety
// `router` is NULL or a live handle.
size_t hb_router_admitted_count(const struct HbRouter *router);

// Tentative reservations held. 0 for NULL.
//
// # Safety
// `router` is NULL or a live handle.
size_t hb_router_tentative_count(const struct HbRouter *router);

// # Safety
// `router` is NULL or a handle not freed before.
void hb_router_free(struct HbRouter *router);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOPBOUND_H */
