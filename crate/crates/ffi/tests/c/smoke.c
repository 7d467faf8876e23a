#include <math.h>
#include <stdio.h>
#include <string.h>

#include "hopbound.h"

#define CHECK(cond)                                                   \
  do {                                                                \
    if (!(cond)) {                                                    \
      const char *err = hb_last_error();                              \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond,  \
              err ? err : "no error");                                \
      return 1;                                                       \
    }                                                                 \
  } while (0)

int main(int argc, char **argv) {
  CHECK(argc == 2);
  CHECK(strlen(hb_version()) > 0);

  HbRouter *router = NULL;
  CHECK(hb_router_new("r1", 1.5e6, 1e-6, 12000.0, HB_MODE_DETERMINISTIC,
                      &router) == HB_STATUS_OK);
  HbFlowSpec spec = {"f", 2e6, 1e6, 1e5, 1e-3, 0.05};
  HbDelayBound bound;
  CHECK(hb_router_reserve(router, &spec, 1, 0.0, &bound) == HB_STATUS_OK);
  CHECK(fabs(bound.value - (0.1 / 3.0 + 0.008)) < 1e-9);
  CHECK(hb_router_commit(router, "f", 1) == HB_STATUS_OK);
  CHECK(hb_router_admitted_count(router) == 1);
  CHECK(hb_router_commit(router, "nope", 1) == HB_STATUS_PROTOCOL);
  CHECK(hb_last_error() != NULL);
  hb_router_free(router);

  HbScenario *scenario = NULL;
  CHECK(hb_scenario_load(argv[1], &scenario) == HB_STATUS_OK);
  HbRunResult *result = NULL;
  CHECK(hb_run(scenario, true, &result) == HB_STATUS_OK);
  HbSummary summary;
  CHECK(hb_result_summary(result, &summary) == HB_STATUS_OK);
  CHECK(summary.admitted == 1 && summary.rejected == 0);
  char *json = NULL;
  CHECK(hb_result_summary_json(result, &json) == HB_STATUS_OK);
  CHECK(strstr(json, "\"admitted\": 1") != NULL);
  hb_string_free(json);
  hb_result_free(result);
  hb_scenario_free(scenario);

  puts("ok");
  return 0;
}
