#include <stdio.h>
#include "gridshed.h"

int main(void) {
    GsTariff *tariff = NULL;
    GsSeries *forecast = NULL;
    GsPlan *plan = NULL;
    const double load[2] = {-4.0, 4.0};
    const uint32_t starts[1] = {0};
    const double imp[1] = {0.3};
    const double exp_[1] = {0.1};
    GsBatterySpec spec = gs_battery_default();

    if (gs_tariff_new(starts, imp, 1, starts, exp_, 1, &tariff) != GS_STATUS_OK) return 1;
    if (gs_series_new(0, 60, load, 2, &forecast) != GS_STATUS_OK) return 2;
    if (gs_solve_schedule(forecast, tariff, &spec, 0.0, GS_BACKEND_STRUCTURED, &plan) != GS_STATUS_OK) return 3;
    printf("%.4f\n", gs_plan_objective(plan));

    spec.e_max = -1.0;
    if (gs_solve_schedule(forecast, tariff, &spec, 0.0, GS_BACKEND_STRUCTURED, &plan) != GS_STATUS_INVALID_BATTERY) return 4;
    printf("%s\n", gs_last_error() != NULL ? "error set" : "no error");

    gs_plan_free(plan);
    gs_series_free(forecast);
    gs_tariff_free(tariff);
    return 0;
}
