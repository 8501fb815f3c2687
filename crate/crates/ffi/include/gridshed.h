#ifndef GRIDSHED_H
#define GRIDSHED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GsStatus {
  GS_STATUS_OK = 0,
  GS_STATUS_NULL_POINTER = 1,
  GS_STATUS_INVALID_ARGUMENT = 2,
  GS_STATUS_INVALID_BATTERY = 3,
  GS_STATUS_INVALID_TARIFF = 4,
  GS_STATUS_SOLVER = 5,
  GS_STATUS_SIMULATION = 6,
  GS_STATUS_PANIC = 7,
} GsStatus;

typedef enum GsBackend {
  GS_BACKEND_STRUCTURED = 0,
  GS_BACKEND_SIMPLEX = 1,
} GsBackend;

typedef enum GsController {
  GS_CONTROLLER_RBC = 0,
  GS_CONTROLLER_MPC_CONST_GRID = 1,
  GS_CONTROLLER_MPC_CONST_BAT = 2,
} GsController;

typedef enum GsForecast {
  GS_FORECAST_IDEAL = 0,
  GS_FORECAST_PERSISTENCE = 1,
} GsForecast;

typedef enum GsMode {
  GS_MODE_FULLY_AVERAGED = 0,
  GS_MODE_FINE_RESOLUTION = 1,
} GsMode;

typedef struct GsPlan GsPlan;

typedef struct GsSeries GsSeries;

typedef struct GsTariff GsTariff;

typedef struct GsBatterySpec {
  double e_min;
  double e_max;
  // Most negative power, i.e. the charge limit.
  double p_min;
  double p_max;
  double eta_ch;
  double eta_dis;
  // €/kWh of stored energy discharged.
  double c_deg;
} GsBatterySpec;

typedef struct GsSettlement {
  double imported_kwh;
  double exported_kwh;
  double import_cost;
  double export_revenue;
  double bill;
} GsSettlement;

typedef struct GsPlanStep {
  double p_b;
  double p_g;
  double p_imp;
  double p_exp;
  double p_ch;
  double p_dis;
  // SoE at the start of the step.
  double soe;
} GsPlanStep;

typedef struct GsControlStep {
  double p_b;
  double p_g;
  double soe;
} GsControlStep;

typedef struct GsSimConfig {
  enum GsController controller;
  enum GsForecast forecast;
  enum GsMode mode;
  uint32_t delta_s_minutes;
  uint32_t horizon_hours;
  double initial_soe;
  uint32_t start_offset_minutes;
  // 0 means no cap beyond the data length.
  uint32_t max_days;
  enum GsBackend backend;
} GsSimConfig;

typedef struct GsCostReport {
  double imported_kwh;
  double exported_kwh;
  double import_cost;
  double export_revenue;
  double discharged_kwh;
  double degradation;
  double bill;
  double total;
} GsCostReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Valid until the
// next failing call on the same thread.
const char *gs_last_error(void);

// Library version as a static NUL-terminated string.
const char *gs_version(void);

// Copies `len` values into a new series starting at `start_minute` with
// a fixed step.
//
// # Safety
// `values` must point to `len` doubles and `out` must be writable.
enum GsStatus gs_series_new(int64_t start_minute,
                            uint32_t step_minutes,
                            const double *values,
                            size_t len,
                            struct GsSeries **out);

// # Safety
// `series` must be null or a handle from this library, not yet freed.
void gs_series_free(struct GsSeries *series);

// # Safety
// `series` must be a live handle.
size_t gs_series_len(const struct GsSeries *series);

// # Safety
// `series` must be a live handle.
uint32_t gs_series_step_minutes(const struct GsSeries *series);

// Borrowed pointer to the values, valid while the handle lives.
//
// # Safety
// `series` must be a live handle.
const double *gs_series_values(const struct GsSeries *series);

// Block average onto a coarser step that is a multiple of the current one.
//
// # Safety
// `series` must be a live handle and `out` writable.
enum GsStatus gs_series_average_to(const struct GsSeries *series,
                                   uint32_t step_minutes,
                                   struct GsSeries **out);

// # Safety
// `out` must be writable.
enum GsStatus gs_tariff_default(struct GsTariff **out);

// Daily piecewise-constant curves: segment `i` starts at `*_starts[i]`
// minutes after midnight. Both curves must start at 0.
//
// # Safety
// The arrays must hold the stated counts and `out` must be writable.
enum GsStatus gs_tariff_new(const uint32_t *import_starts,
                            const double *import_prices,
                            size_t import_len,
                            const uint32_t *export_starts,
                            const double *export_prices,
                            size_t export_len,
                            struct GsTariff **out);

// # Safety
// `tariff` must be null or a live handle.
void gs_tariff_free(struct GsTariff *tariff);

// The 13.8 kWh / 5 kW reference battery.
struct GsBatterySpec gs_battery_default(void);

// Settles a grid-exchange series, netting over windows of `netting_minutes`.
//
// # Safety
// Handles must be live and `out` writable.
enum GsStatus gs_settle(const struct GsSeries *grid,
                        const struct GsTariff *tariff,
                        uint32_t netting_minutes,
                        struct GsSettlement *out);

// Cost-optimal schedule over the forecast horizon from SoE `e0`.
//
// # Safety
// Handles and `spec` must be valid and `out` writable.
enum GsStatus gs_solve_schedule(const struct GsSeries *forecast,
                                const struct GsTariff *tariff,
                                const struct GsBatterySpec *spec,
                                double e0,
                                enum GsBackend backend,
                                struct GsPlan **out);

// # Safety
// `plan` must be null or a live handle.
void gs_plan_free(struct GsPlan *plan);

// # Safety
// `plan` must be a live handle.
size_t gs_plan_len(const struct GsPlan *plan);

// Optimal objective in €, NaN for a null handle.
//
// # Safety
// `plan` must be a live handle.
double gs_plan_objective(const struct GsPlan *plan);

// SoE after the last step.
//
// # Safety
// `plan` must be a live handle.
double gs_plan_final_soe(const struct GsPlan *plan);

// # Safety
// `plan` must be a live handle and `out` writable.
enum GsStatus gs_plan_step(const struct GsPlan *plan, size_t index, struct GsPlanStep *out);

// Rule-based step: the battery absorbs the net load within its limits.
//
// # Safety
// `spec` must be readable and `out` writable.
enum GsStatus gs_rbc_step(const struct GsBatterySpec *spec,
                          double soe,
                          double net_load,
                          double dt_hours,
                          struct GsControlStep *out);

// Holds the grid exchange at `planned_p_g`.
//
// # Safety
// `spec` must be readable and `out` writable.
enum GsStatus gs_const_grid_step(double planned_p_g,
                                 const struct GsBatterySpec *spec,
                                 double soe,
                                 double net_load,
                                 double dt_hours,
                                 struct GsControlStep *out);

// Holds the battery at `planned_p_b`.
//
// # Safety
// `spec` must be readable and `out` writable.
enum GsStatus gs_const_bat_step(double planned_p_b,
                                const struct GsBatterySpec *spec,
                                double soe,
                                double net_load,
                                double dt_hours,
                                struct GsControlStep *out);

// Deterministic 1-min synthetic net load for one building.
//
// # Safety
// `out` must be writable.
enum GsStatus gs_generate_synthetic(uint64_t seed,
                                    uint32_t days,
                                    uint32_t panel_count,
                                    struct GsSeries **out);

// Defaults for a controller, mode and scheduling step.
struct GsSimConfig gs_sim_config_default(enum GsController controller,
                                         enum GsMode mode,
                                         uint32_t delta_s_minutes);

// Simulates one building's 1-min net load and reports its costs.
//
// # Safety
// Handles and pointers must be valid and `out` writable.
enum GsStatus gs_simulate(const struct GsSeries *net_load,
                          const struct GsSimConfig *config,
                          const struct GsTariff *tariff,
                          const struct GsBatterySpec *spec,
                          struct GsCostReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIDSHED_H */
