//! C ABI over the gridshed core.
//!
//! Every fallible function returns a [`GsStatus`]; on failure the message is
//! available from [`gs_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. Powers are kW, energies
//! kWh, prices €/kWh, times minutes since the series epoch.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gridshed::battery::{default_spec, BatterySpec, BatteryState};
use gridshed::controllers::{const_bat_step, const_grid_step, rbc_step, ControlStepResult};
use gridshed::ingest::generate_synthetic;
use gridshed::metrics::CostReport;
use gridshed::mpc::{solve_schedule_with, DispatchPlan, SolverBackend, SolverError};
use gridshed::sim::{run_simulation, ControllerKind, ForecastSource, Mode, SimError, SimulationConfig};
use gridshed::tariff::{default_tariff, settle, PriceSegment, SettlementResult, Tariff};
use gridshed::timeseries::{PowerSeries, Resolution, Timestamp};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidBattery = 3,
    InvalidTariff = 4,
    Solver = 5,
    Simulation = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(GsStatus, String);

impl Failure {
    fn arg(message: impl Into<String>) -> Self {
        Failure(GsStatus::InvalidArgument, message.into())
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        let status = match e {
            SolverError::Battery(_) | SolverError::InitialSoe { .. } => GsStatus::InvalidBattery,
            SolverError::PriceOrder { .. } => GsStatus::InvalidTariff,
            _ => GsStatus::Solver,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GsStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            GsStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(GsStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

fn resolution(minutes: u32) -> Result<Resolution, Failure> {
    Resolution::new(minutes).map_err(|e| Failure::arg(e.to_string()))
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

pub struct GsSeries(PowerSeries);

/// Copies `len` values into a new series starting at `start_minute` with
/// a fixed step.
///
/// # Safety
/// `values` must point to `len` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gs_series_new(
    start_minute: i64,
    step_minutes: u32,
    values: *const f64,
    len: usize,
    out: *mut *mut GsSeries,
) -> GsStatus {
    guard(|| {
        non_null(out, "out")?;
        let values = slice(values, len, "values")?.to_vec();
        let series = PowerSeries::new(Timestamp::from_minutes(start_minute), resolution(step_minutes)?, values)
            .map_err(|e| Failure::arg(e.to_string()))?;
        *out = Box::into_raw(Box::new(GsSeries(series)));
        Ok(())
    })
}

/// # Safety
/// `series` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gs_series_free(series: *mut GsSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// # Safety
/// `series` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_series_len(series: *const GsSeries) -> usize {
    series.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `series` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_series_step_minutes(series: *const GsSeries) -> u32 {
    series.as_ref().map_or(0, |s| s.0.resolution().minutes())
}

/// Borrowed pointer to the values, valid while the handle lives.
///
/// # Safety
/// `series` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_series_values(series: *const GsSeries) -> *const f64 {
    series.as_ref().map_or(ptr::null(), |s| s.0.values().as_ptr())
}

/// Block average onto a coarser step that is a multiple of the current one.
///
/// # Safety
/// `series` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_series_average_to(
    series: *const GsSeries,
    step_minutes: u32,
    out: *mut *mut GsSeries,
) -> GsStatus {
    guard(|| {
        non_null(series, "series")?;
        non_null(out, "out")?;
        let averaged = (*series)
            .0
            .average_to(resolution(step_minutes)?)
            .map_err(|e| Failure::arg(e.to_string()))?;
        *out = Box::into_raw(Box::new(GsSeries(averaged)));
        Ok(())
    })
}

pub struct GsTariff(Tariff);

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gs_tariff_default(out: *mut *mut GsTariff) -> GsStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = Box::into_raw(Box::new(GsTariff(default_tariff())));
        Ok(())
    })
}

/// Daily piecewise-constant curves: segment `i` starts at `*_starts[i]`
/// minutes after midnight. Both curves must start at 0.
///
/// # Safety
/// The arrays must hold the stated counts and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gs_tariff_new(
    import_starts: *const u32,
    import_prices: *const f64,
    import_len: usize,
    export_starts: *const u32,
    export_prices: *const f64,
    export_len: usize,
    out: *mut *mut GsTariff,
) -> GsStatus {
    guard(|| {
        non_null(out, "out")?;
        let curve = |starts: &[u32], prices: &[f64]| {
            starts
                .iter()
                .zip(prices)
                .map(|(&s, &p)| PriceSegment::new(s, p))
                .collect::<Vec<_>>()
        };
        let import = curve(
            slice(import_starts, import_len, "import_starts")?,
            slice(import_prices, import_len, "import_prices")?,
        );
        let export = curve(
            slice(export_starts, export_len, "export_starts")?,
            slice(export_prices, export_len, "export_prices")?,
        );
        let tariff = Tariff::new(import, export).map_err(|e| Failure(GsStatus::InvalidTariff, e.to_string()))?;
        *out = Box::into_raw(Box::new(GsTariff(tariff)));
        Ok(())
    })
}

/// # Safety
/// `tariff` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_tariff_free(tariff: *mut GsTariff) {
    if !tariff.is_null() {
        drop(Box::from_raw(tariff));
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GsBatterySpec {
    pub e_min: f64,
    pub e_max: f64,
    /// Most negative power, i.e. the charge limit.
    pub p_min: f64,
    pub p_max: f64,
    pub eta_ch: f64,
    pub eta_dis: f64,
    /// €/kWh of stored energy discharged.
    pub c_deg: f64,
}

impl From<GsBatterySpec> for BatterySpec {
    fn from(s: GsBatterySpec) -> Self {
        BatterySpec {
            e_min: s.e_min,
            e_max: s.e_max,
            p_min: s.p_min,
            p_max: s.p_max,
            eta_ch: s.eta_ch,
            eta_dis: s.eta_dis,
            c_deg: s.c_deg,
        }
    }
}

/// The 13.8 kWh / 5 kW reference battery.
#[no_mangle]
pub extern "C" fn gs_battery_default() -> GsBatterySpec {
    let s = default_spec();
    GsBatterySpec {
        e_min: s.e_min,
        e_max: s.e_max,
        p_min: s.p_min,
        p_max: s.p_max,
        eta_ch: s.eta_ch,
        eta_dis: s.eta_dis,
        c_deg: s.c_deg,
    }
}

/// # Safety
/// `spec` must be readable.
unsafe fn battery(spec: *const GsBatterySpec) -> Result<BatterySpec, Failure> {
    non_null(spec, "spec")?;
    let spec = BatterySpec::from(*spec);
    spec.validate()
        .map_err(|e| Failure(GsStatus::InvalidBattery, e.to_string()))?;
    Ok(spec)
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GsSettlement {
    pub imported_kwh: f64,
    pub exported_kwh: f64,
    pub import_cost: f64,
    pub export_revenue: f64,
    pub bill: f64,
}

impl From<SettlementResult> for GsSettlement {
    fn from(s: SettlementResult) -> Self {
        GsSettlement {
            imported_kwh: s.imported_kwh,
            exported_kwh: s.exported_kwh,
            import_cost: s.import_cost,
            export_revenue: s.export_revenue,
            bill: s.bill,
        }
    }
}

/// Settles a grid-exchange series, netting over windows of `netting_minutes`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_settle(
    grid: *const GsSeries,
    tariff: *const GsTariff,
    netting_minutes: u32,
    out: *mut GsSettlement,
) -> GsStatus {
    guard(|| {
        non_null(grid, "grid")?;
        non_null(tariff, "tariff")?;
        non_null(out, "out")?;
        let s =
            settle(&(*grid).0, &(*tariff).0, resolution(netting_minutes)?).map_err(|e| Failure::arg(e.to_string()))?;
        *out = s.into();
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsBackend {
    Structured = 0,
    Simplex = 1,
}

impl From<GsBackend> for SolverBackend {
    fn from(b: GsBackend) -> Self {
        match b {
            GsBackend::Structured => SolverBackend::Structured,
            GsBackend::Simplex => SolverBackend::Simplex,
        }
    }
}

pub struct GsPlan(DispatchPlan);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GsPlanStep {
    pub p_b: f64,
    pub p_g: f64,
    pub p_imp: f64,
    pub p_exp: f64,
    pub p_ch: f64,
    pub p_dis: f64,
    /// SoE at the start of the step.
    pub soe: f64,
}

/// Cost-optimal schedule over the forecast horizon from SoE `e0`.
///
/// # Safety
/// Handles and `spec` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_solve_schedule(
    forecast: *const GsSeries,
    tariff: *const GsTariff,
    spec: *const GsBatterySpec,
    e0: f64,
    backend: GsBackend,
    out: *mut *mut GsPlan,
) -> GsStatus {
    guard(|| {
        non_null(forecast, "forecast")?;
        non_null(tariff, "tariff")?;
        non_null(out, "out")?;
        let spec = battery(spec)?;
        let plan = solve_schedule_with(&(*forecast).0, &(*tariff).0, &spec, e0, backend.into())?;
        *out = Box::into_raw(Box::new(GsPlan(plan)));
        Ok(())
    })
}

/// # Safety
/// `plan` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_plan_free(plan: *mut GsPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// # Safety
/// `plan` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_plan_len(plan: *const GsPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.0.len())
}

/// Optimal objective in €, NaN for a null handle.
///
/// # Safety
/// `plan` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_plan_objective(plan: *const GsPlan) -> f64 {
    plan.as_ref().map_or(f64::NAN, |p| p.0.objective_value)
}

/// SoE after the last step.
///
/// # Safety
/// `plan` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_plan_final_soe(plan: *const GsPlan) -> f64 {
    plan.as_ref().and_then(|p| p.0.soe.last().copied()).unwrap_or(f64::NAN)
}

/// # Safety
/// `plan` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_plan_step(plan: *const GsPlan, index: usize, out: *mut GsPlanStep) -> GsStatus {
    guard(|| {
        non_null(plan, "plan")?;
        non_null(out, "out")?;
        let p = &(*plan).0;
        let s = p
            .steps
            .get(index)
            .ok_or_else(|| Failure::arg(format!("step {index} out of range ({} steps)", p.len())))?;
        *out = GsPlanStep {
            p_b: s.p_b,
            p_g: s.p_g,
            p_imp: s.p_imp,
            p_exp: s.p_exp,
            p_ch: s.p_ch,
            p_dis: s.p_dis,
            soe: p.soe[index],
        };
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GsControlStep {
    pub p_b: f64,
    pub p_g: f64,
    pub soe: f64,
}

impl From<ControlStepResult> for GsControlStep {
    fn from(r: ControlStepResult) -> Self {
        GsControlStep {
            p_b: r.p_b,
            p_g: r.p_g,
            soe: r.new_state.e,
        }
    }
}

/// # Safety
/// `spec` must be readable and `out` writable.
unsafe fn control(
    spec: *const GsBatterySpec,
    soe: f64,
    dt_hours: f64,
    out: *mut GsControlStep,
    step: impl FnOnce(&BatterySpec, BatteryState) -> ControlStepResult,
) -> GsStatus {
    guard(|| {
        non_null(out, "out")?;
        let spec = battery(spec)?;
        if !(dt_hours.is_finite() && dt_hours > 0.0) {
            return Err(Failure::arg(format!("step length {dt_hours} h must be positive")));
        }
        let state = BatteryState::new(&spec, soe).map_err(|e| Failure(GsStatus::InvalidBattery, e.to_string()))?;
        *out = step(&spec, state).into();
        Ok(())
    })
}

/// Rule-based step: the battery absorbs the net load within its limits.
///
/// # Safety
/// `spec` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_rbc_step(
    spec: *const GsBatterySpec,
    soe: f64,
    net_load: f64,
    dt_hours: f64,
    out: *mut GsControlStep,
) -> GsStatus {
    control(spec, soe, dt_hours, out, |s, st| rbc_step(s, st, net_load, dt_hours))
}

/// Holds the grid exchange at `planned_p_g`.
///
/// # Safety
/// `spec` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_const_grid_step(
    planned_p_g: f64,
    spec: *const GsBatterySpec,
    soe: f64,
    net_load: f64,
    dt_hours: f64,
    out: *mut GsControlStep,
) -> GsStatus {
    control(spec, soe, dt_hours, out, |s, st| {
        const_grid_step(planned_p_g, s, st, net_load, dt_hours)
    })
}

/// Holds the battery at `planned_p_b`.
///
/// # Safety
/// `spec` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_const_bat_step(
    planned_p_b: f64,
    spec: *const GsBatterySpec,
    soe: f64,
    net_load: f64,
    dt_hours: f64,
    out: *mut GsControlStep,
) -> GsStatus {
    control(spec, soe, dt_hours, out, |s, st| {
        const_bat_step(planned_p_b, s, st, net_load, dt_hours)
    })
}

/// Deterministic 1-min synthetic net load for one building.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gs_generate_synthetic(
    seed: u64,
    days: u32,
    panel_count: u32,
    out: *mut *mut GsSeries,
) -> GsStatus {
    guard(|| {
        non_null(out, "out")?;
        if days == 0 {
            return Err(Failure::arg("days must be positive"));
        }
        let b = generate_synthetic(seed, days, panel_count);
        *out = Box::into_raw(Box::new(GsSeries(b.net_load)));
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsController {
    Rbc = 0,
    MpcConstGrid = 1,
    MpcConstBat = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsForecast {
    Ideal = 0,
    Persistence = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsMode {
    FullyAveraged = 0,
    FineResolution = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GsSimConfig {
    pub controller: GsController,
    pub forecast: GsForecast,
    pub mode: GsMode,
    pub delta_s_minutes: u32,
    pub horizon_hours: u32,
    pub initial_soe: f64,
    pub start_offset_minutes: u32,
    /// 0 means no cap beyond the data length.
    pub max_days: u32,
    pub backend: GsBackend,
}

/// Defaults for a controller, mode and scheduling step.
#[no_mangle]
pub extern "C" fn gs_sim_config_default(controller: GsController, mode: GsMode, delta_s_minutes: u32) -> GsSimConfig {
    GsSimConfig {
        controller,
        forecast: GsForecast::Ideal,
        mode,
        delta_s_minutes,
        horizon_hours: 24,
        initial_soe: default_spec().e_min,
        start_offset_minutes: 0,
        max_days: 0,
        backend: GsBackend::Structured,
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GsCostReport {
    pub imported_kwh: f64,
    pub exported_kwh: f64,
    pub import_cost: f64,
    pub export_revenue: f64,
    pub discharged_kwh: f64,
    pub degradation: f64,
    pub bill: f64,
    pub total: f64,
}

impl From<CostReport> for GsCostReport {
    fn from(r: CostReport) -> Self {
        GsCostReport {
            imported_kwh: r.imported_kwh,
            exported_kwh: r.exported_kwh,
            import_cost: r.import_cost,
            export_revenue: r.export_revenue,
            discharged_kwh: r.discharged_kwh,
            degradation: r.degradation,
            bill: r.bill,
            total: r.total,
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let status = match e {
            SimError::Config(_) => GsStatus::InvalidArgument,
            _ => GsStatus::Simulation,
        };
        Failure(status, e.to_string())
    }
}

/// Simulates one building's 1-min net load and reports its costs.
///
/// # Safety
/// Handles and pointers must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_simulate(
    net_load: *const GsSeries,
    config: *const GsSimConfig,
    tariff: *const GsTariff,
    spec: *const GsBatterySpec,
    out: *mut GsCostReport,
) -> GsStatus {
    guard(|| {
        non_null(net_load, "net_load")?;
        non_null(config, "config")?;
        non_null(tariff, "tariff")?;
        non_null(out, "out")?;
        let c = *config;
        let controller = match c.controller {
            GsController::Rbc => ControllerKind::Rbc,
            GsController::MpcConstGrid => ControllerKind::MpcConstGrid,
            GsController::MpcConstBat => ControllerKind::MpcConstBat,
        };
        let mode = match c.mode {
            GsMode::FullyAveraged => Mode::FullyAveraged,
            GsMode::FineResolution => Mode::FineResolution,
        };
        let forecast = match c.forecast {
            GsForecast::Ideal => ForecastSource::Ideal,
            GsForecast::Persistence => ForecastSource::Persistence,
        };
        let mut cfg = SimulationConfig::new(controller, mode, resolution(c.delta_s_minutes)?).with_forecast(forecast);
        cfg.spec = battery(spec)?;
        cfg.tariff = (*tariff).0.clone();
        cfg.horizon_hours = c.horizon_hours;
        cfg.initial_soe = c.initial_soe;
        cfg.start_offset_minutes = c.start_offset_minutes;
        cfg.max_days = (c.max_days > 0).then_some(c.max_days);
        cfg.backend = c.backend.into();
        cfg.validate()?;
        let result = run_simulation(&cfg, &(*net_load).0)?;
        *out = result.report.into();
        Ok(())
    })
}
