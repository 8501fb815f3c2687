//! Closed-loop simulation: forecasts feed the planner every scheduling
//! step, a fast layer executes the plan against ground truth, and the
//! realized grid exchange is settled.

mod engine;
mod experiment;

pub use engine::{run_simulation, write_trace_csv, PhysicsCheck, PlanRecord, SimulationResult, SolveStats};
pub use experiment::{
    run_experiment, thread_count_from_env, CellOutcome, CellSummary, ExperimentOptions, ExperimentReport, THREADS_ENV,
};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{default_spec, BatterySpec};
use crate::forecast::ForecastTable;
use crate::mpc::{SolverBackend, SolverError};
use crate::tariff::{default_tariff, validate_tariff, Tariff};
use crate::timeseries::{Resolution, TimeSeriesError, Timestamp, MINUTES_PER_DAY};

/// Scheduling steps the planner supports, in minutes.
pub const SCHEDULING_STEPS: [u32; 3] = [60, 30, 15];

/// Default simulated span: five months.
pub const DEFAULT_MAX_DAYS: u32 = 153;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Rbc,
    MpcConstGrid,
    MpcConstBat,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Rbc => "rbc",
            ControllerKind::MpcConstGrid => "mpc_const_grid",
            ControllerKind::MpcConstBat => "mpc_const_bat",
        }
    }

    pub fn is_mpc(self) -> bool {
        self != ControllerKind::Rbc
    }
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rbc" => Ok(ControllerKind::Rbc),
            "mpc_const_grid" => Ok(ControllerKind::MpcConstGrid),
            "mpc_const_bat" => Ok(ControllerKind::MpcConstBat),
            other => Err(format!(
                "unknown controller '{other}' (rbc, mpc_const_grid, mpc_const_bat)"
            )),
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Ground truth averaged to the scheduling step.
    FullyAveraged,
    /// Ground truth at one minute.
    FineResolution,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::FullyAveraged => "fully_averaged",
            Mode::FineResolution => "fine_resolution",
        }
    }

    /// Ground-truth resolution this mode implies for a scheduling step.
    pub fn ground_truth(self, delta_s: Resolution) -> Resolution {
        match self {
            Mode::FullyAveraged => delta_s,
            Mode::FineResolution => Resolution::MINUTE,
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fully_averaged" => Ok(Mode::FullyAveraged),
            "fine_resolution" => Ok(Mode::FineResolution),
            other => Err(format!("unknown mode '{other}' (fully_averaged, fine_resolution)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForecastSource {
    /// The realized future, averaged to the scheduling step.
    Ideal,
    /// The same window one day earlier.
    Persistence,
    /// Precomputed forecasts keyed by origin.
    File(Arc<ForecastTable>),
}

impl ForecastSource {
    pub fn label(&self) -> &'static str {
        match self {
            ForecastSource::Ideal => "ideal",
            ForecastSource::Persistence => "real",
            ForecastSource::File(_) => "file",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub controller: ControllerKind,
    pub forecast: ForecastSource,
    pub delta_s: Resolution,
    pub delta_gt: Resolution,
    pub mode: Mode,
    pub horizon_hours: u32,
    /// Measured SoE at the first step, kWh.
    pub initial_soe: f64,
    pub spec: BatterySpec,
    pub tariff: Tariff,
    pub seed: u64,
    pub backend: SolverBackend,
    /// Minutes of data skipped before the first simulated step.
    pub start_offset_minutes: u32,
    /// Upper bound on the simulated span; the data length caps it too.
    pub max_days: Option<u32>,
    /// Keep every plan for the trace and plan dump.
    pub record_plans: bool,
}

impl SimulationConfig {
    /// Defaults: ideal forecasts, 24 h horizon, empty default battery,
    /// default tariff, structured solver, no offset, five months.
    pub fn new(controller: ControllerKind, mode: Mode, delta_s: Resolution) -> Self {
        let spec = default_spec();
        SimulationConfig {
            controller,
            forecast: ForecastSource::Ideal,
            delta_s,
            delta_gt: mode.ground_truth(delta_s),
            mode,
            horizon_hours: 24,
            initial_soe: spec.e_min,
            spec,
            tariff: default_tariff(),
            seed: 0,
            backend: SolverBackend::default(),
            start_offset_minutes: 0,
            max_days: Some(DEFAULT_MAX_DAYS),
            record_plans: false,
        }
    }

    pub fn with_forecast(mut self, forecast: ForecastSource) -> Self {
        self.forecast = forecast;
        self
    }

    /// Row label: `rbc`, or `mpc_<forecast>_<fast layer>`.
    pub fn model_id(&self) -> String {
        match self.controller {
            ControllerKind::Rbc => "rbc".to_string(),
            ControllerKind::MpcConstGrid => format!("mpc_{}_const_grid", self.forecast.label()),
            ControllerKind::MpcConstBat => format!("mpc_{}_const_bat", self.forecast.label()),
        }
    }

    /// Every violated constraint as `(key, message)`.
    pub fn violations(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |key: &str, msg: String| out.push((key.to_string(), msg));
        if !SCHEDULING_STEPS.contains(&self.delta_s.minutes()) {
            push(
                "delta_s",
                format!("{} min is not one of 60, 30, 15", self.delta_s.minutes()),
            );
        }
        let expected_gt = self.mode.ground_truth(self.delta_s);
        if self.delta_gt != expected_gt {
            push(
                "delta_gt",
                format!(
                    "{} mode needs delta_gt = {} min, got {}",
                    self.mode,
                    expected_gt.minutes(),
                    self.delta_gt.minutes()
                ),
            );
        }
        if self.horizon_hours == 0 || self.horizon_hours > 24 * 7 {
            push("horizon_hours", format!("{} is outside 1..=168", self.horizon_hours));
        }
        for v in self.spec.violations() {
            push("battery", v);
        }
        if !self.spec.contains(self.initial_soe) {
            push(
                "initial_soe",
                format!(
                    "{} kWh outside [{}, {}]",
                    self.initial_soe, self.spec.e_min, self.spec.e_max
                ),
            );
        }
        for v in validate_tariff(&self.tariff, self.spec.c_deg).violations {
            push("tariff", v.to_string());
        }
        if self.start_offset_minutes % 60 != 0 {
            push(
                "start_offset_minutes",
                format!("{} is not a whole number of hours", self.start_offset_minutes),
            );
        }
        let needs_history = self.controller.is_mpc() && self.forecast == ForecastSource::Persistence;
        if needs_history && self.start_offset_minutes < MINUTES_PER_DAY {
            push(
                "start_offset_minutes",
                "persistence forecasts need at least 1440 minutes of history".to_string(),
            );
        }
        if needs_history && self.horizon_hours > 24 {
            push(
                "horizon_hours",
                format!(
                    "persistence forecasts reach 24 h ahead, {} requested",
                    self.horizon_hours
                ),
            );
        }
        if self.max_days == Some(0) {
            push("max_days", "must be positive".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(SimError::Config(
                v.into_iter()
                    .map(|(k, m)| format!("{k}: {m}"))
                    .collect::<Vec<_>>()
                    .join("; "),
            ))
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("forecast at {at}: {message}")]
    Forecast { at: Timestamp, message: String },
    #[error("solver at {at}: {source}")]
    Solver { at: Timestamp, source: SolverError },
}

impl From<TimeSeriesError> for SimError {
    fn from(e: TimeSeriesError) -> Self {
        SimError::Data(e.to_string())
    }
}

impl SimError {
    /// Stable process exit code for this class of failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 1,
            SimError::Data(_) | SimError::Forecast { .. } => 2,
            SimError::Solver { .. } => 3,
        }
    }
}
