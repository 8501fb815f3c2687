//! TOML experiment configuration. A file describes the battery, tariff,
//! data source and a list of runs; resolving it expands the runs into the
//! flat matrix of simulation configs the engine executes.
//!
//! ```toml
//! seed = 42
//! out = "out"
//!
//! [data]
//! source = "synthetic"   # or "csv" with path = "buildings.csv"
//! buildings = 15
//! days = 15
//!
//! [simulation]
//! horizon_hours = 24
//! start_offset_minutes = 1440
//!
//! [battery]
//! e_max = 13.8
//!
//! [tariff]
//! import = [{ from = "00:00", price = 0.22 }, { from = "06:00", price = 0.32 }]
//! export = [{ from = "00:00", price = 0.07 }]
//!
//! [[run]]
//! controller = "mpc_const_grid"
//! forecast = "persistence"
//! modes = ["fine_resolution"]
//! delta_s = [60, 30, 15]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::BatterySpec;
use crate::forecast::ForecastTable;
use crate::mpc::SolverBackend;
use crate::sim::{ControllerKind, ForecastSource, Mode, SimulationConfig, DEFAULT_MAX_DAYS, SCHEDULING_STEPS};
use crate::tariff::{default_tariff, validate_tariff, PriceSegment, Tariff};
use crate::timeseries::{Resolution, MINUTES_PER_DAY};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{}", format_violations(.0))]
    Invalid(Vec<Violation>),
    /// The config is well formed but a file it names cannot be used.
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
}

impl ConfigError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ConfigError::Data { .. } => 2,
            _ => 1,
        }
    }
}

/// One failed check, located by a dotted key path such as `run[1].delta_s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(Violation::to_string).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub buildings: usize,
    pub days: u32,
    /// Precomputed forecasts used by runs with `forecast = "file"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forecast_file: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataKind::Synthetic,
            path: None,
            buildings: 15,
            days: 15,
            forecast_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub horizon_hours: u32,
    /// Defaults to the battery's `e_min`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_soe: Option<f64>,
    pub start_offset_minutes: u32,
    pub max_days: u32,
    pub backend: SolverBackend,
    pub record_plans: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            horizon_hours: 24,
            initial_soe: None,
            start_offset_minutes: MINUTES_PER_DAY,
            max_days: DEFAULT_MAX_DAYS,
            backend: SolverBackend::Structured,
            record_plans: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentEntry {
    /// `HH:MM` at which this price starts.
    pub from: String,
    /// €/kWh
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TariffSection {
    pub import: Vec<SegmentEntry>,
    pub export: Vec<SegmentEntry>,
}

impl Default for TariffSection {
    fn default() -> Self {
        let d = default_tariff();
        TariffSection {
            import: d.import_curve().iter().map(segment_entry).collect(),
            export: d.export_curve().iter().map(segment_entry).collect(),
        }
    }
}

fn segment_entry(s: &PriceSegment) -> SegmentEntry {
    SegmentEntry {
        from: format!("{:02}:{:02}", s.start_minute / 60, s.start_minute % 60),
        price: s.price,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastKind {
    Ideal,
    Persistence,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub controller: ControllerKind,
    #[serde(default = "default_forecast")]
    pub forecast: ForecastKind,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default = "default_steps")]
    pub delta_s: Vec<u32>,
    /// Overrides the ground-truth step the mode implies; checked against it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_gt: Option<u32>,
}

fn default_forecast() -> ForecastKind {
    ForecastKind::Ideal
}

fn default_modes() -> Vec<Mode> {
    vec![Mode::FullyAveraged, Mode::FineResolution]
}

fn default_steps() -> Vec<u32> {
    SCHEDULING_STEPS.to_vec()
}

impl RunSection {
    pub fn new(controller: ControllerKind, forecast: ForecastKind) -> Self {
        RunSection {
            controller,
            forecast,
            modes: default_modes(),
            delta_s: default_steps(),
            delta_gt: None,
        }
    }
}

/// RBC, MPC with ideal and with persistence forecasts under the
/// constant-grid fast layer, and ideal MPC under the constant-battery one.
pub fn default_runs() -> Vec<RunSection> {
    vec![
        RunSection::new(ControllerKind::Rbc, ForecastKind::Ideal),
        RunSection::new(ControllerKind::MpcConstGrid, ForecastKind::Ideal),
        RunSection::new(ControllerKind::MpcConstGrid, ForecastKind::Persistence),
        RunSection::new(ControllerKind::MpcConstBat, ForecastKind::Ideal),
    ]
}

/// Provenance block the CLI adds when it writes a config back out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestInfo {
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: u64,
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestInfo>,
    pub data: DataSection,
    pub simulation: SimulationSection,
    pub battery: BatterySpec,
    pub tariff: TariffSection,
    #[serde(rename = "run")]
    pub runs: Vec<RunSection>,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile {
            seed: 42,
            out: PathBuf::from("out"),
            manifest: None,
            data: DataSection::default(),
            simulation: SimulationSection::default(),
            battery: BatterySpec::default(),
            tariff: TariffSection::default(),
            runs: default_runs(),
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Paths in the file are relative to `base`; this makes them absolute.
    pub fn rebase_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.data.path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.data.forecast_file.as_mut() {
            fix(p);
        }
    }

    /// The tariff, if its curves are well formed.
    pub fn build_tariff(&self) -> Option<Tariff> {
        self.tariff(&mut Vec::new())
    }

    fn tariff(&self, out: &mut Vec<Violation>) -> Option<Tariff> {
        let import = curve("tariff.import", &self.tariff.import, out);
        let export = curve("tariff.export", &self.tariff.export, out);
        match Tariff::new(import?, export?) {
            Ok(t) => Some(t),
            Err(e) => {
                out.push(violation("tariff", e.to_string()));
                None
            }
        }
    }

    /// Every problem found, without stopping at the first.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for m in self.battery.violations() {
            out.push(violation("battery", m));
        }
        if let Some(t) = self.tariff(&mut out) {
            for v in validate_tariff(&t, self.battery.c_deg).violations {
                out.push(violation("tariff", v.to_string()));
            }
        }
        match self.data.source {
            DataKind::Csv if self.data.path.is_none() => {
                out.push(violation("data.path", "required when source = \"csv\"".into()))
            }
            DataKind::Synthetic => {
                if self.data.buildings == 0 {
                    out.push(violation("data.buildings", "must be positive".into()));
                }
                if self.data.days < 2 {
                    out.push(violation("data.days", "must be at least 2".into()));
                }
            }
            DataKind::Csv => {}
        }
        if self.runs.is_empty() {
            out.push(violation("run", "at least one run is required".into()));
        }
        for (i, run) in self.runs.iter().enumerate() {
            if run.modes.is_empty() {
                out.push(violation(&format!("run[{i}].modes"), "must not be empty".into()));
            }
            if run.delta_s.is_empty() {
                out.push(violation(&format!("run[{i}].delta_s"), "must not be empty".into()));
            }
            for &m in &run.delta_s {
                if !SCHEDULING_STEPS.contains(&m) {
                    out.push(violation(
                        &format!("run[{i}].delta_s"),
                        format!("{m} min is not one of 60, 30, 15"),
                    ));
                }
            }
            if let Some(gt) = run.delta_gt {
                if let Err(e) = Resolution::new(gt) {
                    out.push(violation(&format!("run[{i}].delta_gt"), e.to_string()));
                }
            }
            if run.forecast == ForecastKind::File && self.data.forecast_file.is_none() {
                out.push(violation(
                    &format!("run[{i}].forecast"),
                    "\"file\" needs data.forecast_file".into(),
                ));
            }
        }
        if out.is_empty() {
            // Whatever the engine would still reject, keyed to the run.
            for (i, cfg) in self.expand(None).iter() {
                for (key, message) in cfg.violations() {
                    let key = match key.as_str() {
                        "delta_s" | "delta_gt" => format!("run[{i}].{key}"),
                        "battery" | "tariff" => key,
                        _ => format!("simulation.{key}"),
                    };
                    let v = Violation { key, message };
                    if !out.contains(&v) {
                        out.push(v);
                    }
                }
            }
        }
        out
    }

    /// The run list as simulation configs, ordered by mode, then by
    /// scheduling step from coarse to fine, then by run. Each entry keeps
    /// the index of the run it came from.
    fn expand(&self, forecast_table: Option<&Arc<ForecastTable>>) -> Vec<(usize, SimulationConfig)> {
        let tariff = self.tariff(&mut Vec::new()).unwrap_or_else(default_tariff);
        let mut cells = Vec::new();
        for (i, run) in self.runs.iter().enumerate() {
            for &mode in &run.modes {
                for &m in &run.delta_s {
                    let Ok(delta_s) = Resolution::new(m) else { continue };
                    let mut cfg = SimulationConfig::new(run.controller, mode, delta_s);
                    if let Some(gt) = run.delta_gt.and_then(|gt| Resolution::new(gt).ok()) {
                        cfg.delta_gt = gt;
                    }
                    cfg.forecast = match run.forecast {
                        ForecastKind::Ideal => ForecastSource::Ideal,
                        ForecastKind::Persistence => ForecastSource::Persistence,
                        ForecastKind::File => ForecastSource::File(forecast_table.cloned().unwrap_or_default()),
                    };
                    cfg.horizon_hours = self.simulation.horizon_hours;
                    cfg.spec = self.battery;
                    cfg.initial_soe = self.simulation.initial_soe.unwrap_or(self.battery.e_min);
                    cfg.tariff = tariff.clone();
                    cfg.seed = self.seed;
                    cfg.backend = self.simulation.backend;
                    cfg.start_offset_minutes = self.simulation.start_offset_minutes;
                    cfg.max_days = Some(self.simulation.max_days);
                    cfg.record_plans = self.simulation.record_plans;
                    cells.push((i, cfg));
                }
            }
        }
        cells.sort_by_key(|(i, c)| (c.mode, std::cmp::Reverse(c.delta_s), *i));
        cells
    }

    /// Validates and expands. Loads the forecast file if a run needs it.
    pub fn resolve(&self) -> Result<Vec<SimulationConfig>, ConfigError> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(ConfigError::Invalid(v));
        }
        let needs_table = self.runs.iter().any(|r| r.forecast == ForecastKind::File);
        let table = match (&self.data.forecast_file, needs_table) {
            (Some(path), true) => Some(Arc::new(ForecastTable::load(path).map_err(|e| ConfigError::Data {
                path: path.clone(),
                message: e.to_string(),
            })?)),
            _ => None,
        };
        Ok(self.expand(table.as_ref()).into_iter().map(|(_, c)| c).collect())
    }

    /// Restricts the runs to one controller, mode or scheduling step.
    pub fn apply_overrides(
        &mut self,
        controller: Option<ControllerKind>,
        mode: Option<Mode>,
        delta_s: Option<u32>,
    ) -> Result<(), ConfigError> {
        if let Some(c) = controller {
            self.runs.retain(|r| r.controller == c);
            if self.runs.is_empty() {
                return Err(ConfigError::Invalid(vec![violation(
                    "run",
                    format!("no run uses controller {c}"),
                )]));
            }
        }
        for run in &mut self.runs {
            if let Some(m) = mode {
                run.modes = vec![m];
            }
            if let Some(d) = delta_s {
                run.delta_s = vec![d];
            }
        }
        Ok(())
    }

    /// One run per matrix cell, in execution order, so that resolving the
    /// result reproduces the same matrix.
    pub fn explicit(&self) -> ConfigFile {
        let mut runs = Vec::new();
        for (i, cfg) in self.expand(None) {
            runs.push(RunSection {
                controller: cfg.controller,
                forecast: self.runs[i].forecast,
                modes: vec![cfg.mode],
                delta_s: vec![cfg.delta_s.minutes()],
                delta_gt: Some(cfg.delta_gt.minutes()),
            });
        }
        ConfigFile {
            runs,
            simulation: SimulationSection {
                initial_soe: Some(self.simulation.initial_soe.unwrap_or(self.battery.e_min)),
                ..self.simulation.clone()
            },
            ..self.clone()
        }
    }
}

fn violation(key: &str, message: String) -> Violation {
    Violation {
        key: key.to_string(),
        message,
    }
}

fn parse_clock(text: &str) -> Option<u32> {
    let (h, m) = text.trim().split_once(':')?;
    let (h, m): (u32, u32) = (h.parse().ok()?, m.parse().ok()?);
    (h < 24 && m < 60).then_some(h * 60 + m)
}

fn curve(key: &str, entries: &[SegmentEntry], out: &mut Vec<Violation>) -> Option<Vec<PriceSegment>> {
    let mut ok = true;
    let mut segs = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        match parse_clock(&e.from) {
            Some(minute) => segs.push(PriceSegment::new(minute, e.price)),
            None => {
                ok = false;
                out.push(violation(
                    &format!("{key}[{i}].from"),
                    format!("{:?} is not HH:MM", e.from),
                ));
            }
        }
    }
    ok.then_some(segs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        let c = ConfigFile::parse("").unwrap();
        assert_eq!(c, ConfigFile::default());
        let m = c.resolve().unwrap();
        assert_eq!(m.len(), 4 * 3 * 2);
        assert_eq!(m[0].mode, Mode::FullyAveraged);
        assert_eq!(m[0].delta_s, Resolution::HOUR);
        assert_eq!(m[0].model_id(), "rbc");
        assert_eq!(m[3].model_id(), "mpc_ideal_const_bat");
        assert_eq!(m[23].delta_s, Resolution::QUARTER_HOUR);
        assert_eq!(m[23].mode, Mode::FineResolution);
    }

    #[test]
    fn default_tariff_round_trips() {
        let c = ConfigFile::default();
        assert_eq!(c.tariff(&mut Vec::new()).unwrap(), default_tariff());
        assert_eq!(c.tariff.import[1].from, "06:00");
    }

    #[test]
    fn bad_step_names_run_key() {
        let c = ConfigFile::parse("[[run]]\ncontroller = \"rbc\"\ndelta_s = [60, 20]\n").unwrap();
        let v = c.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].key, "run[0].delta_s");
        assert!(v[0].message.contains("20"));
    }

    #[test]
    fn averaged_mode_needs_matching_ground_truth() {
        let c = ConfigFile::parse(
            "[[run]]\ncontroller = \"rbc\"\nmodes = [\"fully_averaged\"]\ndelta_s = [60]\ndelta_gt = 1\n",
        )
        .unwrap();
        let v = c.violations();
        assert_eq!(v[0].key, "run[0].delta_gt");
    }

    #[test]
    fn arbitrage_and_battery_reported_together() {
        let c = ConfigFile::parse("[battery]\ne_min = 20.0\n[tariff]\nimport = [{ from = \"00:00\", price = 0.05 }]\n")
            .unwrap();
        let keys: Vec<String> = c.violations().into_iter().map(|v| v.key).collect();
        assert!(keys.contains(&"battery".to_string()));
        assert!(keys.contains(&"tariff".to_string()));
    }

    #[test]
    fn bad_clock_is_located() {
        let c = ConfigFile::parse("[tariff]\nexport = [{ from = \"25:00\", price = 0.01 }]\n").unwrap();
        assert_eq!(c.violations()[0].key, "tariff.export[0].from");
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = ConfigFile::parse("[battery]\ncapacity = 3\n").unwrap_err();
        assert!(e.to_string().contains("capacity"), "{e}");
    }

    #[test]
    fn persistence_without_history_is_a_simulation_key() {
        let c = ConfigFile::parse(
            "[simulation]\nstart_offset_minutes = 0\n[[run]]\ncontroller = \"mpc_const_grid\"\nforecast = \"persistence\"\n",
        )
        .unwrap();
        assert_eq!(c.violations()[0].key, "simulation.start_offset_minutes");
    }

    #[test]
    fn overrides_restrict_runs() {
        let mut c = ConfigFile::default();
        c.apply_overrides(Some(ControllerKind::MpcConstGrid), Some(Mode::FineResolution), Some(30))
            .unwrap();
        let m = c.resolve().unwrap();
        assert_eq!(m.len(), 2);
        assert!(m
            .iter()
            .all(|c| c.delta_s == Resolution::HALF_HOUR && c.mode == Mode::FineResolution));
        assert!(ConfigFile::default().apply_overrides(None, None, None).is_ok());
        let mut only_rbc = ConfigFile {
            runs: vec![RunSection::new(ControllerKind::Rbc, ForecastKind::Ideal)],
            ..ConfigFile::default()
        };
        assert!(only_rbc
            .apply_overrides(Some(ControllerKind::MpcConstBat), None, None)
            .is_err());
    }

    #[test]
    fn explicit_form_resolves_to_same_matrix() {
        let c = ConfigFile::default();
        let e = c.explicit();
        assert_eq!(e.runs.len(), 24);
        let text = e.to_toml();
        let back = ConfigFile::parse(&text).unwrap();
        assert_eq!(back, e);
        assert_eq!(back.resolve().unwrap(), c.resolve().unwrap());
    }

    #[test]
    fn file_forecast_needs_a_file() {
        let c = ConfigFile::parse("[[run]]\ncontroller = \"mpc_const_grid\"\nforecast = \"file\"\n").unwrap();
        assert_eq!(c.violations()[0].key, "run[0].forecast");
        let missing = ConfigFile::parse(
            "[data]\nforecast_file = \"/nonexistent/f.csv\"\n[[run]]\ncontroller = \"mpc_const_grid\"\nforecast = \"file\"\n",
        )
        .unwrap();
        assert_eq!(missing.resolve().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn csv_source_needs_path_and_paths_rebase() {
        let mut c = ConfigFile::parse("[data]\nsource = \"csv\"\n").unwrap();
        assert_eq!(c.violations()[0].key, "data.path");
        c.data.path = Some("b.csv".into());
        c.rebase_paths(Path::new("/tmp/cfg"));
        assert_eq!(c.data.path.unwrap(), PathBuf::from("/tmp/cfg/b.csv"));
    }
}
