//! The `gridshed` command line: `simulate`, `replicate`, `validate-config`
//! and `generate`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error (including
//! unreadable inputs and unwritable outputs), 3 solver or simulation error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::{default_runs, ConfigError, ConfigFile, DataKind, DataSection, ManifestInfo};
use crate::ingest::{load_csv, synthetic_corpus, write_csv, BuildingDataset};
use crate::metrics::{
    aggregate_report, shrinkage_table, underestimation_table, write_building_shrinkage_csv, write_report_csv,
    write_shrinkage_csv, write_underestimation_csv, ReportGroup, ReportRow,
};
use crate::mpc::write_plan_csv;
use crate::sim::{
    run_experiment, thread_count_from_env, write_trace_csv, ControllerKind, ExperimentOptions, ExperimentReport, Mode,
    SimError, SimulationConfig,
};
use crate::tariff::validate_tariff;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

const BASELINE: &str = "rbc";
const SHRINKAGE_MODEL: &str = "mpc_ideal_const_grid";

#[derive(Debug, Parser)]
#[command(name = "gridshed", version, about = "PV-battery scheduling simulator")]
pub struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment matrix a config file describes.
    Simulate(SimulateArgs),
    /// Run the full controller grid in both evaluation modes and write the
    /// cost, underestimation and shrinkage tables.
    Replicate(ReplicateArgs),
    /// Check a config file and print what it resolves to.
    ValidateConfig { config: PathBuf },
    /// Write a synthetic building corpus as CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// Only this scheduling step, minutes.
    #[arg(long)]
    pub delta_s: Option<u32>,
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Only runs with this controller.
    #[arg(long)]
    pub controller: Option<ControllerKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub config: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Per-step trace of every cell under `traces/`.
    #[arg(long)]
    pub trace: bool,
    /// Every solved plan of every cell under `plans/`.
    #[arg(long)]
    pub plans: bool,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    /// Battery, tariff, data and simulation settings; its runs are ignored.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Building CSV instead of synthetic data.
    #[arg(long, conflicts_with_all = ["buildings", "days"])]
    pub data: Option<PathBuf>,
    /// Synthetic buildings.
    #[arg(long)]
    pub buildings: Option<usize>,
    /// Synthetic days, including the first day used as forecast history.
    #[arg(long)]
    pub days: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 15)]
    pub buildings: usize,
    #[arg(long, default_value_t = 15)]
    pub days: u32,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Destination file; standard output if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("data: {0}")]
    Data(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("output check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(e) => e.exit_code(),
            CliError::Simulation(e) => e.exit_code(),
            CliError::Data(_) | CliError::Output { .. } => EXIT_DATA,
            CliError::Check(_) => EXIT_SOLVER,
        }
    }
}

/// Everything a run needs, fixed before the first simulation starts.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub matrix: Vec<SimulationConfig>,
    pub data: DataSection,
    pub out: PathBuf,
    pub version: String,
    pub seed: u64,
    resolved: ConfigFile,
}

impl RunManifest {
    pub fn resolve(config: &ConfigFile, config_path: Option<&Path>) -> Result<Self, ConfigError> {
        let matrix = config.resolve()?;
        let version = env!("CARGO_PKG_VERSION").to_string();
        let mut resolved = config.explicit();
        resolved.manifest = Some(ManifestInfo {
            tool_version: version.clone(),
            config_path: config_path.map(Path::to_path_buf),
        });
        Ok(RunManifest {
            config_path: config_path.map(Path::to_path_buf),
            matrix,
            data: config.data.clone(),
            out: config.out.clone(),
            version,
            seed: config.seed,
            resolved,
        })
    }

    /// A config file that reproduces this run exactly.
    pub fn to_toml(&self) -> String {
        self.resolved.to_toml()
    }
}

pub fn load_buildings(data: &DataSection, seed: u64) -> Result<Vec<BuildingDataset>, CliError> {
    match data.source {
        DataKind::Synthetic => Ok(synthetic_corpus(seed, data.buildings, data.days)),
        DataKind::Csv => {
            let path = data
                .path
                .as_ref()
                .ok_or_else(|| CliError::Data("csv source without a path".into()))?;
            load_csv(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Replicate(a) => cmd_replicate(&a),
        Command::ValidateConfig { config } => cmd_validate_config(&config),
        Command::Generate(a) => cmd_generate(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: &Path) -> Result<ConfigFile, ConfigError> {
    let mut cfg = ConfigFile::load(path)?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    cfg.rebase_paths(base);
    Ok(cfg)
}

fn output_error(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, fill: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), CliError> {
    let file = File::create(path).map_err(output_error(path))?;
    let mut w = BufWriter::new(file);
    fill(&mut w).and_then(|_| w.flush()).map_err(output_error(path))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn prepare(manifest: &RunManifest) -> Result<Vec<BuildingDataset>, CliError> {
    let buildings = load_buildings(&manifest.data, manifest.seed)?;
    fs::create_dir_all(&manifest.out).map_err(output_error(&manifest.out))?;
    write_file(&manifest.out.join("manifest.toml"), |w| {
        w.write_all(manifest.to_toml().as_bytes())
    })?;
    Ok(buildings)
}

fn execute(manifest: &RunManifest, buildings: &[BuildingDataset], keep: bool) -> Result<ExperimentReport, CliError> {
    let options = ExperimentOptions {
        threads: thread_count_from_env(),
        keep_results: keep,
    };
    log::info!("{} configs x {} buildings", manifest.matrix.len(), buildings.len());
    let report = run_experiment(&manifest.matrix, buildings, &options)?;
    let out = &manifest.out;
    write_file(&out.join("cells.csv"), |w| report.write_cells_csv(w))?;
    Ok(report)
}

fn summarize_failures(report: &ExperimentReport) -> i32 {
    let failed: Vec<_> = report.failures().collect();
    if !failed.is_empty() {
        eprintln!("{} of {} cells failed:", failed.len(), report.cells.len());
        for c in &failed {
            if let Err(e) = &c.result {
                eprintln!("  {} {} {} {} min: {e}", c.building_id, c.model, c.mode, c.delta_s);
            }
        }
    }
    report.exit_code()
}

/// Report rows for one mode, or `None` with a warning if they cannot be
/// computed.
fn report_rows(groups: &[ReportGroup]) -> Option<Vec<ReportRow>> {
    if groups.is_empty() {
        return None;
    }
    aggregate_report(groups, BASELINE)
        .map_err(|e| log::warn!("report not computed: {e}"))
        .ok()
}

fn write_comparisons(
    out: &Path,
    report: &ExperimentReport,
    averaged: &[ReportRow],
    fine: &[ReportRow],
    shrinkage_models: Option<&[&str]>,
) -> Result<(), CliError> {
    match underestimation_table(averaged, fine) {
        Ok(rows) => write_file(&out.join("underestimation.csv"), |w| {
            write_underestimation_csv(w, &rows)
        })?,
        Err(e) => eprintln!("warning: underestimation not computed: {e}"),
    }
    let keep =
        |g: &ReportGroup| shrinkage_models.map_or(true, |m| g.model == BASELINE || m.contains(&g.model.as_str()));
    let avg_groups: Vec<_> = report
        .groups(Some(Mode::FullyAveraged))
        .into_iter()
        .filter(keep)
        .collect();
    let fine_groups: Vec<_> = report
        .groups(Some(Mode::FineResolution))
        .into_iter()
        .filter(keep)
        .collect();
    match shrinkage_table(&avg_groups, &fine_groups, BASELINE) {
        Ok((rows, per_building)) => {
            write_file(&out.join("shrinkage.csv"), |w| write_shrinkage_csv(w, &rows))?;
            write_file(&out.join("building_shrinkage.csv"), |w| {
                write_building_shrinkage_csv(w, &per_building, &report.building_ids)
            })?;
        }
        Err(e) => eprintln!("warning: shrinkage not computed: {e}"),
    }
    Ok(())
}

fn file_stem(c: &crate::sim::CellOutcome) -> String {
    format!("{}__{}__{}__{}", c.building_id, c.model, c.mode, c.delta_s)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let mut cfg = load_config(&args.config)?;
    let o = &args.overrides;
    cfg.apply_overrides(o.controller, o.mode, o.delta_s)?;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(out) = &o.out {
        cfg.out = out.clone();
    }
    if args.plans {
        cfg.simulation.record_plans = true;
    }
    let manifest = RunManifest::resolve(&cfg, Some(&args.config))?;
    let buildings = prepare(&manifest)?;
    let report = execute(&manifest, &buildings, args.trace || args.plans)?;
    let out = &manifest.out;

    let mut rows = Vec::new();
    let averaged = report_rows(&report.groups(Some(Mode::FullyAveraged)));
    let fine = report_rows(&report.groups(Some(Mode::FineResolution)));
    rows.extend(averaged.iter().flatten().cloned());
    rows.extend(fine.iter().flatten().cloned());
    write_file(&out.join("report.csv"), |w| write_report_csv(w, &rows))?;
    if let (Some(a), Some(f)) = (&averaged, &fine) {
        write_comparisons(out, &report, a, f, None)?;
    }

    for c in report.cells.iter().filter(|c| c.full.is_some()) {
        let full = c.full.as_ref().expect("filtered");
        if args.trace {
            let dir = out.join("traces");
            fs::create_dir_all(&dir).map_err(output_error(&dir))?;
            write_file(&dir.join(format!("{}.csv", file_stem(c))), |w| write_trace_csv(w, full))?;
        }
        if args.plans && c.model != BASELINE {
            let dir = out.join("plans");
            fs::create_dir_all(&dir).map_err(output_error(&dir))?;
            let plans: Vec<_> = full.plans.iter().filter_map(|p| p.plan.clone()).collect();
            write_file(&dir.join(format!("{}.csv", file_stem(c))), |w| {
                write_plan_csv(w, &plans, true)
            })?;
        }
    }
    Ok(summarize_failures(&report))
}

/// Fine-resolution RBC never looks at the scheduling step, so every
/// building's cost report must be identical across steps.
fn check_rbc_invariance(report: &ExperimentReport) -> Result<(), CliError> {
    for b in 0..report.building_ids.len() {
        let reports: Vec<_> = (0..report.configs.len())
            .filter(|&c| {
                report.configs[c].mode == Mode::FineResolution && report.configs[c].controller == ControllerKind::Rbc
            })
            .filter_map(|c| report.cell(b, c).result.as_ref().ok().map(|s| s.report))
            .collect();
        if reports.windows(2).any(|w| w[0] != w[1]) {
            return Err(CliError::Check(format!(
                "fine-resolution rbc costs differ across scheduling steps for {}",
                report.building_ids[b]
            )));
        }
    }
    Ok(())
}

pub fn cmd_replicate(args: &ReplicateArgs) -> Result<i32, CliError> {
    let (mut cfg, path) = match &args.config {
        Some(p) => (load_config(p)?, Some(p.as_path())),
        None => (ConfigFile::default(), None),
    };
    cfg.runs = default_runs();
    if let Some(d) = &args.data {
        cfg.data.source = DataKind::Csv;
        cfg.data.path = Some(d.clone());
    }
    if let Some(n) = args.buildings {
        cfg.data.source = DataKind::Synthetic;
        cfg.data.buildings = n;
    }
    if let Some(d) = args.days {
        cfg.data.source = DataKind::Synthetic;
        cfg.data.days = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    let manifest = RunManifest::resolve(&cfg, path)?;
    let buildings = prepare(&manifest)?;
    let report = execute(&manifest, &buildings, false)?;
    let out = &manifest.out;
    let failed = summarize_failures(&report);
    if failed != EXIT_OK {
        return Ok(failed);
    }
    check_rbc_invariance(&report)?;

    let averaged = report_rows(&report.groups(Some(Mode::FullyAveraged)))
        .ok_or_else(|| CliError::Check("fully averaged table not computed".into()))?;
    let fine = report_rows(&report.groups(Some(Mode::FineResolution)))
        .ok_or_else(|| CliError::Check("fine-resolution table not computed".into()))?;
    write_file(&out.join("fully_averaged.csv"), |w| write_report_csv(w, &averaged))?;
    write_file(&out.join("fine_resolution.csv"), |w| write_report_csv(w, &fine))?;
    let all: Vec<_> = averaged.iter().chain(&fine).cloned().collect();
    write_file(&out.join("report.csv"), |w| write_report_csv(w, &all))?;
    write_comparisons(out, &report, &averaged, &fine, Some(&[SHRINKAGE_MODEL]))?;
    Ok(EXIT_OK)
}

pub fn cmd_validate_config(path: &Path) -> Result<i32, CliError> {
    let cfg = load_config(path)?;
    let violations = cfg.violations();
    println!("{}", cfg.to_toml());
    if let Some(t) = cfg.build_tariff() {
        let v = validate_tariff(&t, cfg.battery.c_deg);
        println!(
            "# tariff no-arbitrage: {}",
            if v.is_valid() { "ok" } else { "violated" }
        );
        println!(
            "# feed-in below degradation price in the cheapest import period: {}",
            if v.night_export_below_degradation { "yes" } else { "no" }
        );
    }
    println!(
        "# battery: {}",
        if cfg.battery.violations().is_empty() {
            "ok"
        } else {
            "invalid"
        }
    );
    if !violations.is_empty() {
        return Err(ConfigError::Invalid(violations).into());
    }
    let manifest = RunManifest::resolve(&cfg, Some(path))?;
    for c in &manifest.matrix {
        println!(
            "# run {} {} delta_s={} delta_gt={}",
            c.model_id(),
            c.mode,
            c.delta_s.minutes(),
            c.delta_gt.minutes()
        );
    }
    println!("# {} configs, valid", manifest.matrix.len());
    Ok(EXIT_OK)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<i32, CliError> {
    if args.buildings == 0 || args.days < 2 {
        return Err(ConfigError::Parse("generate needs at least 1 building and 2 days".into()).into());
    }
    let corpus = synthetic_corpus(args.seed, args.buildings, args.days);
    match &args.output {
        Some(path) => write_file(path, |w| write_csv(w, &corpus))?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_csv(&mut lock, &corpus).map_err(output_error(Path::new("<stdout>")))?;
        }
    }
    Ok(EXIT_OK)
}
