use std::io::{self, Write};

use rayon::prelude::*;

use super::engine::{run_simulation, PhysicsCheck, SimulationResult, SolveStats};
use super::{Mode, SimError, SimulationConfig};
use crate::ingest::BuildingDataset;
use crate::metrics::{CostReport, ReportGroup};

pub const THREADS_ENV: &str = "GRIDSHED_THREADS";

#[derive(Debug, Clone, Default)]
pub struct ExperimentOptions {
    /// Worker threads; `None` uses one per core.
    pub threads: Option<usize>,
    /// Keep full per-step results, not only summaries.
    pub keep_results: bool,
}

/// Thread cap from `GRIDSHED_THREADS`, if set to a positive integer.
pub fn thread_count_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub report: CostReport,
    pub stats: SolveStats,
    pub physics: PhysicsCheck,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub building: usize,
    pub config: usize,
    pub building_id: String,
    pub model: String,
    pub mode: Mode,
    pub delta_s: u32,
    pub delta_gt: u32,
    pub result: Result<CellSummary, SimError>,
    pub full: Option<SimulationResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub building_ids: Vec<String>,
    pub configs: Vec<SimulationConfig>,
    /// Building-major: all configs of building 0, then building 1, ...
    pub cells: Vec<CellOutcome>,
}

impl ExperimentReport {
    pub fn cell(&self, building: usize, config: usize) -> &CellOutcome {
        &self.cells[building * self.configs.len() + config]
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellOutcome> {
        self.cells.iter().filter(|c| c.result.is_err())
    }

    /// Most severe exit code among failed cells, 0 if none failed.
    pub fn exit_code(&self) -> i32 {
        self.failures()
            .filter_map(|c| c.result.as_ref().err().map(SimError::exit_code))
            .max()
            .unwrap_or(0)
    }

    /// One group per config whose cells all succeeded, optionally limited
    /// to one mode, in config order.
    pub fn groups(&self, mode: Option<Mode>) -> Vec<ReportGroup> {
        (0..self.configs.len())
            .filter(|&c| mode.map_or(true, |m| self.configs[c].mode == m))
            .filter_map(|c| {
                let reports: Option<Vec<CostReport>> = (0..self.building_ids.len())
                    .map(|b| self.cell(b, c).result.as_ref().ok().map(|s| s.report))
                    .collect();
                let cfg = &self.configs[c];
                Some(ReportGroup {
                    model: cfg.model_id(),
                    delta_s: cfg.delta_s.minutes(),
                    delta_gt: cfg.delta_gt.minutes(),
                    reports: reports?,
                })
            })
            .collect()
    }

    pub fn write_cells_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(
            out,
            "building,model,mode,delta_s_min,delta_gt_min,status,imp_kwh,cost_imp_eur,exp_kwh,rev_exp_eur,\
             e_dis_kwh,degrad_eur,bill_eur,total_eur,solves,truncated_horizons,complementarity_violations,error"
        )?;
        for c in &self.cells {
            write!(
                out,
                "{},{},{},{},{},",
                c.building_id, c.model, c.mode, c.delta_s, c.delta_gt
            )?;
            match &c.result {
                Ok(s) => {
                    let r = &s.report;
                    writeln!(
                        out,
                        "ok,{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{},{},{},",
                        r.imported_kwh,
                        r.import_cost,
                        r.exported_kwh,
                        r.export_revenue,
                        r.discharged_kwh,
                        r.degradation,
                        r.bill,
                        r.total,
                        s.stats.solves,
                        s.stats.truncated_horizons,
                        s.stats.violating_steps
                    )?;
                }
                Err(e) => {
                    let msg = e.to_string().replace(['"', '\n'], "'");
                    writeln!(out, "failed,,,,,,,,,,,,\"{msg}\"")?;
                }
            }
        }
        Ok(())
    }
}

/// Runs every config on every building. Cells run in parallel; a failing
/// cell is recorded and does not stop the others.
pub fn run_experiment(
    matrix: &[SimulationConfig],
    buildings: &[BuildingDataset],
    options: &ExperimentOptions,
) -> Result<ExperimentReport, SimError> {
    if matrix.is_empty() {
        return Err(SimError::Config("experiment matrix is empty".into()));
    }
    if buildings.is_empty() {
        return Err(SimError::Data("no buildings".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..buildings.len())
        .flat_map(|b| (0..matrix.len()).map(move |c| (b, c)))
        .collect();
    let run_cell = |&(b, c): &(usize, usize)| {
        let cfg = &matrix[c];
        let building = &buildings[b];
        let outcome = run_simulation(cfg, &building.net_load);
        let (result, full) = match outcome {
            Ok(r) => {
                let summary = CellSummary {
                    report: r.report,
                    stats: r.stats,
                    physics: r.check_physics(&cfg.spec),
                    steps: r.p_b.len(),
                };
                (Ok(summary), options.keep_results.then_some(r))
            }
            Err(e) => {
                log::warn!("{} / {}: {e}", building.building_id, cfg.model_id());
                (Err(e), None)
            }
        };
        CellOutcome {
            building: b,
            config: c,
            building_id: building.building_id.clone(),
            model: cfg.model_id(),
            mode: cfg.mode,
            delta_s: cfg.delta_s.minutes(),
            delta_gt: cfg.delta_gt.minutes(),
            result,
            full,
        }
    };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = options.threads {
        builder = builder.num_threads(n);
    }
    let cells = match builder.build() {
        Ok(pool) => pool.install(|| jobs.par_iter().map(run_cell).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}), running sequentially");
            jobs.iter().map(run_cell).collect()
        }
    };
    Ok(ExperimentReport {
        building_ids: buildings.iter().map(|b| b.building_id.clone()).collect(),
        configs: matrix.to_vec(),
        cells,
    })
}
