//! Receding-horizon dispatch: minimise import cost minus feed-in revenue
//! plus degradation over a forecast horizon.
//!
//! The program is solved over split variables (import/export,
//! charge/discharge) without the bilinear complementarity constraints.
//! Complementarity is checked afterwards and a violation is an error.

mod pwl;
pub mod simplex;
mod structured;

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{BatteryError, BatterySpec, SOE_TOLERANCE};
use crate::tariff::Tariff;
use crate::timeseries::{PowerSeries, Resolution, Timestamp};
use simplex::{LinearProgram, LpError};

/// Tolerance on `|p_imp·p_exp|` and `|p_ch·p_dis|` for an accepted plan.
pub const COMPLEMENTARITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("empty forecast")]
    EmptyForecast,
    #[error("forecast value at step {step} is not finite")]
    NonFiniteForecast { step: usize },
    #[error("{prices} price pairs for {steps} steps")]
    PriceCount { prices: usize, steps: usize },
    #[error("step {step}: need 0 <= export price ({c_exp}) <= import price ({c_imp})")]
    PriceOrder { step: usize, c_imp: f64, c_exp: f64 },
    #[error(transparent)]
    Battery(#[from] BatteryError),
    #[error("initial SoE {e0} kWh outside [{e_min}, {e_max}]")]
    InitialSoe { e0: f64, e_min: f64, e_max: f64 },
    #[error("LP solver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("LP solver failed: {0}")]
    Lp(LpError),
    #[error("complementarity violated at steps {0:?}")]
    Complementarity(Vec<usize>),
}

impl From<LpError> for SolverError {
    fn from(e: LpError) -> Self {
        match e {
            LpError::IterationLimit { iterations } => SolverError::NoConvergence { iterations },
            other => SolverError::Lp(other),
        }
    }
}

/// Which exact method solves the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverBackend {
    /// Dynamic programming over convex piecewise-linear cost-to-go
    /// functions. Linear-time per step, deterministic tie-breaking.
    #[default]
    Structured,
    /// Bounded primal simplex over the literal split-variable program.
    Simplex,
}

impl fmt::Display for SolverBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverBackend::Structured => "structured",
            SolverBackend::Simplex => "simplex",
        })
    }
}

impl FromStr for SolverBackend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "structured" => Ok(SolverBackend::Structured),
            "simplex" => Ok(SolverBackend::Simplex),
            other => Err(format!("unknown solver backend '{other}' (structured, simplex)")),
        }
    }
}

/// One planning instant: forecast net load, per-step prices, battery and
/// measured SoE.
#[derive(Debug, Clone)]
pub struct ScheduleProblem {
    origin: Timestamp,
    resolution: Resolution,
    load: Vec<f64>,
    prices: Vec<(f64, f64)>,
    spec: BatterySpec,
    e0: f64,
}

impl ScheduleProblem {
    /// Prices are the tariff's energy-weighted means over each step.
    pub fn new(forecast: &PowerSeries, tariff: &Tariff, spec: &BatterySpec, e0: f64) -> Result<Self, SolverError> {
        let prices = tariff.step_prices(forecast.start(), forecast.resolution(), forecast.len());
        Self::from_prices(
            forecast.start(),
            forecast.resolution(),
            forecast.values().to_vec(),
            prices,
            *spec,
            e0,
        )
    }

    pub fn from_prices(
        origin: Timestamp,
        resolution: Resolution,
        load: Vec<f64>,
        prices: Vec<(f64, f64)>,
        spec: BatterySpec,
        e0: f64,
    ) -> Result<Self, SolverError> {
        if load.is_empty() {
            return Err(SolverError::EmptyForecast);
        }
        if let Some(step) = load.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::NonFiniteForecast { step });
        }
        if prices.len() != load.len() {
            return Err(SolverError::PriceCount {
                prices: prices.len(),
                steps: load.len(),
            });
        }
        for (step, &(c_imp, c_exp)) in prices.iter().enumerate() {
            let ordered = c_exp.is_finite() && c_imp.is_finite() && 0.0 <= c_exp && c_exp <= c_imp;
            if !ordered {
                return Err(SolverError::PriceOrder { step, c_imp, c_exp });
            }
        }
        spec.validate()?;
        let in_bounds = e0 >= spec.e_min - SOE_TOLERANCE && e0 <= spec.e_max + SOE_TOLERANCE;
        if !e0.is_finite() || !in_bounds {
            return Err(SolverError::InitialSoe {
                e0,
                e_min: spec.e_min,
                e_max: spec.e_max,
            });
        }
        let e0 = e0.clamp(spec.e_min, spec.e_max);
        Ok(ScheduleProblem {
            origin,
            resolution,
            load,
            prices,
            spec,
            e0,
        })
    }

    pub fn origin(&self) -> Timestamp {
        self.origin
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn dt(&self) -> f64 {
        self.resolution.hours()
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    pub fn prices(&self) -> &[(f64, f64)] {
        &self.prices
    }

    pub fn spec(&self) -> &BatterySpec {
        &self.spec
    }

    pub fn e0(&self) -> f64 {
        self.e0
    }

    /// Cost of step `k` when the battery holds `p_b` and the grid covers
    /// the rest.
    pub fn cost_at_power(&self, k: usize, p_b: f64) -> f64 {
        let step = PlanStep::from_battery_power(self.load[k], p_b);
        self.step_cost(k, &step)
    }

    pub fn step_cost(&self, k: usize, step: &PlanStep) -> f64 {
        let (c_imp, c_exp) = self.prices[k];
        self.dt() * (c_imp * step.p_imp + c_exp * step.p_exp + self.spec.c_deg * step.p_dis / self.spec.eta_dis)
    }
}

/// Split variables of one step. Signs: `p_imp ≥ 0`, `p_exp ≤ 0`,
/// `p_ch ≤ 0`, `p_dis ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PlanStep {
    pub p_b: f64,
    pub p_g: f64,
    pub p_imp: f64,
    pub p_exp: f64,
    pub p_ch: f64,
    pub p_dis: f64,
}

impl PlanStep {
    pub fn from_battery_power(load: f64, p_b: f64) -> Self {
        let p_g = load - p_b;
        PlanStep {
            p_b,
            p_g,
            p_imp: p_g.max(0.0),
            p_exp: p_g.min(0.0),
            p_ch: p_b.min(0.0),
            p_dis: p_b.max(0.0),
        }
    }

    pub fn from_splits(p_imp: f64, p_exp: f64, p_ch: f64, p_dis: f64) -> Self {
        PlanStep {
            p_b: p_ch + p_dis,
            p_g: p_imp + p_exp,
            p_imp,
            p_exp,
            p_ch,
            p_dis,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchPlan {
    pub origin: Timestamp,
    pub resolution: Resolution,
    /// Forecast net load the plan was built for.
    pub net_load: Vec<f64>,
    pub steps: Vec<PlanStep>,
    /// Stored energy at the start of each step plus the terminal value.
    pub soe: Vec<f64>,
    pub objective_value: f64,
}

impl DispatchPlan {
    fn from_steps(problem: &ScheduleProblem, steps: Vec<PlanStep>) -> Self {
        let dt = problem.dt();
        let spec = problem.spec();
        let mut soe = Vec::with_capacity(steps.len() + 1);
        let mut e = problem.e0();
        soe.push(e);
        for s in &steps {
            e -= dt * (s.p_ch * spec.eta_ch + s.p_dis / spec.eta_dis);
            soe.push(e);
        }
        let objective_value = steps.iter().enumerate().map(|(k, s)| problem.step_cost(k, s)).sum();
        DispatchPlan {
            origin: problem.origin(),
            resolution: problem.resolution(),
            net_load: problem.load().to_vec(),
            steps,
            soe,
            objective_value,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn battery_power(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.p_b).collect()
    }

    pub fn grid_power(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.p_g).collect()
    }

    /// Battery power committed for the first step.
    pub fn first_battery_power(&self) -> f64 {
        self.steps.first().map_or(0.0, |s| s.p_b)
    }

    pub fn timestamp_at(&self, k: usize) -> Timestamp {
        self.origin.add_minutes(k as i64 * self.resolution.minutes() as i64)
    }
}

/// Steps where `|p_imp·p_exp|` or `|p_ch·p_dis|` exceeds `tol`.
pub fn check_complementarity(plan: &DispatchPlan, tol: f64) -> Vec<usize> {
    plan.steps
        .iter()
        .enumerate()
        .filter(|(_, s)| (s.p_imp * s.p_exp).abs() > tol || (s.p_ch * s.p_dis).abs() > tol)
        .map(|(k, _)| k)
        .collect()
}

/// Every violated plan invariant, described. Empty for a valid plan.
pub fn plan_violations(plan: &DispatchPlan, spec: &BatterySpec, tol: f64) -> Vec<String> {
    let mut out = Vec::new();
    let dt = plan.resolution.hours();
    if plan.soe.len() != plan.steps.len() + 1 {
        out.push(format!("{} SoE values for {} steps", plan.soe.len(), plan.steps.len()));
        return out;
    }
    for (k, s) in plan.steps.iter().enumerate() {
        if (s.p_g - s.p_imp - s.p_exp).abs() > tol {
            out.push(format!("step {k}: p_g != p_imp + p_exp"));
        }
        if (s.p_b - s.p_ch - s.p_dis).abs() > tol {
            out.push(format!("step {k}: p_b != p_ch + p_dis"));
        }
        if let Some(load) = plan.net_load.get(k) {
            if (load - s.p_b - s.p_g).abs() > tol {
                out.push(format!("step {k}: power balance off by {:e}", load - s.p_b - s.p_g));
            }
        }
        if s.p_imp < -tol || s.p_exp > tol || s.p_ch > tol || s.p_dis < -tol {
            out.push(format!("step {k}: split variable has the wrong sign"));
        }
        if s.p_b < spec.p_min - tol || s.p_b > spec.p_max + tol {
            out.push(format!("step {k}: p_b {} outside power limits", s.p_b));
        }
        let next = plan.soe[k] - dt * (s.p_ch * spec.eta_ch + s.p_dis / spec.eta_dis);
        if (plan.soe[k + 1] - next).abs() > 1e-7 {
            out.push(format!("step {k}: SoE update off by {:e}", plan.soe[k + 1] - next));
        }
    }
    for (k, &e) in plan.soe.iter().enumerate() {
        if e < spec.e_min - 1e-7 || e > spec.e_max + 1e-7 {
            out.push(format!("SoE {e} outside bounds at index {k}"));
        }
    }
    out
}

/// Optimal plan with the default backend.
pub fn solve_schedule(
    forecast: &PowerSeries,
    tariff: &Tariff,
    spec: &BatterySpec,
    e0: f64,
) -> Result<DispatchPlan, SolverError> {
    solve_schedule_with(forecast, tariff, spec, e0, SolverBackend::default())
}

pub fn solve_schedule_with(
    forecast: &PowerSeries,
    tariff: &Tariff,
    spec: &BatterySpec,
    e0: f64,
    backend: SolverBackend,
) -> Result<DispatchPlan, SolverError> {
    let problem = ScheduleProblem::new(forecast, tariff, spec, e0)?;
    solve_problem(&problem, backend)
}

pub fn solve_problem(problem: &ScheduleProblem, backend: SolverBackend) -> Result<DispatchPlan, SolverError> {
    let steps = match backend {
        SolverBackend::Structured => structured::solve(problem)
            .into_iter()
            .zip(problem.load())
            .map(|(p_b, &load)| PlanStep::from_battery_power(load, p_b))
            .collect(),
        SolverBackend::Simplex => solve_split_lp(problem)?,
    };
    let plan = DispatchPlan::from_steps(problem, steps);
    let violating = check_complementarity(&plan, COMPLEMENTARITY_TOLERANCE);
    if !violating.is_empty() {
        return Err(SolverError::Complementarity(violating));
    }
    Ok(plan)
}

const COLS_PER_STEP: usize = 5;

fn solve_split_lp(problem: &ScheduleProblem) -> Result<Vec<PlanStep>, SolverError> {
    let s = problem.spec();
    let dt = problem.dt();
    let steps = problem.load().len();
    let n = COLS_PER_STEP * steps;
    let (imp, xexp, chg, dis, soe) = (0, 1, 2, 3, 4);

    let mut lp = LinearProgram {
        cost: vec![0.0; n],
        rows: Vec::with_capacity(2 * steps),
        rhs: Vec::with_capacity(2 * steps),
        lower: vec![0.0; n],
        upper: vec![f64::INFINITY; n],
    };
    for k in 0..steps {
        let base = COLS_PER_STEP * k;
        let (c_imp, c_exp) = problem.prices()[k];
        lp.cost[base + imp] = dt * c_imp;
        lp.cost[base + xexp] = -dt * c_exp;
        lp.cost[base + dis] = dt * s.c_deg / s.eta_dis;
        lp.upper[base + chg] = -s.p_min;
        lp.upper[base + dis] = s.p_max;
        lp.lower[base + soe] = s.e_min;
        lp.upper[base + soe] = s.e_max;

        let mut balance = vec![0.0; n];
        balance[base + imp] = 1.0;
        balance[base + xexp] = -1.0;
        balance[base + chg] = -1.0;
        balance[base + dis] = 1.0;
        lp.rows.push(balance);
        lp.rhs.push(problem.load()[k]);

        let mut energy = vec![0.0; n];
        energy[base + soe] = 1.0;
        energy[base + chg] = -dt * s.eta_ch;
        energy[base + dis] = dt / s.eta_dis;
        if k > 0 {
            energy[base - COLS_PER_STEP + soe] = -1.0;
            lp.rhs.push(0.0);
        } else {
            lp.rhs.push(problem.e0());
        }
        lp.rows.push(energy);
    }

    let solution = lp.solve()?;
    let x = &solution.x;
    let clean = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
    Ok((0..steps)
        .map(|k| {
            let base = COLS_PER_STEP * k;
            // netting simultaneous import and export never raises the cost
            let p_g = x[base + imp] - x[base + xexp];
            PlanStep::from_splits(
                clean(p_g.max(0.0)),
                clean(p_g.min(0.0)),
                clean(-x[base + chg]),
                clean(x[base + dis]),
            )
        })
        .collect())
}

/// Writes one row per plan step.
pub fn write_plan_csv<W: Write>(out: &mut W, plans: &[DispatchPlan], header: bool) -> io::Result<()> {
    if header {
        writeln!(
            out,
            "origin,step,timestamp,net_load_kw,p_b_kw,p_g_kw,p_imp_kw,p_exp_kw,p_ch_kw,p_dis_kw,soe_kwh,objective_eur"
        )?;
    }
    for plan in plans {
        for (k, s) in plan.steps.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                plan.origin,
                k,
                plan.timestamp_at(k),
                plan.net_load.get(k).copied().unwrap_or(f64::NAN),
                s.p_b,
                s.p_g,
                s.p_imp,
                s.p_exp,
                s.p_ch,
                s.p_dis,
                plan.soe[k + 1],
                plan.objective_value
            )?;
        }
    }
    Ok(())
}
