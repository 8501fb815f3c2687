use std::io::{self, Write};

use super::{ControllerKind, ForecastSource, SimError, SimulationConfig};
use crate::battery::{degradation_cost, soe_delta, BatterySpec, BatteryState};
use crate::controllers::{const_bat_step, const_grid_step, rbc_step, ControlStepResult};
use crate::forecast::{ideal_forecast, persistence_forecast, ForecastRequest, Forecaster};
use crate::metrics::CostReport;
use crate::mpc::{
    check_complementarity, solve_problem, DispatchPlan, PlanStep, ScheduleProblem, COMPLEMENTARITY_TOLERANCE,
};
use crate::tariff::settle;
use crate::timeseries::{PowerSeries, Resolution, Timestamp};

/// One planning instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub origin: Timestamp,
    pub horizon_steps: usize,
    /// Horizon cut short by the end of the data.
    pub truncated: bool,
    /// Measured SoE the plan started from.
    pub e0: f64,
    pub first: PlanStep,
    pub objective: f64,
    /// Full plan, kept only when recording is enabled.
    pub plan: Option<DispatchPlan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub solves: usize,
    pub truncated_horizons: usize,
    /// Plan steps breaking complementarity at the acceptance tolerance.
    pub violating_steps: usize,
    /// Largest `|p_imp·p_exp|` or `|p_ch·p_dis|` seen in any plan step.
    pub max_product: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub model: String,
    pub delta_s: Resolution,
    /// Ground truth the controller saw, at `delta_gt`.
    pub net_load: PowerSeries,
    pub p_b: PowerSeries,
    pub p_g: PowerSeries,
    /// SoE at each step start plus the final value.
    pub soe: Vec<f64>,
    pub report: CostReport,
    pub plans: Vec<PlanRecord>,
    pub stats: SolveStats,
}

/// Largest deviations from the physical invariants of a result.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhysicsCheck {
    /// `|p_L − p_B − p_G|`, kW.
    pub max_balance_error: f64,
    /// Stored SoE versus SoE replayed from `p_B`, kWh.
    pub max_replay_error: f64,
    /// Distance outside `[e_min, e_max]`, kWh.
    pub max_bound_excess: f64,
}

impl PhysicsCheck {
    pub fn holds(&self) -> bool {
        self.max_balance_error <= 1e-9 && self.max_replay_error <= 1e-7 && self.max_bound_excess <= 1e-9
    }
}

impl SimulationResult {
    pub fn check_physics(&self, spec: &BatterySpec) -> PhysicsCheck {
        let dt = self.p_b.resolution().hours();
        let mut check = PhysicsCheck::default();
        for ((l, b), g) in self
            .net_load
            .values()
            .iter()
            .zip(self.p_b.values())
            .zip(self.p_g.values())
        {
            check.max_balance_error = check.max_balance_error.max((l - b - g).abs());
        }
        let mut e = self.soe.first().copied().unwrap_or(spec.e_min);
        for (i, &p) in self.p_b.values().iter().enumerate() {
            e += soe_delta(spec, p, dt);
            if let Some(stored) = self.soe.get(i + 1) {
                check.max_replay_error = check.max_replay_error.max((stored - e).abs());
            } else {
                check.max_replay_error = f64::INFINITY;
            }
        }
        for &e in &self.soe {
            let excess = (spec.e_min - e).max(e - spec.e_max).max(0.0);
            check.max_bound_excess = check.max_bound_excess.max(excess);
        }
        check
    }
}

struct Realized {
    p_b: Vec<f64>,
    p_g: Vec<f64>,
    soe: Vec<f64>,
    state: BatteryState,
}

impl Realized {
    fn push(&mut self, r: ControlStepResult) {
        self.p_b.push(r.p_b);
        self.p_g.push(r.p_g);
        self.soe.push(r.new_state.e);
        self.state = r.new_state;
    }
}

fn forecast_for(
    cfg: &SimulationConfig,
    data: &PowerSeries,
    origin: Timestamp,
) -> Result<(PowerSeries, bool), SimError> {
    let step = cfg.delta_s.minutes() as i64;
    let wanted = cfg.horizon_hours as i64 * 60;
    let horizon = match cfg.forecast {
        ForecastSource::Ideal => {
            let room = data.end().minutes() - origin.minutes();
            wanted.min(room - room % step)
        }
        _ => wanted,
    };
    let fail = |message: String| SimError::Forecast { at: origin, message };
    let req =
        ForecastRequest::with_minutes(origin, horizon.max(0) as u32, cfg.delta_s).map_err(|e| fail(e.to_string()))?;
    let series = match &cfg.forecast {
        ForecastSource::Ideal => ideal_forecast(data, &req),
        ForecastSource::Persistence => persistence_forecast(data, &req),
        ForecastSource::File(table) => table.forecast(&req),
    }
    .map_err(|e| fail(e.to_string()))?;
    Ok((series, horizon < wanted))
}

/// Runs one controller over one building's 1-min net load.
pub fn run_simulation(cfg: &SimulationConfig, net_load: &PowerSeries) -> Result<SimulationResult, SimError> {
    cfg.validate()?;
    if net_load.resolution() != Resolution::MINUTE {
        return Err(SimError::Data(format!(
            "net load must be at 1 min resolution, got {} min",
            net_load.resolution().minutes()
        )));
    }
    let start = net_load.start().add_minutes(cfg.start_offset_minutes as i64);
    let available = net_load.end().minutes() - start.minutes();
    let mut span = available;
    if let Some(days) = cfg.max_days {
        span = span.min(days as i64 * 1440);
    }
    span -= span.rem_euclid(60);
    if span <= 0 {
        return Err(SimError::Data(format!(
            "no whole hour of data after the {} min start offset ({} min available)",
            cfg.start_offset_minutes, available
        )));
    }
    let truth = net_load.slice(start, span as usize)?;
    let gt = truth.average_to(cfg.delta_gt)?;
    let dt = cfg.delta_gt.hours();
    let spec = &cfg.spec;

    let initial = BatteryState::new(spec, cfg.initial_soe).map_err(|e| SimError::Config(e.to_string()))?;
    let mut out = Realized {
        p_b: Vec::with_capacity(gt.len()),
        p_g: Vec::with_capacity(gt.len()),
        soe: Vec::with_capacity(gt.len() + 1),
        state: initial,
    };
    out.soe.push(initial.e);
    let mut plans = Vec::new();
    let mut stats = SolveStats::default();

    match cfg.controller {
        ControllerKind::Rbc => {
            for &p_l in gt.values() {
                let r = rbc_step(spec, out.state, p_l, dt);
                out.push(r);
            }
        }
        controller => {
            let per_interval = (cfg.delta_s.minutes() / cfg.delta_gt.minutes()) as usize;
            let intervals = gt.len() / per_interval;
            plans.reserve(intervals);
            for j in 0..intervals {
                let origin = start.add_minutes(j as i64 * cfg.delta_s.minutes() as i64);
                let (forecast, truncated) = forecast_for(cfg, net_load, origin)?;
                let solver_err = |source| SimError::Solver { at: origin, source };
                let problem = ScheduleProblem::new(&forecast, &cfg.tariff, spec, out.state.e).map_err(solver_err)?;
                let plan = solve_problem(&problem, cfg.backend).map_err(solver_err)?;

                stats.solves += 1;
                stats.truncated_horizons += truncated as usize;
                stats.violating_steps += check_complementarity(&plan, COMPLEMENTARITY_TOLERANCE).len();
                for s in &plan.steps {
                    stats.max_product = stats
                        .max_product
                        .max((s.p_imp * s.p_exp).abs())
                        .max((s.p_ch * s.p_dis).abs());
                }

                let first = plan.steps[0];
                let e0 = out.state.e;
                for &p_l in &gt.values()[j * per_interval..(j + 1) * per_interval] {
                    let r = match controller {
                        ControllerKind::MpcConstGrid => const_grid_step(first.p_g, spec, out.state, p_l, dt),
                        _ => const_bat_step(first.p_b, spec, out.state, p_l, dt),
                    };
                    out.push(r);
                }
                plans.push(PlanRecord {
                    origin,
                    horizon_steps: plan.len(),
                    truncated,
                    e0,
                    first,
                    objective: plan.objective_value,
                    plan: cfg.record_plans.then_some(plan),
                });
            }
        }
    }

    let p_b = PowerSeries::new(gt.start(), cfg.delta_gt, out.p_b)?;
    let p_g = PowerSeries::new(gt.start(), cfg.delta_gt, out.p_g)?;
    let settlement = settle(&p_g, &cfg.tariff, cfg.delta_gt)?;
    let (discharged, degradation) = degradation_cost(&p_b, spec);
    Ok(SimulationResult {
        model: cfg.model_id(),
        delta_s: cfg.delta_s,
        net_load: gt,
        p_b,
        p_g,
        soe: out.soe,
        report: CostReport::new(&settlement, discharged, degradation),
        plans,
        stats,
    })
}

/// Per-step trace: realized powers and SoE, with the horizon of the plan in
/// force (empty for rule-based control).
pub fn write_trace_csv<W: Write>(out: &mut W, result: &SimulationResult) -> io::Result<()> {
    writeln!(
        out,
        "timestamp,net_load_kw,p_b_kw,p_g_kw,soe_start_kwh,plan_horizon_steps,horizon_truncated"
    )?;
    let plan_start = result.plans.first().map(|p| p.origin.minutes());
    for i in 0..result.p_b.len() {
        let at = result.p_b.timestamp_at(i);
        let in_force = plan_start.and_then(|s| {
            let k = (at.minutes() - s) / result.delta_s.minutes() as i64;
            result.plans.get(usize::try_from(k).ok()?)
        });
        let (horizon, truncated) = match in_force {
            Some(p) => (p.horizon_steps.to_string(), p.truncated.to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            at,
            result.net_load.values()[i],
            result.p_b.values()[i],
            result.p_g.values()[i],
            result.soe[i],
            horizon,
            truncated
        )?;
    }
    Ok(())
}
