//! The acceptance suite. Every criterion prints one PASS/FAIL line on
//! stderr (uncaptured, so it shows in plain `cargo test` output) and the
//! test fails if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{grid_search, grid_search_two_steps, random_instance, Instance};
use gridshed::battery::default_spec;
use gridshed::ingest::{synthetic_corpus, BuildingDataset};
use gridshed::metrics::{
    aggregate_report, relative_performance, shrinkage, shrinkage_table, underestimation, CostReport, ReportGroup,
};
use gridshed::mpc::solve_schedule;
use gridshed::sim::{
    run_experiment, ControllerKind, ExperimentOptions, ExperimentReport, ForecastSource, Mode, SimulationConfig,
};
use gridshed::tariff::{settle, Tariff};
use gridshed::timeseries::{PowerSeries, Resolution, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const BUILDINGS: usize = 10;
const DAYS: u32 = 15;
const STEPS: [u32; 3] = [60, 30, 15];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || {
        format!("{what}: {got} not within {tol} of {want}")
    })
}

struct Corpus {
    buildings: Vec<BuildingDataset>,
    configs: Vec<SimulationConfig>,
    report: ExperimentReport,
}

fn config(controller: ControllerKind, forecast: ForecastSource, mode: Mode, step: u32) -> SimulationConfig {
    let mut cfg = SimulationConfig::new(controller, mode, Resolution::new(step).unwrap()).with_forecast(forecast);
    cfg.start_offset_minutes = 1440;
    cfg
}

/// RBC, ideal and persistence MPC with the constant-grid layer, and ideal
/// MPC with the constant-battery layer, for every step in both modes.
fn replication_grid() -> Vec<SimulationConfig> {
    let mut out = Vec::new();
    for mode in [Mode::FullyAveraged, Mode::FineResolution] {
        for step in STEPS {
            out.push(config(ControllerKind::Rbc, ForecastSource::Ideal, mode, step));
            out.push(config(ControllerKind::MpcConstGrid, ForecastSource::Ideal, mode, step));
            out.push(config(
                ControllerKind::MpcConstGrid,
                ForecastSource::Persistence,
                mode,
                step,
            ));
            out.push(config(ControllerKind::MpcConstBat, ForecastSource::Ideal, mode, step));
        }
    }
    out
}

impl Corpus {
    fn build() -> Self {
        let buildings = synthetic_corpus(2020, BUILDINGS, DAYS);
        let configs = replication_grid();
        let report = run_experiment(&configs, &buildings, &ExperimentOptions::default()).unwrap();
        Corpus {
            buildings,
            configs,
            report,
        }
    }

    fn index(&self, model: &str, mode: Mode, step: u32) -> usize {
        self.configs
            .iter()
            .position(|c| c.model_id() == model && c.mode == mode && c.delta_s.minutes() == step)
            .unwrap()
    }

    fn report(&self, building: usize, model: &str, mode: Mode, step: u32) -> CostReport {
        self.report
            .cell(building, self.index(model, mode, step))
            .result
            .as_ref()
            .expect("cell succeeded")
            .report
    }

    fn mean(&self, model: &str, mode: Mode, step: u32) -> CostReport {
        let all: Vec<_> = (0..self.buildings.len())
            .map(|b| self.report(b, model, mode, step))
            .collect();
        CostReport::mean(&all).unwrap()
    }

    fn groups(&self, mode: Mode, models: &[&str]) -> Vec<ReportGroup> {
        self.report
            .groups(Some(mode))
            .into_iter()
            .filter(|g| models.contains(&g.model.as_str()))
            .collect()
    }
}

fn metric_oracle() -> Outcome {
    let t = Instant::now();
    let averaged = [(212.31, 242.77), (214.83, 245.27), (217.19, 247.64)];
    let fine = [(242.19, 251.65), (237.40, 251.65), (232.49, 251.65)];
    let expected = [69.0, 53.0, 37.0];
    let mut got = Vec::new();
    for i in 0..3 {
        let adv_avg = averaged[i].1 - averaged[i].0;
        let adv_fine = fine[i].1 - fine[i].0;
        let s = shrinkage(adv_avg, adv_fine).map_err(|e| e.to_string())?;
        close(s, expected[i], 1.0, "shrinkage")?;
        got.push(format!("{s:.1}"));
    }
    let rel = relative_performance(212.31, 242.77).map_err(|e| e.to_string())?;
    close(rel, -12.55, 0.01, "relative performance")?;
    let under = underestimation(214.83, 237.40).map_err(|e| e.to_string())?;
    close(under, 10.5, 0.1, "underestimation")?;
    within(t.elapsed(), Duration::from_secs(1))?;
    Ok(format!(
        "shrinkage {} %, rel perf {rel:.2} %, underestimation {under:.2} %",
        got.join("/")
    ))
}

fn solver_vs_grid_search() -> Outcome {
    let t = Instant::now();
    let worked = Instance {
        step_minutes: 60,
        load: vec![-4.0, 4.0],
        prices: vec![(0.3, 0.1); 2],
        spec: default_spec(),
        e0: 0.0,
    };
    let plan = solve_schedule(&worked.forecast(), &Tariff::flat(0.3, 0.1).unwrap(), &worked.spec, 0.0)
        .map_err(|e| e.to_string())?;
    close(plan.objective_value, 0.3768, 1e-3, "worked example")?;
    close(grid_search_two_steps(&worked), 0.3768, 1e-3, "worked example oracle")?;

    let mut worst: f64 = 0.0;
    let count = 24;
    for seed in 0..count {
        let inst = random_instance(seed);
        let plan = solve_schedule(&inst.forecast(), &inst.tariff(), &inst.spec, inst.e0).map_err(|e| e.to_string())?;
        let oracle = grid_search(&inst, 1e-3);
        let diff = (plan.objective_value - oracle).abs();
        ensure(diff <= 5e-3, || {
            format!("seed {seed}: solver {} oracle {oracle}", plan.objective_value)
        })?;
        worst = worst.max(diff);
    }
    within(t.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "{count} instances, worst gap {worst:.2e} EUR, worked example {:.4}",
        plan.objective_value
    ))
}

fn complementarity(c: &Corpus) -> Outcome {
    let mut solves = 0;
    let mut worst: f64 = 0.0;
    for cell in &c.report.cells {
        let s = cell
            .result
            .as_ref()
            .map_err(|e| format!("{} {}: {e}", cell.building_id, cell.model))?;
        ensure(s.stats.violating_steps == 0, || {
            format!(
                "{} {} {}: {} violating steps",
                cell.building_id, cell.model, cell.delta_s, s.stats.violating_steps
            )
        })?;
        solves += s.stats.solves;
        worst = worst.max(s.stats.max_product);
    }
    ensure(solves > 0, || "no plans were solved".into())?;
    Ok(format!(
        "{} cells, {solves} plans, largest product {worst:.1e}",
        c.report.cells.len()
    ))
}

fn physics(c: &Corpus) -> Outcome {
    let (mut balance, mut replay, mut bounds) = (0.0f64, 0.0f64, 0.0f64);
    for cell in &c.report.cells {
        let p = cell.result.as_ref().map_err(|e| e.to_string())?.physics;
        balance = balance.max(p.max_balance_error);
        replay = replay.max(p.max_replay_error);
        bounds = bounds.max(p.max_bound_excess);
    }
    ensure(balance <= 1e-9, || format!("balance error {balance}"))?;
    ensure(replay <= 1e-7, || format!("SoE replay error {replay}"))?;
    ensure(bounds <= 1e-9, || format!("SoE bound excess {bounds}"))?;
    Ok(format!(
        "balance {balance:.1e} kW, replay {replay:.1e} kWh, bounds {bounds:.1e} kWh"
    ))
}

fn rbc_step_invariance(c: &Corpus) -> Outcome {
    for b in 0..c.buildings.len() {
        let reports: Vec<_> = STEPS
            .iter()
            .map(|&s| c.report(b, "rbc", Mode::FineResolution, s))
            .collect();
        ensure(reports.windows(2).all(|w| w[0] == w[1]), || {
            format!("building {}: {reports:?}", c.buildings[b].building_id)
        })?;
    }
    Ok(format!(
        "{} buildings, mean total {:.4} EUR at every step",
        c.buildings.len(),
        c.mean("rbc", Mode::FineResolution, 60).total
    ))
}

fn averaged_fast_layers_agree(c: &Corpus) -> Outcome {
    let configs: Vec<_> = STEPS
        .iter()
        .flat_map(|&s| {
            [ControllerKind::MpcConstGrid, ControllerKind::MpcConstBat]
                .map(|k| config(k, ForecastSource::Ideal, Mode::FullyAveraged, s))
        })
        .collect();
    let options = ExperimentOptions {
        threads: None,
        keep_results: true,
    };
    let r = run_experiment(&configs, &c.buildings, &options).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for b in 0..c.buildings.len() {
        for pair in 0..STEPS.len() {
            let grid = r.cell(b, 2 * pair).full.as_ref().ok_or("missing result")?;
            let bat = r.cell(b, 2 * pair + 1).full.as_ref().ok_or("missing result")?;
            for (x, y) in [(&grid.p_b, &bat.p_b), (&grid.p_g, &bat.p_g)] {
                ensure(x.len() == y.len(), || "length mismatch".into())?;
                for (u, v) in x.values().iter().zip(y.values()) {
                    worst = worst.max((u - v).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-9, || format!("series differ by {worst} kW"))?;
    Ok(format!(
        "{} cell pairs, largest difference {worst:.1e} kW",
        c.buildings.len() * STEPS.len()
    ))
}

fn averaging_underestimates(c: &Corpus) -> Outcome {
    let t = Instant::now();
    let models = ["rbc", "mpc_ideal_const_grid"];
    let mut cells = 0;
    for b in 0..c.buildings.len() {
        for m in models {
            for s in STEPS {
                let avg = c.report(b, m, Mode::FullyAveraged, s).total;
                let fine = c.report(b, m, Mode::FineResolution, s).total;
                let u = underestimation(avg, fine).map_err(|e| e.to_string())?;
                ensure(u >= 0.0, || {
                    format!("{} {m} {s} min: {u:.3} %", c.buildings[b].building_id)
                })?;
                cells += 1;
            }
        }
    }
    let mut summary = Vec::new();
    for m in models {
        let by_step: Vec<f64> = STEPS
            .iter()
            .map(|&s| {
                underestimation(
                    c.mean(m, Mode::FullyAveraged, s).total,
                    c.mean(m, Mode::FineResolution, s).total,
                )
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        ensure(by_step[0] > by_step[1] && by_step[1] > by_step[2], || {
            format!("{m}: not decreasing with the step: {by_step:?}")
        })?;
        summary.push(format!("{m} {:.1}/{:.1}/{:.1} %", by_step[0], by_step[1], by_step[2]));
    }
    within(t.elapsed(), Duration::from_secs(600))?;
    Ok(format!("{cells} cells non-negative; {}", summary.join(", ")))
}

fn shrinkage_non_negative(c: &Corpus) -> Outcome {
    let models = ["rbc", "mpc_ideal_const_grid"];
    let (rows, per_building) = shrinkage_table(
        &c.groups(Mode::FullyAveraged, &models),
        &c.groups(Mode::FineResolution, &models),
        "rbc",
    )
    .map_err(|e| e.to_string())?;
    let defined: Vec<f64> = per_building.iter().filter_map(|b| b.pct).collect();
    let non_negative = defined.iter().filter(|&&p| p >= 0.0).count();
    let share = non_negative as f64 / per_building.len() as f64;
    ensure(share >= 0.9, || {
        format!("only {non_negative} of {} cells non-negative", per_building.len())
    })?;
    let means: Vec<f64> = STEPS
        .iter()
        .map(|&s| rows.iter().find(|r| r.delta_s == s).map(|r| r.pct).ok_or("missing row"))
        .collect::<Result<_, _>>()?;
    ensure(means[0] > means[1] && means[1] > means[2], || {
        format!("not decreasing: {means:?}")
    })?;
    Ok(format!(
        "{non_negative}/{} cells non-negative; mean {:.1}/{:.1}/{:.1} %",
        per_building.len(),
        means[0],
        means[1],
        means[2]
    ))
}

fn const_battery_signature(c: &Corpus) -> Outcome {
    let mut parts = Vec::new();
    for s in STEPS {
        let grid = c.mean("mpc_ideal_const_grid", Mode::FineResolution, s);
        let bat = c.mean("mpc_ideal_const_bat", Mode::FineResolution, s);
        ensure(bat.discharged_kwh < grid.discharged_kwh, || {
            format!("{s} min: discharge {} vs {}", bat.discharged_kwh, grid.discharged_kwh)
        })?;
        ensure(bat.bill > grid.bill, || {
            format!("{s} min: bill {} vs {}", bat.bill, grid.bill)
        })?;
        parts.push(format!(
            "{s} min {:.1} < {:.1} kWh, {:.2} > {:.2} EUR",
            bat.discharged_kwh, grid.discharged_kwh, bat.bill, grid.bill
        ));
    }
    Ok(parts.join("; "))
}

fn settlement_equivalences() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(10);
    let tou = gridshed::tariff::default_tariff();
    let tou_price = |minute: i64| {
        let h = minute.rem_euclid(1440) / 60;
        let c_imp = match h {
            0..=5 | 22..=23 => 0.22,
            6..=16 => 0.32,
            _ => 0.42,
        };
        (c_imp, 0.07)
    };

    for _ in 0..100 {
        let len = r.random_range(1..600usize);
        let start = r.random_range(0..2880i64);
        let values: Vec<f64> = (0..len).map(|_| r.random_range(-6.0..6.0)).collect();
        let series = PowerSeries::new(Timestamp::from_minutes(start), Resolution::MINUTE, values.clone()).unwrap();
        let s = settle(&series, &tou, Resolution::MINUTE).map_err(|e| e.to_string())?;
        let dt = 1.0 / 60.0;
        let (mut import_cost, mut export_revenue) = (0.0, 0.0);
        for (i, &p) in values.iter().enumerate() {
            let (c_imp, c_exp) = tou_price(start + i as i64);
            let energy = p * dt;
            if energy > 0.0 {
                import_cost += c_imp * energy;
            } else if energy < 0.0 {
                export_revenue += c_exp * -energy;
            }
        }
        ensure(
            s.import_cost == import_cost && s.export_revenue == export_revenue,
            || format!("per-step settlement {s:?} vs direct {import_cost}/{export_revenue}"),
        )?;
        ensure(s.bill == import_cost - export_revenue, || {
            "bill differs from direct sum".into()
        })?;
    }

    let flat = Tariff::flat(0.3, 0.1).unwrap();
    for _ in 0..100 {
        let hours = r.random_range(1..4usize);
        let values: Vec<f64> = (0..hours * 60).map(|_| r.random_range(-5.0..5.0)).collect();
        let series = PowerSeries::new(Timestamp::from_minutes(0), Resolution::MINUTE, values.clone()).unwrap();
        let whole = Resolution::new(hours as u32 * 60).ok();
        let Some(whole) = whole.filter(|w| 1440 % w.minutes() == 0) else {
            continue;
        };
        let s = settle(&series, &flat, whole).map_err(|e| e.to_string())?;
        let net: f64 = values.iter().sum::<f64>() / 60.0;
        let want = if net > 0.0 { 0.3 * net } else { 0.1 * net };
        close(s.bill, want, 1e-9, "whole-horizon netting")?;
    }

    let chains: [&[u32]; 3] = [&[1, 5, 15, 60, 1440], &[1, 2, 10, 30, 360], &[1, 3, 15, 45, 720]];
    let mut checked = 0;
    for i in 0..1000 {
        let chain = chains[i % chains.len()];
        let scale = r.random_range(0.1..8.0);
        let values: Vec<f64> = (0..1440).map(|_| r.random_range(-1.0..1.0) * scale).collect();
        let series = PowerSeries::new(Timestamp::from_minutes(0), Resolution::MINUTE, values).unwrap();
        let bills: Vec<f64> = chain
            .iter()
            .map(|&w| settle(&series, &flat, Resolution::new(w).unwrap()).map(|s| s.bill))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        ensure(bills.windows(2).all(|w| w[1] <= w[0] + 1e-9), || {
            format!("bill rose with coarser netting: {bills:?}")
        })?;
        checked += 1;
    }
    Ok(format!(
        "per-step and whole-horizon equivalences hold; monotone on {checked} random series"
    ))
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let line = format!("criterion {n:>2} {tag} {name} ({:.1?}): {detail}\n", t.elapsed());
    let _ = std::io::stderr().write_all(line.as_bytes());
    outcome.is_ok()
}

#[test]
fn acceptance() {
    let mut results = BTreeMap::new();
    results.insert(1, run(1, "metric oracle", metric_oracle));
    results.insert(2, run(2, "solver vs grid search", solver_vs_grid_search));

    let t = Instant::now();
    let corpus = catch_unwind(Corpus::build).ok();
    let _ = std::io::stderr().write_all(
        format!(
            "corpus: {BUILDINGS} buildings x {DAYS} days, 24 configs, {:.1?}\n",
            t.elapsed()
        )
        .as_bytes(),
    );
    let with = |f: fn(&Corpus) -> Outcome| {
        let c = corpus.as_ref();
        move || c.map_or_else(|| Err("corpus run failed".to_string()), f)
    };
    results.insert(3, run(3, "complementarity", with(complementarity)));
    results.insert(4, run(4, "physics invariants", with(physics)));
    results.insert(5, run(5, "rbc step invariance", with(rbc_step_invariance)));
    results.insert(
        6,
        run(6, "averaged fast-layer equivalence", with(averaged_fast_layers_agree)),
    );
    results.insert(
        7,
        run(7, "averaging underestimates costs", with(averaging_underestimates)),
    );
    results.insert(8, run(8, "shrinkage non-negative", with(shrinkage_non_negative)));
    results.insert(9, run(9, "const-battery signature", with(const_battery_signature)));
    results.insert(10, run(10, "settlement equivalences", settlement_equivalences));

    if let Some(c) = &corpus {
        if let Ok(rows) = aggregate_report(&c.report.groups(None), "rbc") {
            let mut text = Vec::new();
            gridshed::metrics::write_report_csv(&mut text, &rows).unwrap();
            let _ = std::io::stderr().write_all(&text);
        }
    }
    let failed: Vec<_> = results.iter().filter(|(_, ok)| !**ok).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
