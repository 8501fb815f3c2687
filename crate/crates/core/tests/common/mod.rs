//! Brute-force reference for the scheduling program, written directly from
//! the cost and storage equations without using the library's solver code.

#![allow(dead_code)]

use gridshed::battery::BatterySpec;
use gridshed::tariff::{PriceSegment, Tariff};
use gridshed::timeseries::{PowerSeries, Resolution, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One scheduling instance starting at midnight.
#[derive(Debug, Clone)]
pub struct Instance {
    pub step_minutes: u32,
    pub load: Vec<f64>,
    /// `(c_imp, c_exp)` per step, €/kWh.
    pub prices: Vec<(f64, f64)>,
    pub spec: BatterySpec,
    pub e0: f64,
}

impl Instance {
    pub fn dt(&self) -> f64 {
        self.step_minutes as f64 / 60.0
    }

    pub fn forecast(&self) -> PowerSeries {
        PowerSeries::new(
            Timestamp::from_minutes(0),
            Resolution::new(self.step_minutes).unwrap(),
            self.load.clone(),
        )
        .unwrap()
    }

    /// A tariff whose segments coincide with the steps, so the step prices
    /// are exactly `prices`.
    pub fn tariff(&self) -> Tariff {
        let seg = |f: fn(&(f64, f64)) -> f64| {
            self.prices
                .iter()
                .enumerate()
                .map(|(k, p)| PriceSegment::new(k as u32 * self.step_minutes, f(p)))
                .collect::<Vec<_>>()
        };
        Tariff::new(seg(|p| p.0), seg(|p| p.1)).unwrap()
    }

    /// Cost of step `k` when the battery delivers `p` kW.
    pub fn step_cost(&self, k: usize, p: f64) -> f64 {
        let (c_imp, c_exp) = self.prices[k];
        let grid = self.load[k] - p;
        self.dt() * (c_imp * grid.max(0.0) + c_exp * grid.min(0.0) + self.spec.c_deg * p.max(0.0) / self.spec.eta_dis)
    }

    pub fn next_soe(&self, e: f64, p: f64) -> f64 {
        e - self.dt() * (self.spec.eta_ch * p.min(0.0) + p.max(0.0) / self.spec.eta_dis)
    }

    /// Battery powers on the 1e-3 kW lattice that keep the next state within
    /// bounds from `e`, as integer multiples of 1e-3.
    fn lattice(&self, e: f64) -> std::ops::RangeInclusive<i64> {
        let s = &self.spec;
        let dt = self.dt();
        let hi = s.p_max.min((e - s.e_min) * s.eta_dis / dt);
        let lo = s.p_min.max(-(s.e_max - e) / (s.eta_ch * dt));
        let hi = (hi * 1000.0 + 1e-9).floor() as i64;
        let lo = (lo * 1000.0 - 1e-9).ceil() as i64;
        lo..=hi
    }
}

/// Exhaustive search over every pair of lattice powers of a two-step
/// instance.
pub fn grid_search_two_steps(inst: &Instance) -> f64 {
    assert_eq!(inst.load.len(), 2);
    let mut best = f64::INFINITY;
    for j0 in inst.lattice(inst.e0) {
        let p0 = j0 as f64 * 1e-3;
        let e1 = inst.next_soe(inst.e0, p0);
        let c0 = inst.step_cost(0, p0);
        for j1 in inst.lattice(e1) {
            let p1 = j1 as f64 * 1e-3;
            best = best.min(c0 + inst.step_cost(1, p1));
        }
    }
    best
}

/// Grid search over lattice powers at every step, with the dependence
/// between steps carried by a cost-to-go table on an SoE grid of spacing
/// close to `soe_step` kWh, read by linear interpolation.
pub fn grid_search(inst: &Instance, soe_step: f64) -> f64 {
    let s = &inst.spec;
    let n = ((s.e_max - s.e_min) / soe_step).ceil().max(1.0) as usize;
    let h = (s.e_max - s.e_min) / n as f64;
    let states: Vec<f64> = (0..=n).map(|i| s.e_min + i as f64 * h).collect();
    let read = |table: &[f64], e: f64| {
        let x = ((e - s.e_min) / h).clamp(0.0, n as f64);
        let i = (x.floor() as usize).min(n - 1);
        let w = x - i as f64;
        table[i] * (1.0 - w) + table[i + 1] * w
    };

    let steps = inst.load.len();
    let mut to_go = vec![0.0; n + 1];
    for k in (1..steps).rev() {
        to_go = states
            .iter()
            .map(|&e| {
                inst.lattice(e)
                    .map(|j| {
                        let p = j as f64 * 1e-3;
                        inst.step_cost(k, p) + read(&to_go, inst.next_soe(e, p))
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
    }
    inst.lattice(inst.e0)
        .map(|j| {
            let p = j as f64 * 1e-3;
            inst.step_cost(0, p) + read(&to_go, inst.next_soe(inst.e0, p))
        })
        .fold(f64::INFINITY, f64::min)
}

/// Small random instance: 3 or 4 steps, per-step prices with export below
/// import, a battery whose power limits sit on the 1e-3 kW lattice.
pub fn random_instance(seed: u64) -> Instance {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let steps = r.random_range(3..=4usize);
    let step_minutes = [15, 30, 60][r.random_range(0..3usize)];
    let p_max = r.random_range(500..=1500i64) as f64 * 1e-3;
    let p_min = -(r.random_range(500..=1500i64) as f64 * 1e-3);
    let e_min = [0.0, 0.2][r.random_range(0..2usize)];
    let e_max = e_min + r.random_range(1.0..3.0);
    let spec = BatterySpec {
        e_min,
        e_max,
        p_min,
        p_max,
        eta_ch: r.random_range(0.85..1.0),
        eta_dis: r.random_range(0.85..1.0),
        c_deg: r.random_range(0.0..0.12),
    };
    let prices = (0..steps)
        .map(|_| {
            let c_imp: f64 = r.random_range(0.1..0.5);
            (c_imp, c_imp * r.random_range(0.0..0.8))
        })
        .collect();
    let load = (0..steps).map(|_| r.random_range(-2.5..2.5)).collect();
    let e0 = r.random_range(e_min..=e_max);
    Instance {
        step_minutes,
        load,
        prices,
        spec,
        e0,
    }
}
