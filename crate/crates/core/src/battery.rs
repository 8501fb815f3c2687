//! Battery plant: limits, state-of-energy dynamics, one-step feasibility and
//! degradation pricing per discharged kWh.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::PowerSeries;

/// Slack allowed on SoE bounds to absorb floating-point rounding.
pub const SOE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BatteryError {
    #[error("battery spec invalid: {0}")]
    InvalidSpec(String),
    #[error("lifetime discharged energy must be positive, got {0} kWh")]
    NonPositiveLifetime(f64),
    #[error("salvage value {salvage} exceeds investment {investment}")]
    SalvageExceedsInvestment { investment: f64, salvage: f64 },
    #[error("state of energy {e} kWh outside [{e_min}, {e_max}]")]
    SoeOutOfBounds { e: f64, e_min: f64, e_max: f64 },
}

/// Physical limits, efficiencies and the per-kWh degradation price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatterySpec {
    /// kWh
    pub e_min: f64,
    /// kWh
    pub e_max: f64,
    /// Charging power limit, kW (≤ 0).
    pub p_min: f64,
    /// Discharging power limit, kW (≥ 0).
    pub p_max: f64,
    pub eta_ch: f64,
    pub eta_dis: f64,
    /// €/kWh of discharged energy.
    pub c_deg: f64,
}

impl Default for BatterySpec {
    fn default() -> Self {
        default_spec()
    }
}

/// 13.8 kWh / ±5 kW residential battery, 98 % efficiency each way, priced at
/// (4000 € − 400 € salvage) over a 42.69 MWh warranty throughput.
pub fn default_spec() -> BatterySpec {
    BatterySpec {
        e_min: 0.0,
        e_max: 13.8,
        p_min: -5.0,
        p_max: 5.0,
        eta_ch: 0.98,
        eta_dis: 0.98,
        c_deg: 0.084,
    }
}

impl BatterySpec {
    /// Every violated invariant, as human-readable messages keyed by field.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let fields = [
            ("e_min", self.e_min),
            ("e_max", self.e_max),
            ("p_min", self.p_min),
            ("p_max", self.p_max),
            ("eta_ch", self.eta_ch),
            ("eta_dis", self.eta_dis),
            ("c_deg", self.c_deg),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                out.push(format!("{name} must be finite"));
            }
        }
        if !(self.e_min < self.e_max) {
            out.push(format!("e_min ({}) must be below e_max ({})", self.e_min, self.e_max));
        }
        if !(self.p_min < 0.0) {
            out.push(format!("p_min ({}) must be negative", self.p_min));
        }
        if !(self.p_max > 0.0) {
            out.push(format!("p_max ({}) must be positive", self.p_max));
        }
        for (name, eta) in [("eta_ch", self.eta_ch), ("eta_dis", self.eta_dis)] {
            if !(eta > 0.0 && eta <= 1.0) {
                out.push(format!("{name} ({eta}) must be in (0, 1]"));
            }
        }
        if !(self.c_deg >= 0.0) {
            out.push(format!("c_deg ({}) must be non-negative", self.c_deg));
        }
        out
    }

    pub fn validate(&self) -> Result<(), BatteryError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(BatteryError::InvalidSpec(v.join("; ")))
        }
    }

    pub fn contains(&self, e: f64) -> bool {
        e >= self.e_min - SOE_TOLERANCE && e <= self.e_max + SOE_TOLERANCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryState {
    /// State of energy, kWh.
    pub e: f64,
}

impl BatteryState {
    pub fn new(spec: &BatterySpec, e: f64) -> Result<Self, BatteryError> {
        if !e.is_finite() || !spec.contains(e) {
            return Err(BatteryError::SoeOutOfBounds {
                e,
                e_min: spec.e_min,
                e_max: spec.e_max,
            });
        }
        Ok(BatteryState { e })
    }
}

/// (investment − salvage) / lifetime discharged energy, in €/kWh.
pub fn degradation_price(investment: f64, salvage: f64, lifetime_discharged_kwh: f64) -> Result<f64, BatteryError> {
    if !(lifetime_discharged_kwh > 0.0) {
        return Err(BatteryError::NonPositiveLifetime(lifetime_discharged_kwh));
    }
    if salvage > investment {
        return Err(BatteryError::SalvageExceedsInvestment { investment, salvage });
    }
    Ok((investment - salvage) / lifetime_discharged_kwh)
}

/// Stored-energy change (kWh) caused by holding `p_b` kW for `dt` hours.
/// Charging stores `η_ch` of the terminal energy; discharging draws
/// `1/η_dis` of it.
pub fn soe_delta(spec: &BatterySpec, p_b: f64, dt: f64) -> f64 {
    let charge = p_b.min(0.0);
    let discharge = p_b.max(0.0);
    -dt * (charge * spec.eta_ch + discharge / spec.eta_dis)
}

/// Applies `p_b` for `dt` hours. Does not clamp; see
/// [`feasible_power_bounds`].
pub fn step_soe(spec: &BatterySpec, state: BatteryState, p_b: f64, dt: f64) -> BatteryState {
    BatteryState {
        e: state.e + soe_delta(spec, p_b, dt),
    }
}

/// Power interval `(p_lo, p_hi)` that respects both the power limits and the
/// SoE bounds over one step of `dt` hours. Always `p_lo ≤ 0 ≤ p_hi`.
pub fn feasible_power_bounds(spec: &BatterySpec, state: BatteryState, dt: f64) -> (f64, f64) {
    let headroom = (spec.e_max - state.e).max(0.0);
    let available = (state.e - spec.e_min).max(0.0);
    let p_lo = spec.p_min.max(-headroom / (spec.eta_ch * dt));
    let p_hi = spec.p_max.min(available * spec.eta_dis / dt);
    (p_lo.min(0.0), p_hi.max(0.0))
}

/// Discharged terminal energy (kWh) and its degradation cost (€) for a
/// battery power series.
pub fn degradation_cost(p_b: &PowerSeries, spec: &BatterySpec) -> (f64, f64) {
    let dt = p_b.resolution().hours();
    let discharged: f64 = p_b.values().iter().map(|p| p.max(0.0) * dt).sum();
    let drawn: f64 = p_b.values().iter().map(|p| p.max(0.0) * dt / spec.eta_dis).sum();
    (discharged, spec.c_deg * drawn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::{Resolution, Timestamp};
    use proptest::prelude::*;

    fn spec() -> BatterySpec {
        default_spec()
    }

    #[test]
    fn default_values() {
        let s = default_spec();
        assert_eq!(s.e_min, 0.0);
        assert_eq!(s.e_max, 13.8);
        assert_eq!(s.p_min, -5.0);
        assert_eq!(s.p_max, 5.0);
        assert_eq!(s.eta_ch, 0.98);
        assert_eq!(s.eta_dis, 0.98);
        assert_eq!(s.c_deg, 0.084);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn degradation_price_examples() {
        let c = degradation_price(4000.0, 400.0, 42690.0).unwrap();
        assert!((c - 0.0843).abs() < 1e-4);
        assert!((c - 0.084).abs() < 5e-4);
        assert_eq!(degradation_price(700.0, 700.0, 3.0).unwrap(), 0.0);
        assert_eq!(degradation_price(1000.0, 0.0, 500.0).unwrap(), 2.0);
        assert!(matches!(
            degradation_price(1000.0, 0.0, 0.0),
            Err(BatteryError::NonPositiveLifetime(_))
        ));
        assert!(degradation_price(1000.0, 0.0, -3.0).is_err());
        assert!(degradation_price(100.0, 200.0, 10.0).is_err());
    }

    #[test]
    fn step_soe_examples() {
        let s = spec();
        let e = BatteryState { e: 5.0 };
        assert!((step_soe(&s, e, -2.0, 0.5).e - 5.98).abs() < 1e-12);
        assert_eq!(step_soe(&s, e, 0.0, 0.25).e, 5.0);
        assert!((step_soe(&s, e, 2.0, 1.0).e - (5.0 - 2.0 / 0.98)).abs() < 1e-12);
        assert!((step_soe(&s, e, 2.0, 1.0).e - 2.9592).abs() < 1e-4);
    }

    #[test]
    fn feasible_bounds_examples() {
        let s = spec();
        assert_eq!(feasible_power_bounds(&s, BatteryState { e: 13.8 }, 1.0), (0.0, 5.0));
        assert_eq!(feasible_power_bounds(&s, BatteryState { e: 0.0 }, 1.0), (-5.0, 0.0));
        let (_, hi) = feasible_power_bounds(&s, BatteryState { e: 1.0 }, 1.0);
        assert!((hi - 0.98).abs() < 1e-12);
    }

    #[test]
    fn degradation_cost_examples() {
        let s = spec();
        let charging = PowerSeries::new(Timestamp(0), Resolution::HOUR, vec![-1.0, -3.0]).unwrap();
        assert_eq!(degradation_cost(&charging, &s), (0.0, 0.0));

        let one = PowerSeries::new(Timestamp(0), Resolution::HOUR, vec![9.8]).unwrap();
        let (kwh, eur) = degradation_cost(&one, &s);
        assert!((kwh - 9.8).abs() < 1e-12);
        assert!((eur - 0.84).abs() < 1e-12);

        let mixed = PowerSeries::new(Timestamp(0), Resolution::HALF_HOUR, vec![2.0, -2.0]).unwrap();
        let (kwh, eur) = degradation_cost(&mixed, &s);
        assert!((kwh - 1.0).abs() < 1e-12);
        assert!((eur - 0.084 / 0.98).abs() < 1e-12);
        assert!((eur - 0.0857).abs() < 1e-4);
    }

    #[test]
    fn spec_violations_named() {
        let mut s = spec();
        s.e_min = 20.0;
        s.eta_ch = 1.5;
        let v = s.violations();
        assert!(v.iter().any(|m| m.contains("e_min")));
        assert!(v.iter().any(|m| m.contains("eta_ch")));
        assert!(BatteryState::new(&spec(), 14.0).is_err());
        assert!(BatteryState::new(&spec(), 13.8 + 1e-12).is_ok());
    }

    #[test]
    fn round_trip_loses_energy() {
        let s = spec();
        let start = BatteryState { e: 2.0 };
        let x = 3.0; // terminal kWh charged over one hour
        let charged = step_soe(&s, start, -x, 1.0);
        let stored = charged.e - start.e;
        // discharge power that returns exactly to the start over one hour
        let p_dis = stored * s.eta_dis;
        let back = step_soe(&s, charged, p_dis, 1.0);
        assert!((back.e - start.e).abs() < 1e-12);
        assert!((p_dis - x * s.eta_ch * s.eta_dis).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn bounded_power_keeps_soe_in_range(
            e in 0.0f64..=13.8,
            frac in 0.0f64..=1.0,
            dt in prop::sample::select(vec![1.0 / 60.0, 0.25, 0.5, 1.0]),
        ) {
            let s = spec();
            let state = BatteryState { e };
            let (lo, hi) = feasible_power_bounds(&s, state, dt);
            prop_assert!(lo <= 0.0 && hi >= 0.0);
            let p = lo + frac * (hi - lo);
            let next = step_soe(&s, state, p, dt);
            prop_assert!(s.contains(next.e), "e'={}", next.e);
        }

        #[test]
        fn degradation_additive_and_refinement_invariant(
            a in prop::collection::vec(-5.0f64..5.0, 1..24),
            b in prop::collection::vec(-5.0f64..5.0, 1..24),
        ) {
            let s = spec();
            let mk = |v: &Vec<f64>| PowerSeries::new(Timestamp(0), Resolution::HOUR, v.clone()).unwrap();
            let mut ab = a.clone();
            ab.extend_from_slice(&b);
            let (ka, ca) = degradation_cost(&mk(&a), &s);
            let (kb, cb) = degradation_cost(&mk(&b), &s);
            let (kab, cab) = degradation_cost(&mk(&ab), &s);
            prop_assert!((ka + kb - kab).abs() < 1e-9);
            prop_assert!((ca + cb - cab).abs() < 1e-9);

            let fine: Vec<f64> = a.iter().flat_map(|&p| std::iter::repeat(p).take(4)).collect();
            let fine = PowerSeries::new(Timestamp(0), Resolution::QUARTER_HOUR, fine).unwrap();
            let (kf, cf) = degradation_cost(&fine, &s);
            prop_assert!((kf - ka).abs() < 1e-9);
            prop_assert!((cf - ca).abs() < 1e-9);
        }
    }
}
