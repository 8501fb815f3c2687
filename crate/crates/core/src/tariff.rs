//! Time-of-use price curves and the settlement engine that turns a grid
//! exchange series into a bill under a chosen netting interval.
//!
//! A netting interval equal to the grid series resolution is net billing:
//! every step's import and export are priced separately. Coarser intervals
//! are net metering: imports and exports inside a window cancel first.

use std::fmt;

use thiserror::Error;

use crate::timeseries::{window_len, PowerSeries, Resolution, TimeSeriesError, Timestamp, MINUTES_PER_DAY};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TariffError {
    #[error("{curve} curve is empty")]
    EmptyCurve { curve: &'static str },
    #[error("{curve} curve must start at minute 0, starts at {first}")]
    NotFromMidnight { curve: &'static str, first: u32 },
    #[error("{curve} curve segment starts must be strictly increasing below 1440 (at index {index})")]
    Unsorted { curve: &'static str, index: usize },
    #[error("{curve} curve has invalid price {price} at index {index}")]
    BadPrice {
        curve: &'static str,
        index: usize,
        price: f64,
    },
    #[error(transparent)]
    Alignment(#[from] TimeSeriesError),
}

/// One piece of a daily piecewise-constant price curve, valid from
/// `start_minute` until the next segment starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceSegment {
    pub start_minute: u32,
    /// €/kWh
    pub price: f64,
}

impl PriceSegment {
    pub fn new(start_minute: u32, price: f64) -> Self {
        PriceSegment { start_minute, price }
    }
}

/// Daily import and export price curves.
#[derive(Debug, Clone, PartialEq)]
pub struct Tariff {
    import_curve: Vec<PriceSegment>,
    export_curve: Vec<PriceSegment>,
    import_by_minute: Vec<f64>,
    export_by_minute: Vec<f64>,
}

fn check_curve(curve: &'static str, segs: &[PriceSegment]) -> Result<(), TariffError> {
    let first = segs.first().ok_or(TariffError::EmptyCurve { curve })?;
    if first.start_minute != 0 {
        return Err(TariffError::NotFromMidnight {
            curve,
            first: first.start_minute,
        });
    }
    for (index, seg) in segs.iter().enumerate() {
        if !seg.price.is_finite() || seg.price < 0.0 {
            return Err(TariffError::BadPrice {
                curve,
                index,
                price: seg.price,
            });
        }
        if seg.start_minute >= MINUTES_PER_DAY || (index > 0 && seg.start_minute <= segs[index - 1].start_minute) {
            return Err(TariffError::Unsorted { curve, index });
        }
    }
    Ok(())
}

fn expand(segs: &[PriceSegment]) -> Vec<f64> {
    let mut out = Vec::with_capacity(MINUTES_PER_DAY as usize);
    for (i, seg) in segs.iter().enumerate() {
        let end = segs.get(i + 1).map_or(MINUTES_PER_DAY, |s| s.start_minute);
        out.extend(std::iter::repeat(seg.price).take((end - seg.start_minute) as usize));
    }
    out
}

impl Tariff {
    pub fn new(import_curve: Vec<PriceSegment>, export_curve: Vec<PriceSegment>) -> Result<Self, TariffError> {
        check_curve("import", &import_curve)?;
        check_curve("export", &export_curve)?;
        let import_by_minute = expand(&import_curve);
        let export_by_minute = expand(&export_curve);
        Ok(Tariff {
            import_curve,
            export_curve,
            import_by_minute,
            export_by_minute,
        })
    }

    pub fn flat(c_imp: f64, c_exp: f64) -> Result<Self, TariffError> {
        Tariff::new(vec![PriceSegment::new(0, c_imp)], vec![PriceSegment::new(0, c_exp)])
    }

    pub fn import_curve(&self) -> &[PriceSegment] {
        &self.import_curve
    }

    pub fn export_curve(&self) -> &[PriceSegment] {
        &self.export_curve
    }

    /// Mean import and export prices over `[start, start + minutes)`. For a
    /// constant power over the window this is the energy-weighted price.
    pub fn window_prices(&self, start: Timestamp, minutes: u32) -> (f64, f64) {
        if minutes == 1 {
            return price_at(self, start.minute_of_day());
        }
        let mut imp = 0.0;
        let mut exp = 0.0;
        for m in 0..minutes {
            let (ci, ce) = price_at(self, start.add_minutes(m as i64).minute_of_day());
            imp += ci;
            exp += ce;
        }
        (imp / minutes as f64, exp / minutes as f64)
    }

    /// Per-step prices for every step of a uniform grid.
    pub fn step_prices(&self, start: Timestamp, resolution: Resolution, steps: usize) -> Vec<(f64, f64)> {
        let m = resolution.minutes();
        (0..steps)
            .map(|k| self.window_prices(start.add_minutes(k as i64 * m as i64), m))
            .collect()
    }
}

/// Three-level time-of-use default: night 0.22, day 0.32 and evening peak
/// 0.42 €/kWh for imports, flat 0.07 €/kWh feed-in. Every import price beats
/// every export price and feed-in stays below the 0.084 €/kWh degradation
/// price.
pub fn default_tariff() -> Tariff {
    Tariff::new(
        vec![
            PriceSegment::new(0, 0.22),
            PriceSegment::new(6 * 60, 0.32),
            PriceSegment::new(17 * 60, 0.42),
            PriceSegment::new(22 * 60, 0.22),
        ],
        vec![PriceSegment::new(0, 0.07)],
    )
    .expect("default tariff is well formed")
}

/// `(c_imp, c_exp)` in €/kWh at a minute of the day.
pub fn price_at(tariff: &Tariff, minute_of_day: u32) -> (f64, f64) {
    let m = (minute_of_day % MINUTES_PER_DAY) as usize;
    (tariff.import_by_minute[m], tariff.export_by_minute[m])
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SettlementResult {
    pub imported_kwh: f64,
    pub exported_kwh: f64,
    pub import_cost: f64,
    pub export_revenue: f64,
    pub bill: f64,
}

/// Nets `grid` over each `ni` window and prices net imports and net exports
/// separately.
///
/// A window whose net energy is an import is priced at the energy-weighted
/// import price of its importing sub-steps (exports symmetric), so a window
/// spanning a price change splits the net pro rata.
pub fn settle(grid: &PowerSeries, tariff: &Tariff, ni: Resolution) -> Result<SettlementResult, TimeSeriesError> {
    let per_window = window_len(grid.resolution(), ni)?;
    if grid.len() % per_window != 0 {
        return Err(TimeSeriesError::PartialWindow {
            len: grid.len(),
            per_window,
        });
    }
    let dt = grid.resolution().hours();
    let prices = tariff.step_prices(grid.start(), grid.resolution(), grid.len());

    let mut out = SettlementResult::default();
    for (window, window_prices) in grid
        .values()
        .chunks_exact(per_window)
        .zip(prices.chunks_exact(per_window))
    {
        let mut net = 0.0;
        let mut pos_energy = 0.0;
        let mut pos_weighted = 0.0;
        let mut neg_energy = 0.0;
        let mut neg_weighted = 0.0;
        for (&p, &(c_imp, c_exp)) in window.iter().zip(window_prices) {
            let energy = p * dt;
            net += energy;
            if energy > 0.0 {
                pos_energy += energy;
                pos_weighted += c_imp * energy;
            } else if energy < 0.0 {
                neg_energy -= energy;
                neg_weighted += c_exp * -energy;
            }
        }
        if net > 0.0 {
            out.imported_kwh += net;
            out.import_cost += pos_weighted * (net / pos_energy);
        } else if net < 0.0 {
            out.exported_kwh -= net;
            out.export_revenue += neg_weighted * (-net / neg_energy);
        }
    }
    out.bill = out.import_cost - out.export_revenue;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TariffViolation {
    /// Some export price reaches or exceeds some import price, which would
    /// reward buying to sell back.
    Arbitrage {
        import_minute: u32,
        import_price: f64,
        export_minute: u32,
        export_price: f64,
    },
}

impl fmt::Display for TariffViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TariffViolation::Arbitrage {
                import_minute,
                import_price,
                export_minute,
                export_price,
            } => write!(
                f,
                "no-arbitrage violated: import {import_price} €/kWh at minute {import_minute} \
                 is not above export {export_price} €/kWh at minute {export_minute}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TariffValidation {
    pub violations: Vec<TariffViolation>,
    /// Informational: during the cheapest import period the feed-in price is
    /// below the degradation price, so discharging to export loses money.
    pub night_export_below_degradation: bool,
}

impl TariffValidation {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_tariff(tariff: &Tariff, c_deg: f64) -> TariffValidation {
    let (imin_at, imin) = argmin(&tariff.import_by_minute);
    let (emax_at, emax) = argmax(&tariff.export_by_minute);
    let mut violations = Vec::new();
    if !(imin > emax) {
        violations.push(TariffViolation::Arbitrage {
            import_minute: imin_at as u32,
            import_price: imin,
            export_minute: emax_at as u32,
            export_price: emax,
        });
    }
    let night_export = tariff
        .import_by_minute
        .iter()
        .zip(&tariff.export_by_minute)
        .filter(|(ci, _)| **ci == imin)
        .map(|(_, ce)| *ce)
        .fold(f64::NEG_INFINITY, f64::max);
    TariffValidation {
        violations,
        night_export_below_degradation: night_export < c_deg,
    }
}

fn argmin(v: &[f64]) -> (usize, f64) {
    v.iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, x)| if x < acc.1 { (i, x) } else { acc })
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter().copied().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |acc, (i, x)| if x > acc.1 { (i, x) } else { acc },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(step: u32, v: &[f64]) -> PowerSeries {
        PowerSeries::new(Timestamp(0), Resolution::new(step).unwrap(), v.to_vec()).unwrap()
    }

    #[test]
    fn default_tariff_levels() {
        let t = default_tariff();
        let (night, _) = price_at(&t, 3 * 60);
        let (day, _) = price_at(&t, 12 * 60);
        let (evening, _) = price_at(&t, 19 * 60);
        assert!(night < day && day < evening);
        let all: Vec<f64> = (0..1440).map(|m| price_at(&t, m).0).collect();
        assert_eq!(all.iter().cloned().fold(f64::INFINITY, f64::min), night);
        assert_eq!(all.iter().cloned().fold(0.0, f64::max), evening);
        assert_eq!(price_at(&t, 23 * 60 + 59).0, night);
    }

    #[test]
    fn flat_tariff_any_minute() {
        let t = Tariff::flat(0.3, 0.1).unwrap();
        for m in [0, 1, 719, 1439] {
            assert_eq!(price_at(&t, m), (0.3, 0.1));
        }
    }

    #[test]
    fn curve_checks() {
        assert!(matches!(
            Tariff::new(vec![], vec![PriceSegment::new(0, 0.1)]),
            Err(TariffError::EmptyCurve { .. })
        ));
        assert!(matches!(
            Tariff::new(vec![PriceSegment::new(10, 0.3)], vec![PriceSegment::new(0, 0.1)]),
            Err(TariffError::NotFromMidnight { .. })
        ));
        assert!(matches!(
            Tariff::new(
                vec![PriceSegment::new(0, 0.3), PriceSegment::new(0, 0.2)],
                vec![PriceSegment::new(0, 0.1)]
            ),
            Err(TariffError::Unsorted { .. })
        ));
        assert!(matches!(
            Tariff::new(vec![PriceSegment::new(0, -0.3)], vec![PriceSegment::new(0, 0.1)]),
            Err(TariffError::BadPrice { .. })
        ));
    }

    #[test]
    fn settle_net_billing_vs_hourly_netting() {
        let t = Tariff::flat(0.3, 0.1).unwrap();
        let g = grid(30, &[1.0, -1.0]);
        let r = settle(&g, &t, Resolution::HALF_HOUR).unwrap();
        assert!((r.imported_kwh - 0.5).abs() < 1e-12);
        assert!((r.import_cost - 0.15).abs() < 1e-12);
        assert!((r.exported_kwh - 0.5).abs() < 1e-12);
        assert!((r.export_revenue - 0.05).abs() < 1e-12);
        assert!((r.bill - 0.10).abs() < 1e-12);

        let r = settle(&g, &t, Resolution::HOUR).unwrap();
        assert_eq!(r, SettlementResult::default());
    }

    #[test]
    fn settle_zero_grid() {
        let t = default_tariff();
        let g = grid(1, &[0.0; 120]);
        for ni in [1, 15, 60] {
            assert_eq!(
                settle(&g, &t, Resolution::new(ni).unwrap()).unwrap(),
                SettlementResult::default()
            );
        }
    }

    #[test]
    fn settle_splits_across_price_change() {
        // 30-min window straddling 06:00: 1 kW before (0.22), 3 kW after (0.32).
        let t = default_tariff();
        let g = PowerSeries::new(Timestamp(5 * 60 + 45), Resolution::QUARTER_HOUR, vec![1.0, 3.0]).unwrap();
        let r = settle(&g, &t, Resolution::HALF_HOUR).unwrap();
        let expected = 0.25 * 0.22 + 0.75 * 0.32;
        assert!((r.import_cost - expected).abs() < 1e-12);
        // net import smaller than gross: same weighted price applies
        let g = PowerSeries::new(Timestamp(5 * 60 + 45), Resolution::QUARTER_HOUR, vec![2.0, -1.0]).unwrap();
        let r = settle(&g, &t, Resolution::HALF_HOUR).unwrap();
        assert!((r.imported_kwh - 0.25).abs() < 1e-12);
        assert!((r.import_cost - 0.25 * 0.22).abs() < 1e-12);
    }

    #[test]
    fn settle_alignment_errors() {
        let t = default_tariff();
        let g = grid(15, &[1.0, 2.0, 3.0]);
        assert!(settle(&g, &t, Resolution::HALF_HOUR).is_err());
        let g = grid(30, &[1.0, 2.0]);
        assert!(settle(&g, &t, Resolution::QUARTER_HOUR).is_err());
    }

    #[test]
    fn validation_examples() {
        let v = validate_tariff(&default_tariff(), 0.084);
        assert!(v.is_valid());
        assert!(v.night_export_below_degradation);

        let bad = Tariff::new(
            vec![PriceSegment::new(0, 0.3), PriceSegment::new(600, 0.6)],
            vec![PriceSegment::new(0, 0.5)],
        )
        .unwrap();
        let v = validate_tariff(&bad, 0.084);
        assert_eq!(v.violations.len(), 1);
        assert!(v.violations[0].to_string().contains("no-arbitrage"));

        let flat = Tariff::flat(0.3, 0.1).unwrap();
        let v = validate_tariff(&flat, 0.084);
        assert!(v.is_valid());
        assert!(!v.night_export_below_degradation);
    }

    #[test]
    fn window_prices_average() {
        let t = default_tariff();
        let (ci, ce) = t.window_prices(Timestamp(5 * 60 + 30), 60);
        assert!((ci - 0.27).abs() < 1e-12);
        assert!((ce - 0.07).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn net_billing_equals_direct_sum(v in prop::collection::vec(-6.0f64..6.0, 1..200), start in 0i64..2880) {
            let t = default_tariff();
            let g = PowerSeries::new(Timestamp(start), Resolution::MINUTE, v.clone()).unwrap();
            let r = settle(&g, &t, Resolution::MINUTE).unwrap();
            let dt = 1.0 / 60.0;
            let mut imp = 0.0;
            let mut exp = 0.0;
            for (k, p) in v.iter().enumerate() {
                let (ci, ce) = price_at(&t, Timestamp(start + k as i64).minute_of_day());
                if *p > 0.0 { imp += ci * (p * dt) * 1.0; }
                if *p < 0.0 { exp += ce * (-p * dt) * 1.0; }
            }
            prop_assert_eq!(r.import_cost, imp);
            prop_assert_eq!(r.export_revenue, exp);
        }

        #[test]
        fn bill_linear_in_prices(v in prop::collection::vec(-6.0f64..6.0, 4..40), a in 0.0f64..3.0) {
            let g = PowerSeries::new(Timestamp(0), Resolution::QUARTER_HOUR, v[..v.len() / 4 * 4].to_vec()).unwrap();
            let base = settle(&g, &Tariff::flat(0.3, 0.1).unwrap(), Resolution::HOUR).unwrap();
            let scaled = settle(&g, &Tariff::flat(0.3 * a, 0.1 * a).unwrap(), Resolution::HOUR).unwrap();
            prop_assert!((scaled.bill - a * base.bill).abs() < 1e-9);
        }
    }
}
