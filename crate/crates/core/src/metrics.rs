//! Cost reports and the comparison metrics built on them.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::tariff::SettlementResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("baseline total is zero")]
    ZeroBaseline,
    #[error("averaged total {0} must be positive")]
    NonPositiveAveraged(f64),
    #[error("averaged advantage is zero")]
    ZeroAdvantage,
    #[error("no buildings to rank")]
    NoBuildings,
    #[error("model '{model}' has {got} values, expected {expected}")]
    LengthMismatch { model: String, got: usize, expected: usize },
    #[error("empty group for model '{0}'")]
    EmptyGroup(String),
    #[error("no fine-resolution counterpart for model '{model}' at delta_s {delta_s}")]
    MissingCounterpart { model: String, delta_s: u32 },
}

/// Energy and money totals of one simulation. Energies in kWh, money in €.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CostReport {
    pub imported_kwh: f64,
    pub exported_kwh: f64,
    pub import_cost: f64,
    pub export_revenue: f64,
    pub discharged_kwh: f64,
    pub degradation: f64,
    pub bill: f64,
    pub total: f64,
}

impl CostReport {
    pub fn new(settlement: &SettlementResult, discharged_kwh: f64, degradation: f64) -> Self {
        CostReport {
            imported_kwh: settlement.imported_kwh,
            exported_kwh: settlement.exported_kwh,
            import_cost: settlement.import_cost,
            export_revenue: settlement.export_revenue,
            discharged_kwh,
            degradation,
            bill: settlement.bill,
            total: settlement.bill + degradation,
        }
    }

    fn columns(&self) -> [f64; 8] {
        [
            self.imported_kwh,
            self.exported_kwh,
            self.import_cost,
            self.export_revenue,
            self.discharged_kwh,
            self.degradation,
            self.bill,
            self.total,
        ]
    }

    fn from_columns(c: [f64; 8]) -> Self {
        CostReport {
            imported_kwh: c[0],
            exported_kwh: c[1],
            import_cost: c[2],
            export_revenue: c[3],
            discharged_kwh: c[4],
            degradation: c[5],
            bill: c[6],
            total: c[7],
        }
    }

    /// Column-wise mean.
    pub fn mean(reports: &[CostReport]) -> Option<CostReport> {
        if reports.is_empty() {
            return None;
        }
        let mut sums = [0.0; 8];
        for r in reports {
            for (s, v) in sums.iter_mut().zip(r.columns()) {
                *s += v;
            }
        }
        let n = reports.len() as f64;
        Some(CostReport::from_columns(sums.map(|s| s / n)))
    }
}

/// Percent change of `model_total` relative to `rbc_total`.
pub fn relative_performance(model_total: f64, rbc_total: f64) -> Result<f64, MetricError> {
    if rbc_total == 0.0 {
        return Err(MetricError::ZeroBaseline);
    }
    Ok(100.0 * (model_total - rbc_total) / rbc_total)
}

/// Mean rank per model over buildings, rank 1 being cheapest. Tied models
/// share the mean of the positions they occupy.
pub fn ranking(per_building_totals: &BTreeMap<String, Vec<f64>>) -> Result<BTreeMap<String, f64>, MetricError> {
    let expected = per_building_totals
        .values()
        .next()
        .map(Vec::len)
        .ok_or(MetricError::NoBuildings)?;
    if expected == 0 {
        return Err(MetricError::NoBuildings);
    }
    for (model, totals) in per_building_totals {
        if totals.len() != expected {
            return Err(MetricError::LengthMismatch {
                model: model.clone(),
                got: totals.len(),
                expected,
            });
        }
    }
    let models: Vec<&String> = per_building_totals.keys().collect();
    let mut rank_sums = vec![0.0; models.len()];
    for b in 0..expected {
        let totals: Vec<f64> = models.iter().map(|m| per_building_totals[*m][b]).collect();
        for (i, &t) in totals.iter().enumerate() {
            let below = totals.iter().filter(|&&o| o < t).count();
            let equal = totals.iter().filter(|&&o| o == t).count();
            rank_sums[i] += below as f64 + (equal as f64 + 1.0) / 2.0;
        }
    }
    Ok(models
        .into_iter()
        .zip(rank_sums)
        .map(|(m, s)| (m.clone(), s / expected as f64))
        .collect())
}

/// Percent by which the averaged-data evaluation understates the
/// fine-resolution cost.
pub fn underestimation(avg_total: f64, fine_total: f64) -> Result<f64, MetricError> {
    if !(avg_total > 0.0) {
        return Err(MetricError::NonPositiveAveraged(avg_total));
    }
    Ok(100.0 * (fine_total - avg_total) / avg_total)
}

/// Percent of the averaged-data advantage lost at fine resolution. Above
/// 100 the ordering of the two controllers flips.
pub fn shrinkage(advantage_averaged: f64, advantage_fine: f64) -> Result<f64, MetricError> {
    if advantage_averaged == 0.0 {
        return Err(MetricError::ZeroAdvantage);
    }
    Ok(100.0 * (1.0 - advantage_fine / advantage_averaged))
}

/// Cost advantage of a controller over the baseline; positive when it is
/// cheaper.
pub fn advantage(baseline_total: f64, model_total: f64) -> f64 {
    baseline_total - model_total
}

/// Per-building results of one model at one timescale pair. Building order
/// must match across groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportGroup {
    pub model: String,
    pub delta_s: u32,
    pub delta_gt: u32,
    pub reports: Vec<CostReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub model: String,
    pub delta_s: u32,
    pub delta_gt: u32,
    pub mean: CostReport,
    /// `None` when no baseline group shares the timescales.
    pub rel_perf_pct: Option<f64>,
    pub ranking: f64,
}

/// Mean report per group, performance relative to the `baseline` group of
/// the same timescales, and mean rank among groups of the same timescales.
pub fn aggregate_report(groups: &[ReportGroup], baseline: &str) -> Result<Vec<ReportRow>, MetricError> {
    let mut by_scale: BTreeMap<(u32, u32), BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for g in groups {
        if g.reports.is_empty() {
            return Err(MetricError::EmptyGroup(g.model.clone()));
        }
        by_scale
            .entry((g.delta_s, g.delta_gt))
            .or_default()
            .insert(g.model.clone(), g.reports.iter().map(|r| r.total).collect());
    }
    let mut ranks = BTreeMap::new();
    for (scale, totals) in &by_scale {
        ranks.insert(*scale, ranking(totals)?);
    }

    groups
        .iter()
        .map(|g| {
            let mean = CostReport::mean(&g.reports).expect("non-empty");
            let rel_perf_pct = groups
                .iter()
                .find(|b| b.model == baseline && b.delta_s == g.delta_s && b.delta_gt == g.delta_gt)
                .map(|b| {
                    let base_total = CostReport::mean(&b.reports).expect("non-empty").total;
                    relative_performance(mean.total, base_total)
                })
                .transpose()?;
            Ok(ReportRow {
                model: g.model.clone(),
                delta_s: g.delta_s,
                delta_gt: g.delta_gt,
                mean,
                rel_perf_pct,
                ranking: ranks[&(g.delta_s, g.delta_gt)][&g.model],
            })
        })
        .collect()
}

pub const REPORT_HEADER: &str = "model,delta_s_min,delta_gt_min,imp_kwh,cost_imp_eur,exp_kwh,rev_exp_eur,e_dis_kwh,degrad_eur,bill_eur,total_eur,rel_perf_pct,ranking";

pub fn write_report_csv<W: Write>(out: &mut W, rows: &[ReportRow]) -> io::Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for r in rows {
        let m = &r.mean;
        writeln!(
            out,
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{},{:.2}",
            r.model,
            r.delta_s,
            r.delta_gt,
            m.imported_kwh,
            m.import_cost,
            m.exported_kwh,
            m.export_revenue,
            m.discharged_kwh,
            m.degradation,
            m.bill,
            m.total,
            r.rel_perf_pct.map_or_else(String::new, |p| format!("{p:.1}")),
            r.ranking
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnderestimationRow {
    pub model: String,
    pub delta_s: u32,
    pub averaged_total: f64,
    pub fine_total: f64,
    pub pct: f64,
}

/// Pairs averaged-mode rows with the fine-mode row of the same model and
/// scheduling step.
pub fn underestimation_table(
    averaged: &[ReportRow],
    fine: &[ReportRow],
) -> Result<Vec<UnderestimationRow>, MetricError> {
    averaged
        .iter()
        .map(|a| {
            let f = fine
                .iter()
                .find(|f| f.model == a.model && f.delta_s == a.delta_s)
                .ok_or_else(|| MetricError::MissingCounterpart {
                    model: a.model.clone(),
                    delta_s: a.delta_s,
                })?;
            Ok(UnderestimationRow {
                model: a.model.clone(),
                delta_s: a.delta_s,
                averaged_total: a.mean.total,
                fine_total: f.mean.total,
                pct: underestimation(a.mean.total, f.mean.total)?,
            })
        })
        .collect()
}

pub fn write_underestimation_csv<W: Write>(out: &mut W, rows: &[UnderestimationRow]) -> io::Result<()> {
    writeln!(
        out,
        "model,delta_s_min,averaged_total_eur,fine_total_eur,underestimation_pct"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.4},{:.4},{:.1}",
            r.model, r.delta_s, r.averaged_total, r.fine_total, r.pct
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShrinkageRow {
    pub model: String,
    pub delta_s: u32,
    pub advantage_averaged: f64,
    pub advantage_fine: f64,
    /// Shrinkage of the building-mean advantages.
    pub pct: f64,
    /// Mean of per-building shrinkages over buildings where it is defined.
    pub mean_building_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildingShrinkage {
    pub building: usize,
    pub model: String,
    pub delta_s: u32,
    pub advantage_averaged: f64,
    pub advantage_fine: f64,
    /// `None` when the averaged advantage is zero.
    pub pct: Option<f64>,
}

/// Shrinkage of every non-baseline model against `baseline`, both from the
/// building means and per building. Groups are matched on model and
/// scheduling step.
pub fn shrinkage_table(
    averaged: &[ReportGroup],
    fine: &[ReportGroup],
    baseline: &str,
) -> Result<(Vec<ShrinkageRow>, Vec<BuildingShrinkage>), MetricError> {
    let find = |groups: &'_ [ReportGroup], model: &str, delta_s: u32| -> Result<Vec<f64>, MetricError> {
        groups
            .iter()
            .find(|g| g.model == model && g.delta_s == delta_s)
            .map(|g| g.reports.iter().map(|r| r.total).collect())
            .ok_or_else(|| MetricError::MissingCounterpart {
                model: model.to_string(),
                delta_s,
            })
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    let mut rows = Vec::new();
    let mut per_building = Vec::new();
    for g in averaged.iter().filter(|g| g.model != baseline) {
        let model_avg = find(averaged, &g.model, g.delta_s)?;
        let model_fine = find(fine, &g.model, g.delta_s)?;
        let base_avg = find(averaged, baseline, g.delta_s)?;
        let base_fine = find(fine, baseline, g.delta_s)?;
        let n = model_avg.len();
        for (name, v) in [
            (&g.model, &model_fine),
            (&baseline.to_string(), &base_avg),
            (&baseline.to_string(), &base_fine),
        ] {
            if v.len() != n {
                return Err(MetricError::LengthMismatch {
                    model: name.clone(),
                    got: v.len(),
                    expected: n,
                });
            }
        }
        let adv_avg = advantage(mean(&base_avg), mean(&model_avg));
        let adv_fine = advantage(mean(&base_fine), mean(&model_fine));
        let mut defined = Vec::new();
        for b in 0..n {
            let a = advantage(base_avg[b], model_avg[b]);
            let f = advantage(base_fine[b], model_fine[b]);
            let pct = shrinkage(a, f).ok();
            defined.extend(pct);
            per_building.push(BuildingShrinkage {
                building: b,
                model: g.model.clone(),
                delta_s: g.delta_s,
                advantage_averaged: a,
                advantage_fine: f,
                pct,
            });
        }
        rows.push(ShrinkageRow {
            model: g.model.clone(),
            delta_s: g.delta_s,
            advantage_averaged: adv_avg,
            advantage_fine: adv_fine,
            pct: shrinkage(adv_avg, adv_fine)?,
            mean_building_pct: if defined.is_empty() { f64::NAN } else { mean(&defined) },
        });
    }
    Ok((rows, per_building))
}

pub fn write_shrinkage_csv<W: Write>(out: &mut W, rows: &[ShrinkageRow]) -> io::Result<()> {
    writeln!(
        out,
        "model,delta_s_min,advantage_averaged_eur,advantage_fine_eur,shrinkage_pct,mean_building_shrinkage_pct"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.4},{:.4},{:.1},{:.1}",
            r.model, r.delta_s, r.advantage_averaged, r.advantage_fine, r.pct, r.mean_building_pct
        )?;
    }
    Ok(())
}

pub fn write_building_shrinkage_csv<W: Write>(
    out: &mut W,
    rows: &[BuildingShrinkage],
    building_ids: &[String],
) -> io::Result<()> {
    writeln!(
        out,
        "building,model,delta_s_min,advantage_averaged_eur,advantage_fine_eur,shrinkage_pct"
    )?;
    for r in rows {
        let id = building_ids
            .get(r.building)
            .cloned()
            .unwrap_or_else(|| r.building.to_string());
        let pct = r.pct.map_or_else(String::new, |p| format!("{p:.1}"));
        writeln!(
            out,
            "{},{},{},{:.4},{:.4},{}",
            id, r.model, r.delta_s, r.advantage_averaged, r.advantage_fine, pct
        )?;
    }
    Ok(())
}
