//! Net-load forecasts over the planning horizon.
//!
//! Three sources sit behind [`Forecaster`]: exact interval averages of the
//! ground truth (ideal), day-ahead persistence, and precomputed forecasts
//! read from a CSV file.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::timeseries::{PowerSeries, Resolution, TimeSeriesError, Timestamp, MINUTES_PER_DAY};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("forecast horizon of {horizon_minutes} min is not a positive multiple of {step} min")]
    BadHorizon { horizon_minutes: u32, step: u32 },
    #[error("{what} does not cover [{from}, {to}) (available [{start}, {end}))")]
    Insufficient {
        what: &'static str,
        from: Timestamp,
        to: Timestamp,
        start: Timestamp,
        end: Timestamp,
    },
    #[error("persistence forecasts reach at most one day ahead, {0} min requested")]
    PersistenceHorizon(u32),
    #[error("forecast file has no forecast for origin {0}")]
    MissingOrigin(Timestamp),
    #[error("forecast file has {available} steps for origin {origin}, need {needed}")]
    TooShort {
        origin: Timestamp,
        available: usize,
        needed: usize,
    },
    #[error("forecast file line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("reading forecast file: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Series(#[from] TimeSeriesError),
}

/// What to forecast: `horizon_minutes` from `origin` at `resolution`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForecastRequest {
    pub origin: Timestamp,
    pub horizon_minutes: u32,
    pub resolution: Resolution,
}

impl ForecastRequest {
    pub fn new(origin: Timestamp, horizon_hours: u32, resolution: Resolution) -> Result<Self, ForecastError> {
        Self::with_minutes(origin, horizon_hours * 60, resolution)
    }

    pub fn with_minutes(
        origin: Timestamp,
        horizon_minutes: u32,
        resolution: Resolution,
    ) -> Result<Self, ForecastError> {
        if horizon_minutes == 0 || horizon_minutes % resolution.minutes() != 0 {
            return Err(ForecastError::BadHorizon {
                horizon_minutes,
                step: resolution.minutes(),
            });
        }
        Ok(ForecastRequest {
            origin,
            horizon_minutes,
            resolution,
        })
    }

    pub fn steps(&self) -> usize {
        (self.horizon_minutes / self.resolution.minutes()) as usize
    }

    pub fn end(&self) -> Timestamp {
        self.origin.add_minutes(self.horizon_minutes as i64)
    }
}

pub trait Forecaster {
    fn forecast(&self, req: &ForecastRequest) -> Result<PowerSeries, ForecastError>;
}

fn window(
    what: &'static str,
    series: &PowerSeries,
    from: Timestamp,
    minutes: u32,
) -> Result<PowerSeries, ForecastError> {
    let to = from.add_minutes(minutes as i64);
    if from < series.start() || to > series.end() {
        return Err(ForecastError::Insufficient {
            what,
            from,
            to,
            start: series.start(),
            end: series.end(),
        });
    }
    let steps = (minutes / series.resolution().minutes()) as usize;
    Ok(series.slice(from, steps)?)
}

/// Exact interval averages of the ground truth over the horizon. Carries no
/// information about fluctuations inside each interval.
pub fn ideal_forecast(ground_truth: &PowerSeries, req: &ForecastRequest) -> Result<PowerSeries, ForecastError> {
    let slice = window("ground truth", ground_truth, req.origin, req.horizon_minutes)?;
    Ok(slice.average_to(req.resolution)?)
}

/// Yesterday's same-clock-time window, averaged to the requested resolution.
pub fn persistence_forecast(history: &PowerSeries, req: &ForecastRequest) -> Result<PowerSeries, ForecastError> {
    if req.horizon_minutes > MINUTES_PER_DAY {
        return Err(ForecastError::PersistenceHorizon(req.horizon_minutes));
    }
    let from = req.origin.add_minutes(-(MINUTES_PER_DAY as i64));
    let slice = window("history", history, from, req.horizon_minutes)?;
    let averaged = slice.average_to(req.resolution)?;
    Ok(PowerSeries::new(req.origin, req.resolution, averaged.into_values())?)
}

pub struct IdealForecaster<'a> {
    pub ground_truth: &'a PowerSeries,
}

impl Forecaster for IdealForecaster<'_> {
    fn forecast(&self, req: &ForecastRequest) -> Result<PowerSeries, ForecastError> {
        ideal_forecast(self.ground_truth, req)
    }
}

pub struct PersistenceForecaster<'a> {
    pub history: &'a PowerSeries,
}

impl Forecaster for PersistenceForecaster<'_> {
    fn forecast(&self, req: &ForecastRequest) -> Result<PowerSeries, ForecastError> {
        persistence_forecast(self.history, req)
    }
}

/// Precomputed forecasts keyed by origin. CSV columns:
/// `origin_timestamp,step_index,p_hat_kw`; step length is the requested
/// resolution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForecastTable {
    by_origin: BTreeMap<Timestamp, Vec<f64>>,
}

impl ForecastTable {
    pub fn insert(&mut self, origin: Timestamp, values: Vec<f64>) {
        self.by_origin.insert(origin, values);
    }

    pub fn len(&self) -> usize {
        self.by_origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_origin.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, ForecastError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, ForecastError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header_ok = rdr
            .headers()
            .map(|h| {
                h.iter()
                    .map(str::trim)
                    .eq(["origin_timestamp", "step_index", "p_hat_kw"])
            })
            .unwrap_or(false);
        if !header_ok {
            return Err(ForecastError::Parse {
                line: 1,
                message: "expected header origin_timestamp,step_index,p_hat_kw".into(),
            });
        }
        let mut table = ForecastTable::default();
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let parse_err = |message: String| ForecastError::Parse { line, message };
            let rec = rec.map_err(|e| parse_err(e.to_string()))?;
            if rec.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, found {}", rec.len())));
            }
            let origin = Timestamp::parse(&rec[0]).map_err(|e| parse_err(e.to_string()))?;
            let step: usize = rec[1]
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("bad step_index {:?}", &rec[1])))?;
            let value: f64 = rec[2]
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("bad p_hat_kw {:?}", &rec[2])))?;
            if !value.is_finite() {
                return Err(parse_err(format!("non-finite p_hat_kw {value}")));
            }
            let values = table.by_origin.entry(origin).or_default();
            if step != values.len() {
                return Err(parse_err(format!(
                    "step_index {step} out of order for origin {origin} (expected {})",
                    values.len()
                )));
            }
            values.push(value);
        }
        Ok(table)
    }
}

impl Forecaster for ForecastTable {
    fn forecast(&self, req: &ForecastRequest) -> Result<PowerSeries, ForecastError> {
        let values = self
            .by_origin
            .get(&req.origin)
            .ok_or(ForecastError::MissingOrigin(req.origin))?;
        let needed = req.steps();
        if values.len() < needed {
            return Err(ForecastError::TooShort {
                origin: req.origin,
                available: values.len(),
                needed,
            });
        }
        Ok(PowerSeries::new(req.origin, req.resolution, values[..needed].to_vec())?)
    }
}
