//! Uniformly sampled average-power series and the averaging that produces
//! every coarser timescale in a simulation.
//!
//! Sign convention, used everywhere in the crate:
//! net load `p_L > 0` is a consumption surplus, battery power `p_B > 0` is
//! discharging and grid power `p_G > 0` is an import, so `p_L = p_B + p_G`.

use std::fmt;

use chrono::{DateTime, NaiveDateTime};
use thiserror::Error;

pub const MINUTES_PER_DAY: u32 = 1440;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimeSeriesError {
    #[error("series must contain at least one value")]
    Empty,
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("resolution of {0} min does not divide a day")]
    InvalidResolution(u32),
    #[error("target resolution {target} min is not a multiple of source resolution {from} min")]
    NotMultiple { from: u32, target: u32 },
    #[error("series of {len} steps does not cover whole windows of {per_window} steps")]
    PartialWindow { len: usize, per_window: usize },
    #[error("timestamp {at} is not on the {step} min grid starting at {start}")]
    Misaligned { at: Timestamp, start: Timestamp, step: u32 },
    #[error("window [{from}, +{steps} steps) is outside the series [{start}, {end})")]
    OutOfRange {
        from: Timestamp,
        steps: usize,
        start: Timestamp,
        end: Timestamp,
    },
    #[error("cannot parse timestamp {0:?}")]
    BadTimestamp(String),
}

/// Minute-granular point on a naive continuous clock (minutes since
/// 1970-01-01T00:00, no time zones).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_minutes(minutes: i64) -> Self {
        Timestamp(minutes)
    }

    pub fn minutes(self) -> i64 {
        self.0
    }

    pub fn minute_of_day(self) -> u32 {
        self.0.rem_euclid(MINUTES_PER_DAY as i64) as u32
    }

    pub fn add_minutes(self, minutes: i64) -> Self {
        Timestamp(self.0 + minutes)
    }

    /// Parses `YYYY-MM-DDTHH:MM`, also accepting a space separator and a
    /// trailing `:00` seconds field.
    pub fn parse(text: &str) -> Result<Self, TimeSeriesError> {
        let t = text.trim();
        let formats = [
            "%Y-%m-%dT%H:%M",
            "%Y-%m-%d %H:%M",
            "%Y-%m-%dT%H:%M:%S",
            "%Y-%m-%d %H:%M:%S",
        ];
        for fmt in formats {
            if let Ok(dt) = NaiveDateTime::parse_from_str(t, fmt) {
                if dt.and_utc().timestamp() % 60 != 0 {
                    return Err(TimeSeriesError::BadTimestamp(text.to_string()));
                }
                return Ok(Timestamp(dt.and_utc().timestamp() / 60));
            }
        }
        Err(TimeSeriesError::BadTimestamp(text.to_string()))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match DateTime::from_timestamp(self.0 * 60, 0) {
            Some(dt) => write!(f, "{}", dt.naive_utc().format("%Y-%m-%dT%H:%M")),
            None => write!(f, "minute {}", self.0),
        }
    }
}

/// Length of one sample in whole minutes. Must divide a day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Resolution(u32);

impl Resolution {
    pub const MINUTE: Resolution = Resolution(1);
    pub const QUARTER_HOUR: Resolution = Resolution(15);
    pub const HALF_HOUR: Resolution = Resolution(30);
    pub const HOUR: Resolution = Resolution(60);

    pub fn new(step_minutes: u32) -> Result<Self, TimeSeriesError> {
        if step_minutes == 0 || MINUTES_PER_DAY % step_minutes != 0 {
            return Err(TimeSeriesError::InvalidResolution(step_minutes));
        }
        Ok(Resolution(step_minutes))
    }

    pub fn minutes(self) -> u32 {
        self.0
    }

    pub fn hours(self) -> f64 {
        self.0 as f64 / 60.0
    }

    pub fn divides(self, other: Resolution) -> bool {
        other.0 % self.0 == 0
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} min", self.0)
    }
}

/// Average power (kW) per step, starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSeries {
    start: Timestamp,
    resolution: Resolution,
    values: Vec<f64>,
}

impl PowerSeries {
    pub fn new(start: Timestamp, resolution: Resolution, values: Vec<f64>) -> Result<Self, TimeSeriesError> {
        if values.is_empty() {
            return Err(TimeSeriesError::Empty);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TimeSeriesError::NonFinite { index, value });
        }
        Ok(PowerSeries {
            start,
            resolution,
            values,
        })
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Exclusive end of the covered span.
    pub fn end(&self) -> Timestamp {
        self.timestamp_at(self.values.len())
    }

    pub fn timestamp_at(&self, index: usize) -> Timestamp {
        self.start.add_minutes(index as i64 * self.resolution.minutes() as i64)
    }

    pub fn duration_minutes(&self) -> i64 {
        self.values.len() as i64 * self.resolution.minutes() as i64
    }

    /// Signed energy (kWh) over the whole series.
    pub fn energy_kwh(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.resolution.hours()
    }

    /// Grid index of `at`, which must lie on the sampling grid (it may equal
    /// the exclusive end).
    pub fn index_of(&self, at: Timestamp) -> Result<usize, TimeSeriesError> {
        let offset = at.minutes() - self.start.minutes();
        let step = self.resolution.minutes() as i64;
        if offset % step != 0 {
            return Err(TimeSeriesError::Misaligned {
                at,
                start: self.start,
                step: self.resolution.minutes(),
            });
        }
        if offset < 0 || offset / step > self.values.len() as i64 {
            return Err(TimeSeriesError::OutOfRange {
                from: at,
                steps: 0,
                start: self.start,
                end: self.end(),
            });
        }
        Ok((offset / step) as usize)
    }

    /// Contiguous sub-series of `steps` samples starting at `from`.
    pub fn slice(&self, from: Timestamp, steps: usize) -> Result<PowerSeries, TimeSeriesError> {
        let out_of_range = || TimeSeriesError::OutOfRange {
            from,
            steps,
            start: self.start,
            end: self.end(),
        };
        let first = self.index_of(from).map_err(|e| match e {
            TimeSeriesError::OutOfRange { .. } => out_of_range(),
            other => other,
        })?;
        if steps == 0 || first + steps > self.values.len() {
            return Err(out_of_range());
        }
        Ok(PowerSeries {
            start: from,
            resolution: self.resolution,
            values: self.values[first..first + steps].to_vec(),
        })
    }

    /// Window means at the coarser `target` resolution. Energy per window is
    /// conserved.
    pub fn average_to(&self, target: Resolution) -> Result<PowerSeries, TimeSeriesError> {
        let per_window = window_len(self.resolution, target)?;
        if per_window == 1 {
            return Ok(self.clone());
        }
        if self.values.len() % per_window != 0 {
            return Err(TimeSeriesError::PartialWindow {
                len: self.values.len(),
                per_window,
            });
        }
        Ok(PowerSeries {
            start: self.start,
            resolution: target,
            values: window_means(&self.values, per_window),
        })
    }
}

/// Number of `source` steps per `target` step.
pub fn window_len(source: Resolution, target: Resolution) -> Result<usize, TimeSeriesError> {
    if !source.divides(target) {
        return Err(TimeSeriesError::NotMultiple {
            from: source.minutes(),
            target: target.minutes(),
        });
    }
    Ok((target.minutes() / source.minutes()) as usize)
}

/// Means of consecutive chunks. Every averaging path in the crate goes
/// through here so identical windows give bit-identical means.
pub(crate) fn window_means(values: &[f64], per_window: usize) -> Vec<f64> {
    values
        .chunks_exact(per_window)
        .map(|w| w.iter().sum::<f64>() / per_window as f64)
        .collect()
}
