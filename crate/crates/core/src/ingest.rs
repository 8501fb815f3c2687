//! Net-load data: CSV loading and a seeded synthetic generator.
//!
//! CSV layout: header `timestamp,<building_id>[,...]`, one row per minute,
//! timestamps `YYYY-MM-DDTHH:MM`, values in kW.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use chrono::{DateTime, Datelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::timeseries::{PowerSeries, Resolution, TimeSeriesError, Timestamp, MINUTES_PER_DAY};

/// Minimum dataset length: one day of forecast history plus one simulated
/// day.
pub const MIN_MINUTES: usize = 2 * MINUTES_PER_DAY as usize;

pub const SYNTHETIC_START: &str = "2020-07-15T00:00";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("bad header: {0}")]
    Header(String),
    #[error("row {row}: expected timestamp {expected}, found {found} (gap)")]
    Gap {
        row: usize,
        expected: Timestamp,
        found: Timestamp,
    },
    #[error("row {row}: timestamp {found} does not follow {previous}")]
    NonMonotone {
        row: usize,
        previous: Timestamp,
        found: Timestamp,
    },
    #[error("building '{building}' has {minutes} minutes of data, need at least {MIN_MINUTES}")]
    TooShort { building: String, minutes: usize },
    #[error(transparent)]
    Series(#[from] TimeSeriesError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildingDataset {
    pub building_id: String,
    /// 1-min net load, positive when consumption exceeds PV.
    pub net_load: PowerSeries,
    /// Known for synthetic buildings only.
    pub panel_count: Option<u32>,
}

pub fn load_csv(path: &Path) -> Result<Vec<BuildingDataset>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<BuildingDataset>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| IngestError::Header(e.to_string()))?.clone();
    if header.len() < 2 || &header[0] != "timestamp" {
        return Err(IngestError::Header(
            "expected 'timestamp' followed by at least one building column".into(),
        ));
    }
    let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if let Some(i) = ids.iter().position(|id| id.is_empty()) {
        return Err(IngestError::Header(format!(
            "column {} has an empty building id",
            i + 2
        )));
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); ids.len()];
    let mut start = None;
    let mut previous: Option<Timestamp> = None;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| IngestError::Row {
            row,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(IngestError::Row {
                row,
                message: format!("{} fields, header has {}", record.len(), header.len()),
            });
        }
        let at = Timestamp::parse(&record[0]).map_err(|e| IngestError::Row {
            row,
            message: e.to_string(),
        })?;
        if let Some(prev) = previous {
            let expected = prev.add_minutes(1);
            if at <= prev {
                return Err(IngestError::NonMonotone {
                    row,
                    previous: prev,
                    found: at,
                });
            }
            if at != expected {
                return Err(IngestError::Gap {
                    row,
                    expected,
                    found: at,
                });
            }
        } else {
            start = Some(at);
        }
        previous = Some(at);
        for (c, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| IngestError::Row {
                row,
                message: format!("column '{}': '{field}' is not a number", ids[c]),
            })?;
            if !v.is_finite() {
                return Err(IngestError::Row {
                    row,
                    message: format!("column '{}': non-finite value", ids[c]),
                });
            }
            columns[c].push(v);
        }
    }

    let Some(start) = start else {
        return Err(IngestError::Header("no data rows".into()));
    };
    ids.into_iter()
        .zip(columns)
        .map(|(building_id, values)| {
            if values.len() < MIN_MINUTES {
                return Err(IngestError::TooShort {
                    building: building_id,
                    minutes: values.len(),
                });
            }
            Ok(BuildingDataset {
                building_id,
                net_load: PowerSeries::new(start, Resolution::MINUTE, values)?,
                panel_count: None,
            })
        })
        .collect()
}

/// Writes datasets that share start and length in the loader's layout.
pub fn write_csv<W: Write>(out: &mut W, datasets: &[BuildingDataset]) -> io::Result<()> {
    let Some(first) = datasets.first() else {
        return Ok(());
    };
    let misaligned = datasets
        .iter()
        .any(|d| d.net_load.start() != first.net_load.start() || d.net_load.len() != first.net_load.len());
    if misaligned {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "datasets differ in start or length",
        ));
    }
    write!(out, "timestamp")?;
    for d in datasets {
        write!(out, ",{}", d.building_id)?;
    }
    writeln!(out)?;
    for i in 0..first.net_load.len() {
        write!(out, "{}", first.net_load.timestamp_at(i))?;
        for d in datasets {
            write!(out, ",{:.4}", d.net_load.values()[i])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Shape of the synthetic household.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    /// Peak output of one panel under clear sky at midsummer, kW.
    pub panel_peak_kw: f64,
    pub base_load_kw: f64,
    pub morning_peak_kw: f64,
    pub evening_peak_kw: f64,
    /// Standard deviation of the slow load noise, kW.
    pub noise_kw: f64,
    /// Expected appliance switch-ons per day.
    pub spikes_per_day: f64,
    pub spike_kw: (f64, f64),
    pub spike_minutes: (u32, u32),
    /// Electrical draw of the heat pump compressor while running, kW.
    pub heat_pump_kw: f64,
    /// Hot-water heating cycles per day, all year.
    pub hot_water_cycles: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            panel_peak_kw: 0.14,
            base_load_kw: 0.25,
            morning_peak_kw: 0.6,
            evening_peak_kw: 1.0,
            noise_kw: 0.12,
            spikes_per_day: 14.0,
            spike_kw: (0.8, 3.5),
            spike_minutes: (2, 25),
            heat_pump_kw: 2.2,
            hot_water_cycles: 2.0,
        }
    }
}

const LOAD_STREAM: u64 = 0;
const CLOUD_STREAM: u64 = 1;
const HOUSEHOLD_STREAM: u64 = 2;
const HEAT_PUMP_STREAM: u64 = 3;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.random::<f64>()
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - r.random::<f64>();
    let u2: f64 = r.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn bump(hour: f64, centre: f64, width: f64) -> f64 {
    let d = (hour - centre) / width;
    (-0.5 * d * d).exp()
}

fn day_of_year(at: Timestamp) -> u32 {
    DateTime::from_timestamp(at.minutes() * 60, 0).map_or(172, |d| d.ordinal())
}

/// Household consumption in kW at 1-min resolution.
fn synthetic_load(seed: u64, start: Timestamp, minutes: usize, p: &SyntheticParams) -> Vec<f64> {
    let mut house = rng(seed, HOUSEHOLD_STREAM);
    let scale = uniform(&mut house, 0.7, 1.4);
    let morning_at = uniform(&mut house, 6.3, 7.7);
    let evening_at = uniform(&mut house, 18.0, 20.0);

    let mut r = rng(seed, LOAD_STREAM);
    let mut slow = 0.0;
    let mut spike_left = 0u32;
    let mut spike_kw = 0.0;
    let spike_chance = p.spikes_per_day / MINUTES_PER_DAY as f64;
    (0..minutes)
        .map(|i| {
            let hour = start.add_minutes(i as i64).minute_of_day() as f64 / 60.0;
            let profile = p.base_load_kw
                + p.morning_peak_kw * bump(hour, morning_at, 1.0)
                + p.evening_peak_kw * bump(hour, evening_at, 1.8)
                + 0.3 * p.evening_peak_kw * bump(hour, 12.5, 1.2);
            slow = 0.995 * slow + p.noise_kw * 0.1 * normal(&mut r);
            let jitter = 0.05 * normal(&mut r);
            if spike_left == 0 && r.random::<f64>() < spike_chance * (0.3 + profile) {
                spike_left = r.random_range(p.spike_minutes.0..=p.spike_minutes.1);
                spike_kw = uniform(&mut r, p.spike_kw.0, p.spike_kw.1);
            }
            let spike = if spike_left > 0 {
                spike_left -= 1;
                spike_kw
            } else {
                0.0
            };
            (scale * (profile + slow + jitter) + spike).max(0.05)
        })
        .collect()
}

/// Space heating demand as a duty cycle: zero through summer, rising
/// from late September towards one at the turn of the year.
fn heating_duty(day_of_year: u32) -> f64 {
    ((day_of_year as f64 - 265.0) / 100.0).clamp(0.0, 1.0) * 0.55
}

/// Heat pump draw in kW at 1-min resolution: on/off compressor cycles for
/// hot water year-round and for space heating in the cold season.
fn synthetic_heat_pump(seed: u64, start: Timestamp, minutes: usize, p: &SyntheticParams) -> Vec<f64> {
    let mut r = rng(seed, HEAT_PUMP_STREAM);
    let power = p.heat_pump_kw * uniform(&mut r, 0.8, 1.2);
    let mut on_left = 0u32;
    let mut off_left = 0u32;
    let mut level = 0.0;
    let hot_water_chance = p.hot_water_cycles / MINUTES_PER_DAY as f64;
    (0..minutes)
        .map(|i| {
            let at = start.add_minutes(i as i64);
            let hour = at.minute_of_day() as f64 / 60.0;
            let night_setback = if (5.0..22.0).contains(&hour) { 1.0 } else { 0.6 };
            let duty = heating_duty(day_of_year(at)) * night_setback;
            if on_left > 0 {
                on_left -= 1;
            } else if off_left > 0 {
                off_left -= 1;
            } else if duty > 0.0 && r.random::<f64>() < 0.1 {
                let run = r.random_range(15..=40u32);
                on_left = run;
                off_left = ((run as f64) * (1.0 - duty) / duty).round() as u32;
                level = power * uniform(&mut r, 0.85, 1.0);
            } else {
                let usage = bump(hour, 7.0, 3.0).max(bump(hour, 19.0, 3.0));
                if r.random::<f64>() < hot_water_chance * 4.0 * usage {
                    on_left = r.random_range(30..=60u32);
                    level = power * uniform(&mut r, 0.9, 1.1);
                }
            }
            if on_left > 0 {
                level
            } else {
                0.0
            }
        })
        .collect()
}

/// Per-panel PV output in kW at 1-min resolution: a half-sine between
/// sunrise and sunset, scaled by season, with cloud passages.
fn synthetic_pv_per_panel(seed: u64, start: Timestamp, minutes: usize, p: &SyntheticParams) -> Vec<f64> {
    let mut r = rng(seed, CLOUD_STREAM);
    let mut cloudiness = 0.0;
    let mut shaded = false;
    let mut shade = 1.0;
    let mut current_day = i64::MIN;
    (0..minutes)
        .map(|i| {
            let at = start.add_minutes(i as i64);
            let day = at.minutes().div_euclid(MINUTES_PER_DAY as i64);
            if day != current_day {
                current_day = day;
                cloudiness = r.random::<f64>().powf(0.8);
            }
            let season = (2.0 * PI * (day_of_year(at) as f64 - 172.0) / 365.0).cos();
            let daylight = 12.0 + 4.0 * season;
            let noon = 13.25;
            let hour = at.minute_of_day() as f64 / 60.0;
            let x = (hour - (noon - daylight / 2.0)) / daylight;
            let clear = if (0.0..=1.0).contains(&x) {
                (PI * x).sin().powf(1.3) * (0.6 + 0.4 * season)
            } else {
                0.0
            };

            let enter = 0.02 * cloudiness;
            let leave = 0.01 + 0.2 * (1.0 - cloudiness);
            let u = r.random::<f64>();
            if shaded && u < leave {
                shaded = false;
            } else if !shaded && u < enter {
                shaded = true;
                shade = uniform(&mut r, 0.15, 0.6);
            }
            let haze = 1.0 - 0.35 * cloudiness;
            let factor = if shaded { shade * haze } else { haze };
            p.panel_peak_kw * clear * factor
        })
        .collect()
}

/// Deterministic synthetic building of `days` days starting 2020-07-15.
pub fn generate_synthetic(seed: u64, days: u32, panel_count: u32) -> BuildingDataset {
    generate_synthetic_with(seed, days, panel_count, &SyntheticParams::default())
}

pub fn generate_synthetic_with(seed: u64, days: u32, panel_count: u32, params: &SyntheticParams) -> BuildingDataset {
    let start = Timestamp::parse(SYNTHETIC_START).expect("valid constant");
    let minutes = days.max(1) as usize * MINUTES_PER_DAY as usize;
    let load = synthetic_load(seed, start, minutes, params);
    let heat = synthetic_heat_pump(seed, start, minutes, params);
    let pv = synthetic_pv_per_panel(seed, start, minutes, params);
    let net: Vec<f64> = load
        .iter()
        .zip(&heat)
        .zip(&pv)
        .map(|((l, h), p)| l + h - panel_count as f64 * p)
        .collect();
    BuildingDataset {
        building_id: format!("syn{seed}_{panel_count}p"),
        net_load: PowerSeries::new(start, Resolution::MINUTE, net).expect("finite by construction"),
        panel_count: Some(panel_count),
    }
}

/// `count` buildings with panel counts spread evenly over 16..=38.
pub fn synthetic_corpus(seed: u64, count: usize, days: u32) -> Vec<BuildingDataset> {
    (0..count)
        .map(|i| {
            let panels = if count > 1 {
                16 + ((22 * i) as f64 / (count - 1) as f64).round() as u32
            } else {
                27
            };
            let building_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let mut d = generate_synthetic(building_seed, days, panels);
            d.building_id = format!("b{:02}", i + 1);
            d
        })
        .collect()
}
