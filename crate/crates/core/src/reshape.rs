//! Light preprocessing (1-minute means on a log scale), the night-normalizing
//! reshape of a light curve, and sensor/station temperature window pairs.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::astro::{night_window, GeoCoord, NightWindow, SECONDS_PER_HOUR};
use crate::error::{Error, Result};
use crate::sensor::{format_timestamp, SensorLog, Series};
use crate::weather::WeatherStore;

/// Half window in normalized minutes (8 h).
pub const HALF_WINDOW_MIN: usize = 480;
pub const CURVE_LEN: usize = 2 * HALF_WINDOW_MIN + 1;
/// Lux offset added before taking log10.
pub const LOG_OFFSET_LUX: f64 = 0.01;
/// Temperature window half width in hours.
pub const TEMP_HALF_HOURS: i64 = 8;
pub const TEMP_LEN: usize = 2 * TEMP_HALF_HOURS as usize + 1;
/// Longest run of empty minutes that is bridged by interpolation.
const MAX_MISSING_MINUTES: usize = 29;
const NORMALIZED_NIGHT_S: f64 = 12.0 * SECONDS_PER_HOUR;

/// log10(lux + 0.01) on a regular one-minute grid. Sample `j` summarizes the
/// minute starting at `start + 60 j` and is located at that minute's centre.
#[derive(Debug, Clone, PartialEq)]
pub struct MinuteLogLight {
    pub start: i64,
    pub values: Vec<f64>,
}

impl MinuteLogLight {
    fn sample_time(&self, j: usize) -> f64 {
        (self.start + 60 * j as i64) as f64 + 30.0
    }

    /// Covered interval of sample times.
    pub fn span(&self) -> (f64, f64) {
        (self.sample_time(0), self.sample_time(self.values.len().saturating_sub(1)))
    }

    /// Linear interpolation between minute centres.
    pub fn at(&self, t: f64) -> Option<f64> {
        let x = (t - self.start as f64 - 30.0) / 60.0;
        let last = self.values.len().checked_sub(1)? as f64;
        if !(0.0..=last).contains(&x) {
            return None;
        }
        let i = x.floor() as usize;
        if i as f64 == last {
            return Some(self.values[i]);
        }
        let w = x - i as f64;
        Some(self.values[i] * (1.0 - w) + self.values[i + 1] * w)
    }
}

pub fn preprocess_light(raw: &Series) -> Result<MinuteLogLight> {
    let (first, last) = raw.span().ok_or_else(|| Error::input("empty light series"))?;
    let start = first.div_euclid(60) * 60;
    let n = ((last - start) / 60 + 1) as usize;
    let mut sums = vec![0.0; n];
    let mut counts = vec![0u32; n];
    for (t, v) in raw.iter() {
        let j = ((t - start) / 60) as usize;
        sums[j] += v;
        counts[j] += 1;
    }
    let mut values: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { (s / c as f64 + LOG_OFFSET_LUX).log10() } else { f64::NAN })
        .collect();

    // First and last bins are always populated, so every gap is interior.
    let mut j = 0;
    while j < n {
        if counts[j] > 0 {
            j += 1;
            continue;
        }
        let gap_start = j;
        while counts[j] == 0 {
            j += 1;
        }
        let len = j - gap_start;
        if len > MAX_MISSING_MINUTES {
            return Err(Error::MissingData(format!(
                "{len} consecutive minutes without light samples from {}",
                format_timestamp(start + 60 * gap_start as i64)
            )));
        }
        let (a, b) = (values[gap_start - 1], values[j]);
        for k in gap_start..j {
            let w = (k + 1 - gap_start) as f64 / (len + 1) as f64;
            values[k] = a * (1.0 - w) + b * w;
        }
    }
    Ok(MinuteLogLight { start, values })
}

/// Light vector centred on a candidate's night and rescaled so that night
/// spans 12 h; index 480 is the night centre, one sample per normalized
/// minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedLightCurve {
    pub values: Vec<f64>,
    pub sensor_id: String,
    pub date: NaiveDate,
    pub candidate: GeoCoord,
}

/// Raw-time span needed to reshape against `window`.
pub fn required_span(window: &NightWindow) -> (f64, f64) {
    let half = HALF_WINDOW_MIN as f64 * 60.0 * window.length / NORMALIZED_NIGHT_S;
    (window.center - half, window.center + half)
}

/// Resample so that `window` maps onto the fixed normalized grid:
/// τ = (t − centre) · 12 h / length, τ ∈ {−480 … 480} minutes.
pub fn reshape_window(light: &MinuteLogLight, window: &NightWindow) -> Result<Vec<f64>> {
    if !(window.length > 0.0) {
        return Err(Error::input("night length must be positive"));
    }
    let (need_lo, need_hi) = required_span(window);
    let (have_lo, have_hi) = light.span();
    if need_lo < have_lo || need_hi > have_hi {
        return Err(Error::Coverage(format!(
            "light covers {}..{}, reshape needs {}..{}",
            format_timestamp(have_lo as i64),
            format_timestamp(have_hi as i64),
            format_timestamp(need_lo.floor() as i64),
            format_timestamp(need_hi.ceil() as i64)
        )));
    }
    let scale = window.length / NORMALIZED_NIGHT_S;
    let half = HALF_WINDOW_MIN as f64;
    Ok((0..CURVE_LEN)
        .map(|k| {
            let tau_s = (k as f64 - half) * 60.0;
            let t = (window.center + tau_s * scale).clamp(have_lo, have_hi);
            light.at(t).expect("within coverage")
        })
        .collect())
}

pub fn reshape_light(
    light: &MinuteLogLight,
    sensor_id: &str,
    candidate: GeoCoord,
    date: NaiveDate,
) -> Result<NormalizedLightCurve> {
    let window = night_window(candidate, date)?;
    Ok(NormalizedLightCurve {
        values: reshape_window(light, &window)?,
        sensor_id: sensor_id.to_string(),
        date,
        candidate,
    })
}

pub fn write_curve_csv<W: Write>(curve: &NormalizedLightCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau_min", "log_lux"])?;
    for (k, v) in curve.values.iter().enumerate() {
        w.write_record([(k as i64 - HALF_WINDOW_MIN as i64).to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<curve csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TempPairVector {
    pub sensor_part: Vec<f64>,
    pub station_part: Vec<f64>,
    pub sensor_id: String,
    pub date: NaiveDate,
    pub station_id: String,
    pub candidate: GeoCoord,
}

impl TempPairVector {
    /// Sensor samples followed by station samples.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * TEMP_LEN);
        v.extend_from_slice(&self.sensor_part);
        v.extend_from_slice(&self.station_part);
        v
    }
}

/// Hourly means of the sensor temperature in ±30 min bins around
/// `center + k h`, k ∈ −8..=8.
pub fn sensor_hourly_window(temps: &Series, center: f64) -> Result<Vec<f64>> {
    (-TEMP_HALF_HOURS..=TEMP_HALF_HOURS)
        .map(|k| {
            let mid = center + k as f64 * SECONDS_PER_HOUR;
            let lo = (mid - 1800.0).ceil() as i64;
            let hi = (mid + 1800.0).ceil() as i64;
            let r = temps.range(lo, hi);
            if r.is_empty() {
                return Err(Error::Coverage(format!(
                    "no sensor temperature within 30 min of {}",
                    format_timestamp(mid as i64)
                )));
            }
            let n = r.len() as f64;
            Ok(temps.values[r].iter().sum::<f64>() / n)
        })
        .collect()
}

pub fn make_temp_pair(sensor: &SensorLog, store: &WeatherStore, candidate: GeoCoord, date: NaiveDate) -> Result<TempPairVector> {
    let window = night_window(candidate, date)?;
    let station = store.nearest_station(candidate)?;
    make_temp_pair_with_station(sensor, store, &station.station_id, candidate, date, &window)
}

pub(crate) fn make_temp_pair_with_station(
    sensor: &SensorLog,
    store: &WeatherStore,
    station_id: &str,
    candidate: GeoCoord,
    date: NaiveDate,
    window: &NightWindow,
) -> Result<TempPairVector> {
    Ok(TempPairVector {
        sensor_part: sensor_hourly_window(&sensor.temperature, window.center)?,
        station_part: store.station_night_series(station_id, window, TEMP_HALF_HOURS * 3600)?,
        sensor_id: sensor.id.clone(),
        date,
        station_id: station_id.to_string(),
        candidate,
    })
}
