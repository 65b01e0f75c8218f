//! Daily position estimates: discriminator scores on a degree grid around a
//! reference, bilinear upsampling, product fusion and argmax readout; plus
//! the threshold baseline inverting sunset/sunrise times.

use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::astro::{
    latitude_from_night_length, longitude_from_night_center, midnight_utc, night_window, GeoCoord, Hemisphere,
    NightWindow, SECONDS_PER_HOUR,
};
use crate::discriminators::{Discriminator, DiscriminatorKind};
use crate::error::{Error, Result};
use crate::reshape::{make_temp_pair, reshape_window, MinuteLogLight};
use crate::sensor::SensorLog;
use crate::weather::{great_circle_deg, WeatherStore};

/// Cells within this share of the peak form the peak region.
const PEAK_REGION_LEVEL: f64 = 0.9;
/// Peak regions wider than this (degrees, either axis) are ill-conditioned.
const PEAK_REGION_MAX_DEG: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub half_span: f64,
    pub step: f64,
    pub fine_step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            half_span: 10.0,
            step: 1.0,
            fine_step: 0.1,
        }
    }
}

impl GridSpec {
    /// Offsets −half_span, −half_span + step, …, +half_span.
    pub fn axis(&self) -> Result<Vec<f64>> {
        if !(self.half_span > 0.0 && self.step > 0.0 && self.step <= 2.0 * self.half_span) {
            return Err(Error::Degenerate(format!(
                "half span {} with step {} gives fewer than two nodes",
                self.half_span, self.step
            )));
        }
        let n = (2.0 * self.half_span / self.step).round() as usize + 1;
        Ok((0..n).map(|i| -self.half_span + i as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSource {
    Light,
    Temp,
}

/// Non-negative scores over `origin` + (lat offset, lon offset); row-major
/// with latitude as the outer axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodGrid {
    pub origin: GeoCoord,
    pub lat_offsets: Vec<f64>,
    pub lon_offsets: Vec<f64>,
    pub values: Vec<f64>,
    /// Cells that could not be evaluated; their value is 0.
    pub missing: Vec<bool>,
    pub sources: Vec<GridSource>,
}

impl LikelihoodGrid {
    pub fn new(origin: GeoCoord, lat_offsets: Vec<f64>, lon_offsets: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        let g = Self {
            origin,
            lat_offsets,
            lon_offsets,
            values,
            missing: vec![false; n],
            sources: Vec::new(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let increasing = |a: &[f64]| a.len() >= 2 && a.windows(2).all(|w| w[1] > w[0]) && a.iter().all(|v| v.is_finite());
        if !increasing(&self.lat_offsets) || !increasing(&self.lon_offsets) {
            return Err(Error::Degenerate("grid axes need ≥ 2 strictly increasing nodes".into()));
        }
        let n = self.lat_offsets.len() * self.lon_offsets.len();
        if self.values.len() != n || self.missing.len() != n {
            return Err(Error::Shape(format!("{} values for a {n}-cell grid", self.values.len())));
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Numerical("grid values must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.lat_offsets.len(), self.lon_offsets.len())
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.lon_offsets.len() + j]
    }

    pub fn coord(&self, i: usize, j: usize) -> GeoCoord {
        self.origin.offset(self.lat_offsets[i], self.lon_offsets[j])
    }

    fn same_axes(&self, other: &Self) -> bool {
        self.origin == other.origin && self.lat_offsets == other.lat_offsets && self.lon_offsets == other.lon_offsets
    }
}

fn candidate_grid(reference: GeoCoord, grid: &GridSpec) -> Result<(Vec<f64>, Vec<GeoCoord>)> {
    let axis = grid.axis()?;
    let cells = axis
        .iter()
        .flat_map(|&dlat| axis.iter().map(move |&dlon| reference.offset(dlat, dlon)))
        .collect();
    Ok((axis, cells))
}

fn assemble(
    reference: GeoCoord,
    axis: Vec<f64>,
    rows: Vec<Option<Vec<f64>>>,
    model: &Discriminator,
    source: GridSource,
) -> Result<LikelihoodGrid> {
    let present: Vec<&[f64]> = rows.iter().flatten().map(Vec::as_slice).collect();
    if present.is_empty() {
        return Err(Error::Coverage("no grid cell could be evaluated".into()));
    }
    let mut scores = model.score_rows(&present)?.into_iter();
    let missing: Vec<bool> = rows.iter().map(Option::is_none).collect();
    let values = missing.iter().map(|&m| if m { 0.0 } else { scores.next().expect("one score per row") }).collect();
    let grid = LikelihoodGrid {
        origin: reference,
        lat_offsets: axis.clone(),
        lon_offsets: axis,
        values,
        missing,
        sources: vec![source],
    };
    grid.validate()?;
    Ok(grid)
}

/// Light-discriminator scores of the sensor's night reshaped at every
/// candidate. Cells whose window leaves the logged span are flagged missing.
pub fn evaluate_light_grid(
    model: &Discriminator,
    light: &MinuteLogLight,
    date: NaiveDate,
    reference: GeoCoord,
    grid: &GridSpec,
) -> Result<LikelihoodGrid> {
    if model.kind != DiscriminatorKind::Light {
        return Err(Error::input("light grid needs the light discriminator"));
    }
    let (axis, cells) = candidate_grid(reference, grid)?;
    let rows: Vec<Option<Vec<f64>>> = cells
        .par_iter()
        .map(|&c| night_window(c, date).ok().and_then(|w| reshape_window(light, &w).ok()))
        .collect();
    assemble(reference, axis, rows, model, GridSource::Light)
}

/// Temperature-discriminator scores of (sensor, candidate's nearest station)
/// pairs at every candidate.
pub fn evaluate_temp_grid(
    model: &Discriminator,
    sensor: &SensorLog,
    store: &WeatherStore,
    date: NaiveDate,
    reference: GeoCoord,
    grid: &GridSpec,
) -> Result<LikelihoodGrid> {
    if model.kind != DiscriminatorKind::Temp {
        return Err(Error::input("temperature grid needs the temperature discriminator"));
    }
    let (axis, cells) = candidate_grid(reference, grid)?;
    let rows: Vec<Option<Vec<f64>>> = cells
        .par_iter()
        .map(|&c| make_temp_pair(sensor, store, c, date).ok().map(|p| p.concat()))
        .collect();
    assemble(reference, axis, rows, model, GridSource::Temp)
}

/// Replace missing cells by their nearest evaluated cell (index distance;
/// ties to the lowest (row, column)).
fn fill_missing(grid: &LikelihoodGrid) -> Result<Vec<f64>> {
    let (nr, nc) = grid.dims();
    let present: Vec<(usize, usize)> = (0..nr)
        .flat_map(|i| (0..nc).map(move |j| (i, j)))
        .filter(|&(i, j)| !grid.missing[i * nc + j])
        .collect();
    if present.is_empty() {
        return Err(Error::Coverage("every grid cell is missing".into()));
    }
    let mut out = grid.values.clone();
    for i in 0..nr {
        for j in 0..nc {
            if !grid.missing[i * nc + j] {
                continue;
            }
            let &(bi, bj) = present
                .iter()
                .min_by_key(|&&(a, b)| (a.abs_diff(i).pow(2) + b.abs_diff(j).pow(2), a, b))
                .expect("non-empty");
            out[i * nc + j] = grid.at(bi, bj);
        }
    }
    Ok(out)
}

fn fine_axis(axis: &[f64], fine_step: f64) -> Vec<f64> {
    let (lo, hi) = (axis[0], axis[axis.len() - 1]);
    let n = ((hi - lo) / fine_step).round() as usize + 1;
    (0..n).map(|k| if k + 1 == n { hi } else { lo + k as f64 * fine_step }).collect()
}

/// Interval index and weight of `x` on a strictly increasing axis.
fn locate(axis: &[f64], x: f64) -> (usize, f64) {
    let i = axis.partition_point(|&a| a <= x).saturating_sub(1).min(axis.len() - 2);
    let w = ((x - axis[i]) / (axis[i + 1] - axis[i])).clamp(0.0, 1.0);
    (i, w)
}

/// Bilinear upsampling onto `fine_step` spacing over the same bounds.
/// Missing cells are filled from their nearest neighbour first.
pub fn interpolate_grid(grid: &LikelihoodGrid, fine_step: f64) -> Result<LikelihoodGrid> {
    grid.validate()?;
    if !(fine_step > 0.0) {
        return Err(Error::input("fine step must be positive"));
    }
    let coarse = fill_missing(grid)?;
    let nc = grid.lon_offsets.len();
    let lat_f = fine_axis(&grid.lat_offsets, fine_step);
    let lon_f = fine_axis(&grid.lon_offsets, fine_step);
    let lon_loc: Vec<(usize, f64)> = lon_f.iter().map(|&x| locate(&grid.lon_offsets, x)).collect();
    let mut values = Vec::with_capacity(lat_f.len() * lon_f.len());
    for &y in &lat_f {
        let (i, wy) = locate(&grid.lat_offsets, y);
        for &(j, wx) in &lon_loc {
            let v00 = coarse[i * nc + j];
            let v01 = coarse[i * nc + j + 1];
            let v10 = coarse[(i + 1) * nc + j];
            let v11 = coarse[(i + 1) * nc + j + 1];
            let top = v00 + wx * (v01 - v00);
            let bottom = v10 + wx * (v11 - v10);
            values.push(top + wy * (bottom - top));
        }
    }
    let n = values.len();
    Ok(LikelihoodGrid {
        origin: grid.origin,
        lat_offsets: lat_f,
        lon_offsets: lon_f,
        values,
        missing: vec![false; n],
        sources: grid.sources.clone(),
    })
}

/// Elementwise product normalized to sum 1.
pub fn fuse(a: &LikelihoodGrid, b: &LikelihoodGrid) -> Result<LikelihoodGrid> {
    if !a.same_axes(b) {
        return Err(Error::Shape("fused grids must share origin and axes".into()));
    }
    let missing: Vec<bool> = a.missing.iter().zip(&b.missing).map(|(x, y)| *x || *y).collect();
    let mut values: Vec<f64> = a
        .values
        .iter()
        .zip(&b.values)
        .zip(&missing)
        .map(|((x, y), &m)| if m { 0.0 } else { x * y })
        .collect();
    let total: f64 = values.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Degenerate("fused grid is zero everywhere".into()));
    }
    values.iter_mut().for_each(|v| *v /= total);
    let mut sources = a.sources.clone();
    sources.extend(b.sources.iter().copied().filter(|s| !a.sources.contains(s)));
    Ok(LikelihoodGrid {
        origin: a.origin,
        lat_offsets: a.lat_offsets.clone(),
        lon_offsets: a.lon_offsets.clone(),
        values,
        missing,
        sources,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayEstimate {
    pub coord: GeoCoord,
    pub lat_offset: f64,
    pub lon_offset: f64,
    pub peak: f64,
    pub sources: Vec<GridSource>,
    pub ill_conditioned: bool,
}

/// Argmax cell; ties go to the cell nearest the grid centre, then to the
/// smallest (lat, lon) offset.
pub fn estimate_day(grid: &LikelihoodGrid) -> Result<DayEstimate> {
    grid.validate()?;
    let (nr, nc) = grid.dims();
    let peak = (0..nr * nc)
        .filter(|&k| !grid.missing[k])
        .map(|k| grid.values[k])
        .fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::Degenerate("grid has no positive cell".into()));
    }
    let mid_lat = 0.5 * (grid.lat_offsets[0] + grid.lat_offsets[nr - 1]);
    let mid_lon = 0.5 * (grid.lon_offsets[0] + grid.lon_offsets[nc - 1]);
    let key = |i: usize, j: usize| {
        let (a, b) = (grid.lat_offsets[i], grid.lon_offsets[j]);
        ((a - mid_lat).powi(2) + (b - mid_lon).powi(2), a, b)
    };
    let mut best: Option<(usize, usize)> = None;
    let (mut lat_lo, mut lat_hi, mut lon_lo, mut lon_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for i in 0..nr {
        for j in 0..nc {
            if grid.missing[i * nc + j] {
                continue;
            }
            let v = grid.at(i, j);
            if v >= PEAK_REGION_LEVEL * peak {
                lat_lo = lat_lo.min(grid.lat_offsets[i]);
                lat_hi = lat_hi.max(grid.lat_offsets[i]);
                lon_lo = lon_lo.min(grid.lon_offsets[j]);
                lon_hi = lon_hi.max(grid.lon_offsets[j]);
            }
            if v == peak && best.is_none_or(|(bi, bj)| key(i, j).partial_cmp(&key(bi, bj)) == Some(std::cmp::Ordering::Less)) {
                best = Some((i, j));
            }
        }
    }
    let (i, j) = best.expect("peak cell exists");
    Ok(DayEstimate {
        coord: grid.coord(i, j),
        lat_offset: grid.lat_offsets[i],
        lon_offset: grid.lon_offsets[j],
        peak,
        sources: grid.sources.clone(),
        ill_conditioned: lat_hi - lat_lo > PEAK_REGION_MAX_DEG || lon_hi - lon_lo > PEAK_REGION_MAX_DEG,
    })
}

/// Contiguous extent (degrees) of cells at or above `level × peak` along
/// the latitude column and longitude row through the argmax.
pub fn peak_extents(grid: &LikelihoodGrid, level: f64) -> Result<(f64, f64)> {
    let est = estimate_day(grid)?;
    let (nr, nc) = grid.dims();
    let i = grid.lat_offsets.iter().position(|&a| a == est.lat_offset).expect("argmax row");
    let j = grid.lon_offsets.iter().position(|&b| b == est.lon_offset).expect("argmax column");
    let cut = level * est.peak;
    let run = |len: usize, at: &dyn Fn(usize) -> f64, centre: usize, axis: &[f64]| {
        let mut lo = centre;
        while lo > 0 && at(lo - 1) >= cut {
            lo -= 1;
        }
        let mut hi = centre;
        while hi + 1 < len && at(hi + 1) >= cut {
            hi += 1;
        }
        axis[hi] - axis[lo]
    };
    let lat = run(nr, &|k| grid.at(k, j), i, &grid.lat_offsets);
    let lon = run(nc, &|k| grid.at(i, k), j, &grid.lon_offsets);
    Ok((lat, lon))
}

pub fn write_grid_csv<W: Write>(grid: &LikelihoodGrid, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lat_offset", "lon_offset", "value"])?;
    let (nr, nc) = grid.dims();
    for i in 0..nr {
        for j in 0..nc {
            let v = if grid.missing[i * nc + j] {
                String::new()
            } else {
                grid.at(i, j).to_string()
            };
            w.write_record([grid.lat_offsets[i].to_string(), grid.lon_offsets[j].to_string(), v])?;
        }
    }
    w.flush().map_err(|e| Error::io("<grid csv>", e))?;
    Ok(())
}

/// Binary PGM, north up, values scaled so the maximum is 255.
pub fn grid_to_pgm(grid: &LikelihoodGrid) -> Vec<u8> {
    let (nr, nc) = grid.dims();
    let max = grid.values.iter().copied().fold(0.0, f64::max);
    let mut out = format!("P5\n{nc} {nr}\n255\n").into_bytes();
    for i in (0..nr).rev() {
        for j in 0..nc {
            let v = if max > 0.0 { grid.at(i, j) / max } else { 0.0 };
            out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub coord: GeoCoord,
    pub night: NightWindow,
    /// Night length barely constrains latitude on this date.
    pub ill_conditioned: bool,
}

fn crossing(t0: f64, v0: f64, v1: f64, threshold: f64) -> f64 {
    t0 + 60.0 * (v0 - threshold) / (v0 - v1)
}

/// Sunset and sunrise as threshold crossings of log10 lux bounding the
/// longest dark run whose midpoint falls within [D 12:00, D+1 12:00] UTC.
pub fn threshold_night(light: &MinuteLogLight, date: NaiveDate, threshold: f64) -> Result<NightWindow> {
    let noon = midnight_utc(date) + 12.0 * SECONDS_PER_HOUR;
    let (lo, hi) = (noon, noon + 24.0 * SECONDS_PER_HOUR);
    let t = |j: usize| (light.start + 60 * j as i64) as f64 + 30.0;
    let v = &light.values;
    let mut best: Option<(f64, f64)> = None;
    let mut j = 1;
    while j < v.len() {
        if !(v[j] < threshold && v[j - 1] >= threshold) {
            j += 1;
            continue;
        }
        let start = j;
        while j < v.len() && v[j] < threshold {
            j += 1;
        }
        if j == v.len() {
            break;
        }
        let set = crossing(t(start - 1), v[start - 1], v[start], threshold);
        let rise = crossing(t(j - 1), v[j - 1], v[j], threshold);
        let mid = 0.5 * (set + rise);
        if (lo..hi).contains(&mid) && best.is_none_or(|(s, r)| rise - set > r - s) {
            best = Some((set, rise));
        }
    }
    let (set, rise) = best.ok_or_else(|| Error::Coverage(format!("no threshold-bounded night on {date}")))?;
    NightWindow::from_events(set, rise)
}

/// Threshold geolocation of one night: longitude from the night centre,
/// latitude from its length, each refined with the other once.
pub fn baseline_localize(light: &MinuteLogLight, date: NaiveDate, threshold: f64, hemisphere: Hemisphere) -> Result<BaselineEstimate> {
    let night = threshold_night(light, date, threshold)?;
    let lon0 = longitude_from_night_center(night.center, date, 0.0)?.value;
    let lat1 = latitude_from_night_length(night.length, date, hemisphere, lon0)?;
    let lon = longitude_from_night_center(night.center, date, lat1.value)?;
    let lat = latitude_from_night_length(night.length, date, hemisphere, lon.value)?;
    Ok(BaselineEstimate {
        coord: GeoCoord {
            lat: lat.value,
            lon: lon.value,
        },
        night,
        ill_conditioned: lat.ill_conditioned,
    })
}

pub struct CalibrationDay<'a> {
    pub light: &'a MinuteLogLight,
    pub date: NaiveDate,
    pub truth: GeoCoord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    pub threshold: f64,
    /// Mean great-circle error in degrees; failed days count as 180°.
    pub mean_error_deg: f64,
}

pub const THRESHOLD_MIN: f64 = -1.5;
pub const THRESHOLD_MAX: f64 = 3.5;
pub const THRESHOLD_STEP: f64 = 0.05;

/// Grid search of log10-lux thresholds minimizing the mean great-circle
/// error of the baseline on `days`.
pub fn calibrate_threshold(days: &[CalibrationDay]) -> Result<ThresholdCalibration> {
    if days.is_empty() {
        return Err(Error::input("threshold calibration needs training days"));
    }
    let n = ((THRESHOLD_MAX - THRESHOLD_MIN) / THRESHOLD_STEP).round() as usize + 1;
    let results: Vec<ThresholdCalibration> = (0..n)
        .into_par_iter()
        .map(|k| {
            let threshold = THRESHOLD_MIN + k as f64 * THRESHOLD_STEP;
            let total: f64 = days
                .iter()
                .map(|d| {
                    baseline_localize(d.light, d.date, threshold, Hemisphere::of(d.truth.lat))
                        .map_or(180.0, |e| great_circle_deg(e.coord, d.truth))
                })
                .sum();
            ThresholdCalibration {
                threshold,
                mean_error_deg: total / days.len() as f64,
            }
        })
        .collect();
    Ok(results
        .into_iter()
        .reduce(|a, b| if b.mean_error_deg < a.mean_error_deg { b } else { a })
        .expect("non-empty search"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: Vec<f64>, n: usize) -> LikelihoodGrid {
        let axis: Vec<f64> = (0..n).map(|i| i as f64).collect();
        LikelihoodGrid::new(GeoCoord { lat: 0.0, lon: 0.0 }, axis.clone(), axis, values).unwrap()
    }

    #[test]
    fn default_axis_has_21_nodes() {
        let a = GridSpec::default().axis().unwrap();
        assert_eq!(a.len(), 21);
        assert_eq!((a[0], a[10], a[20]), (-10.0, 0.0, 10.0));
        let bad = GridSpec {
            half_span: 0.0,
            ..GridSpec::default()
        };
        assert!(matches!(bad.axis(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn bilinear_corner_case() {
        let g = grid(vec![0.0, 1.0, 1.0, 2.0], 2);
        let f = interpolate_grid(&g, 0.5).unwrap();
        assert_eq!(f.dims(), (3, 3));
        assert_eq!(f.at(1, 1), 1.0);
    }

    #[test]
    fn missing_cells_take_nearest_value() {
        let mut g = grid(vec![1.0, 2.0, 3.0, 4.0, 0.0, 6.0, 7.0, 8.0, 9.0], 3);
        g.missing[4] = true;
        let f = interpolate_grid(&g, 1.0).unwrap();
        // Four neighbours at distance 1; the lowest (row, col) is (0, 1).
        assert_eq!(f.at(1, 1), 2.0);
    }

    #[test]
    fn ties_break_toward_centre() {
        let mut v = vec![0.1; 25];
        v[0] = 1.0;
        v[24] = 1.0;
        v[7] = 1.0;
        let g = grid(v, 5);
        let e = estimate_day(&g).unwrap();
        assert_eq!((e.lat_offset, e.lon_offset), (1.0, 2.0));
    }

    #[test]
    fn fused_zero_is_degenerate() {
        let a = grid(vec![0.0; 4], 2);
        let b = grid(vec![1.0; 4], 2);
        assert!(matches!(fuse(&a, &b), Err(Error::Degenerate(_))));
        assert!(matches!(estimate_day(&a), Err(Error::Degenerate(_))));
    }

    #[test]
    fn pgm_header_and_scaling() {
        let g = grid(vec![0.0, 1.0, 2.0, 4.0], 2);
        let p = grid_to_pgm(&g);
        assert!(p.starts_with(b"P5\n2 2\n255\n"));
        // North row first.
        assert_eq!(&p[p.len() - 4..], &[128, 255, 0, 64]);
    }
}
