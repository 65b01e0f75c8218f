//! Synthetic world: stationary sensors logging clear-sky light under
//! correlated cloud attenuation plus a latitude-driven temperature field, and
//! a jittered grid of hourly weather stations observing the same field.

use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::astro::{midnight_utc, solar_elevation, solar_hour, GeoCoord, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::util::atomic_write;
use crate::sensor::{parse_sensor_log, write_sensor_log, SensorLog, Series};
use crate::weather::{great_circle_deg, parse_weather_csv, write_weather_csv, Region, WeatherStationSeries, WeatherStore};

/// Daylight plateau (lux).
pub const L_MAX: f64 = 100_000.0;
/// Darkness floor (lux).
pub const NIGHT_FLOOR: f64 = 0.1;
/// Twilight ramp bounds (degrees of solar elevation).
const RAMP_LOW_DEG: f64 = -9.0;
const RAMP_HIGH_DEG: f64 = 5.0;
/// Log-lux ramp midpoint sits on the rise/set elevation.
const RAMP_CENTER_DEG: f64 = -0.833;
const RAMP_WIDTH_DEG: f64 = 1.2;
/// Cloud attenuation correlation time (seconds).
pub const CLOUD_CORRELATION_S: f64 = 45.0 * 60.0;
/// Sensors must have a station within this many great-circle degrees.
pub const MAX_STATION_DISTANCE_DEG: f64 = 3.0;
const MICROCLIMATE_FEATURES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureParams {
    /// °C at `reference_lat` on the season start date.
    pub base: f64,
    pub reference_lat: f64,
    /// °C per degree latitude.
    pub lat_gradient: f64,
    /// °C per day after September 1.
    pub seasonal_slope: f64,
    /// Diurnal half-range, °C.
    pub amplitude: f64,
    /// Local solar hour of the daily maximum.
    pub peak_hour: f64,
    pub microclimate_sd: f64,
    pub microclimate_corr_deg: f64,
}

impl Default for TemperatureParams {
    fn default() -> Self {
        Self {
            base: 30.0,
            reference_lat: 25.0,
            lat_gradient: -0.7,
            seasonal_slope: -0.08,
            amplitude: 6.0,
            peak_hour: 15.0,
            microclimate_sd: 1.5,
            microclimate_corr_deg: 2.0,
        }
    }
}

impl TemperatureParams {
    /// Same temperature everywhere and always.
    pub fn uniform(value: f64) -> Self {
        Self {
            base: value,
            lat_gradient: 0.0,
            seasonal_slope: 0.0,
            amplitude: 0.0,
            microclimate_sd: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_sensors: usize,
    pub region: Region,
    /// First and last logged dates (inclusive). Nights run from `start` to the
    /// day before `end`.
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub n_stations: usize,
    /// Stations cover `region` expanded by this many degrees.
    pub station_margin_deg: f64,
    pub cloud_strength: f64,
    pub temp_noise_sd: f64,
    pub station_noise_sd: f64,
    pub light_interval_s: i64,
    pub temp_interval_s: i64,
    pub temperature: TemperatureParams,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sensors: 82,
            region: Region {
                lat_min: 25.0,
                lat_max: 49.0,
                lon_min: -125.0,
                lon_max: -67.0,
            },
            start: NaiveDate::from_ymd_opt(2018, 9, 1).expect("valid"),
            end: NaiveDate::from_ymd_opt(2018, 12, 19).expect("valid"),
            n_stations: 600,
            station_margin_deg: 0.0,
            cloud_strength: 0.5,
            temp_noise_sd: 0.5,
            station_noise_sd: 0.3,
            light_interval_s: 10,
            temp_interval_s: 15,
            temperature: TemperatureParams::default(),
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        if self.n_sensors == 0 || self.n_stations == 0 {
            return Err(Error::input("sensor and station counts must be positive"));
        }
        if self.end <= self.start {
            return Err(Error::input("date range must span at least two days"));
        }
        if !(0.0..=1.0).contains(&self.cloud_strength) {
            return Err(Error::input("cloud_strength must lie in [0, 1]"));
        }
        if !(self.temp_noise_sd >= 0.0 && self.station_noise_sd >= 0.0 && self.station_margin_deg >= 0.0) {
            return Err(Error::input("noise levels and margin must be non-negative"));
        }
        if self.light_interval_s <= 0 || self.light_interval_s > 60 || self.temp_interval_s <= 0 {
            return Err(Error::input("light interval must be in (0, 60] s, temperature interval positive"));
        }
        Ok(())
    }

    /// Dates whose night (sunset D → sunrise D+1) is fully logged.
    pub fn nights(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.start.iter_days().take_while(move |d| *d < self.end)
    }

    fn log_span(&self) -> (i64, i64) {
        let t0 = midnight_utc(self.start) as i64;
        let t1 = midnight_utc(self.end) as i64 + SECONDS_PER_DAY as i64;
        (t0, t1)
    }
}

/// Child seed for a named stream: first 8 bytes of SHA-256(seed_le ‖ name).
pub fn child_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn rng_for(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(seed, name))
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Clear-sky illuminance for a solar elevation (degrees).
pub fn clear_sky_from_elevation(elevation: f64) -> f64 {
    if elevation <= RAMP_LOW_DEG {
        return NIGHT_FLOOR;
    }
    if elevation >= RAMP_HIGH_DEG {
        return L_MAX;
    }
    let lo = logistic((RAMP_LOW_DEG - RAMP_CENTER_DEG) / RAMP_WIDTH_DEG);
    let hi = logistic((RAMP_HIGH_DEG - RAMP_CENTER_DEG) / RAMP_WIDTH_DEG);
    let q = (logistic((elevation - RAMP_CENTER_DEG) / RAMP_WIDTH_DEG) - lo) / (hi - lo);
    let (floor_log, max_log) = (NIGHT_FLOOR.log10(), L_MAX.log10());
    10f64.powf(floor_log + (max_log - floor_log) * q)
}

pub fn clear_sky_light(coord: GeoCoord, t: f64) -> f64 {
    clear_sky_from_elevation(solar_elevation(coord, t))
}

/// Light samples over `[t0, t1)` every `interval` seconds: clear sky above the
/// night floor scaled by exp(X), X a stationary AR(1) with the cloud
/// correlation time and standard deviation `cloud_strength`.
pub fn generate_light_curve(
    coord: GeoCoord,
    t0: i64,
    t1: i64,
    interval: i64,
    cloud_strength: f64,
    rng: &mut impl Rng,
) -> Series {
    let rho = (-(interval as f64) / CLOUD_CORRELATION_S).exp();
    let innovation = cloud_strength * (1.0 - rho * rho).sqrt();
    let mut x = cloud_strength * rng.sample::<f64, _>(StandardNormal);
    let n = ((t1 - t0 + interval - 1) / interval) as usize;
    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut t = t0;
    while t < t1 {
        let clear = clear_sky_light(coord, t as f64);
        values.push(if x == 0.0 {
            clear
        } else {
            NIGHT_FLOOR + (clear - NIGHT_FLOOR) * x.exp()
        });
        times.push(t);
        x = rho * x + innovation * rng.sample::<f64, _>(StandardNormal);
        t += interval;
    }
    Series { times, values }
}

/// Smooth Gaussian-covariance random field (random Fourier features).
#[derive(Debug, Clone)]
pub struct Microclimate {
    features: Vec<(f64, f64, f64)>,
    scale: f64,
}

impl Microclimate {
    pub fn new(sd: f64, corr_deg: f64, rng: &mut impl Rng) -> Self {
        let features = (0..MICROCLIMATE_FEATURES)
            .map(|_| {
                let wl: f64 = rng.sample(StandardNormal);
                let wo: f64 = rng.sample(StandardNormal);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (wl / corr_deg, wo / corr_deg, phase)
            })
            .collect();
        Self {
            features,
            scale: sd * (2.0 / MICROCLIMATE_FEATURES as f64).sqrt(),
        }
    }

    pub fn at(&self, c: GeoCoord) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        self.scale
            * self
                .features
                .iter()
                .map(|&(wl, wo, p)| (wl * c.lat + wo * c.lon + p).cos())
                .sum::<f64>()
    }
}

/// Deterministic temperature field of a world.
#[derive(Debug, Clone)]
pub struct TemperatureModel {
    pub params: TemperatureParams,
    pub microclimate: Microclimate,
}

impl TemperatureModel {
    pub fn new(params: TemperatureParams, seed: u64) -> Self {
        let mut rng = rng_for(seed, "microclimate");
        let microclimate = Microclimate::new(params.microclimate_sd, params.microclimate_corr_deg, &mut rng);
        Self { params, microclimate }
    }

    /// Field value without the microclimate term.
    pub fn large_scale(&self, coord: GeoCoord, t: f64) -> f64 {
        let p = &self.params;
        let year = crate::astro::date_of_instant(t).year();
        let sep1 = midnight_utc(NaiveDate::from_ymd_opt(year, 9, 1).expect("valid"));
        let days = (t - sep1) / SECONDS_PER_DAY;
        let hour = solar_hour(coord, t);
        p.base
            + p.lat_gradient * (coord.lat - p.reference_lat)
            + p.seasonal_slope * days
            + p.amplitude * (std::f64::consts::TAU * (hour - p.peak_hour) / 24.0).cos()
    }

    pub fn temperature(&self, coord: GeoCoord, t: f64) -> f64 {
        self.large_scale(coord, t) + self.microclimate.at(coord)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sensor_id: String,
    pub date: NaiveDate,
    pub true_lat: f64,
    pub true_lon: f64,
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub logs: Vec<SensorLog>,
    pub store: WeatherStore,
    pub manifest: Vec<ManifestRow>,
}

impl SynthWorld {
    pub fn log(&self, sensor_id: &str) -> Option<&SensorLog> {
        self.logs.iter().find(|l| l.id == sensor_id)
    }
}

fn station_layout(config: &SynthConfig, rng: &mut impl Rng) -> Vec<(String, GeoCoord)> {
    let area = config.region.expanded(config.station_margin_deg);
    let width = area.lon_max - area.lon_min;
    let height = area.lat_max - area.lat_min;
    let spacing = (width * height / config.n_stations as f64).sqrt();
    let nx = ((width / spacing).round() as usize).max(1);
    let ny = ((height / spacing).round() as usize).max(1);
    let (dx, dy) = (width / nx as f64, height / ny as f64);
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let lat = area.lat_min + (j as f64 + 0.5 + rng.random_range(-0.3..0.3)) * dy;
            let lon = area.lon_min + (i as f64 + 0.5 + rng.random_range(-0.3..0.3)) * dx;
            out.push((format!("W{:04}", out.len()), GeoCoord { lat, lon }));
        }
    }
    out
}

pub fn generate_world(config: &SynthConfig) -> Result<SynthWorld> {
    config.validate()?;
    let mut layout_rng = rng_for(config.seed, "layout");
    let r = &config.region;
    let sensors: Vec<(String, GeoCoord)> = (0..config.n_sensors)
        .map(|i| {
            let lat = layout_rng.random_range(r.lat_min..=r.lat_max);
            let lon = layout_rng.random_range(r.lon_min..=r.lon_max);
            (format!("S{i:03}"), GeoCoord { lat, lon })
        })
        .collect();
    let stations = station_layout(config, &mut layout_rng);

    for (id, c) in &sensors {
        let nearest = stations
            .iter()
            .map(|(_, s)| great_circle_deg(*c, *s))
            .fold(f64::INFINITY, f64::min);
        if nearest > MAX_STATION_DISTANCE_DEG {
            return Err(Error::input(format!(
                "sensor {id} is {nearest:.2}° from the nearest station; increase n_stations"
            )));
        }
    }

    let model = TemperatureModel::new(config.temperature, config.seed);
    let (t0, t1) = config.log_span();

    let mut logs = Vec::with_capacity(sensors.len());
    for (id, coord) in &sensors {
        let mut rng = rng_for(config.seed, &format!("sensor:{id}"));
        let light = generate_light_curve(*coord, t0, t1, config.light_interval_s, config.cloud_strength, &mut rng);
        let micro = model.microclimate.at(*coord);
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut t = t0;
        while t < t1 {
            let noise: f64 = rng.sample(StandardNormal);
            times.push(t);
            values.push(model.large_scale(*coord, t as f64) + micro + config.temp_noise_sd * noise);
            t += config.temp_interval_s;
        }
        logs.push(SensorLog::new(id.clone(), light, Series::new(times, values)?, Some(*coord))?);
    }

    let mut series = Vec::with_capacity(stations.len());
    for (id, coord) in &stations {
        let mut rng = rng_for(config.seed, &format!("station:{id}"));
        let micro = model.microclimate.at(*coord);
        let times: Vec<i64> = (t0..t1).step_by(3600).collect();
        let temps = times
            .iter()
            .map(|&t| {
                let noise: f64 = rng.sample(StandardNormal);
                model.large_scale(*coord, t as f64) + micro + config.station_noise_sd * noise
            })
            .collect();
        series.push(WeatherStationSeries::new(id.clone(), *coord, times, temps)?);
    }
    let store = WeatherStore::from_series(series)?;

    let manifest = sensors
        .iter()
        .flat_map(|(id, c)| {
            config.nights().map(move |date| ManifestRow {
                sensor_id: id.clone(),
                date,
                true_lat: c.lat,
                true_lon: c.lon,
            })
        })
        .collect();

    Ok(SynthWorld {
        config: config.clone(),
        logs,
        store,
        manifest,
    })
}

/// Write `sensors/<id>.csv`, `weather.csv`, `manifest.csv` and `config.json`,
/// each atomically.
pub fn write_world(world: &SynthWorld, dir: &Path) -> Result<()> {
    let sensors = dir.join("sensors");
    for log in &world.logs {
        let mut buf = Vec::new();
        write_sensor_log(log, &mut buf)?;
        atomic_write(&sensors.join(format!("{}.csv", log.id)), &buf)?;
    }
    let mut buf = Vec::new();
    write_weather_csv(&world.store, &mut buf)?;
    atomic_write(&dir.join("weather.csv"), &buf)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sensor_id", "date", "true_lat", "true_lon"])?;
    for row in &world.manifest {
        w.write_record([
            row.sensor_id.clone(),
            row.date.to_string(),
            row.true_lat.to_string(),
            row.true_lon.to_string(),
        ])?;
    }
    let buf = w.into_inner().map_err(|e| Error::io(dir.join("manifest.csv"), e.into_error()))?;
    atomic_write(&dir.join("manifest.csv"), &buf)?;
    atomic_write(&dir.join("config.json"), serde_json::to_string_pretty(&world.config)?.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in reader.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Load a world written by [`write_world`]; sensor truths come from the
/// manifest.
pub fn read_world(dir: &Path) -> Result<SynthWorld> {
    let cfg_path = dir.join("config.json");
    let config: SynthConfig =
        serde_json::from_slice(&fs::read(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?)?;
    let manifest = read_manifest(&dir.join("manifest.csv"))?;
    let weather_path = dir.join("weather.csv");
    let store = parse_weather_csv(&fs::read(&weather_path).map_err(|e| Error::io(&weather_path, e))?)?;
    let mut ids: Vec<&str> = manifest.iter().map(|r| r.sensor_id.as_str()).collect();
    ids.dedup();
    let mut logs = Vec::with_capacity(ids.len());
    for id in ids {
        let path = dir.join("sensors").join(format!("{id}.csv"));
        let mut log = parse_sensor_log(id, &fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
        let row = manifest.iter().find(|r| r.sensor_id == id).expect("id from manifest");
        log.truth = Some(GeoCoord::new(row.true_lat, row.true_lon)?);
        logs.push(log);
    }
    Ok(SynthWorld {
        config,
        logs,
        store,
        manifest,
    })
}
