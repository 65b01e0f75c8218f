//! Weather-station store: hourly station temperatures, nearest-station lookup,
//! night-window extraction and the pluggable remote fetch contract.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::astro::{midnight_utc, GeoCoord, NightWindow, SECONDS_PER_HOUR};
use crate::error::{Error, Result};
use crate::sensor::{format_timestamp, parse_timestamp};

pub const EARTH_RADIUS_KM: f64 = 6371.0088;
pub const WEATHER_CSV_HEADER: [&str; 5] = ["station_id", "lat", "lon", "timestamp_utc", "temp_c"];
pub const WEATHER_KEY_ENV: &str = "LUMITRACK_WEATHER_KEY";

const HOUR: i64 = 3600;
/// Largest run of missing hours bridged by interpolation.
const MAX_GAP_S: i64 = 2 * HOUR;

pub fn haversine_km(a: GeoCoord, b: GeoCoord) -> f64 {
    let (la, lb) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lb - la;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + la.cos() * lb.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Great-circle separation in degrees of arc.
pub fn great_circle_deg(a: GeoCoord, b: GeoCoord) -> f64 {
    (haversine_km(a, b) / EARTH_RADIUS_KM).to_degrees()
}

fn unit_vector(c: GeoCoord) -> [f64; 3] {
    let (lat, lon) = (c.lat.to_radians(), c.lon.to_radians());
    [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
}

/// Axis-aligned lat/lon box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Region {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        let r = Self {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.lat_min, self.lat_max, self.lon_min, self.lon_max]
            .iter()
            .all(|v| v.is_finite())
            && -90.0 <= self.lat_min
            && self.lat_min < self.lat_max
            && self.lat_max <= 90.0
            && -180.0 <= self.lon_min
            && self.lon_min < self.lon_max
            && self.lon_max <= 180.0;
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!("degenerate or out-of-range region {self:?}")))
        }
    }

    pub fn contains(&self, c: GeoCoord) -> bool {
        (self.lat_min..=self.lat_max).contains(&c.lat) && (self.lon_min..=self.lon_max).contains(&c.lon)
    }

    pub fn expanded(&self, margin: f64) -> Self {
        Self {
            lat_min: (self.lat_min - margin).max(-90.0),
            lat_max: (self.lat_max + margin).min(90.0),
            lon_min: (self.lon_min - margin).max(-180.0),
            lon_max: (self.lon_max + margin).min(180.0),
        }
    }
}

/// Hourly temperatures of one station. Timestamps are whole hours, strictly
/// increasing; missing hours are simply absent.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherStationSeries {
    pub station_id: String,
    pub location: GeoCoord,
    pub times: Vec<i64>,
    pub temps: Vec<f64>,
}

impl WeatherStationSeries {
    pub fn new(station_id: impl Into<String>, location: GeoCoord, times: Vec<i64>, temps: Vec<f64>) -> Result<Self> {
        let station_id = station_id.into();
        GeoCoord::new(location.lat, location.lon)?;
        if times.len() != temps.len() {
            return Err(Error::input(format!("station {station_id}: times/temps length mismatch")));
        }
        if let Some(t) = times.iter().find(|t| t.rem_euclid(HOUR) != 0) {
            return Err(Error::input(format!("station {station_id}: {} is not on the hour", format_timestamp(*t))));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::input(format!("station {station_id}: timestamps not increasing")));
        }
        if temps.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("station {station_id}: non-finite temperature")));
        }
        Ok(Self {
            station_id,
            location,
            times,
            temps,
        })
    }

    /// Temperature at `t`, linearly interpolated across gaps of at most two
    /// missing hours.
    pub fn temperature_at(&self, t: f64) -> Result<f64> {
        let idx = self.times.partition_point(|&x| (x as f64) <= t);
        if idx > 0 && self.times[idx - 1] as f64 == t {
            return Ok(self.temps[idx - 1]);
        }
        if idx == 0 || idx == self.times.len() {
            return Err(Error::Coverage(format!(
                "station {} has no data around {}",
                self.station_id,
                format_timestamp(t.floor() as i64)
            )));
        }
        let (ta, tb) = (self.times[idx - 1], self.times[idx]);
        if tb - ta - HOUR > MAX_GAP_S {
            return Err(Error::MissingData(format!(
                "station {}: {} h gap after {}",
                self.station_id,
                (tb - ta - HOUR) / HOUR,
                format_timestamp(ta)
            )));
        }
        let w = (t - ta as f64) / (tb - ta) as f64;
        Ok(self.temps[idx - 1] * (1.0 - w) + self.temps[idx] * w)
    }
}

/// Stations indexed by id, with a nearest-neighbour lookup on the sphere.
#[derive(Debug, Clone, Default)]
pub struct WeatherStore {
    stations: BTreeMap<String, WeatherStationSeries>,
    // (id, unit vector) in id order; rebuilt on every insert.
    index: Vec<(String, [f64; 3])>,
}

impl WeatherStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_series(series: impl IntoIterator<Item = WeatherStationSeries>) -> Result<Self> {
        let mut store = Self::new();
        for s in series {
            if store.stations.contains_key(&s.station_id) {
                return Err(Error::input(format!("duplicate station id {}", s.station_id)));
            }
            store.stations.insert(s.station_id.clone(), s);
        }
        store.reindex();
        Ok(store)
    }

    fn reindex(&mut self) {
        self.index = self
            .stations
            .values()
            .map(|s| (s.station_id.clone(), unit_vector(s.location)))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&WeatherStationSeries> {
        self.stations.get(id)
    }

    pub fn stations(&self) -> impl Iterator<Item = &WeatherStationSeries> {
        self.stations.values()
    }

    /// Station with the smallest great-circle distance; ties go to the
    /// lexicographically smallest id.
    pub fn nearest_station(&self, coord: GeoCoord) -> Result<&WeatherStationSeries> {
        let q = unit_vector(coord);
        let mut best: Option<(&str, f64)> = None;
        for (id, v) in &self.index {
            let dot = q[0] * v[0] + q[1] * v[1] + q[2] * v[2];
            if best.is_none_or(|(_, d)| dot > d) {
                best = Some((id, dot));
            }
        }
        let (id, _) = best.ok_or_else(|| Error::input("nearest station requested from an empty store"))?;
        Ok(&self.stations[id])
    }

    /// Hourly samples at `center + k·1h` for k in `-n..=n`, n = half_span / 1h.
    pub fn station_night_series(&self, station_id: &str, window: &NightWindow, half_span: i64) -> Result<Vec<f64>> {
        let station = self
            .get(station_id)
            .ok_or_else(|| Error::input(format!("unknown station {station_id}")))?;
        if half_span <= 0 || half_span % HOUR != 0 {
            return Err(Error::input(format!("half span {half_span} s is not a positive whole number of hours")));
        }
        let n = half_span / HOUR;
        (-n..=n)
            .map(|k| station.temperature_at(window.center + k as f64 * SECONDS_PER_HOUR))
            .collect()
    }

    /// Merge rows into the store. The first occurrence of a (station, hour)
    /// wins, including against data already stored.
    pub fn merge_rows(&mut self, rows: impl IntoIterator<Item = WeatherRow>) -> Result<usize> {
        let mut staged: BTreeMap<String, (GeoCoord, Vec<(i64, f64)>)> = BTreeMap::new();
        let mut seen: HashSet<(String, i64)> = HashSet::new();
        for s in self.stations.values() {
            for &t in &s.times {
                seen.insert((s.station_id.clone(), t));
            }
        }
        let mut added = 0;
        for row in rows {
            let location = self.stations.get(&row.station_id).map(|s| s.location).unwrap_or(row.location);
            let entry = staged
                .entry(row.station_id.clone())
                .or_insert_with(|| (location, Vec::new()));
            if entry.0 != row.location {
                return Err(Error::input(format!("station {} reported at two locations", row.station_id)));
            }
            if seen.insert((row.station_id, row.time)) {
                entry.1.push((row.time, row.temp));
                added += 1;
            }
        }
        for (id, (location, mut samples)) in staged {
            if let Some(existing) = self.stations.get(&id) {
                samples.extend(existing.times.iter().copied().zip(existing.temps.iter().copied()));
            }
            samples.sort_by_key(|s| s.0);
            let (times, temps) = samples.into_iter().unzip();
            let series = WeatherStationSeries::new(id.clone(), location, times, temps)?;
            self.stations.insert(id, series);
        }
        self.reindex();
        Ok(added)
    }
}

/// One line of the weather CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherRow {
    pub station_id: String,
    pub location: GeoCoord,
    pub time: i64,
    pub temp: f64,
}

pub fn parse_weather_rows(bytes: &[u8]) -> Result<Vec<WeatherRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let header = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().ne(WEATHER_CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            reason: format!("expected header {:?}", WEATHER_CSV_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| Error::Parse { line, reason };
        if record.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", record.len())));
        }
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("bad {} {:?}", WEATHER_CSV_HEADER[i], &record[i])))
        };
        let location = GeoCoord::new(num(1)?, num(2)?).map_err(|e| bad(e.to_string()))?;
        let time = parse_timestamp(&record[3]).map_err(&bad)?;
        if time.rem_euclid(HOUR) != 0 {
            return Err(bad(format!("{} is not on the hour", &record[3])));
        }
        rows.push(WeatherRow {
            station_id: record[0].to_string(),
            location,
            time,
            temp: num(4)?,
        });
    }
    Ok(rows)
}

pub fn parse_weather_csv(bytes: &[u8]) -> Result<WeatherStore> {
    let mut store = WeatherStore::new();
    store.merge_rows(parse_weather_rows(bytes)?)?;
    Ok(store)
}

pub fn write_weather_csv<W: Write>(store: &WeatherStore, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(WEATHER_CSV_HEADER)?;
    for s in store.stations() {
        let (lat, lon) = (s.location.lat.to_string(), s.location.lon.to_string());
        for (&t, &v) in s.times.iter().zip(&s.temps) {
            w.write_record([s.station_id.as_str(), &lat, &lon, &format_timestamp(t), &v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<weather csv>", e))?;
    Ok(())
}

/// Credential for a remote weather service, read from
/// [`WEATHER_KEY_ENV`]. Its `Debug`/`Display` never reveal the value.
#[derive(Clone)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn from_env() -> Option<Self> {
        std::env::var(WEATHER_KEY_ENV).ok().filter(|k| !k.is_empty()).map(ApiKey)
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

impl fmt::Display for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<redacted>")
    }
}

/// Source of station rows for a region and an inclusive date range.
/// Implementations report connectivity problems as [`Error::Transport`] so
/// callers can retry, and malformed payloads as parse/input errors.
pub trait WeatherFetcher {
    fn fetch(&self, region: &Region, start: NaiveDate, end: NaiveDate) -> Result<Vec<WeatherRow>>;
}

/// Reads every `*.csv` file in a directory (in file-name order).
#[derive(Debug, Clone)]
pub struct FileFetcher {
    dir: PathBuf,
}

impl FileFetcher {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        Self {
            dir: dir.as_ref().to_path_buf(),
        }
    }
}

impl WeatherFetcher for FileFetcher {
    fn fetch(&self, region: &Region, start: NaiveDate, end: NaiveDate) -> Result<Vec<WeatherRow>> {
        let entries = std::fs::read_dir(&self.dir).map_err(|e| Error::Transport(format!("{}: {e}", self.dir.display())))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        let t0 = midnight_utc(start) as i64;
        let t1 = midnight_utc(end.succ_opt().unwrap_or(end)) as i64;
        let mut rows = Vec::new();
        for path in files {
            let bytes = std::fs::read(&path).map_err(|e| Error::Transport(format!("{}: {e}", path.display())))?;
            rows.extend(
                parse_weather_rows(&bytes)?
                    .into_iter()
                    .filter(|r| region.contains(r.location) && r.time >= t0 && r.time < t1),
            );
        }
        Ok(rows)
    }
}

/// Fetch, validate and merge station data; returns the number of new hourly
/// samples.
pub fn fetch_remote_weather(
    store: &mut WeatherStore,
    fetcher: &dyn WeatherFetcher,
    region: &Region,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<usize> {
    region.validate()?;
    if end < start {
        return Err(Error::input("empty date range"));
    }
    let rows = fetcher.fetch(region, start, end)?;
    store.merge_rows(rows)
}
