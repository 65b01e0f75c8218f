//! Sensor logs: timestamped light and temperature series and their CSV form.

use std::io::Write;

use chrono::{DateTime, SecondsFormat};

use crate::astro::GeoCoord;
use crate::error::{Error, Result};

pub const SENSOR_CSV_HEADER: [&str; 3] = ["timestamp_utc", "light_lux", "temp_c"];

/// Strictly increasing timestamps (UTC seconds) with one value each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    pub times: Vec<i64>,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(times: Vec<i64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::input("series times and values differ in length"));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::input(format!("series not strictly increasing at index {}", i + 1)));
        }
        Ok(Self { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn span(&self) -> Option<(i64, i64)> {
        Some((*self.times.first()?, *self.times.last()?))
    }

    /// Index range of samples with `start <= t < end`.
    pub fn range(&self, start: i64, end: i64) -> std::ops::Range<usize> {
        let lo = self.times.partition_point(|&t| t < start);
        let hi = self.times.partition_point(|&t| t < end);
        lo..hi
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorLog {
    pub id: String,
    pub light: Series,
    pub temperature: Series,
    pub truth: Option<GeoCoord>,
}

impl SensorLog {
    pub fn new(id: impl Into<String>, light: Series, temperature: Series, truth: Option<GeoCoord>) -> Result<Self> {
        let id = id.into();
        if light.is_empty() || temperature.is_empty() {
            return Err(Error::input(format!("sensor {id}: empty light or temperature series")));
        }
        if let Some(v) = light.values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::input(format!("sensor {id}: invalid lux value {v}")));
        }
        if let Some(v) = temperature.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::input(format!("sensor {id}: invalid temperature {v}")));
        }
        Ok(Self {
            id,
            light,
            temperature,
            truth,
        })
    }
}

pub(crate) fn parse_timestamp(s: &str) -> std::result::Result<i64, String> {
    let dt = DateTime::parse_from_rfc3339(s.trim()).map_err(|e| format!("bad timestamp {s:?}: {e}"))?;
    if dt.timestamp_subsec_nanos() != 0 {
        return Err(format!("timestamp {s:?} has sub-second precision"));
    }
    Ok(dt.timestamp())
}

pub(crate) fn format_timestamp(t: i64) -> String {
    DateTime::from_timestamp(t, 0)
        .expect("timestamp in range")
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn parse_cell(cell: &str, line: u64, what: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell.parse().map_err(|_| Error::Parse {
        line,
        reason: format!("unparseable {what} {cell:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            reason: format!("non-finite {what}"),
        });
    }
    Ok(Some(v))
}

/// Parse the sensor CSV (`timestamp_utc,light_lux,temp_c`). Either value cell
/// may be empty, but not both.
pub fn parse_sensor_log(id: &str, bytes: &[u8]) -> Result<SensorLog> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().ne(SENSOR_CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            reason: format!("expected header {:?}, found {:?}", SENSOR_CSV_HEADER.join(","), header),
        });
    }

    let mut light = Series::default();
    let mut temperature = Series::default();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                reason: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let t = parse_timestamp(&record[0]).map_err(|reason| Error::Parse { line, reason })?;
        let lux = parse_cell(&record[1], line, "lux")?;
        let temp = parse_cell(&record[2], line, "temperature")?;
        if lux.is_none() && temp.is_none() {
            return Err(Error::Parse {
                line,
                reason: "row carries neither light nor temperature".into(),
            });
        }
        if let Some(lux) = lux {
            if lux < 0.0 {
                return Err(Error::Parse {
                    line,
                    reason: format!("negative lux {lux}"),
                });
            }
            push_monotone(&mut light, t, lux, line, "light")?;
        }
        if let Some(temp) = temp {
            push_monotone(&mut temperature, t, temp, line, "temperature")?;
        }
    }
    if light.is_empty() || temperature.is_empty() {
        return Err(Error::Parse {
            line: 0,
            reason: "log has no light or no temperature samples".into(),
        });
    }
    SensorLog::new(id, light, temperature, None)
}

fn push_monotone(series: &mut Series, t: i64, v: f64, line: u64, what: &str) -> Result<()> {
    if let Some(&last) = series.times.last() {
        if t <= last {
            return Err(Error::Parse {
                line,
                reason: format!("{what} timestamp {} not after previous {}", format_timestamp(t), format_timestamp(last)),
            });
        }
    }
    series.times.push(t);
    series.values.push(v);
    Ok(())
}

/// Write a log in the sensor CSV schema, merging both series on timestamp.
pub fn write_sensor_log<W: Write>(log: &SensorLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SENSOR_CSV_HEADER)?;
    let (mut i, mut j) = (0, 0);
    let (l, t) = (&log.light, &log.temperature);
    while i < l.len() || j < t.len() {
        let lt = l.times.get(i).copied().unwrap_or(i64::MAX);
        let tt = t.times.get(j).copied().unwrap_or(i64::MAX);
        let ts = lt.min(tt);
        let lux = if lt == ts {
            i += 1;
            l.values[i - 1].to_string()
        } else {
            String::new()
        };
        let temp = if tt == ts {
            j += 1;
            t.values[j - 1].to_string()
        } else {
            String::new()
        };
        w.write_record([format_timestamp(ts), lux, temp])?;
    }
    w.flush().map_err(|e| Error::io("<sensor csv>", e))?;
    Ok(())
}
