//! Solar astronomy: declination, equation of time, rise/set instants, night
//! windows and the numeric inversions used by the threshold geolocator.
//!
//! All instants are UTC seconds since the Unix epoch (`f64`, sub-second values
//! allowed). Solar quantities follow the NOAA solar calculator equations,
//! evaluated in Julian centuries since J2000.0.

use std::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Zenith angle of the sun's centre at rise/set: 90° plus 34' refraction and
/// 16' solar semi-diameter.
pub const RISE_SET_ZENITH_DEG: f64 = 90.833;

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const SECONDS_PER_HOUR: f64 = 3_600.0;

/// Minimum |d(night length)/d(latitude)| (seconds per degree) below which a
/// latitude inversion is reported as ill-conditioned.
const MIN_LATITUDE_SENSITIVITY: f64 = 90.0;

/// Acceptable inversion residual.
const MAX_RESIDUAL_S: f64 = 30.0;

/// Latitude in degrees north, longitude in degrees east.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoord {
    pub lat: f64,
    pub lon: f64,
}

impl GeoCoord {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::input(format!("non-finite coordinate ({lat}, {lon})")));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::input(format!("latitude {lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::input(format!("longitude {lon} outside [-180, 180]")));
        }
        Ok(Self { lat, lon })
    }

    /// Displace by the given degree offsets. Longitude wraps into [-180, 180],
    /// latitude is clamped to the poles.
    pub fn offset(&self, dlat: f64, dlon: f64) -> Self {
        let lat = (self.lat + dlat).clamp(-90.0, 90.0);
        let mut lon = self.lon + dlon;
        if lon > 180.0 {
            lon -= 360.0;
        } else if lon < -180.0 {
            lon += 360.0;
        }
        Self { lat, lon }
    }
}

impl fmt::Display for GeoCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4})", self.lat, self.lon)
    }
}

/// Why a rise/set event does not exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoEvent {
    PolarDay,
    PolarNight,
}

impl fmt::Display for NoEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoEvent::PolarDay => f.write_str("sun never sets (polar day)"),
            NoEvent::PolarNight => f.write_str("sun never rises (polar night)"),
        }
    }
}

/// Night following a given date: sunset of day D to sunrise of day D+1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NightWindow {
    /// UTC seconds since epoch.
    pub center: f64,
    /// Seconds.
    pub length: f64,
}

impl NightWindow {
    pub fn sunset(&self) -> f64 {
        self.center - 0.5 * self.length
    }

    pub fn sunrise(&self) -> f64 {
        self.center + 0.5 * self.length
    }

    pub fn from_events(sunset: f64, sunrise: f64) -> Result<Self> {
        let length = sunrise - sunset;
        if !(length > 0.0 && length < SECONDS_PER_DAY) {
            return Err(Error::input(format!("night length {length} s outside (0, 24 h)")));
        }
        Ok(Self {
            center: 0.5 * (sunset + sunrise),
            length,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hemisphere {
    North,
    South,
}

impl Hemisphere {
    pub fn of(lat: f64) -> Self {
        if lat < 0.0 {
            Hemisphere::South
        } else {
            Hemisphere::North
        }
    }

    fn sign(self) -> f64 {
        match self {
            Hemisphere::North => 1.0,
            Hemisphere::South => -1.0,
        }
    }
}

/// Result of a numeric inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub value: f64,
    /// |model(value) − target| in seconds.
    pub residual: f64,
    pub ill_conditioned: bool,
}

pub fn day_of_year(date: NaiveDate) -> u32 {
    date.ordinal()
}

/// UTC midnight starting `date`, as seconds since epoch.
pub fn midnight_utc(date: NaiveDate) -> f64 {
    date.and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc()
        .timestamp() as f64
}

pub fn date_of_instant(t: f64) -> NaiveDate {
    chrono::DateTime::from_timestamp(t.floor() as i64, 0)
        .expect("instant within chrono range")
        .date_naive()
}

fn julian_century(t: f64) -> f64 {
    let jd = t / SECONDS_PER_DAY + 2_440_587.5;
    (jd - 2_451_545.0) / 36_525.0
}

/// Declination (radians) and equation of time (minutes) at a UTC instant.
pub fn solar_terms(t: f64) -> (f64, f64) {
    let jc = julian_century(t);
    let l0 = (280.466_46 + jc * (36_000.769_83 + jc * 0.000_303_2)).rem_euclid(360.0);
    let m = 357.529_11 + jc * (35_999.050_29 - 0.000_153_7 * jc);
    let e = 0.016_708_634 - jc * (0.000_042_037 + 0.000_000_126_7 * jc);
    let m_rad = m.to_radians();
    let c = m_rad.sin() * (1.914_602 - jc * (0.004_817 + 0.000_014 * jc))
        + (2.0 * m_rad).sin() * (0.019_993 - 0.000_101 * jc)
        + (3.0 * m_rad).sin() * 0.000_289;
    let omega = (125.04 - 1_934.136 * jc).to_radians();
    let apparent_long = (l0 + c - 0.005_69 - 0.004_78 * omega.sin()).to_radians();
    let seconds = 21.448 - jc * (46.815 + jc * (0.000_59 - jc * 0.001_813));
    let mean_obliquity = 23.0 + (26.0 + seconds / 60.0) / 60.0;
    let obliquity = (mean_obliquity + 0.002_56 * omega.cos()).to_radians();

    let declination = (obliquity.sin() * apparent_long.sin()).asin();

    let y = (obliquity / 2.0).tan().powi(2);
    let l0_rad = l0.to_radians();
    let eot = y * (2.0 * l0_rad).sin() - 2.0 * e * m_rad.sin()
        + 4.0 * e * y * m_rad.sin() * (2.0 * l0_rad).cos()
        - 0.5 * y * y * (4.0 * l0_rad).sin()
        - 1.25 * e * e * (2.0 * m_rad).sin();
    (declination, 4.0 * eot.to_degrees())
}

/// Noon UTC of `day_of_year` in a fixed non-leap reference year (2018).
fn reference_instant(day_of_year: u32) -> Result<f64> {
    if !(1..=366).contains(&day_of_year) {
        return Err(Error::input(format!("day of year {day_of_year} outside [1, 366]")));
    }
    let jan1 = NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date");
    Ok(midnight_utc(jan1) + (day_of_year as f64 - 1.0) * SECONDS_PER_DAY + 0.5 * SECONDS_PER_DAY)
}

pub fn solar_declination(day_of_year: u32) -> Result<f64> {
    Ok(solar_terms(reference_instant(day_of_year)?).0)
}

/// Apparent minus mean solar time, in minutes.
pub fn equation_of_time(day_of_year: u32) -> Result<f64> {
    Ok(solar_terms(reference_instant(day_of_year)?).1)
}

/// Geometric solar elevation (degrees, no refraction) at a UTC instant.
pub fn solar_elevation(coord: GeoCoord, t: f64) -> f64 {
    let (decl, eot) = solar_terms(t);
    let minutes_utc = (t.rem_euclid(SECONDS_PER_DAY)) / 60.0;
    let true_solar = (minutes_utc + eot + 4.0 * coord.lon).rem_euclid(1440.0);
    let hour_angle = (true_solar / 4.0 - 180.0).to_radians();
    let lat = coord.lat.to_radians();
    let cos_zenith = lat.sin() * decl.sin() + lat.cos() * decl.cos() * hour_angle.cos();
    90.0 - cos_zenith.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Local apparent solar time in hours [0, 24).
pub fn solar_hour(coord: GeoCoord, t: f64) -> f64 {
    let (_, eot) = solar_terms(t);
    let minutes_utc = (t.rem_euclid(SECONDS_PER_DAY)) / 60.0;
    (minutes_utc + eot + 4.0 * coord.lon).rem_euclid(1440.0) / 60.0
}

#[derive(Clone, Copy)]
enum Event {
    Rise,
    Set,
}

fn event_instant(coord: GeoCoord, date: NaiveDate, event: Event) -> Result<f64, NoEvent> {
    let day_start = midnight_utc(date);
    let lat = coord.lat.to_radians();
    let cos_zenith = RISE_SET_ZENITH_DEG.to_radians().cos();
    // Start from local solar noon, then refine with the solar terms at the
    // event itself.
    let mut t = day_start + (720.0 - 4.0 * coord.lon) * 60.0;
    for _ in 0..4 {
        let (decl, eot) = solar_terms(t);
        let cos_ha = cos_zenith / (lat.cos() * decl.cos()) - lat.tan() * decl.tan();
        if cos_ha > 1.0 {
            return Err(NoEvent::PolarNight);
        }
        if cos_ha < -1.0 {
            return Err(NoEvent::PolarDay);
        }
        let ha_deg = cos_ha.acos().to_degrees();
        let noon_min = 720.0 - 4.0 * coord.lon - eot;
        let minutes = match event {
            Event::Rise => noon_min - 4.0 * ha_deg,
            Event::Set => noon_min + 4.0 * ha_deg,
        };
        t = day_start + minutes * 60.0;
    }
    Ok(t)
}

/// Sunrise and sunset bracketing local solar noon of `date` (UTC instants).
pub fn sunrise_sunset(coord: GeoCoord, date: NaiveDate) -> Result<(f64, f64), NoEvent> {
    let rise = event_instant(coord, date, Event::Rise)?;
    let set = event_instant(coord, date, Event::Set)?;
    Ok((rise, set))
}

pub fn night_window(coord: GeoCoord, date: NaiveDate) -> Result<NightWindow, NoEvent> {
    let next = date.succ_opt().expect("date within chrono range");
    let sunset = event_instant(coord, date, Event::Set)?;
    let sunrise = event_instant(coord, next, Event::Rise)?;
    Ok(NightWindow {
        center: 0.5 * (sunset + sunrise),
        length: sunrise - sunset,
    })
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut f_lo = f(lo);
    if f_lo == 0.0 {
        return lo;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Latitude in the hinted hemisphere whose night (at `reference_lon`) has the
/// given length. Flagged ill-conditioned where night length barely depends on
/// latitude (around the equinoxes) or when no exact solution exists.
pub fn latitude_from_night_length(
    length: f64,
    date: NaiveDate,
    hemisphere: Hemisphere,
    reference_lon: f64,
) -> Result<Inversion> {
    if !(length > 0.0 && length < SECONDS_PER_DAY) {
        return Err(Error::input(format!("night length {length} s outside (0, 24 h)")));
    }
    let sign = hemisphere.sign();
    let model = |lat_abs: f64| -> Option<f64> {
        let coord = GeoCoord {
            lat: sign * lat_abs,
            lon: reference_lon,
        };
        night_window(coord, date).ok().map(|w| w.length - length)
    };

    const STEP: f64 = 0.5;
    const MAX_ABS_LAT: f64 = 65.0;
    let samples: Vec<(f64, Option<f64>)> = (0..=(MAX_ABS_LAT / STEP) as usize)
        .map(|i| {
            let lat = i as f64 * STEP;
            (lat, model(lat))
        })
        .collect();

    // Prefer an exact crossing; among several, the one with the steepest
    // bracket is the best conditioned.
    let mut best_bracket: Option<(f64, f64, f64)> = None;
    for pair in samples.windows(2) {
        if let ((a, Some(fa)), (b, Some(fb))) = (pair[0], pair[1]) {
            if fa == 0.0 || (fa < 0.0) != (fb < 0.0) {
                let slope = (fb - fa).abs();
                if best_bracket.is_none_or(|(_, _, s)| slope > s) {
                    best_bracket = Some((a, b, slope));
                }
            }
        }
    }

    let lat_abs = match best_bracket {
        Some((a, b, _)) => bisect(a, b, |x| model(x).unwrap_or(f64::NAN)),
        None => samples
            .iter()
            .filter_map(|&(lat, r)| r.map(|r| (lat, r.abs())))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .map(|(lat, _)| lat)
            .ok_or_else(|| Error::Numerical("no latitude yields a night on this date".into()))?,
    };

    let residual = model(lat_abs).map_or(f64::INFINITY, f64::abs);
    let h = 0.5;
    let sensitivity = match (model((lat_abs - h).max(0.0)), model(lat_abs + h)) {
        (Some(lo), Some(hi)) => (hi - lo).abs() / (lat_abs + h - (lat_abs - h).max(0.0)),
        _ => 0.0,
    };
    Ok(Inversion {
        value: sign * lat_abs,
        residual,
        ill_conditioned: residual > MAX_RESIDUAL_S || sensitivity < MIN_LATITUDE_SENSITIVITY,
    })
}

/// Longitude whose night center at `lat` on `date` equals `center`. Night
/// center moves one hour earlier per 15° east.
pub fn longitude_from_night_center(center: f64, date: NaiveDate, lat: f64) -> Result<Inversion> {
    if !center.is_finite() || !(-90.0..=90.0).contains(&lat) {
        return Err(Error::input("invalid night center or latitude"));
    }
    let model = |lon: f64| -> f64 {
        night_window(GeoCoord { lat, lon }, date)
            .map(|w| w.center - center)
            .unwrap_or(f64::NAN)
    };
    let (west, east) = (model(-180.0), model(180.0));
    if west.is_nan() || east.is_nan() {
        return Err(Error::NoEvent(NoEvent::PolarNight));
    }
    let lon = if west <= 0.0 {
        -180.0
    } else if east >= 0.0 {
        180.0
    } else {
        bisect(-180.0, 180.0, model)
    };
    let residual = model(lon).abs();
    Ok(Inversion {
        value: lon,
        residual,
        ill_conditioned: residual > MAX_RESIDUAL_S,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn declination_at_equinox_and_solstice() {
        let mar20 = day_of_year(date(2018, 3, 20));
        assert!(solar_declination(mar20).unwrap().abs() < 0.01);
        let jun21 = day_of_year(date(2018, 6, 21));
        assert!((solar_declination(jun21).unwrap() - 0.4091).abs() < 0.001);
    }

    #[test]
    fn declination_bounded_all_year() {
        for d in 1..=366 {
            let v = solar_declination(d).unwrap();
            assert!(v.abs() <= 0.4095, "day {d}: {v}");
            let e = equation_of_time(d).unwrap();
            assert!((-15.0..=17.0).contains(&e), "day {d}: {e}");
        }
    }

    #[test]
    fn out_of_range_day_rejected() {
        assert!(solar_declination(0).is_err());
        assert!(equation_of_time(367).is_err());
    }

    #[test]
    fn equation_of_time_extremes() {
        let sep1 = day_of_year(date(2018, 9, 1));
        assert!(equation_of_time(sep1).unwrap().abs() < 1.5);
        assert!((equation_of_time(307).unwrap() - 16.4).abs() < 0.5);
        assert!((equation_of_time(42).unwrap() + 14.2).abs() < 0.5);
    }

    #[test]
    fn equatorial_equinox_day_is_twelve_hours() {
        let (rise, set) = sunrise_sunset(GeoCoord { lat: 0.0, lon: 0.0 }, date(2018, 3, 20)).unwrap();
        let day = (set - rise) / 60.0;
        assert!((day - 720.0).abs() < 10.0, "{day}");
    }

    #[test]
    fn polar_night_has_no_event() {
        let r = sunrise_sunset(GeoCoord { lat: 80.0, lon: 0.0 }, date(2018, 12, 4));
        assert_eq!(r, Err(NoEvent::PolarNight));
        let r = sunrise_sunset(GeoCoord { lat: 80.0, lon: 0.0 }, date(2018, 6, 21));
        assert_eq!(r, Err(NoEvent::PolarDay));
    }

    #[test]
    fn winter_night_longer_further_north() {
        let d = date(2018, 12, 4);
        let south = night_window(GeoCoord { lat: 25.0, lon: -100.0 }, d).unwrap();
        let north = night_window(GeoCoord { lat: 45.0, lon: -100.0 }, d).unwrap();
        assert!(south.length < north.length);
    }

    #[test]
    fn equinox_nights_are_twelve_hours_everywhere() {
        let d = date(2018, 9, 22);
        for lat in [-60.0, -30.0, 0.0, 20.0, 45.0, 60.0] {
            let w = night_window(GeoCoord { lat, lon: 10.0 }, d).unwrap();
            assert!((w.length / 60.0 - 720.0).abs() < 15.0, "lat {lat}: {}", w.length / 60.0);
        }
    }

    #[test]
    fn night_center_lies_between_sunset_and_next_sunrise() {
        let c = GeoCoord { lat: 40.0, lon: -85.0 };
        let d = date(2018, 10, 15);
        let w = night_window(c, d).unwrap();
        let (_, set) = sunrise_sunset(c, d).unwrap();
        let (rise, _) = sunrise_sunset(c, d.succ_opt().unwrap()).unwrap();
        assert!(set < w.center && w.center < rise);
        assert!((w.length - (rise - set)).abs() < 1e-6);
    }

    #[test]
    fn latitude_inversion_round_trip() {
        let d = date(2018, 12, 4);
        let w = night_window(GeoCoord { lat: 40.0, lon: -100.0 }, d).unwrap();
        let inv = latitude_from_night_length(w.length, d, Hemisphere::North, -100.0).unwrap();
        assert!((inv.value - 40.0).abs() < 0.2, "{inv:?}");
        assert!(!inv.ill_conditioned);
        assert!(inv.residual < 30.0);
    }

    #[test]
    fn equinox_inversion_is_ill_conditioned() {
        let inv = latitude_from_night_length(12.0 * 3600.0, date(2018, 9, 22), Hemisphere::North, 0.0)
            .unwrap();
        assert!(inv.ill_conditioned);
    }

    #[test]
    fn longitude_inversion_and_rotation_rate() {
        let d = date(2018, 10, 15);
        let w = night_window(GeoCoord { lat: 40.0, lon: -85.0 }, d).unwrap();
        let inv = longitude_from_night_center(w.center, d, 40.0).unwrap();
        assert!((inv.value + 85.0).abs() < 0.2);
        let shifted = longitude_from_night_center(w.center + 3600.0, d, 40.0).unwrap();
        assert!((shifted.value - inv.value + 15.0).abs() < 0.3, "{shifted:?}");
    }

    #[test]
    fn coord_validation() {
        assert!(GeoCoord::new(91.0, 0.0).is_err());
        assert!(GeoCoord::new(0.0, f64::NAN).is_err());
        assert!(GeoCoord::new(-90.0, 180.0).is_ok());
        let wrapped = GeoCoord { lat: 10.0, lon: 175.0 }.offset(0.0, 10.0);
        assert!((wrapped.lon + 175.0).abs() < 1e-12);
    }
}
