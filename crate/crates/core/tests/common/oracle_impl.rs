//! Independent solar reference used only by tests: the Astronomical Almanac
//! low-precision sun (mean longitude / anomaly in days since J2000), hour angle
//! via Greenwich mean sidereal time, and rise/set found by bisection on
//! elevation rather than by a closed-form hour angle.

#![allow(dead_code)]

use chrono::NaiveDate;

pub fn midnight(date: NaiveDate) -> f64 {
    date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp() as f64
}

fn days_since_j2000(t: f64) -> f64 {
    t / 86_400.0 + 2_440_587.5 - 2_451_545.0
}

/// (right ascension rad, declination rad, equation of time minutes)
pub fn sun(t: f64) -> (f64, f64, f64) {
    let n = days_since_j2000(t);
    let l = (280.460 + 0.985_647_4 * n).rem_euclid(360.0);
    let g = (357.528 + 0.985_600_3 * n).rem_euclid(360.0).to_radians();
    let lambda = (l + 1.915 * g.sin() + 0.020 * (2.0 * g).sin()).to_radians();
    let eps = (23.439 - 0.000_000_4 * n).to_radians();
    let ra = (eps.cos() * lambda.sin()).atan2(lambda.cos());
    let dec = (eps.sin() * lambda.sin()).asin();
    let mut diff = l - ra.to_degrees().rem_euclid(360.0);
    if diff > 180.0 {
        diff -= 360.0;
    } else if diff < -180.0 {
        diff += 360.0;
    }
    (ra, dec, 4.0 * diff)
}

pub fn elevation_deg(lat: f64, lon: f64, t: f64) -> f64 {
    let n = days_since_j2000(t);
    let (ra, dec, _) = sun(t);
    let gmst_h = (18.697_374_558 + 24.065_709_824_419_08 * n).rem_euclid(24.0);
    let lst = (gmst_h * 15.0 + lon).to_radians();
    let ha = lst - ra;
    let phi = lat.to_radians();
    let s = phi.sin() * dec.sin() + phi.cos() * dec.cos() * ha.cos();
    s.clamp(-1.0, 1.0).asin().to_degrees()
}

fn bisect_event(lat: f64, lon: f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let f = |t: f64| elevation_deg(lat, lon, t) + 0.833;
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo.signum() == fhi.signum() {
        return None;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// (sunrise, sunset) around the local solar noon of `date`.
pub fn rise_set(lat: f64, lon: f64, date: NaiveDate) -> Option<(f64, f64)> {
    let noon = midnight(date) + (12.0 - lon / 15.0) * 3600.0;
    let rise = bisect_event(lat, lon, noon - 12.0 * 3600.0, noon)?;
    let set = bisect_event(lat, lon, noon, noon + 12.0 * 3600.0)?;
    Some((rise, set))
}

/// (night center, night length) from sunset(date) to sunrise(date + 1).
pub fn night(lat: f64, lon: f64, date: NaiveDate) -> Option<(f64, f64)> {
    let (_, set) = rise_set(lat, lon, date)?;
    let (rise, _) = rise_set(lat, lon, date.succ_opt()?)?;
    Some((0.5 * (set + rise), rise - set))
}
