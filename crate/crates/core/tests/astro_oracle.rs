mod common;

use chrono::{Datelike, NaiveDate};
use common::oracle;
use lumitrack::astro::{
    self, latitude_from_night_length, longitude_from_night_center, night_window, sunrise_sunset,
    GeoCoord, Hemisphere,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

#[test]
fn declination_matches_reference_sun() {
    let oct15 = date(2018, 10, 15);
    let (_, dec_ref, _) = oracle::sun(oracle::midnight(oct15) + 43_200.0);
    // Frozen from the reference ephemeris.
    assert!((dec_ref + 0.150_09).abs() < 1e-4);
    let dec = astro::solar_declination(oct15.ordinal()).unwrap();
    assert!((dec - dec_ref).abs() < 0.002, "{dec} vs {dec_ref}");
}

#[test]
fn equation_of_time_matches_reference_sun() {
    let jan1 = oracle::midnight(date(2018, 1, 1));
    for doy in (1..=365).step_by(7) {
        let (_, _, eot_ref) = oracle::sun(jan1 + (doy as f64 - 0.5) * 86_400.0);
        let eot = astro::equation_of_time(doy).unwrap();
        assert!((eot - eot_ref).abs() < 0.75, "day {doy}: {eot} vs {eot_ref}");
    }
}

#[test]
fn declination_mirrors_about_equinox() {
    let eq = date(2018, 9, 22).ordinal();
    for k in 1..=30 {
        let before = astro::solar_declination(eq - k).unwrap();
        let after = astro::solar_declination(eq + k).unwrap();
        assert!((before + after).abs() < 0.01, "k={k}: {before} {after}");
    }
}

#[test]
fn ann_arbor_october_events_match_oracle() {
    let c = GeoCoord { lat: 42.3, lon: -83.7 };
    let d = date(2018, 10, 15);
    let (rise, set) = sunrise_sunset(c, d).unwrap();
    let (rise_ref, set_ref) = oracle::rise_set(c.lat, c.lon, d).unwrap();
    assert!((rise - rise_ref).abs() < 120.0, "rise off by {} s", rise - rise_ref);
    assert!((set - set_ref).abs() < 120.0, "set off by {} s", set - set_ref);
}

#[test]
fn december_night_length_matches_oracle() {
    let d = date(2018, 12, 4);
    let w = night_window(GeoCoord { lat: 45.0, lon: -93.0 }, d).unwrap();
    let (_, len_ref) = oracle::night(45.0, -93.0, d).unwrap();
    assert!((w.length - len_ref).abs() < 600.0);
    assert!((w.length / 3600.0 - 15.0).abs() < 0.5, "{}", w.length / 3600.0);
}

#[test]
fn random_events_agree_with_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let start = date(2018, 1, 1);
    for _ in 0..100 {
        let lat = rng.random_range(-60.0..60.0);
        let lon = rng.random_range(-180.0..180.0);
        let d = start + chrono::Duration::days(rng.random_range(0..365));
        let (rise, set) = sunrise_sunset(GeoCoord { lat, lon }, d).unwrap();
        let (rise_ref, set_ref) = oracle::rise_set(lat, lon, d).unwrap();
        assert!((rise - rise_ref).abs() < 120.0, "({lat},{lon}) {d}: rise {}", rise - rise_ref);
        assert!((set - set_ref).abs() < 120.0, "({lat},{lon}) {d}: set {}", set - set_ref);
    }
}

#[test]
fn inversions_round_trip_off_equinox() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = date(2018, 1, 1);
    let equinox = date(2018, 9, 22);
    let mut checked = 0;
    while checked < 60 {
        let lat: f64 = rng.random_range(-55.0..55.0);
        let lon = rng.random_range(-170.0..170.0);
        let d = start + chrono::Duration::days(rng.random_range(0..365));
        let spring = date(2018, 3, 20);
        if (d - equinox).num_days().abs() < 15 || (d - spring).num_days().abs() < 15 {
            continue;
        }
        let w = night_window(GeoCoord { lat, lon }, d).unwrap();
        let lat_inv = latitude_from_night_length(w.length, d, Hemisphere::of(lat), lon).unwrap();
        assert!((lat_inv.value - lat).abs() < 0.5, "({lat},{lon}) {d}: {lat_inv:?}");
        let lon_inv = longitude_from_night_center(w.center, d, lat).unwrap();
        assert!((lon_inv.value - lon).abs() < 0.3, "({lat},{lon}) {d}: {lon_inv:?}");
        assert!(lon_inv.residual < 30.0);
        checked += 1;
    }
}

#[test]
fn inversion_examples_from_oracle_nights() {
    let d = date(2018, 11, 1);
    let (_, len) = oracle::night(30.0, -90.0, d).unwrap();
    let inv = latitude_from_night_length(len, d, Hemisphere::North, -90.0).unwrap();
    assert!((inv.value - 30.0).abs() < 0.2 + 0.3, "{inv:?}");

    let d = date(2018, 12, 1);
    let w = night_window(GeoCoord { lat: 35.0, lon: -120.0 }, d).unwrap();
    let inv = longitude_from_night_center(w.center, d, 35.0).unwrap();
    assert!((inv.value + 120.0).abs() < 0.2);
}

#[test]
fn equinox_flatness_versus_december_spread() {
    let spread = |d: NaiveDate| {
        let lens: Vec<f64> = (25..=50)
            .map(|lat| night_window(GeoCoord { lat: lat as f64, lon: -90.0 }, d).unwrap().length)
            .collect();
        let max = lens.iter().cloned().fold(f64::MIN, f64::max);
        let min = lens.iter().cloned().fold(f64::MAX, f64::min);
        (max - min) / 60.0
    };
    assert!(spread(date(2018, 9, 22)) < 25.0);
    assert!(spread(date(2018, 12, 4)) > 90.0);
}
