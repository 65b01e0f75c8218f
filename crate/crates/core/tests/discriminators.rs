mod common;

use chrono::NaiveDate;
use common::gradcheck::{gradient_check, FD_TOL};
use lumitrack::astro::GeoCoord;
use lumitrack::dataset::{Dataset, DatasetKind, Provenance};
use lumitrack::discriminators::{
    balanced_accuracy, light_spec, light_spec_with, score_light, score_temp, temp_spec, temp_spec_with, train,
    Discriminator, DiscriminatorKind, TrainConfig,
};
use lumitrack::nn::Mode;
use lumitrack::reshape::{NormalizedLightCurve, TempPairVector, CURVE_LEN, TEMP_LEN};
use lumitrack::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn toy(n: usize, seed: u64, shuffled: bool) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n * 34);
    let mut labels = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);
    let date = day();
    for i in 0..n {
        let mut u: Vec<f64> = (0..34).map(|_| rng.sample(StandardNormal)).collect();
        // keep a gap of 0.5 between the classes
        while !shuffled && (u[0] + u[20]).abs() < 0.5 {
            u[0] = rng.sample(StandardNormal);
        }
        let label = if shuffled { rng.random_range(0..2u8) } else { u8::from(u[0] + u[20] > 0.0) };
        inputs.extend(u.iter().map(|v| 15.0 + 10.0 * v));
        labels.push(label);
        provenance.push(Provenance::Temp {
            sensor_id: format!("S{:03}", i % 20),
            date,
            station_id: "W0000".into(),
            offset_lat: 0.0,
            offset_lon: 0.0,
        });
    }
    Dataset {
        kind: DatasetKind::Temp,
        dim: 34,
        inputs,
        labels,
        provenance,
        meta: serde_json::Value::Null,
    }
}

fn day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2018, 10, 1).unwrap()
}

fn pair(sensor_part: Vec<f64>, station_part: Vec<f64>) -> TempPairVector {
    TempPairVector {
        sensor_part,
        station_part,
        sensor_id: "S".into(),
        date: day(),
        station_id: "W".into(),
        candidate: GeoCoord { lat: 0.0, lon: 0.0 },
    }
}

#[test]
fn default_layouts_have_expected_size() {
    let l = light_spec();
    assert_eq!(l.input.size(), CURVE_LEN);
    assert_eq!(l.classes(), 2);
    assert!(l.param_count() < 100_000, "{}", l.param_count());
    let t = temp_spec();
    assert_eq!(t.input.size(), 2 * TEMP_LEN);
    assert_eq!(t.classes(), 2);
}

#[test]
fn reduced_light_layout_gradients_match_finite_differences() {
    let spec = light_spec_with(CURVE_LEN, [2, 2, 2], [4, 4], 0.25).unwrap();
    assert!(spec.param_count() < 500, "{}", spec.param_count());
    let worst = gradient_check(&spec, 5, 4);
    assert!(worst < FD_TOL, "worst relative error {worst}");
}

#[test]
fn reduced_temp_layout_gradients_match_finite_differences() {
    let spec = temp_spec_with([8, 4], 0.25).unwrap();
    assert!(spec.param_count() < 500, "{}", spec.param_count());
    let worst = gradient_check(&spec, 6, 6);
    assert!(worst < FD_TOL, "worst relative error {worst}");
}

#[test]
fn separable_toy_set_is_learned() {
    let ds = toy(4000, 1, false);
    let cfg = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let (model, report) = train(DiscriminatorKind::Temp, temp_spec(), &ds, &cfg).unwrap();
    assert_eq!(model.params.mode, Mode::Inference);
    assert_eq!(report.epochs.len(), 20);
    let acc = report.final_balanced_accuracy().unwrap();
    assert!(acc > 0.99, "{acc}");
    // validation sensors are whole sensors, never seen in training
    assert_eq!(report.validation_sensors.len(), 2);
    assert_eq!(report.n_train + report.n_validation, ds.len());
}

#[test]
fn shuffled_labels_give_chance_accuracy() {
    let ds = toy(8000, 2, true);
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let (_, report) = train(DiscriminatorKind::Temp, temp_spec(), &ds, &cfg).unwrap();
    let acc = report.final_balanced_accuracy().unwrap();
    assert!((acc - 0.5).abs() < 0.05, "{acc}");
}

#[test]
fn untrained_model_refuses_to_score() {
    let model = Discriminator::init(DiscriminatorKind::Temp, temp_spec(), 1).unwrap();
    let pair = pair(vec![10.0; TEMP_LEN], vec![10.0; TEMP_LEN]);
    assert!(matches!(score_temp(&model, &pair), Err(Error::InvalidInput(_))));
}

fn trained_toy() -> Discriminator {
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    train(DiscriminatorKind::Temp, temp_spec(), &toy(1000, 3, false), &cfg).unwrap().0
}

#[test]
fn scores_are_deterministic_probabilities() {
    let model = trained_toy();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let sensor: Vec<f64> = (0..TEMP_LEN).map(|_| rng.random_range(-30.0..50.0)).collect();
        let station: Vec<f64> = (0..TEMP_LEN).map(|_| rng.random_range(-30.0..50.0)).collect();
        let pair = pair(sensor, station);
        let a = score_temp(&model, &pair).unwrap();
        let b = score_temp(&model, &pair).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn batch_and_single_scores_agree() {
    let model = trained_toy();
    let ds = toy(600, 4, false);
    let rows: Vec<&[f64]> = (0..ds.len()).map(|i| ds.input(i)).collect();
    let batch = model.score_rows(&rows).unwrap();
    for (i, r) in rows.iter().enumerate().step_by(37) {
        assert_eq!(batch[i].to_bits(), model.score_rows(&[r]).unwrap()[0].to_bits());
    }
}

#[test]
fn scorer_kind_and_shape_are_checked() {
    let model = trained_toy();
    let curve = NormalizedLightCurve {
        values: vec![0.0; CURVE_LEN],
        sensor_id: "S".into(),
        date: day(),
        candidate: GeoCoord { lat: 0.0, lon: 0.0 },
    };
    assert!(score_light(&model, &curve).is_err());
    assert!(matches!(model.score_rows(&[&[1.0; 5]]), Err(Error::Shape(_))));
}

#[test]
fn model_bytes_round_trip_and_reject_wrong_layout() {
    let model = trained_toy();
    let bytes = model.to_bytes().unwrap();
    let back = Discriminator::from_bytes(DiscriminatorKind::Temp, &bytes).unwrap();
    assert_eq!(back, model);
    let err = Discriminator::from_bytes(DiscriminatorKind::Light, &bytes).unwrap_err();
    assert!(err.to_string().contains("expected"), "{err}");
}

#[test]
fn training_is_reproducible() {
    let ds = toy(800, 5, false);
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let (a, ra) = train(DiscriminatorKind::Temp, temp_spec(), &ds, &cfg).unwrap();
    let (b, rb) = train(DiscriminatorKind::Temp, temp_spec(), &ds, &cfg).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
}

#[test]
fn divergence_aborts_with_last_good_parameters() {
    let ds = toy(800, 6, false);
    let cfg = TrainConfig {
        epochs: 3,
        lr: 1e300,
        ..TrainConfig::default()
    };
    let failure = train(DiscriminatorKind::Temp, temp_spec(), &ds, &cfg).unwrap_err();
    assert_eq!(failure.error.kind(), lumitrack::ErrorKind::Numerical);
    assert_eq!(failure.last_good.params.mode, Mode::Inference);
    assert!(failure.last_good.params.layers.iter().flat_map(|l| l.weights.iter().flatten()).all(|v| v.is_finite()));
}

#[test]
fn balanced_accuracy_weights_classes_equally() {
    let probs = [0.9, 0.9, 0.9, 0.9, 0.1];
    let labels = [1, 1, 1, 1, 0];
    assert_eq!(balanced_accuracy(&probs, &labels), 1.0);
    let labels = [1, 1, 1, 0, 0];
    assert!((balanced_accuracy(&probs, &labels) - 0.75).abs() < 1e-12);
}
