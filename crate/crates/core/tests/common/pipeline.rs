//! Seeded end-to-end run shared by the acceptance and determinism tests:
//! world, sensor split, datasets, both discriminators, threshold and report.

#![allow(dead_code)]

use std::time::Instant;

use lumitrack::dataset::{
    build_light_training_set, build_temp_training_set, preprocess_sensors, split_train_test, Dataset, LightSetParams,
    SensorDay, Split, TempSetParams,
};
use lumitrack::discriminators::{train, Discriminator, DiscriminatorKind, TrainConfig, TrainReport};
use lumitrack::eval::{run_eval, EvalConfig, EvalReport, Estimators, TrainedModels};
use lumitrack::localization::{calibrate_threshold, CalibrationDay, ThresholdCalibration};
use lumitrack::synth::{generate_world, SynthConfig, SynthWorld};

#[derive(Clone)]
pub struct PipelineConfig {
    pub world: SynthConfig,
    pub split_ratio: f64,
    /// Keep every n-th training / test day.
    pub train_stride: usize,
    pub test_stride: usize,
    pub light_epochs: usize,
    pub temp_epochs: usize,
    pub seed: u64,
}

/// Everything up to and including the trained discriminators.
pub struct Trained {
    pub world: SynthWorld,
    pub split: Split,
    pub train_days: Vec<SensorDay>,
    pub test_days: Vec<SensorDay>,
    pub light_ds: Dataset,
    pub temp_ds: Dataset,
    pub light: Discriminator,
    pub temp: Discriminator,
    pub light_report: TrainReport,
    pub temp_report: TrainReport,
}

pub struct PipelineOutput {
    pub trained: Trained,
    pub threshold: ThresholdCalibration,
    pub report: EvalReport,
}

fn every(days: &[SensorDay], stride: usize) -> Vec<SensorDay> {
    days.iter().step_by(stride.max(1)).cloned().collect()
}

fn lap(clock: &Instant, what: &str) {
    eprintln!("[pipeline] {what} at {:.1} s", clock.elapsed().as_secs_f64());
}

pub fn train_models(cfg: &PipelineConfig) -> Trained {
    let clock = Instant::now();
    let lap = |what: &str| lap(&clock, what);
    let world = generate_world(&cfg.world).expect("world");
    lap("world");
    let split = split_train_test(&world.manifest, cfg.split_ratio, cfg.seed).expect("split");
    let train_days = every(&split.train, cfg.train_stride);
    let test_days = every(&split.test, cfg.test_stride);

    let (light_ex, _) = build_light_training_set(
        &world.logs,
        &train_days,
        &LightSetParams {
            seed: cfg.seed,
            ..LightSetParams::default()
        },
    )
    .expect("light set");
    let light_ds = Dataset::from_light(light_ex, serde_json::json!({"seed": cfg.seed})).expect("light dataset");
    let (temp_ex, _) = build_temp_training_set(
        &world.logs,
        &world.store,
        &train_days,
        &TempSetParams {
            seed: cfg.seed,
            ..TempSetParams::default()
        },
    )
    .expect("temp set");
    let temp_ds = Dataset::from_temp(temp_ex, serde_json::json!({"seed": cfg.seed})).expect("temp dataset");
    lap("datasets");

    let tc = |epochs| TrainConfig {
        epochs,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let (temp, temp_report) =
        train(DiscriminatorKind::Temp, DiscriminatorKind::Temp.default_spec(), &temp_ds, &tc(cfg.temp_epochs)).expect("temp training");
    lap("temp model");
    let (light, light_report) = train(
        DiscriminatorKind::Light,
        DiscriminatorKind::Light.default_spec(),
        &light_ds,
        &tc(cfg.light_epochs),
    )
    .expect("light training");
    lap("light model");
    Trained {
        world,
        split,
        train_days,
        test_days,
        light_ds,
        temp_ds,
        light,
        temp,
        light_report,
        temp_report,
    }
}

pub fn run(cfg: &PipelineConfig) -> PipelineOutput {
    let clock = Instant::now();
    let t = train_models(cfg);
    let lap = |what: &str| lap(&clock, what);
    let (world, train_days, test_days) = (&t.world, &t.train_days, &t.test_days);

    let lights = preprocess_sensors(&world.logs, train_days).expect("preprocess");
    let cal_days: Vec<CalibrationDay> = train_days
        .iter()
        .map(|d| CalibrationDay {
            light: &lights[&d.sensor_id],
            date: d.date,
            truth: d.truth,
        })
        .collect();
    let threshold = calibrate_threshold(&cal_days).expect("threshold");
    lap("threshold");

    let models = TrainedModels {
        light: &t.light,
        temp: &t.temp,
        threshold: threshold.threshold,
    };
    let report = run_eval(
        &world.logs,
        &world.store,
        test_days,
        &Estimators::Trained(models),
        &EvalConfig::default(),
        cfg.seed,
    )
    .expect("eval");
    lap("eval");
    PipelineOutput {
        trained: t,
        threshold,
        report,
    }
}
