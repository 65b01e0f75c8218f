//! `lumitrack`: synthesize a world, build training sets, train the two
//! discriminators, localize single days and evaluate on held-out sensors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use lumitrack::astro::GeoCoord;
use lumitrack::dataset::{
    build_light_training_set, build_temp_training_set, preprocess_sensors, read_dataset, split_train_test,
    write_dataset, Dataset, DatasetKind, LightSetParams, SensorDay, Split, TempSetParams,
};
use lumitrack::discriminators::{train, Discriminator, DiscriminatorKind, TrainConfig};
use lumitrack::eval::{day_grids, export_heatmaps, run_eval, EvalConfig, Estimators, TrainedModels};
use lumitrack::localization::{calibrate_threshold, CalibrationDay, GridSpec, ThresholdCalibration};
use lumitrack::reshape::preprocess_light;
use lumitrack::sensor::parse_sensor_log;
use lumitrack::synth::{generate_world, read_world, write_world, SynthConfig};
use lumitrack::util::atomic_write;
use lumitrack::weather::parse_weather_csv;
use lumitrack::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "lumitrack", version, about = "Light and temperature geolocation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Clone, Copy, Serialize)]
struct GridArgs {
    /// Coarse grid spacing in degrees.
    #[arg(long, default_value_t = 1.0)]
    grid_step: f64,
    #[arg(long, default_value_t = 10.0)]
    half_span: f64,
    #[arg(long, default_value_t = 0.1)]
    fine_step: f64,
}

impl GridArgs {
    fn spec(&self) -> Result<GridSpec> {
        let g = GridSpec {
            half_span: self.half_span,
            step: self.grid_step,
            fine_step: self.fine_step,
        };
        g.axis().map_err(|e| Error::input(e.to_string()))?;
        if !(g.fine_step > 0.0 && g.fine_step <= g.step) {
            return Err(Error::input("fine step must lie in (0, grid step]"));
        }
        Ok(g)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world (sensor logs, weather, manifest).
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.5)]
        cloud_strength: f64,
        #[arg(long)]
        sensors: Option<usize>,
        #[arg(long)]
        stations: Option<usize>,
        /// Light sampling interval in seconds.
        #[arg(long)]
        light_interval: Option<i64>,
        /// Temperature sampling interval in seconds.
        #[arg(long)]
        temp_interval: Option<i64>,
        #[arg(long)]
        start: Option<NaiveDate>,
        #[arg(long)]
        end: Option<NaiveDate>,
    },
    /// Split sensors, build both training sets and calibrate the baseline.
    BuildDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        split_ratio: f64,
        /// Keep every n-th training day.
        #[arg(long, default_value_t = 1)]
        train_stride: usize,
    },
    /// Train one discriminator on a dataset file.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
    },
    /// Estimate one day's position and write its heatmaps.
    Localize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        weather: PathBuf,
        #[arg(long)]
        light_model: PathBuf,
        #[arg(long)]
        temp_model: PathBuf,
        #[arg(long)]
        date: NaiveDate,
        #[arg(long, allow_hyphen_values = true)]
        ref_lat: f64,
        #[arg(long, allow_hyphen_values = true)]
        ref_lon: f64,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Per-interval errors on the held-out sensors of a split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
        /// split.json from build-dataset.
        #[arg(long)]
        split: PathBuf,
        #[arg(long, required_unless_present = "oracle")]
        light_model: Option<PathBuf>,
        #[arg(long, required_unless_present = "oracle")]
        temp_model: Option<PathBuf>,
        /// threshold.json from build-dataset.
        #[arg(long, required_unless_present = "oracle")]
        threshold: Option<PathBuf>,
        /// Keep every n-th test day.
        #[arg(long, default_value_t = 1)]
        test_stride: usize,
        /// Truth-returning estimators; checks the harness itself.
        #[arg(long)]
        oracle: bool,
        #[command(flatten)]
        grid: GridArgs,
    },
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, &serde_json::to_vec_pretty(value)?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read(path)?)?)
}

fn load_model(path: &Path, kind: DiscriminatorKind) -> Result<Discriminator> {
    Discriminator::from_bytes(kind, &read(path)?)
}

fn every(days: &[SensorDay], stride: usize) -> Result<Vec<SensorDay>> {
    if stride == 0 {
        return Err(Error::input("stride must be positive"));
    }
    Ok(days.iter().step_by(stride).cloned().collect())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    common: &Common,
    cloud_strength: f64,
    sensors: Option<usize>,
    stations: Option<usize>,
    light_interval: Option<i64>,
    temp_interval: Option<i64>,
    start: Option<NaiveDate>,
    end: Option<NaiveDate>,
) -> Result<serde_json::Value> {
    let d = SynthConfig::default();
    let config = SynthConfig {
        n_sensors: sensors.unwrap_or(d.n_sensors),
        n_stations: stations.unwrap_or(d.n_stations),
        light_interval_s: light_interval.unwrap_or(d.light_interval_s),
        temp_interval_s: temp_interval.unwrap_or(d.temp_interval_s),
        start: start.unwrap_or(d.start),
        end: end.unwrap_or(d.end),
        cloud_strength,
        seed: common.seed,
        ..d
    };
    config.validate()?;
    let world = generate_world(&config)?;
    write_world(&world, &common.out_dir)?;
    Ok(json!({"sensors": world.logs.len(), "stations": world.store.len(), "sensor_days": world.manifest.len()}))
}

fn cmd_build_dataset(common: &Common, world_dir: &Path, ratio: f64, stride: usize) -> Result<serde_json::Value> {
    let world = read_world(world_dir)?;
    let split = split_train_test(&world.manifest, ratio, common.seed)?;
    let days = every(&split.train, stride)?;
    let echo = json!({"seed": common.seed, "world": world_dir, "split_ratio": ratio, "train_stride": stride});

    let light_params = LightSetParams {
        seed: common.seed,
        ..LightSetParams::default()
    };
    let (light_ex, light_skipped) = build_light_training_set(&world.logs, &days, &light_params)?;
    let light = Dataset::from_light(light_ex, json!({"run": echo, "params": light_params}))?;
    let temp_params = TempSetParams {
        seed: common.seed,
        ..TempSetParams::default()
    };
    let (temp_ex, temp_skipped) = build_temp_training_set(&world.logs, &world.store, &days, &temp_params)?;
    let temp = Dataset::from_temp(temp_ex, json!({"run": echo, "params": temp_params}))?;

    let lights = preprocess_sensors(&world.logs, &days)?;
    let cal: Vec<CalibrationDay> = days
        .iter()
        .map(|d| CalibrationDay {
            light: &lights[&d.sensor_id],
            date: d.date,
            truth: d.truth,
        })
        .collect();
    let threshold = calibrate_threshold(&cal)?;

    let out = &common.out_dir;
    write_dataset(&light, &out.join("light.ds"))?;
    write_dataset(&temp, &out.join("temp.ds"))?;
    write_json(&out.join("split.json"), &json!({"run": echo, "split": split}))?;
    write_json(&out.join("threshold.json"), &json!({"run": echo, "calibration": threshold}))?;
    write_json(&out.join("skipped.json"), &json!({"light": light_skipped, "temp": temp_skipped}))?;
    Ok(json!({
        "train_days": days.len(),
        "test_days": split.test.len(),
        "light_classes": light.class_counts(),
        "temp_classes": temp.class_counts(),
        "threshold": threshold.threshold,
    }))
}

fn cmd_train(common: &Common, dataset: &Path, epochs: usize, batch_size: usize, lr: f64) -> Result<serde_json::Value> {
    let ds = read_dataset(dataset)?;
    let kind = match ds.kind {
        DatasetKind::Light => DiscriminatorKind::Light,
        DatasetKind::Temp => DiscriminatorKind::Temp,
    };
    let cfg = TrainConfig {
        epochs,
        batch_size,
        lr,
        seed: common.seed,
        ..TrainConfig::default()
    };
    let name = match kind {
        DiscriminatorKind::Light => "light",
        DiscriminatorKind::Temp => "temp",
    };
    match train(kind, kind.default_spec(), &ds, &cfg) {
        Ok((model, report)) => {
            atomic_write(&common.out_dir.join(format!("{name}.nn")), &model.to_bytes()?)?;
            write_json(&common.out_dir.join(format!("{name}_train_report.json")), &json!({"dataset": dataset, "report": report}))?;
            Ok(json!({"model": name, "validation_balanced_accuracy": report.final_balanced_accuracy()}))
        }
        Err(failure) => {
            atomic_write(&common.out_dir.join(format!("{name}.last_good.nn")), &failure.last_good.to_bytes()?)?;
            write_json(&common.out_dir.join(format!("{name}_train_report.json")), &json!({"dataset": dataset, "report": failure.report}))?;
            Err(failure.error)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_localize(
    common: &Common,
    log_path: &Path,
    weather: &Path,
    light_model: &Path,
    temp_model: &Path,
    date: NaiveDate,
    reference: GeoCoord,
    grid: &GridArgs,
) -> Result<serde_json::Value> {
    let spec = grid.spec()?;
    let id = log_path.file_stem().and_then(|s| s.to_str()).unwrap_or("sensor");
    let sensor = parse_sensor_log(id, &read(log_path)?)?;
    let store = parse_weather_csv(&read(weather)?)?;
    let light = load_model(light_model, DiscriminatorKind::Light)?;
    let temp = load_model(temp_model, DiscriminatorKind::Temp)?;
    let curve = preprocess_light(&sensor.light)?;
    let grids = day_grids(&light, &temp, &curve, &sensor, &store, date, reference, &spec);
    let fused = grids.fused_estimate()?;
    let light_only = grids.light_estimate()?;
    let prefix = format!("{id}_{date}");
    let files = export_heatmaps(&grids, &common.out_dir, &prefix)?;
    let result = json!({
        "sensor": id,
        "date": date,
        "reference": reference,
        "grid": grid,
        "fused": fused,
        "light_only": light_only,
        "heatmaps": files,
    });
    write_json(&common.out_dir.join(format!("{prefix}_estimate.json")), &result)?;
    Ok(json!({"lat": fused.coord.lat, "lon": fused.coord.lon, "ill_conditioned": fused.ill_conditioned}))
}

#[derive(Deserialize)]
struct SplitFile {
    split: Split,
}

#[derive(Deserialize)]
struct ThresholdFile {
    calibration: ThresholdCalibration,
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    common: &Common,
    world_dir: &Path,
    split: &Path,
    light_model: Option<&Path>,
    temp_model: Option<&Path>,
    threshold: Option<&Path>,
    stride: usize,
    oracle: bool,
    grid: &GridArgs,
) -> Result<serde_json::Value> {
    let spec = grid.spec()?;
    let world = read_world(world_dir)?;
    let split: SplitFile = read_json(split)?;
    let days = every(&split.split.test, stride)?;
    let year = days.first().map_or(2018, |d| chrono::Datelike::year(&d.date));
    let config = EvalConfig {
        grid: spec,
        intervals: lumitrack::eval::default_intervals(year),
    };
    let report = if oracle {
        run_eval(&world.logs, &world.store, &days, &Estimators::Oracle, &config, common.seed)?
    } else {
        let missing = || Error::input("eval needs --light-model, --temp-model and --threshold");
        let light = load_model(light_model.ok_or_else(missing)?, DiscriminatorKind::Light)?;
        let temp = load_model(temp_model.ok_or_else(missing)?, DiscriminatorKind::Temp)?;
        let t: ThresholdFile = read_json(threshold.ok_or_else(missing)?)?;
        let models = TrainedModels {
            light: &light,
            temp: &temp,
            threshold: t.calibration.threshold,
        };
        run_eval(&world.logs, &world.store, &days, &Estimators::Trained(models), &config, common.seed)?
    };
    report.write(&common.out_dir)?;
    Ok(json!({"days": days.len(), "records": report.records.len(), "dropped": report.dropped.len()}))
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Synth {
            common,
            cloud_strength,
            sensors,
            stations,
            light_interval,
            temp_interval,
            start,
            end,
        } => cmd_synth(&common, cloud_strength, sensors, stations, light_interval, temp_interval, start, end),
        Command::BuildDataset {
            common,
            world,
            split_ratio,
            train_stride,
        } => cmd_build_dataset(&common, &world, split_ratio, train_stride),
        Command::Train {
            common,
            dataset,
            epochs,
            batch_size,
            lr,
        } => cmd_train(&common, &dataset, epochs, batch_size, lr),
        Command::Localize {
            common,
            log,
            weather,
            light_model,
            temp_model,
            date,
            ref_lat,
            ref_lon,
            grid,
        } => {
            let reference = GeoCoord::new(ref_lat, ref_lon)?;
            cmd_localize(&common, &log, &weather, &light_model, &temp_model, date, reference, &grid)
        }
        Command::Eval {
            common,
            world,
            split,
            light_model,
            temp_model,
            threshold,
            test_stride,
            oracle,
            grid,
        } => cmd_eval(
            &common,
            &world,
            &split,
            light_model.as_deref(),
            temp_model.as_deref(),
            threshold.as_deref(),
            test_stride,
            oracle,
            &grid,
        ),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Input | ErrorKind::Io => 2,
        ErrorKind::Coverage => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{}", json!({"status": "ok", "summary": summary}));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e.kind();
            eprintln!("{}", json!({"status": "error", "kind": format!("{kind:?}").to_lowercase(), "reason": e.to_string()}));
            ExitCode::from(exit_code(kind))
        }
    }
}
