//! `prfusion` command-line tool: runs scenarios, sweeps, mounting calibration
//! and exports plot data.
//!
//! Exit codes: 0 success, 1 invalid input, 2 failure while running.
//! `PRFUSION_WORKERS` caps the number of parallel runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use prfusion::config::{ConfigError, ScenarioConfig};
use prfusion::detection::{
    detection_flags, latency_table, DetectorConfig, LatencyTable, MethodThresholds, ScenarioDetections,
};
use prfusion::experiment::{
    accel_quality, detection_thresholds, latency_sweep, mounting_calibration, mounting_calibration_data,
    run_with_detection, AccelQuality, ExperimentError,
};
use prfusion::sensors::imu_true_outputs;

const WORKERS_ENV: &str = "PRFUSION_WORKERS";

#[derive(Parser)]
#[command(name = "prfusion", version, about = "IMU/encoder fusion contact-detection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Parallel runs; overrides PRFUSION_WORKERS.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its log, summary and detection report.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a family of scenarios and tabulate detection latencies.
    Sweep {
        /// Scenario files; several files give one table row each.
        #[arg(long = "config", required_unless_present = "bundled")]
        configs: Vec<PathBuf>,
        /// Bundled scenario names, used like --config.
        #[arg(long)]
        bundled: Vec<String>,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Number of seeds for the seed axis.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Threshold scale factors for the threshold axis.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.75, 1.0, 1.5, 2.0])]
        scales: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Identify the IMU mounting from a synthetic recording.
    Calibrate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the time series behind a figure as CSV.
    PlotData {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum)]
        figure: Figure,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Name of a bundled scenario.
    #[arg(long)]
    bundled: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Gains,
    Seeds,
    Thresholds,
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure {
    /// Acceleration estimates against truth.
    Accel,
    /// True and estimated external wrench with thresholds.
    Contact,
    /// IMU outputs before and after mounting calibration.
    Calibration,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        ExperimentError::from(e).into()
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn load(source: &Source) -> Result<ScenarioConfig, CliError> {
    match (&source.config, &source.bundled) {
        (Some(path), _) => Ok(ScenarioConfig::load(path)?),
        (None, Some(name)) => Ok(ScenarioConfig::bundled(name)?),
        (None, None) => Err(CliError::Validation("give --config or --bundled".into())),
    }
}

fn output_dir(out: &Option<PathBuf>, cfg: &ScenarioConfig) -> Result<PathBuf, CliError> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn to_toml<T: Serialize>(value: &T) -> Result<String, CliError> {
    toml::to_string(value).map_err(|e| CliError::Runtime(format!("serialization: {e}")))
}

#[derive(Serialize)]
struct RunSummary {
    scenario: String,
    seed: u64,
    ticks: usize,
    onset_s: Option<f64>,
    max_contact_force_n: f64,
    max_loop_closure_m: f64,
    max_tracking_error_m: f64,
    accel: Option<AccelQuality>,
    thresholds: MethodThresholds,
    detections: ScenarioDetections,
    paired: ScenarioDetections,
}

fn describe(label: &str, d: &ScenarioDetections) -> String {
    let fmt = |r: &prfusion::detection::DetectionReport| match (r.fired, r.false_positive, r.latency_ms) {
        (false, _, _) => "-".to_string(),
        (true, true, _) => "false positive".to_string(),
        (true, false, Some(ms)) => format!("{ms:.0} ms"),
        (true, false, None) => "fired".to_string(),
    };
    let mut s = format!("{label}: direct {}", fmt(&d.direct));
    for (k, r) in &d.observers {
        s.push_str(&format!(", mo{k} {}", fmt(r)));
    }
    s
}

fn cmd_run(source: &Source, out: &Option<PathBuf>) -> Result<(), CliError> {
    let cfg = load(source)?;
    let thresholds = detection_thresholds(&cfg)?;
    let outcome = run_with_detection(&cfg, &thresholds)?;
    let dir = output_dir(out, &cfg)?;
    let log = &outcome.log;

    let csv_path = dir.join(format!("{}.csv", cfg.name));
    let file = fs::File::create(&csv_path).map_err(|e| io_error(&csv_path, e))?;
    log.write_csv(std::io::BufWriter::new(file), &detection_flags(log, &thresholds))
        .map_err(|e| io_error(&csv_path, e))?;

    let summary = RunSummary {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        ticks: log.records.len(),
        onset_s: log.onset(),
        max_contact_force_n: log.records.iter().map(|r| r.contact_force).fold(0.0, f64::max),
        max_loop_closure_m: log.records.iter().map(|r| r.loop_closure).fold(0.0, f64::max),
        max_tracking_error_m: log
            .records
            .iter()
            .map(|r| (r.truth.pose.position() - r.reference.pose.position()).norm())
            .fold(0.0, f64::max),
        accel: accel_quality(log).ok(),
        thresholds: thresholds.clone(),
        detections: outcome.detections.clone(),
        paired: outcome.paired.clone(),
    };
    write(&dir.join(format!("{}_summary.toml", cfg.name)), to_toml(&summary)?)?;

    println!("{}: {} ticks, onset {:?}", cfg.name, summary.ticks, summary.onset_s);
    if let Some(q) = summary.accel {
        println!(
            "accel NRMSE ekf {:.4}/{:.4}, numeric {:.4}/{:.4}",
            q.ekf_nrmse[0], q.ekf_nrmse[1], q.numeric_nrmse[0], q.numeric_nrmse[1]
        );
    }
    println!("{}", describe("calibrated thresholds", &outcome.detections));
    println!(
        "{}",
        describe(
            &format!(
                "paired thresholds {} N / {} N·m",
                cfg.detection.paired_force_threshold, cfg.detection.paired_moment_threshold
            ),
            &outcome.paired
        )
    );
    Ok(())
}

fn write_table(dir: &Path, stem: &str, table: &LatencyTable) -> Result<(), CliError> {
    write(&dir.join(format!("{stem}.csv")), table.to_csv())?;
    let text = table.to_text();
    write(&dir.join(format!("{stem}.txt")), &text)?;
    print!("{text}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    configs: &[PathBuf],
    bundled: &[String],
    axis: Axis,
    seeds: u64,
    scales: &[f64],
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfgs = configs.iter().map(|p| ScenarioConfig::load(p)).collect::<Result<Vec<_>, _>>()?;
    for name in bundled {
        cfgs.push(ScenarioConfig::bundled(name)?);
    }
    let first = cfgs.first().ok_or_else(|| CliError::Validation("no scenario given".into()))?.clone();
    let dir = output_dir(out, &first)?;
    match axis {
        Axis::Gains => {
            let (table, _) = latency_sweep(&cfgs)?;
            write_table(&dir, "sweep_gains", &table)?;
        }
        Axis::Seeds => {
            let runs: Vec<ScenarioConfig> = (0..seeds.max(1))
                .map(|i| {
                    let mut c = first.clone();
                    c.seed = first.seed + i;
                    c.name = format!("{}_seed{}", first.name, c.seed);
                    c
                })
                .collect();
            let (table, outcomes) = latency_sweep(&runs)?;
            write_table(&dir, "sweep_seeds", &table)?;
            let false_positives = outcomes.iter().filter(|o| o.detections.any_false_positive()).count();
            println!("runs with false positives: {false_positives} of {}", outcomes.len());
        }
        Axis::Thresholds => {
            let thresholds = detection_thresholds(&first)?;
            let outcome = run_with_detection(&first, &thresholds)?;
            let mut rows = Vec::new();
            for &scale in scales {
                let scaled = scale_thresholds(&thresholds, scale);
                let mut d = ScenarioDetections::evaluate(&outcome.log, &scaled);
                d.scenario = format!("{}_x{scale}", first.name);
                rows.push(d);
            }
            let table = latency_table(&rows, &thresholds, None);
            write_table(&dir, "sweep_thresholds", &table)?;
        }
    }
    Ok(())
}

fn scale_thresholds(t: &MethodThresholds, scale: f64) -> MethodThresholds {
    let s = |c: &DetectorConfig| DetectorConfig {
        force_threshold: c.force_threshold * scale,
        moment_threshold: c.moment_threshold * scale,
        ..*c
    };
    MethodThresholds {
        direct: s(&t.direct),
        observers: t.observers.iter().map(|(k, c)| (*k, s(c))).collect(),
    }
}

#[derive(Serialize)]
struct MountingSummary {
    position_mm: [f64; 3],
    euler_deg: [f64; 3],
    objective: f64,
    objective_at_search_center: f64,
    true_position_mm: [f64; 3],
    true_euler_deg: [f64; 3],
    position_error_mm: [f64; 3],
    euler_error_deg: [f64; 3],
}

fn cmd_calibrate(source: &Source, out: &Option<PathBuf>) -> Result<(), CliError> {
    let cfg = load(source)?;
    let report = mounting_calibration(&cfg)?;
    let dir = output_dir(out, &cfg)?;
    let mm = |v: &nalgebra_free::V3| [v[0] * 1e3, v[1] * 1e3, v[2] * 1e3];
    let deg = |v: &nalgebra_free::V3| [v[0].to_degrees(), v[1].to_degrees(), v[2].to_degrees()];
    let found = &report.result.mount;
    let summary = MountingSummary {
        position_mm: mm(&found.position.into()),
        euler_deg: deg(&found.euler_xyz.into()),
        objective: report.result.objective,
        objective_at_search_center: report.result.objective_at_center,
        true_position_mm: mm(&report.truth.position.into()),
        true_euler_deg: deg(&report.truth.euler_xyz.into()),
        position_error_mm: report.position_errors.map(|e| e * 1e3),
        euler_error_deg: report.angle_errors.map(f64::to_degrees),
    };
    let text = to_toml(&summary)?;
    write(&dir.join(format!("{}_mounting.toml", cfg.name)), &text)?;
    print!("{text}");
    Ok(())
}

/// Plain array views of nalgebra vectors, to keep the CLI free of a direct
/// nalgebra dependency.
mod nalgebra_free {
    pub type V3 = [f64; 3];
}

fn cmd_plot_data(source: &Source, figure: Figure, out: &Option<PathBuf>) -> Result<(), CliError> {
    let cfg = load(source)?;
    let dir = output_dir(out, &cfg)?;
    let mut rows: Vec<String> = Vec::new();
    let name = match figure {
        Figure::Accel => {
            let thresholds = MethodThresholds::uniform(cfg.detector(1.0, 1.0), &cfg.observer.gains);
            let log = run_with_detection(&cfg, &thresholds)?.log;
            rows.push(
                "t_s,ax_true_m_s2,ay_true_m_s2,alpha_true_rad_s2,ax_ekf_m_s2,ay_ekf_m_s2,alpha_ekf_rad_s2,ax_num_m_s2,ay_num_m_s2,alpha_num_rad_s2"
                    .into(),
            );
            for r in &log.records {
                let v: Vec<String> = std::iter::once(r.t)
                    .chain(r.truth.accel.iter().copied())
                    .chain(r.ekf_accel.iter().copied())
                    .chain(r.numeric_accel.iter().copied())
                    .map(|x| x.to_string())
                    .collect();
                rows.push(v.join(","));
            }
            "accel"
        }
        Figure::Contact => {
            let thresholds = detection_thresholds(&cfg)?;
            let outcome = run_with_detection(&cfg, &thresholds)?;
            let gain = cfg.detection.paired_gain;
            let index = outcome.log.observer_gains.iter().position(|k| *k == gain);
            rows.push(format!(
                "t_s,fext_x_N,fext_y_N,mext_z_Nm,direct_fx_N,direct_fy_N,direct_mz_Nm,mo{gain}_fx_N,mo{gain}_fy_N,mo{gain}_mz_Nm,threshold_N,threshold_Nm"
            ));
            for r in &outcome.log.records {
                let mo = index.map(|i| r.observers[i].to_vector()).unwrap_or_default();
                let v: Vec<String> = std::iter::once(r.t)
                    .chain(r.external.to_vector().iter().copied())
                    .chain(r.direct.to_vector().iter().copied())
                    .chain(mo.iter().copied())
                    .chain([cfg.detection.paired_force_threshold, cfg.detection.paired_moment_threshold])
                    .map(|x| x.to_string())
                    .collect();
                rows.push(v.join(","));
            }
            "contact"
        }
        Figure::Calibration => {
            let report = mounting_calibration(&cfg)?;
            let (samples, states) = mounting_calibration_data(&cfg, cfg.seed)?;
            let center = cfg.calibration_bounds().center;
            rows.push(
                [
                    "t_s",
                    "gyro_meas_x,gyro_meas_y,gyro_meas_z",
                    "acc_meas_x,acc_meas_y,acc_meas_z",
                    "acc_before_x,acc_before_y,acc_before_z",
                    "acc_after_x,acc_after_y,acc_after_z",
                ]
                .join(","),
            );
            for (s, state) in samples.iter().zip(&states) {
                let (_, before) = imu_true_outputs(state, &center);
                let (_, after) = imu_true_outputs(state, &report.result.mount);
                let v: Vec<String> = std::iter::once(s.timestamp)
                    .chain(s.omega.iter().copied())
                    .chain(s.accel.iter().copied())
                    .chain(before.iter().copied())
                    .chain(after.iter().copied())
                    .map(|x| x.to_string())
                    .collect();
                rows.push(v.join(","));
            }
            "calibration"
        }
    };
    let path = dir.join(format!("{}_fig_{name}.csv", cfg.name));
    rows.push(String::new());
    write(&path, rows.join("\n"))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn configure_workers(flag: Option<usize>) -> Result<(), CliError> {
    let env = std::env::var(WORKERS_ENV).ok();
    let workers = match (flag, env) {
        (Some(n), _) => Some(n),
        (None, Some(v)) => Some(
            v.parse::<usize>()
                .map_err(|_| CliError::Validation(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?,
        ),
        (None, None) => None,
    };
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::Validation("worker count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    configure_workers(cli.workers)?;
    match &cli.command {
        Command::Run { source, out } => cmd_run(source, out),
        Command::Sweep { configs, bundled, axis, seeds, scales, out } => {
            cmd_sweep(configs, bundled, *axis, *seeds, scales, out)
        }
        Command::Calibrate { source, out } => cmd_calibrate(source, out),
        Command::PlotData { source, figure, out } => cmd_plot_data(source, *figure, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
