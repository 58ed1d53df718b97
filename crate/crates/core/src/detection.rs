//! Threshold-based contact detection on estimated wrench series, threshold
//! calibration from contact-free runs, latency tables and signal metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Wrench;
use crate::simulation::SimLog;

/// Reported in place of an infinite SNR.
pub const SNR_CAP_DB: f64 = 300.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("log is empty")]
    EmptyLog,
    #[error("truth signal has zero range")]
    DegenerateRange,
    #[error("series lengths differ or are shorter than 2 ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
}

/// Fire when `required` of the last `window` ticks exceed a threshold.
/// `1 of 1` is the plain single-crossing rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Debounce {
    pub required: usize,
    pub window: usize,
}

impl Default for Debounce {
    fn default() -> Self {
        Self { required: 1, window: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// N.
    pub force_threshold: f64,
    /// N·m.
    pub moment_threshold: f64,
    pub safety_factor: f64,
    pub debounce: Debounce,
}

impl DetectorConfig {
    pub fn new(force_threshold: f64, moment_threshold: f64) -> Self {
        Self {
            force_threshold,
            moment_threshold,
            safety_factor: 2.0,
            debounce: Debounce::default(),
        }
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        if !(self.force_threshold > 0.0 && self.moment_threshold > 0.0) {
            return Err(DetectionError::InvalidConfig("thresholds must be positive".into()));
        }
        let d = self.debounce;
        if d.required == 0 || d.required > d.window {
            return Err(DetectionError::InvalidConfig("debounce needs 1 <= required <= window".into()));
        }
        Ok(())
    }

    fn exceeded(&self, w: &Wrench) -> Option<Channel> {
        if w.fx.abs() > self.force_threshold {
            Some(Channel::Fx)
        } else if w.fy.abs() > self.force_threshold {
            Some(Channel::Fy)
        } else if w.mz.abs() > self.moment_threshold {
            Some(Channel::Mz)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Fx,
    Fy,
    Mz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub fired: bool,
    pub tick: Option<usize>,
    /// s.
    pub t_fire: Option<f64>,
    /// Fire time minus contact onset, ms.
    pub latency_ms: Option<f64>,
    pub channel: Option<Channel>,
    /// Fired before contact onset, or without any contact.
    pub false_positive: bool,
}

/// Scans the series for the first threshold crossing. `onset` is the true
/// contact onset, if any.
pub fn detect(series: &[Wrench], times: &[f64], cfg: &DetectorConfig, onset: Option<f64>) -> DetectionReport {
    let window = cfg.debounce.window.max(1);
    let mut recent: std::collections::VecDeque<bool> = std::collections::VecDeque::with_capacity(window);
    for (k, w) in series.iter().enumerate() {
        let hit = cfg.exceeded(w);
        if recent.len() == window {
            recent.pop_front();
        }
        recent.push_back(hit.is_some());
        if hit.is_some() && recent.iter().filter(|h| **h).count() >= cfg.debounce.required {
            let t = times[k];
            let latency_ms = onset.map(|t0| ((t - t0) * 1e3 * 1e6).round() / 1e6);
            let false_positive = match onset {
                Some(t0) => t < t0,
                None => true,
            };
            return DetectionReport {
                fired: true,
                tick: Some(k),
                t_fire: Some(t),
                latency_ms,
                channel: hit,
                false_positive,
            };
        }
    }
    DetectionReport {
        fired: false,
        tick: None,
        t_fire: None,
        latency_ms: None,
        channel: None,
        false_positive: false,
    }
}

/// Lower bounds on calibrated thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFloor {
    pub force: f64,
    pub moment: f64,
}

impl Default for ThresholdFloor {
    fn default() -> Self {
        Self { force: 1.0, moment: 0.1 }
    }
}

/// `safety_factor ×` the largest absolute estimate over a contact-free series.
pub fn calibrate_thresholds(
    series: &[Wrench],
    safety_factor: f64,
    floor: &ThresholdFloor,
) -> Result<DetectorConfig, DetectionError> {
    if series.is_empty() {
        return Err(DetectionError::EmptyLog);
    }
    let force = series.iter().map(|w| w.fx.abs().max(w.fy.abs())).fold(0.0, f64::max);
    let moment = series.iter().map(|w| w.mz.abs()).fold(0.0, f64::max);
    Ok(DetectorConfig {
        force_threshold: (safety_factor * force).max(floor.force),
        moment_threshold: (safety_factor * moment).max(floor.moment),
        safety_factor,
        debounce: Debounce::default(),
    })
}

fn check_lengths(estimate: &[f64], truth: &[f64]) -> Result<(), DetectionError> {
    if estimate.len() != truth.len() || truth.len() < 2 {
        return Err(DetectionError::LengthMismatch(estimate.len(), truth.len()));
    }
    Ok(())
}

fn variance(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// RMSE normalized by the observed truth range.
pub fn nrmse(estimate: &[f64], truth: &[f64]) -> Result<f64, DetectionError> {
    check_lengths(estimate, truth)?;
    let max = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = truth.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if !(range > 0.0) {
        return Err(DetectionError::DegenerateRange);
    }
    let mse = estimate.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).sum::<f64>() / truth.len() as f64;
    Ok(mse.sqrt() / range)
}

/// `10 log10(var(truth) / var(error))` in dB, capped at [`SNR_CAP_DB`].
pub fn snr(estimate: &[f64], truth: &[f64]) -> Result<f64, DetectionError> {
    check_lengths(estimate, truth)?;
    let signal = variance(truth.iter().copied());
    if !(signal > 0.0) {
        return Err(DetectionError::DegenerateRange);
    }
    let noise = variance(estimate.iter().zip(truth).map(|(e, t)| e - t));
    if noise == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (signal / noise).log10()).min(SNR_CAP_DB))
}

/// Relative latency reduction `(mo − direct) / mo`, in percent.
pub fn reduction_percent(mo_ms: Option<f64>, direct_ms: Option<f64>) -> Option<f64> {
    match (mo_ms, direct_ms) {
        (Some(mo), Some(direct)) if mo > 0.0 => Some(100.0 * (mo - direct) / mo),
        (Some(mo), Some(direct)) if mo == direct => Some(0.0),
        _ => None,
    }
}

/// Thresholds for the direct method and for every observer gain of a log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodThresholds {
    pub direct: DetectorConfig,
    /// `(gain, thresholds)` in log order.
    pub observers: Vec<(f64, DetectorConfig)>,
}

impl MethodThresholds {
    /// The same thresholds for every method.
    pub fn uniform(cfg: DetectorConfig, gains: &[f64]) -> Self {
        Self {
            direct: cfg,
            observers: gains.iter().map(|&k| (k, cfg)).collect(),
        }
    }

    /// Calibrates every method on a contact-free log.
    pub fn calibrate(log: &SimLog, safety_factor: f64, floor: &ThresholdFloor) -> Result<Self, DetectionError> {
        let direct = calibrate_thresholds(&log.direct_series(), safety_factor, floor)?;
        let observers = log
            .observer_gains
            .iter()
            .enumerate()
            .map(|(i, &k)| Ok((k, calibrate_thresholds(&log.observer_series(i), safety_factor, floor)?)))
            .collect::<Result<_, DetectionError>>()?;
        Ok(Self { direct, observers })
    }

    pub fn observer(&self, gain: f64) -> Option<&DetectorConfig> {
        self.observers.iter().find(|(k, _)| *k == gain).map(|(_, c)| c)
    }
}

/// Detection results of one log under a set of thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDetections {
    pub scenario: String,
    pub onset: Option<f64>,
    pub direct: DetectionReport,
    /// `(gain, report)` in log order.
    pub observers: Vec<(f64, DetectionReport)>,
}

impl ScenarioDetections {
    pub fn evaluate(log: &SimLog, thresholds: &MethodThresholds) -> Self {
        let times = log.times();
        let onset = log.onset();
        let direct = detect(&log.direct_series(), &times, &thresholds.direct, onset);
        let observers = log
            .observer_gains
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let cfg = thresholds.observer(k).unwrap_or(&thresholds.direct);
                (k, detect(&log.observer_series(i), &times, cfg, onset))
            })
            .collect();
        Self {
            scenario: log.name.clone(),
            onset,
            direct,
            observers,
        }
    }

    pub fn any_false_positive(&self) -> bool {
        self.direct.false_positive || self.observers.iter().any(|(_, r)| r.false_positive)
    }

    pub fn observer(&self, gain: f64) -> Option<&DetectionReport> {
        self.observers.iter().find(|(k, _)| *k == gain).map(|(_, r)| r)
    }
}

/// Per-tick threshold flags for each method, for log export.
pub fn detection_flags(log: &SimLog, thresholds: &MethodThresholds) -> Vec<(String, Vec<bool>)> {
    let flags = |series: Vec<Wrench>, cfg: &DetectorConfig| series.iter().map(|w| cfg.exceeded(w).is_some()).collect();
    let mut out = vec![("direct_flag".to_string(), flags(log.direct_series(), &thresholds.direct))];
    for (i, &k) in log.observer_gains.iter().enumerate() {
        let cfg = thresholds.observer(k).unwrap_or(&thresholds.direct);
        out.push((format!("mo{}_flag", format!("{k}").replace('.', "p")), flags(log.observer_series(i), cfg)));
    }
    out
}

/// Latency summary: one row per scenario, one column per observer gain plus
/// the direct method, and the paired reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub gains: Vec<f64>,
    pub force_thresholds: Vec<f64>,
    pub moment_thresholds: Vec<f64>,
    pub rows: Vec<LatencyRow>,
    /// Observer gain compared against the direct method in the reduction column.
    pub paired_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub scenario: String,
    /// Per gain, then the direct method; `None` when not detected.
    pub latencies_ms: Vec<Option<f64>>,
    pub reduction_percent: Option<f64>,
}

const MISSING: &str = "-";

fn cell(v: Option<f64>) -> String {
    v.map_or(MISSING.to_string(), |x| format!("{x:.0}"))
}

/// Builds the table from per-scenario detections. The reduction column
/// compares `paired` detections (direct vs observer at `paired_gain`) when
/// given, otherwise the main detections.
pub fn latency_table(
    detections: &[ScenarioDetections],
    thresholds: &MethodThresholds,
    paired: Option<(f64, &[ScenarioDetections])>,
) -> LatencyTable {
    let gains: Vec<f64> = thresholds.observers.iter().map(|(k, _)| *k).collect();
    let mut force_thresholds: Vec<f64> = thresholds.observers.iter().map(|(_, c)| c.force_threshold).collect();
    let mut moment_thresholds: Vec<f64> = thresholds.observers.iter().map(|(_, c)| c.moment_threshold).collect();
    force_thresholds.push(thresholds.direct.force_threshold);
    moment_thresholds.push(thresholds.direct.moment_threshold);
    let rows = detections
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut latencies_ms: Vec<Option<f64>> =
                gains.iter().map(|k| d.observer(*k).and_then(valid_latency)).collect();
            latencies_ms.push(valid_latency(&d.direct));
            let reduction = paired.and_then(|(gain, pairs)| {
                let p = pairs.get(i)?;
                reduction_percent(p.observer(gain).and_then(valid_latency), valid_latency(&p.direct))
            });
            LatencyRow {
                scenario: d.scenario.clone(),
                latencies_ms,
                reduction_percent: reduction,
            }
        })
        .collect();
    LatencyTable {
        gains,
        force_thresholds,
        moment_thresholds,
        rows,
        paired_gain: paired.map(|(k, _)| k),
    }
}

/// Latency of a detection after onset; false positives count as missing.
fn valid_latency(r: &DetectionReport) -> Option<f64> {
    if r.false_positive {
        None
    } else {
        r.latency_ms
    }
}

impl LatencyTable {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["scenario".to_string()];
        h.extend(self.gains.iter().map(|k| format!("mo_{k}")));
        h.push("direct".into());
        h.push("reduction_percent".into());
        h
    }

    fn body(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        let mut f = vec!["threshold_N".to_string()];
        f.extend(self.force_thresholds.iter().map(|v| format!("{v:.1}")));
        f.push(String::new());
        rows.push(f);
        let mut m = vec!["threshold_Nm".to_string()];
        m.extend(self.moment_thresholds.iter().map(|v| format!("{v:.2}")));
        m.push(String::new());
        rows.push(m);
        for r in &self.rows {
            let mut row = vec![r.scenario.clone()];
            row.extend(r.latencies_ms.iter().map(|v| cell(*v)));
            row.push(cell(r.reduction_percent));
            rows.push(row);
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in std::iter::once(self.header()).chain(self.body()) {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Column-aligned plain text.
    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = std::iter::once(self.header()).chain(self.body()).collect();
        let columns = rows[0].len();
        let widths: Vec<usize> = (0..columns)
            .map(|c| rows.iter().map(|r| r.get(c).map_or(0, |s| s.len())).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (columns - 1)));
            }
        }
        out
    }
}
