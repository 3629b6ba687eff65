//! Summary statistics and composite QoE scores over traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::SessionTrace;

/// Weights of the two QoE scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QoeMetricParams {
    /// Rate-switch weight in `qoe1`.
    pub xi: f64,
    /// Rebuffering weight in `qoe1`.
    pub psi: f64,
    /// Quality-switch weight in `qoe2`.
    pub phi: f64,
    /// Buffer-shortfall weight in `qoe2`.
    pub sigma: f64,
    /// Rebuffering weight in `qoe2`.
    pub eta: f64,
    pub b_ref: f64,
}

impl Default for QoeMetricParams {
    fn default() -> Self {
        QoeMetricParams {
            xi: 1.0,
            psi: 6.0,
            phi: 2.0,
            sigma: 0.001,
            eta: 2.0,
            b_ref: 15.0,
        }
    }
}

impl QoeMetricParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("xi", self.xi),
            ("psi", self.psi),
            ("phi", self.phi),
            ("sigma", self.sigma),
            ("eta", self.eta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(name, format!("must be >= 0, got {v}")));
            }
        }
        if !(self.b_ref.is_finite() && self.b_ref > 0.0) {
            return Err(Error::validation("b_ref", "must be > 0"));
        }
        Ok(())
    }
}

/// Per-segment inputs of the QoE scores. `b` is the buffer at download start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QoeSample {
    pub r: f64,
    pub q: f64,
    pub t_down: f64,
    pub b: f64,
}

pub fn samples(trace: &SessionTrace) -> Vec<QoeSample> {
    trace
        .records
        .iter()
        .map(|rec| QoeSample {
            r: rec.requested_rate,
            q: rec.quality,
            t_down: rec.download_time,
            b: rec.buffer_at_start(trace.segment_duration),
        })
        .collect()
}

fn rebuffer(s: &[QoeSample]) -> f64 {
    s.iter().map(|x| (x.t_down - x.b).max(0.0)).sum()
}

/// `sum r - xi sum |dr| - psi sum max(0, T_down - b)`.
pub fn qoe1_samples(s: &[QoeSample], p: &QoeMetricParams) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let rates: f64 = s.iter().map(|x| x.r).sum();
    let switches: f64 = s.windows(2).map(|w| (w[1].r - w[0].r).abs()).sum();
    Ok(rates - p.xi * switches - p.psi * rebuffer(s))
}

/// `sum q - phi sum |dq| - sigma sum max(0, b_ref - b[k+1])^2 - eta sum max(0, T_down - b)`.
pub fn qoe2_samples(s: &[QoeSample], p: &QoeMetricParams) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let quality: f64 = s.iter().map(|x| x.q).sum();
    let switches: f64 = s.windows(2).map(|w| (w[1].q - w[0].q).abs()).sum();
    let shortfall: f64 = s.windows(2).map(|w| (p.b_ref - w[1].b).max(0.0).powi(2)).sum();
    Ok(quality - p.phi * switches - p.sigma * shortfall - p.eta * rebuffer(s))
}

pub fn qoe1(trace: &SessionTrace, p: &QoeMetricParams) -> Result<f64> {
    qoe1_samples(&samples(trace), p)
}

pub fn qoe2(trace: &SessionTrace, p: &QoeMetricParams) -> Result<f64> {
    qoe2_samples(&samples(trace), p)
}

pub const DEFAULT_SWITCH_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SwitchMode {
    /// Count changes of the ladder rung.
    Quantized,
    /// Count requested-rate moves larger than `threshold` Mbps.
    Continuous { threshold: f64 },
}

impl Default for SwitchMode {
    fn default() -> Self {
        SwitchMode::Continuous {
            threshold: DEFAULT_SWITCH_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub avg_rate: f64,
    pub rate_stddev: f64,
    pub switch_count: usize,
    pub avg_switch_amplitude: f64,
    pub avg_quality: f64,
    pub quality_stddev: f64,
    pub stall_count: usize,
    pub stall_total: f64,
    pub avg_buffer: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.iter().all(|&x| x == v[0]) {
        return (v[0], 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Statistics over the rate series used for switching: rungs in quantized
/// mode, requested rates otherwise.
pub fn summarize(trace: &SessionTrace, mode: SwitchMode) -> Result<SummaryStats> {
    let recs = &trace.records;
    if recs.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let rates: Vec<f64> = match mode {
        SwitchMode::Quantized => recs.iter().map(|r| r.quantized_rate).collect(),
        SwitchMode::Continuous { .. } => recs.iter().map(|r| r.requested_rate).collect(),
    };
    let (avg_rate, rate_stddev) = mean_std(&rates);
    let jumps: Vec<f64> = rates
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .filter(|&d| match mode {
            SwitchMode::Quantized => d > 0.0,
            SwitchMode::Continuous { threshold } => d > threshold,
        })
        .collect();
    let avg_switch_amplitude = if jumps.is_empty() {
        0.0
    } else {
        jumps.iter().sum::<f64>() / jumps.len() as f64
    };
    let q: Vec<f64> = recs.iter().map(|r| r.quality).collect();
    let (avg_quality, quality_stddev) = mean_std(&q);
    let stalls: Vec<f64> = recs.iter().map(|r| r.stall_seconds).filter(|&s| s > 0.0).collect();
    let b: Vec<f64> = recs.iter().map(|r| r.buffer).collect();
    Ok(SummaryStats {
        avg_rate,
        rate_stddev,
        switch_count: jumps.len(),
        avg_switch_amplitude,
        avg_quality,
        quality_stddev,
        stall_count: stalls.len(),
        stall_total: stalls.iter().sum(),
        avg_buffer: mean_std(&b).0,
    })
}

/// One user's row in a summary document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSummary {
    pub user_id: usize,
    pub policy: String,
    #[serde(flatten)]
    pub stats: SummaryStats,
    pub qoe1: f64,
    pub qoe2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub switch_mode: SwitchMode,
    pub weights: QoeMetricParams,
    pub users: Vec<UserSummary>,
}

/// Summaries of every non-empty trace. `b_ref` values per user override
/// the weight set's reference buffer.
pub fn summarize_scenario(
    name: &str,
    traces: &[SessionTrace],
    b_refs: &[f64],
    mode: SwitchMode,
    weights: QoeMetricParams,
) -> Result<ScenarioSummary> {
    weights.validate()?;
    let mut users = Vec::new();
    for (i, tr) in traces.iter().enumerate() {
        if tr.records.is_empty() {
            continue;
        }
        let w = QoeMetricParams {
            b_ref: b_refs.get(i).copied().unwrap_or(weights.b_ref),
            ..weights
        };
        users.push(UserSummary {
            user_id: tr.user_id,
            policy: tr.policy.name().to_string(),
            stats: summarize(tr, mode)?,
            qoe1: qoe1(tr, &w)?,
            qoe2: qoe2(tr, &w)?,
        });
    }
    Ok(ScenarioSummary {
        scenario: name.to_string(),
        switch_mode: mode,
        weights,
        users,
    })
}
