//! Reference policies for comparison runs.
//!
//! Quality-first (QF) chases the throughput estimate and ignores the buffer
//! once playback has started. Buffer-first (BF) scales the estimate by the
//! relative buffer error. Both are reconstructions, not the original
//! algorithms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STARTUP_THRESHOLD: f64 = 10.0;
pub const DEFAULT_BF_GAIN: f64 = 0.5;
pub const DEFAULT_EWMA_WEIGHT: f64 = 0.3;

/// Exponentially weighted throughput estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputEstimator {
    pub weight: f64,
    pub last_measured: Option<f64>,
    pub ewma: Option<f64>,
}

impl ThroughputEstimator {
    pub fn new(weight: f64) -> Result<Self> {
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(Error::validation("weight", format!("must lie in (0, 1], got {weight}")));
        }
        Ok(ThroughputEstimator {
            weight,
            last_measured: None,
            ewma: None,
        })
    }

    /// Record a completed download of `megabits` taking `seconds`.
    pub fn observe(&mut self, megabits: f64, seconds: f64) -> Result<()> {
        if !(megabits > 0.0 && seconds > 0.0) {
            return Err(Error::Domain(format!(
                "throughput sample needs positive size and time, got {megabits} Mbit in {seconds} s"
            )));
        }
        self.observe_rate(megabits / seconds);
        Ok(())
    }

    pub fn observe_rate(&mut self, sample: f64) {
        self.last_measured = Some(sample);
        self.ewma = Some(match self.ewma {
            None => sample,
            Some(old) => self.weight * sample + (1.0 - self.weight) * old,
        });
    }

    pub fn estimate(&self) -> Option<f64> {
        self.ewma
    }
}

impl Default for ThroughputEstimator {
    fn default() -> Self {
        ThroughputEstimator::new(DEFAULT_EWMA_WEIGHT).expect("default weight is valid")
    }
}

/// Largest rung not above `r`, or the lowest rung.
pub(crate) fn floor_rung(ladder: &[f64], r: f64) -> Result<f64> {
    let lowest = *ladder
        .first()
        .ok_or_else(|| Error::Domain("bitrate ladder is empty".into()))?;
    Ok(ladder.iter().copied().take_while(|&x| x <= r).last().unwrap_or(lowest))
}

pub fn qf_decide(est: &ThroughputEstimator, ladder: &[f64], b_curr: f64, startup_threshold: f64) -> Result<f64> {
    match est.estimate() {
        Some(e) if b_curr >= startup_threshold => floor_rung(ladder, e),
        _ => floor_rung(ladder, f64::NEG_INFINITY),
    }
}

pub fn bf_decide(est: &ThroughputEstimator, ladder: &[f64], b_curr: f64, b_ref: f64, gain: f64) -> Result<f64> {
    if !(b_ref > 0.0) {
        return Err(Error::Domain(format!("b_ref must be > 0, got {b_ref}")));
    }
    match est.estimate() {
        Some(e) => floor_rung(ladder, e * (1.0 + gain * (b_curr - b_ref) / b_ref)),
        None => floor_rung(ladder, f64::NEG_INFINITY),
    }
}
