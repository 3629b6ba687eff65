//! Rate-quality curve, estimated-buffer model and the per-user utility.
//!
//! Every function here is pure. Rates are real-valued Mbps; mapping onto a
//! bitrate ladder happens in the simulator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar constants shared by every player of the game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    /// Weight of the buffer term against quality.
    pub mu: f64,
    /// Weight of the shared-consumption penalty (`mu * omega`).
    pub nu: f64,
    /// Sensitivity of the adjustment factor to buffer deviation, 1/s.
    pub p: f64,
    /// Segment duration `T` in seconds.
    pub segment_duration: f64,
}

impl GameParams {
    pub fn new(mu: f64, nu: f64, p: f64, segment_duration: f64) -> Result<Self> {
        let params = GameParams {
            mu,
            nu,
            p,
            segment_duration,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        positive("mu", self.mu)?;
        positive("nu", self.nu)?;
        positive("p", self.p)?;
        positive("segment_duration", self.segment_duration)
    }

    /// Download-time coefficient relating total demand to buffer drain.
    pub fn omega(&self) -> f64 {
        self.nu / self.mu
    }
}

/// Logarithmic rate-quality curve `alpha * ln(1 + beta * r)` plus the
/// encoded bitrate ladder of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoQualityModel {
    pub alpha: f64,
    pub beta: f64,
    /// Available bitrates in Mbps, strictly increasing.
    pub ladder: Vec<f64>,
    #[serde(default)]
    pub metric_label: String,
}

impl VideoQualityModel {
    pub fn new(alpha: f64, beta: f64, ladder: Vec<f64>) -> Result<Self> {
        let model = VideoQualityModel {
            alpha,
            beta,
            ladder,
            metric_label: String::new(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.metric_label = label.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        positive("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        if self.ladder.is_empty() {
            return Err(Error::validation("ladder", "must not be empty"));
        }
        for (k, &rung) in self.ladder.iter().enumerate() {
            if !(rung.is_finite() && rung > 0.0) {
                return Err(Error::validation(
                    format!("ladder[{k}]"),
                    format!("must be finite and > 0, got {rung}"),
                ));
            }
            if k > 0 && rung <= self.ladder[k - 1] {
                return Err(Error::validation(
                    format!("ladder[{k}]"),
                    "ladder must be strictly increasing",
                ));
            }
        }
        Ok(())
    }

    pub fn quality(&self, rate: f64) -> Result<f64> {
        if !(rate >= 0.0) {
            return Err(Error::Domain(format!("rate must be >= 0, got {rate}")));
        }
        Ok(self.alpha * (self.beta * rate).ln_1p())
    }

    /// `d quality / d r`.
    pub fn quality_slope(&self, rate: f64) -> f64 {
        self.alpha * self.beta / (1.0 + self.beta * rate)
    }

    /// `d^2 quality / d r^2`, always negative for a valid model.
    pub fn quality_curvature(&self, rate: f64) -> f64 {
        let s = 1.0 + self.beta * rate;
        -self.alpha * self.beta * self.beta / (s * s)
    }
}

/// The buffer state a user reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferView {
    /// Current buffer occupancy in seconds.
    pub b_curr: f64,
    /// Reference (target) buffer in seconds.
    pub b_ref: f64,
    /// Constant initial average buffer `b_0` in seconds.
    #[serde(default)]
    pub b0: f64,
}

impl BufferView {
    pub fn new(b_curr: f64, b_ref: f64, b0: f64) -> Result<Self> {
        let view = BufferView { b_curr, b_ref, b0 };
        view.validate()?;
        Ok(view)
    }

    /// A buffer sitting exactly on its reference level.
    pub fn at_reference(b_ref: f64) -> Self {
        BufferView {
            b_curr: b_ref,
            b_ref,
            b0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_curr.is_finite() && self.b_curr >= 0.0) {
            return Err(Error::validation("b_curr", "must be finite and >= 0"));
        }
        positive("b_ref", self.b_ref)?;
        if !(self.b0.is_finite() && self.b0 >= 0.0) {
            return Err(Error::validation("b0", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Sigmoid adjustment factor in (0, 2); 1 when the buffer sits on its reference.
///
/// Written as `2 / (1 + e^{-x})` so large positive deviations saturate to 2
/// instead of overflowing.
pub fn adjustment_factor(p: f64, b_curr: f64, b_ref: f64) -> f64 {
    let x = p * (b_curr - b_ref);
    2.0 / (1.0 + (-x).exp())
}

/// Average buffer variation across all users per segment, in seconds.
pub fn avg_buffer_variation(params: &GameParams, rates: &[f64], bandwidth: f64) -> Result<f64> {
    check_bandwidth(bandwidth)?;
    check_rates(rates)?;
    let total: f64 = rates.iter().sum();
    let t = params.segment_duration;
    Ok(t - params.omega() * t * total / bandwidth)
}

/// Estimated buffer of user `i` after its next download, accounting for the
/// consumption caused by everybody's requests.
pub fn estimated_buffer(
    params: &GameParams,
    i: usize,
    rates: &[f64],
    buf: &BufferView,
    bandwidth: f64,
) -> Result<f64> {
    check_index(i, rates.len())?;
    check_bandwidth(bandwidth)?;
    let t = params.segment_duration;
    let r_i = rates[i];
    let others = rates.iter().sum::<f64>() - r_i;
    let af = adjustment_factor(params.p, buf.b_curr, buf.b_ref);
    let revenue = af * t * r_i;
    let penalty = t * (0.5 * r_i * r_i + r_i * others) / bandwidth;
    Ok(revenue - params.omega() * penalty + buf.b0)
}

/// Utility of user `i`: quality plus `mu` times the estimated buffer.
pub fn utility(
    params: &GameParams,
    model: &VideoQualityModel,
    i: usize,
    rates: &[f64],
    buf: &BufferView,
    bandwidth: f64,
) -> Result<f64> {
    check_index(i, rates.len())?;
    let q = model.quality(rates[i])?;
    let t = params.segment_duration;
    let r_i = rates[i];
    let others = rates.iter().sum::<f64>() - r_i;
    let af = adjustment_factor(params.p, buf.b_curr, buf.b_ref);
    check_bandwidth(bandwidth)?;
    // nu * T * (...) / B_W is mu * omega * Psi; keep it in the nu form so the
    // derivative matches the first-order conditions term for term.
    Ok(q + params.mu * af * t * r_i
        - params.nu * t * (0.5 * r_i * r_i + r_i * others) / bandwidth
        + params.mu * buf.b0)
}

/// Own-rate derivative of [`utility`].
pub fn utility_gradient(
    params: &GameParams,
    model: &VideoQualityModel,
    i: usize,
    rates: &[f64],
    buf: &BufferView,
    bandwidth: f64,
) -> Result<f64> {
    check_index(i, rates.len())?;
    check_bandwidth(bandwidth)?;
    if !(rates[i] >= 0.0) {
        return Err(Error::Domain(format!("rate must be >= 0, got {}", rates[i])));
    }
    let t = params.segment_duration;
    let total: f64 = rates.iter().sum();
    let af = adjustment_factor(params.p, buf.b_curr, buf.b_ref);
    Ok(model.quality_slope(rates[i]) + params.mu * t * af - params.nu * t * total / bandwidth)
}

/// `d^2 U_i / (d r_i d r_j)`.
pub fn utility_hessian_entry(
    params: &GameParams,
    model: &VideoQualityModel,
    i: usize,
    j: usize,
    rates: &[f64],
    bandwidth: f64,
) -> Result<f64> {
    check_index(i, rates.len())?;
    check_index(j, rates.len())?;
    check_bandwidth(bandwidth)?;
    let coupling = -params.nu * params.segment_duration / bandwidth;
    if i == j {
        Ok(model.quality_curvature(rates[i]) + coupling)
    } else {
        Ok(coupling)
    }
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(name, format!("must be finite and > 0, got {value}")))
    }
}

fn check_bandwidth(bandwidth: f64) -> Result<()> {
    if bandwidth.is_finite() && bandwidth > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("bandwidth must be > 0, got {bandwidth}")))
    }
}

fn check_rates(rates: &[f64]) -> Result<()> {
    match rates.iter().find(|r| !(**r >= 0.0)) {
        Some(r) => Err(Error::Domain(format!("rate must be >= 0, got {r}"))),
        None => Ok(()),
    }
}

pub(crate) fn check_index(i: usize, len: usize) -> Result<()> {
    if i < len {
        Ok(())
    } else {
        Err(Error::UserIndex { index: i, len })
    }
}
