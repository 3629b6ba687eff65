//! Fluid simulation of users sharing one server bottleneck.
//!
//! Downloads accrue bits at their max-min fair share between events; events
//! are segment completions, bandwidth or cap changes, buffer depletions and
//! the end of payoff exchanges.

mod profile;
mod scenario;
mod sim;

pub use profile::{bandwidth_at, make_profile, BandwidthProfile, ChannelCap, ProfileKind, ProfileSchedule};
pub use scenario::{BaselineConfig, GameSection, PolicyKind, Scenario, ServerSpec, SimConfig, UserSpec, VideoSpec};
pub use sim::{run_scenario, SessionTrace, TraceRecord, MAX_EVENTS};

use crate::error::{Error, Result};
use crate::model::VideoQualityModel;

/// Max-min fair shares by progressive filling. `caps[i] = None` means
/// unlimited; inactive users receive 0.
pub fn allocate_shares(bandwidth: f64, caps: &[Option<f64>], active: &[bool]) -> Result<Vec<f64>> {
    if !(bandwidth > 0.0) {
        return Err(Error::Domain(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    if caps.len() != active.len() {
        return Err(Error::Domain(format!(
            "{} caps for {} users",
            caps.len(),
            active.len()
        )));
    }
    let mut shares = vec![0.0; caps.len()];
    let mut open: Vec<usize> = (0..caps.len()).filter(|&i| active[i]).collect();
    let mut left = bandwidth;
    while !open.is_empty() {
        let fair = left / open.len() as f64;
        let (frozen, rest): (Vec<usize>, Vec<usize>) =
            open.iter().partition(|&&i| matches!(caps[i], Some(c) if c <= fair));
        if frozen.is_empty() {
            for &i in &rest {
                shares[i] = fair;
            }
            break;
        }
        for &i in &frozen {
            let c = caps[i].expect("frozen users are capped");
            shares[i] = c;
            left -= c;
        }
        open = rest;
    }
    Ok(shares)
}

/// Largest rung not above `r`; the lowest rung when `r` is below the ladder.
pub fn quantize_rate(ladder: &[f64], r: f64) -> Result<f64> {
    crate::baselines::floor_rung(ladder, r)
}

/// The `nu` that makes `B_W / N` the symmetric equilibrium rate when the
/// buffer sits on its reference: `(ab/(1+b r) + mu T) B_W / (T N r)`.
pub fn calibrate_nu(mu: f64, segment_duration: f64, model: &VideoQualityModel, bandwidth: f64, n_users: usize) -> Result<f64> {
    if n_users == 0 {
        return Err(Error::Domain("calibration needs at least one user".into()));
    }
    if !(bandwidth > 0.0 && segment_duration > 0.0 && mu > 0.0) {
        return Err(Error::Domain("calibration needs positive mu, T and B_W".into()));
    }
    let n = n_users as f64;
    let target = bandwidth / n;
    let marginal = model.alpha * model.beta / (1.0 + model.beta * target) + mu * segment_duration;
    Ok(marginal * bandwidth / (segment_duration * n * target))
}
