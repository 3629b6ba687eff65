//! Piecewise-constant server bandwidth and per-user channel caps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Fixed,
    Persistent,
    Staged,
    ShortTerm,
    Custom,
}

impl ProfileKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProfileKind::Fixed => "fixed",
            ProfileKind::Persistent => "persistent",
            ProfileKind::Staged => "staged",
            ProfileKind::ShortTerm => "short_term",
            ProfileKind::Custom => "custom",
        }
    }
}

impl std::str::FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fixed" => ProfileKind::Fixed,
            "persistent" => ProfileKind::Persistent,
            "staged" => ProfileKind::Staged,
            "short_term" | "short-term" | "short" => ProfileKind::ShortTerm,
            "custom" => ProfileKind::Custom,
            other => return Err(Error::validation("kind", format!("unknown profile kind `{other}`"))),
        })
    }
}

/// Right-continuous step function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthProfile {
    pub kind: ProfileKind,
    /// `(t seconds, bandwidth Mbps)`, starting at `t = 0`.
    pub breakpoints: Vec<(f64, f64)>,
}

impl BandwidthProfile {
    pub fn new(kind: ProfileKind, breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        let profile = BandwidthProfile { kind, breakpoints };
        profile.validate("breakpoints")?;
        Ok(profile)
    }

    pub fn constant(bandwidth: f64) -> Result<Self> {
        Self::new(ProfileKind::Fixed, vec![(0.0, bandwidth)])
    }

    /// Check the breakpoint invariants; `field` prefixes error paths.
    pub fn validate(&self, field: &str) -> Result<()> {
        validate_steps(&self.breakpoints, field)
    }

    pub fn at(&self, t: f64) -> f64 {
        step_value(&self.breakpoints, t)
    }

    /// First breakpoint strictly after `t`.
    pub fn next_change_after(&self, t: f64) -> Option<f64> {
        next_step(&self.breakpoints, t)
    }

    pub fn change_times(&self) -> Vec<f64> {
        self.breakpoints.iter().skip(1).map(|&(t, _)| t).collect()
    }
}

pub fn bandwidth_at(profile: &BandwidthProfile, t: f64) -> f64 {
    profile.at(t)
}

fn validate_steps(steps: &[(f64, f64)], field: &str) -> Result<()> {
    match steps.first() {
        None => return Err(Error::validation(field, "needs at least one breakpoint")),
        Some(&(t0, _)) if t0 != 0.0 => {
            return Err(Error::validation(format!("{field}[0]"), format!("must start at t = 0, got {t0}")))
        }
        _ => {}
    }
    for (i, &(t, v)) in steps.iter().enumerate() {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::validation(format!("{field}[{i}]"), format!("value must be > 0, got {v}")));
        }
        if !t.is_finite() || (i > 0 && t <= steps[i - 1].0) {
            return Err(Error::validation(format!("{field}[{i}]"), "times must be strictly increasing"));
        }
    }
    Ok(())
}

fn step_value(steps: &[(f64, f64)], t: f64) -> f64 {
    let idx = steps.partition_point(|&(bt, _)| bt <= t);
    steps[idx.saturating_sub(1)].1
}

fn next_step(steps: &[(f64, f64)], t: f64) -> Option<f64> {
    let idx = steps.partition_point(|&(bt, _)| bt <= t);
    steps.get(idx).map(|&(bt, _)| bt)
}

/// Shape parameters for [`make_profile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileSchedule {
    /// Alternating base/raised level for the persistent kind; `None` means 1.5x base.
    pub persistent_level: Option<f64>,
    pub persistent_times: Vec<f64>,
    /// Offsets from base for successive stages.
    pub staged_offsets: Vec<f64>,
    pub staged_times: Vec<f64>,
    /// Signed offsets of the short excursions.
    pub excursion_offsets: Vec<f64>,
    pub excursion_times: Vec<f64>,
    pub excursion_duration: f64,
}

impl Default for ProfileSchedule {
    fn default() -> Self {
        ProfileSchedule {
            persistent_level: None,
            persistent_times: vec![100.0, 200.0, 300.0],
            staged_offsets: vec![2.0, 0.0, -2.0, 0.0],
            staged_times: vec![100.0, 180.0, 260.0, 340.0],
            excursion_offsets: vec![-2.0, 2.0],
            excursion_times: vec![100.0, 260.0],
            excursion_duration: 10.0,
        }
    }
}

pub fn make_profile(kind: ProfileKind, base: f64, schedule: &ProfileSchedule) -> Result<BandwidthProfile> {
    if !(base.is_finite() && base > 0.0) {
        return Err(Error::validation("base", format!("must be > 0, got {base}")));
    }
    let mut bp = vec![(0.0, base)];
    match kind {
        ProfileKind::Fixed => {}
        ProfileKind::Persistent => {
            let high = schedule.persistent_level.unwrap_or(1.5 * base);
            for (i, &t) in schedule.persistent_times.iter().enumerate() {
                bp.push((t, if i % 2 == 0 { high } else { base }));
            }
        }
        ProfileKind::Staged => {
            if schedule.staged_offsets.len() != schedule.staged_times.len() {
                return Err(Error::validation("staged_offsets", "needs one offset per change time"));
            }
            for (&t, &d) in schedule.staged_times.iter().zip(&schedule.staged_offsets) {
                bp.push((t, base + d));
            }
        }
        ProfileKind::ShortTerm => {
            if schedule.excursion_offsets.len() != schedule.excursion_times.len() {
                return Err(Error::validation("excursion_offsets", "needs one offset per excursion"));
            }
            for (&t, &d) in schedule.excursion_times.iter().zip(&schedule.excursion_offsets) {
                bp.push((t, base + d));
                bp.push((t + schedule.excursion_duration, base));
            }
        }
        ProfileKind::Custom => {
            return Err(Error::validation("kind", "custom profiles need explicit breakpoints"));
        }
    }
    BandwidthProfile::new(kind, bp)
}

/// Per-user channel limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelCap {
    Unlimited,
    /// Step function `(t, cap Mbps)` starting at `t = 0`.
    Piecewise { breakpoints: Vec<(f64, f64)> },
    /// A fresh uniform draw in `[low, high]` every `interval` seconds.
    /// The stream is fixed by the run seed and the user index.
    Random {
        low: f64,
        high: f64,
        interval: f64,
        #[serde(skip)]
        stream: Option<(u64, u64)>,
    },
}

impl Default for ChannelCap {
    fn default() -> Self {
        ChannelCap::Unlimited
    }
}

impl ChannelCap {
    pub fn constant(cap: f64) -> Self {
        ChannelCap::Piecewise {
            breakpoints: vec![(0.0, cap)],
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        match self {
            ChannelCap::Unlimited => Ok(()),
            ChannelCap::Piecewise { breakpoints } => validate_steps(breakpoints, &format!("{field}.breakpoints")),
            ChannelCap::Random { low, high, interval, .. } => {
                if !(low.is_finite() && *low > 0.0) {
                    return Err(Error::validation(format!("{field}.low"), format!("must be > 0, got {low}")));
                }
                if !(high.is_finite() && high >= low) {
                    return Err(Error::validation(format!("{field}.high"), format!("must be >= low, got {high}")));
                }
                if !(interval.is_finite() && *interval > 0.0) {
                    return Err(Error::validation(
                        format!("{field}.interval"),
                        format!("must be > 0, got {interval}"),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Fix the random stream of a `Random` cap; no-op otherwise.
    pub fn seeded(mut self, seed: u64, user: usize) -> Self {
        if let ChannelCap::Random { stream, .. } = &mut self {
            *stream = Some((seed, user as u64));
        }
        self
    }

    pub fn at(&self, t: f64) -> Option<f64> {
        match self {
            ChannelCap::Unlimited => None,
            ChannelCap::Piecewise { breakpoints } => Some(step_value(breakpoints, t)),
            ChannelCap::Random {
                low,
                high,
                interval,
                stream,
            } => {
                let (seed, user) = stream.unwrap_or((0, 0));
                let slot = (t / interval).floor().max(0.0) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(user);
                // one u64 (two words) per slot gives random access to the sequence
                rng.set_word_pos(2 * slot as u128);
                let u: f64 = rng.gen();
                Some(low + u * (high - low))
            }
        }
    }

    pub fn next_change_after(&self, t: f64) -> Option<f64> {
        match self {
            ChannelCap::Unlimited => None,
            ChannelCap::Piecewise { breakpoints } => next_step(breakpoints, t),
            ChannelCap::Random { interval, .. } => {
                let next = ((t / interval).floor() + 1.0) * interval;
                Some(if next > t { next } else { next + interval })
            }
        }
    }
}
