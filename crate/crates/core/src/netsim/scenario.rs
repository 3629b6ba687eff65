//! Declarative scenario documents.

use serde::{Deserialize, Serialize};

use super::calibrate_nu;
use super::profile::{make_profile, BandwidthProfile, ChannelCap, ProfileKind, ProfileSchedule};
use crate::adapt::{AdaptConfig, UpdateOrder};
use crate::baselines::{DEFAULT_BF_GAIN, DEFAULT_EWMA_WEIGHT, DEFAULT_STARTUP_THRESHOLD};
use crate::error::{Error, Result};
use crate::model::{GameParams, VideoQualityModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Game,
    Qf,
    Bf,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Game => "game",
            PolicyKind::Qf => "qf",
            PolicyKind::Bf => "bf",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "game" => Ok(PolicyKind::Game),
            "qf" => Ok(PolicyKind::Qf),
            "bf" => Ok(PolicyKind::Bf),
            other => Err(Error::validation("policy", format!("unknown policy `{other}` (expected game, qf or bf)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoSpec {
    pub alpha: f64,
    pub beta: f64,
    pub ladder: Vec<f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

impl VideoSpec {
    pub fn model(&self) -> Result<VideoQualityModel> {
        Ok(VideoQualityModel::new(self.alpha, self.beta, self.ladder.clone())?.with_label(self.label.clone()))
    }
}

fn default_b_ref() -> f64 {
    15.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub video: VideoSpec,
    /// Overrides `adapt.theta` for this user.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default = "default_b_ref")]
    pub b_ref: f64,
    #[serde(default)]
    pub cap_profile: ChannelCap,
    #[serde(default)]
    pub policy: PolicyKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec {
    pub kind: ProfileKind,
    /// Base level for generated profiles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<f64>,
    /// Explicit steps; take precedence over `base`/`schedule`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakpoints: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ProfileSchedule>,
}

impl ServerSpec {
    pub fn profile(&self) -> Result<BandwidthProfile> {
        match &self.breakpoints {
            Some(bp) => {
                let p = BandwidthProfile {
                    kind: self.kind,
                    breakpoints: bp.clone(),
                };
                p.validate("server.breakpoints")?;
                Ok(p)
            }
            None => {
                let base = self
                    .base
                    .ok_or_else(|| Error::validation("server.base", "required when no breakpoints are given"))?;
                make_profile(self.kind, base, &self.schedule.clone().unwrap_or_default()).map_err(|e| match e {
                    Error::Validation { field, reason } => Error::validation(format!("server.{field}"), reason),
                    other => other,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSection {
    pub mu: f64,
    /// Required unless `calibrate_nu` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    pub p: f64,
    /// Replace `nu` by the value that puts the symmetric equilibrium at
    /// `B_W / N` with the buffer on its reference.
    #[serde(default)]
    pub calibrate_nu: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub segment_duration: f64,
    pub total_segments: usize,
    pub initial_buffer: f64,
    /// Deliver ladder rungs instead of the continuous requested rate.
    pub quantize: bool,
    pub seed: u64,
    /// Simulated seconds spent on each payoff exchange.
    pub payoff_latency: f64,
    pub update_order: UpdateOrder,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            segment_duration: 2.0,
            total_segments: 150,
            initial_buffer: 2.0,
            quantize: false,
            seed: 0,
            payoff_latency: 0.0,
            update_order: UpdateOrder::Simultaneous,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub ewma_weight: f64,
    pub startup_threshold: f64,
    pub bf_gain: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            ewma_weight: DEFAULT_EWMA_WEIGHT,
            startup_threshold: DEFAULT_STARTUP_THRESHOLD,
            bf_gain: DEFAULT_BF_GAIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub game: GameSection,
    #[serde(default)]
    pub adapt: AdaptConfig,
    pub users: Vec<UserSpec>,
    pub server: ServerSpec,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Validation { field, reason } => Error::validation(format!("{prefix}.{field}"), reason),
        other => other,
    }
}

fn positive(field: impl Into<String>, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be finite and > 0, got {v}")))
    }
}

impl Scenario {
    /// Parse and validate a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| Error::validation("scenario", e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        positive("game.mu", self.game.mu)?;
        positive("game.p", self.game.p)?;
        match self.game.nu {
            Some(nu) => positive("game.nu", nu)?,
            None if !self.game.calibrate_nu => {
                return Err(Error::validation("game.nu", "required unless calibrate_nu is set"))
            }
            None => {}
        }
        self.adapt.validate().map_err(|e| prefixed("adapt", e))?;
        positive("sim.segment_duration", self.sim.segment_duration)?;
        if self.sim.total_segments == 0 {
            return Err(Error::validation("sim.total_segments", "must be at least 1"));
        }
        if !(self.sim.initial_buffer.is_finite() && self.sim.initial_buffer >= 0.0) {
            return Err(Error::validation("sim.initial_buffer", "must be finite and >= 0"));
        }
        if !(self.sim.payoff_latency.is_finite() && self.sim.payoff_latency >= 0.0) {
            return Err(Error::validation("sim.payoff_latency", "must be finite and >= 0"));
        }
        let b = &self.baselines;
        if !(b.ewma_weight > 0.0 && b.ewma_weight <= 1.0) {
            return Err(Error::validation("baselines.ewma_weight", "must lie in (0, 1]"));
        }
        if !(b.startup_threshold.is_finite() && b.startup_threshold >= 0.0) {
            return Err(Error::validation("baselines.startup_threshold", "must be finite and >= 0"));
        }
        if !(b.bf_gain.is_finite() && b.bf_gain >= 0.0) {
            return Err(Error::validation("baselines.bf_gain", "must be finite and >= 0"));
        }
        self.server.profile()?;
        for (i, u) in self.users.iter().enumerate() {
            let path = format!("users[{i}]");
            u.video.model().map_err(|e| prefixed(&format!("{path}.video"), e))?;
            if let Some(theta) = u.theta {
                positive(format!("{path}.theta"), theta)?;
            }
            positive(format!("{path}.b_ref"), u.b_ref)?;
            u.cap_profile.validate(&format!("{path}.cap_profile"))?;
        }
        if self.game.calibrate_nu && !self.users.is_empty() {
            self.calibrated_nu()?;
        }
        Ok(())
    }

    pub fn models(&self) -> Result<Vec<VideoQualityModel>> {
        self.users.iter().map(|u| u.video.model()).collect()
    }

    /// Mean over game-policy users of the per-user calibrated `nu`, which
    /// is exact when the users share one video.
    pub fn calibrated_nu(&self) -> Result<f64> {
        let bandwidth = self.server.profile()?.at(0.0);
        let n = self.users.len();
        let picks: Vec<&UserSpec> = {
            let game: Vec<&UserSpec> = self.users.iter().filter(|u| u.policy == PolicyKind::Game).collect();
            if game.is_empty() {
                self.users.iter().collect()
            } else {
                game
            }
        };
        if picks.is_empty() {
            return Err(Error::validation("users", "calibration needs at least one user"));
        }
        let mut total = 0.0;
        for u in &picks {
            total += calibrate_nu(self.game.mu, self.sim.segment_duration, &u.video.model()?, bandwidth, n)?;
        }
        Ok(total / picks.len() as f64)
    }

    pub fn game_params(&self) -> Result<GameParams> {
        let nu = if self.game.calibrate_nu {
            self.calibrated_nu()?
        } else {
            self.game
                .nu
                .ok_or_else(|| Error::validation("game.nu", "required unless calibrate_nu is set"))?
        };
        GameParams::new(self.game.mu, nu, self.game.p, self.sim.segment_duration)
    }

    pub fn adapt_config(&self, user: usize) -> AdaptConfig {
        let mut cfg = self.adapt;
        if let Some(theta) = self.users[user].theta {
            cfg.theta = theta;
        }
        cfg
    }

    /// Set every user's learning rate.
    pub fn set_theta(&mut self, theta: f64) {
        self.adapt.theta = theta;
        for u in &mut self.users {
            u.theta = Some(theta);
        }
    }

    pub fn set_policy(&mut self, policy: PolicyKind) {
        for u in &mut self.users {
            u.policy = policy;
        }
    }
}
