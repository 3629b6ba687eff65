//! Distributed iterative rate adaptation.
//!
//! Clients never see each other's rates. After every segment a client sends
//! its buffer level and last requested rate to the server, the server answers
//! with a central-difference estimate of the client's payoff gradient, and
//! the client applies the multiplicative sub-gradient step
//! `r <- r + theta * r * dU/dr`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, BufferView, GameParams, VideoQualityModel};

/// Client-side update parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    /// Learning rate.
    pub theta: f64,
    /// Perturbation used by the server's central difference, Mbps.
    pub epsilon: f64,
    pub r_init: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// Largest allowed relative change per update; `None` disables the clamp.
    pub max_step_fraction: Option<f64>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            theta: 50.0,
            epsilon: 1e-4,
            r_init: 0.1,
            r_min: 0.05,
            r_max: 10.0,
            max_step_fraction: Some(0.25),
        }
    }
}

impl AdaptConfig {
    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn unclamped(mut self) -> Self {
        self.max_step_fraction = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(name, format!("must be finite and > 0, got {v}")))
            }
        };
        pos("theta", self.theta)?;
        pos("epsilon", self.epsilon)?;
        pos("r_min", self.r_min)?;
        pos("r_max", self.r_max)?;
        if !(self.r_min <= self.r_init && self.r_init <= self.r_max) {
            return Err(Error::validation(
                "r_init",
                format!(
                    "must satisfy r_min <= r_init <= r_max ({} <= {} <= {})",
                    self.r_min, self.r_init, self.r_max
                ),
            ));
        }
        if self.epsilon >= self.r_min {
            return Err(Error::validation("epsilon", "must be much smaller than r_min"));
        }
        if let Some(f) = self.max_step_fraction {
            pos("max_step_fraction", f)?;
        }
        Ok(())
    }
}

/// Client to server: "here is my state, what is my payoff gradient?"
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffQuery {
    #[serde(rename = "user")]
    pub user_id: usize,
    pub b_curr: f64,
    pub last_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffReply {
    #[serde(rename = "user")]
    pub user_id: usize,
    #[serde(rename = "grad")]
    pub gradient_estimate: f64,
}

/// One line of the newline-delimited JSON payoff protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    PayoffQuery(PayoffQuery),
    PayoffReply(PayoffReply),
}

impl Message {
    pub fn to_line(&self) -> String {
        // Serializing plain structs of numbers cannot fail.
        serde_json::to_string(self).expect("message serialization")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let msg: Message =
            serde_json::from_str(line.trim()).map_err(|e| Error::Protocol(e.to_string()))?;
        let finite = match msg {
            Message::PayoffQuery(q) => q.b_curr.is_finite() && q.last_rate.is_finite(),
            Message::PayoffReply(r) => r.gradient_estimate.is_finite(),
        };
        if !finite {
            return Err(Error::Protocol("non-finite field".into()));
        }
        Ok(msg)
    }
}

/// Central-difference estimate of user `i`'s own-rate payoff gradient,
/// perturbing only coordinate `i`.
pub fn payoff_gradient_server(
    params: &GameParams,
    model: &VideoQualityModel,
    bandwidth: f64,
    all_last_rates: &[f64],
    i: usize,
    buf: &BufferView,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be > 0, got {epsilon}")));
    }
    if i >= all_last_rates.len() {
        return Err(Error::UnknownUser(i));
    }
    let mut perturbed = all_last_rates.to_vec();
    perturbed[i] = all_last_rates[i] + epsilon;
    let up = model::utility(params, model, i, &perturbed, buf, bandwidth)?;
    // The log term is undefined below zero; a one-sided difference keeps the
    // estimate usable for rates within epsilon of zero.
    let lower = all_last_rates[i] - epsilon;
    if lower < 0.0 {
        perturbed[i] = all_last_rates[i];
        let mid = model::utility(params, model, i, &perturbed, buf, bandwidth)?;
        return Ok((up - mid) / epsilon);
    }
    perturbed[i] = lower;
    let down = model::utility(params, model, i, &perturbed, buf, bandwidth)?;
    Ok((up - down) / (2.0 * epsilon))
}

#[derive(Debug, Clone)]
struct ServerEntry {
    model: VideoQualityModel,
    buf: BufferView,
    last_rate: f64,
}

/// Server side of the payoff exchange.
///
/// Queries update the table of reported buffers and rates; replies are
/// computed from whatever snapshot the table holds when [`PayoffServer::reply`]
/// is called, so a batch of queries registered together sees one snapshot.
#[derive(Debug, Clone)]
pub struct PayoffServer {
    params: GameParams,
    bandwidth: f64,
    epsilon: f64,
    users: Vec<ServerEntry>,
}

impl PayoffServer {
    pub fn new(params: GameParams, bandwidth: f64, epsilon: f64) -> Self {
        PayoffServer {
            params,
            bandwidth,
            epsilon,
            users: Vec::new(),
        }
    }

    /// Register a user; returns its id.
    pub fn add_user(&mut self, model: VideoQualityModel, buf: BufferView, initial_rate: f64) -> usize {
        self.users.push(ServerEntry {
            model,
            buf,
            last_rate: initial_rate,
        });
        self.users.len() - 1
    }

    pub fn set_bandwidth(&mut self, bandwidth: f64) {
        self.bandwidth = bandwidth;
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn last_rates(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.last_rate).collect()
    }

    /// Record the state a user reported.
    pub fn register(&mut self, query: &PayoffQuery) -> Result<()> {
        let entry = self
            .users
            .get_mut(query.user_id)
            .ok_or(Error::UnknownUser(query.user_id))?;
        if !(query.b_curr.is_finite() && query.last_rate.is_finite()) {
            return Err(Error::Protocol("non-finite query field".into()));
        }
        entry.buf.b_curr = query.b_curr.max(0.0);
        entry.last_rate = query.last_rate;
        Ok(())
    }

    /// Set a user's rate in the table without a buffer report (e.g. a user
    /// that finished its session and no longer loads the link).
    pub fn set_rate(&mut self, user_id: usize, rate: f64) -> Result<()> {
        let entry = self.users.get_mut(user_id).ok_or(Error::UnknownUser(user_id))?;
        entry.last_rate = rate;
        Ok(())
    }

    pub fn reply(&self, user_id: usize) -> Result<PayoffReply> {
        let entry = self.users.get(user_id).ok_or(Error::UnknownUser(user_id))?;
        let rates = self.last_rates();
        let grad = payoff_gradient_server(
            &self.params,
            &entry.model,
            self.bandwidth,
            &rates,
            user_id,
            &entry.buf,
            self.epsilon,
        )?;
        Ok(PayoffReply {
            user_id,
            gradient_estimate: grad,
        })
    }

    pub fn handle(&mut self, query: &PayoffQuery) -> Result<PayoffReply> {
        self.register(query)?;
        self.reply(query.user_id)
    }

    /// Live mode: answer every `payoff_query` line on `input` with a
    /// `payoff_reply` line on `output` until end of stream. Returns the
    /// number of queries served.
    pub fn serve<R: BufRead, W: Write>(&mut self, input: R, mut output: W) -> Result<usize> {
        let mut served = 0;
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match Message::from_line(&line)? {
                Message::PayoffQuery(q) => {
                    let reply = self.handle(&q)?;
                    writeln!(output, "{}", Message::PayoffReply(reply).to_line())?;
                    served += 1;
                }
                Message::PayoffReply(_) => {
                    return Err(Error::Protocol("server received a payoff_reply".into()))
                }
            }
        }
        output.flush()?;
        Ok(served)
    }
}

/// Multiplicative sub-gradient step with step-size and range clamps.
pub fn update_rate(cfg: &AdaptConfig, rate: f64, gradient: f64) -> f64 {
    let mut step = cfg.theta * rate * gradient;
    if let Some(f) = cfg.max_step_fraction {
        let cap = f * rate;
        step = step.clamp(-cap, cap);
    }
    (rate + step).clamp(cfg.r_min, cfg.r_max)
}

pub const DEFAULT_CONVERGENCE_WINDOW: usize = 5;

/// True when every coordinate moved by at most `tol` between consecutive
/// vectors in the trailing window of [`DEFAULT_CONVERGENCE_WINDOW`] rounds.
pub fn has_converged(history: &[Vec<f64>], tol: f64) -> Result<bool> {
    has_converged_window(history, tol, DEFAULT_CONVERGENCE_WINDOW)
}

pub fn has_converged_window(history: &[Vec<f64>], tol: f64, window: usize) -> Result<bool> {
    if history.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            got: history.len(),
        });
    }
    let start = history.len().saturating_sub(window.max(2));
    let tail = &history[start..];
    let max_change = tail
        .windows(2)
        .flat_map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    Ok(max_change <= tol)
}

/// A user's adaptation state.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub user_id: usize,
    pub model: VideoQualityModel,
    pub buf: BufferView,
    pub cfg: AdaptConfig,
    pub rate: f64,
}

impl Session {
    pub fn new(user_id: usize, model: VideoQualityModel, buf: BufferView, cfg: AdaptConfig) -> Self {
        Session {
            user_id,
            model,
            buf,
            rate: cfg.r_init,
            cfg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    /// Every gradient in a round is evaluated at the rates from the round start.
    #[default]
    Simultaneous,
    /// Each user sees the rates already updated earlier in the same round.
    Sequential,
}

/// One round of the distributed iteration using simultaneous updates.
pub fn round(sessions: &mut [Session], params: &GameParams, bandwidth: f64) -> Result<Vec<f64>> {
    round_with(sessions, params, bandwidth, UpdateOrder::Simultaneous)
}

pub fn round_with(
    sessions: &mut [Session],
    params: &GameParams,
    bandwidth: f64,
    order: UpdateOrder,
) -> Result<Vec<f64>> {
    if sessions.is_empty() {
        return Err(Error::Domain("session registry is empty".into()));
    }
    let epsilon = sessions[0].cfg.epsilon;
    let mut server = PayoffServer::new(*params, bandwidth, epsilon);
    for s in sessions.iter() {
        server.add_user(s.model.clone(), s.buf, s.rate);
    }
    match order {
        UpdateOrder::Simultaneous => {
            let replies = (0..sessions.len())
                .map(|idx| server.reply(idx))
                .collect::<Result<Vec<_>>>()?;
            for (s, reply) in sessions.iter_mut().zip(replies) {
                s.rate = update_rate(&s.cfg, s.rate, reply.gradient_estimate);
            }
        }
        UpdateOrder::Sequential => {
            for idx in 0..sessions.len() {
                let reply = server.reply(idx)?;
                let s = &mut sessions[idx];
                s.rate = update_rate(&s.cfg, s.rate, reply.gradient_estimate);
                server.set_rate(idx, s.rate)?;
            }
        }
    }
    Ok(sessions.iter().map(|s| s.rate).collect())
}

/// The unclamped update map `r_i + theta_i r_i dU_i/dr_i` with analytic
/// gradients, as analysed by the stability module.
pub fn update_map(
    params: &GameParams,
    models: &[VideoQualityModel],
    bufs: &[BufferView],
    bandwidth: f64,
    rates: &[f64],
    thetas: &[f64],
) -> Result<Vec<f64>> {
    (0..rates.len())
        .map(|i| {
            let g = model::utility_gradient(params, &models[i], i, rates, &bufs[i], bandwidth)?;
            Ok(rates[i] + thetas[i] * rates[i] * g)
        })
        .collect()
}
