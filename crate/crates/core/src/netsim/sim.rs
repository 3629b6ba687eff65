//! The event loop and per-segment traces.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::profile::ChannelCap;
use super::scenario::{PolicyKind, Scenario};
use super::{allocate_shares, quantize_rate};
use crate::adapt::{update_rate, AdaptConfig, PayoffQuery, PayoffServer, UpdateOrder};
use crate::baselines::{bf_decide, qf_decide, ThroughputEstimator};
use crate::error::{Error, Result};
use crate::model::{BufferView, VideoQualityModel};

/// Upper bound on processed events per run.
pub const MAX_EVENTS: usize = 50_000_000;

// Remaining work below this many megabits counts as complete, and buffers
// below this many seconds count as empty.
const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub requested_rate: f64,
    pub quantized_rate: f64,
    pub download_time: f64,
    /// Buffer right after the segment arrived.
    pub buffer: f64,
    pub stall_seconds: f64,
    pub quality: f64,
}

impl TraceRecord {
    /// Buffer when the download started: the completion level minus the
    /// segment just added plus whatever played out meanwhile.
    pub fn buffer_at_start(&self, segment_duration: f64) -> f64 {
        (self.buffer - segment_duration + self.download_time - self.stall_seconds).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub user_id: usize,
    pub policy: PolicyKind,
    pub segment_duration: f64,
    pub records: Vec<TraceRecord>,
}

impl SessionTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        if self.records.is_empty() {
            w.write_record([
                "k",
                "t_start",
                "t_end",
                "requested_rate",
                "quantized_rate",
                "download_time",
                "buffer",
                "stall_seconds",
                "quality",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn read_csv<R: Read>(input: R, user_id: usize, policy: PolicyKind, segment_duration: f64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let records = rd.deserialize().collect::<std::result::Result<Vec<TraceRecord>, _>>()?;
        Ok(SessionTrace {
            user_id,
            policy,
            segment_duration,
            records,
        })
    }

    pub fn requested_rates(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.requested_rate).collect()
    }

    pub fn buffers(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.buffer).collect()
    }

    pub fn stall_count(&self) -> usize {
        self.records.iter().filter(|r| r.stall_seconds > 0.0).count()
    }

    /// Requested rate in effect at time `t` (the segment being fetched).
    pub fn rate_at(&self, t: f64) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.t_start <= t && t < r.t_end)
            .map(|r| r.requested_rate)
    }
}

struct UserState {
    model: VideoQualityModel,
    b_ref: f64,
    policy: PolicyKind,
    cfg: AdaptConfig,
    cap: ChannelCap,
    estimator: ThroughputEstimator,

    buffer: f64,
    playing: bool,
    done: bool,
    k: usize,

    requested: f64,
    quantized: f64,
    delivered: f64,
    remaining: f64,
    t_start: f64,
    wait_until: f64,
    stall: f64,

    records: Vec<TraceRecord>,
}

impl UserState {
    fn downloading(&self, t: f64) -> bool {
        !self.done && t >= self.wait_until
    }
}

fn sim_error(user: usize, segment: usize, e: Error) -> Error {
    match e {
        e @ Error::Simulation { .. } => e,
        other => Error::Simulation {
            user,
            segment,
            reason: other.to_string(),
        },
    }
}

/// Run every user to `total_segments` and return one trace per user.
pub fn run_scenario(scenario: &Scenario) -> Result<Vec<SessionTrace>> {
    scenario.validate()?;
    if scenario.users.is_empty() {
        return Ok(Vec::new());
    }
    let sim = &scenario.sim;
    let seg = sim.segment_duration;
    let params = scenario.game_params()?;
    let profile = scenario.server.profile()?;
    let bcfg = scenario.baselines;

    let mut users = Vec::with_capacity(scenario.users.len());
    for (i, spec) in scenario.users.iter().enumerate() {
        users.push(UserState {
            model: spec.video.model()?,
            b_ref: spec.b_ref,
            policy: spec.policy,
            cfg: scenario.adapt_config(i),
            cap: spec.cap_profile.clone().seeded(sim.seed, i),
            estimator: ThroughputEstimator::new(bcfg.ewma_weight)?,
            buffer: sim.initial_buffer,
            playing: sim.initial_buffer > 0.0,
            done: false,
            k: 0,
            requested: 0.0,
            quantized: 0.0,
            delivered: 0.0,
            remaining: 0.0,
            t_start: 0.0,
            wait_until: 0.0,
            stall: 0.0,
            records: Vec::with_capacity(sim.total_segments),
        });
    }

    let epsilon = users[0].cfg.epsilon;
    let mut server = PayoffServer::new(params, profile.at(0.0), epsilon);
    for u in &users {
        server.add_user(u.model.clone(), BufferView::at_reference(u.b_ref), 0.0);
    }

    let decide_baseline = |u: &UserState| -> Result<f64> {
        match u.policy {
            PolicyKind::Qf => qf_decide(&u.estimator, &u.model.ladder, u.buffer, bcfg.startup_threshold),
            PolicyKind::Bf => bf_decide(&u.estimator, &u.model.ladder, u.buffer, u.b_ref, bcfg.bf_gain),
            PolicyKind::Game => unreachable!("game users are driven by the payoff server"),
        }
    };

    let mut t = 0.0;
    let start = |u: &mut UserState, rate: f64, t: f64| -> Result<()> {
        u.requested = rate;
        u.quantized = quantize_rate(&u.model.ladder, rate)?;
        u.delivered = if sim.quantize { u.quantized } else { rate };
        u.remaining = u.delivered * seg;
        u.t_start = t;
        u.wait_until = t + sim.payoff_latency;
        u.stall = 0.0;
        Ok(())
    };
    for i in 0..users.len() {
        let rate = match users[i].policy {
            PolicyKind::Game => users[i].cfg.r_init,
            _ => decide_baseline(&users[i]).map_err(|e| sim_error(i, 0, e))?,
        };
        start(&mut users[i], rate, 0.0).map_err(|e| sim_error(i, 0, e))?;
        // without a payoff exchange before the first segment there is no wait
        users[i].wait_until = 0.0;
        server.set_rate(i, rate)?;
    }

    let n = users.len();
    let mut events = 0usize;
    while users.iter().any(|u| !u.done) {
        events += 1;
        if events > MAX_EVENTS {
            let u = users.iter().position(|u| !u.done).unwrap_or(0);
            return Err(Error::Simulation {
                user: u,
                segment: users[u].k,
                reason: format!("exceeded {MAX_EVENTS} events"),
            });
        }
        let bandwidth = profile.at(t);
        let caps: Vec<Option<f64>> = users.iter().map(|u| u.cap.at(t)).collect();
        let active: Vec<bool> = users.iter().map(|u| u.downloading(t)).collect();
        let shares = allocate_shares(bandwidth, &caps, &active)?;

        let mut dt = f64::INFINITY;
        for (i, u) in users.iter().enumerate() {
            if u.done {
                continue;
            }
            if active[i] && shares[i] > 0.0 {
                dt = dt.min(u.remaining / shares[i]);
            }
            if !active[i] {
                dt = dt.min(u.wait_until - t);
            }
            if u.playing {
                dt = dt.min(u.buffer);
            }
            if let Some(next) = u.cap.next_change_after(t) {
                dt = dt.min(next - t);
            }
        }
        if let Some(next) = profile.next_change_after(t) {
            dt = dt.min(next - t);
        }
        if !dt.is_finite() {
            let u = users.iter().position(|u| !u.done).unwrap_or(0);
            return Err(Error::Simulation {
                user: u,
                segment: users[u].k,
                reason: "no download can make progress".into(),
            });
        }

        for (i, u) in users.iter_mut().enumerate() {
            if u.done {
                continue;
            }
            if active[i] {
                u.remaining -= shares[i] * dt;
            }
            if u.playing {
                u.buffer -= dt;
                if u.buffer <= EPS {
                    u.buffer = 0.0;
                    u.playing = false;
                }
            } else {
                u.stall += dt;
            }
        }
        t += dt;

        let finished: Vec<usize> = (0..n)
            .filter(|&i| active[i] && !users[i].done && users[i].remaining <= EPS * users[i].delivered.max(1.0))
            .collect();
        if finished.is_empty() {
            continue;
        }

        for &i in &finished {
            let u = &mut users[i];
            u.buffer += seg;
            u.playing = true;
            let download_time = t - u.t_start;
            let quality = u.model.quality(u.delivered).map_err(|e| sim_error(i, u.k, e))?;
            u.records.push(TraceRecord {
                k: u.k,
                t_start: u.t_start,
                t_end: t,
                requested_rate: u.requested,
                quantized_rate: u.quantized,
                download_time,
                buffer: u.buffer,
                stall_seconds: u.stall,
                quality,
            });
            u.estimator
                .observe(u.delivered * seg, download_time)
                .map_err(|e| sim_error(i, u.k, e))?;
            u.k += 1;
            if u.k == sim.total_segments {
                u.done = true;
                u.remaining = 0.0;
                server.set_rate(i, 0.0)?;
            }
        }

        // Every game user that just finished reports first, then all of them
        // are answered from the same table.
        server.set_bandwidth(profile.at(t));
        let reporting: Vec<usize> = finished
            .iter()
            .copied()
            .filter(|&i| !users[i].done && users[i].policy == PolicyKind::Game)
            .collect();
        for &i in &reporting {
            let query = PayoffQuery {
                user_id: i,
                b_curr: users[i].buffer,
                last_rate: users[i].requested,
            };
            server.register(&query).map_err(|e| sim_error(i, users[i].k, e))?;
        }
        let mut next = vec![0.0; n];
        match sim.update_order {
            UpdateOrder::Simultaneous => {
                for &i in &reporting {
                    let g = server.reply(i).map_err(|e| sim_error(i, users[i].k, e))?.gradient_estimate;
                    next[i] = update_rate(&users[i].cfg, users[i].requested, g);
                }
                for &i in &reporting {
                    server.set_rate(i, next[i])?;
                }
            }
            UpdateOrder::Sequential => {
                for &i in &reporting {
                    let g = server.reply(i).map_err(|e| sim_error(i, users[i].k, e))?.gradient_estimate;
                    next[i] = update_rate(&users[i].cfg, users[i].requested, g);
                    server.set_rate(i, next[i])?;
                }
            }
        }
        for &i in &finished {
            if users[i].done {
                continue;
            }
            let rate = match users[i].policy {
                PolicyKind::Game => next[i],
                _ => {
                    let r = decide_baseline(&users[i]).map_err(|e| sim_error(i, users[i].k, e))?;
                    server.set_rate(i, r)?;
                    r
                }
            };
            let k = users[i].k;
            start(&mut users[i], rate, t).map_err(|e| sim_error(i, k, e))?;
        }
    }

    Ok(users
        .into_iter()
        .enumerate()
        .map(|(i, u)| SessionTrace {
            user_id: i,
            policy: u.policy,
            segment_duration: seg,
            records: u.records,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{ProfileKind, ServerSpec, UserSpec, VideoSpec};

    pub(crate) fn two_user(theta: f64, segments: usize) -> Scenario {
        let user = UserSpec {
            video: VideoSpec {
                alpha: 2.15,
                beta: 0.0827,
                ladder: vec![0.5, 1.0, 2.0, 3.0, 4.0],
                label: String::new(),
            },
            theta: Some(theta),
            b_ref: 15.0,
            cap_profile: ChannelCap::Unlimited,
            policy: PolicyKind::Game,
        };
        Scenario {
            name: "test".into(),
            description: String::new(),
            game: crate::netsim::GameSection {
                mu: 0.003,
                nu: None,
                p: 0.1,
                calibrate_nu: true,
            },
            adapt: AdaptConfig::default(),
            users: vec![user.clone(), user],
            server: ServerSpec {
                kind: ProfileKind::Fixed,
                base: Some(6.0),
                breakpoints: None,
                schedule: None,
            },
            sim: crate::netsim::SimConfig {
                total_segments: segments,
                ..Default::default()
            },
            baselines: Default::default(),
        }
    }

    #[test]
    fn zero_users() {
        let mut s = two_user(10.0, 5);
        s.users.clear();
        s.game.calibrate_nu = false;
        s.game.nu = Some(0.004);
        assert!(run_scenario(&s).unwrap().is_empty());
    }

    #[test]
    fn first_segment_by_hand() {
        let s = two_user(10.0, 3);
        let traces = run_scenario(&s).unwrap();
        let r0 = &traces[0].records[0];
        // both fetch 0.2 Mbit at 3 Mbps each
        assert_eq!(r0.requested_rate, 0.1);
        assert!((r0.download_time - 0.2 / 3.0).abs() < 1e-15);
        assert!((r0.buffer - (2.0 - 0.2 / 3.0 + 2.0)).abs() < 1e-12);
        assert_eq!(r0.quantized_rate, 0.5);
        assert_eq!(r0.stall_seconds, 0.0);
        assert!(traces[0].records[1].requested_rate > 0.1);
        assert_eq!(traces[0].records.len(), 3);
    }

    #[test]
    fn identical_users_identical_traces() {
        let traces = run_scenario(&two_user(30.0, 60)).unwrap();
        assert_eq!(traces[0].records, traces[1].records);
    }

    #[test]
    fn csv_round_trip() {
        let traces = run_scenario(&two_user(30.0, 10)).unwrap();
        let text = traces[0].to_csv_string().unwrap();
        assert!(text.starts_with("k,t_start,t_end,requested_rate,quantized_rate,download_time,buffer,stall_seconds,quality\n"));
        let back = SessionTrace::read_csv(text.as_bytes(), 0, PolicyKind::Game, 2.0).unwrap();
        assert_eq!(back, traces[0]);
    }

    #[test]
    fn stalls_are_recorded() {
        let mut s = two_user(30.0, 8);
        for u in &mut s.users {
            u.cap_profile = ChannelCap::constant(0.05);
        }
        s.adapt.r_init = 0.2;
        s.adapt.r_min = 0.2;
        s.adapt.r_max = 0.2;
        let traces = run_scenario(&s).unwrap();
        // 0.4 Mbit at 0.05 Mbps takes 8 s against a 2 s buffer
        let r = &traces[0].records[0];
        assert!((r.download_time - 8.0).abs() < 1e-9);
        assert!((r.stall_seconds - 6.0).abs() < 1e-9);
        assert!((r.buffer - 2.0).abs() < 1e-9);
        assert!((r.buffer_at_start(2.0) - 2.0).abs() < 1e-9);
        assert!(traces[0].records.iter().skip(1).all(|r| (r.stall_seconds - 6.0).abs() < 1e-9));
    }

    #[test]
    fn latency_extends_download_time() {
        let mut s = two_user(10.0, 4);
        s.sim.payoff_latency = 0.5;
        let with = run_scenario(&s).unwrap();
        s.sim.payoff_latency = 0.0;
        let without = run_scenario(&s).unwrap();
        assert_eq!(with[0].records[0], without[0].records[0]);
        let d = with[0].records[1].download_time - without[0].records[1].download_time;
        assert!((d - 0.5).abs() < 1e-9, "{d}");
    }
}
