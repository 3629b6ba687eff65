//! Static Nash equilibrium of the rate-adaptation game.
//!
//! Each user's utility is strictly concave in its own rate and the cross
//! partials `d g_i / d r_j = -nu*T/B_W` are identical for every pair, so the
//! pseudo-gradient is the gradient of the strictly concave potential
//!
//! ```text
//! P(r) = sum_i [q_i(r_i) + Z2_i r_i] - Z3/2 (sum_i r_i)^2
//! ```
//!
//! The equilibrium on the box `[0, r_max]^N` is the unique maximizer of `P`,
//! which the solver uses for its line search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{adjustment_factor, BufferView, GameParams, VideoQualityModel};

/// Coefficients of one user's first-order condition
/// `z1 / (1 + beta r_i) + z2 - z3 * sum(r) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocCoefficients {
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
}

pub fn foc_coefficients(
    params: &GameParams,
    model: &VideoQualityModel,
    buf: &BufferView,
    bandwidth: f64,
) -> Result<FocCoefficients> {
    if !(bandwidth > 0.0) {
        return Err(Error::Domain(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    let t = params.segment_duration;
    Ok(FocCoefficients {
        z1: model.alpha * model.beta,
        z2: params.mu * t * adjustment_factor(params.p, buf.b_curr, buf.b_ref),
        z3: params.nu * t / bandwidth,
    })
}

/// Equilibrium rate of two identical users.
pub fn closed_form_identical_2user(z: &FocCoefficients, beta: f64) -> f64 {
    let b = 2.0 * z.z3 - beta * z.z2;
    let disc = (2.0 * z.z3 + beta * z.z2).powi(2) + 8.0 * beta * z.z1 * z.z3;
    assert!(disc > 0.0, "discriminant must be positive for valid coefficients");
    (-b + disc.sqrt()) / (4.0 * beta * z.z3)
}

/// Own-rate gradient from FOC coefficients, with the others' total demand.
fn foc_gradient(z: &FocCoefficients, beta: f64, rate: f64, others: f64) -> f64 {
    z.z1 / (1.0 + beta * rate) + z.z2 - z.z3 * (rate + others)
}

/// Utility-maximizing rate on `[0, r_max]` given the other users' rates.
///
/// Bisection on the (strictly decreasing) own-rate gradient, to 1e-10 Mbps.
pub fn best_response(
    params: &GameParams,
    model: &VideoQualityModel,
    buf: &BufferView,
    others_rates: &[f64],
    bandwidth: f64,
    r_max: f64,
) -> Result<f64> {
    if !(r_max > 0.0) {
        return Err(Error::Domain(format!("r_max must be > 0, got {r_max}")));
    }
    let z = foc_coefficients(params, model, buf, bandwidth)?;
    let others: f64 = others_rates.iter().sum();
    Ok(best_response_from(&z, model.beta, others, r_max))
}

fn best_response_from(z: &FocCoefficients, beta: f64, others: f64, r_max: f64) -> f64 {
    if foc_gradient(z, beta, 0.0, others) <= 0.0 {
        return 0.0;
    }
    if foc_gradient(z, beta, r_max, others) >= 0.0 {
        return r_max;
    }
    let (mut lo, mut hi) = (0.0, r_max);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if foc_gradient(z, beta, mid, others) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub rates: Vec<f64>,
    /// Largest own-rate gradient magnitude over coordinates not pinned at a bound.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-9;
pub const EQUILIBRIUM_MAX_ITERATIONS: usize = 10_000;

struct Game {
    z: Vec<FocCoefficients>,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    z3: f64,
    r_max: f64,
}

impl Game {
    fn gradient(&self, rates: &[f64]) -> Vec<f64> {
        let total: f64 = rates.iter().sum();
        rates
            .iter()
            .enumerate()
            .map(|(i, &r)| foc_gradient(&self.z[i], self.beta[i], r, total - r))
            .collect()
    }

    fn potential(&self, rates: &[f64]) -> f64 {
        let total: f64 = rates.iter().sum();
        let own: f64 = rates
            .iter()
            .enumerate()
            .map(|(i, &r)| self.alpha[i] * (self.beta[i] * r).ln_1p() + self.z[i].z2 * r)
            .sum();
        own - 0.5 * self.z3 * total * total
    }

    /// Projected-gradient residual: bound-pinned coordinates whose gradient
    /// points out of the box do not count.
    fn residual(&self, rates: &[f64]) -> f64 {
        self.gradient(rates)
            .iter()
            .zip(rates)
            .map(|(&g, &r)| {
                if (r <= 0.0 && g <= 0.0) || (r >= self.r_max && g >= 0.0) {
                    0.0
                } else {
                    g.abs()
                }
            })
            .fold(0.0, f64::max)
    }

    fn project(&self, r: f64) -> f64 {
        r.clamp(0.0, self.r_max)
    }

    /// One damped projected-Newton step. Returns `None` when no ascent was found.
    fn newton_step(&self, rates: &[f64]) -> Option<Vec<f64>> {
        let n = rates.len();
        let g = self.gradient(rates);
        let free: Vec<usize> = (0..n)
            .filter(|&i| !((rates[i] <= 0.0 && g[i] <= 0.0) || (rates[i] >= self.r_max && g[i] >= 0.0)))
            .collect();
        if free.is_empty() {
            return None;
        }
        let m = free.len();
        // Hessian of the potential restricted to the free coordinates.
        let hess = DMatrix::from_fn(m, m, |a, b| {
            let i = free[a];
            let mut h = -self.z3;
            if a == b {
                let s = 1.0 + self.beta[i] * rates[i];
                h -= self.z[i].z1 * self.beta[i] / (s * s);
            }
            h
        });
        let rhs = DVector::from_iterator(m, free.iter().map(|&i| -g[i]));
        let dir = hess.lu().solve(&rhs)?;

        let p0 = self.potential(rates);
        let slope: f64 = free.iter().enumerate().map(|(a, &i)| g[i] * dir[a]).sum();
        let mut step = 1.0;
        for _ in 0..60 {
            let mut trial = rates.to_vec();
            for (a, &i) in free.iter().enumerate() {
                trial[i] = self.project(rates[i] + step * dir[a]);
            }
            if trial == rates {
                return None;
            }
            let p1 = self.potential(&trial);
            let armijo = p1 >= p0 + 1e-4 * step * slope;
            // Close to the optimum the potential gain drops below rounding;
            // fall back to the residual there.
            let flat = (p1 - p0).abs() <= 1e-13 * p0.abs().max(1.0)
                && self.residual(&trial) < self.residual(rates);
            if armijo || flat {
                return Some(trial);
            }
            step *= 0.5;
        }
        None
    }

    /// Gauss-Seidel sweep of exact best responses (coordinate ascent on the potential).
    fn best_response_sweep(&self, rates: &mut [f64]) {
        let mut total: f64 = rates.iter().sum();
        for i in 0..rates.len() {
            let others = total - rates[i];
            let r = best_response_from(&self.z[i], self.beta[i], others, self.r_max);
            total = others + r;
            rates[i] = r;
        }
    }
}

/// Solve the projected first-order conditions for all users.
///
/// Damped Newton on the potential from the symmetric start `r_max / (2N)`,
/// falling back to Gauss-Seidel best responses if Newton stalls.
pub fn solve_equilibrium(
    params: &GameParams,
    models: &[VideoQualityModel],
    bufs: &[BufferView],
    bandwidth: f64,
    r_max: f64,
) -> Result<EquilibriumResult> {
    if models.is_empty() {
        return Err(Error::Domain("at least one user is required".into()));
    }
    if models.len() != bufs.len() {
        return Err(Error::Domain(format!(
            "{} models but {} buffer views",
            models.len(),
            bufs.len()
        )));
    }
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(Error::Domain(format!("r_max must be finite and > 0, got {r_max}")));
    }
    let z = models
        .iter()
        .zip(bufs)
        .map(|(m, b)| foc_coefficients(params, m, b, bandwidth))
        .collect::<Result<Vec<_>>>()?;
    let game = Game {
        z3: z[0].z3,
        z,
        beta: models.iter().map(|m| m.beta).collect(),
        alpha: models.iter().map(|m| m.alpha).collect(),
        r_max,
    };
    let n = models.len();
    let mut rates = vec![r_max / (2.0 * n as f64); n];
    let mut iterations = 0;
    let mut residual = game.residual(&rates);
    let mut newton_ok = true;

    while residual > EQUILIBRIUM_TOLERANCE && iterations < EQUILIBRIUM_MAX_ITERATIONS {
        iterations += 1;
        let next = if newton_ok { game.newton_step(&rates) } else { None };
        match next {
            Some(r) => rates = r,
            None => {
                newton_ok = false;
                game.best_response_sweep(&mut rates);
            }
        }
        let new_residual = game.residual(&rates);
        if newton_ok && new_residual >= residual && iterations > 50 {
            newton_ok = false;
        }
        residual = new_residual;
    }
    // a few steps past the tolerance bring the rates to rounding level
    if residual <= EQUILIBRIUM_TOLERANCE {
        for _ in 0..3 {
            match game.newton_step(&rates) {
                Some(r) if game.residual(&r) < residual => {
                    residual = game.residual(&r);
                    rates = r;
                }
                _ => break,
            }
        }
    }

    Ok(EquilibriumResult {
        converged: residual <= EQUILIBRIUM_TOLERANCE,
        rates,
        residual,
        iterations,
    })
}
