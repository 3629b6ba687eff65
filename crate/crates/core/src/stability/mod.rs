//! Local stability of the distributed update map.
//!
//! The map `r_i <- r_i + theta_i r_i dU_i/dr_i` is locally stable at a
//! fixed point iff every eigenvalue of its Jacobian lies strictly inside the
//! unit circle.

mod eigen;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use eigen::{eigen_2x2, eigenvalues_small, spectral_radius, DEFLATION_TOLERANCE, MAX_DIMENSION};

use crate::adapt;
use crate::error::{Error, Result};
use crate::game::{foc_coefficients, FocCoefficients};
use crate::model::{BufferView, GameParams, VideoQualityModel};

/// Half-width of the band around `|lambda| = 1` reported as marginal.
pub const MARGINAL_BAND: f64 = 1e-9;

/// Step used by [`jacobian_numeric`], Mbps.
pub const NUMERIC_JACOBIAN_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Marginal,
    Unstable,
}

impl Verdict {
    pub fn from_radius(radius: f64) -> Self {
        if (radius - 1.0).abs() <= MARGINAL_BAND {
            Verdict::Marginal
        } else if radius < 1.0 {
            Verdict::Stable
        } else {
            Verdict::Unstable
        }
    }
}

/// The two closed-form inequalities for two identical users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedFormConditions {
    /// Largest eigenvalue below one.
    pub upper: bool,
    /// Smallest eigenvalue above minus one.
    pub lower: bool,
}

impl ClosedFormConditions {
    pub fn stable(&self) -> bool {
        self.upper && self.lower
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub jacobian: Vec<Vec<f64>>,
    #[serde(with = "complex_list")]
    pub eigenvalues: Vec<Complex64>,
    pub spectral_radius: f64,
    pub stable: bool,
    pub verdict: Verdict,
    pub closed_form: Option<ClosedFormConditions>,
    /// Whether the Jacobian came from finite differences.
    pub numeric_jacobian: bool,
}

impl StabilityReport {
    pub fn from_jacobian(jacobian: &DMatrix<f64>, numeric: bool) -> Result<Self> {
        let eigenvalues = eigenvalues_small(jacobian)?;
        let radius = spectral_radius(&eigenvalues);
        Ok(StabilityReport {
            jacobian: (0..jacobian.nrows())
                .map(|i| (0..jacobian.ncols()).map(|j| jacobian[(i, j)]).collect())
                .collect(),
            eigenvalues,
            spectral_radius: radius,
            stable: radius < 1.0,
            verdict: Verdict::from_radius(radius),
            closed_form: None,
            numeric_jacobian: numeric,
        })
    }

    pub fn jacobian_matrix(&self) -> DMatrix<f64> {
        let n = self.jacobian.len();
        DMatrix::from_fn(n, n, |i, j| self.jacobian[i][j])
    }
}

mod complex_list {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = v.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

fn check_lengths(n: usize, models: usize, bufs: usize, thetas: usize) -> Result<()> {
    if models != n || bufs != n || thetas != n {
        return Err(Error::Domain(format!(
            "length mismatch: {n} rates, {models} models, {bufs} buffers, {thetas} thetas"
        )));
    }
    Ok(())
}

/// Analytic Jacobian of the two-user update map.
pub fn jacobian_2user(
    params: &GameParams,
    models: &[VideoQualityModel],
    bufs: &[BufferView],
    bandwidth: f64,
    rates: &[f64],
    thetas: &[f64],
) -> Result<DMatrix<f64>> {
    if rates.len() != 2 {
        return Err(Error::Domain(format!("expected 2 users, got {}", rates.len())));
    }
    check_lengths(2, models.len(), bufs.len(), thetas.len())?;
    let z: Vec<FocCoefficients> = (0..2)
        .map(|i| foc_coefficients(params, &models[i], &bufs[i], bandwidth))
        .collect::<Result<_>>()?;
    let mut j = DMatrix::zeros(2, 2);
    for i in 0..2 {
        let o = 1 - i;
        let (r, ro, beta) = (rates[i], rates[o], models[i].beta);
        let s = 1.0 + beta * r;
        j[(i, i)] = 1.0
            + thetas[i]
                * (-beta * z[i].z1 * r / (s * s) + z[i].z1 / s + z[i].z2 - z[i].z3 * (2.0 * r + ro));
        j[(i, o)] = -thetas[i] * z[i].z3 * r;
    }
    Ok(j)
}

/// Central-difference Jacobian of the unclamped update map, any N.
pub fn jacobian_numeric(
    params: &GameParams,
    models: &[VideoQualityModel],
    bufs: &[BufferView],
    bandwidth: f64,
    rates: &[f64],
    thetas: &[f64],
) -> Result<DMatrix<f64>> {
    let n = rates.len();
    check_lengths(n, models.len(), bufs.len(), thetas.len())?;
    let h = NUMERIC_JACOBIAN_STEP;
    let mut jac = DMatrix::zeros(n, n);
    for col in 0..n {
        let mut up = rates.to_vec();
        let mut dn = rates.to_vec();
        up[col] += h;
        // stay inside the log domain for rates at zero
        let lower = (rates[col] - h).max(0.0);
        dn[col] = lower;
        let f_up = adapt::update_map(params, models, bufs, bandwidth, &up, thetas)?;
        let f_dn = adapt::update_map(params, models, bufs, bandwidth, &dn, thetas)?;
        let width = up[col] - lower;
        for row in 0..n {
            jac[(row, col)] = (f_up[row] - f_dn[row]) / width;
        }
    }
    Ok(jac)
}

/// Stability report at `rates`, using the analytic Jacobian for two users and
/// finite differences otherwise.
pub fn analyze(
    params: &GameParams,
    models: &[VideoQualityModel],
    bufs: &[BufferView],
    bandwidth: f64,
    rates: &[f64],
    thetas: &[f64],
) -> Result<StabilityReport> {
    if rates.len() == 2 {
        let j = jacobian_2user(params, models, bufs, bandwidth, rates, thetas)?;
        StabilityReport::from_jacobian(&j, false)
    } else {
        let j = jacobian_numeric(params, models, bufs, bandwidth, rates, thetas)?;
        StabilityReport::from_jacobian(&j, true)
    }
}

// The closed-form chain for two identical users at a symmetric point with the
// buffer on its reference, so Z2 = mu*T. With j11 = j22 and j12 = j21 < 0 the
// eigenvalues are j11 - j12 (the larger) and j11 + j12. Each helper below is
// one link of that chain multiplied through by (1 + beta r)^2 > 0.

/// `j11 - j12 - 1` divided by theta.
fn antisymmetric_mode_slope(z: &FocCoefficients, beta: f64, r: f64) -> f64 {
    let s = 1.0 + beta * r;
    -beta * z.z1 * r / (s * s) + z.z1 / s + z.z2 - 2.0 * z.z3 * r
}

/// `j11 - j12 < 1`  <=>  `Z1 + Z2 (1+beta r)^2 < 2 Z3 r (1+beta r)^2`.
pub fn antisymmetric_mode_below_one(z: &FocCoefficients, beta: f64, r: f64) -> bool {
    let s2 = (1.0 + beta * r).powi(2);
    z.z1 + z.z2 * s2 < 2.0 * z.z3 * r * s2
}

/// `j11 - j12 > -1`  <=>  `Z1 + (Z2 + 2/theta)(1+beta r)^2 > 2 Z3 r (1+beta r)^2`.
pub fn antisymmetric_mode_above_minus_one(z: &FocCoefficients, beta: f64, theta: f64, r: f64) -> bool {
    let s2 = (1.0 + beta * r).powi(2);
    z.z1 + (z.z2 + 2.0 / theta) * s2 > 2.0 * z.z3 * r * s2
}

/// `j11 + j12 < 1`  <=>  `Z1 + Z2 (1+beta r)^2 < 4 Z3 r (1+beta r)^2`.
pub fn symmetric_mode_below_one(z: &FocCoefficients, beta: f64, r: f64) -> bool {
    let s2 = (1.0 + beta * r).powi(2);
    z.z1 + z.z2 * s2 < 4.0 * z.z3 * r * s2
}

/// `j11 + j12 > -1`  <=>  `Z1 + (Z2 + 2/theta)(1+beta r)^2 > 4 Z3 r (1+beta r)^2`.
pub fn symmetric_mode_above_minus_one(z: &FocCoefficients, beta: f64, theta: f64, r: f64) -> bool {
    let s2 = (1.0 + beta * r).powi(2);
    z.z1 + (z.z2 + 2.0 / theta) * s2 > 4.0 * z.z3 * r * s2
}

/// The pair of closed-form stability inequalities for two identical users:
///
/// ```text
/// alpha beta + mu T (1+beta r)^2            < 2 nu T r (1+beta r)^2 / B_W
/// alpha beta + (mu T + 2/theta)(1+beta r)^2 > 4 nu T r (1+beta r)^2 / B_W
/// ```
///
/// With `T = 2` these read `2 mu` and `4 nu / B_W`, `8 nu / B_W`.
pub fn closed_form_conditions(
    params: &GameParams,
    model: &VideoQualityModel,
    theta: f64,
    r_star: f64,
    bandwidth: f64,
) -> Result<ClosedFormConditions> {
    let z = identical_coefficients(params, model, bandwidth)?;
    let beta = model.beta;
    // The other two links are implied: the symmetric eigenvalue is the smaller
    // one, so it is below one whenever the antisymmetric one is, and the
    // antisymmetric one is above minus one whenever the symmetric one is.
    debug_assert!(
        !antisymmetric_mode_below_one(&z, beta, r_star) || symmetric_mode_below_one(&z, beta, r_star)
    );
    debug_assert!(
        !symmetric_mode_above_minus_one(&z, beta, theta, r_star)
            || antisymmetric_mode_above_minus_one(&z, beta, theta, r_star)
    );
    Ok(ClosedFormConditions {
        upper: antisymmetric_mode_below_one(&z, beta, r_star),
        lower: symmetric_mode_above_minus_one(&z, beta, theta, r_star),
    })
}

fn identical_coefficients(params: &GameParams, model: &VideoQualityModel, bandwidth: f64) -> Result<FocCoefficients> {
    let buf = BufferView::at_reference(1.0);
    foc_coefficients(params, model, &buf, bandwidth)
}

/// Closed-form conditions plus the full eigenvalue report at the symmetric
/// point `(r_star, r_star)` with both buffers on their reference.
pub fn stability_conditions_identical_2user(
    params: &GameParams,
    model: &VideoQualityModel,
    theta: f64,
    r_star: f64,
    bandwidth: f64,
) -> Result<(ClosedFormConditions, StabilityReport)> {
    let conditions = closed_form_conditions(params, model, theta, r_star, bandwidth)?;
    let bufs = [BufferView::at_reference(1.0); 2];
    let models = [model.clone(), model.clone()];
    let j = jacobian_2user(params, &models, &bufs, bandwidth, &[r_star, r_star], &[theta, theta])?;
    let mut report = StabilityReport::from_jacobian(&j, false)?;
    report.closed_form = Some(conditions);
    Ok((conditions, report))
}

/// Largest eigenvalue slope with respect to theta for the identical pair;
/// exposed for tests and the CLI.
pub fn antisymmetric_eigenvalue(params: &GameParams, model: &VideoQualityModel, theta: f64, r: f64, bandwidth: f64) -> Result<f64> {
    let z = identical_coefficients(params, model, bandwidth)?;
    Ok(1.0 + theta * antisymmetric_mode_slope(&z, model.beta, r))
}

/// Bisection for the learning rate at which the verdict at `r_star` flips
/// from stable to unstable. `None` if the verdict does not change on `[lo, hi]`.
pub fn stability_boundary_theta<F>(mut radius_at: F, lo: f64, hi: f64) -> Result<Option<f64>>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (lo, hi);
    let stable_a = radius_at(a)? < 1.0;
    let stable_b = radius_at(b)? < 1.0;
    if stable_a == stable_b {
        return Ok(None);
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if (radius_at(mid)? < 1.0) == stable_a {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= 1e-12 * b.abs().max(1.0) {
            break;
        }
    }
    Ok(Some(0.5 * (a + b)))
}
