//! Eigenvalues of small dense real matrices.
//!
//! 2x2 matrices use the characteristic-polynomial roots directly. Larger
//! matrices are reduced to upper Hessenberg form with Householder
//! reflections and then deflated with Francis double-shift QR sweeps.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAX_DIMENSION: usize = 64;

/// Relative size below which a subdiagonal entry is treated as zero.
pub const DEFLATION_TOLERANCE: f64 = 1e-10;

/// All eigenvalues of `m`, sorted by descending magnitude.
pub fn eigenvalues_small(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Domain(format!("matrix is {}x{}, expected square", n, m.ncols())));
    }
    if n > MAX_DIMENSION {
        return Err(Error::MatrixTooLarge(n));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    let mut eig = match n {
        0 => Vec::new(),
        1 => vec![Complex64::new(m[(0, 0)], 0.0)],
        2 => eigen_2x2(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]).to_vec(),
        _ => {
            let mut h = m.clone();
            hessenberg(&mut h);
            hessenberg_qr(h)?
        }
    };
    sort_by_magnitude(&mut eig);
    Ok(eig)
}

pub fn spectral_radius(eigenvalues: &[Complex64]) -> f64 {
    eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Roots of `l^2 - (a + d) l + (ad - bc)`.
pub fn eigen_2x2(a: f64, b: f64, c: f64, d: f64) -> [Complex64; 2] {
    let half_trace = 0.5 * (a + d);
    let disc = (a - d) * (a - d) + 4.0 * b * c;
    if disc >= 0.0 {
        let s = 0.5 * disc.sqrt();
        [
            Complex64::new(half_trace + s, 0.0),
            Complex64::new(half_trace - s, 0.0),
        ]
    } else {
        let s = 0.5 * (-disc).sqrt();
        [
            Complex64::new(half_trace, s),
            Complex64::new(half_trace, -s),
        ]
    }
}

fn sort_by_magnitude(eig: &mut [Complex64]) {
    eig.sort_by(|x, y| {
        y.norm()
            .total_cmp(&x.norm())
            .then(y.re.total_cmp(&x.re))
            .then(y.im.total_cmp(&x.im))
    });
}

/// In-place Householder reduction to upper Hessenberg form (similarity transform).
fn hessenberg(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for k in 0..n.saturating_sub(2) {
        let norm: f64 = (k + 1..n).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[(k + 1, k)] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k + 1..n).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vnorm);

        // A <- (I - 2vv^T) A
        for j in 0..n {
            let dot: f64 = v.iter().enumerate().map(|(t, vt)| vt * a[(k + 1 + t, j)]).sum();
            for (t, vt) in v.iter().enumerate() {
                a[(k + 1 + t, j)] -= 2.0 * vt * dot;
            }
        }
        // A <- A (I - 2vv^T)
        for i in 0..n {
            let dot: f64 = v.iter().enumerate().map(|(t, vt)| vt * a[(i, k + 1 + t)]).sum();
            for (t, vt) in v.iter().enumerate() {
                a[(i, k + 1 + t)] -= 2.0 * vt * dot;
            }
        }
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix.
fn hessenberg_qr(h: DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = h.nrows();
    // 1-based working copy keeps the index arithmetic of the sweep readable.
    let mut a = vec![vec![0.0f64; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = h[(i, j)];
        }
    }
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[i][j].abs();
        }
    }
    let max_iterations = 100 * n;
    let mut total_iterations = 0usize;
    let mut out = Vec::with_capacity(n);
    let mut nn = n;
    let mut t = 0.0;

    while nn >= 1 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() <= DEFLATION_TOLERANCE * s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[nn][nn];
            if l == nn {
                out.push(Complex64::new(x + t, 0.0));
                nn -= 1;
                break;
            }
            let mut y = a[nn - 1][nn - 1];
            let mut w = a[nn][nn - 1] * a[nn - 1][nn];
            if l == nn - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + z.copysign(p);
                    let first = x + z;
                    let second = if z != 0.0 { x - w / z } else { first };
                    out.push(Complex64::new(first, 0.0));
                    out.push(Complex64::new(second, 0.0));
                } else {
                    out.push(Complex64::new(x + p, z));
                    out.push(Complex64::new(x + p, -z));
                }
                nn -= 2;
                break;
            }

            total_iterations += 1;
            if total_iterations > max_iterations {
                return Err(Error::EigenNonConvergence {
                    iterations: total_iterations - 1,
                });
            }
            if its == 10 || its == 20 {
                // exceptional shift
                t += x;
                for i in 1..=nn {
                    a[i][i] -= x;
                }
                let s = a[nn][nn - 1].abs() + a[nn - 1][nn - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;

            let (mut p, mut q, mut r): (f64, f64, f64);
            let mut m = nn - 2;
            loop {
                let z = a[m][m];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - rr - ss;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u <= f64::EPSILON * v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nn {
                a[i][i - 2] = 0.0;
                if i != m + 2 {
                    a[i][i - 3] = 0.0;
                }
            }
            let mut k = m;
            while k < nn {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = if k != nn - 1 { a[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        let mut pp = a[k][j] + q * a[k + 1][j];
                        if k != nn - 1 {
                            pp += r * a[k + 2][j];
                            a[k + 2][j] -= pp * z;
                        }
                        a[k + 1][j] -= pp * y;
                        a[k][j] -= pp * x;
                    }
                    let mmin = nn.min(k + 3);
                    for i in l..=mmin {
                        let mut pp = x * a[i][k] + y * a[i][k + 1];
                        if k != nn - 1 {
                            pp += z * a[i][k + 2];
                            a[i][k + 2] -= pp * r;
                        }
                        a[i][k + 1] -= pp * q;
                        a[i][k] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn two_by_two_examples() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.5]);
        let e = eigenvalues_small(&m).unwrap();
        assert!(close(e[0], Complex64::new(0.6, 0.0), 1e-15));
        assert!(close(e[1], Complex64::new(0.4, 0.0), 1e-15));

        let d = DMatrix::from_row_slice(2, 2, &[1.2, 0.0, 0.0, 0.5]);
        let e = eigenvalues_small(&d).unwrap();
        assert_eq!(e, vec![Complex64::new(1.2, 0.0), Complex64::new(0.5, 0.0)]);

        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let e = eigenvalues_small(&rot).unwrap();
        assert!(close(e[0], Complex64::new(0.0, 1.0), 1e-15));
        assert!(close(e[1], Complex64::new(0.0, -1.0), 1e-15));
        assert_eq!(spectral_radius(&e), 1.0);
    }

    #[test]
    fn larger_known_spectra() {
        // companion matrix of (x-1)(x-2)(x-3)(x-4)
        let c = DMatrix::from_row_slice(
            4,
            4,
            &[10.0, -35.0, 50.0, -24.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        );
        let e = eigenvalues_small(&c).unwrap();
        for (got, want) in e.iter().zip([4.0, 3.0, 2.0, 1.0]) {
            assert!(close(*got, Complex64::new(want, 0.0), 1e-8), "{got} vs {want}");
        }

        // 3-d rotation about z by 90 degrees scaled by 0.5: {0.5i, -0.5i, 0.5}
        let r = DMatrix::from_row_slice(3, 3, &[0.0, -0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5]);
        let e = eigenvalues_small(&r).unwrap();
        assert!((spectral_radius(&e) - 0.5).abs() < 1e-12);
        assert!(e.iter().any(|z| close(*z, Complex64::new(0.0, 0.5), 1e-12)));
        assert!(e.iter().any(|z| close(*z, Complex64::new(0.5, 0.0), 1e-12)));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            eigenvalues_small(&DMatrix::zeros(65, 65)),
            Err(Error::MatrixTooLarge(65))
        ));
        assert!(eigenvalues_small(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn identity_and_zero() {
        let e = eigenvalues_small(&DMatrix::identity(5, 5)).unwrap();
        assert!(e.iter().all(|z| close(*z, Complex64::new(1.0, 0.0), 1e-14)));
        let e = eigenvalues_small(&DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(e.len(), 4);
        assert!(e.iter().all(|z| z.norm() == 0.0));
    }

    fn sorted_pairs(v: &[Complex64]) -> Vec<(f64, f64)> {
        let mut p: Vec<(f64, f64)> = v.iter().map(|z| (z.re, z.im)).collect();
        p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        p
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        /// nalgebra's Schur-based solver is the independent oracle here.
        #[test]
        fn agrees_with_nalgebra(n in 3usize..9, seed in proptest::collection::vec(-3.0f64..3.0, 64)) {
            let m = DMatrix::from_fn(n, n, |i, j| seed[i * 8 + j]);
            let ours = eigenvalues_small(&m).unwrap();
            let theirs: Vec<Complex64> = m.clone().complex_eigenvalues().iter().copied().collect();
            prop_assert_eq!(ours.len(), n);
            let (a, b) = (sorted_pairs(&ours), sorted_pairs(&theirs));
            // match greedily: every eigenvalue of ours has a partner in theirs
            let mut used = vec![false; n];
            for x in &a {
                let zx = Complex64::new(x.0, x.1);
                let best = (0..n)
                    .filter(|&k| !used[k])
                    .min_by(|&i, &j| {
                        let di = (Complex64::new(b[i].0, b[i].1) - zx).norm();
                        let dj = (Complex64::new(b[j].0, b[j].1) - zx).norm();
                        di.total_cmp(&dj)
                    })
                    .unwrap();
                used[best] = true;
                let d = (Complex64::new(b[best].0, b[best].1) - zx).norm();
                prop_assert!(d < 1e-6, "eigenvalue {:?} unmatched (closest {:?}, d={})", x, b[best], d);
            }
            let sr_ours = spectral_radius(&ours);
            let sr_theirs = spectral_radius(&theirs);
            prop_assert!((sr_ours - sr_theirs).abs() < 1e-6);
        }

        #[test]
        fn sorted_by_descending_magnitude(n in 1usize..7, seed in proptest::collection::vec(-2.0f64..2.0, 49)) {
            let m = DMatrix::from_fn(n, n, |i, j| seed[i * 7 + j]);
            let e = eigenvalues_small(&m).unwrap();
            for w in e.windows(2) {
                prop_assert!(w[0].norm() >= w[1].norm());
            }
            let trace: f64 = (0..n).map(|i| m[(i, i)]).sum();
            let sum: Complex64 = e.iter().sum();
            prop_assert!((sum.re - trace).abs() < 1e-7 * (1.0 + trace.abs()));
            prop_assert!(sum.im.abs() < 1e-7);
        }
    }
}
