//! Small dense linear-algebra helpers on top of `faer`.

use faer::prelude::*;
use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;

use crate::error::{Error, Result};

pub use faer::c64;

/// Runs all dense kernels on the calling thread, which makes floating-point
/// results independent of scheduling.
pub fn set_sequential() {
    faer::set_global_parallelism(faer::Par::Seq);
}

pub fn mat_vec(m: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    mat_vec_into(m, x, &mut out);
    out
}

pub fn mat_vec_into(m: &Mat<f64>, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.ncols(), x.len());
    debug_assert_eq!(m.nrows(), out.len());
    out.iter_mut().for_each(|o| *o = 0.0);
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = m.col(j);
        for (i, o) in out.iter_mut().enumerate() {
            *o += col[i] * xj;
        }
    }
}

pub fn col_from(x: &[f64]) -> Mat<f64> {
    Mat::from_fn(x.len(), 1, |i, _| x[i])
}

pub fn col_to_vec(m: &Mat<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

/// Column-sum norm.
pub fn norm1(m: &Mat<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Row-sum norm.
pub fn norm_inf(m: &Mat<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn min_entry(m: &Mat<f64>) -> f64 {
    let mut lo = f64::INFINITY;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            lo = lo.min(m[(i, j)]);
        }
    }
    lo
}

pub fn all_finite(m: &Mat<f64>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].is_finite()))
}

/// LU factorisation together with a 1-norm condition estimate.
pub struct Factored {
    pub lu: faer::linalg::solvers::PartialPivLu<f64>,
    /// Estimate of `||A^{-1}||_1`.
    pub inv_norm: f64,
    /// `scale * ||A^{-1}||_1`, with `scale = ||A||_1` unless given.
    pub condition: f64,
}

impl Factored {
    pub fn new(a: &Mat<f64>) -> Factored {
        Factored::with_scale(a, norm1(a))
    }

    /// Condition relative to `scale`; for `A = I - Q` the natural choice is
    /// `1 + ||Q||`, which stays meaningful for 1x1 systems.
    pub fn with_scale(a: &Mat<f64>, scale: f64) -> Factored {
        let lu = a.partial_piv_lu();
        let inv_norm = inverse_norm1(&lu, a.nrows());
        let c = scale * inv_norm;
        let condition = if c.is_finite() { c } else { f64::INFINITY };
        Factored { lu, inv_norm, condition }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        col_to_vec(&self.lu.solve(col_from(b)))
    }
}

/// Estimate of the 1-norm condition number `||A||_1 ||A^{-1}||_1`.
///
/// Small systems use the exact inverse; larger ones use Hager's
/// iteration on `A^{-1}`. A non-finite result is reported as infinity.
pub fn cond1_estimate(a: &Mat<f64>, lu: &faer::linalg::solvers::PartialPivLu<f64>) -> f64 {
    let c = norm1(a) * inverse_norm1(lu, a.nrows());
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

fn inverse_norm1(lu: &faer::linalg::solvers::PartialPivLu<f64>, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let v = if n <= 200 {
        let inv = lu.inverse();
        if !all_finite(&inv) {
            return f64::INFINITY;
        }
        norm1(&inv)
    } else {
        hager_inverse_norm1(lu, n)
    };
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn hager_inverse_norm1(lu: &faer::linalg::solvers::PartialPivLu<f64>, n: usize) -> f64 {
    let mut x = Mat::from_fn(n, 1, |_, _| 1.0 / n as f64);
    let mut est = 0.0;
    for _ in 0..5 {
        let y = lu.solve(&x);
        let y_norm: f64 = (0..n).map(|i| y[(i, 0)].abs()).sum();
        if !y_norm.is_finite() {
            return f64::INFINITY;
        }
        if y_norm <= est {
            break;
        }
        est = y_norm;
        let xi = Mat::from_fn(n, 1, |i, _| if y[(i, 0)] >= 0.0 { 1.0 } else { -1.0 });
        let z = lu.solve_transpose(&xi);
        let (jmax, zmax) = (0..n)
            .map(|i| (i, z[(i, 0)].abs()))
            .fold((0, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        let ztx: f64 = (0..n).map(|i| z[(i, 0)] * x[(i, 0)]).sum();
        if zmax <= ztx {
            break;
        }
        x = Mat::zeros(n, 1);
        x[(jmax, 0)] = 1.0;
    }
    // Higham's alternative test vector guards against the worst cases.
    let alt = Mat::from_fn(n, 1, |i, _| {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        s * (1.0 + i as f64 / (n as f64 - 1.0).max(1.0))
    });
    let y = lu.solve(&alt);
    let alt_est = 2.0 * (0..n).map(|i| y[(i, 0)].abs()).sum::<f64>() / (3.0 * n as f64);
    est.max(alt_est)
}

pub fn eigenvalues(m: &Mat<f64>) -> Result<Vec<c64>> {
    m.eigenvalues()
        .map_err(|e| Error::Numerical(format!("eigenvalue computation failed: {e:?}")))
}

/// Eigenvalues sorted by decreasing modulus.
pub fn eigenvalues_by_modulus(m: &Mat<f64>) -> Result<Vec<c64>> {
    let mut ev = eigenvalues(m)?;
    ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    Ok(ev)
}

pub fn dense_spectral_radius(m: &Mat<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

pub fn singular_values(m: &Mat<f64>) -> Result<Vec<f64>> {
    m.singular_values()
        .map_err(|e| Error::Numerical(format!("singular value computation failed: {e:?}")))
}

#[derive(Debug, Clone)]
pub struct PowerOutcome {
    pub radius: f64,
    /// Nonnegative iterate normalised to unit l1 norm.
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Collatz-Wielandt bracket of the last iterate, when it was positive.
    pub bracket: Option<(f64, f64)>,
}

/// Power iteration for a nonnegative operator, started from the all-ones vector.
///
/// When the iterate is strictly positive the Collatz-Wielandt quotients give
/// a two-sided bracket for the spectral radius and convergence is declared
/// once the bracket is relatively tighter than `tol`. Otherwise the l1 growth
/// ratio is used.
pub fn power_iteration<F>(n: usize, mut apply: F, tol: f64, max_iter: usize) -> PowerOutcome
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut x = vec![1.0 / n as f64; n];
    let mut y = vec![0.0; n];
    let mut prev_ratio = f64::NAN;
    let mut stalls = 0;
    for it in 1..=max_iter {
        apply(&x, &mut y);
        let ynorm: f64 = y.iter().map(|v| v.abs()).sum();
        if ynorm == 0.0 || !ynorm.is_finite() {
            return PowerOutcome {
                radius: if ynorm == 0.0 { 0.0 } else { f64::NAN },
                vector: x,
                iterations: it,
                converged: ynorm == 0.0,
                bracket: None,
            };
        }
        let positive = x.iter().all(|&v| v > 0.0);
        let bracket = if positive {
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for (yi, xi) in y.iter().zip(&x) {
                let q = yi / xi;
                lo = lo.min(q);
                hi = hi.max(q);
            }
            Some((lo, hi))
        } else {
            None
        };
        let ratio = ynorm; // x has unit l1 norm
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / ynorm;
        }
        if let Some((lo, hi)) = bracket {
            if hi - lo <= tol * hi {
                return PowerOutcome {
                    radius: 0.5 * (lo + hi),
                    vector: x,
                    iterations: it,
                    converged: true,
                    bracket: Some((lo, hi)),
                };
            }
        } else if (ratio - prev_ratio).abs() <= tol * ratio {
            stalls += 1;
            if stalls >= 3 {
                return PowerOutcome {
                    radius: ratio,
                    vector: x,
                    iterations: it,
                    converged: true,
                    bracket: None,
                };
            }
        } else {
            stalls = 0;
        }
        prev_ratio = ratio;
        if it == max_iter {
            return PowerOutcome {
                radius: ratio,
                vector: x,
                iterations: it,
                converged: false,
                bracket,
            };
        }
    }
    PowerOutcome {
        radius: f64::NAN,
        vector: x,
        iterations: 0,
        converged: false,
        bracket: None,
    }
}

/// Least-squares slope of `y` against `x`. Returns 0 when `x` has no spread.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_matches_dense_radius() {
        let m = Mat::from_fn(4, 4, |i, j| 1.0 + ((i * 3 + j * 5) % 7) as f64);
        let out = power_iteration(4, |x, y| mat_vec_into(&m, x, y), 1e-13, 10_000);
        let dense = dense_spectral_radius(&m).unwrap();
        assert!(out.converged);
        assert!((out.radius - dense).abs() < 1e-10 * dense);
        let (lo, hi) = out.bracket.unwrap();
        assert!(lo <= dense * (1.0 + 1e-12) && dense <= hi * (1.0 + 1e-12));
    }

    #[test]
    fn power_iteration_zero_operator() {
        let out = power_iteration(3, |_, y| y.fill(0.0), 1e-12, 10);
        assert_eq!(out.radius, 0.0);
        assert!(out.converged);
    }

    #[test]
    fn condition_estimate_tracks_exact_value() {
        for n in [5usize, 250] {
            let a = Mat::from_fn(n, n, |i, j| {
                if i == j {
                    2.0 + i as f64 * 0.01
                } else if i + 1 == j {
                    -1.0
                } else {
                    0.0
                }
            });
            let f = Factored::new(&a);
            let exact = norm1(&a) * norm1(&a.partial_piv_lu().inverse());
            assert!(f.condition <= exact * (1.0 + 1e-10));
            assert!(f.condition >= 0.3 * exact, "{} vs {}", f.condition, exact);
        }
    }

    #[test]
    fn singular_matrix_condition_is_huge() {
        let a = Mat::from_fn(3, 3, |i, j| (i + j) as f64);
        assert!(Factored::new(&a).condition > 1e12);
    }

    #[test]
    fn slope_of_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        assert!((ls_slope(&x, &y) - 2.5).abs() < 1e-14);
        assert_eq!(ls_slope(&[1.0, 1.0], &[0.0, 3.0]), 0.0);
    }

    #[test]
    fn mat_vec_agrees_with_faer() {
        let m = Mat::from_fn(3, 2, |i, j| (i as f64) - 2.0 * j as f64);
        let x = [0.5, -1.5];
        let ours = mat_vec(&m, &x);
        let theirs = col_to_vec(&(&m * col_from(&x)));
        assert_eq!(ours, theirs);
    }
}
