//! `(lambda - A)^{-1}` through the birth fixed point, and the perturbed
//! resolvent `(lambda - A - B)^{-1}` through the factorisation
//! `(lambda - A)^{-1} (1 - B (lambda - A)^{-1})^{-1}`.

use faer::Mat;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::EvolutionCache;
use crate::linalg::{self, Factored};
use crate::model::AgeProfile;
use crate::semigroup::{generator_residual, Perturbation, PerturbationSpec};
use crate::spectrum::GeneratorMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolventOptions {
    /// Condition estimate of `I - Q_lambda` above which lambda is treated as spectral.
    pub cond_max: f64,
    /// Certification tolerance, relative to `||phi||`.
    pub tol_res: f64,
    pub require_certified: bool,
    pub fixed_point_tol: f64,
    pub max_iter: usize,
    /// Largest number of unknowns for the dense fallback.
    pub dense_limit: usize,
}

impl Default for ResolventOptions {
    fn default() -> Self {
        ResolventOptions {
            cond_max: 1e12,
            tol_res: 1e-8,
            require_certified: true,
            fixed_point_tol: 1e-12,
            max_iter: 500,
            dense_limit: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolvePath {
    Direct,
    NeumannSeries { iterations: usize, ratios: Vec<f64> },
    DenseFallback,
}

#[derive(Debug, Clone)]
pub struct ResolventResult {
    pub psi: AgeProfile,
    pub psi0: Vec<f64>,
    pub q_norm: f64,
    pub condition: f64,
    pub certified_residual: f64,
    pub certified: bool,
    pub path: SolvePath,
}

/// Scalar factors `c_i(lambda) = prod_{k <= i} sigma_k(lambda)`.
fn chain_factors(cache: &EvolutionCache, lambda: f64) -> Vec<f64> {
    let n = cache.n_age();
    let mut c = Vec::with_capacity(n + 1);
    c.push(1.0);
    for k in 1..=n {
        let prev = c[k - 1];
        c.push(prev * cache.scalar_factor(lambda, k));
    }
    c
}

fn check_lambda(cache: &EvolutionCache, lambda: f64) -> Result<()> {
    if !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda must be finite, got {lambda}")));
    }
    let floor = cache.lambda_floor();
    if lambda <= floor {
        return Err(Error::Domain(format!(
            "lambda = {lambda} is at or below the pole {floor} of the age discretisation"
        )));
    }
    Ok(())
}

/// `Q_lambda = sum_i w_i diag(beta_i) Pi_lambda(a_i, 0)`.
pub fn birth_matrix(cache: &EvolutionCache, lambda: f64) -> Result<Mat<f64>> {
    check_lambda(cache, lambda)?;
    Ok(birth_matrix_with(cache, &chain_factors(cache, lambda)))
}

fn birth_matrix_with(cache: &EvolutionCache, c: &[f64]) -> Mat<f64> {
    let ns = cache.n_space();
    let w = &cache.model().age.weights;
    let mut q = Mat::<f64>::zeros(ns, ns);
    for (i, ci) in c.iter().enumerate() {
        let beta = &cache.birth()[i];
        if beta.iter().all(|&b| b == 0.0) {
            continue;
        }
        let p = cache.prop_from_zero(i);
        for col in 0..ns {
            for row in 0..ns {
                q[(row, col)] += w[i] * beta[row] * ci * p[(row, col)];
            }
        }
    }
    q
}

/// The resolvent at a fixed lambda with `I - Q_lambda` factored once.
pub struct Resolvent<'a> {
    cache: &'a EvolutionCache,
    lambda: f64,
    factors: Vec<f64>,
    q_norm: f64,
    solver: Factored,
    opts: ResolventOptions,
}

impl<'a> Resolvent<'a> {
    pub fn new(cache: &'a EvolutionCache, lambda: f64, opts: ResolventOptions) -> Result<Resolvent<'a>> {
        check_lambda(cache, lambda)?;
        let factors = chain_factors(cache, lambda);
        let q = birth_matrix_with(cache, &factors);
        let q_norm = cache.model().operator_norm(&q);
        let ns = cache.n_space();
        let iq = Mat::<f64>::from_fn(ns, ns, |r, c| (if r == c { 1.0 } else { 0.0 }) - q[(r, c)]);
        let solver = Factored::with_scale(&iq, 1.0 + linalg::norm1(&q));
        if !(solver.condition <= opts.cond_max) {
            return Err(Error::NearSpectrum {
                lambda,
                condition: solver.condition,
            });
        }
        Ok(Resolvent {
            cache,
            lambda,
            factors,
            q_norm,
            solver,
            opts,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn q_norm(&self) -> f64 {
        self.q_norm
    }

    pub fn condition(&self) -> f64 {
        self.solver.condition
    }

    /// Inner forcing `G_i`, the part of `psi_i` driven by `phi` with zero
    /// newborn state.
    fn inner(&self, phi: &AgeProfile) -> Vec<Vec<f64>> {
        let cache = self.cache;
        let n = cache.n_age();
        let ns = cache.n_space();
        let da = cache.da();
        let m = cache.scalar_mortality();
        let lam = self.lambda;
        let mut g = vec![vec![0.0; ns]; n + 1];
        let alpha1 = 1.0 + (lam + m[1]) * da;
        for k in 0..ns {
            g[1][k] = da * phi.values[1][k] / alpha1;
        }
        let mut arg = vec![0.0; ns];
        let mut tmp = vec![0.0; ns];
        for i in 2..=n {
            let bt = 1.0 - 0.5 * (lam + m[i - 1]) * da;
            let alpha = 1.0 + 0.5 * (lam + m[i]) * da;
            for k in 0..ns {
                arg[k] = bt * g[i - 1][k] + 0.5 * da * phi.values[i - 1][k];
            }
            linalg::mat_vec_into(cache.prop(i), &arg, &mut tmp);
            for k in 0..ns {
                g[i][k] = (tmp[k] + 0.5 * da * phi.values[i][k]) / alpha;
            }
        }
        g
    }

    /// `(lambda - A)^{-1} phi` together with `psi(0)`, uncertified.
    pub fn solve(&self, phi: &AgeProfile) -> Result<(AgeProfile, Vec<f64>)> {
        let cache = self.cache;
        cache.model().check_profile(phi)?;
        let n = cache.n_age();
        let ns = cache.n_space();
        let w = &cache.model().age.weights;
        let g = self.inner(phi);
        let mut f = vec![0.0; ns];
        for i in 1..=n {
            for k in 0..ns {
                f[k] += w[i] * cache.birth()[i][k] * g[i][k];
            }
        }
        let psi0 = self.solver.solve(&f);
        let mut psi = AgeProfile::zeros(n + 1, ns);
        psi.values[0] = psi0.clone();
        let mut tmp = vec![0.0; ns];
        for i in 1..=n {
            linalg::mat_vec_into(cache.prop_from_zero(i), &psi0, &mut tmp);
            for k in 0..ns {
                psi.values[i][k] = self.factors[i] * tmp[k] + g[i][k];
            }
        }
        if psi.values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite resolvent output".into()));
        }
        Ok((psi, psi0))
    }

    pub fn apply(&self, phi: &AgeProfile) -> Result<ResolventResult> {
        let (psi, psi0) = self.solve(phi)?;
        let mut zeta = psi.clone();
        zeta.scale(self.lambda);
        zeta.axpy(-1.0, phi);
        let residual = generator_residual(&psi, &zeta, self.cache)?;
        finish(
            self.cache,
            phi,
            psi,
            psi0,
            self.q_norm,
            self.solver.condition,
            residual,
            SolvePath::Direct,
            &self.opts,
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    cache: &EvolutionCache,
    phi: &AgeProfile,
    psi: AgeProfile,
    psi0: Vec<f64>,
    q_norm: f64,
    condition: f64,
    residual: f64,
    path: SolvePath,
    opts: &ResolventOptions,
) -> Result<ResolventResult> {
    let tol = opts.tol_res * cache.model().profile_norm(phi)?;
    let certified = residual <= tol;
    if !certified && opts.require_certified {
        return Err(Error::Uncertified {
            residual,
            tolerance: tol,
        });
    }
    Ok(ResolventResult {
        psi,
        psi0,
        q_norm,
        condition,
        certified_residual: residual,
        certified,
        path,
    })
}

pub fn apply_resolvent(
    phi: &AgeProfile,
    lambda: f64,
    cache: &EvolutionCache,
    opts: &ResolventOptions,
) -> Result<ResolventResult> {
    Resolvent::new(cache, lambda, *opts)?.apply(phi)
}

/// `(lambda - A - B)^{-1} phi`.
///
/// Solves `w = phi + B (lambda - A)^{-1} w` by fixed-point iteration and
/// returns `(lambda - A)^{-1} w`. When the iteration does not converge, or
/// `lambda` is spectral for the unperturbed operator, the dense block system
/// is solved instead.
pub fn apply_perturbed_resolvent(
    phi: &AgeProfile,
    lambda: f64,
    cache: &EvolutionCache,
    pert: &PerturbationSpec,
    opts: &ResolventOptions,
) -> Result<ResolventResult> {
    let b = pert.compile(cache)?;
    if b.is_zero() {
        return apply_resolvent(phi, lambda, cache, opts);
    }
    cache.model().check_profile(phi)?;
    check_lambda(cache, lambda)?;
    let model = cache.model();
    if let Ok(r) = Resolvent::new(cache, lambda, *opts) {
        let phi_norm = model.profile_norm(phi)?;
        let mut w = phi.clone();
        let mut ratios = Vec::new();
        let mut prev_diff = f64::NAN;
        let mut growth = 0usize;
        for it in 1..=opts.max_iter {
            let (psi, _) = r.solve(&w)?;
            let mut next = b.apply(&psi);
            next.axpy(1.0, phi);
            let diff = model.profile_norm(&next.sub(&w))?;
            let scale = model.profile_norm(&next)?;
            if prev_diff.is_finite() && prev_diff > 0.0 {
                let ratio = diff / prev_diff;
                ratios.push(ratio);
                growth = if ratio >= 1.0 { growth + 1 } else { 0 };
            }
            prev_diff = diff;
            w = next;
            if !diff.is_finite() || growth >= 5 {
                break;
            }
            if diff <= opts.fixed_point_tol * scale.max(phi_norm) {
                let (psi, psi0) = r.solve(&w)?;
                return certify_perturbed(
                    cache,
                    &b,
                    phi,
                    psi,
                    psi0,
                    lambda,
                    r.q_norm(),
                    r.condition(),
                    SolvePath::NeumannSeries { iterations: it, ratios },
                    opts,
                );
            }
        }
    }
    dense_perturbed(phi, lambda, cache, pert, &b, opts)
}

#[allow(clippy::too_many_arguments)]
fn certify_perturbed(
    cache: &EvolutionCache,
    b: &Perturbation,
    phi: &AgeProfile,
    psi: AgeProfile,
    psi0: Vec<f64>,
    lambda: f64,
    q_norm: f64,
    condition: f64,
    path: SolvePath,
    opts: &ResolventOptions,
) -> Result<ResolventResult> {
    let mut zeta = psi.clone();
    zeta.scale(lambda);
    zeta.axpy(-1.0, phi);
    zeta.axpy(-1.0, &b.apply(&psi));
    let residual = generator_residual(&psi, &zeta, cache)?;
    finish(cache, phi, psi, psi0, q_norm, condition, residual, path, opts)
}

fn dense_perturbed(
    phi: &AgeProfile,
    lambda: f64,
    cache: &EvolutionCache,
    pert: &PerturbationSpec,
    b: &Perturbation,
    opts: &ResolventOptions,
) -> Result<ResolventResult> {
    let gen = GeneratorMatrix::assemble(cache, pert, opts.dense_limit)?;
    let dim = gen.dim;
    let sys = Mat::<f64>::from_fn(dim, dim, |r, c| {
        (if r == c { lambda } else { 0.0 }) - gen.matrix[(r, c)]
    });
    let solver = Factored::with_scale(&sys, lambda.abs() + linalg::norm1(&gen.matrix));
    if !(solver.condition <= opts.cond_max) {
        return Err(Error::NearSpectrum {
            lambda,
            condition: solver.condition,
        });
    }
    let x = solver.solve(&gen.reduce(phi));
    let psi = gen.lift(&x);
    let psi0 = psi.values[0].clone();
    let q_norm = cache.model().operator_norm(&birth_matrix(cache, lambda)?);
    certify_perturbed(
        cache,
        b,
        phi,
        psi,
        psi0,
        lambda,
        q_norm,
        solver.condition,
        SolvePath::DenseFallback,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgeGrid, BoundaryCondition, Coefficients, Field, Model, SpaceGrid};

    fn scalar(n: usize, a_max: f64, beta: f64) -> EvolutionCache {
        let age = AgeGrid::new(a_max, n).unwrap();
        let space = SpaceGrid::new(2.0, 1, BoundaryCondition::dirichlet()).unwrap();
        let m = Model::new(age, space, Coefficients::new(None, Field::constant(0.0), Field::constant(beta))).unwrap();
        EvolutionCache::build(&m, 4).unwrap()
    }

    #[test]
    fn zero_input_gives_zero() {
        let c = scalar(8, 2.0, 1.0);
        let phi = c.model().zero_profile();
        let r = apply_resolvent(&phi, 1.0, &c, &ResolventOptions::default()).unwrap();
        assert_eq!(r.psi.max_abs(), 0.0);
        assert_eq!(r.psi0, vec![0.0]);
    }

    #[test]
    fn birthless_transport_closed_form() {
        let mut errs = vec![];
        for n in [16usize, 32, 64] {
            let c = scalar(n, 1.0, 0.0);
            let phi = AgeProfile::from_fn(n + 1, 1, |_, _| 1.0);
            let r = apply_resolvent(&phi, 1.0, &c, &ResolventOptions::default()).unwrap();
            let grid = &c.model().age;
            let e = (0..=n)
                .map(|i| (r.psi.values[i][0] - (1.0 - (-grid.nodes[i]).exp())).abs())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.9, "{errs:?}");
        }
    }

    #[test]
    fn scalar_birth_matrix_quadrature() {
        let c = scalar(64, 2.0, 1.0);
        let q = birth_matrix(&c, 0.5).unwrap()[(0, 0)];
        let exact = (1.0 - (-1.0f64).exp()) / 0.5;
        assert!((q - exact).abs() < 1e-3);
        let norms: Vec<f64> = [10.0, 100.0, 1000.0]
            .iter()
            .map(|&l| birth_matrix(&c, l).unwrap()[(0, 0)].abs())
            .collect();
        assert!(norms[0] > norms[1] && norms[1] > norms[2]);
        let z = scalar(8, 2.0, 0.0);
        assert_eq!(birth_matrix(&z, 0.3).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn birth_condition_holds() {
        let c = scalar(20, 2.0, 1.0);
        let phi = AgeProfile::from_fn(21, 1, |i, _| 1.0 + (i as f64).cos());
        let r = apply_resolvent(&phi, 2.0, &c, &ResolventOptions::default()).unwrap();
        let w = &c.model().age.weights;
        let s: f64 = (0..=20).map(|i| w[i] * r.psi.values[i][0]).sum();
        assert!((s - r.psi0[0]).abs() <= 1e-11 * s.abs());
        assert!(r.certified);
    }

    #[test]
    fn near_spectrum_detected() {
        let c = scalar(32, 2.0, 1.0);
        // bisect r(Q) = 1 directly on the 1x1 matrix
        let (mut lo, mut hi) = (0.1, 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if birth_matrix(&c, mid).unwrap()[(0, 0)] > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let phi = AgeProfile::from_fn(33, 1, |_, _| 1.0);
        let e = apply_resolvent(&phi, lo, &c, &ResolventOptions::default());
        assert!(matches!(e, Err(Error::NearSpectrum { .. })), "{e:?}");
    }

    #[test]
    fn zero_perturbation_is_plain_resolvent() {
        let c = scalar(8, 2.0, 1.0);
        let phi = AgeProfile::from_fn(9, 1, |i, _| i as f64);
        let o = ResolventOptions::default();
        let a = apply_resolvent(&phi, 2.0, &c, &o).unwrap();
        let b = apply_perturbed_resolvent(&phi, 2.0, &c, &PerturbationSpec::none(), &o).unwrap();
        assert_eq!(a.psi, b.psi);
    }
}
