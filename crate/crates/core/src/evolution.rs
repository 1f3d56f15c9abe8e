//! Discrete evolution operator `Pi(a_i, a_j)` and its lambda-shifted family.
//!
//! `A(a)` is split as `A0(a) - m(a) I` with `m(a) = min_x mu(a, x)`. The
//! matrix part `A0` is propagated by Crank-Nicolson substeps frozen at the
//! substep midpoint age; the scalar part `m` is carried by rational factors
//! that treat `m` exactly like the spectral parameter, so that building a
//! cache with mortality `mu + c` reproduces the `c`-shifted family exactly.

use std::sync::OnceLock;

use faer::prelude::*;
use faer::Mat;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Model;

#[derive(Debug)]
pub struct EvolutionCache {
    model: Model,
    substeps: usize,
    /// `m(a_i)`.
    scalar: Vec<f64>,
    /// `P_{i+1}`: the matrix part of the propagator from `a_i` to `a_{i+1}`.
    props: Vec<Mat<f64>>,
    /// `step[i] = sigma_{i+1}(0) P_{i+1}`.
    steps: Vec<Mat<f64>>,
    /// `beta(a_i, x_k)`.
    birth: Vec<Vec<f64>>,
    /// `P(i, 0)`, the matrix part of `Pi(a_i, 0)`.
    from_zero: Vec<Mat<f64>>,
    /// `Pi(a_i, a_j)` for `j <= i`, packed row by row and filled on demand.
    products: Vec<OnceLock<Mat<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateFit {
    pub m0: f64,
    pub varpi: f64,
    /// `(a_i, a_j, ||Pi(a_i, a_j)||)`.
    pub samples: Vec<(f64, f64, f64)>,
}

impl EstimateFit {
    pub fn envelope(&self, tau: f64) -> f64 {
        self.m0 * (self.varpi * tau).exp()
    }
}

/// Which `(i, j)` pairs enter the estimate fit.
#[derive(Debug, Clone)]
pub enum EstimateSample {
    /// Every pair with both indices multiples of the stride (plus the last node).
    Stride(usize),
    Pairs(Vec<(usize, usize)>),
}

impl Default for EstimateSample {
    fn default() -> Self {
        EstimateSample::Stride(1)
    }
}

fn packed(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl EvolutionCache {
    pub fn build(model: &Model, substeps: usize) -> Result<EvolutionCache> {
        if substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be at least 1".into()));
        }
        model.validate()?;
        let n = model.age.n_age;
        let ns = model.n_space();
        let da = model.age.da();
        let delta = da / substeps as f64;
        let scalar: Vec<f64> = model
            .age
            .nodes
            .iter()
            .map(|&a| model.mortality_at(a).into_iter().fold(f64::INFINITY, f64::min))
            .collect();
        let birth: Vec<Vec<f64>> = model.age.nodes.iter().map(|&a| model.birth_at(a)).collect();

        let mut props = Vec::with_capacity(n);
        for i in 0..n {
            let a0 = model.age.nodes[i];
            let mut p = Mat::<f64>::identity(ns, ns);
            for q in 0..substeps {
                let am = a0 + (q as f64 + 0.5) * delta;
                let mut a = model.spatial_operator(am)?.matrix;
                let mm = model.mortality_at(am).into_iter().fold(f64::INFINITY, f64::min);
                for k in 0..ns {
                    a[(k, k)] += mm;
                }
                let lhs = Mat::<f64>::from_fn(ns, ns, |r, c| {
                    (if r == c { 1.0 } else { 0.0 }) - 0.5 * delta * a[(r, c)]
                });
                let rhs = Mat::<f64>::from_fn(ns, ns, |r, c| {
                    (if r == c { 1.0 } else { 0.0 }) + 0.5 * delta * a[(r, c)]
                });
                let f = linalg::Factored::new(&lhs);
                if !f.condition.is_finite() || f.condition > 1e14 {
                    return Err(Error::StepConstruction { interval: i, substeps });
                }
                let sub = f.lu.solve(&rhs);
                p = &sub * &p;
            }
            if !linalg::all_finite(&p) {
                return Err(Error::StepConstruction { interval: i, substeps });
            }
            props.push(p);
        }

        let mut cache = EvolutionCache {
            model: model.clone(),
            substeps,
            scalar,
            props,
            steps: Vec::new(),
            birth,
            from_zero: Vec::new(),
            products: (0..(n + 1) * (n + 2) / 2).map(|_| OnceLock::new()).collect(),
        };
        for k in 1..=n {
            let (num, den) = cache.factor_parts(0.0, k);
            if !(den > 0.0) || !num.is_finite() {
                return Err(Error::StepConstruction { interval: k - 1, substeps });
            }
        }
        cache.steps = (0..n)
            .map(|i| {
                let s = cache.scalar_factor(0.0, i + 1);
                Mat::from_fn(ns, ns, |r, c| s * cache.props[i][(r, c)])
            })
            .collect();
        let mut fz = Vec::with_capacity(n + 1);
        fz.push(Mat::<f64>::identity(ns, ns));
        for i in 0..n {
            let next = &cache.props[i] * &fz[i];
            fz.push(next);
        }
        cache.from_zero = fz;
        Ok(cache)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn n_age(&self) -> usize {
        self.model.age.n_age
    }

    pub fn n_space(&self) -> usize {
        self.model.n_space()
    }

    pub fn da(&self) -> f64 {
        self.model.age.da()
    }

    /// `m(a_i) = min_x mu(a_i, x)`.
    pub fn scalar_mortality(&self) -> &[f64] {
        &self.scalar
    }

    pub fn birth(&self) -> &[Vec<f64>] {
        &self.birth
    }

    pub fn step(&self, i: usize) -> &Mat<f64> {
        &self.steps[i]
    }

    pub fn steps(&self) -> &[Mat<f64>] {
        &self.steps
    }

    /// Matrix part `P_k` of the step into node `k` (`1 <= k <= n_age`).
    pub fn prop(&self, k: usize) -> &Mat<f64> {
        &self.props[k - 1]
    }

    /// Matrix part of `Pi(a_i, 0)`.
    pub fn prop_from_zero(&self, i: usize) -> &Mat<f64> {
        &self.from_zero[i]
    }

    fn factor_parts(&self, lambda: f64, k: usize) -> (f64, f64) {
        let da = self.da();
        if k == 1 {
            (1.0, 1.0 + (lambda + self.scalar[1]) * da)
        } else {
            (
                1.0 - 0.5 * (lambda + self.scalar[k - 1]) * da,
                1.0 + 0.5 * (lambda + self.scalar[k]) * da,
            )
        }
    }

    /// Scalar factor `sigma_k(lambda)` of the step into node `k`.
    ///
    /// The first interval uses the implicit Euler factor, the rest the
    /// trapezoid (Pade) factor.
    pub fn scalar_factor(&self, lambda: f64, k: usize) -> f64 {
        let (num, den) = self.factor_parts(lambda, k);
        num / den
    }

    /// `prod_{k = j+1}^{i} sigma_k(lambda)`.
    pub fn shift_factor(&self, lambda: f64, i: usize, j: usize) -> f64 {
        (j + 1..=i).map(|k| self.scalar_factor(lambda, k)).product()
    }

    /// Largest lambda at which some scheme denominator vanishes. Shifted
    /// quantities are only meaningful strictly above this value.
    pub fn lambda_floor(&self) -> f64 {
        let da = self.da();
        let mut f = -1.0 / da - self.scalar[1];
        for k in 2..=self.n_age() {
            f = f.max(-2.0 / da - self.scalar[k]);
        }
        f
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        let n = self.n_age();
        if i > n || j > n {
            return Err(Error::Dimension {
                context: "age index",
                expected: n,
                found: i.max(j),
            });
        }
        if j > i {
            return Err(Error::Causality { to: i, from: j });
        }
        Ok(())
    }

    fn check_vec(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_space() {
            return Err(Error::Dimension {
                context: "spatial vector",
                expected: self.n_space(),
                found: v.len(),
            });
        }
        Ok(())
    }

    /// `Pi(a_i, a_j) v` by sequential step application.
    pub fn apply_pi(&self, i: usize, j: usize, v: &[f64]) -> Result<Vec<f64>> {
        self.check_pair(i, j)?;
        self.check_vec(v)?;
        if let Some(p) = self.products[packed(i, j)].get() {
            return Ok(linalg::mat_vec(p, v));
        }
        let mut cur = v.to_vec();
        let mut next = vec![0.0; v.len()];
        for k in j..i {
            linalg::mat_vec_into(&self.steps[k], &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// `Pi_lambda(a_i, a_j) v`, the evolution of `A - lambda`.
    pub fn apply_pi_shifted(&self, lambda: f64, i: usize, j: usize, v: &[f64]) -> Result<Vec<f64>> {
        self.check_pair(i, j)?;
        self.check_vec(v)?;
        let mut cur = v.to_vec();
        let mut next = vec![0.0; v.len()];
        for k in j..i {
            linalg::mat_vec_into(&self.props[k], &cur, &mut next);
            let s = self.scalar_factor(lambda, k + 1);
            for (c, x) in cur.iter_mut().zip(&next) {
                *c = s * x;
            }
        }
        Ok(cur)
    }

    /// The matrix `Pi(a_i, a_j)`, memoised.
    pub fn pi(&self, i: usize, j: usize) -> Result<&Mat<f64>> {
        self.check_pair(i, j)?;
        Ok(self.products[packed(i, j)].get_or_init(|| {
            let ns = self.n_space();
            let mut p = Mat::<f64>::identity(ns, ns);
            for k in j..i {
                p = &self.steps[k] * &p;
            }
            p
        }))
    }

    /// Smallest entry over all step matrices.
    pub fn min_step_entry(&self) -> f64 {
        self.steps.iter().map(linalg::min_entry).fold(f64::INFINITY, f64::min)
    }

    /// Least-squares log-linear envelope `||Pi(a_i, a_j)|| <= m0 exp(varpi (a_i - a_j))`.
    pub fn fit_estimate(&self, sample: &EstimateSample) -> Result<EstimateFit> {
        let n = self.n_age();
        let pairs: Vec<(usize, usize)> = match sample {
            EstimateSample::Stride(s) => {
                let s = (*s).max(1);
                let mut idx: Vec<usize> = (0..=n).step_by(s).collect();
                if *idx.last().unwrap() != n {
                    idx.push(n);
                }
                let mut p = vec![];
                for &i in &idx {
                    for &j in &idx {
                        if j <= i {
                            p.push((i, j));
                        }
                    }
                }
                p
            }
            EstimateSample::Pairs(p) => p.clone(),
        };
        let nodes = &self.model.age.nodes;
        let mut samples = Vec::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            let norm = self.model.operator_norm(self.pi(i, j)?);
            samples.push((nodes[i], nodes[j], norm));
        }
        let usable: Vec<(f64, f64)> = samples
            .iter()
            .filter(|s| s.2 > 0.0 && s.0 > s.1)
            .map(|s| (s.0 - s.1, s.2.ln()))
            .collect();
        let xs: Vec<f64> = usable.iter().map(|u| u.0).collect();
        let ys: Vec<f64> = usable.iter().map(|u| u.1).collect();
        let varpi = linalg::ls_slope(&xs, &ys);
        let mut m0 = 1.0f64;
        let mut exceeded = false;
        for &(a, s, norm) in &samples {
            let r = norm * (-varpi * (a - s)).exp();
            if r > m0 {
                m0 = r;
                exceeded = true;
            }
        }
        if exceeded {
            m0 *= 1.0 + 1e-12;
        }
        Ok(EstimateFit { m0, varpi, samples })
    }
}

/// Smallest substep count for which every Crank-Nicolson numerator
/// `I + delta/2 A0` has a nonnegative diagonal, which together with the
/// M-matrix structure of `I - delta/2 A0` makes each step entrywise nonnegative.
pub fn positivity_substeps(model: &Model) -> Result<usize> {
    let n = model.age.n_age;
    let da = model.age.da();
    let mut worst = 0.0f64;
    for i in 0..n {
        for frac in [0.0, 0.5, 1.0] {
            let a = model.age.nodes[i] + frac * da;
            let mut m = model.spatial_operator(a)?.matrix;
            let mm = model.mortality_at(a).into_iter().fold(f64::INFINITY, f64::min);
            for k in 0..m.nrows() {
                m[(k, k)] += mm;
                worst = worst.max(-m[(k, k)]);
            }
        }
    }
    Ok(((da * worst / 2.0).ceil() as usize).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgeGrid, BoundaryCondition, Coefficients, Field, SpaceGrid};

    fn model(diff: Option<Field>, mu: Field, n_age: usize, n_space: usize) -> Model {
        let age = AgeGrid::new(1.0, n_age).unwrap();
        let space = SpaceGrid::new(1.0, n_space, BoundaryCondition::dirichlet()).unwrap();
        Model::new(age, space, Coefficients::new(diff, mu, Field::constant(0.0))).unwrap()
    }

    #[test]
    fn zero_generator_gives_identity_steps() {
        let c = EvolutionCache::build(&model(None, Field::constant(0.0), 8, 3), 4).unwrap();
        for s in c.steps() {
            for r in 0..3 {
                for k in 0..3 {
                    assert_eq!(s[(r, k)], if r == k { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn uniform_decay_matches_exponential() {
        let cval = 1.5;
        let n = 20;
        let ca = EvolutionCache::build(&model(None, Field::constant(cval), n, 2), 4).unwrap();
        let da = 1.0 / n as f64;
        for i in 1..n {
            let e = (-cval * da).exp();
            let got = ca.step(i)[(0, 0)];
            assert!((got - e).abs() < 2.0 * (cval * da).powi(3), "{got} {e}");
            assert_eq!(ca.step(i)[(0, 1)], 0.0);
        }
    }

    #[test]
    fn autonomous_products_depend_on_lag_only() {
        let m = model(Some(Field::constant(0.3)), Field::constant(0.2), 10, 5);
        let c = EvolutionCache::build(&m, 4).unwrap();
        for lag in 1..4 {
            let p1 = c.pi(2 + lag, 2).unwrap().clone();
            let p2 = c.pi(6 + lag, 6).unwrap();
            for r in 0..5 {
                for k in 0..5 {
                    assert!((p1[(r, k)] - p2[(r, k)]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn causality_and_identity() {
        let m = model(Some(Field::constant(0.3)), Field::constant(0.0), 6, 3);
        let c = EvolutionCache::build(&m, 4).unwrap();
        let v = vec![1.0, 2.0, 3.0];
        assert_eq!(c.apply_pi(3, 3, &v).unwrap(), v);
        assert_eq!(c.apply_pi_shifted(7.0, 3, 3, &v).unwrap(), v);
        assert!(matches!(c.apply_pi(2, 4, &v), Err(Error::Causality { .. })));
        let a = c.apply_pi(5, 1, &v).unwrap();
        let b = c.apply_pi(5, 3, &c.apply_pi(3, 1, &v).unwrap()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-13 * x.abs().max(1.0));
        }
    }

    #[test]
    fn shift_identity_and_zero_shift() {
        let m = model(Some(Field::custom(|a, x| 0.2 + 0.1 * a * x)), Field::custom(|a, x| a + x), 8, 4);
        let c = EvolutionCache::build(&m, 4).unwrap();
        let v = vec![0.3, 1.0, -0.2, 0.5];
        for (i, j) in [(8, 0), (5, 2), (3, 3)] {
            let a = c.apply_pi(i, j, &v).unwrap();
            let b = c.apply_pi_shifted(0.0, i, j, &v).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        let lam = 0.8;
        let mut shifted = m.clone();
        shifted.coeff.mortality = m.coeff.mortality.shifted(lam);
        let cs = EvolutionCache::build(&shifted, 4).unwrap();
        for (i, j) in [(8, 0), (6, 3), (2, 1)] {
            let a = c.apply_pi_shifted(lam, i, j, &v).unwrap();
            let b = cs.apply_pi(i, j, &v).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fit_of_uniform_decay_and_zero_generator() {
        let c = EvolutionCache::build(&model(None, Field::constant(2.0), 32, 2), 4).unwrap();
        let fit = c.fit_estimate(&EstimateSample::Stride(2)).unwrap();
        assert!((fit.varpi + 2.0).abs() < 0.04, "{}", fit.varpi);
        assert!(fit.m0 < 1.05);
        for &(a, s, n) in &fit.samples {
            assert!(n <= fit.envelope(a - s));
        }
        let z = EvolutionCache::build(&model(None, Field::constant(0.0), 8, 2), 2).unwrap();
        let fz = z.fit_estimate(&EstimateSample::default()).unwrap();
        assert_eq!(fz.m0, 1.0);
        assert_eq!(fz.varpi, 0.0);
    }

    #[test]
    fn positivity_substeps_give_nonnegative_steps() {
        let m = model(Some(Field::constant(0.05)), Field::constant(0.0), 16, 24);
        let q = positivity_substeps(&m).unwrap();
        let c = EvolutionCache::build(&m, q).unwrap();
        assert!(c.min_step_entry() >= 0.0);
    }
}
