//! Time stepping of the Cauchy problem along grid-aligned characteristics.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::EvolutionCache;
use crate::linalg;
use crate::model::{AgeProfile, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub profiles: Vec<AgeProfile>,
    /// `B(t) = u(t, 0)`.
    pub birth_history: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_profile(&self) -> &AgeProfile {
        self.profiles.last().expect("trajectory has at least the initial profile")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    #[default]
    None,
    AgeKernel,
}

/// Age kernel `k(a, a')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum Kernel {
    Constant { value: f64 },
    /// `left(a) * right(a')`.
    Separable { left: Shape, right: Shape },
    /// `exp(-(a - a')^2 / (2 width^2))`.
    Gaussian { width: f64 },
}

impl Kernel {
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        match self {
            Kernel::Constant { value } => *value,
            Kernel::Separable { left, right } => left.eval(a) * right.eval(b),
            Kernel::Gaussian { width } => {
                let z = (a - b) / width;
                (-0.5 * z * z).exp()
            }
        }
    }
}

/// Bounded age-kernel operator `(B phi)(a) = gamma m(a) int k(a, a') phi(a') da'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    #[serde(default = "unit")]
    pub gamma: f64,
    pub m: Shape,
    pub k: Kernel,
    #[serde(default)]
    pub positive: bool,
}

fn unit() -> f64 {
    1.0
}

impl PerturbationSpec {
    pub fn none() -> PerturbationSpec {
        PerturbationSpec {
            kind: PerturbationKind::None,
            gamma: 0.0,
            m: Shape::Constant { value: 0.0 },
            k: Kernel::Constant { value: 0.0 },
            positive: true,
        }
    }

    /// `gamma` times the age average: `m = gamma`, `k = 1 / a_max`.
    pub fn age_average(gamma: f64, a_max: f64) -> PerturbationSpec {
        PerturbationSpec {
            kind: PerturbationKind::AgeKernel,
            gamma,
            m: Shape::Constant { value: 1.0 },
            k: Kernel::Constant { value: 1.0 / a_max },
            positive: true,
        }
    }

    pub fn scaled(&self, gamma: f64) -> PerturbationSpec {
        PerturbationSpec {
            gamma,
            ..self.clone()
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == PerturbationKind::None
    }

    /// Discretises the operator on the cache's age grid.
    pub fn compile(&self, cache: &EvolutionCache) -> Result<Perturbation> {
        let grid = &cache.model().age;
        let n = grid.len();
        let mut coef = Mat::<f64>::zeros(n, n);
        let mut m_sup = 0.0f64;
        let mut k_sup = 0.0f64;
        if !self.is_none() {
            if !self.gamma.is_finite() {
                return Err(Error::InvalidParameter("perturbation gamma must be finite".into()));
            }
            for i in 0..n {
                let mi = self.gamma * self.m.eval(grid.nodes[i]);
                if !mi.is_finite() || (self.positive && mi < 0.0) {
                    return Err(Error::InvalidCoefficient {
                        field: "perturbation.m",
                        value: mi,
                        age: grid.nodes[i],
                        x_index: 0,
                    });
                }
                m_sup = m_sup.max(mi.abs());
                for j in 0..n {
                    let kij = self.k.eval(grid.nodes[i], grid.nodes[j]);
                    if !kij.is_finite() || (self.positive && kij < 0.0) {
                        return Err(Error::InvalidCoefficient {
                            field: "perturbation.k",
                            value: kij,
                            age: grid.nodes[i],
                            x_index: j,
                        });
                    }
                    k_sup = k_sup.max(kij.abs());
                    coef[(i, j)] = mi * grid.weights[j] * kij;
                }
            }
        }
        Ok(Perturbation {
            coef,
            norm_bound: m_sup * k_sup * grid.a_max,
            zero: self.is_none(),
        })
    }
}

/// A perturbation compiled onto a grid: `(B phi)_i = sum_j coef[i, j] phi_j`.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub coef: Mat<f64>,
    pub norm_bound: f64,
    zero: bool,
}

impl Perturbation {
    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn apply(&self, phi: &AgeProfile) -> AgeProfile {
        let n = phi.n_nodes();
        let ns = phi.n_space();
        let mut out = AgeProfile::zeros(n, ns);
        if self.zero {
            return out;
        }
        for i in 0..n {
            let row = &mut out.values[i];
            for j in 0..n {
                let c = self.coef[(i, j)];
                if c != 0.0 {
                    for (o, v) in row.iter_mut().zip(&phi.values[j]) {
                        *o += c * v;
                    }
                }
            }
        }
        out
    }
}

/// One step of length `da` of the unperturbed discrete semigroup.
#[derive(Debug)]
pub struct Stepper<'a> {
    cache: &'a EvolutionCache,
    /// `1 / (1 - w_0 beta(0, x_k))`.
    birth_solve: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(cache: &'a EvolutionCache) -> Result<Stepper<'a>> {
        let w0 = cache.model().age.weights[0];
        let birth_solve = cache.birth()[0]
            .iter()
            .map(|b| {
                let d = 1.0 - w0 * b;
                if d > 0.0 {
                    Ok(1.0 / d)
                } else {
                    Err(Error::Domain(format!(
                        "renewal quadrature at age 0 is singular (1 - w0*beta = {d}); refine the age grid"
                    )))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Stepper { cache, birth_solve })
    }

    /// Trapezoid birth quadrature `sum_i w_i beta_i u_i`.
    pub fn birth_rate(&self, u: &AgeProfile) -> Vec<f64> {
        let w = &self.cache.model().age.weights;
        let mut b = vec![0.0; u.n_space()];
        for (i, v) in u.values.iter().enumerate() {
            for ((bk, beta), x) in b.iter_mut().zip(&self.cache.birth()[i]).zip(v) {
                *bk += w[i] * beta * x;
            }
        }
        b
    }

    pub fn step(&self, u: &AgeProfile) -> AgeProfile {
        let n = self.cache.n_age();
        let ns = self.cache.n_space();
        let mut out = AgeProfile::zeros(n + 1, ns);
        for i in 1..=n {
            linalg::mat_vec_into(self.cache.step(i - 1), &u.values[i - 1], &mut out.values[i]);
        }
        let w = &self.cache.model().age.weights;
        let mut b = vec![0.0; ns];
        for i in 1..=n {
            for ((bk, beta), x) in b.iter_mut().zip(&self.cache.birth()[i]).zip(&out.values[i]) {
                *bk += w[i] * beta * x;
            }
        }
        for (o, (bk, s)) in out.values[0].iter_mut().zip(b.iter().zip(&self.birth_solve)) {
            *o = bk * s;
        }
        out
    }
}

fn step_count(t_final: f64, da: f64) -> Result<usize> {
    if !t_final.is_finite() || t_final < 0.0 {
        return Err(Error::Domain(format!("t_final must be nonnegative, got {t_final}")));
    }
    let n = (t_final / da).round();
    if (n * da - t_final).abs() > 1e-9 * t_final.max(1.0) {
        return Err(Error::Alignment { t_final, da });
    }
    Ok(n as usize)
}

fn start(u0: &AgeProfile, stepper: &Stepper) -> Trajectory {
    Trajectory {
        times: vec![0.0],
        profiles: vec![u0.clone()],
        birth_history: vec![stepper.birth_rate(u0)],
    }
}

/// Orbit of `u0` under the discrete semigroup up to `t_final`.
pub fn evolve(u0: &AgeProfile, t_final: f64, cache: &EvolutionCache) -> Result<Trajectory> {
    cache.model().check_profile(u0)?;
    let da = cache.da();
    let steps = step_count(t_final, da)?;
    let stepper = Stepper::new(cache)?;
    let mut traj = start(u0, &stepper);
    let mut u = u0.clone();
    for s in 1..=steps {
        u = stepper.step(&u);
        traj.times.push(s as f64 * da);
        traj.birth_history.push(u.values[0].clone());
        traj.profiles.push(u.clone());
    }
    Ok(traj)
}

/// Orbit of `u0` under `A + B`.
///
/// Each step applies the unperturbed step `T` and a trapezoid Duhamel
/// correction, `u+ = T u + da/2 (T B u + B T u)`. The splitting is first
/// order in `da`; with `T`, `B` positive every term is nonnegative and the
/// orbit dominates the unperturbed one.
pub fn evolve_perturbed(
    u0: &AgeProfile,
    t_final: f64,
    cache: &EvolutionCache,
    pert: &PerturbationSpec,
) -> Result<Trajectory> {
    let b = pert.compile(cache)?;
    if b.is_zero() {
        return evolve(u0, t_final, cache);
    }
    cache.model().check_profile(u0)?;
    let da = cache.da();
    let steps = step_count(t_final, da)?;
    let stepper = Stepper::new(cache)?;
    let mut traj = start(u0, &stepper);
    let mut u = u0.clone();
    for s in 1..=steps {
        let tu = stepper.step(&u);
        let tbu = stepper.step(&b.apply(&u));
        let btu = b.apply(&tu);
        let mut next = tu;
        next.axpy(0.5 * da, &tbu);
        next.axpy(0.5 * da, &btu);
        u = next;
        traj.times.push(s as f64 * da);
        traj.birth_history.push(u.values[0].clone());
        traj.profiles.push(u.clone());
    }
    Ok(traj)
}

/// Defect of the discrete mild-solution relation for `zeta = A psi`.
///
/// The discrete mild solution `y` starting from `psi(0)` with source `-zeta`
/// is rebuilt by the same recursion the resolvent uses; the result is
/// `max_i ||psi_i - y_i|| + ||psi_0 - sum_i w_i beta_i psi_i||`.
pub fn generator_residual(psi: &AgeProfile, zeta: &AgeProfile, cache: &EvolutionCache) -> Result<f64> {
    let model = cache.model();
    model.check_profile(psi)?;
    model.check_profile(zeta)?;
    let n = cache.n_age();
    let ns = cache.n_space();
    let da = cache.da();
    let m = cache.scalar_mortality();
    let mut worst = 0.0f64;
    let mut y = psi.values[0].clone();
    let mut tmp = vec![0.0; ns];
    for i in 1..=n {
        if i == 1 {
            linalg::mat_vec_into(cache.prop(1), &y, &mut tmp);
            let den = 1.0 + m[1] * da;
            for k in 0..ns {
                y[k] = (tmp[k] - da * zeta.values[1][k]) / den;
            }
        } else {
            let beta_t = 1.0 - 0.5 * m[i - 1] * da;
            let arg: Vec<f64> = (0..ns)
                .map(|k| beta_t * y[k] - 0.5 * da * zeta.values[i - 1][k])
                .collect();
            linalg::mat_vec_into(cache.prop(i), &arg, &mut tmp);
            let den = 1.0 + 0.5 * m[i] * da;
            for k in 0..ns {
                y[k] = (tmp[k] - 0.5 * da * zeta.values[i][k]) / den;
            }
        }
        let d: Vec<f64> = psi.values[i].iter().zip(&y).map(|(a, b)| a - b).collect();
        worst = worst.max(model.space_norm(&d));
    }
    let w = &model.age.weights;
    let mut birth = psi.values[0].clone();
    for i in 0..=n {
        for k in 0..ns {
            birth[k] -= w[i] * cache.birth()[i][k] * psi.values[i][k];
        }
    }
    Ok(worst + model.space_norm(&birth))
}

/// Largest 𝔼_0 defect over time of the discrete trapezoid Duhamel identity
/// `u^n = T^n u^0 + da (sum_{k=0}^{n} T^{n-k} B u^k - T^n B u^0 / 2 - B u^n / 2)`.
pub fn duhamel_residual(traj: &Trajectory, cache: &EvolutionCache, pert: &PerturbationSpec) -> Result<f64> {
    let model = cache.model();
    let b = pert.compile(cache)?;
    let stepper = Stepper::new(cache)?;
    let da = cache.da();
    let u0 = &traj.profiles[0];
    let mut free = u0.clone();
    let mut x = b.apply(u0);
    let mut s = x.clone();
    let mut worst = 0.0f64;
    for u in traj.profiles.iter().skip(1) {
        free = stepper.step(&free);
        x = stepper.step(&x);
        let bu = b.apply(u);
        s = stepper.step(&s);
        s.axpy(1.0, &bu);
        let mut d = u.sub(&free);
        d.axpy(-da, &s);
        d.axpy(0.5 * da, &x);
        d.axpy(0.5 * da, &bu);
        worst = worst.max(model.profile_norm(&d)?);
    }
    Ok(worst)
}

/// Trapezoid-in-time Laplace transform `int_0^T e^{-lambda t} u(t) dt` of the
/// orbit; the horizon is rounded up to the age grid.
pub fn laplace_transform(
    u0: &AgeProfile,
    lambda: f64,
    horizon: f64,
    cache: &EvolutionCache,
) -> Result<AgeProfile> {
    cache.model().check_profile(u0)?;
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::Domain(format!("horizon must be nonnegative, got {horizon}")));
    }
    let da = cache.da();
    let steps = (horizon / da - 1e-9).ceil().max(0.0) as usize;
    let stepper = Stepper::new(cache)?;
    let mut acc = u0.clone();
    acc.scale(if steps == 0 { 0.0 } else { 0.5 * da });
    let mut u = u0.clone();
    for s in 1..=steps {
        u = stepper.step(&u);
        let c = if s == steps { 0.5 } else { 1.0 };
        acc.axpy(c * da * (-lambda * s as f64 * da).exp(), &u);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgeGrid, BoundaryCondition, Coefficients, Field, Model, SpaceGrid};

    fn transport_model(n_age: usize, birth: f64) -> Model {
        let age = AgeGrid::new(1.0, n_age).unwrap();
        let space = SpaceGrid::new(2.0, 1, BoundaryCondition::dirichlet()).unwrap();
        Model::new(age, space, Coefficients::new(None, Field::constant(0.0), Field::constant(birth))).unwrap()
    }

    #[test]
    fn pure_transport_is_exact() {
        let c = EvolutionCache::build(&transport_model(10, 0.0), 4).unwrap();
        let u0 = AgeProfile::from_fn(11, 1, |i, _| (i as f64 * 0.37).sin() + 2.0);
        let tr = evolve(&u0, 0.3, &c).unwrap();
        let u = tr.final_profile();
        for i in 0..11 {
            let expect = if i >= 3 { u0.values[i - 3][0] } else { 0.0 };
            assert_eq!(u.values[i][0], expect);
        }
        let gone = evolve(&u0, 1.0 + 0.1, &c).unwrap();
        assert_eq!(gone.final_profile().max_abs(), 0.0);
        assert_eq!(evolve(&u0, 1.0, &c).unwrap().final_profile().values[10][0], u0.values[0][0]);
    }

    #[test]
    fn alignment_and_domain_errors() {
        let c = EvolutionCache::build(&transport_model(10, 0.0), 4).unwrap();
        let u0 = AgeProfile::zeros(11, 1);
        assert!(matches!(evolve(&u0, 0.25, &c), Err(Error::Alignment { .. })));
        assert!(matches!(evolve(&u0, -0.1, &c), Err(Error::Domain(_))));
    }

    #[test]
    fn semigroup_property() {
        let c = EvolutionCache::build(&transport_model(16, 1.3), 4).unwrap();
        let u0 = AgeProfile::from_fn(17, 1, |i, _| 1.0 + i as f64);
        let full = evolve(&u0, 1.5, &c).unwrap();
        let half = evolve(&u0, 0.75, &c).unwrap();
        let rest = evolve(half.final_profile(), 0.75, &c).unwrap();
        let d = full.final_profile().sub(rest.final_profile()).max_abs();
        assert!(d <= 1e-12 * full.final_profile().max_abs());
    }

    #[test]
    fn zero_perturbation_matches_evolve() {
        let c = EvolutionCache::build(&transport_model(8, 2.0), 4).unwrap();
        let u0 = AgeProfile::from_fn(9, 1, |i, _| 1.0 / (1.0 + i as f64));
        let a = evolve(&u0, 1.0, &c).unwrap();
        let b = evolve_perturbed(&u0, 1.0, &c, &PerturbationSpec::none()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perturbed_orbit_dominates() {
        let c = EvolutionCache::build(&transport_model(8, 2.0), 4).unwrap();
        let u0 = AgeProfile::from_fn(9, 1, |i, _| 1.0 / (1.0 + i as f64));
        let p = PerturbationSpec::age_average(1.0, 1.0);
        let a = evolve(&u0, 1.0, &c).unwrap();
        let b = evolve_perturbed(&u0, 1.0, &c, &p).unwrap();
        for (x, y) in a.profiles.iter().zip(&b.profiles) {
            assert!(y.sub(x).min_entry() >= 0.0);
        }
    }

    #[test]
    fn residual_of_zero_and_birth_defect() {
        let m = transport_model(8, 1.0);
        let c = EvolutionCache::build(&m, 4).unwrap();
        let z = m.zero_profile();
        assert_eq!(generator_residual(&z, &z, &c).unwrap(), 0.0);
        let mut p = z.clone();
        p.values[0][0] = 0.25;
        let r = generator_residual(&p, &z, &c).unwrap();
        assert!(r >= m.space_norm(&[0.25]) * (1.0 - 1e-12));
    }

    #[test]
    fn duhamel_residual_is_first_order() {
        let mut res = vec![];
        for n in [16usize, 32, 64] {
            let c = EvolutionCache::build(&transport_model(n, 1.5), 4).unwrap();
            let u0 = AgeProfile::from_fn(n + 1, 1, |i, _| {
                let a = i as f64 / n as f64;
                (1.0 - a) * (1.0 - a)
            });
            let p = PerturbationSpec::age_average(1.0, 1.0);
            let tr = evolve_perturbed(&u0, 1.0, &c, &p).unwrap();
            res.push(duhamel_residual(&tr, &c, &p).unwrap());
        }
        for w in res.windows(2) {
            assert!((w[0] / w[1]).log2() >= 0.9, "{res:?}");
        }
    }
}
