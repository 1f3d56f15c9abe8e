//! Spectral bound, principal eigenvector, dense generator and the
//! compactness and comparison diagnostics.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::EvolutionCache;
use crate::linalg::{self, c64};
use crate::model::{cone_check, AgeProfile, Model, DEFAULT_TOL_POS};
use crate::resolvent::{apply_perturbed_resolvent, birth_matrix, Resolvent, ResolventOptions};
use crate::semigroup::{evolve, evolve_perturbed, generator_residual, PerturbationSpec};

pub const DENSE_LIMIT: usize = 20_000;

/// Dense matrix of the discrete generator in reduced coordinates.
///
/// The unknowns are `psi_1, ..., psi_n` (age major); the newborn value is
/// eliminated through the birth law, `psi_0 = E psi_red` with
/// `E = (I - w_0 beta_0)^{-1} [w_1 beta_1, ..., w_n beta_n]`. Rows encode the
/// same age recursion the resolvent and the mild-solution residual use, so
/// `(lambda - matrix)` inverts exactly what the resolvent computes.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub dim: usize,
    pub n_age: usize,
    pub n_space: usize,
    pub matrix: Mat<f64>,
    /// Diagonals of the blocks of `E`, one per node `1..=n`.
    elim: Vec<Vec<f64>>,
}

impl GeneratorMatrix {
    pub fn assemble(cache: &EvolutionCache, pert: &PerturbationSpec, limit: usize) -> Result<GeneratorMatrix> {
        let n = cache.n_age();
        let ns = cache.n_space();
        let dim = n * ns;
        if dim > limit {
            return Err(Error::SizeLimit { dim, limit });
        }
        let model = cache.model();
        let w = &model.age.weights;
        let da = cache.da();
        let m = cache.scalar_mortality();
        let beta = cache.birth();
        let mut elim = Vec::with_capacity(n);
        for j in 1..=n {
            elim.push(
                (0..ns)
                    .map(|k| {
                        let d = 1.0 - w[0] * beta[0][k];
                        if d > 0.0 {
                            Ok(w[j] * beta[j][k] / d)
                        } else {
                            Err(Error::Domain("renewal quadrature at age 0 is singular".into()))
                        }
                    })
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        // Selection rows S_i (ns x dim): identity block at node i, E for node 0.
        let select = |i: usize, scale: f64, out: &mut Mat<f64>| {
            if i == 0 {
                for (j, e) in elim.iter().enumerate() {
                    for k in 0..ns {
                        out[(k, j * ns + k)] += scale * e[k];
                    }
                }
            } else {
                for k in 0..ns {
                    out[(k, (i - 1) * ns + k)] += scale;
                }
            }
        };
        let mut matrix = Mat::<f64>::zeros(dim, dim);
        let mut z = Mat::<f64>::zeros(ns, dim);
        for i in 1..=n {
            let mut wmat = Mat::<f64>::zeros(ns, dim);
            let mut next = if i == 1 {
                select(0, 1.0 / da, &mut wmat);
                let mut nz = cache.prop(1) * &wmat;
                select(1, -(1.0 / da + m[1]), &mut nz);
                nz
            } else {
                select(i - 1, 2.0 / da - m[i - 1], &mut wmat);
                for c in 0..dim {
                    for r in 0..ns {
                        wmat[(r, c)] -= z[(r, c)];
                    }
                }
                let mut nz = cache.prop(i) * &wmat;
                select(i, -(2.0 / da + m[i]), &mut nz);
                nz
            };
            std::mem::swap(&mut z, &mut next);
            for c in 0..dim {
                for r in 0..ns {
                    matrix[((i - 1) * ns + r, c)] = z[(r, c)];
                }
            }
        }
        let b = pert.compile(cache)?;
        if !b.is_zero() {
            for i in 1..=n {
                for j in 1..=n {
                    let cij = b.coef[(i, j)];
                    let ci0 = b.coef[(i, 0)];
                    for k in 0..ns {
                        matrix[((i - 1) * ns + k, (j - 1) * ns + k)] += cij + ci0 * elim[j - 1][k];
                    }
                }
            }
        }
        Ok(GeneratorMatrix {
            dim,
            n_age: n,
            n_space: ns,
            matrix,
            elim,
        })
    }

    /// Nodes `1..=n` of a profile, flattened.
    pub fn reduce(&self, psi: &AgeProfile) -> Vec<f64> {
        psi.values[1..].iter().flatten().copied().collect()
    }

    /// Full profile from reduced coordinates, with `psi_0` from the birth law.
    pub fn lift(&self, x: &[f64]) -> AgeProfile {
        let ns = self.n_space;
        let mut p = AgeProfile::zeros(self.n_age + 1, ns);
        for i in 1..=self.n_age {
            p.values[i].copy_from_slice(&x[(i - 1) * ns..i * ns]);
            for k in 0..ns {
                p.values[0][k] += self.elim[i - 1][k] * x[(i - 1) * ns + k];
            }
        }
        p
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        linalg::mat_vec(&self.matrix, x)
    }

    pub fn eigenvalues(&self) -> Result<Vec<c64>> {
        linalg::eigenvalues(&self.matrix)
    }
}

/// Relative defect `||(lambda - A_h) psi - phi|| / ||phi||`, measured on
/// nodes `1..=n` in the profile norm.
pub fn construction_defect(gen: &GeneratorMatrix, model: &Model, psi: &AgeProfile, phi: &AgeProfile, lambda: f64) -> Result<f64> {
    let x = gen.reduce(psi);
    let ax = gen.apply(&x);
    let f = gen.reduce(phi);
    let d: Vec<f64> = (0..x.len()).map(|r| lambda * x[r] - ax[r] - f[r]).collect();
    let mut full = vec![0.0; gen.n_space];
    full.extend_from_slice(&d);
    let defect = model.profile_norm(&AgeProfile::from_flat(gen.n_space, &full))?;
    let scale = model.profile_norm(phi)?;
    Ok(if scale > 0.0 { defect / scale } else { defect })
}

/// Spectral radius of `Q_lambda`: power iteration, then dense eigenvalues
/// if the iteration stalls.
pub fn characteristic_radius(cache: &EvolutionCache, lambda: f64) -> Result<f64> {
    let q = birth_matrix(cache, lambda)?;
    radius_of(&q)
}

fn radius_of(q: &Mat<f64>) -> Result<f64> {
    let n = q.nrows();
    let out = linalg::power_iteration(n, |x, y| linalg::mat_vec_into(q, x, y), 1e-12, 10_000);
    if out.converged && out.radius.is_finite() {
        return Ok(out.radius);
    }
    let r = linalg::dense_spectral_radius(q)?;
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::Numerical("spectral radius of Q is not finite".into()))
    }
}

/// Radius used inside the root finder: dense eigenvalues for moderate sizes
/// (accurate to rounding), power iteration otherwise.
fn precise_radius(cache: &EvolutionCache, lambda: f64) -> Result<f64> {
    let q = birth_matrix(cache, lambda)?;
    if q.nrows() <= 256 {
        linalg::dense_spectral_radius(&q)
    } else {
        radius_of(&q)
    }
}

pub fn char_values(cache: &EvolutionCache, lambdas: &[f64]) -> Result<Vec<(f64, f64)>> {
    lambdas
        .iter()
        .map(|&l| characteristic_radius(cache, l).map(|r| (l, r)))
        .collect()
}

/// `[-||mu||_inf - 1, ||beta||_inf a_max + 1]` over the grid.
pub fn default_bracket(cache: &EvolutionCache) -> (f64, f64) {
    let model = cache.model();
    let mut mu_sup = 0.0f64;
    for &a in &model.age.nodes {
        for v in model.mortality_at(a) {
            mu_sup = mu_sup.max(v.abs());
        }
    }
    let beta_sup = cache.birth().iter().flatten().fold(0.0f64, |m, b| m.max(b.abs()));
    (-mu_sup - 1.0, beta_sup * model.age.a_max + 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundOutcome {
    pub s_bound: Option<f64>,
    pub bracket: (f64, f64),
    /// `r(Q_s) - 1` at the returned root.
    pub residual: Option<f64>,
    pub evaluations: usize,
}

/// Root of `r(Q_lambda) = 1` on the bracket by bisection with a final secant step.
pub fn spectral_bound(cache: &EvolutionCache, bracket: Option<(f64, f64)>) -> Result<BoundOutcome> {
    let (lo0, hi0) = bracket.unwrap_or_else(|| default_bracket(cache));
    if !(lo0 < hi0) {
        return Err(Error::InvalidParameter(format!("bracket ({lo0}, {hi0}) is empty")));
    }
    let floor = cache.lambda_floor();
    let lo0 = lo0.max(floor + 1e-9 * floor.abs().max(1.0));
    let mut evals = 0usize;
    let mut g = |l: f64| -> Result<f64> {
        evals += 1;
        Ok(precise_radius(cache, l)? - 1.0)
    };
    let (mut lo, mut hi) = (lo0, hi0);
    let (mut glo, mut ghi) = (g(lo)?, g(hi)?);
    let none = |evaluations| BoundOutcome {
        s_bound: None,
        bracket: (lo0, hi0),
        residual: None,
        evaluations,
    };
    if glo == 0.0 {
        return Ok(BoundOutcome {
            s_bound: Some(lo),
            bracket: (lo0, hi0),
            residual: Some(0.0),
            evaluations: 2,
        });
    }
    if !(glo > 0.0 && ghi < 0.0) {
        return Ok(none(2));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid)?;
        if gm == 0.0 {
            lo = mid;
            hi = mid;
            glo = 0.0;
            ghi = 0.0;
            break;
        }
        if gm > 0.0 {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
            ghi = gm;
        }
    }
    let mut best = if glo.abs() <= ghi.abs() { (lo, glo) } else { (hi, ghi) };
    if glo != ghi {
        let sec = lo - glo * (hi - lo) / (ghi - glo);
        if sec > lo && sec < hi {
            let gs = g(sec)?;
            if gs.abs() < best.1.abs() {
                best = (sec, gs);
            }
        }
    }
    Ok(BoundOutcome {
        s_bound: Some(best.0),
        bracket: (lo0, hi0),
        residual: Some(best.1),
        evaluations: evals,
    })
}

/// Positive eigenvector at `s`: `psi_0` is the Perron vector of `Q_s` and
/// `psi_i = Pi_s(a_i, 0) psi_0`, scaled to unit norm.
pub fn principal_eigenvector(s: f64, cache: &EvolutionCache) -> Result<AgeProfile> {
    let q = birth_matrix(cache, s)?;
    let ns = q.nrows();
    let out = linalg::power_iteration(ns, |x, y| linalg::mat_vec_into(&q, x, y), 1e-13, 10_000);
    let ok = out.converged && out.vector.iter().all(|&v| v >= 0.0) && out.vector.iter().any(|&v| v > 0.0);
    if !ok {
        let ev = linalg::eigenvalues_by_modulus(&q)?;
        let show = |z: Option<&c64>| z.map_or("none".to_string(), |z| format!("{}{:+}i", z.re, z.im));
        return Err(Error::DegeneratePeripheral {
            first: show(ev.first()),
            second: show(ev.get(1)),
        });
    }
    let n = cache.n_age();
    let mut psi = AgeProfile::zeros(n + 1, ns);
    psi.values[0] = out.vector.clone();
    let mut c = 1.0;
    for i in 1..=n {
        c *= cache.scalar_factor(s, i);
        let v = linalg::mat_vec(cache.prop_from_zero(i), &out.vector);
        psi.values[i] = v.into_iter().map(|x| c * x).collect();
    }
    let norm = cache.model().profile_norm(&psi)?;
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Numerical("principal eigenvector has zero norm".into()));
    }
    psi.scale(1.0 / norm);
    Ok(psi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbedBound {
    pub s_unperturbed: Option<f64>,
    pub s_perturbed: Option<f64>,
    pub evaluations: usize,
}

fn perturbation_radius(cache: &EvolutionCache, pert_b: &crate::semigroup::Perturbation, lambda: f64) -> Result<f64> {
    let opts = ResolventOptions {
        cond_max: 1e13,
        ..ResolventOptions::default()
    };
    let r = Resolvent::new(cache, lambda, opts)?;
    let ns = cache.n_space();
    let n = cache.n_age();
    let mut failure = None;
    let out = linalg::power_iteration(
        (n + 1) * ns,
        |x, y| {
            let phi = AgeProfile::from_flat(ns, x);
            match r.solve(&phi) {
                Ok((psi, _)) => {
                    let b = pert_b.apply(&psi);
                    y.copy_from_slice(&b.flatten());
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    y.fill(0.0);
                }
            }
        },
        1e-12,
        10_000,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    if out.radius.is_finite() {
        Ok(out.radius)
    } else {
        Err(Error::Numerical("power iteration on B R(lambda) diverged".into()))
    }
}

/// `s(A + B)` for a positive perturbation: the largest lambda above `s(A)`
/// with `r(B (lambda - A)^{-1}) = 1`, or `s(A)` when no such lambda exists.
pub fn perturbed_spectral_bound(
    cache: &EvolutionCache,
    pert: &PerturbationSpec,
    bracket: Option<(f64, f64)>,
) -> Result<PerturbedBound> {
    let base = spectral_bound(cache, bracket)?;
    let b = pert.compile(cache)?;
    if b.is_zero() {
        return Ok(PerturbedBound {
            s_unperturbed: base.s_bound,
            s_perturbed: base.s_bound,
            evaluations: 0,
        });
    }
    let (blo, bhi) = base.bracket;
    let start = base.s_bound.unwrap_or(blo);
    let eps = 1e-8 * start.abs().max(1.0);
    let mut lo = start + eps;
    let mut evals = 1usize;
    let glo = perturbation_radius(cache, &b, lo)? - 1.0;
    if glo <= 0.0 {
        return Ok(PerturbedBound {
            s_unperturbed: base.s_bound,
            s_perturbed: base.s_bound,
            evaluations: evals,
        });
    }
    let mut hi = bhi.max(lo) + b.norm_bound + 1.0;
    let mut ghi = perturbation_radius(cache, &b, hi)? - 1.0;
    evals += 1;
    let mut expand = 0;
    while ghi > 0.0 {
        expand += 1;
        if expand > 60 {
            return Ok(PerturbedBound {
                s_unperturbed: base.s_bound,
                s_perturbed: None,
                evaluations: evals,
            });
        }
        lo = hi;
        hi = lo + 2.0 * (hi - start);
        ghi = perturbation_radius(cache, &b, hi)? - 1.0;
        evals += 1;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-13 * mid.abs().max(1.0) {
            break;
        }
        let gm = perturbation_radius(cache, &b, mid)? - 1.0;
        evals += 1;
        if gm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(PerturbedBound {
        s_unperturbed: base.s_bound,
        s_perturbed: Some(0.5 * (lo + hi)),
        evaluations: evals,
    })
}

/// Rightmost real part of the dense generator spectrum.
pub fn rightmost_eigenvalue(gen: &GeneratorMatrix) -> Result<f64> {
    Ok(gen.eigenvalues()?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompactnessLevel {
    pub n_age: usize,
    pub n_space: usize,
    pub s_bound: Option<f64>,
    pub reference_lambda: f64,
    pub threshold: f64,
    pub count: usize,
    pub decay_exponent: f64,
    pub singular_values: Vec<f64>,
}

/// Discrete proxies for a compact resolvent: refinement-stable counts of
/// eigenvalues in a right half plane and power-law decay of the resolvent
/// singular values. A finite matrix always has both properties in some
/// form; what is tested is their behaviour under refinement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompactnessDiagnostics {
    /// Singular values of the resolvent at the finest level, nonincreasing.
    pub singular_values: Vec<f64>,
    pub halfplane_counts: Vec<((usize, usize), usize)>,
    /// Decay exponent at the finest level.
    pub decay_exponent: f64,
    pub levels: Vec<CompactnessLevel>,
}

/// Log-log least-squares slope over the first half of a nonincreasing sequence.
pub fn decay_exponent(sv: &[f64]) -> f64 {
    let half = (sv.len() / 2).max(2).min(sv.len());
    let mut xs = vec![];
    let mut ys = vec![];
    for (k, &s) in sv.iter().take(half).enumerate() {
        if s > 0.0 {
            xs.push(((k + 1) as f64).ln());
            ys.push(s.ln());
        }
    }
    linalg::ls_slope(&xs, &ys)
}

pub fn compactness_probe(
    model: &Model,
    substeps: usize,
    refinements: &[(usize, usize)],
    threshold_offset: f64,
    limit: usize,
) -> Result<CompactnessDiagnostics> {
    let mut levels = Vec::new();
    for &(n_age, n_space) in refinements {
        let dim = n_age * n_space;
        if dim > limit {
            return Err(Error::SizeLimit { dim, limit });
        }
        let refined = model.refined(n_age, n_space)?;
        let cache = EvolutionCache::build(&refined, substeps)?;
        let bound = spectral_bound(&cache, None)?;
        let reference_lambda = match bound.s_bound {
            Some(s) => s + 1.0,
            None => 0.5 * (bound.bracket.0 + bound.bracket.1),
        };
        let center = bound.s_bound.unwrap_or(reference_lambda - 1.0);
        let threshold = center - threshold_offset;
        let gen = GeneratorMatrix::assemble(&cache, &PerturbationSpec::none(), limit)?;
        let count = gen.eigenvalues()?.iter().filter(|z| z.re > threshold).count();
        let shifted = Mat::<f64>::from_fn(dim, dim, |r, c| {
            (if r == c { reference_lambda } else { 0.0 }) - gen.matrix[(r, c)]
        });
        let sv_shift = linalg::singular_values(&shifted)?;
        let mut sv: Vec<f64> = sv_shift.iter().map(|s| if *s > 0.0 { 1.0 / s } else { f64::INFINITY }).collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        levels.push(CompactnessLevel {
            n_age,
            n_space,
            s_bound: bound.s_bound,
            reference_lambda,
            threshold,
            count,
            decay_exponent: decay_exponent(&sv),
            singular_values: sv,
        });
    }
    let last = levels
        .last()
        .ok_or_else(|| Error::InvalidParameter("at least one refinement is required".into()))?;
    Ok(CompactnessDiagnostics {
        singular_values: last.singular_values.clone(),
        halfplane_counts: levels.iter().map(|l| ((l.n_age, l.n_space), l.count)).collect(),
        decay_exponent: last.decay_exponent,
        levels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub s_unperturbed: Option<f64>,
    pub s_perturbed: Option<f64>,
    pub outcomes: Vec<Outcome>,
    pub notices: Vec<String>,
}

pub const COMPARISON_TOL: f64 = -1e-10;

/// Entrywise comparisons between `A` and `A + B` for a positive `B`.
pub fn comparison_suite(
    cache: &EvolutionCache,
    pert: &PerturbationSpec,
    lambdas: &[f64],
    times: &[f64],
    seed: u64,
) -> Result<ComparisonReport> {
    if !cache.model().coeff.positivity {
        return Err(Error::InvalidParameter("comparison suite requires positivity mode".into()));
    }
    if !pert.positive && !pert.is_none() {
        return Err(Error::InvalidParameter("comparison suite requires a positive perturbation".into()));
    }
    let model = cache.model();
    let bounds = perturbed_spectral_bound(cache, pert, None)?;
    let mut outcomes = Vec::new();
    let mut notices = Vec::new();
    let pass = |m: f64| m >= COMPARISON_TOL;

    match (bounds.s_unperturbed, bounds.s_perturbed) {
        (Some(a), Some(b)) => outcomes.push(Outcome {
            name: "spectral_bound_order".into(),
            passed: pass(b - a),
            margin: b - a,
            detail: format!("s(A) = {a}, s(A+B) = {b}"),
        }),
        (a, b) => notices.push(format!("spectral bound comparison skipped: s(A) = {a:?}, s(A+B) = {b:?}")),
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ones = AgeProfile::from_fn(model.n_nodes(), model.n_space(), |_, _| 1.0);
    let flat: Vec<f64> = (0..model.n_nodes() * model.n_space()).map(|_| rng.gen::<f64>()).collect();
    let random = AgeProfile::from_flat(model.n_space(), &flat);
    let opts = ResolventOptions::default();
    let s_ab = bounds.s_perturbed.or(bounds.s_unperturbed);
    for &lam in lambdas {
        if let Some(s) = s_ab {
            if lam <= s {
                notices.push(format!("resolvent comparison at lambda = {lam} skipped: not above s(A+B) = {s}"));
                continue;
            }
        }
        let mut margin = f64::INFINITY;
        for phi in [&ones, &random] {
            let plain = Resolvent::new(cache, lam, opts)?.apply(phi)?;
            let pert_r = apply_perturbed_resolvent(phi, lam, cache, pert, &opts)?;
            margin = margin.min(pert_r.psi.sub(&plain.psi).min_entry());
        }
        outcomes.push(Outcome {
            name: format!("resolvent_order(lambda={lam})"),
            passed: pass(margin),
            margin,
            detail: "min entry of (lambda-A-B)^-1 phi - (lambda-A)^-1 phi over two inputs".into(),
        });
    }

    if let Some(&t_max) = times.iter().max_by(|a, b| a.total_cmp(b)) {
        let da = cache.da();
        let t_end = (t_max / da).round() * da;
        let plain = evolve(&ones, t_end, cache)?;
        let pert_t = evolve_perturbed(&ones, t_end, cache, pert)?;
        for &t in times {
            let idx = (t / da).round() as usize;
            let margin = pert_t.profiles[idx].sub(&plain.profiles[idx]).min_entry();
            outcomes.push(Outcome {
                name: format!("semigroup_order(t={t})"),
                passed: pass(margin),
                margin,
                detail: "min entry of the perturbed minus the unperturbed orbit from u0 = 1".into(),
            });
        }
    }

    if let Some(s) = bounds.s_unperturbed {
        match principal_eigenvector(s, cache) {
            Ok(psi) => {
                let mut zeta = psi.clone();
                zeta.scale(s);
                let res = generator_residual(&psi, &zeta, cache)?;
                let cone = cone_check(&psi, DEFAULT_TOL_POS);
                outcomes.push(Outcome {
                    name: "principal_vector".into(),
                    passed: cone && res <= 1e-8,
                    margin: psi.min_entry(),
                    detail: format!("cone_check = {cone}, generator residual = {res:e}"),
                });
            }
            Err(e) => outcomes.push(Outcome {
                name: "principal_vector".into(),
                passed: false,
                margin: f64::NAN,
                detail: e.to_string(),
            }),
        }
    }

    Ok(ComparisonReport {
        s_unperturbed: bounds.s_unperturbed,
        s_perturbed: bounds.s_perturbed,
        outcomes,
        notices,
    })
}

/// Everything the spectral commands report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub s_bound: Option<f64>,
    pub eigenvalues: Vec<(f64, f64)>,
    pub principal_vector: Option<Vec<Vec<f64>>>,
    pub char_values: Vec<(f64, f64)>,
    pub compactness: Option<CompactnessDiagnostics>,
    pub comparisons: Vec<Outcome>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgeGrid, BoundaryCondition, Coefficients, Field, SpaceGrid};
    use crate::resolvent::apply_resolvent;

    fn small(beta: f64, bc: BoundaryCondition) -> EvolutionCache {
        let age = AgeGrid::new(1.0, 6).unwrap();
        let space = SpaceGrid::new(1.0, 3, bc).unwrap();
        let coeff = Coefficients::new(
            Some(Field::custom(|a, x| 0.1 + 0.05 * a + 0.02 * x)),
            Field::custom(|a, x| 0.3 * a + x),
            Field::custom(move |a, x| beta * (1.0 + a) * (1.0 + x)),
        );
        EvolutionCache::build(&Model::new(age, space, coeff).unwrap(), 3).unwrap()
    }

    #[test]
    fn resolvent_inverts_generator() {
        let c = small(2.0, BoundaryCondition::dirichlet());
        let gen = GeneratorMatrix::assemble(&c, &PerturbationSpec::none(), DENSE_LIMIT).unwrap();
        let phi = AgeProfile::from_fn(7, 3, |i, k| ((i * 3 + k) as f64).sin());
        for lam in [3.0, 7.5] {
            let r = apply_resolvent(&phi, lam, &c, &ResolventOptions::default()).unwrap();
            let d = construction_defect(&gen, c.model(), &r.psi, &phi, lam).unwrap();
            assert!(d < 1e-12, "{d}");
        }
    }

    #[test]
    fn birthless_spectrum_is_diagonal() {
        let age = AgeGrid::new(1.0, 5).unwrap();
        let space = SpaceGrid::new(2.0, 1, BoundaryCondition::dirichlet()).unwrap();
        let coeff = Coefficients::new(None, Field::constant(0.0), Field::constant(0.0));
        let c = EvolutionCache::build(&Model::new(age, space, coeff).unwrap(), 2).unwrap();
        let gen = GeneratorMatrix::assemble(&c, &PerturbationSpec::none(), DENSE_LIMIT).unwrap();
        let mut ev: Vec<f64> = gen.eigenvalues().unwrap().iter().map(|z| z.re).collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[4] + 5.0).abs() < 1e-9);
        // a defective block: computed eigenvalues spread like eps^(1/4)
        for v in &ev[..4] {
            assert!((v + 10.0).abs() < 1e-2);
        }
        assert!(spectral_bound(&c, None).unwrap().s_bound.is_none());
        assert_eq!(characteristic_radius(&c, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn bound_matches_rightmost_eigenvalue_and_vector_is_certified() {
        let c = small(4.0, BoundaryCondition::neumann());
        let s = spectral_bound(&c, None).unwrap().s_bound.unwrap();
        assert!((precise_radius(&c, s).unwrap() - 1.0).abs() <= 1e-10);
        let gen = GeneratorMatrix::assemble(&c, &PerturbationSpec::none(), DENSE_LIMIT).unwrap();
        assert!((rightmost_eigenvalue(&gen).unwrap() - s).abs() < 1e-8);
        let psi = principal_eigenvector(s, &c).unwrap();
        assert!(cone_check(&psi, DEFAULT_TOL_POS));
        assert!((c.model().profile_norm(&psi).unwrap() - 1.0).abs() < 1e-12);
        let mut zeta = psi.clone();
        zeta.scale(s);
        assert!(generator_residual(&psi, &zeta, &c).unwrap() <= 1e-10);
        let x = gen.reduce(&psi);
        let ax = gen.apply(&x);
        let d = ax.iter().zip(&x).map(|(a, b)| (a - s * b).abs()).fold(0.0, f64::max);
        assert!(d <= 1e-8 * psi.max_abs().max(1.0) * (1.0 + s.abs()));
    }

    #[test]
    fn perturbed_bound_agrees_with_dense() {
        let c = small(1.0, BoundaryCondition::dirichlet());
        let p = PerturbationSpec::age_average(1.0, 1.0);
        let pb = perturbed_spectral_bound(&c, &p, None).unwrap();
        let gen = GeneratorMatrix::assemble(&c, &p, DENSE_LIMIT).unwrap();
        let dense = rightmost_eigenvalue(&gen).unwrap();
        assert!((pb.s_perturbed.unwrap() - dense).abs() < 1e-7, "{pb:?} {dense}");
        assert!(pb.s_perturbed.unwrap() > pb.s_unperturbed.unwrap());
    }

    #[test]
    fn perturbed_resolvent_matches_dense_solve() {
        let c = small(1.0, BoundaryCondition::dirichlet());
        let p = PerturbationSpec::age_average(0.7, 1.0);
        let gen = GeneratorMatrix::assemble(&c, &p, DENSE_LIMIT).unwrap();
        let phi = AgeProfile::from_fn(7, 3, |i, k| 1.0 + (i + k) as f64);
        let lam = 6.0;
        let r = apply_perturbed_resolvent(&phi, lam, &c, &p, &ResolventOptions::default()).unwrap();
        assert!(matches!(r.path, crate::resolvent::SolvePath::NeumannSeries { .. }));
        let d = construction_defect(&gen, c.model(), &r.psi, &phi, lam).unwrap();
        assert!(d < 1e-10, "{d}");
    }

    #[test]
    fn decay_exponent_of_power_law() {
        let sv: Vec<f64> = (1..=40).map(|k| (k as f64).powf(-1.5)).collect();
        assert!((decay_exponent(&sv) + 1.5).abs() < 1e-12);
    }
}
