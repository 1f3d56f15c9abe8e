//! Pass/fail checks: the acceptance criteria on fixed instances and the
//! invariant suite of every module on a given instance.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::evolution::{positivity_substeps, EstimateSample, EvolutionCache};
use crate::model::{cone_check, AgeProfile, Model, DEFAULT_TOL_POS};
use crate::presets;
use crate::resolvent::{apply_resolvent, Resolvent, ResolventOptions};
use crate::semigroup::{duhamel_residual, evolve, evolve_perturbed, generator_residual, PerturbationSpec};
use crate::spectrum::{
    compactness_probe, comparison_suite, construction_defect, default_bracket, perturbed_spectral_bound,
    principal_eigenvector, spectral_bound, GeneratorMatrix, DENSE_LIMIT,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    /// Acceptance criterion number, or 0 for instance invariants.
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: String,
    pub detail: String,
    /// False for wall-clock measurements, which reports should omit.
    #[serde(skip)]
    pub deterministic: bool,
}

fn check(criterion: u8, name: &str, passed: bool, value: f64, threshold: &str, detail: String) -> Check {
    Check {
        criterion,
        name: name.to_string(),
        passed,
        value,
        threshold: threshold.to_string(),
        detail,
        deterministic: true,
    }
}

fn failure(criterion: u8, name: &str, err: impl std::fmt::Display) -> Check {
    check(criterion, name, false, f64::NAN, "-", format!("error: {err}"))
}

/// Root of `beta0 (1 - e^{-(l + mu0) a_max}) / (l + mu0) = 1` by bisection.
pub fn lotka_root(beta0: f64, mu0: f64, a_max: f64) -> f64 {
    let f = |l: f64| {
        let s = l + mu0;
        let q = if s.abs() < 1e-12 {
            beta0 * a_max
        } else {
            beta0 * (-(-s * a_max).exp_m1()) / s
        };
        q - 1.0
    };
    let (mut lo, mut hi) = (-mu0 - 50.0, beta0 * a_max + 1.0);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Observed orders `log2(e_k / e_{k+1})` of a halving sequence.
pub fn orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn criterion_1() -> Vec<Check> {
    let exact = lotka_root(1.0, 0.0, 2.0);
    let mut errs = vec![];
    let mut err128 = f64::NAN;
    let mut time128 = f64::NAN;
    for n in [32usize, 64, 128, 256] {
        let t0 = Instant::now();
        let s = presets::scalar_constant(1.0, 0.0, 2.0, n)
            .and_then(|m| EvolutionCache::build(&m, 4))
            .and_then(|c| spectral_bound(&c, None));
        let dt = t0.elapsed().as_secs_f64();
        match s {
            Ok(b) => match b.s_bound {
                Some(s) => {
                    errs.push((s - exact).abs());
                    if n == 128 {
                        err128 = (s - exact).abs();
                        time128 = dt;
                    }
                }
                None => return vec![failure(1, "scalar_lotka", "no spectral bound found")],
            },
            Err(e) => return vec![failure(1, "scalar_lotka", e)],
        }
    }
    let ord = orders(&errs);
    vec![
        check(
            1,
            "scalar_lotka_accuracy_n128",
            err128 <= 1e-6,
            err128,
            "<= 1e-6",
            format!("oracle root {exact}, errors at n = 32, 64, 128, 256: {errs:?}"),
        ),
        check(
            1,
            "scalar_lotka_order",
            min_of(&ord) >= 1.9,
            min_of(&ord),
            ">= 1.9",
            format!("orders {ord:?}"),
        ),
        Check {
            deterministic: false,
            ..check(1, "scalar_lotka_runtime_n128", time128 < 5.0, time128, "< 5 s", String::new())
        },
    ]
}

pub fn criterion_2() -> Vec<Check> {
    let mut errs = vec![];
    for n in [16usize, 32, 64] {
        let r = presets::scalar_constant(0.0, 0.0, 1.0, n)
            .and_then(|m| EvolutionCache::build(&m, 4))
            .and_then(|c| {
                let phi = AgeProfile::from_fn(n + 1, 1, |_, _| 1.0);
                let r = apply_resolvent(&phi, 1.0, &c, &ResolventOptions::default())?;
                let nodes = &c.model().age.nodes;
                Ok((0..=n)
                    .map(|i| (r.psi.values[i][0] - (1.0 - (-nodes[i]).exp())).abs())
                    .fold(0.0, f64::max))
            });
        match r {
            Ok(e) => errs.push(e),
            Err(e) => return vec![failure(2, "resolvent_closed_form", e)],
        }
    }
    let ord = orders(&errs);
    vec![check(
        2,
        "resolvent_closed_form_order",
        min_of(&ord) >= 1.9,
        min_of(&ord),
        ">= 1.9",
        format!("max node errors at n = 16, 32, 64: {errs:?}, orders {ord:?}"),
    )]
}

pub fn criterion_3() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let mut worst = 0.0f64;
    let mut runs = 0;
    for _ in 0..10 {
        let res = (|| -> Result<f64> {
            let model = presets::random_positive(&mut rng, 32, 8)?;
            let subs = positivity_substeps(&model)?.max(4);
            let cache = EvolutionCache::build(&model, subs)?;
            let gen = GeneratorMatrix::assemble(&cache, &PerturbationSpec::none(), DENSE_LIMIT)?;
            let top = default_bracket(&cache).1;
            let mut w = 0.0f64;
            for _ in 0..2 {
                let lam = top + rng.gen_range(0.1..5.0);
                let flat: Vec<f64> = (0..model.n_nodes() * model.n_space())
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                let phi = AgeProfile::from_flat(model.n_space(), &flat);
                let r = apply_resolvent(&phi, lam, &cache, &ResolventOptions::default())?;
                w = w.max(construction_defect(&gen, &model, &r.psi, &phi, lam)?);
            }
            Ok(w)
        })();
        match res {
            Ok(w) => {
                worst = worst.max(w);
                runs += 1;
            }
            Err(e) => return vec![failure(3, "construction_consistency", e)],
        }
    }
    vec![check(
        3,
        "construction_consistency",
        worst <= 1e-10,
        worst,
        "<= 1e-10",
        format!("{runs} instances, 2 lambdas each"),
    )]
}

fn laplace_error(n_age: usize, n_space: usize) -> Result<f64> {
    let model = presets::strong_positivity(n_age, n_space)?;
    let cache = EvolutionCache::build(&model, presets::STRONG_POSITIVITY_SUBSTEPS)?;
    let s = spectral_bound(&cache, None)?
        .s_bound
        .ok_or_else(|| crate::Error::Numerical("no spectral bound".into()))?;
    let lam = s + 3.0;
    let horizon = 15.0 / (lam - s);
    let xs = model.space.positions();
    let nodes = model.age.nodes.clone();
    let u0 = AgeProfile::from_fn(model.n_nodes(), n_space, |i, k| {
        (1.0 + nodes[i]).recip() * (std::f64::consts::PI * xs[k]).sin()
    });
    let lt = crate::semigroup::laplace_transform(&u0, lam, horizon, &cache)?;
    let r = apply_resolvent(&u0, lam, &cache, &ResolventOptions::default())?;
    Ok(model.profile_norm(&lt.sub(&r.psi))? / model.profile_norm(&r.psi)?)
}

pub fn criterion_4() -> Vec<Check> {
    let levels = [(32usize, 8usize), (64, 16), (128, 32)];
    let mut errs = vec![];
    for &(na, ns) in &levels {
        match laplace_error(na, ns) {
            Ok(e) => errs.push(e),
            Err(e) => return vec![failure(4, "laplace_consistency", e)],
        }
    }
    let finest = *errs.last().unwrap();
    let improving = errs.windows(2).all(|w| w[1] < w[0]);
    vec![
        check(
            4,
            "laplace_consistency",
            finest <= 0.02,
            finest,
            "<= 0.02",
            format!("relative errors at {levels:?}: {errs:?}"),
        ),
        check(
            4,
            "laplace_refinement",
            improving,
            errs[0] / finest,
            "decreasing",
            format!("{errs:?}"),
        ),
    ]
}

pub fn criterion_5() -> Vec<Check> {
    let res = (|| -> Result<Vec<Check>> {
        let model = presets::strong_positivity(32, 16)?;
        let cache = EvolutionCache::build(&model, presets::STRONG_POSITIVITY_SUBSTEPS)?;
        let pert = presets::age_kernel(1.0);
        let pb = perturbed_spectral_bound(&cache, &pert, None)?;
        let sab = pb
            .s_perturbed
            .ok_or_else(|| crate::Error::Numerical("no perturbed bound".into()))?;
        let lambdas = [sab + 0.5, sab + 1.0, sab + 3.0];
        let da = model.age.da();
        let times = [da, 0.5 * model.age.a_max, model.age.a_max];
        let rep = comparison_suite(&cache, &pert, &lambdas, &times, 5)?;
        let mut out = vec![];
        for o in &rep.outcomes {
            let (passed, thr) = if o.name == "spectral_bound_order" {
                (o.margin >= 1e-4, ">= 1e-4")
            } else if o.name == "principal_vector" {
                (o.passed, "cone and residual <= 1e-8")
            } else {
                (o.passed, ">= -1e-10")
            };
            out.push(check(5, &o.name, passed, o.margin, thr, o.detail.clone()));
        }
        let n_res = rep.outcomes.iter().filter(|o| o.name.starts_with("resolvent_order")).count();
        out.push(check(
            5,
            "resolvent_lambdas_evaluated",
            n_res == 3,
            n_res as f64,
            "== 3",
            rep.notices.join("; "),
        ));
        Ok(out)
    })();
    res.unwrap_or_else(|e| vec![failure(5, "comparison_suite", e)])
}

pub fn criterion_6() -> Vec<Check> {
    let res = (|| -> Result<Vec<Check>> {
        let template = presets::strong_positivity(32, 8)?;
        let d = compactness_probe(
            &template,
            presets::STRONG_POSITIVITY_SUBSTEPS,
            &[(32, 8), (64, 16), (128, 32)],
            5.0,
            DENSE_LIMIT,
        )?;
        let counts: Vec<usize> = d.halfplane_counts.iter().map(|c| c.1).collect();
        let k = counts.len();
        let exps: Vec<f64> = d.levels.iter().map(|l| l.decay_exponent).collect();
        let worst = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(vec![
            check(
                6,
                "halfplane_count_stable",
                counts[k - 1] == counts[k - 2],
                counts[k - 1] as f64 - counts[k - 2] as f64,
                "== 0",
                format!("counts {counts:?}"),
            ),
            check(
                6,
                "singular_value_decay",
                worst < -0.5,
                worst,
                "< -0.5",
                format!("exponents {exps:?}"),
            ),
        ])
    })();
    res.unwrap_or_else(|e| vec![failure(6, "compactness_probe", e)])
}

fn rel_mat_diff(a: &faer::Mat<f64>, b: &faer::Mat<f64>) -> f64 {
    let mut d = 0.0f64;
    let mut s = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            d = d.max((a[(i, j)] - b[(i, j)]).abs());
            s = s.max(b[(i, j)].abs());
        }
    }
    if s > 0.0 {
        d / s
    } else {
        d
    }
}

/// `max ||Pi(i,j) Pi(j,k) - Pi(i,k)|| / ||Pi(i,k)||` over random triples.
pub fn evolution_property_defect(cache: &EvolutionCache, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cache.n_age();
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mut t = [rng.gen_range(0..=n), rng.gen_range(0..=n), rng.gen_range(0..=n)];
        t.sort_unstable();
        let (k, j, i) = (t[0], t[1], t[2]);
        let prod = cache.pi(i, j)? * cache.pi(j, k)?;
        worst = worst.max(rel_mat_diff(&prod, cache.pi(i, k)?));
    }
    Ok(worst)
}

/// `|s(mu + c) - (s(mu) - c)|`.
pub fn mortality_shift_defect(model: &Model, substeps: usize, c: f64) -> Result<f64> {
    let base = spectral_bound(&EvolutionCache::build(model, substeps)?, None)?.s_bound;
    let mut shifted = model.clone();
    shifted.coeff.mortality = model.coeff.mortality.shifted(c);
    let sh = spectral_bound(&EvolutionCache::build(&shifted, substeps)?, None)?.s_bound;
    match (base, sh) {
        (Some(a), Some(b)) => Ok((b - (a - c)).abs()),
        _ => Err(crate::Error::Numerical("spectral bound not found for the shift test".into())),
    }
}

/// Relative defect of `R(l) - R(v) = (v - l) R(l) R(v)` on `phi`.
pub fn resolvent_identity_defect(cache: &EvolutionCache, l: f64, v: f64, phi: &AgeProfile) -> Result<f64> {
    let o = ResolventOptions::default();
    let rl = Resolvent::new(cache, l, o)?;
    let rv = Resolvent::new(cache, v, o)?;
    let a = rl.solve(phi)?.0;
    let b = rv.solve(phi)?.0;
    let mut ab = rl.solve(&b)?.0;
    ab.scale(v - l);
    let mut d = a.sub(&b);
    d.axpy(-1.0, &ab);
    let model = cache.model();
    Ok(model.profile_norm(&d)? / (model.profile_norm(&a)? + model.profile_norm(&b)?))
}

fn random_nonnegative(rng: &mut ChaCha8Rng, n_nodes: usize, n_space: usize) -> AgeProfile {
    let flat: Vec<f64> = (0..n_nodes * n_space)
        .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() })
        .collect();
    AgeProfile::from_flat(n_space, &flat)
}

/// Number of failed positivity checks over random nonnegative inputs for
/// the semigroup, the resolvent above `s` and `Pi`.
pub fn positivity_failures(cache: &EvolutionCache, trials: usize, seed: u64) -> Result<usize> {
    let model = cache.model();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = default_bracket(cache).1;
    let lam = spectral_bound(cache, None)?.s_bound.map_or(top, |s| s + 1.0);
    let res = Resolvent::new(cache, lam, ResolventOptions::default())?;
    let n = cache.n_age();
    let mut fails = 0;
    for _ in 0..trials {
        let u0 = random_nonnegative(&mut rng, model.n_nodes(), model.n_space());
        let tr = evolve(&u0, model.age.a_max, cache)?;
        if !tr.profiles.iter().all(|p| cone_check(p, DEFAULT_TOL_POS)) {
            fails += 1;
        }
        if !cone_check(&res.solve(&u0)?.0, DEFAULT_TOL_POS) {
            fails += 1;
        }
        let j = rng.gen_range(0..=n);
        let i = rng.gen_range(j..=n);
        if cache.apply_pi(i, j, &u0.values[j])?.iter().any(|&x| x < -DEFAULT_TOL_POS) {
            fails += 1;
        }
    }
    Ok(fails)
}

/// Duhamel residuals of the scalar preset with an age-average perturbation
/// at `n_age = 16, 32, 64`.
pub fn duhamel_errors() -> Result<Vec<f64>> {
    let mut out = vec![];
    for n in [16usize, 32, 64] {
        let model = presets::scalar_constant(1.5, 0.2, 1.0, n)?;
        let cache = EvolutionCache::build(&model, 4)?;
        let nodes = model.age.nodes.clone();
        let u0 = AgeProfile::from_fn(n + 1, 1, |i, _| (1.0 - nodes[i]).powi(2));
        let p = PerturbationSpec::age_average(1.0, model.age.a_max);
        let tr = evolve_perturbed(&u0, 1.0, &cache, &p)?;
        out.push(duhamel_residual(&tr, &cache, &p)?);
    }
    Ok(out)
}

pub fn criterion_7() -> Vec<Check> {
    let mut out = vec![];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
    let r = presets::random_positive(&mut rng, 32, 8).and_then(|m| {
        let subs = positivity_substeps(&m)?.max(4);
        Ok((m.clone(), EvolutionCache::build(&m, subs)?))
    });
    let (rmodel, rcache) = match r {
        Ok(v) => v,
        Err(e) => return vec![failure(7, "random_instance", e)],
    };
    out.push(match evolution_property_defect(&rcache, 200, 11) {
        Ok(d) => check(7, "evolution_property", d <= 1e-13, d, "<= 1e-13", "200 random triples".into()),
        Err(e) => failure(7, "evolution_property", e),
    });
    out.push(
        match presets::strong_positivity(32, 8)
            .and_then(|m| mortality_shift_defect(&m, presets::STRONG_POSITIVITY_SUBSTEPS, 0.7))
        {
            Ok(d) => check(7, "mortality_shift", d <= 1e-9, d, "<= 1e-9", "c = 0.7".into()),
            Err(e) => failure(7, "mortality_shift", e),
        },
    );
    let top = default_bracket(&rcache).1;
    let l = top + rng.gen_range(0.1..2.0);
    let v = top + rng.gen_range(2.0..6.0);
    let flat: Vec<f64> = (0..rmodel.n_nodes() * rmodel.n_space())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let phi = AgeProfile::from_flat(rmodel.n_space(), &flat);
    out.push(match resolvent_identity_defect(&rcache, l, v, &phi) {
        Ok(d) => check(7, "resolvent_identity", d <= 1e-9, d, "<= 1e-9", format!("lambda = {l}, nu = {v}")),
        Err(e) => failure(7, "resolvent_identity", e),
    });
    out.push(
        match presets::strong_positivity(32, 16)
            .and_then(|m| EvolutionCache::build(&m, presets::STRONG_POSITIVITY_SUBSTEPS))
            .and_then(|c| positivity_failures(&c, 100, 17))
        {
            Ok(f) => check(
                7,
                "positivity_preservation",
                f == 0,
                f as f64,
                "== 0",
                "100 random nonnegative inputs: semigroup, resolvent, Pi".into(),
            ),
            Err(e) => failure(7, "positivity_preservation", e),
        },
    );
    out.push(match duhamel_errors() {
        Ok(errs) => {
            let o = min_of(&orders(&errs));
            check(7, "duhamel_order", o >= 0.9, o, ">= 0.9", format!("residuals at n = 16, 32, 64: {errs:?}"))
        }
        Err(e) => failure(7, "duhamel_order", e),
    });
    out
}

/// Acceptance criteria 1 to 7.
pub fn criteria() -> Vec<Check> {
    let mut out = criterion_1();
    out.extend(criterion_2());
    out.extend(criterion_3());
    out.extend(criterion_4());
    out.extend(criterion_5());
    out.extend(criterion_6());
    out.extend(criterion_7());
    out
}

/// The invariant suite of every module on one instance.
pub fn instance_invariants(model: &Model, substeps: usize, pert: &PerturbationSpec) -> Vec<Check> {
    let mut out = vec![];
    let cache = match EvolutionCache::build(model, substeps) {
        Ok(c) => c,
        Err(e) => return vec![failure(0, "build_cache", e)],
    };
    let n = cache.n_age();
    let ns = cache.n_space();

    out.push(match evolution_property_defect(&cache, 100, 1) {
        Ok(d) => check(0, "evolution_property", d <= 1e-13, d, "<= 1e-13", String::new()),
        Err(e) => failure(0, "evolution_property", e),
    });

    let shift = 0.5;
    out.push(
        (|| -> Result<f64> {
            let mut m2 = model.clone();
            m2.coeff.mortality = model.coeff.mortality.shifted(shift);
            let c2 = EvolutionCache::build(&m2, substeps)?;
            let v = vec![1.0; ns];
            let mut w = 0.0f64;
            for (i, j) in [(n, 0), (n, n / 2), (n / 2, 0)] {
                let a = cache.apply_pi_shifted(shift, i, j, &v)?;
                let b = c2.apply_pi(i, j, &v)?;
                for (x, y) in a.iter().zip(&b) {
                    w = w.max((x - y).abs());
                }
            }
            Ok(w)
        })()
        .map_or_else(
            |e| failure(0, "pi_shift_identity", e),
            |d| check(0, "pi_shift_identity", d <= 1e-12, d, "<= 1e-12", format!("shift {shift}")),
        ),
    );

    out.push(match cache.fit_estimate(&EstimateSample::Stride(2)) {
        Ok(fit) => {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..50 {
                let j = rng.gen_range(0..=n);
                let i = rng.gen_range(j..=n);
                let tau = model.age.nodes[i] - model.age.nodes[j];
                let norm = cache.pi(i, j).map(|p| model.operator_norm(p)).unwrap_or(f64::NAN);
                worst = worst.max(norm - fit.envelope(tau));
            }
            check(
                0,
                "estimate_envelope",
                worst <= 1e-12,
                worst,
                "<= 1e-12",
                format!("m0 = {}, varpi = {}", fit.m0, fit.varpi),
            )
        }
        Err(e) => failure(0, "estimate_envelope", e),
    });

    if model.coeff.positivity {
        let m = cache.min_step_entry();
        out.push(check(
            0,
            "step_positivity",
            m >= -DEFAULT_TOL_POS,
            m,
            ">= -1e-10",
            format!("substeps {substeps}"),
        ));
        out.push(match positivity_failures(&cache, 20, 3) {
            Ok(f) => check(0, "positivity_preservation", f == 0, f as f64, "== 0", "20 random inputs".into()),
            Err(e) => failure(0, "positivity_preservation", e),
        });
    }

    let u0 = AgeProfile::from_fn(n + 1, ns, |i, k| 1.0 + 0.1 * ((i + 2 * k) as f64).sin());
    out.push(
        (|| -> Result<f64> {
            let t = (n / 2).max(1) as f64 * cache.da();
            let full = evolve(&u0, 2.0 * t, &cache)?;
            let half = evolve(&u0, t, &cache)?;
            let rest = evolve(half.final_profile(), t, &cache)?;
            let scale = full.final_profile().max_abs().max(1e-300);
            Ok(full.final_profile().sub(rest.final_profile()).max_abs() / scale)
        })()
        .map_or_else(
            |e| failure(0, "semigroup_property", e),
            |d| check(0, "semigroup_property", d <= 1e-12, d, "<= 1e-12", String::new()),
        ),
    );

    let bound = spectral_bound(&cache, None);
    let top = default_bracket(&cache).1;
    let lam = match &bound {
        Ok(b) => b.s_bound.map_or(top, |s| s + 1.0),
        Err(_) => top,
    };
    out.push(
        (|| -> Result<(f64, f64, f64)> {
            let r = apply_resolvent(&u0, lam, &cache, &ResolventOptions::default())?;
            let w = &model.age.weights;
            let mut birth: Vec<f64> = vec![0.0; ns];
            for i in 0..=n {
                for k in 0..ns {
                    birth[k] += w[i] * cache.birth()[i][k] * r.psi.values[i][k];
                }
            }
            let bd = birth
                .iter()
                .zip(&r.psi0)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / r.psi0.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
            Ok((r.certified_residual / model.profile_norm(&u0)?, bd, lam))
        })()
        .map_or_else(
            |e| failure(0, "resolvent_certified", e),
            |(res, bd, lam)| {
                check(
                    0,
                    "resolvent_certified",
                    res <= 1e-10 && bd <= 1e-11,
                    res,
                    "<= 1e-10",
                    format!("lambda = {lam}, birth-condition defect {bd:e}"),
                )
            },
        ),
    );

    out.push(
        resolvent_identity_defect(&cache, lam, lam + 1.5, &u0).map_or_else(
            |e| failure(0, "resolvent_identity", e),
            |d| check(0, "resolvent_identity", d <= 1e-9, d, "<= 1e-9", String::new()),
        ),
    );

    if n * ns <= 5000 {
        out.push(
            (|| -> Result<f64> {
                let gen = GeneratorMatrix::assemble(&cache, &PerturbationSpec::none(), DENSE_LIMIT)?;
                let r = apply_resolvent(&u0, lam, &cache, &ResolventOptions::default())?;
                construction_defect(&gen, model, &r.psi, &u0, lam)
            })()
            .map_or_else(
                |e| failure(0, "generator_consistency", e),
                |d| check(0, "generator_consistency", d <= 1e-10, d, "<= 1e-10", String::new()),
            ),
        );
    }

    match bound {
        Ok(b) => {
            if let Some(s) = b.s_bound {
                let g = b.residual.unwrap_or(f64::NAN).abs();
                out.push(check(0, "spectral_bound_root", g <= 1e-10, g, "<= 1e-10", format!("s = {s}")));
                out.push(match principal_eigenvector(s, &cache) {
                    Ok(psi) => {
                        let mut zeta = psi.clone();
                        zeta.scale(s);
                        let res = generator_residual(&psi, &zeta, &cache).unwrap_or(f64::NAN);
                        check(
                            0,
                            "principal_vector",
                            cone_check(&psi, DEFAULT_TOL_POS) && res <= 1e-8,
                            res,
                            "<= 1e-8 and in cone",
                            String::new(),
                        )
                    }
                    Err(e) => failure(0, "principal_vector", e),
                });
            } else {
                out.push(check(0, "spectral_bound_root", true, f64::NAN, "-", "no sign change on bracket".into()));
            }
        }
        Err(e) => out.push(failure(0, "spectral_bound_root", e)),
    }

    if !pert.is_none() {
        out.push(
            (|| -> Result<f64> {
                let tr = evolve_perturbed(&u0, model.age.a_max, &cache, pert)?;
                duhamel_residual(&tr, &cache, pert)
            })()
            .map_or_else(
                |e| failure(0, "duhamel_residual", e),
                |d| {
                    let scale = model.profile_norm(&u0).unwrap_or(1.0);
                    check(
                        0,
                        "duhamel_residual",
                        d <= 0.5 * scale,
                        d,
                        "O(da), reported",
                        format!("da = {}", cache.da()),
                    )
                },
            ),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lotka_oracle_known_root() {
        let r = lotka_root(1.0, 0.0, 2.0);
        assert!(((1.0 - (-2.0 * r).exp()) / r - 1.0).abs() < 1e-14);
        assert!((lotka_root(1.0, 0.5, 2.0) - (r - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn invariants_on_small_instance() {
        let m = presets::separable_neumann(12, 4).unwrap();
        let checks = instance_invariants(&m, 4, &presets::age_kernel(0.5));
        for c in &checks {
            assert!(c.passed, "{c:?}");
        }
    }
}
