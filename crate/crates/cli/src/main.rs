mod config;
mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agediff::evolution::EvolutionCache;
use agediff::model::AgeProfile;
use agediff::resolvent::{apply_perturbed_resolvent, SolvePath};
use agediff::semigroup::{evolve_perturbed, PerturbationSpec};
use agediff::spectrum::{
    char_values, comparison_suite, compactness_probe, perturbed_spectral_bound, principal_eigenvector,
    spectral_bound, BoundOutcome, GeneratorMatrix, PerturbedBound, SpectralReport,
};
use agediff::verify::{self, Check};
use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "agediff", version, about = "Age-structured diffusion: evolution, resolvent and spectral bound")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evolve an initial profile and export the trajectory.
    Simulate {
        #[arg(long, allow_hyphen_values = true)]
        t_final: Option<f64>,
        /// Initial profile (CSV); defaults to all ones.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Perturbation section name.
        #[arg(long)]
        perturbed: Option<String>,
    },
    /// Apply the resolvent at a real lambda.
    Resolvent {
        #[arg(long, allow_hyphen_values = true)]
        lambda: f64,
        /// Right-hand side (CSV); defaults to all ones.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Result profile (CSV).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        perturbed: Option<String>,
    },
    /// Root of the characteristic equation.
    SpectralBound {
        #[arg(long)]
        perturbed: Option<String>,
    },
    /// Dense eigenvalues, principal vector and characteristic values.
    Spectrum,
    /// Refinement study of the compactness proxies.
    Compactness,
    /// Entrywise comparison between the perturbed and unperturbed problems.
    ComparePerturbed {
        #[arg(long)]
        perturbed: Option<String>,
    },
    /// Pass/fail table of the invariant suite on the configured instance.
    Verify {
        /// Also run the built-in acceptance criteria.
        #[arg(long)]
        criteria: bool,
        #[arg(long)]
        perturbed: Option<String>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Config(ConfigError),
    Io(String),
    Core(agediff::Error),
    Verify { failed: usize, total: usize },
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<agediff::Error> for Failure {
    fn from(e: agediff::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        use agediff::Error as E;
        match self {
            Failure::Usage(_) | Failure::Config(_) | Failure::Io(_) => 3,
            Failure::Verify { .. } => 5,
            Failure::Core(e) => match e {
                E::NearSpectrum { .. } => 2,
                E::InvalidCoefficient { .. }
                | E::Dimension { .. }
                | E::Causality { .. }
                | E::Alignment { .. }
                | E::Domain(_)
                | E::SizeLimit { .. }
                | E::InvalidParameter(_) => 3,
                E::StepConstruction { .. } | E::Uncertified { .. } | E::DegeneratePeripheral { .. } | E::Numerical(_) => 4,
            },
        }
    }

    fn kind(&self) -> &'static str {
        use agediff::Error as E;
        match self {
            Failure::Usage(_) => "usage",
            Failure::Config(ConfigError::Io(_)) | Failure::Io(_) => "io",
            Failure::Config(ConfigError::Parse(_)) => "config_parse",
            Failure::Config(ConfigError::Validation { .. }) => "config_validation",
            Failure::Verify { .. } => "verify_failed",
            Failure::Core(e) => match e {
                E::InvalidCoefficient { .. } => "invalid_coefficient",
                E::Dimension { .. } => "dimension",
                E::Causality { .. } => "causality",
                E::StepConstruction { .. } => "step_construction",
                E::Alignment { .. } => "alignment",
                E::Domain(_) => "domain",
                E::NearSpectrum { .. } => "near_spectrum",
                E::Uncertified { .. } => "uncertified",
                E::DegeneratePeripheral { .. } => "degenerate_peripheral",
                E::SizeLimit { .. } => "size_limit",
                E::Numerical(_) => "numerical",
                E::InvalidParameter(_) => "invalid_parameter",
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Io(m) => m.clone(),
            Failure::Config(e) => e.to_string(),
            Failure::Core(e) => e.to_string(),
            Failure::Verify { failed, total } => format!("{failed} of {total} checks failed"),
        }
    }

    fn record(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.message(),
        });
        if let Failure::Config(ConfigError::Validation { path, .. }) = self {
            v["field"] = serde_json::Value::String(path.clone());
        }
        v
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, Failure> {
        let text = if self.cfg.output.pretty {
            serde_json::to_string_pretty(value)
        } else {
            serde_json::to_string(value)
        }
        .map_err(|e| Failure::Io(e.to_string()))?;
        let path = self.out.join(name);
        std::fs::write(&path, text + "\n").map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn perturbation(&self, name: Option<&str>) -> Result<PerturbationSpec, Failure> {
        match name {
            Some(n) => Ok(self.cfg.perturbation(Some(n))?),
            None => Ok(PerturbationSpec::none()),
        }
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn ones(cache: &EvolutionCache) -> AgeProfile {
    AgeProfile::from_fn(cache.n_age() + 1, cache.n_space(), |_, _| 1.0)
}

fn load_profile(path: Option<&Path>, cache: &EvolutionCache) -> Result<AgeProfile, Failure> {
    match path {
        Some(p) => io::read_profile(p, cache.n_age() + 1, cache.n_space()).map_err(Failure::Io),
        None => Ok(ones(cache)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            let f = Failure::Usage(e.kind().to_string());
            eprintln!("{}", f.record());
            return ExitCode::from(f.exit_code());
        }
    };
    agediff::linalg::set_sequential();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.record());
            ExitCode::from(f.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let path = cli
        .config
        .ok_or_else(|| Failure::Usage("--config <FILE> is required".into()))?;
    let cfg = config::parse_config(&path)?;
    let out = cli.output_dir.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    std::fs::create_dir_all(&out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
    let echo = out.join("effective_config.toml");
    std::fs::write(&echo, config::to_toml(&cfg)).map_err(|e| Failure::Io(format!("{}: {e}", echo.display())))?;
    let ctx = Ctx { cfg, out };

    match cli.command {
        Command::Simulate {
            t_final,
            input,
            perturbed,
        } => simulate(&ctx, t_final, input.as_deref(), perturbed.as_deref()),
        Command::Resolvent {
            lambda,
            input,
            output,
            perturbed,
        } => resolvent(&ctx, lambda, input.as_deref(), output, perturbed.as_deref()),
        Command::SpectralBound { perturbed } => bound(&ctx, perturbed.as_deref()),
        Command::Spectrum => spectrum(&ctx),
        Command::Compactness => compactness(&ctx),
        Command::ComparePerturbed { perturbed } => compare(&ctx, perturbed.as_deref()),
        Command::Verify { criteria, perturbed } => verify_cmd(&ctx, criteria, perturbed.as_deref()),
    }
}

#[derive(Serialize)]
struct SimulateReport {
    t_final: f64,
    da: f64,
    steps: usize,
    perturbation: Option<String>,
    initial_norm: f64,
    final_norm: f64,
    final_min_entry: f64,
    /// `ln(|u(T)| / |u(T/2)|) / (T/2)` over the second half of the run.
    growth_rate: Option<f64>,
    trajectory_csv: String,
    births_csv: String,
}

fn simulate(ctx: &Ctx, t_final: Option<f64>, input: Option<&Path>, perturbed: Option<&str>) -> Result<(), Failure> {
    let t_final = t_final
        .or(ctx.cfg.numerics.t_final)
        .ok_or_else(|| Failure::Usage("simulate needs --t-final or numerics.t_final".into()))?;
    let pert = ctx.perturbation(perturbed)?;
    let cache = ctx.cfg.build_cache()?;
    let u0 = load_profile(input, &cache)?;
    let traj = evolve_perturbed(&u0, t_final, &cache, &pert)?;
    let model = cache.model();

    let tp = ctx.path("trajectory.csv");
    io::write_trajectory(&tp, &traj, &model.age.nodes).map_err(Failure::Io)?;
    let bp = ctx.path("births.csv");
    io::write_births(&bp, &traj).map_err(Failure::Io)?;

    let steps = traj.times.len() - 1;
    let norm = |u: &AgeProfile| model.profile_norm(u);
    let final_norm = norm(traj.final_profile())?;
    let half = steps / 2;
    let growth_rate = if half >= 1 {
        let mid = norm(&traj.profiles[steps - half])?;
        let span = traj.times[steps] - traj.times[steps - half];
        (mid > 0.0 && final_norm > 0.0).then(|| (final_norm / mid).ln() / span)
    } else {
        None
    };
    let report = SimulateReport {
        t_final,
        da: cache.da(),
        steps,
        perturbation: perturbed.map(str::to_string),
        initial_norm: norm(&u0)?,
        final_norm,
        final_min_entry: traj.final_profile().min_entry(),
        growth_rate,
        trajectory_csv: file_name(&tp),
        births_csv: file_name(&bp),
    };
    let p = ctx.write_json("simulate.json", &report)?;
    println!("simulate: {} steps to t = {t_final}, |u(T)| = {final_norm:e}; report {}", steps, p.display());
    Ok(())
}

#[derive(Serialize)]
struct ResolventReport {
    lambda: f64,
    perturbation: Option<String>,
    q_norm: f64,
    condition: f64,
    certified_residual: f64,
    certified: bool,
    path: SolvePath,
    psi0: Vec<f64>,
    profile_csv: String,
}

fn resolvent(
    ctx: &Ctx,
    lambda: f64,
    input: Option<&Path>,
    output: Option<PathBuf>,
    perturbed: Option<&str>,
) -> Result<(), Failure> {
    let pert = ctx.perturbation(perturbed)?;
    let cache = ctx.cfg.build_cache()?;
    let phi = load_profile(input, &cache)?;
    let r = apply_perturbed_resolvent(&phi, lambda, &cache, &pert, &ctx.cfg.resolvent_options())?;
    let out = output.unwrap_or_else(|| ctx.path("resolvent_profile.csv"));
    io::write_profile(&out, &r.psi).map_err(Failure::Io)?;
    let report = ResolventReport {
        lambda,
        perturbation: perturbed.map(str::to_string),
        q_norm: r.q_norm,
        condition: r.condition,
        certified_residual: r.certified_residual,
        certified: r.certified,
        path: r.path,
        psi0: r.psi0,
        profile_csv: out.display().to_string(),
    };
    let p = ctx.write_json("resolvent.json", &report)?;
    println!(
        "resolvent: lambda = {lambda}, condition {:e}, residual {:e}; report {}",
        report.condition,
        report.certified_residual,
        p.display()
    );
    Ok(())
}

/// Evenly spaced scan over the bracket when no lambdas are configured.
fn scan_lambdas(ctx: &Ctx, bracket: (f64, f64)) -> Vec<f64> {
    if !ctx.cfg.numerics.lambdas.is_empty() {
        return ctx.cfg.numerics.lambdas.clone();
    }
    let (lo, hi) = bracket;
    (0..=16).map(|k| lo + (hi - lo) * k as f64 / 16.0).collect()
}

/// Characteristic values, skipping points at or below the discretisation pole.
fn char_scan(ctx: &Ctx, cache: &EvolutionCache, bracket: (f64, f64)) -> Result<Vec<(f64, f64)>, Failure> {
    let floor = cache.lambda_floor();
    let lambdas: Vec<f64> = scan_lambdas(ctx, bracket).into_iter().filter(|l| *l > floor).collect();
    let cv = char_values(cache, &lambdas)?;
    io::write_char_values(&ctx.path("char_values.csv"), &cv).map_err(Failure::Io)?;
    Ok(cv)
}

fn empty_report(s_bound: Option<f64>) -> SpectralReport {
    SpectralReport {
        s_bound,
        eigenvalues: vec![],
        principal_vector: None,
        char_values: vec![],
        compactness: None,
        comparisons: vec![],
    }
}

#[derive(Serialize)]
struct BoundReport {
    bound: BoundOutcome,
    lambda_floor: f64,
    perturbation: Option<String>,
    perturbed: Option<PerturbedBound>,
}

fn bound(ctx: &Ctx, perturbed: Option<&str>) -> Result<(), Failure> {
    let pert = ctx.perturbation(perturbed)?;
    let cache = ctx.cfg.build_cache()?;
    let outcome = spectral_bound(&cache, ctx.cfg.bracket())?;
    let pb = if pert.is_none() {
        None
    } else {
        Some(perturbed_spectral_bound(&cache, &pert, ctx.cfg.bracket())?)
    };
    let mut report = empty_report(outcome.s_bound);
    report.char_values = char_scan(ctx, &cache, outcome.bracket)?;
    ctx.write_json("spectral_report.json", &report)?;
    let detail = BoundReport {
        bound: outcome,
        lambda_floor: cache.lambda_floor(),
        perturbation: perturbed.map(str::to_string),
        perturbed: pb,
    };
    ctx.write_json("spectral_bound.json", &detail)?;
    match detail.bound.s_bound {
        Some(s) => println!("spectral-bound: s = {s}"),
        None => println!("spectral-bound: no root in bracket {:?}", detail.bound.bracket),
    }
    if let Some(s) = detail.perturbed.as_ref().and_then(|p| p.s_perturbed) {
        println!("spectral-bound: perturbed s = {s}");
    }
    Ok(())
}

#[derive(Serialize)]
struct SpectrumOutput {
    #[serde(flatten)]
    report: SpectralReport,
    notices: Vec<String>,
}

fn spectrum(ctx: &Ctx) -> Result<(), Failure> {
    let cache = ctx.cfg.build_cache()?;
    let outcome = spectral_bound(&cache, ctx.cfg.bracket())?;
    let mut report = empty_report(outcome.s_bound);
    let mut notices = vec![];
    match GeneratorMatrix::assemble(&cache, &PerturbationSpec::none(), ctx.cfg.numerics.dense_limit) {
        Ok(gen) => {
            let mut ev: Vec<(f64, f64)> = gen.eigenvalues()?.iter().map(|z| (z.re, z.im)).collect();
            ev.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
            report.eigenvalues = ev;
        }
        Err(agediff::Error::SizeLimit { dim, limit }) => {
            notices.push(format!("dense eigenvalues skipped: dimension {dim} exceeds {limit}"));
        }
        Err(e) => return Err(e.into()),
    }
    if let Some(s) = outcome.s_bound {
        match principal_eigenvector(s, &cache) {
            Ok(v) => report.principal_vector = Some(v.values),
            Err(e @ agediff::Error::DegeneratePeripheral { .. }) => notices.push(e.to_string()),
            Err(e) => return Err(e.into()),
        }
    } else {
        notices.push("no spectral bound in bracket; principal vector not computed".into());
    }
    report.char_values = char_scan(ctx, &cache, outcome.bracket)?;
    let n_eig = report.eigenvalues.len();
    ctx.write_json("spectral_report.json", &SpectrumOutput { report, notices })?;
    println!("spectrum: s = {:?}, {n_eig} eigenvalues", outcome.s_bound);
    Ok(())
}

fn compactness(ctx: &Ctx) -> Result<(), Failure> {
    let model = ctx.cfg.build_model()?;
    let n = &ctx.cfg.numerics;
    let levels: Vec<(usize, usize)> = if n.refinements.is_empty() {
        let (na, ns) = (model.age.len() - 1, model.n_space());
        vec![(na, ns), (2 * na, 2 * ns)]
    } else {
        n.refinements.iter().map(|r| (r[0], r[1])).collect()
    };
    let diag = compactness_probe(&model, n.substeps, &levels, n.threshold_offset, n.dense_limit)?;
    let mut report = empty_report(diag.levels.last().and_then(|l| l.s_bound));
    println!("compactness: half-plane counts {:?}", diag.halfplane_counts);
    println!(
        "compactness: decay exponents {:?}",
        diag.levels.iter().map(|l| l.decay_exponent).collect::<Vec<_>>()
    );
    report.compactness = Some(diag);
    ctx.write_json("spectral_report.json", &report)?;
    Ok(())
}

#[derive(Serialize)]
struct CompareOutput {
    #[serde(flatten)]
    report: SpectralReport,
    perturbation: String,
    s_perturbed: Option<f64>,
    lambdas: Vec<f64>,
    times: Vec<f64>,
    notices: Vec<String>,
}

fn compare(ctx: &Ctx, perturbed: Option<&str>) -> Result<(), Failure> {
    let pert = ctx.cfg.perturbation(perturbed)?;
    if pert.is_none() {
        return Err(Failure::Usage("compare-perturbed needs a [perturbation.<name>] section".into()));
    }
    let name = match perturbed {
        Some(n) => n.to_string(),
        None => ctx.cfg.perturbation.keys().next().cloned().unwrap_or_default(),
    };
    let cache = ctx.cfg.build_cache()?;
    let n = &ctx.cfg.numerics;
    let lambdas = if n.lambdas.is_empty() {
        let pb = perturbed_spectral_bound(&cache, &pert, ctx.cfg.bracket())?;
        let s = pb
            .s_perturbed
            .ok_or_else(|| agediff::Error::Numerical("perturbed spectral bound not found".into()))?;
        vec![s + 0.5, s + 1.0, s + 3.0]
    } else {
        n.lambdas.clone()
    };
    let times = if n.times.is_empty() {
        let da = cache.da();
        let half = (cache.n_age() / 2).max(1);
        vec![da, half as f64 * da, cache.n_age() as f64 * da]
    } else {
        n.times.clone()
    };
    let cmp = comparison_suite(&cache, &pert, &lambdas, &times, n.seed)?;
    let failed = cmp.outcomes.iter().filter(|o| !o.passed).count();
    for o in &cmp.outcomes {
        println!("{}  {:<40} margin {:e}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.margin);
    }
    let mut report = empty_report(cmp.s_unperturbed);
    report.comparisons = cmp.outcomes;
    ctx.write_json(
        "spectral_report.json",
        &CompareOutput {
            report,
            perturbation: name,
            s_perturbed: cmp.s_perturbed,
            lambdas,
            times,
            notices: cmp.notices,
        },
    )?;
    if failed > 0 {
        println!("compare-perturbed: {failed} comparisons violated");
    }
    Ok(())
}

#[derive(Serialize)]
struct CheckRecord {
    criterion: u8,
    name: String,
    passed: bool,
    /// Absent for wall-clock measurements so reports stay reproducible.
    value: Option<f64>,
    threshold: String,
    detail: Option<String>,
}

impl From<&Check> for CheckRecord {
    fn from(c: &Check) -> Self {
        CheckRecord {
            criterion: c.criterion,
            name: c.name.clone(),
            passed: c.passed,
            value: c.deterministic.then_some(c.value),
            threshold: c.threshold.clone(),
            detail: c.deterministic.then(|| c.detail.clone()),
        }
    }
}

#[derive(Serialize)]
struct VerifyReport {
    passed: usize,
    failed: usize,
    checks: Vec<CheckRecord>,
}

fn verify_cmd(ctx: &Ctx, criteria: bool, perturbed: Option<&str>) -> Result<(), Failure> {
    let model = ctx.cfg.build_model()?;
    let pert = ctx.cfg.perturbation(perturbed)?;
    let mut checks = verify::instance_invariants(&model, ctx.cfg.numerics.substeps, &pert);
    if criteria {
        checks.extend(verify::criteria());
    }
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(4);
    println!("{:<4}  {:<9}  {:<width$}  {:<24}  threshold", "", "criterion", "check", "value");
    for c in &checks {
        let crit = if c.criterion == 0 { "instance".to_string() } else { format!("C{}", c.criterion) };
        println!(
            "{:<4}  {:<9}  {:<width$}  {:<24}  {}",
            if c.passed { "PASS" } else { "FAIL" },
            crit,
            c.name,
            format!("{:e}", c.value),
            c.threshold
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let report = VerifyReport {
        passed: checks.len() - failed,
        failed,
        checks: checks.iter().map(CheckRecord::from).collect(),
    };
    ctx.write_json("verify.json", &report)?;
    println!("verify: {} passed, {failed} failed", report.passed);
    if failed > 0 {
        Err(Failure::Verify {
            failed,
            total: checks.len(),
        })
    } else {
        Ok(())
    }
}
