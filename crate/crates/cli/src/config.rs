//! Run configuration: TOML sections for the model, named perturbations,
//! numerics and output.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use agediff::evolution::EvolutionCache;
use agediff::model::{
    AgeGrid, BoundaryCondition, BoundaryKind, Coefficients, Field, Model, NormSpec, Shape, SpaceGrid, SpaceNorm,
    DEFAULT_D_MIN,
};
use agediff::resolvent::ResolventOptions;
use agediff::semigroup::{Kernel, PerturbationSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub perturbation: BTreeMap<String, PerturbationSpec>,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub a_max: f64,
    pub n_age: usize,
    #[serde(default = "one")]
    pub length: f64,
    pub n_space: usize,
    #[serde(default = "dirichlet")]
    pub bc: BoundaryKind,
    #[serde(default)]
    pub robin_coeff: f64,
    #[serde(default = "yes")]
    pub positivity_mode: bool,
    #[serde(default = "d_min")]
    pub d_min: f64,
    /// Drop the diffusion term, leaving `A(a) = -mu(a)`.
    #[serde(default)]
    pub diffusion_disabled: bool,
    #[serde(default = "unit_field")]
    pub diffusion: Field,
    #[serde(default = "zero_field")]
    pub mortality: Field,
    #[serde(default = "zero_field")]
    pub birth: Field,
    #[serde(default = "note")]
    pub smoothness_note: String,
    #[serde(default)]
    pub space_norm: SpaceNorm,
    #[serde(default = "one")]
    pub weight_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    #[serde(default = "substeps")]
    pub substeps: usize,
    #[serde(default = "cond_max")]
    pub cond_max: f64,
    #[serde(default = "tol_res")]
    pub tol_res: f64,
    #[serde(default = "yes")]
    pub require_certified: bool,
    #[serde(default = "fixed_point_tol")]
    pub fixed_point_tol: f64,
    #[serde(default = "max_iter")]
    pub max_iter: usize,
    #[serde(default = "dense_limit")]
    pub dense_limit: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bracket: Option<[f64; 2]>,
    /// Spectral parameters for characteristic-value scans and comparisons.
    #[serde(default)]
    pub lambdas: Vec<f64>,
    /// Sample times for semigroup comparisons.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    /// `[n_age, n_space]` levels for the compactness probe.
    #[serde(default)]
    pub refinements: Vec<[usize; 2]>,
    #[serde(default = "threshold_offset")]
    pub threshold_offset: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "out_dir")]
    pub dir: String,
    #[serde(default = "yes")]
    pub pretty: bool,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn dirichlet() -> BoundaryKind {
    BoundaryKind::Dirichlet
}
fn d_min() -> f64 {
    DEFAULT_D_MIN
}
fn unit_field() -> Field {
    Field::constant(1.0)
}
fn zero_field() -> Field {
    Field::constant(0.0)
}
fn note() -> String {
    "coefficients assumed Hoelder continuous in age".into()
}
fn substeps() -> usize {
    4
}
fn cond_max() -> f64 {
    1e12
}
fn tol_res() -> f64 {
    1e-8
}
fn fixed_point_tol() -> f64 {
    1e-12
}
fn max_iter() -> usize {
    500
}
fn dense_limit() -> usize {
    agediff::spectrum::DENSE_LIMIT
}
fn threshold_offset() -> f64 {
    5.0
}
fn out_dir() -> String {
    "out".into()
}

impl Default for NumericsSection {
    fn default() -> Self {
        toml::from_str("").expect("numerics defaults")
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: out_dir(),
            pretty: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io(String),
    Parse(String),
    Validation { path: String, message: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(m) => write!(f, "cannot read config: {m}"),
            ConfigError::Parse(m) => write!(f, "config parse error: {m}"),
            ConfigError::Validation { path, message } => write!(f, "invalid config field {path}: {message}"),
        }
    }
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        path: path.into(),
        message: message.into(),
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let mut msg = e.to_string().replace('\n', " ");
        if msg.contains("unknown variant") && msg.contains("preset") {
            msg.push_str(&format!(" (available presets: {})", Field::PRESETS.join(", ")));
        }
        ConfigError::Parse(msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("config serialises")
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(path, format!("must be a positive finite number, got {v}")))
    }
}

fn finite(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be finite, got {v}")))
    }
}

fn at_least_one(path: &str, v: usize) -> Result<(), ConfigError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(invalid(path, "must be at least 1"))
    }
}

fn check_shape(path: &str, s: &Shape) -> Result<(), ConfigError> {
    match *s {
        Shape::Constant { value } => finite(&format!("{path}.value"), value),
        Shape::Gaussian { center, width } => {
            finite(&format!("{path}.center"), center)?;
            positive(&format!("{path}.width"), width)
        }
        Shape::Window { lo, hi } | Shape::Bump { lo, hi } => {
            finite(&format!("{path}.lo"), lo)?;
            finite(&format!("{path}.hi"), hi)?;
            if lo < hi {
                Ok(())
            } else {
                Err(invalid(format!("{path}.hi"), "must exceed lo"))
            }
        }
        Shape::Exponential { rate } => finite(&format!("{path}.rate"), rate),
        Shape::Affine { intercept, slope } => {
            finite(&format!("{path}.intercept"), intercept)?;
            finite(&format!("{path}.slope"), slope)
        }
        Shape::Sine { frequency } => finite(&format!("{path}.frequency"), frequency),
    }
}

fn check_field(path: &str, f: &Field) -> Result<(), ConfigError> {
    match f {
        Field::Constant { value } => finite(&format!("{path}.value"), *value),
        Field::GaussianBump {
            offset,
            amplitude,
            age_center,
            age_width,
            x_center,
            x_width,
        } => {
            finite(&format!("{path}.offset"), *offset)?;
            finite(&format!("{path}.amplitude"), *amplitude)?;
            finite(&format!("{path}.age_center"), *age_center)?;
            finite(&format!("{path}.x_center"), *x_center)?;
            positive(&format!("{path}.age_width"), *age_width)?;
            positive(&format!("{path}.x_width"), *x_width)
        }
        Field::Separable { scale, age, space } => {
            finite(&format!("{path}.scale"), *scale)?;
            check_shape(&format!("{path}.age"), age)?;
            check_shape(&format!("{path}.space"), space)
        }
        Field::Custom(_) => Err(invalid(path, "closure fields cannot be configured")),
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        positive("model.a_max", m.a_max)?;
        at_least_one("model.n_age", m.n_age)?;
        at_least_one("model.n_space", m.n_space)?;
        positive("model.length", m.length)?;
        finite("model.robin_coeff", m.robin_coeff)?;
        if m.positivity_mode && m.bc == BoundaryKind::Robin && m.robin_coeff < 0.0 {
            return Err(invalid("model.robin_coeff", "must be nonnegative in positivity mode"));
        }
        positive("model.d_min", m.d_min)?;
        positive("model.weight_scale", m.weight_scale)?;
        check_field("model.diffusion", &m.diffusion)?;
        check_field("model.mortality", &m.mortality)?;
        check_field("model.birth", &m.birth)?;

        for (name, p) in &self.perturbation {
            let base = format!("perturbation.{name}");
            finite(&format!("{base}.gamma"), p.gamma)?;
            check_shape(&format!("{base}.m"), &p.m)?;
            match &p.k {
                Kernel::Constant { value } => finite(&format!("{base}.k.value"), *value)?,
                Kernel::Separable { left, right } => {
                    check_shape(&format!("{base}.k.left"), left)?;
                    check_shape(&format!("{base}.k.right"), right)?;
                }
                Kernel::Gaussian { width } => positive(&format!("{base}.k.width"), *width)?,
            }
        }

        let n = &self.numerics;
        at_least_one("numerics.substeps", n.substeps)?;
        if !(n.cond_max.is_finite() && n.cond_max > 1.0) {
            return Err(invalid("numerics.cond_max", "must be a finite number above 1"));
        }
        positive("numerics.tol_res", n.tol_res)?;
        positive("numerics.fixed_point_tol", n.fixed_point_tol)?;
        at_least_one("numerics.max_iter", n.max_iter)?;
        at_least_one("numerics.dense_limit", n.dense_limit)?;
        if let Some([lo, hi]) = n.bracket {
            finite("numerics.bracket", lo)?;
            finite("numerics.bracket", hi)?;
            if lo >= hi {
                return Err(invalid("numerics.bracket", "lower end must be below upper end"));
            }
        }
        for (i, l) in n.lambdas.iter().enumerate() {
            finite(&format!("numerics.lambdas[{i}]"), *l)?;
        }
        for (i, t) in n.times.iter().enumerate() {
            if !(t.is_finite() && *t >= 0.0) {
                return Err(invalid(format!("numerics.times[{i}]"), "must be nonnegative"));
            }
        }
        if let Some(t) = n.t_final {
            if !(t.is_finite() && t >= 0.0) {
                return Err(invalid("numerics.t_final", "must be nonnegative"));
            }
        }
        for (i, r) in n.refinements.iter().enumerate() {
            at_least_one(&format!("numerics.refinements[{i}][0]"), r[0])?;
            at_least_one(&format!("numerics.refinements[{i}][1]"), r[1])?;
        }
        positive("numerics.threshold_offset", n.threshold_offset)?;
        if self.output.dir.trim().is_empty() {
            return Err(invalid("output.dir", "must not be empty"));
        }
        Ok(())
    }

    pub fn build_model(&self) -> agediff::Result<Model> {
        let m = &self.model;
        let bc = BoundaryCondition {
            kind: m.bc,
            robin_coeff: m.robin_coeff,
        };
        let age = AgeGrid::new(m.a_max, m.n_age)?;
        let space = SpaceGrid::new(m.length, m.n_space, bc)?;
        let mut coeff = Coefficients::new(
            if m.diffusion_disabled { None } else { Some(m.diffusion.clone()) },
            m.mortality.clone(),
            m.birth.clone(),
        );
        coeff.smoothness_note = m.smoothness_note.clone();
        coeff.positivity = m.positivity_mode;
        coeff.d_min = m.d_min;
        Ok(Model::new(age, space, coeff)?.with_norm(NormSpec {
            space_norm: m.space_norm,
            weight_scale: m.weight_scale,
        }))
    }

    pub fn build_cache(&self) -> agediff::Result<EvolutionCache> {
        EvolutionCache::build(&self.build_model()?, self.numerics.substeps)
    }

    pub fn resolvent_options(&self) -> ResolventOptions {
        let n = &self.numerics;
        ResolventOptions {
            cond_max: n.cond_max,
            tol_res: n.tol_res,
            require_certified: n.require_certified,
            fixed_point_tol: n.fixed_point_tol,
            max_iter: n.max_iter,
            dense_limit: n.dense_limit,
        }
    }

    pub fn bracket(&self) -> Option<(f64, f64)> {
        self.numerics.bracket.map(|[a, b]| (a, b))
    }

    /// The named perturbation, or the only one when no name is given.
    pub fn perturbation(&self, name: Option<&str>) -> Result<PerturbationSpec, ConfigError> {
        match name {
            Some(n) => self.perturbation.get(n).cloned().ok_or_else(|| {
                let known: Vec<&str> = self.perturbation.keys().map(String::as_str).collect();
                invalid(format!("perturbation.{n}"), format!("no such section; defined: [{}]", known.join(", ")))
            }),
            None => match self.perturbation.len() {
                0 => Ok(PerturbationSpec::none()),
                1 => Ok(self.perturbation.values().next().cloned().expect("one entry")),
                _ => Err(invalid("perturbation", "several sections defined; select one with --perturbed")),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[model]\na_max = 2.0\nn_age = 16\nn_space = 4\nbirth = { preset = \"constant\", value = 1.0 }\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_str(MINIMAL).unwrap();
        assert_eq!(c.numerics.substeps, 4);
        assert_eq!(c.model.bc, BoundaryKind::Dirichlet);
        assert!(c.model.positivity_mode);
        assert_eq!(c.numerics.cond_max, 1e12);
        assert_eq!(c.output.dir, "out");
    }

    #[test]
    fn zero_age_intervals_rejected_with_path() {
        let e = parse_str(&MINIMAL.replace("n_age = 16", "n_age = 0")).unwrap_err();
        match e {
            ConfigError::Validation { path, .. } => assert_eq!(path, "model.n_age"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_preset_lists_presets() {
        let e = parse_str(&MINIMAL.replace("\"constant\"", "\"wobbly\"")).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("gaussian-bump") && msg.contains("separable"), "{msg}");
    }

    #[test]
    fn echo_round_trips() {
        let text = format!(
            "{MINIMAL}\n[perturbation.kernel]\nkind = \"age_kernel\"\nm = {{ shape = \"gaussian\", center = 0.5, width = 0.3 }}\nk = {{ shape = \"constant\", value = 0.5 }}\npositive = true\n\n[numerics]\nbracket = [-2.0, 4.0]\nrefinements = [[8, 2], [16, 4]]\n"
        );
        let c = parse_str(&text).unwrap();
        let echoed = to_toml(&c);
        assert_eq!(parse_str(&echoed).unwrap(), c);
    }

    #[test]
    fn parse_errors_carry_line_info() {
        let e = parse_str("[model]\na_max = \n").unwrap_err();
        assert!(matches!(e, ConfigError::Parse(_)));
        assert!(e.to_string().contains("line"), "{e}");
    }
}
