//! Grids, coefficients, the spatial generator A(a), norms and the order cone.

use std::fmt;
use std::sync::Arc;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_D_MIN: f64 = 1e-8;
pub const DEFAULT_TOL_POS: f64 = 1e-10;

/// Uniform grid on the age interval `[0, a_max]` with trapezoid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeGrid {
    pub a_max: f64,
    pub n_age: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AgeGrid {
    pub fn new(a_max: f64, n_age: usize) -> Result<AgeGrid> {
        if !(a_max.is_finite() && a_max > 0.0) {
            return Err(Error::InvalidParameter(format!("a_max must be positive, got {a_max}")));
        }
        if n_age == 0 {
            return Err(Error::InvalidParameter("n_age must be at least 1".into()));
        }
        let da = a_max / n_age as f64;
        let mut nodes: Vec<f64> = (0..=n_age).map(|i| i as f64 * da).collect();
        nodes[n_age] = a_max;
        let mut weights = vec![da; n_age + 1];
        weights[0] = 0.5 * da;
        weights[n_age] = 0.5 * da;
        Ok(AgeGrid {
            a_max,
            n_age,
            nodes,
            weights,
        })
    }

    pub fn da(&self) -> f64 {
        self.a_max / self.n_age as f64
    }

    pub fn len(&self) -> usize {
        self.n_age + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
    Robin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub kind: BoundaryKind,
    #[serde(default)]
    pub robin_coeff: f64,
}

impl BoundaryCondition {
    pub fn dirichlet() -> Self {
        BoundaryCondition {
            kind: BoundaryKind::Dirichlet,
            robin_coeff: 0.0,
        }
    }
    pub fn neumann() -> Self {
        BoundaryCondition {
            kind: BoundaryKind::Neumann,
            robin_coeff: 0.0,
        }
    }
    pub fn robin(coeff: f64) -> Self {
        BoundaryCondition {
            kind: BoundaryKind::Robin,
            robin_coeff: coeff,
        }
    }
}

/// Spatial grid on `[0, length]`.
///
/// Dirichlet grids are vertex-centred with `n_space` interior nodes; Neumann
/// and Robin grids are cell-centred (staggered) with `n_space` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid {
    pub length: f64,
    pub n_space: usize,
    pub spacing: f64,
    pub bc: BoundaryCondition,
}

impl SpaceGrid {
    pub fn new(length: f64, n_space: usize, bc: BoundaryCondition) -> Result<SpaceGrid> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidParameter(format!("length must be positive, got {length}")));
        }
        if n_space == 0 {
            return Err(Error::InvalidParameter("n_space must be at least 1".into()));
        }
        if !bc.robin_coeff.is_finite() {
            return Err(Error::InvalidParameter("robin_coeff must be finite".into()));
        }
        let spacing = match bc.kind {
            BoundaryKind::Dirichlet => length / (n_space as f64 + 1.0),
            BoundaryKind::Neumann | BoundaryKind::Robin => length / n_space as f64,
        };
        Ok(SpaceGrid {
            length,
            n_space,
            spacing,
            bc,
        })
    }

    pub fn positions(&self) -> Vec<f64> {
        let h = self.spacing;
        (0..self.n_space)
            .map(|k| match self.bc.kind {
                BoundaryKind::Dirichlet => (k as f64 + 1.0) * h,
                _ => (k as f64 + 0.5) * h,
            })
            .collect()
    }

    /// Cell faces where the diffusion coefficient is sampled; face `k` sits
    /// left of node `k`, face `n_space` right of the last node.
    pub fn faces(&self) -> Vec<f64> {
        let h = self.spacing;
        (0..=self.n_space)
            .map(|k| match self.bc.kind {
                BoundaryKind::Dirichlet => (k as f64 + 0.5) * h,
                _ => k as f64 * h,
            })
            .collect()
    }
}

/// One-variable profile used to build separable coefficient fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum Shape {
    Constant { value: f64 },
    Gaussian { center: f64, width: f64 },
    /// Indicator of `[lo, hi]`.
    Window { lo: f64, hi: f64 },
    /// `sin^2` bump supported on `[lo, hi]`.
    Bump { lo: f64, hi: f64 },
    Exponential { rate: f64 },
    Affine { intercept: f64, slope: f64 },
    /// `sin(frequency * t)`.
    Sine { frequency: f64 },
}

impl Shape {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Shape::Constant { value } => value,
            Shape::Gaussian { center, width } => {
                let z = (t - center) / width;
                (-0.5 * z * z).exp()
            }
            Shape::Window { lo, hi } => {
                if (lo..=hi).contains(&t) {
                    1.0
                } else {
                    0.0
                }
            }
            Shape::Bump { lo, hi } => {
                if t > lo && t < hi {
                    (std::f64::consts::PI * (t - lo) / (hi - lo)).sin().powi(2)
                } else {
                    0.0
                }
            }
            Shape::Exponential { rate } => (rate * t).exp(),
            Shape::Affine { intercept, slope } => intercept + slope * t,
            Shape::Sine { frequency } => (frequency * t).sin(),
        }
    }
}

/// A closure-backed coefficient, available from the library API only.
#[derive(Clone)]
pub struct CustomField(pub Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>);

impl fmt::Debug for CustomField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomField(..)")
    }
}

impl PartialEq for CustomField {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// Coefficient field `(age, position) -> value`, selected by preset name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum Field {
    Constant {
        value: f64,
    },
    GaussianBump {
        #[serde(default)]
        offset: f64,
        amplitude: f64,
        age_center: f64,
        age_width: f64,
        x_center: f64,
        x_width: f64,
    },
    Separable {
        #[serde(default = "one")]
        scale: f64,
        age: Shape,
        space: Shape,
    },
    #[serde(skip)]
    Custom(CustomField),
}

fn one() -> f64 {
    1.0
}

impl Field {
    pub const PRESETS: &'static [&'static str] = &["constant", "gaussian-bump", "separable"];

    pub fn constant(value: f64) -> Field {
        Field::Constant { value }
    }

    pub fn custom(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Field {
        Field::Custom(CustomField(Arc::new(f)))
    }

    pub fn eval(&self, a: f64, x: f64) -> f64 {
        match self {
            Field::Constant { value } => *value,
            Field::GaussianBump {
                offset,
                amplitude,
                age_center,
                age_width,
                x_center,
                x_width,
            } => {
                let za = (a - age_center) / age_width;
                let zx = (x - x_center) / x_width;
                offset + amplitude * (-0.5 * (za * za + zx * zx)).exp()
            }
            Field::Separable { scale, age, space } => scale * age.eval(a) * space.eval(x),
            Field::Custom(f) => (f.0)(a, x),
        }
    }

    /// Returns the same field plus a constant.
    pub fn shifted(&self, c: f64) -> Field {
        match self {
            Field::Constant { value } => Field::Constant { value: value + c },
            other => {
                let inner = other.clone();
                Field::custom(move |a, x| inner.eval(a, x) + c)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    /// `None` disables diffusion entirely, leaving `A(a) = -diag(mu)`.
    pub diffusion: Option<Field>,
    pub mortality: Field,
    pub birth: Field,
    /// Free-text record of the assumed Hoelder regularity; not enforced.
    pub smoothness_note: String,
    pub positivity: bool,
    pub d_min: f64,
}

impl Coefficients {
    pub fn new(diffusion: Option<Field>, mortality: Field, birth: Field) -> Coefficients {
        Coefficients {
            diffusion,
            mortality,
            birth,
            smoothness_note: "coefficients assumed Hoelder continuous in age".into(),
            positivity: true,
            d_min: DEFAULT_D_MIN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpaceNorm {
    #[default]
    L1Weighted,
    Sup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub space_norm: SpaceNorm,
    /// Extra positive factor on the spatial weights.
    pub weight_scale: f64,
}

impl Default for NormSpec {
    fn default() -> Self {
        NormSpec {
            space_norm: SpaceNorm::L1Weighted,
            weight_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpatialOperator {
    pub age: f64,
    pub matrix: Mat<f64>,
}

/// A function of age with values in the spatial grid space.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeProfile {
    pub values: Vec<Vec<f64>>,
}

impl AgeProfile {
    pub fn zeros(n_nodes: usize, n_space: usize) -> AgeProfile {
        AgeProfile {
            values: vec![vec![0.0; n_space]; n_nodes],
        }
    }

    pub fn from_fn(n_nodes: usize, n_space: usize, f: impl Fn(usize, usize) -> f64) -> AgeProfile {
        AgeProfile {
            values: (0..n_nodes)
                .map(|i| (0..n_space).map(|k| f(i, k)).collect())
                .collect(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len()
    }

    pub fn n_space(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().flatten().for_each(|v| *v *= c);
    }

    pub fn axpy(&mut self, c: f64, other: &AgeProfile) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += c * y;
            }
        }
    }

    pub fn sub(&self, other: &AgeProfile) -> AgeProfile {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn min_entry(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Flattened row-major copy (age major, then space).
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn from_flat(n_space: usize, data: &[f64]) -> AgeProfile {
        AgeProfile {
            values: data.chunks(n_space).map(<[f64]>::to_vec).collect(),
        }
    }
}

/// True iff every entry is at least `-tol`.
pub fn cone_check(psi: &AgeProfile, tol: f64) -> bool {
    psi.values.iter().flatten().all(|&v| v >= -tol)
}

/// Grids, coefficients and norm choice bundled together.
#[derive(Debug, Clone)]
pub struct Model {
    pub age: AgeGrid,
    pub space: SpaceGrid,
    pub coeff: Coefficients,
    pub norm: NormSpec,
}

impl Model {
    pub fn new(age: AgeGrid, space: SpaceGrid, coeff: Coefficients) -> Result<Model> {
        let m = Model {
            age,
            space,
            coeff,
            norm: NormSpec::default(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_norm(mut self, norm: NormSpec) -> Model {
        self.norm = norm;
        self
    }

    /// Same coefficients and lengths on a different grid resolution.
    pub fn refined(&self, n_age: usize, n_space: usize) -> Result<Model> {
        let age = AgeGrid::new(self.age.a_max, n_age)?;
        let space = SpaceGrid::new(self.space.length, n_space, self.space.bc)?;
        Ok(Model::new(age, space, self.coeff.clone())?.with_norm(self.norm))
    }

    pub fn n_space(&self) -> usize {
        self.space.n_space
    }

    pub fn n_nodes(&self) -> usize {
        self.age.len()
    }

    /// Checks finiteness and, in positivity mode, the sign conditions.
    pub fn validate(&self) -> Result<()> {
        if !(self.norm.weight_scale.is_finite() && self.norm.weight_scale > 0.0) {
            return Err(Error::InvalidParameter("weight_scale must be positive".into()));
        }
        let c = &self.coeff;
        if c.positivity && self.space.bc.kind == BoundaryKind::Robin && self.space.bc.robin_coeff < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "robin_coeff = {} must be nonnegative in positivity mode",
                self.space.bc.robin_coeff
            )));
        }
        let xs = self.space.positions();
        for &a in &self.age.nodes {
            for (k, &x) in xs.iter().enumerate() {
                let beta = c.birth.eval(a, x);
                if !beta.is_finite() {
                    return Err(invalid("birth", beta, a, k));
                }
                if c.positivity && beta < 0.0 {
                    return Err(invalid("birth", beta, a, k));
                }
                let mu = c.mortality.eval(a, x);
                if !mu.is_finite() {
                    return Err(invalid("mortality", mu, a, k));
                }
            }
        }
        Ok(())
    }

    pub fn spatial_operator(&self, age: f64) -> Result<SpatialOperator> {
        assemble_spatial_operator(&self.coeff, &self.space, age)
    }

    pub fn mortality_at(&self, age: f64) -> Vec<f64> {
        self.space
            .positions()
            .iter()
            .map(|&x| self.coeff.mortality.eval(age, x))
            .collect()
    }

    pub fn birth_at(&self, age: f64) -> Vec<f64> {
        self.space
            .positions()
            .iter()
            .map(|&x| self.coeff.birth.eval(age, x))
            .collect()
    }

    pub fn space_norm(&self, v: &[f64]) -> f64 {
        match self.norm.space_norm {
            SpaceNorm::L1Weighted => {
                self.space.spacing * self.norm.weight_scale * v.iter().map(|x| x.abs()).sum::<f64>()
            }
            SpaceNorm::Sup => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    /// Operator norm induced by the spatial norm.
    pub fn operator_norm(&self, m: &Mat<f64>) -> f64 {
        match self.norm.space_norm {
            SpaceNorm::L1Weighted => crate::linalg::norm1(m),
            SpaceNorm::Sup => crate::linalg::norm_inf(m),
        }
    }

    pub fn check_profile(&self, psi: &AgeProfile) -> Result<()> {
        if psi.n_nodes() != self.n_nodes() {
            return Err(Error::Dimension {
                context: "age nodes",
                expected: self.n_nodes(),
                found: psi.n_nodes(),
            });
        }
        for v in &psi.values {
            if v.len() != self.n_space() {
                return Err(Error::Dimension {
                    context: "spatial dimension",
                    expected: self.n_space(),
                    found: v.len(),
                });
            }
        }
        Ok(())
    }

    /// The L1-in-age norm of a profile.
    pub fn profile_norm(&self, psi: &AgeProfile) -> Result<f64> {
        self.check_profile(psi)?;
        Ok(psi
            .values
            .iter()
            .zip(&self.age.weights)
            .map(|(v, w)| w * self.space_norm(v))
            .sum())
    }

    pub fn zero_profile(&self) -> AgeProfile {
        AgeProfile::zeros(self.n_nodes(), self.n_space())
    }
}

fn invalid(field: &'static str, value: f64, age: f64, x_index: usize) -> Error {
    Error::InvalidCoefficient {
        field,
        value,
        age,
        x_index,
    }
}

/// Central-difference discretisation of `d/dx(d d/dx .) - mu .` at a fixed age.
pub fn assemble_spatial_operator(coeff: &Coefficients, sgrid: &SpaceGrid, age: f64) -> Result<SpatialOperator> {
    let n = sgrid.n_space;
    let xs = sgrid.positions();
    let mut mu = Vec::with_capacity(n);
    for (k, &x) in xs.iter().enumerate() {
        let v = coeff.mortality.eval(age, x);
        if !v.is_finite() {
            return Err(invalid("mortality", v, age, k));
        }
        mu.push(v);
    }
    let mut m = diffusion_part(coeff, sgrid, age)?;
    for (k, v) in mu.iter().enumerate() {
        m[(k, k)] -= v;
    }
    Ok(SpatialOperator { age, matrix: m })
}

fn diffusion_part(coeff: &Coefficients, sgrid: &SpaceGrid, age: f64) -> Result<Mat<f64>> {
    let n = sgrid.n_space;
    let mut m = Mat::<f64>::zeros(n, n);
    let Some(d) = &coeff.diffusion else {
        return Ok(m);
    };
    let h = sgrid.spacing;
    let faces = sgrid.faces();
    let mut dface = Vec::with_capacity(n + 1);
    for (k, &f) in faces.iter().enumerate() {
        let v = d.eval(age, f);
        let idx = k.min(n - 1);
        if !v.is_finite() || v < coeff.d_min {
            return Err(invalid("diffusion", v, age, idx));
        }
        dface.push(v);
    }
    for k in 0..n {
        let left = dface[k] / (h * h);
        let right = dface[k + 1] / (h * h);
        if k > 0 {
            m[(k, k - 1)] += left;
            m[(k, k)] -= left;
        }
        if k + 1 < n {
            m[(k, k + 1)] += right;
            m[(k, k)] -= right;
        }
    }
    match sgrid.bc.kind {
        BoundaryKind::Dirichlet => {
            m[(0, 0)] -= dface[0] / (h * h);
            m[(n - 1, n - 1)] -= dface[n] / (h * h);
        }
        BoundaryKind::Neumann => {}
        BoundaryKind::Robin => {
            // Flux d*u_x = kappa*u through a half cell: effective transfer
            // coefficient 2 d kappa / (2 d + kappa h).
            let kappa = sgrid.bc.robin_coeff;
            for (row, dv) in [(0, dface[0]), (n - 1, dface[n])] {
                let t = 2.0 * dv * kappa / (2.0 * dv + kappa * h);
                m[(row, row)] -= t / h;
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn coeff(d: f64, mu: f64) -> Coefficients {
        Coefficients::new(Some(Field::constant(d)), Field::constant(mu), Field::constant(0.0))
    }

    #[test]
    fn age_grid_weights_sum_to_a_max() {
        for n in [1, 3, 64, 1000] {
            let g = AgeGrid::new(1.7, n).unwrap();
            let s: f64 = g.weights.iter().sum();
            assert!((s - 1.7).abs() <= 1e-12 * 1.7);
            assert!(g.nodes.windows(2).all(|w| w[1] > w[0]));
            assert_eq!(g.nodes[n], 1.7);
        }
        assert!(AgeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn laplacian_stencil() {
        let s = SpaceGrid::new(4.0, 3, BoundaryCondition::dirichlet()).unwrap();
        assert_eq!(s.spacing, 1.0);
        let op = assemble_spatial_operator(&coeff(1.0, 0.0), &s, 0.0).unwrap();
        let expect = [[-2.0, 1.0, 0.0], [1.0, -2.0, 1.0], [0.0, 1.0, -2.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(op.matrix[(i, j)], expect[i][j]);
            }
        }
    }

    #[test]
    fn mortality_is_diagonal_shift() {
        for bc in [BoundaryCondition::dirichlet(), BoundaryCondition::neumann(), BoundaryCondition::robin(0.7)] {
            let s = SpaceGrid::new(1.3, 6, bc).unwrap();
            let a = assemble_spatial_operator(&coeff(1.0, 0.0), &s, 0.2).unwrap().matrix;
            let b = assemble_spatial_operator(&coeff(1.0, 5.0), &s, 0.2).unwrap().matrix;
            for i in 0..6 {
                for j in 0..6 {
                    let shift = if i == j { 5.0 } else { 0.0 };
                    assert_eq!(b[(i, j)], a[(i, j)] - shift);
                }
            }
        }
    }

    #[test]
    fn neumann_rows_sum_to_zero() {
        let s = SpaceGrid::new(2.0, 7, BoundaryCondition::neumann()).unwrap();
        let c = Coefficients::new(
            Some(Field::custom(|_, x| 1.0 + x * x)),
            Field::constant(0.0),
            Field::constant(0.0),
        );
        let m = assemble_spatial_operator(&c, &s, 0.0).unwrap().matrix;
        for i in 0..7 {
            let row: f64 = (0..7).map(|j| m[(i, j)]).sum();
            assert!(row.abs() < 1e-12);
            for j in 0..7 {
                assert_eq!(m[(i, j)], m[(j, i)]);
                if i != j {
                    assert!(m[(i, j)] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn dirichlet_stencil_is_second_order() {
        let d = 0.7;
        let mut errs = vec![];
        for n in [15usize, 31, 63] {
            let s = SpaceGrid::new(2.0, n, BoundaryCondition::dirichlet()).unwrap();
            let m = assemble_spatial_operator(&coeff(d, 0.0), &s, 0.0).unwrap().matrix;
            let xs = s.positions();
            let u: Vec<f64> = xs.iter().map(|x| (PI * x / 2.0).sin()).collect();
            let au = crate::linalg::mat_vec(&m, &u);
            let err = au
                .iter()
                .zip(&u)
                .map(|(a, u)| (a + (PI / 2.0).powi(2) * d * u).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.9, "{errs:?}");
        }
    }

    #[test]
    fn non_finite_coefficient_names_grid_point() {
        let s = SpaceGrid::new(1.0, 4, BoundaryCondition::dirichlet()).unwrap();
        let c = Coefficients::new(
            Some(Field::constant(1.0)),
            Field::custom(|_, x| if x > 0.5 { f64::NAN } else { 0.0 }),
            Field::constant(0.0),
        );
        match assemble_spatial_operator(&c, &s, 0.25) {
            Err(Error::InvalidCoefficient { field, x_index, age, .. }) => {
                assert_eq!(field, "mortality");
                assert_eq!(x_index, 2);
                assert_eq!(age, 0.25);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn robin_between_neumann_and_dirichlet_like() {
        let s = SpaceGrid::new(1.0, 5, BoundaryCondition::robin(2.0)).unwrap();
        let m = assemble_spatial_operator(&coeff(1.0, 0.0), &s, 0.0).unwrap().matrix;
        let row0: f64 = (0..5).map(|j| m[(0, j)]).sum();
        assert!(row0 < 0.0);
        let row2: f64 = (0..5).map(|j| m[(2, j)]).sum();
        assert!(row2.abs() < 1e-12);
    }

    #[test]
    fn profile_norms() {
        let age = AgeGrid::new(2.0, 4).unwrap();
        let space = SpaceGrid::new(4.0, 3, BoundaryCondition::dirichlet()).unwrap();
        let model = Model::new(age, space, coeff(1.0, 0.0)).unwrap();
        let zero = model.zero_profile();
        assert_eq!(model.profile_norm(&zero).unwrap(), 0.0);
        let v = [1.0, -2.0, 0.5];
        let c = AgeProfile::from_fn(5, 3, |_, k| v[k]);
        let expect = 2.0 * model.space_norm(&v);
        assert!((model.profile_norm(&c).unwrap() - expect).abs() < 1e-14);
        let mut single = model.zero_profile();
        single.values[2] = v.to_vec();
        assert!((model.profile_norm(&single).unwrap() - 0.5 * model.space_norm(&v)).abs() < 1e-15);
        let bad = AgeProfile::zeros(4, 3);
        assert!(matches!(model.profile_norm(&bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cone_tolerance_band() {
        let mut p = AgeProfile::zeros(3, 2);
        assert!(cone_check(&p, DEFAULT_TOL_POS));
        p.values[1][0] = -1e-12;
        assert!(cone_check(&p, DEFAULT_TOL_POS));
        p.values[1][0] = -1.0;
        assert!(!cone_check(&p, DEFAULT_TOL_POS));
    }

    #[test]
    fn negative_birth_rejected_in_positivity_mode() {
        let age = AgeGrid::new(1.0, 4).unwrap();
        let space = SpaceGrid::new(1.0, 2, BoundaryCondition::neumann()).unwrap();
        let mut c = coeff(1.0, 0.0);
        c.birth = Field::constant(-0.1);
        assert!(Model::new(age.clone(), space.clone(), c.clone()).is_err());
        c.positivity = false;
        assert!(Model::new(age, space, c).is_ok());
    }

    #[test]
    fn field_presets_parse() {
        let f: Field = serde_json::from_str(
            r#"{"preset":"separable","scale":2.0,"age":{"shape":"bump","lo":0.2,"hi":0.8},"space":{"shape":"constant","value":1.0}}"#,
        )
        .unwrap();
        assert!((f.eval(0.5, 0.3) - 2.0).abs() < 1e-15);
        assert_eq!(f.eval(0.1, 0.3), 0.0);
    }
}
