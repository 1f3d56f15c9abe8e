//! Named model instances used by the verification suite and the CLI.

use rand::Rng;

use crate::error::Result;
use crate::model::{AgeGrid, BoundaryCondition, Coefficients, Field, Model, Shape, SpaceGrid};
use crate::semigroup::{Kernel, PerturbationKind, PerturbationSpec};

/// One spatial degree of freedom, no diffusion, constant rates.
pub fn scalar_constant(beta0: f64, mu0: f64, a_max: f64, n_age: usize) -> Result<Model> {
    let age = AgeGrid::new(a_max, n_age)?;
    let space = SpaceGrid::new(2.0, 1, BoundaryCondition::dirichlet())?;
    Model::new(
        age,
        space,
        Coefficients::new(None, Field::constant(mu0), Field::constant(beta0)),
    )
}

/// Dirichlet diffusion with a `sin^2` fertility window on ages `[0.2, 0.8]`.
///
/// The heat kernel of the Dirichlet problem is strictly positive, so
/// `b(a) Pi(a, 0)` is strongly positive for ages in the window.
pub fn strong_positivity(n_age: usize, n_space: usize) -> Result<Model> {
    let age = AgeGrid::new(1.0, n_age)?;
    let space = SpaceGrid::new(1.0, n_space, BoundaryCondition::dirichlet())?;
    let birth = Field::Separable {
        scale: 20.0,
        age: Shape::Bump { lo: 0.2, hi: 0.8 },
        space: Shape::Constant { value: 1.0 },
    };
    Model::new(
        age,
        space,
        Coefficients::new(Some(Field::constant(0.05)), Field::constant(0.0), birth),
    )
}

pub const STRONG_POSITIVITY_SUBSTEPS: usize = 8;

/// Positive age-kernel perturbation for the strong-positivity preset.
pub fn age_kernel(gamma: f64) -> PerturbationSpec {
    PerturbationSpec {
        kind: PerturbationKind::AgeKernel,
        gamma,
        m: Shape::Gaussian { center: 0.5, width: 0.3 },
        k: Kernel::Gaussian { width: 0.25 },
        positive: true,
    }
}

/// No-flux diffusion that varies in space, with age-constant rates
/// `beta = 1`, `mu = 0` on `[0, 2]`; the slowest spatial mode is constant.
pub fn separable_neumann(n_age: usize, n_space: usize) -> Result<Model> {
    let age = AgeGrid::new(2.0, n_age)?;
    let space = SpaceGrid::new(1.0, n_space, BoundaryCondition::neumann())?;
    let diffusion = Field::Separable {
        scale: 0.1,
        age: Shape::Constant { value: 1.0 },
        space: Shape::Gaussian { center: 0.5, width: 0.3 },
    };
    Model::new(
        age,
        space,
        Coefficients::new(Some(diffusion), Field::constant(0.0), Field::constant(1.0)),
    )
}

/// A random instance with positive coefficients.
pub fn random_positive<R: Rng>(rng: &mut R, max_age_nodes: usize, max_space: usize) -> Result<Model> {
    let a_max = rng.gen_range(0.5..2.0);
    let n_age = rng.gen_range(4..=max_age_nodes.max(4));
    let n_space = rng.gen_range(1..=max_space.max(1));
    let bc = match rng.gen_range(0..3) {
        0 => BoundaryCondition::dirichlet(),
        1 => BoundaryCondition::neumann(),
        _ => BoundaryCondition::robin(rng.gen_range(0.0..2.0)),
    };
    let length = rng.gen_range(0.5..2.0);
    let age = AgeGrid::new(a_max, n_age)?;
    let space = SpaceGrid::new(length, n_space, bc)?;
    let diffusion = Field::GaussianBump {
        offset: rng.gen_range(0.01..0.2),
        amplitude: rng.gen_range(0.0..0.2),
        age_center: rng.gen_range(0.0..a_max),
        age_width: rng.gen_range(0.2..1.0),
        x_center: rng.gen_range(0.0..length),
        x_width: rng.gen_range(0.2..1.0),
    };
    let mortality = Field::GaussianBump {
        offset: rng.gen_range(0.0..0.5),
        amplitude: rng.gen_range(0.0..1.0),
        age_center: rng.gen_range(0.0..a_max),
        age_width: rng.gen_range(0.2..1.0),
        x_center: rng.gen_range(0.0..length),
        x_width: rng.gen_range(0.2..1.0),
    };
    let birth = Field::Separable {
        scale: rng.gen_range(0.5..4.0),
        age: Shape::Bump {
            lo: 0.0,
            hi: a_max * rng.gen_range(0.6..1.0),
        },
        space: Shape::Affine {
            intercept: 1.0,
            slope: rng.gen_range(-0.4..0.4) / length,
        },
    };
    Model::new(age, space, Coefficients::new(Some(diffusion), mortality, birth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{positivity_substeps, EvolutionCache};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn presets_build() {
        for m in [
            scalar_constant(1.0, 0.0, 2.0, 16).unwrap(),
            strong_positivity(16, 8).unwrap(),
            separable_neumann(16, 6).unwrap(),
        ] {
            assert!(EvolutionCache::build(&m, 4).unwrap().min_step_entry() >= 0.0);
        }
    }

    #[test]
    fn random_instances_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = random_positive(&mut rng, 32, 8).unwrap();
            let q = positivity_substeps(&m).unwrap().max(4);
            let c = EvolutionCache::build(&m, q).unwrap();
            assert!(c.min_step_entry() >= -1e-15);
        }
    }
}
