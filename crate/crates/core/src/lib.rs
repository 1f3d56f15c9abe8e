//! Age-structured diffusion: evolution operators, semigroup, resolvent and
//! spectral analysis on a grid-aligned discretisation.

pub mod error;
pub mod evolution;
pub mod linalg;
pub mod model;
pub mod presets;
pub mod resolvent;
pub mod semigroup;
pub mod spectrum;
pub mod verify;

pub use error::{Error, Result};
