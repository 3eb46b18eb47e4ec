//! Overdamped Langevin dynamics on the unit torus accelerated by random measure-preserving
//! shear drifts, together with PDE, spectral and Monte-Carlo diagnostics of mixing.

pub mod bounds;
pub mod discrete;
pub mod error;
pub mod flows;
pub mod gibbs;
pub mod metrics;
pub mod pde;
pub mod potential;
pub mod rng;
pub mod sampler;
pub mod spline;
pub mod torus;
pub mod velocity;

pub use error::{Error, Result};
pub use gibbs::GibbsMeasure;
pub use potential::{Potential, PotentialKind, Profile1d};
pub use torus::{wrap, TorusPoint};
