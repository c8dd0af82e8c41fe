//! Multi-patch age-of-infection epidemic toolkit: exact stochastic simulator,
//! large-population limit solver, and age-structured PDE engine.

pub mod error;
pub mod io;
pub mod limit;
pub mod migration;
pub mod model;
pub mod pde;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod validation;

pub use error::{Error, Result};
pub use model::{
    presets, AgeProfile, AgeShape, DurationDistribution, DurationKind, InfectivityLaw,
    InitialCondition, ModelConfig, Profile, Scaler,
};
