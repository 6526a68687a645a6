//! Reverse-mode differentiation, dense networks, densities and the Adamax optimiser.

pub mod adamax;
pub mod dense;
pub mod dist;
pub mod params;
pub mod tape;

pub use adamax::{AdamaxConfig, AdamaxState};
pub use dense::{forward_dense, Activation, DenseNet, InitScale};
pub use dist::{sample_gaussian_reparam, Dist};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Matrix, Tape, Var};
