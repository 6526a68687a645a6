//! Causal effect variational autoencoder.

mod checkpoint;
mod model;
mod predict;

pub use checkpoint::{CheckpointHeader, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use model::{CevaeConfig, CevaeModel, LatentKind, Networks, Terms, MAX_BINARY_LATENT};
pub use predict::{CevaePredictor, PredictOptions};

#[cfg(test)]
mod tests;
