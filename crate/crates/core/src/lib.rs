//! Causal effect estimation with proxy variables: a variational autoencoder
//! over a latent confounder (CEVAE), logistic and TARnet baselines, data
//! generators, benchmark loaders and evaluation metrics.
//!
//! ```
//! use cevae_core::datagen::{gen_toy, ToyConfig};
//! use cevae_core::{split, CevaeConfig, CevaeModel, LatentKind, PredictOptions, SplitSpec, TrainConfig};
//!
//! let ds = gen_toy(&ToyConfig::new(400, 1)).unwrap().dataset;
//! let parts = split(&ds, &SplitSpec::new(0.8, 0.2, 0.0).with_seed(1, 0)).unwrap();
//! let cfg = CevaeConfig { latent: LatentKind::Binary, latent_dim: 1, hidden_layers: 1, width: 10, ..Default::default() };
//! let mut model = CevaeModel::new(cfg, &parts.train).unwrap();
//! let tc = TrainConfig { max_epochs: 3, ..Default::default() };
//! model.train(&parts.train, &parts.validation, &tc).unwrap();
//! let est = model.estimate_effects(&ds, &PredictOptions { samples: 10, seed: 1, workers: 1 }).unwrap();
//! assert!(est.ate.is_finite());
//! ```

pub mod baselines;
pub mod cevae;
pub mod data;
pub mod datagen;
pub mod error;
pub mod estimate;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod train;

pub use error::{Error, Result};
pub use cevae::{CevaeConfig, CevaeModel, LatentKind, PredictOptions};
pub use data::{split, Dataset, SplitSpec, Splits};
pub use estimate::EstimateReport;
pub use metrics::MetricReport;
pub use train::{TrainConfig, TrainReport};
