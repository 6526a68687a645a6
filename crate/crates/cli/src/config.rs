//! Declarative experiment files.

use std::fmt;
use std::path::{Path, PathBuf};

use cevae_core::baselines::{GlmConfig, TarnetConfig};
use cevae_core::cevae::{CevaeConfig, LatentKind};
use cevae_core::data::SplitSpec;
use cevae_core::nn::AdamaxConfig;
use cevae_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Toy,
    Twins,
    SyntheticTwins,
    Ihdp,
    Jobs,
    OracleSweep,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Toy => "toy",
            ExperimentKind::Twins => "twins",
            ExperimentKind::SyntheticTwins => "synthetic-twins",
            ExperimentKind::Ihdp => "ihdp",
            ExperimentKind::Jobs => "jobs",
            ExperimentKind::OracleSweep => "oracle-sweep",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Naive,
    Lr1,
    Lr2,
    Tarnet,
    Cevae,
}

/// One estimator column of an experiment. Unset fields fall back to the
/// `[tarnet]` / `[cevae]` sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    /// Name used in result files; defaults to a name derived from `kind`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<LatentKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        Self {
            kind,
            label: None,
            hidden_layers: None,
            width: None,
            init_scale: None,
            latent: None,
            latent_dim: None,
        }
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match self.kind {
            EstimatorKind::Naive => "naive".into(),
            EstimatorKind::Lr1 => "LR1".into(),
            EstimatorKind::Lr2 => "LR2".into(),
            EstimatorKind::Tarnet => match self.hidden_layers {
                Some(nh) => format!("TARnet-nh{nh}"),
                None => "TARnet".into(),
            },
            EstimatorKind::Cevae => match self.latent {
                Some(LatentKind::Binary) => "CEVAE-bin".into(),
                Some(LatentKind::Continuous) => "CEVAE-cont".into(),
                None => "CEVAE".into(),
            },
        }
    }

    pub fn tarnet(&self, base: &TarnetSection, seed: u64) -> TarnetConfig {
        TarnetConfig {
            hidden_layers: self.hidden_layers.unwrap_or(base.hidden_layers),
            width: self.width.unwrap_or(base.width),
            init_scale: self.init_scale.unwrap_or(base.init_scale),
            seed,
        }
    }

    pub fn cevae(&self, base: &CevaeSection, seed: u64) -> CevaeConfig {
        CevaeConfig {
            latent_dim: self.latent_dim.unwrap_or(base.latent_dim),
            latent: self.latent.unwrap_or(base.latent),
            hidden_layers: self.hidden_layers.unwrap_or(base.hidden_layers),
            width: self.width.unwrap_or(base.width),
            init_scale: self.init_scale.unwrap_or(base.init_scale),
            auxiliary: base.auxiliary,
            seed,
            ..CevaeConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    /// Units per generated dataset (toy, synthetic-twins).
    pub sample_sizes: Vec<usize>,
    /// Proxy flip probabilities (twins, synthetic-twins).
    pub flip_probs: Vec<f64>,
    /// IHDP replications `1..=replications`.
    pub replications: usize,
    /// Jobs folds `1..=folds`.
    pub folds: usize,
    /// Points per axis of the oracle grid over `[0, 1]`.
    pub rho_points: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            sample_sizes: vec![1000],
            flip_probs: vec![0.05, 0.2, 0.35, 0.5],
            replications: 100,
            folds: 10,
            rho_points: 21,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train: 0.63,
            validation: 0.27,
            test: 0.1,
        }
    }
}

impl SplitSection {
    pub fn spec(&self, seed: u64, replication: u64) -> SplitSpec {
        SplitSpec::new(self.train, self.validation, self.test).with_seed(seed, replication)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub decay: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Posterior draws averaged per prediction.
    pub posterior_samples: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.adamax.lr,
            decay: t.adamax.decay,
            weight_decay: t.adamax.weight_decay,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            posterior_samples: t.samples,
        }
    }
}

impl TrainSection {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            adamax: AdamaxConfig {
                lr: self.lr,
                decay: self.decay,
                weight_decay: self.weight_decay,
                ..AdamaxConfig::default()
            },
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            samples: self.posterior_samples,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CevaeSection {
    pub latent: LatentKind,
    pub latent_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub init_scale: f64,
    pub auxiliary: bool,
}

impl Default for CevaeSection {
    fn default() -> Self {
        let c = CevaeConfig::default();
        Self {
            latent: c.latent,
            latent_dim: c.latent_dim,
            hidden_layers: c.hidden_layers,
            width: c.width,
            init_scale: c.init_scale,
            auxiliary: c.auxiliary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TarnetSection {
    pub hidden_layers: usize,
    pub width: usize,
    pub init_scale: f64,
}

impl Default for TarnetSection {
    fn default() -> Self {
        let t = TarnetConfig::default();
        Self {
            hidden_layers: t.hidden_layers,
            width: t.width,
            init_scale: t.init_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// External data root for twins, ihdp and jobs; falls back to `CEVAE_DATA_DIR`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub cevae: CevaeSection,
    #[serde(default)]
    pub tarnet: TarnetSection,
    #[serde(default)]
    pub glm: GlmConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            estimators: Vec::new(),
            seeds: default_seeds(),
            output_dir: default_output(),
            data_dir: None,
            grid: Grid::default(),
            split: SplitSection::default(),
            train: TrainSection::default(),
            cevae: CevaeSection::default(),
            tarnet: TarnetSection::default(),
            glm: GlmConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.experiment != ExperimentKind::OracleSweep && self.estimators.is_empty() {
            return bad("estimator list is empty");
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty");
        }
        let mut labels: Vec<String> = self.estimators.iter().map(EstimatorSpec::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("estimator labels must be unique");
        }
        match self.experiment {
            ExperimentKind::Toy if self.grid.sample_sizes.is_empty() => bad("grid.sample_sizes is empty"),
            ExperimentKind::SyntheticTwins if self.grid.sample_sizes.is_empty() || self.grid.flip_probs.is_empty() => {
                bad("grid.sample_sizes and grid.flip_probs must be non-empty")
            }
            ExperimentKind::Twins if self.grid.flip_probs.is_empty() => bad("grid.flip_probs is empty"),
            ExperimentKind::Ihdp if self.grid.replications == 0 => bad("grid.replications must be positive"),
            ExperimentKind::Jobs if self.grid.folds == 0 => bad("grid.folds must be positive"),
            ExperimentKind::OracleSweep if self.grid.rho_points < 2 => bad("grid.rho_points must be at least 2"),
            _ => Ok(()),
        }?;
        if self.grid.flip_probs.iter().any(|p| !(0.0..=0.5).contains(p)) {
            return bad("flip probabilities must lie in [0, 0.5]");
        }
        self.split.spec(0, 0).counts(1000).map_err(|e| CliError::Config(e.to_string()))?;
        if self.train.posterior_samples == 0 {
            return bad("train.posterior_samples must be positive");
        }
        Ok(())
    }

    /// Short digest of everything that affects results; the output directory is excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.data_dir = None;
        let json = serde_json::to_string(&c).expect("config serialises");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}
