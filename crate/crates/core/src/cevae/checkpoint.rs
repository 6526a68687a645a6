use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{CevaeConfig, CevaeModel, Networks};
use crate::data::{Standardizer, VarKind};
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const CHECKPOINT_FORMAT: &str = "cevae-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config: CevaeConfig,
    pub covariate_kinds: Vec<VarKind>,
    pub outcome_kind: VarKind,
    pub trained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    header: CheckpointHeader,
    standardizer: Standardizer,
    networks: Networks,
    params: ParamStore,
}

impl CevaeModel {
    /// Serialises the model as JSON with a versioned header.
    pub fn to_checkpoint(&self) -> Result<String> {
        let ck = Checkpoint {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.into(),
                version: CHECKPOINT_VERSION,
                config: self.config,
                covariate_kinds: self.covariate_kinds.clone(),
                outcome_kind: self.outcome_kind,
                trained: self.trained,
            },
            standardizer: self.standardizer.clone(),
            networks: self.nets.clone(),
            params: self.store.clone(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let head: serde_json::Value = serde_json::from_str(text)?;
        let header = head
            .get("header")
            .ok_or_else(|| Error::Checkpoint("missing header".into()))?;
        if header.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Checkpoint("not a CEVAE checkpoint".into()));
        }
        match header.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
            Some(v) => return Err(Error::Checkpoint(format!("unsupported checkpoint version {v}"))),
            None => return Err(Error::Checkpoint("missing checkpoint version".into())),
        }
        let ck: Checkpoint = serde_json::from_value(head)?;
        // rebuild to check that the stored parameters fit the declared architecture
        let template = CevaeModel::with_layout(
            ck.header.config,
            ck.header.covariate_kinds.clone(),
            ck.header.outcome_kind,
            ck.standardizer.clone(),
        )?;
        if template.nets != ck.networks {
            return Err(Error::Checkpoint("network layout does not match the config".into()));
        }
        let mut store = template.store.clone();
        store
            .copy_from(&ck.params)
            .map_err(|e| Error::Checkpoint(format!("parameters do not match the config: {e}")))?;
        Ok(CevaeModel {
            store,
            trained: ck.header.trained,
            ..template
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&fs::read_to_string(path)?)
    }
}
