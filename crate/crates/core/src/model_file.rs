//! Versioned JSON model files. Reals are written in shortest round-trip
//! decimal form, so a reloaded model predicts bit-identically.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::StandardizationStats;
use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::network::{NetworkConfig, NetworkParams};
use crate::optimizer::PenaltySpec;

pub const FORMAT_NAME: &str = "easiernet-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub config: NetworkConfig,
    pub penalty: PenaltySpec,
    pub preprocessing: StandardizationStats,
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// Label strings by class index; empty for regression.
    pub class_names: Vec<String>,
    pub master_seed: u64,
    pub member_seeds: Vec<u64>,
    pub members: Vec<NetworkParams>,
}

impl ModelFile {
    pub fn new(
        model: &EnsembleModel,
        feature_names: Vec<String>,
        target_name: String,
        class_names: Vec<String>,
    ) -> Self {
        ModelFile {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            config: model.config.clone(),
            penalty: model.penalty,
            preprocessing: model.preprocessing.clone(),
            feature_names,
            target_name,
            class_names,
            master_seed: model.master_seed,
            member_seeds: model.member_seeds.clone(),
            members: model.members.clone(),
        }
    }

    pub fn to_model(&self) -> EnsembleModel {
        EnsembleModel {
            members: self.members.clone(),
            config: self.config.clone(),
            penalty: self.penalty,
            preprocessing: self.preprocessing.clone(),
            member_seeds: self.member_seeds.clone(),
            master_seed: self.master_seed,
            reports: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT_NAME {
            return Err(Error::ModelFile(format!(
                "unknown format '{}'",
                self.format
            )));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::ModelFile(format!(
                "unsupported version {} (this build reads version {FORMAT_VERSION})",
                self.version
            )));
        }
        if self.feature_names.len() != self.config.input_dim {
            return Err(Error::ModelFile(
                "feature names do not match the input width".into(),
            ));
        }
        if let crate::network::TaskKind::Classification { num_classes } = self.config.task {
            if self.class_names.len() != num_classes {
                return Err(Error::ModelFile(
                    "class names do not match the class count".into(),
                ));
            }
        }
        self.to_model()
            .validate()
            .map_err(|e| Error::ModelFile(format!("inconsistent model: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        file.validate()?;
        Ok(file)
    }
}
