//! Ensembles of independently trained networks. Members see the full
//! training set and differ only through their seeds; predictions are
//! arithmetic means of member outputs.

use rayon::prelude::*;

use crate::data::{standardize, Dataset, StandardizationStats};
use crate::diagnostics::support_of;
use crate::error::{contract, Result};
use crate::network::{forward, NetworkConfig, NetworkParams, Prediction};
use crate::numerics::{derive_seed, Matrix};
use crate::optimizer::{fit_sier_net, AdamConfig, FitReport, PenaltySpec, ProxConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<NetworkParams>,
    pub config: NetworkConfig,
    pub penalty: PenaltySpec,
    /// Statistics of the training data; members operate on standardized inputs.
    pub preprocessing: StandardizationStats,
    pub member_seeds: Vec<u64>,
    pub master_seed: u64,
    /// Per-member training reports; empty for models loaded from disk.
    pub reports: Vec<FitReport>,
}

impl EnsembleModel {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.members.is_empty() {
            return Err(contract("an ensemble needs at least one member"));
        }
        if self.member_seeds.len() != self.members.len() {
            return Err(contract("one seed per ensemble member is required"));
        }
        if self.preprocessing.features.len() != self.config.input_dim {
            return Err(contract(
                "standardization statistics do not match the input width",
            ));
        }
        self.penalty.validate()?;
        self.members
            .iter()
            .try_for_each(|m| m.validate(&self.config))
    }
}

/// Seed of member `b`: `derive_seed(master_seed, b)`.
pub fn member_seeds(master_seed: u64, size: usize) -> Vec<u64> {
    (0..size as u64)
        .map(|b| derive_seed(master_seed, b))
        .collect()
}

/// Standardizes `dataset`, then fits `size` members in parallel on all of it.
pub fn fit_ensemble(
    config: &NetworkConfig,
    dataset: &Dataset,
    penalty: &PenaltySpec,
    adam: &AdamConfig,
    prox: &ProxConfig,
    size: usize,
    master_seed: u64,
) -> Result<EnsembleModel> {
    if size == 0 {
        return Err(contract("ensemble size must be at least 1"));
    }
    config.validate()?;
    let (scaled, preprocessing) = standardize(dataset)?;
    let seeds = member_seeds(master_seed, size);
    let fits = seeds
        .par_iter()
        .map(|&seed| fit_sier_net(config, &scaled, penalty, adam, prox, seed))
        .collect::<Result<Vec<_>>>()?;
    let (members, reports) = fits.into_iter().unzip();
    Ok(EnsembleModel {
        members,
        config: config.clone(),
        penalty: *penalty,
        preprocessing,
        member_seeds: seeds,
        master_seed,
        reports,
    })
}

/// Mean member output on inputs that are already standardized.
pub fn predict_standardized(model: &EnsembleModel, x: &Matrix) -> Result<Prediction> {
    let mut sum = Matrix::zeros(x.rows(), model.config.output_dim());
    for member in &model.members {
        sum.add_scaled(&forward(member, &model.config, x)?.values, 1.0);
    }
    let b = model.members.len() as f64;
    Ok(Prediction {
        values: sum.map(|v| v / b),
    })
}

/// Mean member output on raw inputs. Regression outputs stay on the
/// standardized target scale; classification outputs are probabilities.
pub fn predict_ensemble(model: &EnsembleModel, x: &Matrix) -> Result<Prediction> {
    let scaled = model.preprocessing.apply_features(x)?;
    predict_standardized(model, &scaled)
}

/// Like [`predict_ensemble`], with regression outputs mapped back to the
/// original target units.
pub fn predict_original_scale(model: &EnsembleModel, x: &Matrix) -> Result<Prediction> {
    let mut pred = predict_ensemble(model, x)?;
    if !model.config.task.is_classification() {
        let stats = &model.preprocessing;
        pred.values = pred.values.map(|v| stats.invert_target(v));
    }
    Ok(pred)
}

/// Fraction of members whose support contains each input.
pub fn selection_rates(model: &EnsembleModel) -> Vec<f64> {
    let mut counts = vec![0usize; model.config.input_dim];
    for member in &model.members {
        for i in support_of(member, &model.config) {
            counts[i] += 1;
        }
    }
    let b = model.members.len() as f64;
    counts.into_iter().map(|c| c as f64 / b).collect()
}
