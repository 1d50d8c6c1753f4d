//! K-fold cross-validation over a `(lambda1, lambda2)` grid with small
//! tuning ensembles, followed by a full-data refit at the chosen penalty.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{class_weight_table, Dataset, Targets};
use crate::ensemble::{fit_ensemble, predict_standardized, EnsembleModel};
use crate::error::{contract, Result};
use crate::network::{loss, NetworkConfig};
use crate::numerics::{derive_seed, RngStream};
use crate::optimizer::{AdamConfig, PenaltySpec, ProxConfig};

/// Candidates whose mean validation loss is within this of the best are tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

const FOLD_STREAM: u64 = u64::MAX;
const TUNING_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: usize,
    pub lambda1_grid: Vec<f64>,
    pub lambda2_grid: Vec<f64>,
    pub tuning_members: usize,
    pub final_members: usize,
    pub master_seed: u64,
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

impl Default for CvPlan {
    fn default() -> Self {
        CvPlan {
            folds: 4,
            lambda1_grid: log_grid(1e-4, 1.0, 5),
            lambda2_grid: log_grid(1e-4, 1.0, 5),
            tuning_members: 10,
            final_members: 20,
            master_seed: 0,
        }
    }
}

impl CvPlan {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(contract("cross-validation needs at least 2 folds"));
        }
        if self.lambda1_grid.is_empty() || self.lambda2_grid.is_empty() {
            return Err(contract("penalty grids must be nonempty"));
        }
        if self.tuning_members == 0 || self.final_members == 0 {
            return Err(contract("ensemble sizes must be at least 1"));
        }
        for &(l1, l2) in &self.candidates() {
            PenaltySpec::new(l1, l2).validate()?;
        }
        Ok(())
    }

    /// Grid product, `lambda1` major.
    pub fn candidates(&self) -> Vec<(f64, f64)> {
        self.lambda1_grid
            .iter()
            .flat_map(|&a| self.lambda2_grid.iter().map(move |&b| (a, b)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub penalty: PenaltySpec,
    pub fold_losses: Vec<f64>,
    pub mean_loss: f64,
    /// Sample standard deviation of the fold losses over `sqrt(K)`.
    pub std_error: f64,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub scores: Vec<CandidateScore>,
    pub chosen: PenaltySpec,
    pub model: EnsembleModel,
}

/// Shuffles `0..n` and cuts it into `k` folds; the first `n % k` folds hold
/// one extra index.
pub fn kfold_split(n: usize, k: usize, rng: &mut RngStream) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(contract(format!("cannot split {n} rows into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldView {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Training and validation row sets for each fold.
pub fn fold_views(folds: &[Vec<usize>]) -> Vec<FoldView> {
    (0..folds.len())
        .map(|f| FoldView {
            train: folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, rows)| rows.iter().copied())
                .collect(),
            validation: folds[f].clone(),
        })
        .collect()
}

/// Validation rows weighted with the training rows' class table.
fn validation_set(dataset: &Dataset, train: &Dataset, rows: &[usize]) -> Result<Dataset> {
    let mut val = dataset.select(rows);
    if let (
        Targets::Class {
            labels,
            num_classes,
        },
        Targets::Class {
            labels: train_labels,
            ..
        },
    ) = (&val.targets, &train.targets)
    {
        let table = class_weight_table(train_labels, *num_classes)?;
        val.obs_weights = labels.iter().map(|&l| table[l]).collect();
    }
    Ok(val)
}

/// Unpenalized validation loss of one tuning ensemble, with the validation
/// rows standardized by the training fold's statistics.
#[allow(clippy::too_many_arguments)]
fn fold_loss(
    config: &NetworkConfig,
    dataset: &Dataset,
    view: &FoldView,
    penalty: &PenaltySpec,
    adam: &AdamConfig,
    prox: &ProxConfig,
    members: usize,
    seed: u64,
) -> Result<f64> {
    let train = dataset.subset(&view.train)?;
    let model = fit_ensemble(config, &train, penalty, adam, prox, members, seed)?;
    let val = model
        .preprocessing
        .apply(&validation_set(dataset, &train, &view.validation)?)?;
    let pred = predict_standardized(&model, &val.x)?;
    loss(&pred, &val.targets, &val.obs_weights)
}

/// Index of the best score: lowest mean loss, ties within
/// [`TIE_TOLERANCE`] broken toward larger `lambda1`, then larger `lambda2`.
pub fn choose_candidate(scores: &[CandidateScore]) -> Option<usize> {
    let best = scores
        .iter()
        .map(|s| s.mean_loss)
        .fold(f64::INFINITY, f64::min);
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.mean_loss <= best + TIE_TOLERANCE)
        .max_by(|(_, a), (_, b)| {
            a.penalty
                .lambda1
                .total_cmp(&b.penalty.lambda1)
                .then(a.penalty.lambda2.total_cmp(&b.penalty.lambda2))
        })
        .map(|(i, _)| i)
}

fn score(penalty: PenaltySpec, fold_losses: Vec<f64>) -> CandidateScore {
    let k = fold_losses.len() as f64;
    let mean_loss = fold_losses.iter().sum::<f64>() / k;
    let var = fold_losses
        .iter()
        .map(|l| (l - mean_loss).powi(2))
        .sum::<f64>()
        / (k - 1.0);
    CandidateScore {
        penalty,
        fold_losses,
        mean_loss,
        std_error: (var / k).sqrt(),
    }
}

/// Scores every grid candidate by K-fold validation loss, then refits a
/// `final_members` ensemble on all rows at the chosen candidate. Every
/// candidate sees the same folds and the same member seeds per fold.
pub fn cross_validate(
    plan: &CvPlan,
    config: &NetworkConfig,
    dataset: &Dataset,
    adam: &AdamConfig,
    prox: &ProxConfig,
) -> Result<CvResult> {
    plan.validate()?;
    let mut rng = RngStream::new(derive_seed(plan.master_seed, FOLD_STREAM));
    let views = fold_views(&kfold_split(dataset.n(), plan.folds, &mut rng)?);
    let tuning_master = derive_seed(plan.master_seed, TUNING_STREAM);
    let candidates = plan.candidates();
    let cells: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..views.len()).map(move |f| (c, f)))
        .collect();
    let losses = cells
        .par_iter()
        .map(|&(c, f)| {
            let (l1, l2) = candidates[c];
            let seed = derive_seed(tuning_master, f as u64);
            let penalty = PenaltySpec::new(l1, l2);
            fold_loss(
                config,
                dataset,
                &views[f],
                &penalty,
                adam,
                prox,
                plan.tuning_members,
                seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<CandidateScore> = candidates
        .iter()
        .zip(losses.chunks(views.len()))
        .map(|(&(l1, l2), fold_losses)| score(PenaltySpec::new(l1, l2), fold_losses.to_vec()))
        .collect();
    for s in &scores {
        log::info!(
            "lambda1 = {:e}, lambda2 = {:e}: validation loss {:.6} (se {:.6})",
            s.penalty.lambda1,
            s.penalty.lambda2,
            s.mean_loss,
            s.std_error
        );
    }
    let chosen = scores[choose_candidate(&scores).expect("grid is nonempty")].penalty;
    let model = fit_ensemble(
        config,
        dataset,
        &chosen,
        adam,
        prox,
        plan.final_members,
        plan.master_seed,
    )?;
    Ok(CvResult {
        scores,
        chosen,
        model,
    })
}
