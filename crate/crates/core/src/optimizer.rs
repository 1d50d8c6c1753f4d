//! Two-phase training: Adam on the penalized objective over shuffled
//! minibatches, then full-batch proximal gradient descent whose
//! soft-thresholding step produces exact zeros.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{contract, Error, Result};
use crate::network::{
    init_params, loss_and_gradient, penalized_objective, penalty_value, NetworkConfig,
    NetworkParams, TaskKind, TensorKind,
};
use crate::numerics::RngStream;

/// Maximum number of step halvings per proximal iteration.
pub const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyGroup {
    Lambda1,
    Lambda2,
    Unpenalized,
}

/// The two L1 penalty levels. `lambda1` acts on the input filter and the
/// input skip head; `lambda2` on every hidden weight matrix and the deeper
/// skip heads. Biases are penalized only for classification, in the group
/// of their sibling weight matrix. `alpha` is never penalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl PenaltySpec {
    pub fn new(lambda1: f64, lambda2: f64) -> Self {
        PenaltySpec { lambda1, lambda2 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0)
            || !self.lambda1.is_finite()
            || !self.lambda2.is_finite()
        {
            return Err(contract(format!(
                "penalties must be finite and non-negative, got lambda1 = {}, lambda2 = {}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }

    pub fn group(&self, kind: TensorKind, task: TaskKind) -> PenaltyGroup {
        let biases = task.is_classification();
        match kind {
            TensorKind::Beta | TensorKind::SkipWeight(0) => PenaltyGroup::Lambda1,
            TensorKind::SkipBias(0) if biases => PenaltyGroup::Lambda1,
            TensorKind::Weight(_) | TensorKind::SkipWeight(_) => PenaltyGroup::Lambda2,
            TensorKind::Bias(_) | TensorKind::SkipBias(_) if biases => PenaltyGroup::Lambda2,
            _ => PenaltyGroup::Unpenalized,
        }
    }

    /// Penalty level applied to tensor `kind`; zero when unpenalized.
    pub fn level(&self, kind: TensorKind, task: TaskKind) -> f64 {
        match self.group(kind, task) {
            PenaltyGroup::Lambda1 => self.lambda1,
            PenaltyGroup::Lambda2 => self.lambda2,
            PenaltyGroup::Unpenalized => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Minibatch size as a fraction of the training set.
    pub minibatch_fraction: f64,
    pub max_epochs: usize,
    /// Consecutive stalled epochs before stopping.
    pub patience_epochs: usize,
    /// An epoch stalls when its mean objective improves by less than this
    /// relative amount over the previous epoch.
    pub rel_tol: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            minibatch_fraction: 1.0 / 3.0,
            max_epochs: 2000,
            patience_epochs: 10,
            rel_tol: 1e-4,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.minibatch_fraction > 0.0 && self.minibatch_fraction <= 1.0) {
            return Err(contract("minibatch_fraction must lie in (0, 1]"));
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(contract("rel_tol must be positive"));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate < 0.0
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(contract("invalid Adam hyperparameters"));
        }
        Ok(())
    }

    pub fn batch_size(&self, n: usize) -> usize {
        ((n as f64 * self.minibatch_fraction).ceil() as usize).clamp(1, n.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxConfig {
    pub initial_step: f64,
    pub backtrack_factor: f64,
    pub max_iters: usize,
    /// Stop once the largest parameter change of an iteration falls below this.
    pub param_tol: f64,
}

impl Default for ProxConfig {
    fn default() -> Self {
        ProxConfig {
            initial_step: 1.0,
            backtrack_factor: 0.5,
            max_iters: 500,
            param_tol: 1e-6,
        }
    }
}

impl ProxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(contract("backtrack_factor must lie in (0, 1)"));
        }
        if self.initial_step.is_nan() || self.initial_step <= 0.0 {
            return Err(contract("initial_step must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamOutcome {
    pub epochs: usize,
    pub converged: bool,
    pub last_epoch_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxOutcome {
    pub iterations: usize,
    pub converged: bool,
    /// Penalized objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs_run: usize,
    pub adam_converged: bool,
    pub prox_iters_run: usize,
    pub prox_converged: bool,
    pub final_objective: f64,
    pub objective_trace: Vec<f64>,
}

/// `S_lam(theta)`: shrink toward zero by `lam`, exactly zero inside `[-lam, lam]`.
#[inline]
pub fn soft_threshold(theta: f64, lam: f64) -> f64 {
    if theta > lam {
        theta - lam
    } else if theta < -lam {
        theta + lam
    } else {
        0.0
    }
}

fn check_dataset(config: &NetworkConfig, dataset: &Dataset) -> Result<()> {
    if dataset.n() == 0 {
        return Err(contract("training needs a nonempty dataset"));
    }
    if dataset.d() != config.input_dim {
        return Err(Error::DimensionMismatch {
            op: "fit",
            expected: format!("{} features", config.input_dim),
            found: format!("{} features", dataset.d()),
        });
    }
    if dataset.task() != config.task {
        return Err(contract(format!(
            "dataset task {:?} does not match network task {:?}",
            dataset.task(),
            config.task
        )));
    }
    Ok(())
}

/// Adam on the penalized objective, with the L1 terms entering through the
/// subgradient `lambda * sign(theta)` (zero at zero).
pub fn adam_phase(
    params: NetworkParams,
    config: &NetworkConfig,
    dataset: &Dataset,
    penalty: &PenaltySpec,
    adam: &AdamConfig,
    rng: &mut RngStream,
) -> Result<(NetworkParams, AdamOutcome)> {
    check_dataset(config, dataset)?;
    penalty.validate()?;
    adam.validate()?;
    let mut params = params;
    let n = dataset.n();
    let batch = adam.batch_size(n);
    let mut first = NetworkParams::zeros(config);
    let mut second = NetworkParams::zeros(config);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0i32;
    let mut previous: Option<f64> = None;
    let mut stalled = 0usize;
    let mut outcome = AdamOutcome {
        epochs: 0,
        converged: false,
        last_epoch_objective: f64::NAN,
    };

    for epoch in 0..adam.max_epochs {
        rng.shuffle(&mut order);
        let mut objective_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            let x = dataset.x.select_rows(chunk);
            let y = dataset.targets.select(chunk);
            let w: Vec<f64> = chunk.iter().map(|&i| dataset.obs_weights[i]).collect();
            let (loss, mut grad) = loss_and_gradient(&params, config, &x, &y, &w)?;
            objective_sum += loss + penalty_value(&params, config, penalty);
            batches += 1;

            for ((kind, g), (_, p)) in grad.tensors_mut().into_iter().zip(params.tensors()) {
                let lam = penalty.level(kind, config.task);
                if lam > 0.0 {
                    for (gi, &pi) in g.iter_mut().zip(p) {
                        if pi != 0.0 {
                            *gi += lam * pi.signum();
                        }
                    }
                }
            }

            step += 1;
            let bias1 = 1.0 - adam.beta1.powi(step);
            let bias2 = 1.0 - adam.beta2.powi(step);
            let tensors = params
                .tensors_mut()
                .into_iter()
                .zip(grad.tensors())
                .zip(first.tensors_mut().into_iter().zip(second.tensors_mut()));
            for (((_, p), (_, g)), ((_, m), (_, v))) in tensors {
                for i in 0..p.len() {
                    m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g[i];
                    v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * g[i] * g[i];
                    let m_hat = m[i] / bias1;
                    let v_hat = v[i] / bias2;
                    p[i] -= adam.learning_rate * m_hat / (v_hat.sqrt() + adam.eps);
                }
            }
        }
        let mean = objective_sum / batches as f64;
        if !mean.is_finite() {
            return Err(Error::DegenerateModel(format!(
                "Adam objective diverged at epoch {epoch}"
            )));
        }
        outcome.epochs = epoch + 1;
        outcome.last_epoch_objective = mean;
        if let Some(prev) = previous {
            let improvement = (prev - mean) / prev.abs().max(f64::MIN_POSITIVE);
            if improvement < adam.rel_tol {
                stalled += 1;
            } else {
                stalled = 0;
            }
        }
        previous = Some(mean);
        if stalled >= adam.patience_epochs {
            outcome.converged = true;
            break;
        }
    }
    log::debug!(
        "adam: {} epochs, converged = {}",
        outcome.epochs,
        outcome.converged
    );
    Ok((params, outcome))
}

/// One proximal step of size `step` from `params` along `-grad`.
fn prox_step(
    params: &NetworkParams,
    grad: &NetworkParams,
    step: f64,
    config: &NetworkConfig,
    penalty: &PenaltySpec,
) -> NetworkParams {
    let mut next = params.clone();
    for ((kind, p), (_, g)) in next.tensors_mut().into_iter().zip(grad.tensors()) {
        let threshold = penalty.level(kind, config.task) * step;
        for (pi, gi) in p.iter_mut().zip(g) {
            let moved = *pi - step * gi;
            *pi = if threshold > 0.0 {
                soft_threshold(moved, threshold)
            } else {
                moved
            };
        }
    }
    next
}

fn max_abs_change(a: &NetworkParams, b: &NetworkParams) -> f64 {
    a.tensors()
        .iter()
        .zip(b.tensors().iter())
        .flat_map(|((_, x), (_, y))| x.iter().zip(y.iter()).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

/// Full-batch proximal gradient descent. Each iteration starts from
/// `initial_step` and shrinks it by `backtrack_factor` until the penalized
/// objective does not increase.
pub fn prox_phase(
    params: NetworkParams,
    config: &NetworkConfig,
    dataset: &Dataset,
    penalty: &PenaltySpec,
    prox: &ProxConfig,
) -> Result<(NetworkParams, ProxOutcome)> {
    check_dataset(config, dataset)?;
    penalty.validate()?;
    prox.validate()?;
    let (x, y, w) = (&dataset.x, &dataset.targets, dataset.obs_weights.as_slice());
    let mut params = params;
    let mut current = penalized_objective(&params, config, x, y, w, penalty)?;
    let mut trace = vec![current];
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 0..prox.max_iters {
        let (_, grad) = loss_and_gradient(&params, config, x, y, w)?;
        let mut step = prox.initial_step;
        let mut halvings = 0;
        let (candidate, value) = loop {
            let candidate = prox_step(&params, &grad, step, config, penalty);
            // an all-zero alpha leaves the output undefined; treat as a rejected step
            let value = match penalized_objective(&candidate, config, x, y, w, penalty) {
                Ok(v) => v,
                Err(Error::DegenerateModel(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if value <= current {
                break (candidate, value);
            }
            halvings += 1;
            if halvings > MAX_HALVINGS {
                return Err(Error::StepSizeUnderflow {
                    iteration,
                    halvings,
                });
            }
            step *= prox.backtrack_factor;
        };
        let change = max_abs_change(&params, &candidate);
        params = candidate;
        current = value;
        trace.push(value);
        iterations = iteration + 1;
        if change < prox.param_tol {
            converged = true;
            break;
        }
    }
    log::debug!("prox: {iterations} iterations, converged = {converged}, objective = {current}");
    Ok((
        params,
        ProxOutcome {
            iterations,
            converged,
            objective_trace: trace,
        },
    ))
}

/// Initializes from `seed`, runs Adam, then proximal gradient descent.
pub fn fit_sier_net(
    config: &NetworkConfig,
    dataset: &Dataset,
    penalty: &PenaltySpec,
    adam: &AdamConfig,
    prox: &ProxConfig,
    seed: u64,
) -> Result<(NetworkParams, FitReport)> {
    config.validate()?;
    let mut rng = RngStream::new(seed);
    let init = init_params(config, &mut rng);
    let (params, adam_out) = adam_phase(init, config, dataset, penalty, adam, &mut rng)?;
    let (params, prox_out) = prox_phase(params, config, dataset, penalty, prox)?;
    Ok((
        params,
        FitReport {
            epochs_run: adam_out.epochs,
            adam_converged: adam_out.converged,
            prox_iters_run: prox_out.iterations,
            prox_converged: prox_out.converged,
            final_objective: *prox_out
                .objective_trace
                .last()
                .expect("trace starts nonempty"),
            objective_trace: prox_out.objective_trace,
        },
    ))
}
