//! Sparse-input hierarchical network: parameters, forward pass, losses and
//! analytic gradients.
//!
//! Layers are indexed from 0 in code. Layer 0 is the input filter
//! `z_0 = beta ⊙ x`; layers `1..L-2` are ReLU hidden layers; every non-output
//! layer `k` has a skip head `zeta_k = z_k W'_k + b'_k` of output width. The
//! network output is `phi_out(sum_k |alpha_k| / sum|alpha| * zeta_k)`, with
//! `phi_out` the identity for regression and a row softmax for classification.

use serde::{Deserialize, Serialize};

use crate::data::Targets;
use crate::error::{contract, Error, Result};
use crate::numerics::{matmul, matmul_nt, matmul_tn, relu, softmax_rows, Matrix, RngStream};
use crate::optimizer::{PenaltyGroup, PenaltySpec};

/// Probabilities are clamped here before taking logs in the classification loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification { num_classes: usize },
}

impl TaskKind {
    pub fn output_dim(&self) -> usize {
        match self {
            TaskKind::Regression => 1,
            TaskKind::Classification { num_classes } => *num_classes,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, TaskKind::Classification { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    /// Total layer count `L`, counting the input and output layers.
    pub num_layers: usize,
    /// Widths of the `L - 2` hidden layers.
    pub hidden_widths: Vec<usize>,
    pub task: TaskKind,
    pub skip_connections: bool,
}

impl NetworkConfig {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, task: TaskKind) -> Result<Self> {
        let cfg = NetworkConfig {
            input_dim,
            num_layers: hidden_widths.len() + 2,
            hidden_widths,
            task,
            skip_connections: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `layers` hidden layers of equal `width`.
    pub fn uniform(input_dim: usize, layers: usize, width: usize, task: TaskKind) -> Result<Self> {
        NetworkConfig::new(input_dim, vec![width; layers], task)
    }

    pub fn with_skip_connections(mut self, enabled: bool) -> Self {
        self.skip_connections = enabled;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(contract("input_dim must be at least 1"));
        }
        if self.num_layers < 2 {
            return Err(contract("a network needs at least 2 layers"));
        }
        if self.hidden_widths.len() != self.num_layers - 2 {
            return Err(contract(format!(
                "{} layers need {} hidden widths, got {}",
                self.num_layers,
                self.num_layers - 2,
                self.hidden_widths.len()
            )));
        }
        if self.hidden_widths.contains(&0) {
            return Err(contract("hidden widths must be at least 1"));
        }
        if let TaskKind::Classification { num_classes } = self.task {
            if num_classes < 2 {
                return Err(contract("classification needs at least 2 classes"));
            }
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.task.output_dim()
    }

    /// Number of non-output layers (`L - 1`), i.e. the number of skip heads.
    pub fn num_heads(&self) -> usize {
        self.num_layers - 1
    }

    /// Width of non-output layer `k` (0 = inputs).
    pub fn width(&self, k: usize) -> usize {
        if k == 0 {
            self.input_dim
        } else {
            self.hidden_widths[k - 1]
        }
    }
}

/// Identifies one parameter tensor. Indices are 0-based layer indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorKind {
    Beta,
    Weight(usize),
    Bias(usize),
    SkipWeight(usize),
    SkipBias(usize),
    Alpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub beta: Vec<f64>,
    /// `W_k`, shape `width(k) x width(k+1)`, for `k = 0..L-3`.
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    /// `W'_k`, shape `width(k) x output_dim`, for `k = 0..L-2`.
    pub skip_weights: Vec<Matrix>,
    pub skip_biases: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
}

impl NetworkParams {
    /// All-zero parameters shaped for `config`.
    pub fn zeros(config: &NetworkConfig) -> Self {
        let out = config.output_dim();
        let hidden = config.num_layers - 2;
        NetworkParams {
            beta: vec![0.0; config.input_dim],
            weights: (0..hidden)
                .map(|k| Matrix::zeros(config.width(k), config.width(k + 1)))
                .collect(),
            biases: (0..hidden)
                .map(|k| vec![0.0; config.width(k + 1)])
                .collect(),
            skip_weights: (0..config.num_heads())
                .map(|k| Matrix::zeros(config.width(k), out))
                .collect(),
            skip_biases: (0..config.num_heads()).map(|_| vec![0.0; out]).collect(),
            alpha: vec![0.0; config.num_heads()],
        }
    }

    /// Every tensor in canonical order.
    pub fn tensors(&self) -> Vec<(TensorKind, &[f64])> {
        let mut out: Vec<(TensorKind, &[f64])> = vec![(TensorKind::Beta, &self.beta)];
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((TensorKind::Weight(k), w.as_slice()));
            out.push((TensorKind::Bias(k), b));
        }
        for (k, (w, b)) in self.skip_weights.iter().zip(&self.skip_biases).enumerate() {
            out.push((TensorKind::SkipWeight(k), w.as_slice()));
            out.push((TensorKind::SkipBias(k), b));
        }
        out.push((TensorKind::Alpha, &self.alpha));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorKind, &mut [f64])> {
        let mut out: Vec<(TensorKind, &mut [f64])> = vec![(TensorKind::Beta, &mut self.beta)];
        for (k, (w, b)) in self
            .weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .enumerate()
        {
            out.push((TensorKind::Weight(k), w.as_mut_slice()));
            out.push((TensorKind::Bias(k), b));
        }
        for (k, (w, b)) in self
            .skip_weights
            .iter_mut()
            .zip(self.skip_biases.iter_mut())
            .enumerate()
        {
            out.push((TensorKind::SkipWeight(k), w.as_mut_slice()));
            out.push((TensorKind::SkipBias(k), b));
        }
        out.push((TensorKind::Alpha, &mut self.alpha));
        out
    }

    pub fn num_entries(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Checks tensor shapes against `config` and finiteness of every entry.
    pub fn validate(&self, config: &NetworkConfig) -> Result<()> {
        let expect = NetworkParams::zeros(config);
        let shapes_ok = self.beta.len() == expect.beta.len()
            && self.weights.len() == expect.weights.len()
            && self.biases.len() == expect.biases.len()
            && self.skip_weights.len() == expect.skip_weights.len()
            && self.skip_biases.len() == expect.skip_biases.len()
            && self.alpha.len() == expect.alpha.len()
            && self
                .weights
                .iter()
                .zip(&expect.weights)
                .all(|(a, b)| a.shape() == b.shape())
            && self
                .biases
                .iter()
                .zip(&expect.biases)
                .all(|(a, b)| a.len() == b.len())
            && self
                .skip_weights
                .iter()
                .zip(&expect.skip_weights)
                .all(|(a, b)| a.shape() == b.shape())
            && self
                .skip_biases
                .iter()
                .zip(&expect.skip_biases)
                .all(|(a, b)| a.len() == b.len());
        if !shapes_ok {
            return Err(Error::DimensionMismatch {
                op: "NetworkParams::validate",
                expected: format!("parameters for {config:?}"),
                found: "differently shaped tensors".into(),
            });
        }
        if self
            .tensors()
            .iter()
            .any(|(_, t)| t.iter().any(|v| !v.is_finite()))
        {
            return Err(contract("parameters must be finite"));
        }
        Ok(())
    }
}

/// Random initialization: `beta = 1`, `alpha = 1`, zero biases, and weights
/// drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` with `fan_in` the source
/// layer width. Draw order is hidden weights by layer, then skip weights.
pub fn init_params(config: &NetworkConfig, rng: &mut RngStream) -> NetworkParams {
    let mut params = NetworkParams::zeros(config);
    params.beta.iter_mut().for_each(|b| *b = 1.0);
    params.alpha.iter_mut().for_each(|a| *a = 1.0);
    for (k, w) in params.weights.iter_mut().enumerate() {
        let bound = 1.0 / (config.width(k) as f64).sqrt();
        w.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.uniform(-bound, bound));
    }
    for (k, w) in params.skip_weights.iter_mut().enumerate() {
        let bound = 1.0 / (config.width(k) as f64).sqrt();
        w.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.uniform(-bound, bound));
    }
    params
}

/// Network output for a batch; classification rows are probability vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub values: Matrix,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `z_k` for each non-output layer.
    pub activations: Vec<Matrix>,
    /// Pre-activations `z_k W_k + b_k` feeding hidden layer `k + 1`.
    pub pre_activations: Vec<Matrix>,
    /// Skip heads `zeta_k`.
    pub heads: Vec<Matrix>,
    /// Output pre-activation `u`.
    pub combined: Matrix,
    pub output: Matrix,
}

fn check_inputs(params: &NetworkParams, config: &NetworkConfig, x: &Matrix) -> Result<()> {
    if x.cols() != config.input_dim {
        return Err(Error::DimensionMismatch {
            op: "forward",
            expected: format!("{} input columns", config.input_dim),
            found: format!("{} columns", x.cols()),
        });
    }
    params.validate(config)?;
    if config.skip_connections && params.alpha.iter().all(|a| *a == 0.0) {
        return Err(Error::DegenerateModel(
            "all skip-connection factors are zero; the output weighting is undefined".into(),
        ));
    }
    Ok(())
}

/// Normalized head weights `|alpha_k| / sum |alpha|`, or a one-hot on the
/// last head when skip connections are disabled.
pub fn head_weights(params: &NetworkParams, config: &NetworkConfig) -> Vec<f64> {
    let heads = config.num_heads();
    if !config.skip_connections {
        let mut w = vec![0.0; heads];
        w[heads - 1] = 1.0;
        return w;
    }
    let total: f64 = params.alpha.iter().map(|a| a.abs()).sum();
    params.alpha.iter().map(|a| a.abs() / total).collect()
}

pub fn forward_trace(
    params: &NetworkParams,
    config: &NetworkConfig,
    x: &Matrix,
) -> Result<ForwardTrace> {
    check_inputs(params, config, x)?;
    let mut z0 = x.clone();
    for r in 0..z0.rows() {
        for (v, b) in z0.row_mut(r).iter_mut().zip(&params.beta) {
            *v *= b;
        }
    }
    let mut activations = vec![z0];
    let mut pre_activations = Vec::with_capacity(params.weights.len());
    for (w, b) in params.weights.iter().zip(&params.biases) {
        let mut a = matmul(activations.last().expect("input layer"), w)?;
        a.add_row_broadcast(b);
        activations.push(relu(&a));
        pre_activations.push(a);
    }
    let mut heads = Vec::with_capacity(config.num_heads());
    for (z, (w, b)) in activations
        .iter()
        .zip(params.skip_weights.iter().zip(&params.skip_biases))
    {
        let mut zeta = matmul(z, w)?;
        zeta.add_row_broadcast(b);
        heads.push(zeta);
    }
    let weights = head_weights(params, config);
    let mut combined = Matrix::zeros(x.rows(), config.output_dim());
    for (zeta, &c) in heads.iter().zip(&weights) {
        if c != 0.0 {
            combined.add_scaled(zeta, c);
        }
    }
    let output = match config.task {
        TaskKind::Regression => combined.clone(),
        TaskKind::Classification { .. } => softmax_rows(&combined),
    };
    Ok(ForwardTrace {
        activations,
        pre_activations,
        heads,
        combined,
        output,
    })
}

pub fn forward(params: &NetworkParams, config: &NetworkConfig, x: &Matrix) -> Result<Prediction> {
    Ok(Prediction {
        values: forward_trace(params, config, x)?.output,
    })
}

fn check_loss_inputs(pred: &Prediction, y: &Targets, weights: &[f64]) -> Result<()> {
    let n = pred.values.rows();
    if y.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch {
            op: "loss",
            expected: format!("{n} targets and weights"),
            found: format!("{} targets, {} weights", y.len(), weights.len()),
        });
    }
    if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
        return Err(contract("observation weights must be non-negative"));
    }
    if n == 0 {
        return Err(contract("loss over an empty batch"));
    }
    Ok(())
}

/// Weighted mean loss: squared error for regression, negative log
/// likelihood (probabilities clamped at [`PROB_FLOOR`]) for classification.
pub fn loss(pred: &Prediction, y: &Targets, weights: &[f64]) -> Result<f64> {
    check_loss_inputs(pred, y, weights)?;
    let n = pred.values.rows();
    let total: f64 = match y {
        Targets::Real(values) => {
            if pred.values.cols() != 1 {
                return Err(contract("regression targets need a single output column"));
            }
            (0..n)
                .map(|i| {
                    let r = pred.values.get(i, 0) - values[i];
                    weights[i] * r * r
                })
                .sum()
        }
        Targets::Class { labels, .. } => {
            let mut sum = 0.0;
            for i in 0..n {
                let label = labels[i];
                if label >= pred.values.cols() {
                    return Err(contract(format!(
                        "label {label} outside the {} output classes",
                        pred.values.cols()
                    )));
                }
                sum += weights[i] * -(pred.values.get(i, label).max(PROB_FLOOR)).ln();
            }
            sum
        }
    };
    Ok(total / n as f64)
}

/// Loss value plus its exact gradient with respect to every parameter.
///
/// ReLU and `|alpha|` use a zero subgradient at 0. The classification
/// gradient is that of the unclamped log likelihood.
pub fn loss_and_gradient(
    params: &NetworkParams,
    config: &NetworkConfig,
    x: &Matrix,
    y: &Targets,
    weights: &[f64],
) -> Result<(f64, NetworkParams)> {
    let trace = forward_trace(params, config, x)?;
    let pred = Prediction {
        values: trace.output.clone(),
    };
    let value = loss(&pred, y, weights)?;
    let n = x.rows();
    let nf = n as f64;

    // adjoint of the output pre-activation
    let mut d_combined = Matrix::zeros(n, config.output_dim());
    match y {
        Targets::Real(values) => {
            for i in 0..n {
                let r = trace.output.get(i, 0) - values[i];
                d_combined.set(i, 0, 2.0 * weights[i] * r / nf);
            }
        }
        Targets::Class { labels, .. } => {
            for i in 0..n {
                let scale = weights[i] / nf;
                for c in 0..config.output_dim() {
                    let target = if labels[i] == c { 1.0 } else { 0.0 };
                    d_combined.set(i, c, scale * (trace.output.get(i, c) - target));
                }
            }
        }
    }

    let mut grad = NetworkParams::zeros(config);
    let head_w = head_weights(params, config);

    if config.skip_connections {
        let total: f64 = params.alpha.iter().map(|a| a.abs()).sum();
        for (k, zeta) in trace.heads.iter().enumerate() {
            let a = params.alpha[k];
            if a == 0.0 {
                continue;
            }
            let inner: f64 = d_combined
                .as_slice()
                .iter()
                .zip(zeta.as_slice().iter().zip(trace.combined.as_slice()))
                .map(|(d, (z, u))| d * (z - u))
                .sum();
            grad.alpha[k] = a.signum() * inner / total;
        }
    }

    // walk layers from the top down, accumulating d z_k
    let num_heads = config.num_heads();
    let mut d_act: Option<Matrix> = None;
    for k in (0..num_heads).rev() {
        let z = &trace.activations[k];
        let mut dz = d_act
            .take()
            .unwrap_or_else(|| Matrix::zeros(z.rows(), z.cols()));
        if head_w[k] != 0.0 {
            let mut d_head = d_combined.clone();
            d_head
                .as_mut_slice()
                .iter_mut()
                .for_each(|v| *v *= head_w[k]);
            grad.skip_weights[k] = matmul_tn(z, &d_head)?;
            grad.skip_biases[k] = d_head.column_sums();
            dz.add_scaled(&matmul_nt(&d_head, &params.skip_weights[k])?, 1.0);
        }
        if k == 0 {
            for r in 0..n {
                for (i, (g, xv)) in grad.beta.iter_mut().zip(x.row(r)).enumerate() {
                    *g += dz.get(r, i) * xv;
                }
            }
        } else {
            // z_k = relu(a_{k-1}); a_{k-1} = z_{k-1} W_{k-1} + b_{k-1}
            let pre = &trace.pre_activations[k - 1];
            let mut d_pre = dz;
            for (d, a) in d_pre.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            grad.weights[k - 1] = matmul_tn(&trace.activations[k - 1], &d_pre)?;
            grad.biases[k - 1] = d_pre.column_sums();
            d_act = Some(matmul_nt(&d_pre, &params.weights[k - 1])?);
        }
    }
    Ok((value, grad))
}

pub fn gradient(
    params: &NetworkParams,
    config: &NetworkConfig,
    x: &Matrix,
    y: &Targets,
    weights: &[f64],
) -> Result<NetworkParams> {
    Ok(loss_and_gradient(params, config, x, y, weights)?.1)
}

/// Weighted L1 penalty of `params` under `penalty`.
pub fn penalty_value(params: &NetworkParams, config: &NetworkConfig, penalty: &PenaltySpec) -> f64 {
    params
        .tensors()
        .into_iter()
        .map(|(kind, t)| {
            let lam = match penalty.group(kind, config.task) {
                PenaltyGroup::Lambda1 => penalty.lambda1,
                PenaltyGroup::Lambda2 => penalty.lambda2,
                PenaltyGroup::Unpenalized => return 0.0,
            };
            if lam == 0.0 {
                0.0
            } else {
                lam * t.iter().map(|v| v.abs()).sum::<f64>()
            }
        })
        .sum()
}

pub fn penalized_objective(
    params: &NetworkParams,
    config: &NetworkConfig,
    x: &Matrix,
    y: &Targets,
    weights: &[f64],
    penalty: &PenaltySpec,
) -> Result<f64> {
    penalty.validate()?;
    let pred = forward(params, config, x)?;
    Ok(loss(&pred, y, weights)? + penalty_value(params, config, penalty))
}
