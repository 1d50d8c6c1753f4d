//! Straight-line scalar reference evaluator for the network, written
//! independently of the library's matrix code.

#![allow(dead_code)]

use easiernet::data::Targets;
use easiernet::network::{NetworkConfig, NetworkParams, TaskKind};
use easiernet::numerics::{Matrix, RngStream};

pub struct OracleOutput {
    /// Output rows (identity or softmax).
    pub output: Vec<Vec<f64>>,
    /// Every hidden pre-activation, row by row, layer by layer.
    pub pre_activations: Vec<f64>,
}

pub fn oracle_forward(p: &NetworkParams, cfg: &NetworkConfig, x: &Matrix) -> OracleOutput {
    let out_dim = match cfg.task {
        TaskKind::Regression => 1,
        TaskKind::Classification { num_classes } => num_classes,
    };
    let heads = cfg.num_layers - 1;
    let total_alpha: f64 = p.alpha.iter().map(|a| a.abs()).sum();
    let mut output = Vec::new();
    let mut pre_activations = Vec::new();
    for r in 0..x.rows() {
        let mut z: Vec<f64> = (0..cfg.input_dim)
            .map(|i| p.beta[i] * x.get(r, i))
            .collect();
        let mut u = vec![0.0; out_dim];
        for k in 0..heads {
            let coef = if cfg.skip_connections {
                p.alpha[k].abs() / total_alpha
            } else if k == heads - 1 {
                1.0
            } else {
                0.0
            };
            for (o, uo) in u.iter_mut().enumerate() {
                let mut zeta = p.skip_biases[k][o];
                for (i, zi) in z.iter().enumerate() {
                    zeta += zi * p.skip_weights[k].get(i, o);
                }
                *uo += coef * zeta;
            }
            if k + 1 < heads {
                let w = &p.weights[k];
                let next: Vec<f64> = (0..w.cols())
                    .map(|j| {
                        let mut a = p.biases[k][j];
                        for (i, zi) in z.iter().enumerate() {
                            a += zi * w.get(i, j);
                        }
                        pre_activations.push(a);
                        if a > 0.0 {
                            a
                        } else {
                            0.0
                        }
                    })
                    .collect();
                z = next;
            }
        }
        if let TaskKind::Classification { .. } = cfg.task {
            let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = u.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            u = e.into_iter().map(|v| v / s).collect();
        }
        output.push(u);
    }
    OracleOutput {
        output,
        pre_activations,
    }
}

pub fn oracle_loss(
    p: &NetworkParams,
    cfg: &NetworkConfig,
    x: &Matrix,
    y: &Targets,
    w: &[f64],
) -> f64 {
    let out = oracle_forward(p, cfg, x).output;
    let n = x.rows() as f64;
    let total: f64 = match y {
        Targets::Real(v) => out
            .iter()
            .zip(v)
            .zip(w)
            .map(|((o, t), wi)| wi * (o[0] - t).powi(2))
            .sum(),
        Targets::Class { labels, .. } => out
            .iter()
            .zip(labels)
            .zip(w)
            .map(|((o, &l), wi)| -wi * o[l].max(1e-12).ln())
            .sum(),
    };
    total / n
}

/// Parameters with every tensor (biases included) drawn at random and
/// `alpha` of mixed sign, bounded away from zero.
pub fn random_params(cfg: &NetworkConfig, rng: &mut RngStream) -> NetworkParams {
    let mut p = NetworkParams::zeros(cfg);
    for (kind, t) in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = match kind {
                easiernet::network::TensorKind::Alpha => {
                    let m = rng.uniform(0.2, 1.5);
                    if rng.unit() < 0.5 {
                        -m
                    } else {
                        m
                    }
                }
                _ => rng.uniform(-1.0, 1.0),
            };
        }
    }
    p
}

pub fn random_matrix(n: usize, d: usize, rng: &mut RngStream) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap()
}

/// A random network configuration with `d` in 3..=6, `L` in {3, 4},
/// hidden widths at most 5 and the given task.
pub fn random_config(rng: &mut RngStream, classification: bool) -> NetworkConfig {
    let d = 3 + (rng.next_u64() % 4) as usize;
    let hidden = 1 + (rng.next_u64() % 2) as usize;
    let widths = (0..hidden)
        .map(|_| 1 + (rng.next_u64() % 5) as usize)
        .collect();
    let task = if classification {
        TaskKind::Classification {
            num_classes: 2 + (rng.next_u64() % 2) as usize,
        }
    } else {
        TaskKind::Regression
    };
    NetworkConfig::new(d, widths, task).unwrap()
}

pub fn random_targets(cfg: &NetworkConfig, n: usize, rng: &mut RngStream) -> Targets {
    match cfg.task {
        TaskKind::Regression => Targets::Real((0..n).map(|_| rng.standard_normal()).collect()),
        TaskKind::Classification { num_classes } => {
            Targets::classes((0..n).map(|i| i % num_classes).collect(), num_classes)
        }
    }
}

pub struct GradientCheck {
    pub checked: usize,
    pub excluded: usize,
    pub worst_relative_error: f64,
}

/// Floor on the denominator of the relative error, so entries whose true
/// value is ~0 are judged on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-4;
pub const KINK_MARGIN: f64 = 1e-8;

fn relu_pattern(pre: &[f64]) -> Vec<bool> {
    pre.iter().map(|a| *a > 0.0).collect()
}

/// Compares the library gradient with central differences of the oracle
/// loss. Entries whose `±h` probe crosses a ReLU kink, or `alpha` entries
/// within [`KINK_MARGIN`] of zero, are excluded.
pub fn check_gradient(
    p: &NetworkParams,
    cfg: &NetworkConfig,
    x: &Matrix,
    y: &Targets,
    w: &[f64],
    h: f64,
) -> GradientCheck {
    let (_, grad) = easiernet::network::loss_and_gradient(p, cfg, x, y, w).unwrap();
    let base_pre = oracle_forward(p, cfg, x).pre_activations;
    let base_pattern = relu_pattern(&base_pre);
    let near_kink = base_pre.iter().any(|a| a.abs() <= KINK_MARGIN);
    let analytic: Vec<(easiernet::network::TensorKind, Vec<f64>)> = grad
        .tensors()
        .into_iter()
        .map(|(k, t)| (k, t.to_vec()))
        .collect();
    let mut result = GradientCheck {
        checked: 0,
        excluded: 0,
        worst_relative_error: 0.0,
    };
    for (t_idx, (kind, g)) in analytic.iter().enumerate() {
        for (e, &a) in g.iter().enumerate() {
            let value = p.tensors()[t_idx].1[e];
            let probe = |delta: f64| {
                let mut q = p.clone();
                q.tensors_mut()[t_idx].1[e] = value + delta;
                q
            };
            let (plus, minus) = (probe(h), probe(-h));
            let crosses = relu_pattern(&oracle_forward(&plus, cfg, x).pre_activations)
                != base_pattern
                || relu_pattern(&oracle_forward(&minus, cfg, x).pre_activations) != base_pattern;
            let alpha_kink = matches!(kind, easiernet::network::TensorKind::Alpha)
                && value.abs() <= KINK_MARGIN.max(h);
            if crosses || alpha_kink || near_kink {
                result.excluded += 1;
                continue;
            }
            let fd =
                (oracle_loss(&plus, cfg, x, y, w) - oracle_loss(&minus, cfg, x, y, w)) / (2.0 * h);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(RELATIVE_FLOOR);
            result.checked += 1;
            result.worst_relative_error = result.worst_relative_error.max(rel);
        }
    }
    result
}
