//! Introspection of fitted networks: effective support by nonzero-weight
//! reachability, per-layer variance contributions and structure summaries.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::network::{forward_trace, NetworkConfig, NetworkParams};
use crate::numerics::{population_variance, Matrix};

/// Whether each skip head can reach the output.
fn live_heads(params: &NetworkParams, config: &NetworkConfig) -> Vec<bool> {
    let heads = config.num_heads();
    if config.skip_connections {
        params.alpha.iter().map(|a| *a != 0.0).collect()
    } else {
        (0..heads).map(|k| k + 1 == heads).collect()
    }
}

fn row_nonzero(m: &Matrix, r: usize) -> bool {
    m.row(r).iter().any(|v| *v != 0.0)
}

/// `to_output[k][i]`: node `i` of layer `k` has a nonzero-weight path to a live head.
fn backward_reach(params: &NetworkParams, config: &NetworkConfig) -> Vec<Vec<bool>> {
    let live = live_heads(params, config);
    let heads = config.num_heads();
    let mut reach: Vec<Vec<bool>> = vec![Vec::new(); heads];
    for k in (0..heads).rev() {
        let skip = &params.skip_weights[k];
        reach[k] = (0..config.width(k))
            .map(|i| {
                let via_head = live[k] && row_nonzero(skip, i);
                let via_next = k + 1 < heads && {
                    let w = &params.weights[k];
                    w.row(i)
                        .iter()
                        .zip(&reach[k + 1])
                        .any(|(v, r)| *v != 0.0 && *r)
                };
                via_head || via_next
            })
            .collect();
    }
    reach
}

/// `from_inputs[k][j]`: node `j` of layer `k` is fed, through nonzero
/// weights, by some input in `sources`.
fn forward_reach(
    params: &NetworkParams,
    config: &NetworkConfig,
    sources: &[bool],
) -> Vec<Vec<bool>> {
    let mut reach = vec![sources.to_vec()];
    for (k, w) in params.weights.iter().enumerate() {
        let prev = &reach[k];
        let next = (0..config.width(k + 1))
            .map(|j| (0..w.rows()).any(|i| prev[i] && w.get(i, j) != 0.0))
            .collect();
        reach.push(next);
    }
    reach
}

/// Input indices (0-based, ascending) the output can depend on: `beta_i != 0`
/// and a path of nonzero weights to a head with nonzero `alpha`. This
/// over-approximates functional dependence since ReLU saturation is ignored.
pub fn support_of(params: &NetworkParams, config: &NetworkConfig) -> Vec<usize> {
    let to_output = backward_reach(params, config);
    (0..config.input_dim)
        .filter(|&i| params.beta[i] != 0.0 && to_output[0][i])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceContributions {
    /// One ratio per skip head, in layer order.
    pub values: Vec<f64>,
    /// Set when the combined output pre-activation is constant over the rows;
    /// `values` are then all zero.
    pub constant_total: bool,
}

fn mean_column_variance(m: &Matrix, scale: f64) -> f64 {
    let cols = m.cols();
    (0..cols)
        .map(|c| population_variance(&m.column(c).iter().map(|v| v * scale).collect::<Vec<_>>()))
        .sum::<f64>()
        / cols as f64
}

/// `Var(|alpha_k| zeta_k) / Var(sum_k |alpha_k| zeta_k)` over the rows of `x`,
/// with variances averaged over output dimensions. Ratios need not sum to 1.
pub fn variance_contribution(
    params: &NetworkParams,
    config: &NetworkConfig,
    x: &Matrix,
) -> Result<VarianceContributions> {
    if x.rows() < 2 {
        return Err(contract("variance contributions need at least two rows"));
    }
    let trace = forward_trace(params, config, x)?;
    let scales: Vec<f64> = if config.skip_connections {
        params.alpha.iter().map(|a| a.abs()).collect()
    } else {
        live_heads(params, config)
            .iter()
            .map(|l| if *l { 1.0 } else { 0.0 })
            .collect()
    };
    let mut total = Matrix::zeros(x.rows(), config.output_dim());
    for (zeta, &s) in trace.heads.iter().zip(&scales) {
        total.add_scaled(zeta, s);
    }
    let denom = mean_column_variance(&total, 1.0);
    if denom == 0.0 {
        return Ok(VarianceContributions {
            values: vec![0.0; scales.len()],
            constant_total: true,
        });
    }
    let values = trace
        .heads
        .iter()
        .zip(&scales)
        .map(|(zeta, &s)| mean_column_variance(zeta, s) / denom)
        .collect();
    Ok(VarianceContributions {
        values,
        constant_total: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSummary {
    pub support: Vec<usize>,
    pub support_size: usize,
    /// Active nodes in each hidden layer.
    pub active_nodes: Vec<usize>,
    pub active_layer_count: usize,
    /// Zero when no hidden layer is active.
    pub avg_hidden_nodes_per_active_layer: f64,
    /// Present when data was supplied.
    pub variance_contributions: Option<VarianceContributions>,
}

/// A hidden node is active when it is fed by a supported input and has a
/// path to a live head; a hidden layer is active when it has an active node.
pub fn structure_summary(
    params: &NetworkParams,
    config: &NetworkConfig,
    x: Option<&Matrix>,
) -> Result<StructureSummary> {
    params.validate(config)?;
    let support = support_of(params, config);
    let mut sources = vec![false; config.input_dim];
    support.iter().for_each(|&i| sources[i] = true);
    let from_inputs = forward_reach(params, config, &sources);
    let to_output = backward_reach(params, config);
    let active_nodes: Vec<usize> = (1..config.num_heads())
        .map(|k| {
            from_inputs[k]
                .iter()
                .zip(&to_output[k])
                .filter(|(a, b)| **a && **b)
                .count()
        })
        .collect();
    let active_layer_count = active_nodes.iter().filter(|c| **c > 0).count();
    let avg_hidden_nodes_per_active_layer = if active_layer_count == 0 {
        0.0
    } else {
        active_nodes.iter().sum::<usize>() as f64 / active_layer_count as f64
    };
    let variance_contributions = x
        .map(|x| variance_contribution(params, config, x))
        .transpose()?;
    Ok(StructureSummary {
        support_size: support.len(),
        support,
        active_nodes,
        active_layer_count,
        avg_hidden_nodes_per_active_layer,
        variance_contributions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{forward, init_params, TaskKind};
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn dense(d: usize, widths: Vec<usize>, seed: u64) -> (NetworkConfig, NetworkParams) {
        let cfg = NetworkConfig::new(d, widths, TaskKind::Regression).unwrap();
        let p = init_params(&cfg, &mut RngStream::new(seed));
        (cfg, p)
    }

    fn random_x(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = RngStream::new(seed);
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap()
    }

    #[test]
    fn zero_beta_drops_variable() {
        let (cfg, mut p) = dense(3, vec![], 1);
        p.beta = vec![1.0, 0.0, 1.0];
        assert_eq!(support_of(&p, &cfg), vec![0, 2]);
    }

    #[test]
    fn variable_without_outgoing_edges_is_dropped() {
        let (cfg, mut p) = dense(3, vec![4], 2);
        p.skip_weights[0]
            .row_mut(1)
            .iter_mut()
            .for_each(|v| *v = 0.0);
        p.weights[0].row_mut(1).iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(support_of(&p, &cfg), vec![0, 2]);
    }

    #[test]
    fn zero_alpha_head_does_not_count() {
        let (cfg, mut p) = dense(2, vec![3], 3);
        // variable 0 reaches only the input head, which is switched off
        p.weights[0].row_mut(0).iter_mut().for_each(|v| *v = 0.0);
        p.alpha = vec![0.0, 1.0];
        assert_eq!(support_of(&p, &cfg), vec![1]);
    }

    #[test]
    fn excluded_variables_are_functionally_irrelevant() {
        // d=3, two hidden layers of width 2, with edges knocked out so that
        // variable 1 has no route to a live head
        let (cfg, mut p) = dense(3, vec![2, 2], 4);
        p.skip_weights[0]
            .row_mut(1)
            .iter_mut()
            .for_each(|v| *v = 0.0);
        p.weights[0].set(1, 0, 0.0);
        p.skip_weights[1].set(1, 0, 0.0);
        p.weights[1].row_mut(1).iter_mut().for_each(|v| *v = 0.0);
        p.biases[0] = vec![0.3, -0.1];
        p.biases[1] = vec![0.2, 0.4];
        let support = support_of(&p, &cfg);
        assert_eq!(support, vec![0, 2]);

        let grid: Vec<f64> = (0..21).map(|i| -3.0 + 0.3 * i as f64).collect();
        for &a in &grid {
            for &c in &grid {
                let base = Matrix::from_vec(1, 3, vec![a, 0.0, c]).unwrap();
                let y0 = forward(&p, &cfg, &base).unwrap().values.get(0, 0);
                for &b in &grid {
                    let x = Matrix::from_vec(1, 3, vec![a, b, c]).unwrap();
                    let y = forward(&p, &cfg, &x).unwrap().values.get(0, 0);
                    assert_eq!(y, y0);
                }
            }
        }
    }

    #[test]
    fn single_live_head_takes_all_variance() {
        let (cfg, mut p) = dense(3, vec![4, 4], 5);
        p.alpha = vec![0.0, 2.0, 0.0];
        let v = variance_contribution(&p, &cfg, &random_x(50, 3, 6)).unwrap();
        assert!(!v.constant_total);
        assert_eq!(v.values[0], 0.0);
        assert!((v.values[1] - 1.0).abs() < 1e-12);
        assert_eq!(v.values[2], 0.0);
    }

    #[test]
    fn identical_heads_split_variance() {
        let (cfg, mut p) = dense(2, vec![2], 7);
        // the hidden layer copies the inputs, so both heads are the same function
        p.weights[0] = Matrix::identity(2);
        p.beta = vec![1.0, 1.0];
        p.skip_weights[1] = p.skip_weights[0].clone();
        p.alpha = vec![1.0, 1.0];
        let x = random_x(40, 2, 8).map(f64::abs);
        let v = variance_contribution(&p, &cfg, &x).unwrap();
        assert!((v.values[0] - 0.25).abs() < 1e-12);
        assert!((v.values[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn constant_network_is_flagged() {
        let (cfg, mut p) = dense(3, vec![3], 9);
        p.beta = vec![0.0; 3];
        let v = variance_contribution(&p, &cfg, &random_x(10, 3, 10)).unwrap();
        assert!(v.constant_total);
        assert!(v.values.iter().all(|c| *c == 0.0));
        assert!(variance_contribution(&p, &cfg, &random_x(1, 3, 10)).is_err());
    }

    #[test]
    fn linear_model_has_no_active_layers() {
        let (cfg, mut p) = dense(3, vec![4, 4], 11);
        p.weights
            .iter_mut()
            .for_each(|w| w.as_mut_slice().iter_mut().for_each(|v| *v = 0.0));
        p.alpha = vec![1.0, 0.0, 0.0];
        let s = structure_summary(&p, &cfg, None).unwrap();
        assert_eq!(s.active_layer_count, 0);
        assert_eq!(s.avg_hidden_nodes_per_active_layer, 0.0);
        assert_eq!(s.support_size, 3);
        assert!(s.variance_contributions.is_none());
    }

    #[test]
    fn dense_network_is_fully_active() {
        let (cfg, p) = dense(3, vec![5, 5, 5], 12);
        let s = structure_summary(&p, &cfg, Some(&random_x(20, 3, 13))).unwrap();
        assert_eq!(s.active_layer_count, 3);
        assert_eq!(s.avg_hidden_nodes_per_active_layer, 5.0);
        assert_eq!(s.active_nodes, vec![5, 5, 5]);
        assert!(s
            .variance_contributions
            .unwrap()
            .values
            .iter()
            .all(|c| *c >= 0.0));
    }

    proptest! {
        #[test]
        fn zeroing_never_grows_support(seed in 0u64..1000, picks in proptest::collection::vec(0usize..10_000, 1..20)) {
            let (cfg, mut p) = dense(4, vec![3, 3], seed);
            let mut before = support_of(&p, &cfg);
            let total = p.num_entries();
            for pick in picks {
                let mut idx = pick % total;
                for (_, t) in p.tensors_mut() {
                    if idx < t.len() {
                        t[idx] = 0.0;
                        break;
                    }
                    idx -= t.len();
                }
                if p.alpha.iter().all(|a| *a == 0.0) {
                    break;
                }
                let after = support_of(&p, &cfg);
                prop_assert!(after.iter().all(|i| before.contains(i)));
                before = after;
            }
        }

        #[test]
        fn contributions_ignore_alpha_scale(seed in 0u64..1000, c in 0.01f64..100.0) {
            let (cfg, p) = dense(3, vec![4, 4], seed);
            let x = random_x(30, 3, seed + 1);
            let mut q = p.clone();
            q.alpha.iter_mut().for_each(|a| *a *= c);
            let a = variance_contribution(&p, &cfg, &x).unwrap();
            let b = variance_contribution(&q, &cfg, &x).unwrap();
            for (u, v) in a.values.iter().zip(&b.values) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
