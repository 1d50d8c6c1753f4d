//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 3 8`.

mod common;

use std::env;
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Instant;

use common::*;
use easiernet::data::{simulate_additive, simulate_correlated, Dataset, Targets};
use easiernet::diagnostics::{structure_summary, support_of};
use easiernet::ensemble::{fit_ensemble, predict_ensemble, selection_rates, EnsembleModel};
use easiernet::model_file::ModelFile;
use easiernet::network::{forward, NetworkConfig, TaskKind};
use easiernet::numerics::{Matrix, RngStream};
use easiernet::optimizer::{
    fit_sier_net, soft_threshold, AdamConfig, FitReport, PenaltySpec, ProxConfig,
};
use easiernet::tuning::{cross_validate, log_grid, CvPlan};

/// Prox objective traces from every fit in this run, checked by criterion 8.
static TRACES: Mutex<Vec<(String, Vec<f64>)>> = Mutex::new(Vec::new());

fn record_traces(label: &str, reports: &[FitReport]) {
    let mut traces = TRACES.lock().unwrap();
    for (b, r) in reports.iter().enumerate() {
        traces.push((format!("{label} member {b}"), r.objective_trace.clone()));
    }
}

fn non_increasing(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0])
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

// Desk-scale training settings shared by the simulation criteria.
const HIDDEN_LAYERS: usize = 3;
const WIDTH: usize = 10;

fn desk_adam() -> AdamConfig {
    AdamConfig::default()
}

fn desk_prox() -> ProxConfig {
    ProxConfig::default()
}

fn gradient_oracle() -> Outcome {
    let mut rng = RngStream::new(2024);
    let mut worst: f64 = 0.0;
    let (mut checked, mut excluded) = (0, 0);
    for net in 0..20 {
        let cfg = random_config(&mut rng, net % 2 == 1);
        let p = random_params(&cfg, &mut rng);
        let x = random_matrix(8, cfg.input_dim, &mut rng);
        let y = random_targets(&cfg, 8, &mut rng);
        let w: Vec<f64> = (0..8).map(|_| rng.uniform(0.5, 2.0)).collect();
        let check = check_gradient(&p, &cfg, &x, &y, &w, 1e-5);
        worst = worst.max(check.worst_relative_error);
        checked += check.checked;
        excluded += check.excluded;
    }
    Outcome::new(
        worst <= 1e-5 && checked > 0,
        format!("{checked} entries checked, {excluded} excluded near kinks, worst relative error {worst:.2e}"),
    )
}

/// `argmin_u 0.5 (u - v)^2 + lt |u|` by successively refined grid search.
fn grid_argmin(v: f64, lt: f64) -> f64 {
    let objective = |u: f64| 0.5 * (u - v).powi(2) + lt * u.abs();
    let (mut lo, mut hi) = (-(v.abs() + lt + 1.0), v.abs() + lt + 1.0);
    let points = 2001;
    loop {
        let step = (hi - lo) / (points - 1) as f64;
        let best = (0..points)
            .map(|i| lo + step * i as f64)
            .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
            .unwrap();
        if step < 1e-10 {
            return best;
        }
        lo = best - 2.0 * step;
        hi = best + 2.0 * step;
    }
}

fn prox_operator() -> Outcome {
    let piecewise = |v: f64, l: f64| v.signum() * (v.abs() - l).max(0.0);
    let mut mismatches = 0;
    for i in 0..10_000 {
        let v = -5.0 + 10.0 * i as f64 / 9_999.0;
        for l in [0.0, 0.3, 1.0, 2.5] {
            if soft_threshold(v, l) != piecewise(v, l) {
                mismatches += 1;
            }
        }
    }
    let mut rng = RngStream::new(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let v = rng.uniform(-5.0, 5.0);
        let lt = rng.uniform(0.0, 3.0);
        worst = worst.max((soft_threshold(v, lt) - grid_argmin(v, lt)).abs());
    }
    Outcome::new(
        mismatches == 0 && worst <= 1e-6,
        format!("{mismatches} grid mismatches, worst argmin gap {worst:.2e}"),
    )
}

fn centered(values: Vec<f64>) -> Vec<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.into_iter().map(|v| v - mean).collect()
}

/// Closed-form minimizer over `b` of `mean((r - b u)^2) + lam |b|`.
fn univariate_lasso(u: &[f64], r: &[f64], lam: f64) -> f64 {
    let n = u.len() as f64;
    let uu = u.iter().map(|v| v * v).sum::<f64>() / n;
    if uu == 0.0 {
        return 0.0;
    }
    let ur = u.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / n;
    soft_threshold(ur, lam / 2.0) / uu
}

fn univariate_lasso_equivalence() -> Outcome {
    let cfg = NetworkConfig::new(1, vec![], TaskKind::Regression).unwrap();
    let prox = ProxConfig {
        param_tol: 1e-12,
        max_iters: 200_000,
        ..ProxConfig::default()
    };
    let mut worst: f64 = 0.0;
    let mut zero_fits = 0;
    let mut reports = Vec::new();
    for instance in 0..10u64 {
        let mut rng = RngStream::new(100 + instance);
        let n = 60;
        let slope = rng.uniform(0.5, 2.0) * if instance % 2 == 0 { 1.0 } else { -1.0 };
        let x = centered((0..n).map(|_| rng.standard_normal()).collect());
        let y = centered(
            x.iter()
                .map(|v| slope * v + 0.5 * rng.standard_normal())
                .collect(),
        );
        let ds = Dataset::new(
            Matrix::from_vec(n, 1, x.clone()).unwrap(),
            Targets::Real(y.clone()),
            vec!["x".into()],
        )
        .unwrap();
        for lam in [0.01, 0.2, 1.0] {
            let (p, report) = fit_sier_net(
                &cfg,
                &ds,
                &PenaltySpec::new(lam, 0.0),
                &desk_adam(),
                &prox,
                instance,
            )
            .unwrap();
            let beta = p.beta[0];
            let w = p.skip_weights[0].get(0, 0);
            let resid: Vec<f64> = y.iter().map(|v| v - p.skip_biases[0][0]).collect();
            let u_beta: Vec<f64> = x.iter().map(|v| w * v).collect();
            let u_w: Vec<f64> = x.iter().map(|v| beta * v).collect();
            worst = worst
                .max((beta - univariate_lasso(&u_beta, &resid, lam)).abs())
                .max((w - univariate_lasso(&u_w, &resid, lam)).abs());
            zero_fits += usize::from(beta * w == 0.0);
            reports.push(report);
        }
    }
    record_traces("univariate lasso", &reports);
    Outcome::new(
        worst <= 1e-4,
        format!("30 fits ({zero_fits} at zero), worst gap to closed form {worst:.2e}"),
    )
}

fn selection_config(d: usize) -> NetworkConfig {
    NetworkConfig::uniform(d, HIDDEN_LAYERS, WIDTH, TaskKind::Regression).unwrap()
}

fn correlated_ensemble(rho: f64, members: usize, label: &str) -> EnsembleModel {
    let ds = simulate_correlated(rho, 500, 2.0, 42).unwrap();
    let plan = CvPlan {
        folds: 4,
        lambda1_grid: vec![0.01, 0.03, 0.1],
        lambda2_grid: vec![0.01, 0.1],
        tuning_members: 4,
        final_members: members,
        master_seed: 11,
    };
    let result =
        cross_validate(&plan, &selection_config(8), &ds, &desk_adam(), &desk_prox()).unwrap();
    record_traces(label, &result.model.reports);
    result.model
}

fn format_rates(rates: &[f64]) -> String {
    rates
        .iter()
        .map(|r| format!("{r:.2}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn selection_independent() -> Outcome {
    let model = correlated_ensemble(0.0, 20, "correlated rho=0");
    let rates = selection_rates(&model);
    let pass = rates[..4].iter().all(|r| *r >= 0.95) && rates[4..].iter().all(|r| *r <= 0.05);
    Outcome::new(
        pass,
        format!(
            "lambda = ({}, {}), rates {}",
            model.penalty.lambda1,
            model.penalty.lambda2,
            format_rates(&rates)
        ),
    )
}

fn selection_grouping() -> Outcome {
    let model = correlated_ensemble(1.0, 50, "correlated rho=1");
    let rates = selection_rates(&model);
    let paired = (0..4).all(|i| (rates[i] - rates[i + 4]).abs() <= 0.30);
    let banded = rates.iter().all(|r| (0.2..=0.9).contains(r));
    Outcome::new(
        paired && banded,
        format!(
            "lambda = ({}, {}), rates {}",
            model.penalty.lambda1,
            model.penalty.lambda2,
            format_rates(&rates)
        ),
    )
}

fn additive_train() -> Dataset {
    simulate_additive(20, 100, 600, 2.0, 61).unwrap()
}

fn prediction_quality() -> Outcome {
    let train = additive_train();
    // noiseless responses: the error is measured against the regression function
    let test = simulate_additive(20, 100, 200, f64::INFINITY, 62).unwrap();
    let plan = CvPlan {
        folds: 4,
        lambda1_grid: log_grid(1e-3, 1e-1, 4),
        lambda2_grid: log_grid(1e-3, 1e-1, 4),
        tuning_members: 3,
        final_members: 20,
        master_seed: 13,
    };
    let result = cross_validate(
        &plan,
        &selection_config(100),
        &train,
        &desk_adam(),
        &desk_prox(),
    )
    .unwrap();
    record_traces("additive cv", &result.model.reports);
    let model = &result.model;
    let pred = predict_ensemble(model, &test.x).unwrap();
    let truth: Vec<f64> = test
        .target_values()
        .unwrap()
        .iter()
        .map(|y| model.preprocessing.apply_target(*y))
        .collect();
    let mse = truth
        .iter()
        .enumerate()
        .map(|(i, t)| (pred.values.get(i, 0) - t).powi(2))
        .sum::<f64>()
        / truth.len() as f64;
    let support = model
        .members
        .iter()
        .map(|m| support_of(m, &model.config).len() as f64)
        .sum::<f64>()
        / model.size() as f64;
    Outcome::new(
        mse <= 0.35 && (10.0..=50.0).contains(&support),
        format!(
            "lambda = ({}, {}), standardized test MSE {mse:.4}, mean support {support:.1}",
            model.penalty.lambda1, model.penalty.lambda2
        ),
    )
}

fn structural_sweep() -> Outcome {
    let train = additive_train();
    let cfg = selection_config(100);
    let sweep = [1e-3, 1e-2, 3e-2, 1e-1, 1.0];
    let mut layers = Vec::new();
    let mut first_layer = 0.0;
    for (s, &lambda2) in sweep.iter().enumerate() {
        let model = fit_ensemble(
            &cfg,
            &train,
            &PenaltySpec::new(0.01, lambda2),
            &desk_adam(),
            &desk_prox(),
            3,
            17,
        )
        .unwrap();
        record_traces(&format!("lambda2 sweep {lambda2}"), &model.reports);
        let x = model.preprocessing.apply_features(&train.x).unwrap();
        let summaries: Vec<_> = model
            .members
            .iter()
            .map(|m| structure_summary(m, &cfg, Some(&x)).unwrap())
            .collect();
        let b = summaries.len() as f64;
        layers.push(
            summaries
                .iter()
                .map(|s| s.active_layer_count as f64)
                .sum::<f64>()
                / b,
        );
        if s + 1 == sweep.len() {
            first_layer = summaries
                .iter()
                .map(|s| s.variance_contributions.as_ref().unwrap().values[0])
                .sum::<f64>()
                / b;
        }
    }
    let monotone = layers.windows(2).all(|w| w[1] <= w[0]);
    Outcome::new(
        monotone && (first_layer - 1.0).abs() <= 1e-9,
        format!(
            "mean active layers {:?} over lambda2 {:?}, input-layer contribution at largest {first_layer:.12}",
            layers, sweep
        ),
    )
}

fn determinism_round_trip() -> Outcome {
    let ds = simulate_correlated(0.5, 200, 2.0, 5).unwrap();
    let cfg = selection_config(8);
    let penalty = PenaltySpec::new(0.02, 0.02);
    let fit = || fit_ensemble(&cfg, &ds, &penalty, &desk_adam(), &desk_prox(), 5, 99).unwrap();
    let model = fit();
    record_traces("round trip", &model.reports);
    let dir = tempfile::tempdir().unwrap();
    let save = |m: &EnsembleModel, name: &str| {
        let path = dir.path().join(name);
        ModelFile::new(m, ds.feature_names.clone(), "y".into(), Vec::new())
            .save(&path)
            .unwrap();
        path
    };
    let first = save(&model, "a.json");
    let second = save(&fit(), "b.json");
    let same_bytes = std::fs::read(&first).unwrap() == std::fs::read(&second).unwrap();

    let reloaded = ModelFile::load(&first).unwrap().to_model();
    let probe = simulate_correlated(0.5, 100, 2.0, 6).unwrap().x;
    let a = predict_ensemble(&model, &probe).unwrap();
    let b = predict_ensemble(&reloaded, &probe).unwrap();
    let reload_gap = a
        .values
        .as_slice()
        .iter()
        .zip(b.values.as_slice())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max);

    let scaled = model.preprocessing.apply_features(&probe).unwrap();
    let outputs: Vec<Matrix> = model
        .members
        .iter()
        .map(|m| forward(m, &cfg, &scaled).unwrap().values)
        .collect();
    let mean_gap = (0..probe.rows())
        .map(|r| {
            let mean = outputs.iter().map(|o| o.get(r, 0)).sum::<f64>() / outputs.len() as f64;
            (mean - a.values.get(r, 0)).abs()
        })
        .fold(0.0, f64::max);

    let traces = TRACES.lock().unwrap();
    let bad: Vec<&str> = traces
        .iter()
        .filter(|(_, t)| !non_increasing(t))
        .map(|(l, _)| l.as_str())
        .collect();
    Outcome::new(
        same_bytes && reload_gap <= 1e-12 && mean_gap <= 1e-12 && bad.is_empty(),
        format!(
            "identical refit files: {same_bytes}, reload gap {reload_gap:.1e}, member-mean gap {mean_gap:.1e}, \
             {} prox traces checked, {} increasing",
            traces.len(),
            bad.len()
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (1, "gradient oracle", gradient_oracle),
        (2, "prox operator", prox_operator),
        (
            3,
            "univariate lasso equivalence",
            univariate_lasso_equivalence,
        ),
        (
            4,
            "selection with independent covariates",
            selection_independent,
        ),
        (
            5,
            "grouping effect with duplicated covariates",
            selection_grouping,
        ),
        (
            6,
            "prediction quality on the additive design",
            prediction_quality,
        ),
        (7, "lambda2 structural sweep", structural_sweep),
        (
            8,
            "determinism and model round trip",
            determinism_round_trip,
        ),
    ];
    let selected: Vec<u32> = env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} criterion {id}: {name}: {} [{:.1}s]",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
        failures += usize::from(!outcome.pass);
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
