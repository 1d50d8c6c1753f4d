//! Command-line front end. Usage errors exit with status 2, runtime
//! failures with status 1.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{
    load_csv, simulate_additive, simulate_correlated, write_csv, Dataset, RawTable, TaskHint,
};
use crate::diagnostics::{structure_summary, StructureSummary};
use crate::ensemble::{fit_ensemble, predict_original_scale, selection_rates, EnsembleModel};
use crate::error::Error;
use crate::model_file::ModelFile;
use crate::network::{NetworkConfig, TaskKind};
use crate::numerics::Matrix;
use crate::optimizer::{AdamConfig, PenaltySpec, ProxConfig};
use crate::tuning::{cross_validate, log_grid, CvPlan};

#[derive(Debug, Parser)]
#[command(
    name = "easiernet",
    version,
    about = "Sparse-input hierarchical networks and ensembles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an ensemble at fixed penalties and write a model file.
    Fit(FitArgs),
    /// Choose penalties by K-fold cross-validation, then refit on all rows.
    Cv(CvArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Write a simulated dataset.
    Simulate(SimulateArgs),
    /// Summarize the structure and variable selection of a saved model.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Auto,
    Regression,
    Classification,
}

impl From<TaskArg> for TaskHint {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Auto => TaskHint::Auto,
            TaskArg::Regression => TaskHint::Regression,
            TaskArg::Classification => TaskHint::Classification,
        }
    }
}

/// Options shared by every command that trains networks.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training data (CSV with a header row).
    #[arg(long)]
    pub data: PathBuf,
    /// Target column; defaults to the last column.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, value_enum, default_value = "auto")]
    pub task: TaskArg,
    /// Number of hidden layers.
    #[arg(long, default_value_t = 5)]
    pub layers: usize,
    /// Width of every hidden layer.
    #[arg(long, default_value_t = 100)]
    pub width: usize,
    /// Disable skip connections; only the last hidden layer feeds the output.
    #[arg(long)]
    pub no_skip: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_epochs: usize,
    /// Stalled epochs tolerated before Adam stops.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 500)]
    pub prox_iters: usize,
    /// Output model file.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_parser = parse_penalty)]
    pub lambda1: f64,
    #[arg(long, value_parser = parse_penalty)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub ensemble_size: u64,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Comma-separated lambda1 values; defaults to 5 log-spaced values in [1e-4, 1].
    #[arg(long, value_parser = parse_grid)]
    pub lambda1_grid: Option<PenaltyGrid>,
    /// Comma-separated lambda2 values; defaults to 5 log-spaced values in [1e-4, 1].
    #[arg(long, value_parser = parse_grid)]
    pub lambda2_grid: Option<PenaltyGrid>,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(2..))]
    pub folds: u64,
    /// Members per tuning ensemble.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub tuning_members: u64,
    /// Members of the final ensemble.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub ensemble_size: u64,
    /// Where to write the grid results table.
    #[arg(long)]
    pub results: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV; standard output when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(subcommand)]
    pub design: Design,
}

#[derive(Debug, Subcommand)]
pub enum Design {
    /// Additive signal in the leading covariates plus irrelevant covariates.
    Additive {
        #[arg(long, default_value_t = 20)]
        num_relevant: usize,
        #[arg(long, default_value_t = 100)]
        d: usize,
        #[arg(long, default_value_t = 600)]
        n: usize,
        #[arg(long, default_value_t = 2.0)]
        snr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Eight covariates where x5..x8 are mixed toward x1..x4.
    Correlated {
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 2.0)]
        snr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Data for variance contributions.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyGrid(pub Vec<f64>);

fn parse_penalty(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("'{s}' is not a number"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("penalty must be finite and non-negative, got {s}"));
    }
    Ok(v)
}

fn parse_grid(s: &str) -> Result<PenaltyGrid, String> {
    let mut values = s
        .split(',')
        .map(parse_penalty)
        .collect::<Result<Vec<_>, _>>()?;
    values.sort_by(f64::total_cmp);
    values.dedup();
    Ok(PenaltyGrid(values))
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such file: {}", path.display())))
    }
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let stdout = io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Fit(args) => cmd_fit(args, out),
        Command::Cv(args) => cmd_cv(args, out),
        Command::Predict(args) => cmd_predict(args, out),
        Command::Simulate(args) => cmd_simulate(args, out),
        Command::Report(args) => cmd_report(args, out),
    }
}

struct Training {
    dataset: Dataset,
    target_name: String,
    config: NetworkConfig,
    adam: AdamConfig,
    prox: ProxConfig,
}

fn prepare(train: &TrainArgs) -> CliResult<Training> {
    require_file(&train.data)?;
    let target_name = match &train.target {
        Some(t) => t.clone(),
        None => RawTable::read(&train.data)?
            .headers
            .last()
            .cloned()
            .expect("csv header is nonempty"),
    };
    let dataset = load_csv(&train.data, Some(&target_name), train.task.into())?;
    if train.width == 0 {
        return Err(CliError::Usage("--width must be at least 1".into()));
    }
    let config = NetworkConfig::uniform(dataset.d(), train.layers, train.width, dataset.task())?
        .with_skip_connections(!train.no_skip);
    let adam = AdamConfig {
        learning_rate: train.learning_rate,
        max_epochs: train.max_epochs,
        patience_epochs: train.patience,
        ..AdamConfig::default()
    };
    let prox = ProxConfig {
        max_iters: train.prox_iters,
        ..ProxConfig::default()
    };
    adam.validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Training {
        dataset,
        target_name,
        config,
        adam,
        prox,
    })
}

fn save_model(model: &EnsembleModel, training: &Training, path: &Path) -> CliResult<()> {
    let file = ModelFile::new(
        model,
        training.dataset.feature_names.clone(),
        training.target_name.clone(),
        training.dataset.class_names.clone(),
    );
    file.save(path)?;
    Ok(())
}

/// Fit summary printed by `fit` and `cv`.
fn describe_fit(model: &EnsembleModel, training: &Training) -> CliResult<String> {
    let mut s = String::new();
    let ds = &training.dataset;
    let task = match model.config.task {
        TaskKind::Regression => "regression".to_string(),
        TaskKind::Classification { num_classes } => {
            format!("classification with {num_classes} classes")
        }
    };
    writeln!(s, "rows: {}, features: {}, task: {task}", ds.n(), ds.d()).unwrap();
    writeln!(
        s,
        "penalties: lambda1 = {}, lambda2 = {}; members: {}",
        model.penalty.lambda1,
        model.penalty.lambda2,
        model.size()
    )
    .unwrap();
    if !model.reports.is_empty() {
        let objective = model.reports.iter().map(|r| r.final_objective).sum::<f64>()
            / model.reports.len() as f64;
        writeln!(s, "final training objective (member mean): {objective:.6}").unwrap();
    }
    let scaled = model.preprocessing.apply_features(&ds.x)?;
    let summaries = member_summaries(model, Some(&scaled))?;
    let rates = selection_rates(model);
    let selected: Vec<&str> = rates
        .iter()
        .zip(&ds.feature_names)
        .filter(|(r, _)| **r > 0.0)
        .map(|(_, n)| n.as_str())
        .collect();
    let mean_support =
        summaries.iter().map(|m| m.support_size as f64).sum::<f64>() / summaries.len() as f64;
    writeln!(s, "support size (member mean): {mean_support:.2}").unwrap();
    writeln!(
        s,
        "support (selected by any member): {} [{}]",
        selected.len(),
        selected.join(", ")
    )
    .unwrap();
    let contributions = mean_contributions(&summaries);
    let text: Vec<String> = contributions.iter().map(|c| format!("{c:.4}")).collect();
    writeln!(
        s,
        "variance contribution by layer (member mean): {}",
        text.join(" ")
    )
    .unwrap();
    Ok(s)
}

fn member_summaries(model: &EnsembleModel, x: Option<&Matrix>) -> CliResult<Vec<StructureSummary>> {
    model
        .members
        .iter()
        .map(|m| structure_summary(m, &model.config, x).map_err(CliError::from))
        .collect()
}

fn mean_contributions(summaries: &[StructureSummary]) -> Vec<f64> {
    let per_member: Vec<&Vec<f64>> = summaries
        .iter()
        .filter_map(|s| s.variance_contributions.as_ref().map(|v| &v.values))
        .collect();
    let Some(first) = per_member.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|k| per_member.iter().map(|v| v[k]).sum::<f64>() / per_member.len() as f64)
        .collect()
}

fn cmd_fit(args: FitArgs, out: &mut dyn Write) -> CliResult<()> {
    let training = prepare(&args.train)?;
    let penalty = PenaltySpec::new(args.lambda1, args.lambda2);
    let model = fit_ensemble(
        &training.config,
        &training.dataset,
        &penalty,
        &training.adam,
        &training.prox,
        args.ensemble_size as usize,
        args.train.seed,
    )?;
    save_model(&model, &training, &args.train.out)?;
    write!(out, "{}", describe_fit(&model, &training)?)?;
    writeln!(out, "model written to {}", args.train.out.display())?;
    Ok(())
}

fn cmd_cv(args: CvArgs, out: &mut dyn Write) -> CliResult<()> {
    let training = prepare(&args.train)?;
    let default_grid = || log_grid(1e-4, 1.0, 5);
    let plan = CvPlan {
        folds: args.folds as usize,
        lambda1_grid: args.lambda1_grid.map_or_else(default_grid, |g| g.0),
        lambda2_grid: args.lambda2_grid.map_or_else(default_grid, |g| g.0),
        tuning_members: args.tuning_members as usize,
        final_members: args.ensemble_size as usize,
        master_seed: args.train.seed,
    };
    if plan.folds > training.dataset.n() {
        return Err(CliError::Usage(format!(
            "--folds {} exceeds the {} rows",
            plan.folds,
            training.dataset.n()
        )));
    }
    let result = cross_validate(
        &plan,
        &training.config,
        &training.dataset,
        &training.adam,
        &training.prox,
    )?;
    let mut table = csv::Writer::from_path(&args.results).map_err(Error::from)?;
    table
        .write_record(["lambda1", "lambda2", "mean_validation_loss", "std_error"])
        .map_err(Error::from)?;
    for s in &result.scores {
        table
            .write_record([
                s.penalty.lambda1.to_string(),
                s.penalty.lambda2.to_string(),
                s.mean_loss.to_string(),
                s.std_error.to_string(),
            ])
            .map_err(Error::from)?;
    }
    table.flush()?;
    save_model(&result.model, &training, &args.train.out)?;
    writeln!(
        out,
        "chosen: lambda1 = {}, lambda2 = {} ({} candidates, {} folds)",
        result.chosen.lambda1,
        result.chosen.lambda2,
        result.scores.len(),
        plan.folds
    )?;
    write!(out, "{}", describe_fit(&result.model, &training)?)?;
    writeln!(out, "grid results written to {}", args.results.display())?;
    writeln!(out, "model written to {}", args.train.out.display())?;
    Ok(())
}

/// Feature matrix of `path` with columns in the model's order.
fn model_features(file: &ModelFile, path: &Path) -> CliResult<Matrix> {
    require_file(path)?;
    let table = RawTable::read(path)?;
    let missing: Vec<&str> = file
        .feature_names
        .iter()
        .filter(|n| table.column_index(n).is_none())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Runtime(Error::Data(format!(
            "data is missing model features: {}",
            missing.join(", ")
        ))));
    }
    let columns: Vec<usize> = file
        .feature_names
        .iter()
        .map(|n| table.column_index(n).expect("checked above"))
        .collect();
    Ok(table.numeric_columns(&columns)?)
}

fn load_model(path: &Path) -> CliResult<ModelFile> {
    require_file(path)?;
    Ok(ModelFile::load(path)?)
}

fn cmd_predict(args: PredictArgs, out: &mut dyn Write) -> CliResult<()> {
    let file = load_model(&args.model)?;
    let x = model_features(&file, &args.data)?;
    let pred = predict_original_scale(&file.to_model(), &x)?;
    let sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(fs::File::create(path)?),
        None => Box::new(&mut *out),
    };
    let mut writer = csv::Writer::from_writer(sink);
    match file.config.task {
        TaskKind::Regression => {
            writer
                .write_record([format!("predicted_{}", file.target_name)])
                .map_err(Error::from)?;
            for r in 0..pred.values.rows() {
                writer
                    .write_record([pred.values.get(r, 0).to_string()])
                    .map_err(Error::from)?;
            }
        }
        TaskKind::Classification { .. } => {
            let mut header: Vec<String> =
                file.class_names.iter().map(|c| format!("p_{c}")).collect();
            header.push(format!("predicted_{}", file.target_name));
            writer.write_record(&header).map_err(Error::from)?;
            for r in 0..pred.values.rows() {
                let row = pred.values.row(r);
                let best = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .expect("at least two classes");
                let mut record: Vec<String> = row.iter().map(f64::to_string).collect();
                record.push(file.class_names[best].clone());
                writer.write_record(&record).map_err(Error::from)?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs, out: &mut dyn Write) -> CliResult<()> {
    let (dataset, path) = match args.design {
        Design::Additive {
            num_relevant,
            d,
            n,
            snr,
            seed,
            out,
        } => (simulate_additive(num_relevant, d, n, snr, seed), out),
        Design::Correlated {
            rho,
            n,
            snr,
            seed,
            out,
        } => (simulate_correlated(rho, n, snr, seed), out),
    };
    let dataset = dataset.map_err(|e| match e {
        Error::Contract(m) => CliError::Usage(m),
        e => CliError::Runtime(e),
    })?;
    write_csv(&dataset, &path, "y")?;
    writeln!(
        out,
        "wrote {} rows x {} features to {}",
        dataset.n(),
        dataset.d(),
        path.display()
    )?;
    Ok(())
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn cmd_report(args: ReportArgs, out: &mut dyn Write) -> CliResult<()> {
    let file = load_model(&args.model)?;
    let model = file.to_model();
    let scaled = match &args.data {
        Some(path) => Some(
            model
                .preprocessing
                .apply_features(&model_features(&file, path)?)?,
        ),
        None => None,
    };
    let summaries = member_summaries(&model, scaled.as_ref())?;
    let heads = model.config.num_heads();

    writeln!(
        out,
        "members: {}, layers: {}, inputs: {}",
        model.size(),
        model.config.num_layers,
        model.config.input_dim
    )?;
    writeln!(
        out,
        "penalties: lambda1 = {}, lambda2 = {}",
        model.penalty.lambda1, model.penalty.lambda2
    )?;
    writeln!(out)?;
    let layer_cols: Vec<String> = (0..heads).map(|k| format!("var_layer{k}")).collect();
    writeln!(
        out,
        "member,seed,support_size,active_layers,avg_nodes_per_active_layer,{}",
        layer_cols.join(",")
    )?;
    for (b, s) in summaries.iter().enumerate() {
        let contributions = match &s.variance_contributions {
            Some(v) => v
                .values
                .iter()
                .map(|c| format!("{c:.4}"))
                .collect::<Vec<_>>()
                .join(","),
            None => vec!["unavailable"; heads].join(","),
        };
        writeln!(
            out,
            "{b},{},{},{},{:.2},{contributions}",
            model.member_seeds[b],
            s.support_size,
            s.active_layer_count,
            s.avg_hidden_nodes_per_active_layer
        )?;
    }

    writeln!(out)?;
    writeln!(out, "member averages (mean, standard error)")?;
    let column =
        |f: &dyn Fn(&StructureSummary) -> f64| summaries.iter().map(f).collect::<Vec<f64>>();
    let rows: Vec<(String, Vec<f64>)> = vec![
        ("support_size".into(), column(&|s| s.support_size as f64)),
        (
            "active_layers".into(),
            column(&|s| s.active_layer_count as f64),
        ),
        (
            "avg_nodes_per_active_layer".into(),
            column(&|s| s.avg_hidden_nodes_per_active_layer),
        ),
    ];
    for (name, values) in rows {
        let (m, se) = mean_and_se(&values);
        writeln!(out, "{name},{m:.4},{se:.4}")?;
    }
    for k in 0..heads {
        let values: Vec<f64> = summaries
            .iter()
            .filter_map(|s| s.variance_contributions.as_ref().map(|v| v.values[k]))
            .collect();
        if values.is_empty() {
            writeln!(out, "var_layer{k},unavailable,unavailable")?;
        } else {
            let (m, se) = mean_and_se(&values);
            writeln!(out, "var_layer{k},{m:.4},{se:.4}")?;
        }
    }

    writeln!(out)?;
    writeln!(out, "selection rates (descending)")?;
    let mut rates: Vec<(usize, f64)> = selection_rates(&model).into_iter().enumerate().collect();
    rates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (i, r) in rates {
        writeln!(out, "{},{r:.4}", file.feature_names[i])?;
    }
    Ok(())
}
