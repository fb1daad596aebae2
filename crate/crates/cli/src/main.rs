use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fade_core::bounds::bound_report;
use fade_core::experiment::{inspect_data, run_experiment};
use fade_core::{
    AttributeMapping, BoundInputs, DataSource, Error, ExperimentConfig, InputFormat, OutputFormat, Result,
    RunReport, SyntheticConfig, Task,
};

#[derive(Parser)]
#[command(name = "fade", version, about = "Fairness-aware dynamic recommendation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the configured strategies.
    Run(RunArgs),
    /// Generalization bounds for fine-tuning and retraining.
    Bounds(BoundsArgs),
    /// Parse, binarize and split the input and print a summary.
    IngestCheck(DataArgs),
}

#[derive(Args)]
struct DataArgs {
    /// TOML experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Interaction log.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// User attribute file.
    #[arg(long)]
    attrs: Option<PathBuf>,
    /// Input layout: movielens-dat or csv. Guessed from the extension of
    /// `--data` when omitted.
    #[arg(long)]
    format: Option<InputFormat>,
    /// Attribute labels: gender (F/M/0/1) or numeric (0/1).
    #[arg(long, value_parser = ["gender", "numeric"])]
    attr_mapping: Option<String>,
    /// Generated log, e.g. `users=2000 items=500 periods=5 disparity=0.5`.
    #[arg(long)]
    synthetic: Option<SyntheticConfig>,
    /// Ratings above this value count as positives.
    #[arg(long)]
    binarize: Option<i32>,
    #[arg(long)]
    pretrain_frac: Option<f64>,
    #[arg(long)]
    dynamic_frac: Option<f64>,
    /// Number of dynamic periods.
    #[arg(long)]
    periods: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// pretrain, finetune, retrain, fade or retrain-fair. Repeatable.
    #[arg(long = "strategy")]
    strategies: Vec<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    mu: Option<usize>,
    #[arg(long)]
    neg: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    epochs_pretrain: Option<usize>,
    #[arg(long)]
    epochs_update: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// remain or next.
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    eval_negs: Option<usize>,
    /// Retrain from scratch every this many periods.
    #[arg(long)]
    restart_every: Option<usize>,
    /// Report directory. Without it the report JSON goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report files to write: json, csv, tsv. Repeatable.
    #[arg(long = "emit")]
    emit: Vec<OutputFormat>,
    /// Also write per-period checkpoints under the output directory.
    #[arg(long)]
    save_checkpoints: bool,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    gamma: f64,
    /// Test period; training used periods 0..t_te.
    #[arg(long)]
    t_te: usize,
    #[arg(long)]
    delta: f64,
    /// Size of the pretraining period.
    #[arg(long)]
    m0: f64,
    /// Size of every dynamic period.
    #[arg(long)]
    m1: f64,
    /// Comma-separated distribution shifts, one per training period.
    #[arg(long, value_delimiter = ',', required = true)]
    d: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    l_star: f64,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
}

fn read_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn guess_format(path: &Path) -> InputFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => InputFormat::Csv,
        _ => InputFormat::MovielensDat,
    }
}

impl DataArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = read_config(self.config.as_deref())?;
        let mapping = self.attr_mapping.as_deref().map(|m| match m {
            "numeric" => AttributeMapping::numeric(),
            _ => AttributeMapping::gender(),
        });
        if let Some(data) = &self.data {
            let format = self.format.unwrap_or_else(|| guess_format(data));
            cfg.data = DataSource::Files {
                data: data.clone(),
                attrs: self.attrs.clone(),
                format,
                mapping: mapping.clone().unwrap_or_default(),
            };
        } else if let DataSource::Files {
            attrs,
            format,
            mapping: m,
            ..
        } = &mut cfg.data
        {
            if self.attrs.is_some() {
                *attrs = self.attrs.clone();
            }
            if let Some(f) = self.format {
                *format = f;
            }
            if let Some(mapping) = mapping {
                *m = mapping;
            }
        } else if self.attrs.is_some() || self.format.is_some() {
            return Err(Error::Config("--attrs and --format need a file data source".into()));
        }
        if let Some(synth) = &self.synthetic {
            // The generator's period count is the default split unless
            // `--periods` says otherwise.
            cfg.periods = synth.periods;
            cfg.data = DataSource::Synthetic(synth.clone());
        }
        set(&mut cfg.binarize_threshold, self.binarize);
        set(&mut cfg.pretrain_fraction, self.pretrain_frac);
        set(&mut cfg.dynamic_fraction, self.dynamic_frac);
        set(&mut cfg.periods, self.periods);
        set(&mut cfg.seed, self.seed);
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = self.data.config()?;
        if !self.strategies.is_empty() {
            cfg.strategies = self.strategies.clone();
        }
        let hp = &mut cfg.hyper;
        set(&mut hp.lambda, self.lambda);
        set(&mut hp.tau, self.tau);
        set(&mut hp.mu, self.mu);
        set(&mut hp.neg, self.neg);
        set(&mut hp.dim, self.dim);
        set(&mut hp.lr, self.lr);
        set(&mut hp.l2, self.l2);
        set(&mut hp.epochs_pretrain, self.epochs_pretrain);
        set(&mut hp.epochs_update, self.epochs_update);
        set(&mut hp.batch_size, self.batch);
        set(&mut cfg.eval.k, self.k);
        set(&mut cfg.eval.task, self.task);
        set(&mut cfg.eval.num_eval_negatives, self.eval_negs);
        if self.restart_every.is_some() {
            cfg.restart_every = self.restart_every;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        if !self.emit.is_empty() {
            cfg.formats = self.emit.clone();
        }
        cfg.save_checkpoints |= self.save_checkpoints;
        Ok(cfg)
    }
}

fn print_comparison(report: &RunReport) {
    eprintln!(
        "{:<20} {:>8} {:>8} {:>8} {:>10} {:>10} {:>10}",
        "strategy", "ndcg", "f1", "hit", "|pd| ndcg", "|pd| f1", "|pd| hit"
    );
    for row in &report.comparison {
        let p = row.mean_performance.values();
        let d = row.mean_abs_pd.values();
        eprintln!(
            "{:<20} {:>8.4} {:>8.4} {:>8.4} {:>10.4} {:>10.4} {:>10.4}",
            row.strategy, p[0], p[1], p[2], d[0], d[1], d[2]
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.config()?;
            let report = run_experiment(&cfg)?;
            print_comparison(&report);
            if cfg.out.is_none() {
                println!("{}", serde_json::to_string_pretty(&report)?);
            }
        }
        Command::Bounds(args) => {
            let inputs = BoundInputs {
                gamma: args.gamma,
                t_te: args.t_te,
                m0: args.m0,
                m1: args.m1,
                delta: args.delta,
                shifts: args.d,
                l_star: args.l_star,
                epsilon: args.epsilon,
            };
            println!("{}", serde_json::to_string_pretty(&bound_report(&inputs)?)?);
        }
        Command::IngestCheck(args) => {
            let summary = inspect_data(&args.config()?)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 2,
        "data" => 3,
        "io" => 4,
        _ => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
