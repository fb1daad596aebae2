//! End-to-end experiment: load or generate data, binarize, split, train every
//! strategy, evaluate every checkpoint and write the reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{binarize, parse_interactions, temporal_split, AttributeMapping, InputFormat, InteractionLog};
use crate::error::{Error, Result};
use crate::eval::{evaluate_task, summarize, EvalConfig, EvalContext, Metrics, MetricsSummary, PeriodMetrics};
use crate::synthetic::{generate, SyntheticConfig};
use crate::trainer::{run_strategy, save_trajectory, HyperParams, OpCounters, PeriodLog, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DataSource {
    Files {
        data: PathBuf,
        /// Attribute file; may be omitted for CSV logs with an inline
        /// attribute column.
        attrs: Option<PathBuf>,
        format: InputFormat,
        #[serde(default)]
        mapping: AttributeMapping,
    },
    Synthetic(SyntheticConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
    Tsv,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            "tsv" => Ok(OutputFormat::Tsv),
            other => Err(Error::Config(format!("unknown output format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub binarize_threshold: i32,
    pub pretrain_fraction: f64,
    pub dynamic_fraction: f64,
    pub periods: usize,
    pub strategies: Vec<String>,
    pub restart_every: Option<usize>,
    pub hyper: HyperParams,
    pub eval: EvalConfig,
    /// Drives training, evaluation sampling and the synthetic generator.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub formats: Vec<OutputFormat>,
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(SyntheticConfig::default()),
            binarize_threshold: 2,
            pretrain_fraction: 0.6,
            dynamic_fraction: 0.28,
            periods: 7,
            strategies: vec!["finetune".into(), "fade".into()],
            restart_every: None,
            hyper: HyperParams::default(),
            eval: EvalConfig::default(),
            seed: 0,
            out: None,
            formats: vec![OutputFormat::Json, OutputFormat::Csv, OutputFormat::Tsv],
            save_checkpoints: false,
        }
    }
}

impl ExperimentConfig {
    /// Parsed strategies with the restart interval applied.
    pub fn parsed_strategies(&self) -> Result<Vec<Strategy>> {
        self.strategies
            .iter()
            .map(|s| Ok(s.parse::<Strategy>()?.with_restart(self.restart_every)))
            .collect()
    }

    /// Training hyperparameters with the experiment seed applied.
    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            seed: self.seed,
            ..self.hyper.clone()
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            seed: self.seed,
            ..self.eval.clone()
        }
    }

    pub fn synthetic(&self) -> Option<SyntheticConfig> {
        match &self.data {
            DataSource::Synthetic(s) => Some(SyntheticConfig {
                seed: self.seed,
                ..s.clone()
            }),
            DataSource::Files { .. } => None,
        }
    }

    /// Checks everything that can be checked without reading data. Nothing
    /// is written before this succeeds.
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        let strategies = self.parsed_strategies()?;
        let mut names = BTreeSet::new();
        for s in &strategies {
            s.validate()?;
            if !names.insert(s.name()) {
                return Err(Error::Config(format!("strategy `{}` listed twice", s.name())));
            }
        }
        if self.binarize_threshold < 0 {
            return Err(Error::Config("binarization threshold must be >= 0".into()));
        }
        if !(self.pretrain_fraction > 0.0 && self.pretrain_fraction < 1.0) {
            return Err(Error::Config("pretrain fraction must lie in (0, 1)".into()));
        }
        if !(self.dynamic_fraction > 0.0) || self.pretrain_fraction + self.dynamic_fraction > 1.0 + 1e-12 {
            return Err(Error::Config("fractions must be positive and sum to at most 1".into()));
        }
        if self.periods == 0 {
            return Err(Error::Config("at least one dynamic period is required".into()));
        }
        self.hyper_params().validate()?;
        self.eval_config().validate()?;
        match &self.data {
            DataSource::Files { data, attrs, .. } => {
                for path in std::iter::once(data).chain(attrs.iter()) {
                    if !path.is_file() {
                        return Err(Error::Config(format!("input file {} does not exist", path.display())));
                    }
                }
            }
            DataSource::Synthetic(_) => self.synthetic().unwrap().validate()?,
        }
        if let Some(out) = &self.out {
            if out.exists() && !out.is_dir() {
                return Err(Error::Config(format!("output path {} is not a directory", out.display())));
            }
        }
        Ok(())
    }
}

/// Loads the interaction log named by the data source.
pub fn load_log(cfg: &ExperimentConfig) -> Result<InteractionLog> {
    match &cfg.data {
        DataSource::Files {
            data,
            attrs,
            format,
            mapping,
        } => {
            let source = File::open(data)?;
            let attrs = attrs.as_ref().map(File::open).transpose()?;
            parse_interactions(source, *format, attrs, mapping)
        }
        DataSource::Synthetic(_) => generate(&cfg.synthetic().unwrap()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub users: usize,
    pub items: usize,
    pub records: usize,
    pub positives: usize,
    pub group_users: [usize; 2],
    /// `m_t` of every period, pretraining first.
    pub period_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: String,
    /// One entry per checkpoint `t = 0..T`.
    pub metrics: Vec<PeriodMetrics>,
    /// Averages over the dynamic checkpoints `t >= 1` (all checkpoints when
    /// there are none).
    pub summary: MetricsSummary,
    pub training: Vec<PeriodLog>,
    pub counters: OpCounters,
    pub empty_group_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub mean_performance: Metrics,
    pub mean_abs_pd: Metrics,
    pub mean_pd: Metrics,
}

/// Wall-clock seconds per trained period of every strategy. Kept apart from
/// the deterministic fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub seconds: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub dataset: DatasetSummary,
    pub strategies: Vec<StrategyReport>,
    pub comparison: Vec<ComparisonRow>,
    pub timings: Timings,
    /// Set when the run stopped early; the report then holds the
    /// strategies completed before the failure.
    pub failure: Option<String>,
}

impl RunReport {
    pub fn strategy(&self, name: &str) -> Option<&StrategyReport> {
        self.strategies.iter().find(|s| s.strategy == name)
    }
}

fn dataset_summary(raw: &InteractionLog, positives: usize, sizes: Vec<usize>) -> DatasetSummary {
    let mut group_users = [0usize; 2];
    for &a in &raw.user_attributes {
        group_users[a as usize] += 1;
    }
    DatasetSummary {
        users: raw.user_count,
        items: raw.item_count,
        records: raw.records.len(),
        positives,
        group_users,
        period_sizes: sizes,
    }
}

/// Loads, binarizes and splits the configured data without training, for
/// validating an input before a long run.
pub fn inspect_data(cfg: &ExperimentConfig) -> Result<DatasetSummary> {
    cfg.validate()?;
    let raw = load_log(cfg)?;
    let log = binarize(&raw, cfg.binarize_threshold);
    let datasets = temporal_split(&log, cfg.pretrain_fraction, cfg.dynamic_fraction, cfg.periods)?;
    Ok(dataset_summary(&raw, log.records.len(), datasets.iter().map(|d| d.size()).collect()))
}

/// Runs the whole pipeline. When an output directory is configured the
/// report files are written there, including a partial report marked with
/// the failure if a strategy fails.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let strategies = cfg.parsed_strategies()?;
    let hp = cfg.hyper_params();
    let eval_cfg = cfg.eval_config();

    let raw = load_log(cfg)?;
    let log = binarize(&raw, cfg.binarize_threshold);
    let datasets = temporal_split(&log, cfg.pretrain_fraction, cfg.dynamic_fraction, cfg.periods)?;
    let ctx = EvalContext::new(&datasets, &raw.user_attributes).with_universe(raw.item_count);
    if let Some(out) = &cfg.out {
        write_id_maps(&raw, out)?;
    }

    let mut report = RunReport {
        config: cfg.clone(),
        dataset: dataset_summary(&raw, log.records.len(), datasets.iter().map(|d| d.size()).collect()),
        strategies: Vec::new(),
        comparison: Vec::new(),
        timings: Timings::default(),
        failure: None,
    };

    for strategy in &strategies {
        log::info!("training {strategy}");
        let outcome = run_one(strategy, &datasets, &raw.user_attributes, &hp, &ctx, &eval_cfg, cfg);
        match outcome {
            Ok((entry, seconds)) => {
                report.timings.seconds.insert(entry.strategy.clone(), seconds);
                report.comparison.push(ComparisonRow {
                    strategy: entry.strategy.clone(),
                    mean_performance: entry.summary.mean_performance,
                    mean_abs_pd: entry.summary.mean_abs_pd,
                    mean_pd: entry.summary.mean_pd,
                });
                report.strategies.push(entry);
            }
            Err(e) => {
                report.failure = Some(format!("{strategy}: {e}"));
                if let Some(out) = &cfg.out {
                    emit_report(&report, out, &cfg.formats)?;
                }
                return Err(e);
            }
        }
    }

    if let Some(out) = &cfg.out {
        emit_report(&report, out, &cfg.formats)?;
    }
    Ok(report)
}

fn run_one(
    strategy: &Strategy,
    datasets: &[crate::data::PeriodDataset],
    attributes: &[u8],
    hp: &HyperParams,
    ctx: &EvalContext<'_>,
    eval_cfg: &EvalConfig,
    cfg: &ExperimentConfig,
) -> Result<(StrategyReport, Vec<f64>)> {
    let traj = run_strategy(strategy, datasets, attributes, hp)?;
    if cfg.save_checkpoints {
        if let Some(out) = &cfg.out {
            save_trajectory(&traj, &out.join(&traj.strategy))?;
        }
    }
    let mut metrics = Vec::with_capacity(traj.checkpoints.len());
    for (t, ck) in traj.checkpoints.iter().enumerate() {
        metrics.push(evaluate_task(&ck.params, ctx, t, eval_cfg)?);
    }
    let summary = if metrics.len() > 1 {
        summarize(&metrics[1..])
    } else {
        summarize(&metrics)
    };
    let mut counters = OpCounters::default();
    for p in &traj.periods {
        counters.add(&p.counters);
    }
    let report = StrategyReport {
        strategy: traj.strategy.clone(),
        metrics,
        summary,
        empty_group_batches: traj.empty_group_batches(),
        training: traj.periods,
        counters,
    };
    Ok((report, traj.seconds))
}

/// Writes `user_ids.tsv` (`index, original id, attribute`) and
/// `item_ids.tsv` (`index, original id`) so reports can name original ids.
pub fn write_id_maps(log: &InteractionLog, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("user_ids.tsv"))?);
    writeln!(w, "index\tid\tattribute")?;
    for (u, (id, a)) in log.user_ids.iter().zip(&log.user_attributes).enumerate() {
        writeln!(w, "{u}\t{id}\t{a}")?;
    }
    w.flush()?;
    let mut w = BufWriter::new(File::create(dir.join("item_ids.tsv"))?);
    writeln!(w, "index\tid")?;
    for (i, id) in log.item_ids.iter().enumerate() {
        writeln!(w, "{i}\t{id}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json`, `metrics.csv`, `perf_over_time.tsv` and
/// `abs_pd_over_time.tsv` for the requested formats.
pub fn emit_report(report: &RunReport, dir: &Path, formats: &[OutputFormat]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let formats: BTreeSet<_> = formats.iter().copied().collect();
    if formats.contains(&OutputFormat::Json) {
        let mut w = BufWriter::new(File::create(dir.join("report.json"))?);
        serde_json::to_writer_pretty(&mut w, report)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    if formats.contains(&OutputFormat::Csv) {
        let mut w = BufWriter::new(File::create(dir.join("metrics.csv"))?);
        write_csv(report, &mut w)?;
        w.flush()?;
    }
    if formats.contains(&OutputFormat::Tsv) {
        let mut w = BufWriter::new(File::create(dir.join("perf_over_time.tsv"))?);
        write_perf_tsv(report, &mut w)?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("abs_pd_over_time.tsv"))?);
        write_abs_pd_tsv(report, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// `strategy,period,group,metric,value` with groups `overall`, `0`, `1`.
pub fn write_csv<W: Write>(report: &RunReport, w: &mut W) -> Result<()> {
    writeln!(w, "strategy,period,group,metric,value")?;
    for s in &report.strategies {
        for p in &s.metrics {
            let groups = [
                ("overall", &p.overall.metrics),
                ("0", &p.groups[0].metrics),
                ("1", &p.groups[1].metrics),
            ];
            for (g, m) in groups {
                for (name, v) in Metrics::NAMES.iter().zip(m.values()) {
                    writeln!(w, "{},{},{},{},{}", s.strategy, p.period, g, name, v)?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_perf_tsv<W: Write>(report: &RunReport, w: &mut W) -> Result<()> {
    writeln!(w, "period\tseries\tvalue")?;
    for s in &report.strategies {
        for p in &s.metrics {
            for (name, v) in Metrics::NAMES.iter().zip(p.overall.metrics.values()) {
                writeln!(w, "{}\t{}/{}\t{}", p.period, s.strategy, name, v)?;
            }
        }
    }
    Ok(())
}

/// Periods with an undefined disparity are omitted.
pub fn write_abs_pd_tsv<W: Write>(report: &RunReport, w: &mut W) -> Result<()> {
    writeln!(w, "period\tseries\tvalue")?;
    for s in &report.strategies {
        for p in &s.metrics {
            if let Some(pd) = &p.pd {
                for (name, v) in Metrics::NAMES.iter().zip(pd.values()) {
                    writeln!(w, "{}\t{}/{}\t{}", p.period, s.strategy, name, v.abs())?;
                }
            }
        }
    }
    Ok(())
}
