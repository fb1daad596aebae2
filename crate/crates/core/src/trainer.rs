//! Per-period training: full (re)training, incremental fine-tuning with an
//! optional fairness regularizer, and the strategy driver with restarts.

use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{sample_negatives_into, Exclusion, PeriodDataset};
use crate::error::{Error, Result};
use crate::fairness::{DpdPass, FairnessBatch, FairnessLoss};
use crate::model::{
    accumulate_bpr_scored, adam_step, grow_tables, init_params, Adam, GradientSet, ModelParams, OptimizerState,
};
use crate::rng::stream;

const TAG_INIT: u64 = 1;
const TAG_GROW: u64 = 2;
const TAG_BPR: u64 = 3;
const TAG_FAIR: u64 = 4;
const PHASE_FULL: u64 = 10;
const PHASE_UPDATE: u64 = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Weight of the fairness loss.
    pub lambda: f64,
    /// Temperature of the ranking relaxation.
    pub tau: f64,
    /// Negatives per fairness candidate set.
    pub mu: usize,
    /// Negatives per BPR example.
    pub neg: usize,
    pub lr: f64,
    pub l2: f64,
    pub epochs_pretrain: usize,
    pub epochs_update: usize,
    pub batch_size: usize,
    pub dim: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda: 1.0,
            tau: 3.0,
            mu: 4,
            neg: 4,
            lr: 1e-3,
            l2: 1e-4,
            epochs_pretrain: 50,
            epochs_update: 10,
            batch_size: 1024,
            dim: 64,
            seed: 0,
            init_scale: 0.01,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a finite value >= 0");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be > 0");
        }
        if self.mu == 0 || self.neg == 0 {
            return bad("mu and neg must be >= 1");
        }
        if !(self.lr > 0.0) || !(self.l2 >= 0.0) {
            return bad("lr must be > 0 and l2 >= 0");
        }
        if self.batch_size == 0 || self.dim == 0 {
            return bad("batch size and dimension must be >= 1");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init scale must be >= 0");
        }
        Ok(())
    }

    fn adam(&self) -> Adam {
        Adam::new(self.lr, self.l2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseStrategy {
    /// Train once on the first period and freeze.
    Pretrain,
    /// Rebuild from scratch on all history every period.
    Retrain,
    /// Update in place on each new period.
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub base: BaseStrategy,
    pub fair: Option<FairnessLoss>,
    /// Full retrain whenever `t % r == 0`. Ignored by `Pretrain`.
    pub restart_every: Option<usize>,
}

impl Strategy {
    pub const NAMES: [&'static str; 7] = [
        "pretrain",
        "retrain",
        "finetune",
        "pretrain-fair",
        "retrain-fair",
        "fade-abs",
        "fade",
    ];

    pub fn new(base: BaseStrategy, fair: Option<FairnessLoss>) -> Self {
        Strategy {
            base,
            fair,
            restart_every: None,
        }
    }

    pub fn with_restart(mut self, every: Option<usize>) -> Self {
        self.restart_every = every;
        self
    }

    fn restarts_at(&self, t: usize) -> bool {
        self.base == BaseStrategy::Finetune && t > 0 && matches!(self.restart_every, Some(r) if t % r == 0)
    }

    /// Stable name used for run ids and report keys.
    pub fn name(&self) -> String {
        let base = match (self.base, self.fair) {
            (BaseStrategy::Pretrain, None) => "pretrain",
            (BaseStrategy::Pretrain, Some(FairnessLoss::Fade)) => "pretrain-fair",
            (BaseStrategy::Pretrain, Some(FairnessLoss::Abs)) => "pretrain-fair-abs",
            (BaseStrategy::Retrain, None) => "retrain",
            (BaseStrategy::Retrain, Some(FairnessLoss::Fade)) => "retrain-fair",
            (BaseStrategy::Retrain, Some(FairnessLoss::Abs)) => "retrain-fair-abs",
            (BaseStrategy::Finetune, None) => "finetune",
            (BaseStrategy::Finetune, Some(FairnessLoss::Fade)) => "fade",
            (BaseStrategy::Finetune, Some(FairnessLoss::Abs)) => "fade-abs",
        };
        match self.restart_every {
            Some(r) if self.base == BaseStrategy::Finetune => format!("{base}-restart{r}"),
            _ => base.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.restart_every, Some(r) if r < 2) {
            return Err(Error::Config("restart interval must be >= 2".into()));
        }
        Ok(())
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use BaseStrategy::*;
        let (base, fair) = match s.to_ascii_lowercase().as_str() {
            "pretrain" => (Pretrain, None),
            "pretrain-fair" => (Pretrain, Some(FairnessLoss::Fade)),
            "pretrain-fair-abs" => (Pretrain, Some(FairnessLoss::Abs)),
            "retrain" => (Retrain, None),
            "retrain-fair" => (Retrain, Some(FairnessLoss::Fade)),
            "retrain-fair-abs" => (Retrain, Some(FairnessLoss::Abs)),
            "finetune" => (Finetune, None),
            "fade" | "finetune-fair" => (Finetune, Some(FairnessLoss::Fade)),
            "fade-abs" => (Finetune, Some(FairnessLoss::Abs)),
            other => {
                return Err(Error::Config(format!(
                    "unknown strategy `{other}` (expected one of {})",
                    Strategy::NAMES.join(", ")
                )))
            }
        };
        Ok(Strategy::new(base, fair))
    }
}

/// Work performed during a training call. Fairness work per set is
/// `(mu+1)^2` ranking operations plus `(mu+1)*d` scoring operations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub interactions: u64,
    pub bpr_pairs: u64,
    pub fairness_sets: u64,
    pub ranking_ops: u64,
    pub scoring_ops: u64,
    pub optimizer_steps: u64,
}

impl OpCounters {
    pub fn add(&mut self, o: &OpCounters) {
        self.interactions += o.interactions;
        self.bpr_pairs += o.bpr_pairs;
        self.fairness_sets += o.fairness_sets;
        self.ranking_ops += o.ranking_ops;
        self.scoring_ops += o.scoring_ops;
        self.optimizer_steps += o.optimizer_steps;
    }
}

/// Batch-averaged losses of one epoch. Fairness fields are averaged over
/// batches where both groups were present and are absent otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub rec_loss: f64,
    pub fair_loss: Option<f64>,
    pub dpd_mean: Option<f64>,
    pub combined: f64,
    pub batches: usize,
    pub empty_group_batches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeriodKind {
    Pretrain,
    Retrain,
    Finetune,
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodLog {
    pub period: usize,
    pub kind: PeriodKind,
    pub epochs: Vec<EpochLog>,
    pub empty_group_batches: usize,
    pub counters: OpCounters,
}

impl PeriodLog {
    fn new(period: usize, kind: PeriodKind) -> Self {
        PeriodLog {
            period,
            kind,
            epochs: Vec::new(),
            empty_group_batches: 0,
            counters: OpCounters::default(),
        }
    }
}

/// Checkpoints, timings and loss curves of one strategy, one entry per
/// trained period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrajectory {
    pub strategy: String,
    #[serde(skip)]
    pub checkpoints: Vec<Checkpoint>,
    pub seconds: Vec<f64>,
    pub periods: Vec<PeriodLog>,
}

impl TrainingTrajectory {
    pub fn empty_group_batches(&self) -> usize {
        self.periods.iter().map(|p| p.empty_group_batches).sum()
    }

    pub fn params(&self, t: usize) -> Option<&ModelParams> {
        self.checkpoints.get(t).map(|c| &c.params)
    }
}

/// Positives of a training set and per-user exclusion lists for negatives.
struct TrainSet {
    positives: Vec<(u32, u32)>,
    seen: Vec<Vec<u32>>,
}

impl TrainSet {
    fn build(datasets: &[PeriodDataset]) -> Self {
        let users = datasets.iter().map(PeriodDataset::user_bound).max().unwrap_or(0);
        let mut seen: Vec<Vec<u32>> = vec![Vec::new(); users];
        let mut positives = Vec::with_capacity(datasets.iter().map(PeriodDataset::size).sum());
        for d in datasets {
            positives.extend_from_slice(&d.positives);
            for (&u, items) in &d.per_user_positives {
                seen[u as usize].extend_from_slice(items);
            }
        }
        if datasets.len() > 1 {
            for s in &mut seen {
                s.sort_unstable();
                s.dedup();
            }
        }
        TrainSet { positives, seen }
    }
}

/// Scratch buffers reused across batches.
struct Workspace {
    grads: GradientSet,
    order: Vec<u32>,
    negatives: Vec<u32>,
    fair_negatives: Vec<u32>,
    extra: Vec<u32>,
    bpr_scores: Vec<f64>,
    fair_scores: Vec<f64>,
    fair_batch: FairnessBatch,
    pass: DpdPass,
}

impl Workspace {
    fn new(hp: &HyperParams) -> Self {
        Workspace {
            grads: GradientSet::new(hp.dim),
            order: Vec::new(),
            negatives: Vec::with_capacity(hp.neg),
            fair_negatives: Vec::with_capacity(hp.mu),
            extra: Vec::with_capacity(1),
            bpr_scores: Vec::with_capacity(hp.neg + 1),
            fair_scores: Vec::new(),
            fair_batch: FairnessBatch::new(hp.mu),
            pass: DpdPass::default(),
        }
    }
}

fn check_coverage(params: &ModelParams, set: &TrainSet) -> Result<()> {
    for &(u, i) in &set.positives {
        if u as usize >= params.num_users() {
            return Err(Error::Index {
                table: "user",
                index: u as usize,
                rows: params.num_users(),
            });
        }
        if i as usize >= params.num_items() {
            return Err(Error::Index {
                table: "item",
                index: i as usize,
                rows: params.num_items(),
            });
        }
    }
    Ok(())
}

/// Runs `epochs` epochs of mini-batch training on `set`. Streams are keyed
/// by `(seed, phase, period, epoch)`. Fairness candidate sets reuse the BPR
/// negatives and draw any shortfall from a separate stream, so disabling the
/// regularizer leaves every BPR draw unchanged.
#[allow(clippy::too_many_arguments)]
fn train_epochs(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    set: &TrainSet,
    attributes: &[u8],
    hp: &HyperParams,
    fair: Option<FairnessLoss>,
    epochs: usize,
    phase: u64,
    log: &mut PeriodLog,
) -> Result<()> {
    if set.positives.is_empty() {
        return Err(Error::Empty("training interactions"));
    }
    check_coverage(params, set)?;
    let fair = fair.filter(|_| hp.lambda > 0.0);
    let universe = params.num_items();
    if fair.is_some() && hp.mu > hp.neg {
        // The shortfall loop below needs mu distinct eligible items per user.
        for seen in &set.seen {
            let available = universe - seen.as_slice().excluded_within(universe);
            if available < hp.mu {
                return Err(Error::Sampling {
                    requested: hp.mu,
                    available,
                });
            }
        }
    }
    if fair.is_some() {
        if let Some(&(u, _)) = set.positives.iter().find(|&&(u, _)| u as usize >= attributes.len()) {
            return Err(Error::MissingAttribute(u.to_string()));
        }
    }
    let adam = hp.adam();
    let set_size = (hp.mu + 1) as u64;
    let mut ws = Workspace::new(hp);
    let period = log.period as u64;

    for epoch in 0..epochs as u64 {
        let mut bpr_rng: ChaCha8Rng = stream(hp.seed, &[TAG_BPR, phase, period, epoch]);
        let mut fair_rng: ChaCha8Rng = stream(hp.seed, &[TAG_FAIR, phase, period, epoch]);
        ws.order.clear();
        ws.order.extend(0..set.positives.len() as u32);
        ws.order.shuffle(&mut bpr_rng);

        let mut rec_sum = 0.0;
        let mut fair_sum = 0.0;
        let mut dpd_sum = 0.0;
        let mut combined_sum = 0.0;
        let mut fair_batches = 0usize;
        let mut empty = 0usize;
        let mut batches = 0usize;

        for chunk in ws.order.chunks(hp.batch_size) {
            ws.grads.clear();
            ws.fair_batch.clear();
            ws.fair_scores.clear();
            let weight = 1.0 / chunk.len() as f64;
            let mut rec = 0.0;
            for &idx in chunk {
                let (u, i) = set.positives[idx as usize];
                let seen = &set.seen[u as usize];
                ws.negatives.clear();
                sample_negatives_into(&mut bpr_rng, hp.neg, seen.as_slice(), universe, &mut ws.negatives)?;
                ws.bpr_scores.clear();
                rec += accumulate_bpr_scored(params, u, i, &ws.negatives, weight, &mut ws.grads, &mut ws.bpr_scores);
                if fair.is_some() {
                    // The candidate set reuses the BPR negatives; only the
                    // shortfall when mu > neg comes from the fairness stream.
                    ws.fair_negatives.clear();
                    let shared = hp.mu.min(hp.neg);
                    ws.fair_negatives.extend_from_slice(&ws.negatives[..shared]);
                    ws.fair_scores.extend_from_slice(&ws.bpr_scores[..=shared]);
                    while ws.fair_negatives.len() < hp.mu {
                        ws.extra.clear();
                        sample_negatives_into(&mut fair_rng, 1, seen.as_slice(), universe, &mut ws.extra)?;
                        let item = ws.extra[0];
                        if !ws.fair_negatives.contains(&item) {
                            ws.fair_negatives.push(item);
                            ws.fair_scores.push(params.score_unchecked(u, item));
                        }
                    }
                    ws.fair_batch.push(u, attributes[u as usize], i, &ws.fair_negatives)?;
                }
            }
            rec *= weight;
            log.counters.interactions += chunk.len() as u64;
            log.counters.bpr_pairs += (chunk.len() * hp.neg) as u64;

            let mut combined = rec;
            if let Some(loss) = fair {
                log.counters.fairness_sets += chunk.len() as u64;
                log.counters.ranking_ops += chunk.len() as u64 * set_size * set_size;
                log.counters.scoring_ops += chunk.len() as u64 * set_size * hp.dim as u64;
                match ws.pass.evaluate_scored(&ws.fair_batch, &ws.fair_scores, hp.tau) {
                    Ok(()) => {
                        let value = ws.pass.value;
                        let lf = loss.value(value);
                        ws.pass
                            .accumulate(params, &ws.fair_batch, hp.lambda * loss.derivative(value), &mut ws.grads);
                        combined += hp.lambda * lf;
                        fair_sum += lf;
                        dpd_sum += value;
                        fair_batches += 1;
                    }
                    Err(Error::GroupAbsent) => empty += 1,
                    Err(e) => return Err(e),
                }
            }
            adam_step(state, params, &ws.grads, &adam)?;
            log.counters.optimizer_steps += 1;
            rec_sum += rec;
            combined_sum += combined;
            batches += 1;
        }

        let mean = |s: f64, n: usize| s / n as f64;
        let entry = EpochLog {
            rec_loss: mean(rec_sum, batches),
            fair_loss: (fair_batches > 0).then(|| mean(fair_sum, fair_batches)),
            dpd_mean: (fair_batches > 0).then(|| mean(dpd_sum, fair_batches)),
            combined: mean(combined_sum, batches),
            batches,
            empty_group_batches: empty,
        };
        log::debug!(
            "period {} epoch {}: rec {:.6} combined {:.6} dpd {:?}",
            log.period,
            epoch,
            entry.rec_loss,
            entry.combined,
            entry.dpd_mean
        );
        log.empty_group_batches += empty;
        log.epochs.push(entry);
    }
    Ok(())
}

/// Fine-tunes on one period for `hp.epochs_update` epochs. The tables must
/// already cover every id in `dataset`.
pub fn finetune_period(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    dataset: &PeriodDataset,
    attributes: &[u8],
    hp: &HyperParams,
    fair: Option<FairnessLoss>,
) -> Result<PeriodLog> {
    hp.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("period dataset"));
    }
    if params.dim != hp.dim {
        return Err(Error::InvalidArgument(format!(
            "model dimension {} differs from configured {}",
            params.dim, hp.dim
        )));
    }
    let set = TrainSet::build(std::slice::from_ref(dataset));
    let mut log = PeriodLog::new(dataset.index, PeriodKind::Finetune);
    train_epochs(
        params,
        state,
        &set,
        attributes,
        hp,
        fair,
        hp.epochs_update,
        PHASE_UPDATE,
        &mut log,
    )?;
    Ok(log)
}

/// Trains a freshly initialized model on all of `datasets` for
/// `hp.epochs_pretrain` epochs. Retraining through period 0 is pretraining.
pub fn retrain(
    datasets: &[PeriodDataset],
    attributes: &[u8],
    hp: &HyperParams,
    fair: Option<FairnessLoss>,
) -> Result<(ModelParams, OptimizerState, PeriodLog)> {
    hp.validate()?;
    let t = datasets.len().checked_sub(1).ok_or(Error::Empty("datasets"))?;
    let users = datasets.iter().map(PeriodDataset::user_bound).max().unwrap_or(0);
    let items = datasets.iter().map(PeriodDataset::item_bound).max().unwrap_or(0);
    let mut params = init_params(
        &mut stream(hp.seed, &[TAG_INIT, t as u64]),
        users,
        items,
        hp.dim,
        hp.init_scale,
    )?;
    let mut state = OptimizerState::for_params(&params);
    let kind = if t == 0 {
        PeriodKind::Pretrain
    } else {
        PeriodKind::Retrain
    };
    let mut log = PeriodLog::new(t, kind);
    let set = TrainSet::build(datasets);
    train_epochs(
        &mut params,
        &mut state,
        &set,
        attributes,
        hp,
        fair,
        hp.epochs_pretrain,
        PHASE_FULL,
        &mut log,
    )?;
    Ok((params, state, log))
}

/// Trains through periods `0..T` of `datasets` (`T = datasets.len() - 1`;
/// the last period is held out for testing) and records one checkpoint per
/// period.
pub fn run_strategy(
    strategy: &Strategy,
    datasets: &[PeriodDataset],
    attributes: &[u8],
    hp: &HyperParams,
) -> Result<TrainingTrajectory> {
    hp.validate()?;
    strategy.validate()?;
    if datasets.is_empty() {
        return Err(Error::Empty("datasets"));
    }
    let last = datasets.len().saturating_sub(2);
    let mut traj = TrainingTrajectory {
        strategy: strategy.name(),
        checkpoints: Vec::with_capacity(last + 1),
        seconds: Vec::with_capacity(last + 1),
        periods: Vec::with_capacity(last + 1),
    };

    // Fine-tuning strategies regularize only their updates; their base model
    // and restarts are trained without the fairness term.
    let full_fair = match strategy.base {
        BaseStrategy::Finetune => None,
        _ => strategy.fair,
    };
    let start = Instant::now();
    let (mut params, mut state, log) = retrain(&datasets[..1], attributes, hp, full_fair)?;
    traj.seconds.push(start.elapsed().as_secs_f64());
    traj.periods.push(log);
    traj.checkpoints.push(Checkpoint {
        params: params.clone(),
        state: state.clone(),
        rng: None,
    });

    for t in 1..=last {
        let start = Instant::now();
        let log = match strategy.base {
            BaseStrategy::Pretrain => PeriodLog::new(t, PeriodKind::Frozen),
            BaseStrategy::Retrain => {
                let (p, s, log) = retrain(&datasets[..=t], attributes, hp, strategy.fair)?;
                params = p;
                state = s;
                log
            }
            BaseStrategy::Finetune if strategy.restarts_at(t) => {
                let (p, s, log) = retrain(&datasets[..=t], attributes, hp, full_fair)?;
                params = p;
                state = s;
                log
            }
            BaseStrategy::Finetune => {
                let d = &datasets[t];
                let users = params.num_users().max(d.user_bound());
                let items = params.num_items().max(d.item_bound());
                grow_tables(
                    &mut params,
                    &mut state,
                    users,
                    items,
                    &mut stream(hp.seed, &[TAG_GROW, t as u64]),
                    hp.init_scale,
                )?;
                finetune_period(&mut params, &mut state, d, attributes, hp, strategy.fair)?
            }
        };
        traj.seconds.push(start.elapsed().as_secs_f64());
        traj.periods.push(log);
        traj.checkpoints.push(Checkpoint {
            params: params.clone(),
            state: state.clone(),
            rng: None,
        });
    }
    Ok(traj)
}

/// Writes `period_{t}.ckpt` for every checkpoint and `trajectory.json`.
pub fn save_trajectory(traj: &TrainingTrajectory, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (t, ck) in traj.checkpoints.iter().enumerate() {
        ck.save(&dir.join(format!("period_{t}.ckpt")))?;
    }
    fs::write(dir.join("trajectory.json"), serde_json::to_vec_pretty(traj)?)?;
    Ok(())
}
