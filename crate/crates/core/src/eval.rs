//! Top-K metrics under the sampled-negative protocol, per-group averages and
//! performance disparity.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_negatives_into, PeriodDataset};
use crate::error::{Error, Result};
use crate::model::Scorer;
use crate::rng::derive_seed;

/// Which future periods form the test set of checkpoint `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// All remaining periods `t+1..=T`.
    Remain,
    /// Only period `t+1`.
    Next,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remain" | "r" | "task-r" => Ok(Task::Remain),
            "next" | "n" | "task-n" => Ok(Task::Next),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k: usize,
    pub num_eval_negatives: usize,
    pub task: Task,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 20,
            num_eval_negatives: 100,
            task: Task::Remain,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if self.num_eval_negatives == 0 {
            return Err(Error::Config("at least one evaluation negative is required".into()));
        }
        Ok(())
    }
}

/// NDCG@K, F1@K and Hit@K of one ranked list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ndcg: f64,
    pub f1: f64,
    pub hit: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 3] = ["ndcg", "f1", "hit"];

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "ndcg" => Some(self.ndcg),
            "f1" => Some(self.f1),
            "hit" => Some(self.hit),
            _ => None,
        }
    }

    pub fn values(&self) -> [f64; 3] {
        [self.ndcg, self.f1, self.hit]
    }

    fn add(&mut self, other: &Metrics) {
        self.ndcg += other.ndcg;
        self.f1 += other.f1;
        self.hit += other.hit;
    }

    fn scaled(&self, factor: f64) -> Metrics {
        Metrics {
            ndcg: self.ndcg * factor,
            f1: self.f1 * factor,
            hit: self.hit * factor,
        }
    }
}

/// Exact metrics of a candidate list. Candidates are ranked by descending
/// score with ties broken by the lower item id. Returns an error when no
/// candidate is relevant.
pub fn exact_metrics(items: &[u32], scores: &[f64], relevant: &[bool], k: usize) -> Result<Metrics> {
    if items.len() != scores.len() || items.len() != relevant.len() {
        return Err(Error::InvalidArgument("candidate, score and label lengths differ".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    let total_relevant = relevant.iter().filter(|&&r| r).count();
    if total_relevant == 0 {
        return Err(Error::Empty("relevant candidates"));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(items[a].cmp(&items[b])));

    let mut dcg = 0.0;
    let mut hits = 0usize;
    for (pos, &c) in order.iter().take(k).enumerate() {
        if relevant[c] {
            hits += 1;
            dcg += 1.0 / (pos as f64 + 2.0).log2();
        }
    }
    let ideal = crate::ranking::ideal_dcg(total_relevant, k);
    let precision = hits as f64 / k as f64;
    let recall = hits as f64 / total_relevant as f64;
    let f1 = if hits == 0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics {
        ndcg: dcg / ideal,
        f1,
        hit: if hits > 0 { 1.0 } else { 0.0 },
    })
}

/// `group0 - group1`.
pub fn performance_disparity(group0_mean: f64, group1_mean: f64) -> f64 {
    group0_mean - group1_mean
}

/// A user's evaluation candidates: test positives first, then negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCandidates {
    pub items: Vec<u32>,
    pub relevant_count: usize,
}

impl EvalCandidates {
    pub fn relevance(&self) -> Vec<bool> {
        (0..self.items.len()).map(|j| j < self.relevant_count).collect()
    }
}

/// Test positives plus `cfg.num_eval_negatives` items drawn uniformly from
/// `0..universe` excluding the user's whole history. The draw depends only
/// on `(cfg.seed, user, period)`. Returns `None` for users without test
/// positives.
pub fn build_eval_candidates(
    user: u32,
    period: usize,
    test_positives: &[u32],
    history: &[u32],
    universe: usize,
    cfg: &EvalConfig,
) -> Result<Option<EvalCandidates>> {
    if test_positives.is_empty() {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0xE7A1, user as u64, period as u64]));
    let mut items = test_positives.to_vec();
    sample_negatives_into(&mut rng, cfg.num_eval_negatives, history, universe, &mut items)?;
    Ok(Some(EvalCandidates {
        items,
        relevant_count: test_positives.len(),
    }))
}

/// Metrics of one evaluated user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user: u32,
    pub group: u8,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub users: usize,
    pub metrics: Metrics,
}

/// Evaluation of one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodMetrics {
    pub period: usize,
    pub overall: GroupMetrics,
    pub groups: [GroupMetrics; 2],
    /// `groups[0] - groups[1]`, absent when a group has no evaluated user.
    pub pd: Option<Metrics>,
    /// Users with test positives but no training history up to `period`.
    pub excluded_cold_users: usize,
    pub users: Vec<UserRecord>,
}

/// Everything the evaluator needs besides the model: the periods, the
/// per-user history used to exclude negatives and the group labels.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    pub datasets: &'a [PeriodDataset],
    pub attributes: &'a [u8],
    pub universe: usize,
    history: BTreeMap<u32, Vec<u32>>,
}

impl<'a> EvalContext<'a> {
    /// History covers every positive of every period.
    pub fn new(datasets: &'a [PeriodDataset], attributes: &'a [u8]) -> Self {
        let mut merged: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for d in datasets {
            for (&u, items) in &d.per_user_positives {
                merged.entry(u).or_default().extend(items.iter().copied());
            }
        }
        let universe = datasets.iter().map(PeriodDataset::item_bound).max().unwrap_or(0);
        EvalContext {
            datasets,
            attributes,
            universe,
            history: merged
                .into_iter()
                .map(|(u, s)| (u, s.into_iter().collect()))
                .collect(),
        }
    }

    pub fn with_universe(mut self, universe: usize) -> Self {
        self.universe = self.universe.max(universe);
        self
    }

    /// Number of dynamic periods `T`.
    pub fn periods(&self) -> usize {
        self.datasets.len().saturating_sub(1)
    }

    pub fn history(&self, user: u32) -> &[u32] {
        self.history.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }

    fn test_positives(&self, t: usize, task: Task) -> BTreeMap<u32, BTreeSet<u32>> {
        let last = match task {
            Task::Next => t + 1,
            Task::Remain => self.periods(),
        };
        let mut out: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for d in &self.datasets[t + 1..=last] {
            for (&u, items) in &d.per_user_positives {
                out.entry(u).or_default().extend(items.iter().copied());
            }
        }
        out
    }
}

/// Evaluates the checkpoint trained through period `t` on the task's test
/// periods. Only users seen in periods `0..=t` are scored, so every strategy
/// is measured on the same users and candidate sets.
pub fn evaluate_task<S: Scorer + ?Sized>(
    model: &S,
    ctx: &EvalContext<'_>,
    t: usize,
    cfg: &EvalConfig,
) -> Result<PeriodMetrics> {
    cfg.validate()?;
    if t >= ctx.periods() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint {t} has no later period to test on (T = {})",
            ctx.periods()
        )));
    }
    let test = ctx.test_positives(t, cfg.task);
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let seen: BTreeSet<u32> = ctx.datasets[..=t]
        .iter()
        .flat_map(|d| d.users.iter().copied())
        .collect();

    let mut users = Vec::new();
    let mut excluded = 0usize;
    let mut scores = Vec::new();
    for (&user, positives) in &test {
        if !seen.contains(&user) {
            excluded += 1;
            continue;
        }
        let positives: Vec<u32> = positives.iter().copied().collect();
        let Some(cands) = build_eval_candidates(user, t, &positives, ctx.history(user), ctx.universe, cfg)? else {
            continue;
        };
        scores.clear();
        scores.extend(cands.items.iter().map(|&i| model.score_or_zero(user, i)));
        let metrics = exact_metrics(&cands.items, &scores, &cands.relevance(), cfg.k)?;
        users.push(UserRecord {
            user,
            group: ctx.attributes.get(user as usize).copied().unwrap_or(0),
            metrics,
        });
    }
    Ok(aggregate(t, users, excluded))
}

/// Group means, overall mean and disparity from per-user records.
pub fn aggregate(period: usize, users: Vec<UserRecord>, excluded_cold_users: usize) -> PeriodMetrics {
    let mut sums = [Metrics::default(); 2];
    let mut counts = [0usize; 2];
    let mut total = Metrics::default();
    for r in &users {
        sums[r.group as usize].add(&r.metrics);
        counts[r.group as usize] += 1;
        total.add(&r.metrics);
    }
    let mean = |m: &Metrics, n: usize| if n == 0 { Metrics::default() } else { m.scaled(1.0 / n as f64) };
    let groups = [
        GroupMetrics {
            users: counts[0],
            metrics: mean(&sums[0], counts[0]),
        },
        GroupMetrics {
            users: counts[1],
            metrics: mean(&sums[1], counts[1]),
        },
    ];
    let pd = (counts[0] > 0 && counts[1] > 0).then(|| Metrics {
        ndcg: performance_disparity(groups[0].metrics.ndcg, groups[1].metrics.ndcg),
        f1: performance_disparity(groups[0].metrics.f1, groups[1].metrics.f1),
        hit: performance_disparity(groups[0].metrics.hit, groups[1].metrics.hit),
    });
    PeriodMetrics {
        period,
        overall: GroupMetrics {
            users: users.len(),
            metrics: mean(&total, users.len()),
        },
        groups,
        pd,
        excluded_cold_users,
        users,
    }
}

/// Period-averaged summary of a metrics series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub mean_performance: Metrics,
    /// Mean of signed disparities over periods where it is defined.
    pub mean_pd: Metrics,
    /// Mean of absolute disparities over periods where it is defined.
    pub mean_abs_pd: Metrics,
    pub periods: usize,
}

/// Averages over the given checkpoints.
pub fn summarize<'a>(periods: impl IntoIterator<Item = &'a PeriodMetrics>) -> MetricsSummary {
    let mut perf = Metrics::default();
    let mut pd = Metrics::default();
    let mut abs_pd = Metrics::default();
    let (mut n, mut n_pd) = (0usize, 0usize);
    for p in periods {
        perf.add(&p.overall.metrics);
        n += 1;
        if let Some(d) = p.pd {
            pd.add(&d);
            abs_pd.add(&Metrics {
                ndcg: d.ndcg.abs(),
                f1: d.f1.abs(),
                hit: d.hit.abs(),
            });
            n_pd += 1;
        }
    }
    let inv = |c: usize| if c == 0 { 0.0 } else { 1.0 / c as f64 };
    MetricsSummary {
        mean_performance: perf.scaled(inv(n)),
        mean_pd: pd.scaled(inv(n_pd)),
        mean_abs_pd: abs_pd.scaled(inv(n_pd)),
        periods: n,
    }
}
