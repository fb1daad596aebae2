//! Oracles shared by the integration tests: central differences, rank
//! counting and the synthetic fixture configuration.
#![allow(dead_code)]

use fade_core::experiment::DataSource;
use fade_core::{ExperimentConfig, ModelParams, SyntheticConfig, Task};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Distinct scores whose sorted neighbours are at least `min_gap` apart, in
/// random order.
pub fn spaced_scores(rng: &mut ChaCha8Rng, n: usize, min_gap: f64) -> Vec<f64> {
    let mut acc = rng.gen_range(-3.0..3.0);
    let mut scores: Vec<f64> = (0..n)
        .map(|_| {
            acc += rng.gen_range(min_gap..min_gap * 5.0);
            acc
        })
        .collect();
    scores.shuffle(rng);
    scores
}

/// Smallest pairwise distance of a score vector.
pub fn min_gap(scores: &[f64]) -> f64 {
    let mut gap = f64::INFINITY;
    for a in 0..scores.len() {
        for b in (a + 1)..scores.len() {
            gap = gap.min((scores[a] - scores[b]).abs());
        }
    }
    gap
}

/// 1-based rank of candidate `c`, computed by counting the candidates that
/// beat it: a higher score, or an equal score and a lower tie key.
pub fn counted_rank(scores: &[f64], keys: &[u64], c: usize) -> usize {
    1 + (0..scores.len())
        .filter(|&o| o != c && (scores[o] > scores[c] || (scores[o] == scores[c] && keys[o] < keys[c])))
        .count()
}

/// NDCG@K, F1@K and Hit@K by literal formula over counted ranks.
pub fn brute_metrics(items: &[u32], scores: &[f64], relevant: &[bool], k: usize) -> [f64; 3] {
    let keys: Vec<u64> = items.iter().map(|&i| i as u64).collect();
    let total = relevant.iter().filter(|&&r| r).count();
    let mut dcg = 0.0;
    let mut hits = 0usize;
    for c in 0..items.len() {
        let r = counted_rank(scores, &keys, c);
        if relevant[c] && r <= k {
            hits += 1;
            dcg += 1.0 / ((r + 1) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for r in 1..=total.min(k) {
        idcg += 1.0 / ((r + 1) as f64).log2();
    }
    let precision = hits as f64 / k as f64;
    let recall = hits as f64 / total as f64;
    let f1 = if hits == 0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    [dcg / idcg, f1, if hits > 0 { 1.0 } else { 0.0 }]
}

/// Exact NDCG@K of a candidate list with index tie-breaking.
pub fn brute_ndcg(scores: &[f64], relevant: &[bool], k: usize) -> f64 {
    let items: Vec<u32> = (0..scores.len() as u32).collect();
    brute_metrics(&items, scores, relevant, k.min(scores.len()))[0]
}

/// Symmetric relative error with a floor so that components that are zero
/// up to rounding do not blow up the ratio.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Worst component-wise relative error between an analytic gradient and
/// central differences of `f` around `x`.
pub fn check_gradient(x: &[f64], analytic: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// Flattens both tables in `[users | items]` layout.
pub fn flatten(params: &ModelParams) -> Vec<f64> {
    let mut out = params.user_emb.clone();
    out.extend_from_slice(&params.item_emb);
    out
}

pub fn unflatten(flat: &[f64], num_users: usize, dim: usize) -> ModelParams {
    let split = num_users * dim;
    ModelParams {
        dim,
        user_emb: flat[..split].to_vec(),
        item_emb: flat[split..].to_vec(),
    }
}

pub fn random_params(rng: &mut ChaCha8Rng, users: usize, items: usize, dim: usize, scale: f64) -> ModelParams {
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-scale..scale)).collect() };
    let user_emb = draw(users * dim);
    let item_emb = draw(items * dim);
    ModelParams {
        dim,
        user_emb,
        item_emb,
    }
}

pub const FIXTURE: &str = "users=2000 items=500 periods=5 disparity=0.5 segregation=0.7";

/// The planted-disparity experiment: five periods after pretraining, Hit@10
/// on the next period, batch 256 so a period gives enough update steps.
pub fn fixture_config(seed: u64) -> ExperimentConfig {
    let synth: SyntheticConfig = FIXTURE.parse().expect("fixture parses");
    let mut cfg = ExperimentConfig::default();
    cfg.periods = synth.periods;
    cfg.data = DataSource::Synthetic(synth);
    cfg.pretrain_fraction = 0.6;
    cfg.dynamic_fraction = 0.4;
    cfg.hyper.dim = 16;
    cfg.hyper.batch_size = 256;
    cfg.eval.k = 10;
    cfg.eval.task = Task::Next;
    cfg.seed = seed;
    cfg
}

/// A small fixture for pipeline tests that must stay fast.
pub fn tiny_config(seed: u64) -> ExperimentConfig {
    let synth: SyntheticConfig = "users=120 items=80 periods=3 activity=12".parse().expect("tiny fixture parses");
    let mut cfg = ExperimentConfig::default();
    cfg.periods = synth.periods;
    cfg.data = DataSource::Synthetic(synth);
    cfg.dynamic_fraction = 0.4;
    cfg.hyper.dim = 8;
    cfg.hyper.batch_size = 64;
    cfg.hyper.epochs_pretrain = 3;
    cfg.hyper.epochs_update = 2;
    cfg.eval.k = 5;
    cfg.eval.num_eval_negatives = 20;
    cfg.seed = seed;
    cfg
}
