//! Fixtures shared by the benchmarks.

use fade_core::data::{binarize, temporal_split};
use fade_core::experiment::load_log;
use fade_core::model::{init_params, BprExample};
use fade_core::rng::stream;
use fade_core::{DataSource, ExperimentConfig, FairnessBatch, HyperParams, ModelParams, PeriodDataset};

pub struct Fixture {
    pub datasets: Vec<PeriodDataset>,
    pub attributes: Vec<u8>,
    pub hp: HyperParams,
}

/// Splits a generated log, e.g. `users=2000 items=500 periods=5`.
pub fn fixture(synthetic: &str) -> Fixture {
    let synth: fade_core::SyntheticConfig = synthetic.parse().expect("valid generator spec");
    let cfg = ExperimentConfig {
        periods: synth.periods,
        data: DataSource::Synthetic(synth),
        dynamic_fraction: 0.4,
        ..ExperimentConfig::default()
    };
    let raw = load_log(&cfg).expect("generated log");
    let log = binarize(&raw, cfg.binarize_threshold);
    let datasets = temporal_split(&log, cfg.pretrain_fraction, cfg.dynamic_fraction, cfg.periods).expect("split");
    let hp = HyperParams {
        dim: 16,
        batch_size: 256,
        epochs_pretrain: 5,
        epochs_update: 1,
        ..HyperParams::default()
    };
    Fixture {
        datasets,
        attributes: raw.user_attributes,
        hp,
    }
}

/// Distinct, unsorted scores in (-1, 1).
pub fn candidate_scores(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 + 1.0) * 2.399963).sin()).collect()
}

pub fn random_params(users: usize, items: usize, dim: usize) -> ModelParams {
    init_params(&mut stream(7, &[users as u64, items as u64]), users, items, dim, 0.5).expect("valid shape")
}

/// `size` BPR examples with `neg` negatives each, cycling through users and
/// items deterministically.
pub fn bpr_batch(users: usize, items: usize, size: usize, neg: usize) -> Vec<BprExample> {
    (0..size)
        .map(|e| BprExample {
            user: (e % users) as u32,
            positive: ((e * 13) % items) as u32,
            negatives: (1..=neg).map(|j| ((e * 13 + j * 31) % items) as u32).collect(),
        })
        .collect()
}

/// Alternating-group fairness sets of `mu` negatives.
pub fn fairness_batch(users: usize, items: usize, size: usize, mu: usize) -> FairnessBatch {
    let mut batch = FairnessBatch::new(mu);
    for e in 0..size {
        let positive = ((e * 13) % items) as u32;
        let negatives: Vec<u32> = (1..=mu).map(|j| ((e * 13 + j * 31) % items) as u32).collect();
        batch.push((e % users) as u32, (e % 2) as u8, positive, &negatives).expect("valid set");
    }
    batch
}
