//! Exact metrics against the rank-counting oracle, and evaluation reports
//! against per-user records.

mod common;

use common::*;
use fade_core::data::{binarize, temporal_split};
use fade_core::eval::{evaluate_task, exact_metrics, EvalContext};
use fade_core::experiment::load_log;
use fade_core::model::init_params;
use fade_core::{EvalConfig, Task};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

proptest! {
    #[test]
    fn exact_metrics_match_oracle(seed in any::<u64>(), n in 1usize..40, k in 1usize..50, levels in 1u32..10) {
        let mut rng = rng(seed);
        let mut pool: Vec<u32> = (0..1000).collect();
        pool.shuffle(&mut rng);
        let items = &pool[..n];
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64).collect();
        let mut relevant: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        relevant[rng.gen_range(0..n)] = true;
        let got = exact_metrics(items, &scores, &relevant, k).unwrap().values();
        let want = brute_metrics(items, &scores, &relevant, k);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-12, "{:?} vs {:?}", got, want);
            prop_assert!((0.0..=1.0).contains(g));
        }
    }

    /// NDCG is 1 exactly when the top `min(K, |relevant|)` slots hold only
    /// relevant items.
    #[test]
    fn perfect_ndcg_characterization(seed in any::<u64>(), n in 1usize..20, k in 1usize..25) {
        let mut rng = rng(seed);
        let items: Vec<u32> = (0..n as u32).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut relevant: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        relevant[rng.gen_range(0..n)] = true;
        let m = exact_metrics(&items, &scores, &relevant, k).unwrap();
        let total = relevant.iter().filter(|&&r| r).count();
        let keys: Vec<u64> = items.iter().map(|&i| i as u64).collect();
        let top_all_relevant = (0..n)
            .filter(|&c| counted_rank(&scores, &keys, c) <= total.min(k))
            .all(|c| relevant[c]);
        prop_assert_eq!(m.ndcg >= 1.0 - 1e-12, top_all_relevant);
    }
}

#[test]
fn report_disparity_equals_recomputed_group_means() {
    let cfg = tiny_config(11);
    let raw = load_log(&cfg).unwrap();
    let log = binarize(&raw, cfg.binarize_threshold);
    let datasets = temporal_split(&log, cfg.pretrain_fraction, cfg.dynamic_fraction, cfg.periods).unwrap();
    let ctx = EvalContext::new(&datasets, &raw.user_attributes).with_universe(raw.item_count);
    let params = init_params(&mut rng(3), raw.user_count, raw.item_count, 8, 0.5).unwrap();
    for task in [Task::Remain, Task::Next] {
        let eval = EvalConfig {
            k: 5,
            num_eval_negatives: 20,
            task,
            seed: 9,
        };
        for t in 0..ctx.periods() {
            let pm = evaluate_task(&params, &ctx, t, &eval).unwrap();
            let mut sums = [[0.0; 3]; 2];
            let mut counts = [0usize; 2];
            for r in &pm.users {
                counts[r.group as usize] += 1;
                for (s, v) in sums[r.group as usize].iter_mut().zip(r.metrics.values()) {
                    *s += v;
                }
            }
            assert_eq!(counts, [pm.groups[0].users, pm.groups[1].users]);
            let pd = pm.pd.expect("both groups evaluated").values();
            for m in 0..3 {
                let recomputed = sums[0][m] / counts[0] as f64 - sums[1][m] / counts[1] as f64;
                assert!((pd[m] - recomputed).abs() <= 1e-12);
            }
            assert_eq!(pm.overall.users, counts[0] + counts[1]);
        }
    }
}

#[test]
fn evaluation_is_strategy_independent_in_its_candidates() {
    // Identical models must score identically, and the candidate draw must
    // not depend on anything but (seed, user, period).
    let cfg = tiny_config(12);
    let raw = load_log(&cfg).unwrap();
    let log = binarize(&raw, cfg.binarize_threshold);
    let datasets = temporal_split(&log, cfg.pretrain_fraction, cfg.dynamic_fraction, cfg.periods).unwrap();
    let ctx = EvalContext::new(&datasets, &raw.user_attributes).with_universe(raw.item_count);
    let params = init_params(&mut rng(4), raw.user_count, raw.item_count, 8, 0.5).unwrap();
    let eval = cfg.eval_config();
    let a = evaluate_task(&params, &ctx, 1, &eval).unwrap();
    let b = evaluate_task(&params.clone(), &ctx, 1, &eval).unwrap();
    assert_eq!(a, b);
    assert!(evaluate_task(&params, &ctx, ctx.periods(), &eval).is_err());
}
