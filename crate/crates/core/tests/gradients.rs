//! Central-difference oracles for every analytic gradient, on random
//! instances drawn from proptest seeds.

mod common;

use common::*;
use fade_core::fairness::{dpd, fairness_loss_fade};
use fade_core::model::{bpr_loss_and_grad, sigmoid, BprExample};
use fade_core::ranking::{approx_ndcg_user, differentiable_hit};
use fade_core::{CandidateSet, FairnessBatch, FairnessLoss, RankingWorkspace};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bpr_gradient(seed in any::<u64>(), users in 1usize..=8, items in 2usize..=8, dim in 1usize..=8) {
        let mut rng = rng(seed);
        let params = random_params(&mut rng, users, items, dim, 1.0);
        let batch: Vec<BprExample> = (0..rng.gen_range(1..6))
            .map(|_| {
                let mut pool: Vec<u32> = (0..items as u32).collect();
                pool.shuffle(&mut rng);
                let negs = rng.gen_range(1..items);
                BprExample {
                    user: rng.gen_range(0..users as u32),
                    positive: pool[0],
                    negatives: pool[1..=negs].to_vec(),
                }
            })
            .collect();
        let (loss, g) = bpr_loss_and_grad(&params, &batch).unwrap();
        prop_assert!(loss > 0.0);
        let err = check_gradient(&flatten(&params), &g.to_dense(users, items), H, |p| {
            bpr_loss_and_grad(&unflatten(p, users, dim), &batch).unwrap().0
        });
        prop_assert!(err <= TOL, "relative error {}", err);
    }

    #[test]
    fn dh_and_ndcg_gradients(seed in any::<u64>(), n in 2usize..=8, tau in 0.5f64..5.0) {
        let mut rng = rng(seed);
        let scores = spaced_scores(&mut rng, n, 0.05);
        let mut relevance: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        relevance[rng.gen_range(0..n)] = true;
        for k in 1..=n {
            let (_, g) = differentiable_hit(&RankingWorkspace::new(&scores, tau).unwrap(), &relevance, k).unwrap();
            let err = check_gradient(&scores, &g, H, |s| {
                differentiable_hit(&RankingWorkspace::new(s, tau).unwrap(), &relevance, k).unwrap().0
            });
            prop_assert!(err <= TOL, "DH@{} relative error {}", k, err);

            let set = CandidateSet { scores: scores.clone(), relevance: relevance.clone() };
            let (_, g) = approx_ndcg_user(&set, k, tau).unwrap().unwrap();
            let err = check_gradient(&scores, &g, H, |s| {
                let set = CandidateSet { scores: s.to_vec(), relevance: relevance.clone() };
                approx_ndcg_user(&set, k, tau).unwrap().unwrap().0
            });
            prop_assert!(err <= TOL, "NDCG@{} relative error {}", k, err);
        }
    }

    #[test]
    fn dpd_and_fairness_gradients(seed in any::<u64>(), mu in 1usize..=5, sets in 2usize..=12, tau in 0.5f64..4.0) {
        let mut rng = rng(seed);
        let (users, items, dim) = (6usize, 10usize, 3usize);
        let (params, batch) = loop {
            let params = random_params(&mut rng, users, items, dim, 1.0);
            let mut batch = FairnessBatch::new(mu);
            let mut clear_of_ties = true;
            for e in 0..sets {
                // Alternate groups for the first two sets so both are present.
                let user = if e < 2 { e as u32 } else { rng.gen_range(0..users as u32) };
                let mut pool: Vec<u32> = (0..items as u32).collect();
                pool.shuffle(&mut rng);
                batch.push(user, (user % 2) as u8, pool[0], &pool[1..=mu]).unwrap();
                let scores: Vec<f64> = pool[..=mu].iter().map(|&i| params.score_unchecked(user, i)).collect();
                clear_of_ties &= min_gap(&scores) >= 1e-2;
            }
            if clear_of_ties {
                break (params, batch);
            }
        };
        let x = flatten(&params);
        let res = dpd(&params, &batch, tau).unwrap();
        let g = res.grad.to_dense(users, items);
        let value = |p: &[f64]| dpd(&unflatten(p, users, dim), &batch, tau).unwrap().value;
        let err = check_gradient(&x, &g, H, value);
        prop_assert!(err <= TOL, "DPD relative error {}", err);

        // The FADE loss gradient is sigmoid(DPD) times the DPD gradient.
        let fade: Vec<f64> = g.iter().map(|v| sigmoid(res.value) * v).collect();
        let err = check_gradient(&x, &fade, H, |p| fairness_loss_fade(value(p)));
        prop_assert!(err <= TOL, "FADE loss relative error {}", err);
        prop_assert_eq!(FairnessLoss::Fade.derivative(res.value), sigmoid(res.value));

        if res.value.abs() > 1e-2 {
            let s = FairnessLoss::Abs.derivative(res.value);
            let abs: Vec<f64> = g.iter().map(|v| s * v).collect();
            let err = check_gradient(&x, &abs, H, |p| FairnessLoss::Abs.value(value(p)));
            prop_assert!(err <= TOL, "abs loss relative error {}", err);
        }
    }
}

#[test]
fn fade_loss_is_convex_increasing_and_lipschitz() {
    let xs: Vec<f64> = (-400..=400).map(|i| i as f64 / 40.0).collect();
    for w in xs.windows(3) {
        let (a, b, c) = (fairness_loss_fade(w[0]), fairness_loss_fade(w[1]), fairness_loss_fade(w[2]));
        assert!(a < b && b < c);
        assert!(b <= 0.5 * (a + c) + 1e-15);
        assert!((c - a).abs() <= (w[2] - w[0]) + 1e-15);
    }
}
