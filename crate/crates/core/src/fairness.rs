//! Differentiable performance disparity between the two user groups and the
//! fairness losses built on it.
//!
//! Each interaction contributes a candidate set made of its positive item
//! followed by sampled negatives. The soft top-1 hit of the positive is
//! averaged per group; the disparity is `mean(group 0) - mean(group 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{axpy, dot, sigmoid, softplus, GradientSet, ModelParams, Side};
use crate::ranking::{dh_into, DhScratch};

/// Candidate sets of a mini-batch stored flat. Set `e` occupies
/// `candidates[e * set_size..(e + 1) * set_size]` and its first element is
/// the positive item.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FairnessBatch {
    set_size: usize,
    users: Vec<u32>,
    attributes: Vec<u8>,
    candidates: Vec<u32>,
}

impl FairnessBatch {
    /// `negatives_per_set` is μ; every set holds μ + 1 items.
    pub fn new(negatives_per_set: usize) -> Self {
        FairnessBatch {
            set_size: negatives_per_set + 1,
            ..Default::default()
        }
    }

    pub fn clear(&mut self) {
        self.users.clear();
        self.attributes.clear();
        self.candidates.clear();
    }

    /// Appends one candidate set. `negatives` must not contain `positive`.
    pub fn push(&mut self, user: u32, attribute: u8, positive: u32, negatives: &[u32]) -> Result<()> {
        if negatives.len() + 1 != self.set_size {
            return Err(Error::InvalidArgument(format!(
                "expected {} negatives, got {}",
                self.set_size - 1,
                negatives.len()
            )));
        }
        if negatives.contains(&positive) {
            return Err(Error::InvalidArgument(format!(
                "positive item {positive} appears among its negatives"
            )));
        }
        if attribute > 1 {
            return Err(Error::InvalidArgument(format!("attribute {attribute} is not binary")));
        }
        self.users.push(user);
        self.attributes.push(attribute);
        self.candidates.push(positive);
        self.candidates.extend_from_slice(negatives);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn set_size(&self) -> usize {
        self.set_size
    }

    pub fn user(&self, e: usize) -> u32 {
        self.users[e]
    }

    pub fn attribute(&self, e: usize) -> u8 {
        self.attributes[e]
    }

    pub fn candidates(&self, e: usize) -> &[u32] {
        &self.candidates[e * self.set_size..(e + 1) * self.set_size]
    }

    pub fn group_sizes(&self) -> [usize; 2] {
        let ones = self.attributes.iter().filter(|&&a| a == 1).count();
        [self.len() - ones, ones]
    }
}

/// Value of the disparity with its gradient over the touched rows.
#[derive(Debug, Clone)]
pub struct DpdResult {
    pub value: f64,
    pub group_means: [f64; 2],
    pub grad: GradientSet,
}

/// Per-set soft hits and score gradients, kept so the embedding gradient can
/// be accumulated with any outer weight once the disparity is known.
#[derive(Debug, Default, Clone)]
pub(crate) struct DpdPass {
    hits: Vec<f64>,
    score_grads: Vec<f64>,
    scores: Vec<f64>,
    scratch: DhScratch,
    pub value: f64,
    pub group_means: [f64; 2],
    group_sizes: [usize; 2],
    user_grad: Vec<f64>,
}

impl DpdPass {
    /// Evaluates every set. Fails with [`Error::GroupAbsent`] when a group has
    /// no sets, leaving the pass unusable for accumulation.
    pub fn evaluate(&mut self, params: &ModelParams, batch: &FairnessBatch, tau: f64) -> Result<()> {
        let mut scores = std::mem::take(&mut self.scores);
        scores.clear();
        for e in 0..batch.len() {
            let eu = params.user_row(batch.user(e));
            scores.extend(batch.candidates(e).iter().map(|&i| dot(eu, params.item_row(i))));
        }
        let out = self.evaluate_scored(batch, &scores, tau);
        self.scores = scores;
        out
    }

    /// Like [`DpdPass::evaluate`] with the candidate scores supplied flat,
    /// `scores[e * set_size + j]` for candidate `j` of set `e`.
    pub fn evaluate_scored(&mut self, batch: &FairnessBatch, scores: &[f64], tau: f64) -> Result<()> {
        let n = batch.set_size();
        debug_assert_eq!(scores.len(), batch.len() * n);
        let sizes = batch.group_sizes();
        self.group_sizes = sizes;
        if sizes[0] == 0 || sizes[1] == 0 {
            return Err(Error::GroupAbsent);
        }
        self.hits.clear();
        self.score_grads.clear();
        self.score_grads.resize(batch.len() * n, 0.0);
        let mut sums = [0.0; 2];
        for e in 0..batch.len() {
            let grad = &mut self.score_grads[e * n..(e + 1) * n];
            let hit = dh_into(&scores[e * n..(e + 1) * n], |j| j == 0, 1, tau, &mut self.scratch, grad);
            self.hits.push(hit);
            sums[batch.attribute(e) as usize] += hit;
        }
        self.group_means = [sums[0] / sizes[0] as f64, sums[1] / sizes[1] as f64];
        self.value = self.group_means[0] - self.group_means[1];
        Ok(())
    }

    /// `grads += weight * d DPD / d params`
    pub fn accumulate(&mut self, params: &ModelParams, batch: &FairnessBatch, weight: f64, grads: &mut GradientSet) {
        let n = batch.set_size();
        let coef = [
            weight / self.group_sizes[0] as f64,
            -weight / self.group_sizes[1] as f64,
        ];
        let user_grad = &mut self.user_grad;
        for e in 0..batch.len() {
            let user = batch.user(e);
            let c = coef[batch.attribute(e) as usize];
            let eu = params.user_row(user);
            let g = &self.score_grads[e * n..(e + 1) * n];
            user_grad.clear();
            user_grad.resize(params.dim, 0.0);
            for (j, &item) in batch.candidates(e).iter().enumerate() {
                let coef = c * g[j];
                axpy(coef, params.item_row(item), user_grad);
                grads.add_scaled(Side::Item, item, coef, eu);
            }
            grads.add_scaled(Side::User, user, 1.0, user_grad);
        }
    }

    #[cfg(test)]
    pub fn hits(&self) -> &[f64] {
        &self.hits
    }
}

/// Differentiable disparity of a batch and its gradient.
pub fn dpd(params: &ModelParams, batch: &FairnessBatch, tau: f64) -> Result<DpdResult> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    for e in 0..batch.len() {
        if batch.user(e) as usize >= params.num_users()
            || batch.candidates(e).iter().any(|&i| i as usize >= params.num_items())
        {
            return Err(Error::InvalidArgument(format!(
                "fairness set {e} references rows outside the model"
            )));
        }
    }
    let mut pass = DpdPass::default();
    pass.evaluate(params, batch, tau)?;
    let mut grad = GradientSet::new(params.dim);
    pass.accumulate(params, batch, 1.0, &mut grad);
    Ok(DpdResult {
        value: pass.value,
        group_means: pass.group_means,
        grad,
    })
}

/// Which fairness loss regularizes training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FairnessLoss {
    /// `-log sigmoid(-DPD)`, smooth everywhere.
    Fade,
    /// `-log sigmoid(-|DPD|)`
    Abs,
}

impl FairnessLoss {
    pub fn value(self, dpd: f64) -> f64 {
        match self {
            FairnessLoss::Fade => fairness_loss_fade(dpd),
            FairnessLoss::Abs => fairness_loss_abs(dpd),
        }
    }

    /// Derivative with respect to the disparity value.
    pub fn derivative(self, dpd: f64) -> f64 {
        match self {
            FairnessLoss::Fade => sigmoid(dpd),
            FairnessLoss::Abs => {
                if dpd == 0.0 {
                    0.0
                } else {
                    dpd.signum() * sigmoid(dpd.abs())
                }
            }
        }
    }
}

/// `softplus(DPD)`
pub fn fairness_loss_fade(dpd: f64) -> f64 {
    softplus(dpd)
}

/// `softplus(|DPD|)`
pub fn fairness_loss_abs(dpd: f64) -> f64 {
    softplus(dpd.abs())
}

/// Weight on the fairness gradient that makes the combined descent step
/// move the disparity toward zero: `-2 <g_rec, g_dpd> / |g_dpd|^2`.
pub fn lambda_star(grad_rec: &[f64], grad_dpd: &[f64]) -> Result<f64> {
    if grad_rec.len() != grad_dpd.len() {
        return Err(Error::InvalidArgument("gradient lengths differ".into()));
    }
    let norm_sq = dot(grad_dpd, grad_dpd);
    if norm_sq == 0.0 {
        return Err(Error::InvalidArgument("disparity gradient is zero".into()));
    }
    Ok(-2.0 * dot(grad_rec, grad_dpd) / norm_sq)
}

/// Rate of change of the disparity under an infinitesimal descent step on
/// `L_rec + lambda * L_fair`: `-<g_rec + lambda g_fair, g_dpd>`.
pub fn directional_dpd_derivative(grad_rec: &[f64], grad_fair: &[f64], lambda: f64, grad_dpd: &[f64]) -> f64 {
    grad_rec
        .iter()
        .zip(grad_fair)
        .zip(grad_dpd)
        .map(|((r, f), d)| -(r + lambda * f) * d)
        .sum()
}
