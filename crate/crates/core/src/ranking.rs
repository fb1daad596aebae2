//! Hard and relaxed sorting operators over a candidate score vector.
//!
//! Row `k` (1-based) of the permutation matrix of scores `s` selects
//! `argmax_j [(N + 1 - 2k) s_j - sum_m |s_j - s_m|]`, which is the index of
//! the k-th largest score. Replacing the argmax by a temperature softmax
//! gives a row-stochastic relaxation that converges to the hard row as the
//! temperature goes to zero. Dotting a row with a binary relevance vector
//! yields a differentiable "hit at rank k".

use crate::error::{Error, Result};

/// Scores of one candidate set together with their pairwise absolute
/// distances and the relaxation temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingWorkspace {
    scores: Vec<f64>,
    /// Row-major `N x N`, `abs_distance[k * N + j] = |s_k - s_j|`.
    abs_distance: Vec<f64>,
    /// `A * 1`
    row_sums: Vec<f64>,
    /// `sum_m sign(s_j - s_m)`, with `sign(0) = 0`.
    sign_sums: Vec<f64>,
    tau: f64,
}

impl RankingWorkspace {
    pub fn new(scores: &[f64], tau: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("score vector"));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
        }
        let n = scores.len();
        let mut abs_distance = vec![0.0; n * n];
        let mut row_sums = vec![0.0; n];
        let mut sign_sums = vec![0.0; n];
        for k in 0..n {
            for j in 0..n {
                let diff = scores[k] - scores[j];
                abs_distance[k * n + j] = diff.abs();
                row_sums[k] += diff.abs();
                sign_sums[k] += sign(diff);
            }
        }
        Ok(RankingWorkspace {
            scores: scores.to_vec(),
            abs_distance,
            row_sums,
            sign_sums,
            tau,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn abs_distance(&self, k: usize, j: usize) -> f64 {
        self.abs_distance[k * self.len() + j]
    }

    fn check_rank(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.len() {
            Err(Error::InvalidArgument(format!(
                "rank {k} outside 1..={}",
                self.len()
            )))
        } else {
            Ok(())
        }
    }

    /// Unscaled sorting logits `(N + 1 - 2k) s - A 1` for rank `k`.
    pub fn raw_logits(&self, k: usize) -> Result<Vec<f64>> {
        self.check_rank(k)?;
        let c = rank_coefficient(self.len(), k);
        Ok(self
            .scores
            .iter()
            .zip(&self.row_sums)
            .map(|(s, r)| c * s - r)
            .collect())
    }

    /// Temperature-scaled logits for rank `k`.
    pub fn logits(&self, k: usize) -> Result<Vec<f64>> {
        let mut z = self.raw_logits(k)?;
        z.iter_mut().for_each(|v| *v /= self.tau);
        Ok(z)
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn rank_coefficient(n: usize, k: usize) -> f64 {
    (n as f64) + 1.0 - 2.0 * k as f64
}

/// In-place max-subtracted softmax.
fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

/// Index selected by row `k` of the hard permutation matrix. Ties go to the
/// lowest index.
pub fn hard_permutation_row(scores: &[f64], k: usize) -> Result<usize> {
    let ws = RankingWorkspace::new(scores, 1.0)?;
    let z = ws.raw_logits(k)?;
    let mut best = 0;
    for (j, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = j;
        }
    }
    Ok(best)
}

/// Row `k` of the relaxed permutation matrix.
pub fn relaxed_permutation_row(ws: &RankingWorkspace, k: usize) -> Result<Vec<f64>> {
    let mut z = ws.logits(k)?;
    softmax_in_place(&mut z);
    Ok(z)
}

/// Candidate indices ordered by descending score, ties by lower index.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Whether the candidate ranked `k`-th (1-based) is relevant.
pub fn hit_at_rank(scores: &[f64], relevance: &[bool], k: usize) -> Result<u8> {
    check_relevance(scores, relevance)?;
    if k == 0 || k > scores.len() {
        return Err(Error::InvalidArgument(format!("rank {k} outside 1..={}", scores.len())));
    }
    Ok(u8::from(relevance[descending_order(scores)[k - 1]]))
}

fn check_relevance(scores: &[f64], relevance: &[bool]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Empty("score vector"));
    }
    if scores.len() != relevance.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} relevance labels",
            scores.len(),
            relevance.len()
        )));
    }
    Ok(())
}

/// Reusable buffers for [`dh_into`].
#[derive(Debug, Default, Clone)]
pub struct DhScratch {
    row_sums: Vec<f64>,
    sign_sums: Vec<f64>,
    /// `sign(s_a - s_b)` for every pair `a < b`, in loop order.
    signs: Vec<f64>,
    probs: Vec<f64>,
}

/// Allocation-free differentiable hit at rank `k`: returns the value and
/// writes `d value / d scores` into `grad`.
///
/// Uses `d|x|/dx = sign(x)` with `sign(0) = 0`.
pub(crate) fn dh_into(
    scores: &[f64],
    relevance: impl Fn(usize) -> bool,
    k: usize,
    tau: f64,
    scratch: &mut DhScratch,
    grad: &mut [f64],
) -> f64 {
    let n = scores.len();
    let DhScratch {
        row_sums,
        sign_sums,
        signs,
        probs,
    } = scratch;
    row_sums.clear();
    row_sums.resize(n, 0.0);
    sign_sums.clear();
    sign_sums.resize(n, 0.0);
    signs.clear();
    for a in 0..n {
        for b in (a + 1)..n {
            let diff = scores[a] - scores[b];
            let (abs, sg) = (diff.abs(), sign(diff));
            row_sums[a] += abs;
            row_sums[b] += abs;
            sign_sums[a] += sg;
            sign_sums[b] -= sg;
            signs.push(sg);
        }
    }
    let c = rank_coefficient(n, k);
    probs.clear();
    probs.extend((0..n).map(|j| (c * scores[j] - row_sums[j]) / tau));
    softmax_in_place(probs);

    let value: f64 = (0..n).filter(|&j| relevance(j)).map(|j| probs[j]).sum();

    // dDH/dz_j = w_j = p_j (y_j - DH), and
    // dz_j/ds_l = [(c - sign_sums_l) 1{j = l} + sign(s_j - s_l) 1{j != l}] / tau
    for (l, g) in grad.iter_mut().enumerate().take(n) {
        let w = probs[l] * (f64::from(u8::from(relevance(l))) - value);
        // Reuse `probs` for the weights once the diagonal term is taken.
        *g = w * (c - sign_sums[l]);
        probs[l] = w;
    }
    let mut p = 0;
    for a in 0..n {
        for b in (a + 1)..n {
            let sg = signs[p];
            p += 1;
            grad[b] += probs[a] * sg;
            grad[a] -= probs[b] * sg;
        }
    }
    let inv_tau = 1.0 / tau;
    for g in grad.iter_mut().take(n) {
        *g *= inv_tau;
    }
    value
}

/// Differentiable hit at rank `k` and its gradient with respect to the
/// scores.
pub fn differentiable_hit(ws: &RankingWorkspace, relevance: &[bool], k: usize) -> Result<(f64, Vec<f64>)> {
    check_relevance(ws.scores(), relevance)?;
    ws.check_rank(k)?;
    let mut grad = vec![0.0; ws.len()];
    let mut scratch = DhScratch::default();
    let value = dh_into(ws.scores(), |j| relevance[j], k, ws.tau(), &mut scratch, &mut grad);
    Ok((value, grad))
}

/// One user's candidate scores and binary relevance labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub scores: Vec<f64>,
    pub relevance: Vec<bool>,
}

/// Ideal DCG of a binary relevance list with `relevant` positives.
pub fn ideal_dcg(relevant: usize, k: usize) -> f64 {
    (1..=relevant.min(k)).map(|r| 1.0 / (r as f64 + 1.0).log2()).sum()
}

/// Relaxed NDCG@K of one candidate set and its score gradient. Returns
/// `None` when the set has no relevant candidate.
pub fn approx_ndcg_user(set: &CandidateSet, k: usize, tau: f64) -> Result<Option<(f64, Vec<f64>)>> {
    check_relevance(&set.scores, &set.relevance)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    let relevant = set.relevance.iter().filter(|&&r| r).count();
    if relevant == 0 {
        return Ok(None);
    }
    let n = set.scores.len();
    let max_dcg = ideal_dcg(relevant, k.min(n));
    let mut scratch = DhScratch::default();
    let mut row_grad = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut value = 0.0;
    for rank in 1..=k.min(n) {
        let discount = 1.0 / ((rank as f64 + 1.0).log2() * max_dcg);
        value += discount * dh_into(&set.scores, |j| set.relevance[j], rank, tau, &mut scratch, &mut row_grad);
        for (g, r) in grad.iter_mut().zip(&row_grad) {
            *g += discount * r;
        }
    }
    Ok(Some((value, grad)))
}

/// Mean relaxed NDCG@K over the sets that contain at least one relevant
/// candidate.
pub fn approx_ndcg(sets: &[CandidateSet], k: usize, tau: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for set in sets {
        if let Some((v, _)) = approx_ndcg_user(set, k, tau)? {
            total += v;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::Empty("candidate sets with a relevant item"));
    }
    Ok(total / counted as f64)
}
