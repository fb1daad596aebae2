//! Matrix-factorization scorer with the BPR loss, sparse gradients and a
//! sparse Adam optimizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which embedding table a gradient row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    User,
    Item,
}

impl Side {
    fn name(self) -> &'static str {
        match self {
            Side::User => "user",
            Side::Item => "item",
        }
    }
}

/// User and item embedding tables, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dim: usize,
    pub user_emb: Vec<f64>,
    pub item_emb: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        ModelParams {
            dim,
            user_emb: vec![0.0; num_users * dim],
            item_emb: vec![0.0; num_items * dim],
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_emb.len() / self.dim
    }

    pub fn num_items(&self) -> usize {
        self.item_emb.len() / self.dim
    }

    #[inline]
    pub fn user_row(&self, user: u32) -> &[f64] {
        let d = self.dim;
        &self.user_emb[user as usize * d..(user as usize + 1) * d]
    }

    #[inline]
    pub fn item_row(&self, item: u32) -> &[f64] {
        let d = self.dim;
        &self.item_emb[item as usize * d..(item as usize + 1) * d]
    }

    pub fn row(&self, side: Side, row: u32) -> &[f64] {
        match side {
            Side::User => self.user_row(row),
            Side::Item => self.item_row(row),
        }
    }

    pub fn row_mut(&mut self, side: Side, row: u32) -> &mut [f64] {
        let d = self.dim;
        let table = match side {
            Side::User => &mut self.user_emb,
            Side::Item => &mut self.item_emb,
        };
        &mut table[row as usize * d..(row as usize + 1) * d]
    }

    /// Inner product of the user and item rows, without bounds reporting.
    #[inline]
    pub fn score_unchecked(&self, user: u32, item: u32) -> f64 {
        dot(self.user_row(user), self.item_row(item))
    }

    pub fn is_finite(&self) -> bool {
        self.user_emb.iter().chain(&self.item_emb).all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Read-only scoring interface used by evaluation. Rows outside the model
/// score as a zero embedding would.
pub trait Scorer {
    fn score_or_zero(&self, user: u32, item: u32) -> f64;

    fn knows_user(&self, user: u32) -> bool;
}

impl Scorer for ModelParams {
    fn score_or_zero(&self, user: u32, item: u32) -> f64 {
        if (user as usize) < self.num_users() && (item as usize) < self.num_items() {
            self.score_unchecked(user, item)
        } else {
            0.0
        }
    }

    fn knows_user(&self, user: u32) -> bool {
        (user as usize) < self.num_users()
    }
}

/// Entries i.i.d. uniform on `[-scale, scale]`; user table drawn first.
pub fn init_params<R: Rng + ?Sized>(
    rng: &mut R,
    num_users: usize,
    num_items: usize,
    dim: usize,
    scale: f64,
) -> Result<ModelParams> {
    if dim == 0 {
        return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
    }
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid init scale {scale}")));
    }
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| (2.0 * rng.gen::<f64>() - 1.0) * scale)
            .collect()
    };
    let user_emb = draw(num_users * dim);
    let item_emb = draw(num_items * dim);
    Ok(ModelParams {
        dim,
        user_emb,
        item_emb,
    })
}

/// Checked inner-product score.
pub fn score(params: &ModelParams, user: u32, item: u32) -> Result<f64> {
    check_row(Side::User, user, params.num_users())?;
    check_row(Side::Item, item, params.num_items())?;
    Ok(params.score_unchecked(user, item))
}

fn check_row(side: Side, row: u32, rows: usize) -> Result<()> {
    if (row as usize) < rows {
        Ok(())
    } else {
        Err(Error::Index {
            table: side.name(),
            index: row as usize,
            rows,
        })
    }
}

/// Rows of one table touched by a gradient, in first-touch order.
#[derive(Debug, Clone, Default)]
pub struct SparseRows {
    slot_of: Vec<u32>,
    rows: Vec<u32>,
    data: Vec<f64>,
}

const NO_SLOT: u32 = u32::MAX;

impl SparseRows {
    fn row_mut(&mut self, row: u32, dim: usize) -> &mut [f64] {
        let r = row as usize;
        if r >= self.slot_of.len() {
            self.slot_of.resize(r + 1, NO_SLOT);
        }
        let slot = match self.slot_of[r] {
            NO_SLOT => {
                let slot = self.rows.len();
                self.slot_of[r] = slot as u32;
                self.rows.push(row);
                self.data.resize(self.data.len() + dim, 0.0);
                slot
            }
            s => s as usize,
        };
        &mut self.data[slot * dim..(slot + 1) * dim]
    }

    fn get(&self, row: u32, dim: usize) -> Option<&[f64]> {
        match self.slot_of.get(row as usize) {
            Some(&s) if s != NO_SLOT => {
                let s = s as usize;
                Some(&self.data[s * dim..(s + 1) * dim])
            }
            _ => None,
        }
    }

    fn clear(&mut self) {
        for &r in &self.rows {
            self.slot_of[r as usize] = NO_SLOT;
        }
        self.rows.clear();
        self.data.clear();
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[u32] {
        &self.rows
    }
}

/// Sparse per-row gradient accumulator over both embedding tables.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub dim: usize,
    users: SparseRows,
    items: SparseRows,
}

impl GradientSet {
    pub fn new(dim: usize) -> Self {
        GradientSet {
            dim,
            users: SparseRows::default(),
            items: SparseRows::default(),
        }
    }

    fn table(&self, side: Side) -> &SparseRows {
        match side {
            Side::User => &self.users,
            Side::Item => &self.items,
        }
    }

    pub fn row_mut(&mut self, side: Side, row: u32) -> &mut [f64] {
        let dim = self.dim;
        match side {
            Side::User => self.users.row_mut(row, dim),
            Side::Item => self.items.row_mut(row, dim),
        }
    }

    /// `grad[side][row] += alpha * x`
    #[inline]
    pub fn add_scaled(&mut self, side: Side, row: u32, alpha: f64, x: &[f64]) {
        axpy(alpha, x, self.row_mut(side, row));
    }

    pub fn get(&self, side: Side, row: u32) -> Option<&[f64]> {
        self.table(side).get(row, self.dim)
    }

    pub fn rows(&self, side: Side) -> &[u32] {
        self.table(side).rows()
    }

    pub fn touched(&self) -> usize {
        self.users.len() + self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.touched() == 0
    }

    pub fn clear(&mut self) {
        self.users.clear();
        self.items.clear();
    }

    /// `self += alpha * other`
    pub fn merge_scaled(&mut self, alpha: f64, other: &GradientSet) {
        for side in [Side::User, Side::Item] {
            for &row in other.rows(side) {
                let src = other.get(side, row).expect("row listed");
                self.add_scaled(side, row, alpha, src);
            }
        }
    }

    /// Inner product treating absent rows as zero.
    pub fn dot(&self, other: &GradientSet) -> f64 {
        let mut total = 0.0;
        for side in [Side::User, Side::Item] {
            for &row in self.rows(side) {
                if let Some(o) = other.get(side, row) {
                    total += dot(self.get(side, row).expect("row listed"), o);
                }
            }
        }
        total
    }

    /// Dense flattening in `[users | items]` layout for the given shape.
    pub fn to_dense(&self, num_users: usize, num_items: usize) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; (num_users + num_items) * d];
        for &row in self.rows(Side::User) {
            let r = row as usize;
            out[r * d..(r + 1) * d].copy_from_slice(self.get(Side::User, row).unwrap());
        }
        let off = num_users * d;
        for &row in self.rows(Side::Item) {
            let r = row as usize;
            out[off + r * d..off + (r + 1) * d]
                .copy_from_slice(self.get(Side::Item, row).unwrap());
        }
        out
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One BPR training example: a positive item and its sampled negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct BprExample {
    pub user: u32,
    pub positive: u32,
    pub negatives: Vec<u32>,
}

/// Adds `weight * (1/|negs|) * sum softplus(s_neg - s_pos)` and its gradient.
/// Returns the unweighted per-example loss.
pub(crate) fn accumulate_bpr(
    params: &ModelParams,
    user: u32,
    positive: u32,
    negatives: &[u32],
    weight: f64,
    grads: &mut GradientSet,
) -> f64 {
    accumulate_bpr_scored(params, user, positive, negatives, weight, grads, &mut Vec::new())
}

/// [`accumulate_bpr`] that also appends the positive score followed by the
/// negative scores to `scores`.
pub(crate) fn accumulate_bpr_scored(
    params: &ModelParams,
    user: u32,
    positive: u32,
    negatives: &[u32],
    weight: f64,
    grads: &mut GradientSet,
    scores: &mut Vec<f64>,
) -> f64 {
    let eu = params.user_row(user);
    let ep = params.item_row(positive);
    let s_pos = dot(eu, ep);
    scores.push(s_pos);
    let inv_n = 1.0 / negatives.len() as f64;
    let mut loss = 0.0;
    let mut pos_coef = 0.0;
    for &neg in negatives {
        let en = params.item_row(neg);
        let s_neg = dot(eu, en);
        scores.push(s_neg);
        let margin = s_pos - s_neg;
        loss += softplus(-margin);
        // d softplus(-x)/dx = -sigmoid(-x)
        let c = -sigmoid(-margin) * inv_n * weight;
        pos_coef += c;
        grads.add_scaled(Side::User, user, -c, en);
        grads.add_scaled(Side::Item, neg, -c, eu);
    }
    grads.add_scaled(Side::User, user, pos_coef, ep);
    grads.add_scaled(Side::Item, positive, pos_coef, eu);
    loss * inv_n
}

/// Mean BPR loss over the batch and its exact gradient (no L2 term).
pub fn bpr_loss_and_grad(params: &ModelParams, batch: &[BprExample]) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::Empty("BPR batch"));
    }
    for ex in batch {
        check_row(Side::User, ex.user, params.num_users())?;
        check_row(Side::Item, ex.positive, params.num_items())?;
        if ex.negatives.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "interaction ({}, {}) has no negatives",
                ex.user, ex.positive
            )));
        }
        for &n in &ex.negatives {
            check_row(Side::Item, n, params.num_items())?;
        }
    }
    let weight = 1.0 / batch.len() as f64;
    let mut grads = GradientSet::new(params.dim);
    let mut loss = 0.0;
    for ex in batch {
        loss += accumulate_bpr(params, ex.user, ex.positive, &ex.negatives, weight, &mut grads);
    }
    Ok((loss * weight, grads))
}

/// Adam moments for both tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub user_m: Vec<f64>,
    pub user_v: Vec<f64>,
    pub item_m: Vec<f64>,
    pub item_v: Vec<f64>,
}

impl OptimizerState {
    pub fn for_params(params: &ModelParams) -> Self {
        OptimizerState {
            step: 0,
            user_m: vec![0.0; params.user_emb.len()],
            user_v: vec![0.0; params.user_emb.len()],
            item_m: vec![0.0; params.item_emb.len()],
            item_v: vec![0.0; params.item_emb.len()],
        }
    }

    fn matches(&self, params: &ModelParams) -> bool {
        self.user_m.len() == params.user_emb.len()
            && self.user_v.len() == params.user_emb.len()
            && self.item_m.len() == params.item_emb.len()
            && self.item_v.len() == params.item_emb.len()
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64, l2: f64) -> Self {
        Adam {
            lr,
            l2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step applied to the rows present in `grads`.
/// The L2 term `l2 * w` is added to each touched row's gradient.
pub fn adam_step(
    state: &mut OptimizerState,
    params: &mut ModelParams,
    grads: &GradientSet,
    adam: &Adam,
) -> Result<()> {
    if !state.matches(params) || grads.dim != params.dim {
        return Err(Error::InvalidArgument(
            "optimizer state and gradient shapes must match the parameters".into(),
        ));
    }
    for side in [Side::User, Side::Item] {
        let rows = match side {
            Side::User => params.num_users(),
            Side::Item => params.num_items(),
        };
        for &row in grads.rows(side) {
            check_row(side, row, rows)?;
            if !grads.get(side, row).unwrap().iter().all(|g| g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    table: side.name(),
                    row: row as usize,
                });
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - adam.beta1.powi(t);
    let bc2 = 1.0 - adam.beta2.powi(t);
    let d = params.dim;
    for side in [Side::User, Side::Item] {
        let (w, m, v) = match side {
            Side::User => (&mut params.user_emb, &mut state.user_m, &mut state.user_v),
            Side::Item => (&mut params.item_emb, &mut state.item_m, &mut state.item_v),
        };
        for &row in grads.rows(side) {
            let g = grads.get(side, row).unwrap();
            let base = row as usize * d;
            for k in 0..d {
                let idx = base + k;
                let gk = g[k] + adam.l2 * w[idx];
                m[idx] = adam.beta1 * m[idx] + (1.0 - adam.beta1) * gk;
                v[idx] = adam.beta2 * v[idx] + (1.0 - adam.beta2) * gk * gk;
                let m_hat = m[idx] / bc1;
                let v_hat = v[idx] / bc2;
                w[idx] -= adam.lr * m_hat / (v_hat.sqrt() + adam.eps);
            }
        }
    }
    Ok(())
}

/// Appends freshly initialized rows so the tables hold at least the given
/// counts. Existing rows and their moments are untouched; new moments are 0.
pub fn grow_tables<R: Rng + ?Sized>(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    new_num_users: usize,
    new_num_items: usize,
    rng: &mut R,
    scale: f64,
) -> Result<()> {
    if new_num_users < params.num_users() || new_num_items < params.num_items() {
        return Err(Error::InvalidArgument(format!(
            "cannot shrink tables from {}x{} to {}x{}",
            params.num_users(),
            params.num_items(),
            new_num_users,
            new_num_items
        )));
    }
    let d = params.dim;
    let fresh = init_params(
        rng,
        new_num_users - params.num_users(),
        new_num_items - params.num_items(),
        d,
        scale,
    )?;
    params.user_emb.extend_from_slice(&fresh.user_emb);
    params.item_emb.extend_from_slice(&fresh.item_emb);
    state.user_m.resize(params.user_emb.len(), 0.0);
    state.user_v.resize(params.user_emb.len(), 0.0);
    state.item_m.resize(params.item_emb.len(), 0.0);
    state.item_v.resize(params.item_emb.len(), 0.0);
    Ok(())
}
