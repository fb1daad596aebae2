//! Synthetic interaction logs with a controllable gap between two user
//! groups.
//!
//! Every item has a latent factor and a popularity offset; every user has a
//! taste vector that may rotate over time. An interaction at time `s` in
//! `[0, 1)` picks the best unseen item under
//! `sharpness * <taste(s), factor> + popularity + gumbel noise`, i.e. a draw
//! without replacement from the softmax over unseen items. Group 1 users are
//! shaped by `disparity = p`: their taste turns through `p * drift` radians
//! over the horizon while group 0 tastes stay fixed, and they interact
//! `1 - p / 2` times as often. A model fitted to the past therefore serves
//! group 1 worse on the next period, and the gap closes only if training
//! adapts group 1 faster. Timestamps are uniform over the horizon, so users
//! stay active in every period.
//!
//! `segregation` pulls each group's tastes toward its own center. Without it
//! the drifting group shares item neighbourhoods with the static one and a
//! regularizer can only close the gap by degrading group 0.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionLog, InteractionRecord};
use crate::error::{Error, Result};
use crate::rng::stream;

const HORIZON: i64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    /// Number of dynamic periods the log is meant to be split into.
    pub periods: usize,
    /// Planted gap in `[0, 1]`. At 0 the groups differ only through their
    /// taste centers (see `segregation`).
    pub disparity: f64,
    pub group1_fraction: f64,
    pub latent_dim: usize,
    /// Mean positive interactions per group 0 user.
    pub activity: usize,
    /// Scale of the taste term in the choice logits.
    pub sharpness: f64,
    /// Scale of the popularity offsets.
    pub popularity: f64,
    /// Pull of each group's tastes towards a group-specific direction, in
    /// `[0, 1]`.
    pub segregation: f64,
    /// Taste rotation of a group 1 user over the horizon at `disparity = 1`,
    /// in radians.
    pub drift: f64,
    /// Extra low-rated interactions per user, as a fraction of its positives.
    pub low_rating_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            users: 2000,
            items: 500,
            periods: 5,
            disparity: 0.5,
            group1_fraction: 0.3,
            latent_dim: 8,
            activity: 40,
            sharpness: 3.0,
            popularity: 1.5,
            drift: 3.0,
            segregation: 0.7,
            low_rating_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic fixture: {m}")));
        if self.users < 2 || self.items < 2 {
            return bad("need at least two users and two items");
        }
        if self.periods == 0 {
            return bad("periods must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.disparity) {
            return bad("disparity must lie in [0, 1]");
        }
        if !(self.group1_fraction > 0.0 && self.group1_fraction < 1.0) {
            return bad("group 1 fraction must lie in (0, 1)");
        }
        if self.latent_dim == 0 || self.activity == 0 {
            return bad("latent dimension and activity must be >= 1");
        }
        if self.activity * 2 > self.items {
            return bad("activity must leave at least half the items unseen");
        }
        if !(0.0..=1.0).contains(&self.segregation) {
            return bad("segregation must lie in [0, 1]");
        }
        if !(self.low_rating_fraction >= 0.0) || !self.sharpness.is_finite() || !self.popularity.is_finite() || !self.drift.is_finite() {
            return bad("scales must be finite and non-negative");
        }
        Ok(())
    }
}

impl FromStr for SyntheticConfig {
    type Err = Error;

    /// Parses whitespace- or comma-separated `key=value` pairs, e.g.
    /// `users=2000 items=500 periods=5 disparity=0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = SyntheticConfig::default();
        for pair in s.split(|c: char| c.is_whitespace() || c == ',').filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("synthetic fixture: expected key=value, got `{pair}`")))?;
            let bad = |e: &dyn std::fmt::Display| Error::Config(format!("synthetic fixture: {key}: {e}"));
            match key {
                "users" => cfg.users = value.parse().map_err(|e| bad(&e))?,
                "items" => cfg.items = value.parse().map_err(|e| bad(&e))?,
                "periods" => cfg.periods = value.parse().map_err(|e| bad(&e))?,
                "disparity" => cfg.disparity = value.parse().map_err(|e| bad(&e))?,
                "group1" => cfg.group1_fraction = value.parse().map_err(|e| bad(&e))?,
                "latent" => cfg.latent_dim = value.parse().map_err(|e| bad(&e))?,
                "activity" => cfg.activity = value.parse().map_err(|e| bad(&e))?,
                "sharpness" => cfg.sharpness = value.parse().map_err(|e| bad(&e))?,
                "popularity" => cfg.popularity = value.parse().map_err(|e| bad(&e))?,
                "segregation" => cfg.segregation = value.parse().map_err(|e| bad(&e))?,
                "drift" => cfg.drift = value.parse().map_err(|e| bad(&e))?,
                "low" => cfg.low_rating_fraction = value.parse().map_err(|e| bad(&e))?,
                "seed" => cfg.seed = value.parse().map_err(|e| bad(&e))?,
                other => return Err(Error::Config(format!("synthetic fixture: unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn uniform_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn gumbel<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// Generates the log. Ids are already dense; user and item ids equal their
/// latent indices.
pub fn generate(cfg: &SyntheticConfig) -> Result<InteractionLog> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, &[0x5EED]);
    let k = cfg.latent_dim;
    let item_factors: Vec<Vec<f64>> = (0..cfg.items).map(|_| uniform_vec(&mut rng, k)).collect();
    let popularity: Vec<f64> = (0..cfg.items)
        .map(|_| cfg.popularity * rng.gen_range(-1.0f64..1.0))
        .collect();

    let group1 = ((cfg.users as f64) * cfg.group1_fraction).round() as usize;
    let mut attributes: Vec<u8> = (0..cfg.users).map(|u| (u < group1) as u8).collect();
    attributes.shuffle(&mut rng);

    let centers = [uniform_vec(&mut rng, k), uniform_vec(&mut rng, k)];
    let norm = 1.0 / (k as f64).sqrt();
    let mut records = Vec::new();
    let mut taken = vec![false; cfg.items];
    let mut taste = vec![0.0; k];
    for (u, &a) in attributes.iter().enumerate() {
        let seg = cfg.segregation;
        let center = &centers[a as usize];
        let anchored = |rng: &mut _| -> Vec<f64> {
            uniform_vec(rng, k)
                .iter()
                .zip(center)
                .map(|(x, c)| (1.0 - seg) * x + seg * c)
                .collect()
        };
        let from = anchored(&mut rng);
        let to = anchored(&mut rng);
        let (activity, turn) = if a == 1 {
            (cfg.activity as f64 * (1.0 - cfg.disparity / 2.0), cfg.disparity * cfg.drift)
        } else {
            (cfg.activity as f64, 0.0)
        };
        let count = ((activity * rng.gen_range(0.5..1.5)).round() as usize).clamp(1, cfg.items / 2);
        let mut stamps: Vec<i64> = (0..count).map(|_| rng.gen_range(0..HORIZON)).collect();
        stamps.sort_unstable();
        taken.iter_mut().for_each(|t| *t = false);
        for &ts in &stamps {
            let angle = turn * ts as f64 / HORIZON as f64;
            let (sin, cos) = angle.sin_cos();
            for ((t, f), g) in taste.iter_mut().zip(&from).zip(&to) {
                *t = (cos * f + sin * g) * norm;
            }
            let mut best = (f64::NEG_INFINITY, 0usize);
            for (i, factor) in item_factors.iter().enumerate() {
                let noise = gumbel(&mut rng);
                if taken[i] {
                    continue;
                }
                let affinity: f64 = taste.iter().zip(factor).map(|(x, y)| x * y).sum();
                let key = cfg.sharpness * affinity + popularity[i] + noise;
                if key > best.0 {
                    best = (key, i);
                }
            }
            taken[best.1] = true;
            records.push(InteractionRecord {
                user: u as u32,
                item: best.1 as u32,
                rating: rng.gen_range(4..=5),
                timestamp: ts,
                attribute: a,
            });
        }
        let low = (count as f64 * cfg.low_rating_fraction).round() as usize;
        for _ in 0..low {
            let item = loop {
                let i = rng.gen_range(0..cfg.items);
                if !taken[i] {
                    break i;
                }
            };
            taken[item] = true;
            records.push(InteractionRecord {
                user: u as u32,
                item: item as u32,
                rating: rng.gen_range(1..=2),
                timestamp: rng.gen_range(0..HORIZON),
                attribute: a,
            });
        }
    }
    records.sort_by_key(|r| r.timestamp);

    Ok(InteractionLog {
        user_count: cfg.users,
        item_count: cfg.items,
        user_ids: (0..cfg.users).map(|u| u.to_string()).collect(),
        item_ids: (0..cfg.items).map(|i| i.to_string()).collect(),
        user_attributes: attributes,
        records,
    })
}
