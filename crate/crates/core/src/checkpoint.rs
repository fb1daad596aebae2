//! Versioned binary checkpoints. All reals are stored as little-endian IEEE
//! 754 bit patterns, so a round trip is bit-exact.
//!
//! Layout (version 1):
//!
//! ```text
//! magic   b"FADECKPT"
//! version u32
//! dim, num_users, num_items            u64 x3
//! user_emb, item_emb                   f64 row-major
//! step                                 u64
//! user_m, user_v, item_m, item_v       f64
//! has_rng                              u8
//! [seed [u8; 32], stream u64, word_pos u128]
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, OptimizerState};

const MAGIC: &[u8; 8] = b"FADECKPT";
const VERSION: u32 = 1;

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngCursor {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngCursor {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngCursor {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub state: OptimizerState,
    pub rng: Option<RngCursor>,
}

fn put_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn get_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(get_array(r)?))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let p = &self.params;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for n in [p.dim, p.num_users(), p.num_items()] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        put_f64s(w, &p.user_emb)?;
        put_f64s(w, &p.item_emb)?;
        w.write_all(&self.state.step.to_le_bytes())?;
        put_f64s(w, &self.state.user_m)?;
        put_f64s(w, &self.state.user_v)?;
        put_f64s(w, &self.state.item_m)?;
        put_f64s(w, &self.state.item_v)?;
        match &self.rng {
            None => w.write_all(&[0])?,
            Some(c) => {
                w.write_all(&[1])?;
                w.write_all(&c.seed)?;
                w.write_all(&c.stream.to_le_bytes())?;
                w.write_all(&c.word_pos.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let magic: [u8; 8] = get_array(r)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(get_array(r)?);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dim = get_u64(r)? as usize;
        let users = get_u64(r)? as usize;
        let items = get_u64(r)? as usize;
        if dim == 0 {
            return Err(Error::Checkpoint("zero embedding dimension".into()));
        }
        let params = ModelParams {
            dim,
            user_emb: get_f64s(r, users * dim)?,
            item_emb: get_f64s(r, items * dim)?,
        };
        let step = get_u64(r)?;
        let state = OptimizerState {
            step,
            user_m: get_f64s(r, users * dim)?,
            user_v: get_f64s(r, users * dim)?,
            item_m: get_f64s(r, items * dim)?,
            item_v: get_f64s(r, items * dim)?,
        };
        let [has_rng] = get_array::<1, _>(r)?;
        let rng = match has_rng {
            0 => None,
            1 => Some(RngCursor {
                seed: get_array(r)?,
                stream: u64::from_le_bytes(get_array(r)?),
                word_pos: u128::from_le_bytes(get_array(r)?),
            }),
            other => return Err(Error::Checkpoint(format!("bad rng flag {other}"))),
        };
        Ok(Checkpoint { params, state, rng })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}
