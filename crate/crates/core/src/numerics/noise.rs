use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// M×C block of uniforms in the open interval (0, 1).
///
/// Entry `(m, c)` is word `m * C + c` of the ChaCha8 stream selected by
/// `(seed, stream_id)`, so any entry can be regenerated without touching the
/// others and two blocks with the same key are bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformNoiseBlock {
    seed: u64,
    stream_id: u64,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

fn to_open_unit(bits: u64) -> f64 {
    // 52-bit cell midpoints are exact in f64: never 0, never 1
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

fn stream_rng(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

impl UniformNoiseBlock {
    pub fn generate(seed: u64, stream_id: u64, rows: usize, cols: usize) -> Self {
        let mut rng = stream_rng(seed, stream_id);
        let values = (0..rows * cols).map(|_| to_open_unit(rng.next_u64())).collect();
        Self {
            seed,
            stream_id,
            rows,
            cols,
            values,
        }
    }

    /// Builds a block from explicit values (used by tests and fixtures).
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "noise block {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::Domain(format!("noise value {v} outside (0, 1)")));
        }
        Ok(Self {
            seed: 0,
            stream_id: 0,
            rows,
            cols,
            values,
        })
    }

    /// Single entry computed directly from its address.
    pub fn entry_at(seed: u64, stream_id: u64, cols: usize, m: usize, c: usize) -> f64 {
        let mut rng = stream_rng(seed, stream_id);
        // one u64 = two 32-bit words
        rng.set_word_pos(2 * (m * cols + c) as u128);
        to_open_unit(rng.next_u64())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, m: usize, c: usize) -> f64 {
        self.values[m * self.cols + c]
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.cols..(m + 1) * self.cols]
    }
}

/// Mixes several identifiers into one stream id (splitmix64 finalizer chain).
pub fn derive_stream(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

/// FNV-1a 64-bit digest of an identifier, for keying noise streams by id.
pub fn id_hash(id: &str) -> u64 {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::default();
    h.write(id.as_bytes());
    h.finish()
}
