use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::HybridSequence;
use crate::error::{Error, Result};

pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.75, 0.15, 0.10);

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<HybridSequence>,
    pub valid: Vec<HybridSequence>,
    pub test: Vec<HybridSequence>,
}

impl Split {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.valid.len(), self.test.len())
    }
}

/// Shuffles and partitions sequences into train/valid/test.
///
/// Validation and test receive `floor(ratio * N)` sequences, train keeps the
/// remainder. When `N >= 3` every part gets at least one sequence, taken
/// from train.
pub fn split_sequences(
    seqs: &[HybridSequence],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Split> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !(0.0..=1.0).contains(r)) || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be in [0,1] and sum to 1, got ({rt}, {rv}, {rs})"
        )));
    }
    let n = seqs.len();
    if n < 3 {
        return Err(Error::Data("dataset too small to split".into()));
    }
    // the 1e-9 slack absorbs representation error such as 0.15 * 100
    let floor = |r: f64| (r * n as f64 + 1e-9).floor() as usize;
    let mut n_valid = floor(rv).max(1);
    let mut n_test = floor(rs).max(1);
    // the deficit comes out of train, which itself keeps at least one
    while n_valid + n_test > n - 1 {
        if n_valid >= n_test {
            n_valid -= 1;
        } else {
            n_test -= 1;
        }
    }
    let n_train = n - n_valid - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| seqs[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        train: pick(&order[..n_train]),
        valid: pick(&order[n_train..n_train + n_valid]),
        test: pick(&order[n_train + n_valid..]),
    })
}
