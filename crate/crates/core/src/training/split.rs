use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, TrainError};
use crate::datastore::Dataset;

/// Smallest cell the three-way split accepts.
pub const MIN_CELL: usize = 5;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split of record indices per (label, SNR) cell. Each cell is
/// shuffled with a seeded RNG; the train and validation shares are rounded
/// and the test set takes the remainder.
pub fn split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(TrainError::Config(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let mut cells: BTreeMap<(u8, i16), Vec<usize>> = BTreeMap::new();
    for (k, r) in dataset.records.iter().enumerate() {
        cells.entry((r.label, r.snr_db)).or_default().push(k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Split::default();
    for ((label, snr), mut idx) in cells {
        if idx.len() < MIN_CELL {
            return Err(TrainError::CellTooSmall { label, snr_db: snr, count: idx.len() });
        }
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_train = (ratios[0] * n).round() as usize;
        let n_val = ((ratios[1] * n).round() as usize).min(idx.len() - n_train);
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    Ok(out)
}
