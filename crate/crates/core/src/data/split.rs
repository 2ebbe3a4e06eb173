use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GroupedDataset, Split};
use crate::error::{Error, Result};

/// Stratified train/val/test tagging per (group, class) cell.
///
/// Each cell is shuffled with the seeded generator and cut by rounding
/// `fraction · cell_size`; any cell with rows always contributes to train.
pub fn split(data: &GroupedDataset, fractions: [f64; 3], seed: u64) -> Result<GroupedDataset> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split fractions must be in [0,1] and sum to 1, got {fractions:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tags = vec![Split::Train; data.len()];
    for g in 0..data.num_groups() {
        for c in 0..data.num_classes() {
            let mut rows: Vec<usize> = (0..data.len())
                .filter(|&i| data.groups()[i] == g && data.labels()[i] == c)
                .collect();
            if rows.is_empty() {
                continue;
            }
            rows.shuffle(&mut rng);
            let n = rows.len();
            let mut val = (fractions[1] * n as f64).round() as usize;
            let mut test = (fractions[2] * n as f64).round() as usize;
            while val + test >= n && val + test > 0 {
                if test >= val && test > 0 {
                    test -= 1;
                } else {
                    val -= 1;
                }
            }
            let train = n - val - test;
            for &r in &rows[train..train + val] {
                tags[r] = Split::Val;
            }
            for &r in &rows[train + val..] {
                tags[r] = Split::Test;
            }
        }
    }
    let mut out = data.clone();
    out.set_splits(tags)?;
    Ok(out)
}
