//! Low-resource splits: nine fractions from 10% to 100%.

use crate::error::{Error, Result};
use crate::rng::{sample_indices, stream_rng};

/// One split: the fraction and the (sorted) record indices it keeps.
#[derive(Debug, Clone, PartialEq)]
pub struct LowResourceSplit {
    pub fraction: f64,
    pub indices: Vec<usize>,
}

/// Nine fractions evenly spaced over [0.10, 1.00].
pub fn default_fractions() -> Vec<f64> {
    (0..9).map(|k| 0.10 + k as f64 * (0.90 / 8.0)).collect()
}

/// Partition sizes are `floor(fraction * n)`; each split is drawn
/// independently by random sampling without replacement, so splits are
/// not nested. A fraction of exactly 1.0 keeps the full dataset in its
/// original order.
pub fn low_resource_splits(
    n_records: usize,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<LowResourceSplit>> {
    if n_records == 0 {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let mut splits = Vec::with_capacity(fractions.len());
    for (k, &fraction) in fractions.iter().enumerate() {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::invalid(format!("fraction {fraction} outside (0, 1]")));
        }
        // Guard against fractions like 0.325 sitting one ulp below the
        // intended decimal before flooring.
        let size = ((fraction * n_records as f64) + 1e-9).floor() as usize;
        let size = size.clamp(1, n_records);
        let indices = if size == n_records {
            (0..n_records).collect()
        } else {
            let mut rng = stream_rng(seed, &format!("split:{k}"));
            sample_indices(n_records, size, &mut rng)
        };
        splits.push(LowResourceSplit { fraction, indices });
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes_on_1000() {
        let splits = low_resource_splits(1000, &default_fractions(), 5).unwrap();
        let sizes: Vec<usize> = splits.iter().map(|s| s.indices.len()).collect();
        assert_eq!(sizes, vec![100, 212, 325, 437, 550, 662, 775, 887, 1000]);
    }

    #[test]
    fn full_fraction_is_identity_set() {
        let splits = low_resource_splits(37, &[1.0], 9).unwrap();
        assert_eq!(splits[0].indices, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_identical_different_seed_differs() {
        let a = low_resource_splits(500, &default_fractions(), 1).unwrap();
        let b = low_resource_splits(500, &default_fractions(), 1).unwrap();
        let c = low_resource_splits(500, &default_fractions(), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].indices, c[0].indices, "10% splits should differ across seeds");
    }

    #[test]
    fn bad_fraction_rejected() {
        assert!(low_resource_splits(10, &[0.0], 1).is_err());
        assert!(low_resource_splits(10, &[1.2], 1).is_err());
    }

    #[test]
    fn indices_are_sorted_and_distinct() {
        let splits = low_resource_splits(200, &default_fractions(), 42).unwrap();
        for s in &splits {
            for w in s.indices.windows(2) {
                assert!(w[0] < w[1]);
            }
            assert!(*s.indices.last().unwrap() < 200);
        }
    }
}
