use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one trial, derived from the master seed and the trial index.
pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    mix(mix(master_seed).wrapping_add((trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Seed for a named stage inside a trial.
pub fn stage_seed(trial_seed: u64, stage: u64) -> u64 {
    mix(trial_seed ^ mix(stage.wrapping_add(1)))
}

/// Sorted train and test row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: each class contributes `round(fraction · n_c)` test
/// rows, clamped so both sides keep at least one.
pub fn split_dataset(labels: &[usize], n_classes: usize, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(format!(
            "test fraction {test_fraction} must lie in (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..n_classes {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if rows.len() < 2 {
            return Err(Error::input(format!(
                "class {class} has {} samples; a split needs at least 2",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        let n_test = ((test_fraction * rows.len() as f64).round() as usize).clamp(1, rows.len() - 1);
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn labels(per_class: usize, k: usize) -> Vec<usize> {
        (0..per_class * k).map(|i| i % k).collect()
    }

    #[test]
    fn arithmetic() {
        let y = labels(10, 3);
        let s = split_dataset(&y, 3, 0.2, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (24, 6));
        for c in 0..3 {
            assert_eq!(s.test.iter().filter(|&&i| y[i] == c).count(), 2);
        }
    }

    #[test]
    fn seeded_and_varied() {
        let y = labels(10, 3);
        assert_eq!(split_dataset(&y, 3, 0.2, 5).unwrap(), split_dataset(&y, 3, 0.2, 5).unwrap());
        let distinct: HashSet<Vec<usize>> = (0..50)
            .map(|t| split_dataset(&y, 3, 0.2, trial_seed(42, t)).unwrap().test)
            .collect();
        assert!(distinct.len() >= 49);
    }

    #[test]
    fn tiny_class_rejected() {
        assert!(matches!(split_dataset(&[0, 0, 1], 2, 0.2, 0), Err(Error::InvalidInput(_))));
        assert!(split_dataset(&[0, 0, 1, 1], 2, 0.0, 0).is_err());
        // two samples always put one on each side
        let s = split_dataset(&[0, 0, 1, 1], 2, 0.9, 0).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (2, 2));
    }

    #[test]
    fn seeds_differ() {
        assert_ne!(trial_seed(0, 0), trial_seed(0, 1));
        assert_ne!(trial_seed(0, 0), trial_seed(1, 0));
        assert_ne!(stage_seed(7, 0), stage_seed(7, 1));
    }

    proptest! {
        #[test]
        fn disjoint_and_exhaustive(
            y in proptest::collection::vec(0usize..3, 6..80),
            frac in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let counts: Vec<usize> = (0..3).map(|c| y.iter().filter(|&&l| l == c).count()).collect();
            prop_assume!(counts.iter().all(|&c| c >= 2));
            let s = split_dataset(&y, 3, frac, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..y.len()).collect::<Vec<_>>());
            for c in 0..3 {
                prop_assert!(s.test.iter().any(|&i| y[i] == c));
                prop_assert!(s.train.iter().any(|&i| y[i] == c));
            }
        }
    }
}
