//! Subject-disjoint cross-validation splits.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub train_subjects: BTreeSet<String>,
    pub test_subjects: BTreeSet<String>,
}

impl FoldSplit {
    /// Indices of `subjects` that fall in the train and test sets.
    pub fn partition<'a>(&self, subjects: impl IntoIterator<Item = &'a str>) -> (Vec<usize>, Vec<usize>) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, s) in subjects.into_iter().enumerate() {
            if self.test_subjects.contains(s) {
                test.push(i);
            } else if self.train_subjects.contains(s) {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Shuffles the distinct subjects with `seed` and holds out `k` at a time,
/// giving `⌈N/k⌉` folds whose test sets partition the subjects.
pub fn make_folds<S: AsRef<str>>(subject_ids: &[S], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    let all: BTreeSet<String> = subject_ids.iter().map(|s| s.as_ref().to_owned()).collect();
    let n = all.len();
    if k == 0 {
        return Err(config("k must be positive"));
    }
    if k > n {
        return Err(config(format!("k = {k} exceeds the {n} available subjects")));
    }
    if k == n {
        return Err(config(format!("k = {k} leaves no training subjects")));
    }
    let mut order: Vec<String> = all.iter().cloned().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(k)
        .map(|test| {
            let test_subjects: BTreeSet<String> = test.iter().cloned().collect();
            FoldSplit {
                train_subjects: all.difference(&test_subjects).cloned().collect(),
                test_subjects,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:03}")).collect()
    }

    #[test]
    fn hundred_subjects_leave_ten_out() {
        let subjects = ids(100);
        let folds = make_folds(&subjects, 10, 3).unwrap();
        assert_eq!(folds.len(), 10);
        let mut seen = BTreeSet::new();
        for f in &folds {
            assert_eq!(f.test_subjects.len(), 10);
            assert!(f.train_subjects.is_disjoint(&f.test_subjects));
            assert_eq!(f.train_subjects.len() + f.test_subjects.len(), 100);
            for s in &f.test_subjects {
                assert!(seen.insert(s.clone()), "{s} tested twice");
            }
        }
        assert_eq!(seen.len(), 100);
    }

    #[test]
    fn ragged_last_fold_and_rejections() {
        let folds = make_folds(&ids(7), 3, 0).unwrap();
        assert_eq!(folds.iter().map(|f| f.test_subjects.len()).collect::<Vec<_>>(), [3, 3, 1]);
        assert!(make_folds(&ids(5), 0, 0).is_err());
        assert!(make_folds(&ids(5), 5, 0).is_err());
        assert!(make_folds(&ids(5), 6, 0).is_err());
    }

    #[test]
    fn partition_by_subject() {
        let folds = make_folds(&ids(4), 2, 1).unwrap();
        let per_sample = ["s000", "s001", "s002", "s003", "s000"];
        let (train, test) = folds[0].partition(per_sample.iter().copied());
        assert_eq!(train.len() + test.len(), per_sample.len());
    }
}
