//! Subject-wise evaluation protocols and paired significance tests.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pose_io::SubjectId;

/// Held-out subjects of one fold; the rest train.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub test: Vec<SubjectId>,
    pub train: Vec<SubjectId>,
}

impl Fold {
    pub fn is_test(&self, id: SubjectId) -> bool {
        self.test.binary_search(&id).is_ok()
    }
}

fn unique_sorted(subjects: &[SubjectId]) -> Result<Vec<SubjectId>> {
    let set: BTreeSet<_> = subjects.iter().copied().collect();
    if set.len() != subjects.len() {
        return Err(Error::Invalid("duplicate subject ids".into()));
    }
    Ok(set.into_iter().collect())
}

fn folds_from(groups: Vec<Vec<SubjectId>>, all: &[SubjectId]) -> Vec<Fold> {
    groups
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let train = all.iter().copied().filter(|id| test.binary_search(id).is_err()).collect();
            Fold { test, train }
        })
        .collect()
}

/// Seeded subject-level k-fold split; fold sizes differ by at most one.
pub fn kfold_split(subjects: &[SubjectId], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let all = unique_sorted(subjects)?;
    if k < 2 || k > all.len() {
        return Err(Error::Config(format!("{k} folds for {} subjects", all.len())));
    }
    let mut shuffled = all.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (all.len() / k, all.len() % k);
    let mut groups = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        groups.push(shuffled[start..start + size].to_vec());
        start += size;
    }
    Ok(folds_from(groups, &all))
}

/// One fold per subject, in id order.
pub fn loso_split(subjects: &[SubjectId]) -> Result<Vec<Fold>> {
    let all = unique_sorted(subjects)?;
    if all.len() < 2 {
        return Err(Error::Config("leave-one-subject-out needs two subjects".into()));
    }
    Ok(folds_from(all.iter().map(|&s| vec![s]).collect(), &all))
}

/// Fail if any training sample belongs to a test subject of the fold.
pub fn audit_fold(fold: &Fold, train_sample_subjects: impl IntoIterator<Item = SubjectId>) -> Result<()> {
    for id in train_sample_subjects {
        if fold.is_test(id) {
            return Err(Error::Audit(format!("test subject {id} has a clip in training data")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Significance {
    pub p_value: f64,
    pub stars: &'static str,
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Exhaustive up to this many pairs, sampled above.
pub const EXACT_LIMIT: usize = 20;
pub const PERMUTATION_SAMPLES: usize = 10_000;

/// Two-sided paired sign-flip permutation test on per-fold differences.
pub fn significance(a: &[f64], b: &[f64], seed: u64) -> Result<Significance> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} fold accuracies", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("no fold accuracies"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let observed = diffs.iter().sum::<f64>().abs() / n as f64;
    // flipped means equal to the observed one up to rounding count as extreme
    let tol = 1e-12 * (1.0 + observed);
    let stat = |signs: &dyn Fn(usize) -> bool| {
        diffs.iter().enumerate().map(|(i, d)| if signs(i) { -d } else { *d }).sum::<f64>().abs() / n as f64
    };
    let p_value = if n <= EXACT_LIMIT {
        let total = 1u64 << n;
        let hits = (0..total).filter(|mask| stat(&|i| mask >> i & 1 == 1) >= observed - tol).count();
        hits as f64 / total as f64
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0usize;
        for _ in 0..PERMUTATION_SAMPLES {
            let flips: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
            if stat(&|i| flips[i]) >= observed - tol {
                hits += 1;
            }
        }
        (hits + 1) as f64 / (PERMUTATION_SAMPLES + 1) as f64
    };
    Ok(Significance { p_value, stars: stars(p_value) })
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
