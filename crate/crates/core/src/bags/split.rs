use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{require_both_classes, Bag};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Bag>,
    pub test: Vec<Bag>,
    /// Index sets over `train`; empty until [`DatasetSplit::with_folds`].
    pub folds: Vec<Vec<usize>>,
}

impl DatasetSplit {
    pub fn with_folds(mut self, k: usize, seed: u64) -> Result<Self> {
        self.folds = kfold(&self.train, k, seed)?;
        Ok(self)
    }
}

fn shuffled_class_indices(bags: &[Bag], label: u8, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..bags.len()).filter(|&i| bags[i].label == label).collect();
    idx.shuffle(rng);
    idx
}

/// Stratified shuffled train/test split.
///
/// Each class sends `round(test_frac * count)` bags to the test side, clamped
/// so both sides keep at least one bag of each class. Bags keep their input
/// order within each side.
pub fn split_train_test(bags: &[Bag], test_frac: f64, seed: u64) -> Result<DatasetSplit> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::Config(format!("test fraction {test_frac} outside (0, 1)")));
    }
    if bags.len() < 5 {
        return Err(Error::DegenerateDataset(format!(
            "{} bags; at least 5 are needed to split",
            bags.len()
        )));
    }
    require_both_classes(bags)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; bags.len()];
    for label in [0u8, 1] {
        let idx = shuffled_class_indices(bags, label, &mut rng);
        if idx.len() < 2 {
            return Err(Error::DegenerateDataset(format!(
                "class {label} has {} bag(s); both sides of the split need one",
                idx.len()
            )));
        }
        let n_test = ((test_frac * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..n_test] {
            is_test[i] = true;
        }
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (bag, t) in bags.iter().zip(is_test) {
        if t {
            test.push(bag.clone());
        } else {
            train.push(bag.clone());
        }
    }
    Ok(DatasetSplit {
        train,
        test,
        folds: Vec::new(),
    })
}

/// Stratified k-fold partition of `bags` into index sets.
///
/// Shuffled negatives followed by shuffled positives are dealt round-robin, so
/// fold sizes differ by at most one with the larger folds first, and each
/// class is spread within one bag per fold.
pub fn kfold(bags: &[Bag], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("{k} fold(s) leave nothing to validate on")));
    }
    if k > bags.len() {
        return Err(Error::Config(format!("{k} folds for {} bags", bags.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = shuffled_class_indices(bags, 0, &mut rng);
    order.extend(shuffled_class_indices(bags, 1, &mut rng));

    let mut folds = vec![Vec::new(); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}
