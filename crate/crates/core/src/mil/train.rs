use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bags::{kfold, require_both_classes, split_train_test, Bag};
use crate::diff::{cosine_anneal, Adam};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_runs, roc_auc, select_best_fold, RocCurve, RunSummary};

use super::{Architecture, MilModel, ModelDims};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub folds: usize,
    /// Cosine annealing over epochs; constant `lr0` otherwise.
    pub cosine: bool,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            lr_min: 1e-6,
            epochs: 50,
            folds: 5,
            cosine: true,
            test_frac: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 <= lr_min <= lr0, lr0 > 0 (got {} / {})",
                self.lr_min, self.lr0
            )));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> Result<f64> {
        if self.cosine {
            cosine_anneal(self.lr0, self.lr_min, epoch, self.epochs)
        } else {
            Ok(self.lr0)
        }
    }
}

/// SplitMix64 step, used to derive independent sub-seeds.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains in place, one bag per optimizer step, and returns the mean loss of each epoch.
pub fn fit(model: &mut MilModel, bags: &[Bag], config: &TrainConfig, seed: u64) -> Result<Vec<f64>> {
    config.validate()?;
    if bags.is_empty() {
        return Err(Error::DegenerateDataset("no bags to train on".into()));
    }
    let adam = Adam::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..bags.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch)?;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            model.zero_grad();
            total += model.accumulate_gradients(&bags[i].instances, f64::from(bags[i].label))?;
            adam.step(model.params_mut(), lr);
        }
        losses.push(total / bags.len() as f64);
    }
    Ok(losses)
}

pub fn predict(model: &MilModel, bags: &[Bag]) -> Result<Vec<f64>> {
    bags.iter()
        .map(|b| model.forward(&b.instances).map(|o| o.bag_prob))
        .collect()
}

fn labels(bags: &[Bag]) -> Vec<u8> {
    bags.iter().map(|b| b.label).collect()
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub model: MilModel,
    pub epoch_losses: Vec<f64>,
    pub val_auc: f64,
}

#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
}

impl CrossValidation {
    pub fn val_aucs(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.val_auc).collect()
    }

    pub fn best(&self) -> Result<&FoldResult> {
        Ok(&self.folds[select_best_fold(&self.val_aucs())?])
    }
}

/// k-fold cross-validation on `train`: one model per fold, scored on its held-out fold.
/// Folds train concurrently; results come back in fold order.
pub fn train_model(
    train: &[Bag],
    arch: Architecture,
    dims: &ModelDims,
    config: &TrainConfig,
) -> Result<CrossValidation> {
    config.validate()?;
    require_both_classes(train)?;
    let folds = kfold(train, config.folds, derive_seed(config.seed, 1))?;

    let results: Result<Vec<FoldResult>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, held_out)| {
            let fit_bags: Vec<Bag> = (0..train.len())
                .filter(|i| held_out.binary_search(i).is_err())
                .map(|i| train[i].clone())
                .collect();
            let val_bags: Vec<Bag> = held_out.iter().map(|&i| train[i].clone()).collect();
            let fold_seed = derive_seed(config.seed, 100 + f as u64);
            let mut model = MilModel::new(arch, dims.clone(), fold_seed)?;
            let epoch_losses = fit(&mut model, &fit_bags, config, derive_seed(fold_seed, 2))?;
            let (_, val_auc) = roc_auc(&predict(&model, &val_bags)?, &labels(&val_bags))?;
            Ok(FoldResult {
                fold: f,
                model,
                epoch_losses,
                val_auc,
            })
        })
        .collect();
    Ok(CrossValidation { folds: results? })
}

/// One run of the full protocol: stratified split, cross-validation on the
/// training side, and external validation of the best fold on the test side.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub cv: CrossValidation,
    pub best_fold: usize,
    pub test_scores: Vec<f64>,
    pub test_labels: Vec<u8>,
    pub test_auc: f64,
    pub roc: RocCurve,
}

impl ProtocolRun {
    pub fn best_model(&self) -> &MilModel {
        &self.cv.folds[self.best_fold].model
    }
}

pub fn run_protocol(bags: &[Bag], arch: Architecture, dims: &ModelDims, config: &TrainConfig) -> Result<ProtocolRun> {
    let split = split_train_test(bags, config.test_frac, config.seed)?;
    let cv = train_model(&split.train, arch, dims, config)?;
    let best_fold = select_best_fold(&cv.val_aucs())?;
    let test_scores = predict(&cv.folds[best_fold].model, &split.test)?;
    let test_labels = labels(&split.test);
    let (roc, test_auc) = roc_auc(&test_scores, &test_labels)?;
    Ok(ProtocolRun {
        cv,
        best_fold,
        test_scores,
        test_labels,
        test_auc,
        roc,
    })
}

/// Independent protocol runs, each with its own split and initialisation
/// seeds derived from `config.seed`, summarised as mean ± sample std of test AUC.
pub fn repeat_protocol(
    bags: &[Bag],
    arch: Architecture,
    dims: &ModelDims,
    config: &TrainConfig,
    runs: usize,
) -> Result<(RunSummary, Vec<ProtocolRun>)> {
    let mut out = Vec::with_capacity(runs);
    for r in 0..runs {
        let cfg = TrainConfig {
            seed: derive_seed(config.seed, 1000 + r as u64),
            ..config.clone()
        };
        out.push(run_protocol(bags, arch, dims, &cfg)?);
    }
    let aucs: Vec<f64> = out.iter().map(|r| r.test_auc).collect();
    Ok((aggregate_runs(&aucs)?, out))
}
