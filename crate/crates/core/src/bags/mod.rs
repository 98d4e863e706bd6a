//! Bags of instance embeddings, the MIL labelling rule, synthetic bag
//! generation, and dataset splitting.

mod manifest;
mod split;
mod synth;

pub use manifest::{load_dataset, read_dataset_manifest, write_dataset_manifest, ManifestRow};
pub use split::{kfold, split_train_test, DatasetSplit};
pub use synth::{generate_planted, generate_synthetic, PlantedConfig, SynthConfig};

use crate::diff::Tensor2D;
use crate::error::{Error, Result};
use crate::wsi::TileCoord;

/// A slide-level bag: `n` instance embeddings sharing one binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub instances: Tensor2D,
    pub label: u8,
    /// Hidden per-instance ground truth; only synthetic data carries it.
    pub instance_labels: Option<Vec<u8>>,
    pub source_id: String,
    pub tile_coords: Option<Vec<TileCoord>>,
}

impl Bag {
    pub fn new(source_id: impl Into<String>, instances: Tensor2D, label: u8) -> Result<Self> {
        if instances.rows() == 0 {
            return Err(Error::EmptyBag);
        }
        if label > 1 {
            return Err(Error::Input(format!("bag label {label} is not binary")));
        }
        Ok(Self {
            instances,
            label,
            instance_labels: None,
            source_id: source_id.into(),
            tile_coords: None,
        })
    }

    pub fn with_instance_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} instance labels for {} instances",
                labels.len(),
                self.len()
            )));
        }
        if bag_label_oracle(&labels)? != self.label {
            return Err(Error::Input(format!(
                "bag {} label {} contradicts its instance labels",
                self.source_id, self.label
            )));
        }
        self.instance_labels = Some(labels);
        Ok(self)
    }

    pub fn with_tile_coords(mut self, coords: Vec<TileCoord>) -> Result<Self> {
        if coords.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} tile coords for {} instances",
                coords.len(),
                self.len()
            )));
        }
        self.tile_coords = Some(coords);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.instances.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn embed_dim(&self) -> usize {
        self.instances.cols()
    }
}

/// Standard MIL rule: a bag is negative iff every instance is negative.
pub fn bag_label_oracle(instance_labels: &[u8]) -> Result<u8> {
    if instance_labels.is_empty() {
        return Err(Error::EmptyBag);
    }
    Ok(u8::from(instance_labels.iter().any(|&y| y != 0)))
}

pub(crate) fn require_both_classes(bags: &[Bag]) -> Result<()> {
    let positives = bags.iter().filter(|b| b.label == 1).count();
    if positives == 0 || positives == bags.len() {
        return Err(Error::DegenerateDataset(format!(
            "{} bags, {positives} positive: both classes are required",
            bags.len()
        )));
    }
    Ok(())
}
