use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wsi::{store_read, EmbeddingStore};

use super::Bag;

/// One bag in a dataset manifest: `source_id,label,store_path`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub source_id: String,
    pub label: u8,
    pub store_path: PathBuf,
}

pub fn write_dataset_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a manifest; relative store paths resolve against the manifest's directory.
pub fn read_dataset_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rows = Vec::new();
    for rec in csv::Reader::from_path(path)?.deserialize() {
        let mut row: ManifestRow = rec?;
        if row.label > 1 {
            return Err(Error::Format(format!(
                "{}: label {} for {} is not binary",
                path.display(),
                row.label,
                row.source_id
            )));
        }
        if row.store_path.is_relative() {
            row.store_path = base.join(&row.store_path);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Bags listed in a dataset manifest, loaded from their embedding stores.
pub fn load_dataset(path: &Path, include_augmented: bool) -> Result<Vec<Bag>> {
    let mut stores: BTreeMap<PathBuf, EmbeddingStore> = BTreeMap::new();
    let mut bags = Vec::new();
    for row in read_dataset_manifest(path)? {
        if !stores.contains_key(&row.store_path) {
            stores.insert(row.store_path.clone(), store_read(&row.store_path)?);
        }
        let record = stores[&row.store_path]
            .get(&row.source_id)
            .ok_or_else(|| Error::Format(format!("{} not found in {}", row.source_id, row.store_path.display())))?;
        if record.label != row.label {
            return Err(Error::Format(format!(
                "{}: manifest label {} but store label {}",
                row.source_id, row.label, record.label
            )));
        }
        bags.push(record.to_bag(include_augmented)?);
    }
    Ok(bags)
}
