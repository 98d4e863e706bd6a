//! Slide preprocessing: tissue masking on the thumbnail, artifact filtering,
//! pyramid coordinate mapping, tile padding and gating, magnification-aware
//! sampling, augmentation, feature extraction, and embedding storage.

mod augment;
mod features;
mod kmeans;
mod mask;
mod pipeline;
mod sampling;
mod slide;
mod store;
mod synth;
mod tiling;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{apply_augmentation, augment, rotate90, AugmentConfig, AugmentParams};
pub use features::{FeatureExtractor, HandcraftedExtractor, EMBED_DIM};
pub use kmeans::{kmeans, wcss, KMeansResult};
pub use mask::{
    color_artifact_filter, histogram, luma, morph_close, otsu_threshold, tissue_mask, TissueMask, TissuePixel,
};
pub use pipeline::{analyze_thumbnail, process_slide, run_pipeline, PipelineConfig, SlideReport, ThumbnailAnalysis};
pub use sampling::{cluster_sample, sample_level5};
pub use slide::{
    read_slide_manifest, write_slide_manifest, DirPyramid, LevelInfo, Region, RegionKind, SlideManifestRow, SlideMeta,
    SlideSource,
};
pub use store::{store_read, store_write, EmbeddingStore, SlideRecord, STORE_VERSION};
pub use synth::{synth_corpus, synth_slide, PyramidSynthConfig};
pub use tiling::{
    child_tiles, grid_dims, pad_tile, thumb_pixel_to_tile, thumb_to_tiles, tile_footprint, tissue_fraction,
    tissue_fraction_gate, TileRef, TissueClassifier, TILE_SIZE,
};

/// Pyramid level tag. Each step up doubles linear resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Magnification {
    #[serde(rename = "thumb")]
    Thumb,
    #[serde(rename = "5x")]
    X5,
    #[serde(rename = "10x")]
    X10,
    #[serde(rename = "20x")]
    X20,
}

impl Magnification {
    pub fn as_str(self) -> &'static str {
        match self {
            Magnification::Thumb => "thumb",
            Magnification::X5 => "5x",
            Magnification::X10 => "10x",
            Magnification::X20 => "20x",
        }
    }

    /// Byte code used in the embedding store.
    pub fn code(self) -> u8 {
        match self {
            Magnification::Thumb => 0,
            Magnification::X5 => 5,
            Magnification::X10 => 10,
            Magnification::X20 => 20,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Magnification::Thumb),
            5 => Ok(Magnification::X5),
            10 => Ok(Magnification::X10),
            20 => Ok(Magnification::X20),
            c => Err(Error::Format(format!("unknown magnification code {c}"))),
        }
    }

    /// The next finer magnification, if any.
    pub fn next(self) -> Option<Self> {
        match self {
            Magnification::Thumb => None,
            Magnification::X5 => Some(Magnification::X10),
            Magnification::X10 => Some(Magnification::X20),
            Magnification::X20 => None,
        }
    }
}

impl fmt::Display for Magnification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Magnification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "thumb" => Ok(Magnification::Thumb),
            "5x" => Ok(Magnification::X5),
            "10x" => Ok(Magnification::X10),
            "20x" => Ok(Magnification::X20),
            other => Err(Error::Config(format!("unknown magnification `{other}`"))),
        }
    }
}

/// Grid position of a tile at one magnification.
///
/// Ordered by `(level, row, col)`, the merge order for concurrently processed tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileCoord {
    pub level: Magnification,
    pub col: u32,
    pub row: u32,
}

impl TileCoord {
    pub fn new(level: Magnification, col: u32, row: u32) -> Self {
        Self { level, col, row }
    }
}

impl Ord for TileCoord {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.level, self.row, self.col).cmp(&(other.level, other.row, other.col))
    }
}

impl PartialOrd for TileCoord {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
