//! Slide-to-embeddings pipeline.

use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff::Tensor2D;
use crate::error::{Error, Result};
use crate::mil::derive_seed;

use super::augment::{augment, AugmentConfig};
use super::features::FeatureExtractor;
use super::kmeans::kmeans;
use super::mask::{color_artifact_filter, morph_close, tissue_mask, TissueMask, TissuePixel};
use super::sampling::{cluster_sample, sample_level5};
use super::slide::{read_slide_manifest, DirPyramid, SlideSource};
use super::store::{store_write, EmbeddingStore, SlideRecord};
use super::tiling::{child_tiles, pad_tile, thumb_to_tiles, tissue_fraction, TileRef, TissueClassifier};
use super::Magnification;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Magnification of the tiles that end up in the bag.
    pub target: Magnification,
    /// The mask is computed on the coarsest level with at least this short side.
    pub thumb_min_side: u32,
    /// Colour-distance threshold in 8-bit RGB units.
    pub color_distance: f64,
    /// Minimum tissue fraction of a padded tile.
    pub tissue_fraction: f64,
    /// 5x tiles are subsampled only above this count.
    pub sample_limit: usize,
    pub sample_frac: f64,
    /// Clusters over parent-level tiles when the target is finer than 5x.
    pub clusters: usize,
    pub n_per_cluster: usize,
    pub kmeans_iters: usize,
    /// Independent k-means++ starts; the lowest-WCSS run is kept.
    pub kmeans_restarts: usize,
    pub augment: AugmentConfig,
    /// Store two augmented copies of every tile alongside the original.
    pub augmentations: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            target: Magnification::X10,
            thumb_min_side: 64,
            color_distance: 60.0,
            tissue_fraction: 0.25,
            sample_limit: 1000,
            sample_frac: 0.6,
            clusters: 8,
            n_per_cluster: 20,
            kmeans_iters: 100,
            kmeans_restarts: 10,
            augment: AugmentConfig::default(),
            augmentations: true,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tissue_fraction) {
            return Err(Error::Config(format!(
                "tissue_fraction {} outside [0, 1]",
                self.tissue_fraction
            )));
        }
        if !(self.sample_frac > 0.0 && self.sample_frac <= 1.0) {
            return Err(Error::Config(format!(
                "sample_frac {} outside (0, 1]",
                self.sample_frac
            )));
        }
        if self.color_distance < 0.0 || self.clusters == 0 || self.n_per_cluster == 0 {
            return Err(Error::Config(
                "color_distance must be >= 0, clusters and n_per_cluster >= 1".into(),
            ));
        }
        if self.target == Magnification::Thumb {
            return Err(Error::Config("target magnification must be 5x, 10x, or 20x".into()));
        }
        Ok(())
    }
}

/// Per-slide counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideReport {
    pub slide_id: String,
    pub otsu_threshold: u8,
    pub mask_pixels: usize,
    pub filtered_pixels: usize,
    /// Tiles examined by the tissue-fraction gate, over all levels.
    pub gated: usize,
    pub discarded: usize,
    /// Tiles in the bag, not counting augmentations.
    pub kept: usize,
    pub rows: usize,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn tile_seed(slide_seed: u64, t: &TileRef) -> u64 {
    let key = (u64::from(t.coord.level.code()) << 56) ^ (u64::from(t.coord.row) << 28) ^ u64::from(t.coord.col);
    derive_seed(slide_seed, key)
}

struct Ctx<'a> {
    source: &'a dyn SlideSource,
    classifier: TissueClassifier,
    background: [u8; 3],
    threshold: f64,
}

impl Ctx<'_> {
    fn padded(&self, t: &TileRef) -> Result<RgbImage> {
        pad_tile(&self.source.read_region(t.coord.level, t.px_rect)?, self.background)
    }

    /// Padded images of the tiles passing the gate, in input order.
    fn gate(&self, tiles: &[TileRef]) -> Result<Vec<(TileRef, RgbImage)>> {
        let checked: Vec<Option<(TileRef, RgbImage)>> = tiles
            .par_iter()
            .map(|t| {
                let img = self.padded(t)?;
                Ok((tissue_fraction(&img, &self.classifier) >= self.threshold).then_some((*t, img)))
            })
            .collect::<Result<_>>()?;
        Ok(checked.into_iter().flatten().collect())
    }
}

fn level_dims(source: &dyn SlideSource, tag: Magnification) -> Result<(u32, u32)> {
    source
        .meta()
        .level(tag)
        .map(|l| l.dims())
        .ok_or_else(|| Error::Input(format!("slide {} has no {tag} level", source.meta().slide_id)))
}

/// Thumbnail-level results shared by tile selection and the tile gate.
#[derive(Debug, Clone)]
pub struct ThumbnailAnalysis {
    /// Otsu mask after closing.
    pub mask: TissueMask,
    /// Mask pixels surviving the colour filter.
    pub tissue_pixels: Vec<TissuePixel>,
    pub classifier: TissueClassifier,
    /// Mean colour outside the mask, used to pad edge tiles.
    pub background: [u8; 3],
}

pub fn analyze_thumbnail(thumb: &RgbImage, color_distance: f64) -> Result<ThumbnailAnalysis> {
    let (raw_mask, t) = tissue_mask(thumb)?;
    let mask = morph_close(&raw_mask);
    let pixels: Vec<TissuePixel> = mask
        .pixels()
        .map(|(x, y)| TissuePixel {
            x,
            y,
            rgb: thumb.get_pixel(x, y).0,
        })
        .collect();
    let (tissue_pixels, mean) = color_artifact_filter(&pixels, color_distance)?;

    let mut bg_sum = [0u64; 3];
    let mut bg_n = 0u64;
    for (x, y, p) in thumb.enumerate_pixels() {
        if !mask.get(x, y) {
            for c in 0..3 {
                bg_sum[c] += u64::from(p.0[c]);
            }
            bg_n += 1;
        }
    }
    let background = if bg_n == 0 {
        [255; 3]
    } else {
        [0, 1, 2].map(|c| ((bg_sum[c] + bg_n / 2) / bg_n) as u8)
    };
    Ok(ThumbnailAnalysis {
        mask,
        tissue_pixels,
        classifier: TissueClassifier {
            luma_threshold: t,
            reference_color: mean,
            max_distance: color_distance,
        },
        background,
    })
}

/// Runs masking, tiling, gating, sampling, augmentation, and extraction on one slide.
pub fn process_slide(
    source: &dyn SlideSource,
    cfg: &PipelineConfig,
    extractor: &dyn FeatureExtractor,
) -> Result<(SlideRecord, SlideReport)> {
    cfg.validate()?;
    let meta = source.meta();
    let slide_seed = derive_seed(cfg.seed, fnv1a(&meta.slide_id));
    let thumb_info = meta.thumbnail_level(cfg.thumb_min_side).ok_or_else(|| {
        Error::Input(format!(
            "slide {}: no level with short side >= {}",
            meta.slide_id, cfg.thumb_min_side
        ))
    })?;
    let thumb = source.level_image(thumb_info.tag)?;

    let analysis = analyze_thumbnail(thumb, cfg.color_distance)?;
    let ctx = Ctx {
        source,
        classifier: analysis.classifier,
        background: analysis.background,
        threshold: cfg.tissue_fraction,
    };
    let coords: Vec<(u32, u32)> = analysis.tissue_pixels.iter().map(|p| (p.x, p.y)).collect();
    let thumb_dims = thumb_info.dims();

    let (gated, final_tiles) = if cfg.target == Magnification::X5 {
        let cands = thumb_to_tiles(
            &coords,
            thumb_dims,
            Magnification::X5,
            level_dims(source, Magnification::X5)?,
        )?;
        let passed = ctx.gate(&cands)?;
        let pick = sample_level5(passed.len(), cfg.sample_frac, cfg.sample_limit, slide_seed)?;
        let mut passed: Vec<Option<(TileRef, RgbImage)>> = passed.into_iter().map(Some).collect();
        let chosen = pick.into_iter().filter_map(|i| passed[i].take()).collect::<Vec<_>>();
        (cands.len(), chosen)
    } else {
        let parent = [Magnification::X5, Magnification::X10]
            .into_iter()
            .find(|m| m.next() == Some(cfg.target))
            .ok_or_else(|| Error::Config(format!("no parent level for {}", cfg.target)))?;
        let cands = thumb_to_tiles(&coords, thumb_dims, parent, level_dims(source, parent)?)?;
        let passed = ctx.gate(&cands)?;
        let mut gated = cands.len();
        if passed.is_empty() {
            (gated, Vec::new())
        } else {
            let feats: Vec<Vec<f64>> = passed
                .par_iter()
                .map(|(_, img)| extractor.extract(img))
                .collect::<Result<_>>()?;
            let points = Tensor2D::from_rows(&feats)?;
            let k = cfg.clusters.min(passed.len());
            let km = kmeans(&points, k, slide_seed, cfg.kmeans_iters, cfg.kmeans_restarts)?;
            let picked = cluster_sample(&km.assignments, cfg.n_per_cluster, derive_seed(slide_seed, 1));
            let child_dims = level_dims(source, cfg.target)?;
            let mut children = Vec::new();
            for i in picked {
                children.extend(child_tiles(&passed[i].0, child_dims)?);
            }
            children.sort_by_key(|c| c.coord);
            children.dedup();
            gated += children.len();
            (gated, ctx.gate(&children)?)
        }
    };

    let mut final_tiles = final_tiles;
    final_tiles.sort_by_key(|(t, _)| t.coord);
    let per_tile: Vec<Vec<(Vec<f64>, u8)>> = final_tiles
        .par_iter()
        .map(|(tile, img)| {
            let mut rows = vec![(extractor.extract(img)?, 0u8)];
            if cfg.augmentations {
                for (k, aug) in augment(img, &cfg.augment, tile_seed(slide_seed, tile))
                    .iter()
                    .enumerate()
                {
                    rows.push((extractor.extract(aug)?, k as u8 + 1));
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let mut values = Vec::new();
    let mut tile_coords = Vec::new();
    let mut flags = Vec::new();
    for ((tile, _), rows) in final_tiles.iter().zip(per_tile) {
        for (v, flag) in rows {
            values.extend(v);
            tile_coords.push(tile.coord);
            flags.push(flag);
        }
    }
    if tile_coords.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n_rows = tile_coords.len();
    let embeddings = Tensor2D::from_vec(n_rows, extractor.dim(), values)?;
    let record = SlideRecord::new(meta.slide_id.clone(), meta.label, embeddings, tile_coords, flags)?;
    let report = SlideReport {
        slide_id: meta.slide_id.clone(),
        otsu_threshold: analysis.classifier.luma_threshold,
        mask_pixels: analysis.mask.count(),
        filtered_pixels: analysis.tissue_pixels.len(),
        gated,
        discarded: gated - final_tiles.len().min(gated),
        kept: final_tiles.len(),
        rows: n_rows,
    };
    Ok((record, report))
}

/// Processes every slide of a slide manifest into one store at `out`.
///
/// Slides are handled concurrently; records keep manifest order.
pub fn run_pipeline(
    manifest: &Path,
    cfg: &PipelineConfig,
    extractor: &dyn FeatureExtractor,
    out: &Path,
) -> Result<(EmbeddingStore, Vec<SlideReport>)> {
    cfg.validate()?;
    let rows = read_slide_manifest(manifest)?;
    let results: Vec<(SlideRecord, SlideReport)> = rows
        .par_iter()
        .map(|row| {
            let slide = DirPyramid::open(&row.path)?;
            if slide.meta().slide_id != row.slide_id || slide.meta().label != row.label {
                return Err(Error::Format(format!(
                    "manifest row {} (label {}) disagrees with {}",
                    row.slide_id,
                    row.label,
                    row.path.display()
                )));
            }
            process_slide(&slide, cfg, extractor)
        })
        .collect::<Result<_>>()?;
    let mut store = EmbeddingStore::new(extractor.dim());
    let mut reports = Vec::with_capacity(results.len());
    for (rec, rep) in results {
        store.push(rec)?;
        reports.push(rep);
    }
    store_write(out, &store)?;
    Ok((store, reports))
}
