//! Synthetic slide pyramids with known tissue, artifact, and signal regions.
//!
//! The finest level is 10x. Content is laid out on the 5x tile grid (one cell
//! per 5x tile, 1024 base pixels wide): a cell holds a tissue disk, a
//! saturated green marker disk, or nothing, and every disk stays inside its
//! cell. Positive slides carry a darker textured disk inside one tissue disk.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::slide::{write_slide_manifest, LevelInfo, Region, RegionKind, SlideManifestRow, SlideMeta, META_FILE};
use super::{Magnification, TILE_SIZE};

pub const BACKGROUND: [u8; 3] = [242, 242, 240];
pub const TISSUE: [u8; 3] = [205, 120, 170];
pub const SIGNAL: [u8; 3] = [188, 100, 162];
pub const ARTIFACT: [u8; 3] = [40, 190, 60];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PyramidSynthConfig {
    pub slides: usize,
    /// 5x tile grid.
    pub grid_cols: u32,
    pub grid_rows: u32,
    /// Base pixels cut from the right edge so the last column is partial.
    pub right_trim: u32,
    /// Base-to-thumbnail downsampling factor.
    pub thumb_factor: u32,
    pub tissue_cell_prob: f64,
    pub max_artifacts: usize,
    pub mpp: f64,
    pub seed: u64,
}

impl Default for PyramidSynthConfig {
    fn default() -> Self {
        Self {
            slides: 20,
            grid_cols: 3,
            grid_rows: 3,
            right_trim: 300,
            thumb_factor: 16,
            tissue_cell_prob: 0.7,
            max_artifacts: 2,
            mpp: 0.5,
            seed: 0,
        }
    }
}

/// One slide's levels, finest first, and its metadata. File names are filled in.
pub fn synth_slide(cfg: &PyramidSynthConfig, index: usize) -> Result<(SlideMeta, Vec<RgbImage>)> {
    if cfg.grid_cols == 0 || cfg.grid_rows == 0 || cfg.thumb_factor < 4 {
        return Err(Error::Config(
            "grid must be non-empty and thumb_factor at least 4".into(),
        ));
    }
    let cell = 2 * TILE_SIZE;
    if cfg.right_trim >= cell / 2 {
        return Err(Error::Config(format!("right_trim must be below {}", cell / 2)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let width = cfg.grid_cols * cell - cfg.right_trim;
    let height = cfg.grid_rows * cell;
    let label = (index % 2) as u8;

    let cells = (cfg.grid_cols * cfg.grid_rows) as usize;
    let mut order: Vec<usize> = (0..cells).collect();
    for i in (1..cells).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let n_art = if cells > 2 {
        rng.random_range(1..=cfg.max_artifacts.min(cells - 2))
    } else {
        0
    };
    let mut regions = Vec::new();
    let mut tissue_cells = Vec::new();
    for (k, &c) in order.iter().enumerate() {
        let (col, row) = (c as u32 % cfg.grid_cols, c as u32 / cfg.grid_cols);
        let (x0, y0) = (f64::from(col * cell), f64::from(row * cell));
        let half = f64::from(cell) / 2.0;
        let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-40.0..40.0);
        if k < n_art {
            let r = rng.random_range(100.0..180.0);
            regions.push(Region {
                kind: RegionKind::Artifact,
                cx: x0 + half + jitter(&mut rng),
                cy: y0 + half + jitter(&mut rng),
                r,
            });
        } else if tissue_cells.len() < 2 || rng.random_bool(cfg.tissue_cell_prob) {
            let r = rng.random_range(360.0..440.0);
            regions.push(Region {
                kind: RegionKind::Tissue,
                cx: x0 + half + jitter(&mut rng),
                cy: y0 + half + jitter(&mut rng),
                r,
            });
            tissue_cells.push(regions.len() - 1);
        }
    }
    if label == 1 {
        let host = regions[tissue_cells[rng.random_range(0..tissue_cells.len())]];
        regions.push(Region {
            kind: RegionKind::Signal,
            cx: host.cx + rng.random_range(-60.0..60.0),
            cy: host.cy + rng.random_range(-60.0..60.0),
            r: host.r * 0.6,
        });
    }

    let phase: [f64; 3] = [
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(0.0..2.0 * PI),
    ];
    let base = paint(width, height, cell, &regions, phase);
    let x5 = downsample(&base, 2);
    let thumb = downsample(&base, cfg.thumb_factor);

    let slide_id = format!("slide{index:03}");
    let levels = vec![
        LevelInfo {
            tag: Magnification::X10,
            width: base.width(),
            height: base.height(),
            file: "level_10x.png".into(),
        },
        LevelInfo {
            tag: Magnification::X5,
            width: x5.width(),
            height: x5.height(),
            file: "level_5x.png".into(),
        },
        LevelInfo {
            tag: Magnification::Thumb,
            width: thumb.width(),
            height: thumb.height(),
            file: "thumb.png".into(),
        },
    ];
    let meta = SlideMeta {
        slide_id,
        label,
        mpp: cfg.mpp,
        levels,
        regions,
    };
    meta.validate()?;
    Ok((meta, vec![base, x5, thumb]))
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn paint(width: u32, height: u32, cell: u32, regions: &[Region], phase: [f64; 3]) -> RgbImage {
    let cols = width.div_ceil(cell) as usize;
    let mut by_cell: Vec<Vec<&Region>> = vec![Vec::new(); cols * height.div_ceil(cell) as usize];
    for r in regions {
        let idx = (r.cy as u32 / cell) as usize * cols + (r.cx as u32 / cell) as usize;
        by_cell[idx].push(r);
    }
    RgbImage::from_fn(width, height, |x, y| {
        let here = &by_cell[(y / cell) as usize * cols + (x / cell) as usize];
        let (fx, fy) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        let inside = |r: &Region| (fx - r.cx).powi(2) + (fy - r.cy).powi(2) < r.r * r.r;
        let mut kind = None;
        for r in here.iter().filter(|r| inside(r)) {
            // Signal sits on top of its host tissue disk.
            if kind != Some(RegionKind::Signal) {
                kind = Some(r.kind);
            }
        }
        let wave = (fx / 23.0 + phase[0]).sin() * (fy / 31.0 + phase[1]).cos();
        match kind {
            None => {
                let t = 1.5 * (fx / 57.0 + fy / 41.0 + phase[2]).sin();
                Rgb([
                    clamp_u8(f64::from(BACKGROUND[0]) + t),
                    clamp_u8(f64::from(BACKGROUND[1]) + t),
                    clamp_u8(f64::from(BACKGROUND[2]) + t),
                ])
            }
            Some(RegionKind::Tissue) => Rgb([
                clamp_u8(f64::from(TISSUE[0]) + 8.0 * wave),
                clamp_u8(f64::from(TISSUE[1]) + 10.0 * wave),
                clamp_u8(f64::from(TISSUE[2]) + 6.0 * wave),
            ]),
            Some(RegionKind::Signal) => {
                let stripe = if ((fx + fy) / 6.0).floor() as i64 % 2 == 0 {
                    6.0
                } else {
                    -6.0
                };
                Rgb([
                    clamp_u8(f64::from(SIGNAL[0]) + stripe),
                    clamp_u8(f64::from(SIGNAL[1]) + stripe),
                    clamp_u8(f64::from(SIGNAL[2]) + 0.5 * stripe),
                ])
            }
            Some(RegionKind::Artifact) => Rgb([
                clamp_u8(f64::from(ARTIFACT[0]) + 4.0 * wave),
                clamp_u8(f64::from(ARTIFACT[1]) + 4.0 * wave),
                ARTIFACT[2],
            ]),
        }
    })
}

/// Box-filter downsampling; edge blocks average the pixels they have.
pub(crate) fn downsample(img: &RgbImage, factor: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w.div_ceil(factor), h.div_ceil(factor), |ox, oy| {
        let mut sum = [0u32; 3];
        let mut n = 0u32;
        for y in oy * factor..((oy + 1) * factor).min(h) {
            for x in ox * factor..((ox + 1) * factor).min(w) {
                let p = img.get_pixel(x, y).0;
                for c in 0..3 {
                    sum[c] += u32::from(p[c]);
                }
                n += 1;
            }
        }
        Rgb([
            ((sum[0] + n / 2) / n) as u8,
            ((sum[1] + n / 2) / n) as u8,
            ((sum[2] + n / 2) / n) as u8,
        ])
    })
}

/// Writes `cfg.slides` pyramids under `out_dir` (one directory per slide)
/// plus `slides.csv`. Returns the manifest path.
pub fn synth_corpus(cfg: &PyramidSynthConfig, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = Vec::with_capacity(cfg.slides);
    for i in 0..cfg.slides {
        let (meta, images) = synth_slide(cfg, i)?;
        let dir = out_dir.join(&meta.slide_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (info, img) in meta.levels.iter().zip(&images) {
            img.save(dir.join(&info.file))?;
        }
        let meta_path = dir.join(META_FILE);
        std::fs::write(&meta_path, meta.to_text()).map_err(|e| Error::io(&meta_path, e))?;
        rows.push(SlideManifestRow {
            slide_id: meta.slide_id.clone(),
            label: meta.label,
            path: PathBuf::from(&meta.slide_id),
            mpp: meta.mpp,
        });
    }
    let manifest = out_dir.join("slides.csv");
    write_slide_manifest(&manifest, &rows)?;
    Ok(manifest)
}
