//! Slide sources: a directory pyramid of PNG levels plus a `meta.txt` file.
//!
//! ```text
//! slide_id <id>
//! label <0|1>
//! mpp <microns per base pixel>
//! level <tag> <width> <height> <file>      one line per level, finest first
//! region <tissue|artifact|signal> <cx> <cy> <r>   optional, base pixel coordinates
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Magnification;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelInfo {
    pub tag: Magnification,
    pub width: u32,
    pub height: u32,
    pub file: String,
}

impl LevelInfo {
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionKind {
    Tissue,
    Artifact,
    /// Tissue carrying the positive-class pattern.
    Signal,
}

impl RegionKind {
    fn as_str(self) -> &'static str {
        match self {
            RegionKind::Tissue => "tissue",
            RegionKind::Artifact => "artifact",
            RegionKind::Signal => "signal",
        }
    }
}

/// Ground-truth disk in base-level pixels, recorded by the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub kind: RegionKind,
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Region {
    /// Whether the disk meets the axis-aligned rectangle `(x, y, w, h)`.
    pub fn intersects_rect(&self, rect: (f64, f64, f64, f64)) -> bool {
        let (x, y, w, h) = rect;
        let nx = self.cx.clamp(x, x + w);
        let ny = self.cy.clamp(y, y + h);
        (nx - self.cx).powi(2) + (ny - self.cy).powi(2) < self.r * self.r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlideMeta {
    pub slide_id: String,
    pub label: u8,
    pub mpp: f64,
    /// Finest first.
    pub levels: Vec<LevelInfo>,
    pub regions: Vec<Region>,
}

impl SlideMeta {
    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::Format(format!("slide {}: label {}", self.slide_id, self.label)));
        }
        if self.levels.is_empty() {
            return Err(Error::Format(format!("slide {} has no levels", self.slide_id)));
        }
        for pair in self.levels.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.width >= a.width || b.height >= a.height {
                return Err(Error::Format(format!(
                    "slide {}: level {} ({}x{}) is not smaller than {} ({}x{})",
                    self.slide_id, b.tag, b.width, b.height, a.tag, a.width, a.height
                )));
            }
            // Adjacent magnifications must halve exactly (up to one pixel of rounding).
            if b.tag.next() == Some(a.tag) {
                let ok = |big: u32, small: u32| big.div_ceil(2) == small || big / 2 == small;
                if !ok(a.width, b.width) || !ok(a.height, b.height) {
                    return Err(Error::Format(format!(
                        "slide {}: {} is not half of {}",
                        self.slide_id, b.tag, a.tag
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn level(&self, tag: Magnification) -> Option<&LevelInfo> {
        self.levels.iter().find(|l| l.tag == tag)
    }

    /// The coarsest level whose short side is at least `min_side` pixels.
    pub fn thumbnail_level(&self, min_side: u32) -> Option<&LevelInfo> {
        self.levels.iter().rev().find(|l| l.width.min(l.height) >= min_side)
    }

    pub fn base_dims(&self) -> (u32, u32) {
        self.levels[0].dims()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "slide_id {}", self.slide_id);
        let _ = writeln!(s, "label {}", self.label);
        let _ = writeln!(s, "mpp {}", self.mpp);
        for l in &self.levels {
            let _ = writeln!(s, "level {} {} {} {}", l.tag, l.width, l.height, l.file);
        }
        for r in &self.regions {
            let _ = writeln!(s, "region {} {} {} {}", r.kind.as_str(), r.cx, r.cy, r.r);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Format(format!("bad metadata line `{line}`"));
        let num = |s: Option<&str>, line: &str| -> Result<f64> {
            s.and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| bad(line))
        };
        let (mut slide_id, mut label, mut mpp) = (None, None, None);
        let mut levels = Vec::new();
        let mut regions = Vec::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("slide_id") => slide_id = Some(parts.next().ok_or_else(|| bad(line))?.to_string()),
                Some("label") => label = parts.next().and_then(|v| v.parse::<u8>().ok()),
                Some("mpp") => mpp = Some(num(parts.next(), line)?),
                Some("level") => {
                    let tag: Magnification = parts.next().ok_or_else(|| bad(line))?.parse().map_err(|_| bad(line))?;
                    let width = num(parts.next(), line)? as u32;
                    let height = num(parts.next(), line)? as u32;
                    let file = parts.next().ok_or_else(|| bad(line))?.to_string();
                    levels.push(LevelInfo {
                        tag,
                        width,
                        height,
                        file,
                    });
                }
                Some("region") => {
                    let kind = match parts.next() {
                        Some("tissue") => RegionKind::Tissue,
                        Some("artifact") => RegionKind::Artifact,
                        Some("signal") => RegionKind::Signal,
                        _ => return Err(bad(line)),
                    };
                    let cx = num(parts.next(), line)?;
                    let cy = num(parts.next(), line)?;
                    let r = num(parts.next(), line)?;
                    regions.push(Region { kind, cx, cy, r });
                }
                _ => return Err(bad(line)),
            }
        }
        let meta = SlideMeta {
            slide_id: slide_id.ok_or_else(|| Error::Format("metadata lacks slide_id".into()))?,
            label: label.ok_or_else(|| Error::Format("metadata lacks a valid label".into()))?,
            mpp: mpp.ok_or_else(|| Error::Format("metadata lacks mpp".into()))?,
            levels,
            regions,
        };
        meta.validate()?;
        Ok(meta)
    }
}

/// Read access to one slide's pyramid. Adapters for real slide containers
/// implement this.
pub trait SlideSource: Sync {
    fn meta(&self) -> &SlideMeta;

    /// Whole level as an image.
    fn level_image(&self, tag: Magnification) -> Result<&RgbImage>;

    /// Crop `(x, y, w, h)` from a level; the rectangle must lie inside it.
    fn read_region(&self, tag: Magnification, rect: (u32, u32, u32, u32)) -> Result<RgbImage> {
        let img = self.level_image(tag)?;
        let (x, y, w, h) = rect;
        if w == 0 || h == 0 || x + w > img.width() || y + h > img.height() {
            return Err(Error::Range(format!(
                "region {rect:?} outside {}x{} level {tag}",
                img.width(),
                img.height()
            )));
        }
        Ok(image::imageops::crop_imm(img, x, y, w, h).to_image())
    }
}

/// A pyramid stored as one PNG per level in a directory with `meta.txt`.
/// Levels are decoded on first use and cached.
#[derive(Debug)]
pub struct DirPyramid {
    dir: PathBuf,
    meta: SlideMeta,
    cache: Vec<OnceLock<RgbImage>>,
}

pub const META_FILE: &str = "meta.txt";

impl DirPyramid {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta = SlideMeta::parse(&text)?;
        let cache = meta.levels.iter().map(|_| OnceLock::new()).collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            cache,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl SlideSource for DirPyramid {
    fn meta(&self) -> &SlideMeta {
        &self.meta
    }

    fn level_image(&self, tag: Magnification) -> Result<&RgbImage> {
        let idx = self
            .meta
            .levels
            .iter()
            .position(|l| l.tag == tag)
            .ok_or_else(|| Error::Range(format!("slide {} has no {tag} level", self.meta.slide_id)))?;
        if let Some(img) = self.cache[idx].get() {
            return Ok(img);
        }
        let info = &self.meta.levels[idx];
        let path = self.dir.join(&info.file);
        let img = image::open(&path)?.to_rgb8();
        if img.dimensions() != info.dims() {
            return Err(Error::Format(format!(
                "{} is {}x{}, metadata says {}x{}",
                path.display(),
                img.width(),
                img.height(),
                info.width,
                info.height
            )));
        }
        Ok(self.cache[idx].get_or_init(|| img))
    }
}

/// One row of the slide manifest: `slide_id,label,path,mpp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideManifestRow {
    pub slide_id: String,
    pub label: u8,
    pub path: PathBuf,
    pub mpp: f64,
}

pub fn write_slide_manifest(path: &Path, rows: &[SlideManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a slide manifest; relative slide paths resolve against the manifest's directory.
pub fn read_slide_manifest(path: &Path) -> Result<Vec<SlideManifestRow>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let mut row: SlideManifestRow = rec?;
        if row.label > 1 {
            return Err(Error::Format(format!("slide {}: label {}", row.slide_id, row.label)));
        }
        if row.path.is_relative() {
            row.path = base.join(&row.path);
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> SlideMeta {
        SlideMeta {
            slide_id: "s01".into(),
            label: 1,
            mpp: 0.5,
            levels: vec![
                LevelInfo {
                    tag: Magnification::X10,
                    width: 2048,
                    height: 1536,
                    file: "l10.png".into(),
                },
                LevelInfo {
                    tag: Magnification::X5,
                    width: 1024,
                    height: 768,
                    file: "l5.png".into(),
                },
                LevelInfo {
                    tag: Magnification::Thumb,
                    width: 128,
                    height: 96,
                    file: "t.png".into(),
                },
            ],
            regions: vec![Region {
                kind: RegionKind::Artifact,
                cx: 10.5,
                cy: 20.0,
                r: 3.0,
            }],
        }
    }

    #[test]
    fn metadata_round_trips() {
        let m = meta();
        assert_eq!(SlideMeta::parse(&m.to_text()).unwrap(), m);
        assert_eq!(m.thumbnail_level(64).unwrap().tag, Magnification::Thumb);
        assert_eq!(m.thumbnail_level(100).unwrap().tag, Magnification::X5);
    }

    #[test]
    fn levels_must_shrink() {
        let mut m = meta();
        m.levels[1].width = 4096;
        assert!(matches!(m.validate(), Err(Error::Format(_))));
        let mut m = meta();
        m.levels[1].width = 900;
        assert!(m.validate().is_err());
    }

    #[test]
    fn disk_rectangle_intersection() {
        let r = Region {
            kind: RegionKind::Tissue,
            cx: 0.0,
            cy: 0.0,
            r: 10.0,
        };
        assert!(r.intersects_rect((5.0, 5.0, 10.0, 10.0)));
        assert!(!r.intersects_rect((8.0, 8.0, 10.0, 10.0)));
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slides.csv");
        let rows = vec![SlideManifestRow {
            slide_id: "a".into(),
            label: 0,
            path: "a".into(),
            mpp: 0.25,
        }];
        write_slide_manifest(&path, &rows).unwrap();
        let back = read_slide_manifest(&path).unwrap();
        assert_eq!(back[0].path, dir.path().join("a"));
        assert_eq!(back[0].mpp, 0.25);
    }
}
