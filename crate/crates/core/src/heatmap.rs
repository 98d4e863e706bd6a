//! Heatmaps of per-tile model scores painted over the slide thumbnail.
//!
//! Attention is min-max normalized per slide and mapped through a viridis
//! ramp. Contribution overlays are binary: red for bounded contributions in
//! `[0.5, 1)`, blue for `(0, 0.5)`. Both are blended over the thumbnail with
//! alpha [`OVERLAY_ALPHA`]; thumbnail pixels outside every tile are left as is.

use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::mil::BagOutput;
use crate::wsi::{tile_footprint, TileCoord};

pub const OVERLAY_ALPHA: f64 = 0.6;
pub const EXCITATORY: [u8; 3] = [220, 30, 30];
pub const INHIBITORY: [u8; 3] = [30, 60, 220];

/// Viridis sampled at nine evenly spaced points.
const VIRIDIS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

/// Colour of `v` in `[0, 1]` (clamped), linear between anchors.
pub fn colormap(v: f64) -> [u8; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let pos = v * (VIRIDIS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(VIRIDIS.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    [0, 1, 2].map(|c| (f64::from(a[c]) + f * (f64::from(b[c]) - f64::from(a[c]))).round() as u8)
}

/// Per-tile scores of one bag, tied to the geometry needed to paint them.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchScoreMap {
    pub coords: Vec<TileCoord>,
    pub attention: Vec<f64>,
    /// Sigmoid of each tile's positive-class logit; additive models only.
    pub bounded_contribs: Option<Vec<f64>>,
    pub thumb_dims: (u32, u32),
    /// Pixel size of the level the coordinates refer to.
    pub level_dims: (u32, u32),
}

impl PatchScoreMap {
    pub fn new(
        coords: Vec<TileCoord>,
        attention: Vec<f64>,
        bounded_contribs: Option<Vec<f64>>,
        thumb_dims: (u32, u32),
        level_dims: (u32, u32),
    ) -> Result<Self> {
        let n = coords.len();
        if attention.len() != n || bounded_contribs.as_ref().is_some_and(|c| c.len() != n) {
            return Err(Error::Dimension(format!(
                "{n} coords, {} attention weights, {:?} contributions",
                attention.len(),
                bounded_contribs.as_ref().map(Vec::len)
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        if !coords.iter().all(|c| seen.insert(*c)) {
            return Err(Error::Input("duplicate tile coordinates in a score map".into()));
        }
        Ok(Self {
            coords,
            attention,
            bounded_contribs,
            thumb_dims,
            level_dims,
        })
    }

    pub fn from_output(
        coords: Vec<TileCoord>,
        output: &BagOutput,
        thumb_dims: (u32, u32),
        level_dims: (u32, u32),
    ) -> Result<Self> {
        Self::new(
            coords,
            output.attention.clone(),
            output.bounded_contribs.clone(),
            thumb_dims,
            level_dims,
        )
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Min-max normalization; a single tile maps to 1, equal weights to 0.5.
pub fn normalize_attention(attention: &[f64]) -> Vec<f64> {
    if attention.len() == 1 {
        return vec![1.0];
    }
    let lo = attention.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = attention.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![0.5; attention.len()];
    }
    attention.iter().map(|a| (a - lo) / (hi - lo)).collect()
}

/// Indices of the `ceil(frac * n)` highest weights, highest first; ties by index.
pub fn top_fraction(attention: &[f64], frac: f64) -> Vec<usize> {
    let take = ((frac * attention.len() as f64).ceil() as usize).min(attention.len());
    let mut idx: Vec<usize> = (0..attention.len()).collect();
    idx.sort_by(|&a, &b| attention[b].total_cmp(&attention[a]).then(a.cmp(&b)));
    idx.truncate(take);
    idx
}

/// Red for contributions at or above one half, blue below.
pub fn contribution_color(contrib: f64) -> [u8; 3] {
    if contrib >= 0.5 {
        EXCITATORY
    } else {
        INHIBITORY
    }
}

fn blend(base: [u8; 3], over: [u8; 3]) -> [u8; 3] {
    [0, 1, 2].map(|c| ((1.0 - OVERLAY_ALPHA) * f64::from(base[c]) + OVERLAY_ALPHA * f64::from(over[c])).round() as u8)
}

fn paint(map: &PatchScoreMap, thumb: &RgbImage, colors: &[[u8; 3]]) -> Result<RgbImage> {
    if map.is_empty() {
        return Err(Error::EmptyBag);
    }
    if thumb.dimensions() != map.thumb_dims {
        return Err(Error::Dimension(format!(
            "thumbnail is {}x{}, map expects {:?}",
            thumb.width(),
            thumb.height(),
            map.thumb_dims
        )));
    }
    let mut out = thumb.clone();
    for (coord, color) in map.coords.iter().zip(colors) {
        let (xs, ys) = tile_footprint(*coord, map.thumb_dims, map.level_dims);
        for y in ys {
            for x in xs.clone() {
                let p = out.get_pixel(x, y).0;
                out.put_pixel(x, y, Rgb(blend(p, *color)));
            }
        }
    }
    Ok(out)
}

pub fn render_attention(map: &PatchScoreMap, thumb: &RgbImage) -> Result<RgbImage> {
    let colors: Vec<[u8; 3]> = normalize_attention(&map.attention).into_iter().map(colormap).collect();
    paint(map, thumb, &colors)
}

pub fn render_contributions(map: &PatchScoreMap, thumb: &RgbImage) -> Result<RgbImage> {
    let contribs = map
        .bounded_contribs
        .as_ref()
        .ok_or_else(|| Error::Unsupported("this model has no per-tile contributions".into()))?;
    let colors: Vec<[u8; 3]> = contribs.iter().map(|&c| contribution_color(c)).collect();
    paint(map, thumb, &colors)
}

/// `<slide_id>_<model>_<kind>.png`.
pub fn heatmap_file_name(slide_id: &str, model: &str, kind: &str) -> String {
    format!("{slide_id}_{model}_{kind}.png")
}

/// Lossless PNG with fixed encoder settings, so equal images give equal bytes.
pub fn write_image(img: &RgbImage, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let enc = PngEncoder::new_with_quality(BufWriter::new(file), CompressionType::Default, FilterType::Adaptive);
    enc.write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wsi::Magnification;

    fn grid_map(attn: Vec<f64>, contribs: Option<Vec<f64>>) -> PatchScoreMap {
        let coords = (0..attn.len() as u32)
            .map(|i| TileCoord::new(Magnification::X5, i, 0))
            .collect();
        PatchScoreMap::new(
            coords,
            attn.clone(),
            contribs,
            (4 * attn.len() as u32, 4),
            (512 * attn.len() as u32, 512),
        )
        .unwrap()
    }

    fn thumb(map: &PatchScoreMap) -> RgbImage {
        RgbImage::from_pixel(map.thumb_dims.0, map.thumb_dims.1, Rgb([255, 255, 255]))
    }

    #[test]
    fn normalization_edge_cases() {
        assert_eq!(normalize_attention(&[0.3]), vec![1.0]);
        assert_eq!(normalize_attention(&[0.25; 4]), vec![0.5; 4]);
        assert_eq!(normalize_attention(&[0.2, 0.6, 0.2]), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), VIRIDIS[0]);
        assert_eq!(colormap(1.0), VIRIDIS[8]);
        assert_eq!(colormap(0.5), VIRIDIS[4]);
    }

    #[test]
    fn single_tile_paints_the_top_colour() {
        let m = grid_map(vec![1.0], None);
        let img = render_attention(&m, &thumb(&m)).unwrap();
        assert_eq!(img.get_pixel(0, 0).0, blend([255; 3], VIRIDIS[8]));
    }

    #[test]
    fn half_is_red() {
        assert_eq!(contribution_color(0.5), EXCITATORY);
        assert_eq!(contribution_color(crate::diff::sigmoid(0.0)), EXCITATORY);
        assert_eq!(contribution_color(0.49), INHIBITORY);
        let m = grid_map(vec![0.5, 0.5], Some(vec![0.49, 0.5]));
        let img = render_contributions(&m, &thumb(&m)).unwrap();
        assert_eq!(img.get_pixel(1, 1).0, blend([255; 3], INHIBITORY));
        assert_eq!(img.get_pixel(5, 1).0, blend([255; 3], EXCITATORY));
    }

    #[test]
    fn errors() {
        let m = grid_map(vec![0.5, 0.5], None);
        assert!(matches!(
            render_contributions(&m, &thumb(&m)),
            Err(Error::Unsupported(_))
        ));
        let empty = PatchScoreMap::new(vec![], vec![], None, (4, 4), (512, 512)).unwrap();
        assert!(matches!(
            render_attention(&empty, &RgbImage::new(4, 4)),
            Err(Error::EmptyBag)
        ));
        let c = TileCoord::new(Magnification::X5, 0, 0);
        assert!(PatchScoreMap::new(vec![c, c], vec![0.5, 0.5], None, (4, 4), (512, 512)).is_err());
    }

    #[test]
    fn top_fraction_takes_the_ceiling() {
        assert_eq!(top_fraction(&[0.1, 0.5, 0.2, 0.2], 0.1), vec![1]);
        assert_eq!(top_fraction(&[0.1, 0.5, 0.2, 0.2], 0.5), vec![1, 2]);
    }
}
