use std::collections::BTreeSet;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

use super::mask::luma;
use super::{Magnification, TileCoord};

/// Edge length of a tile in level pixels.
pub const TILE_SIZE: u32 = 512;

/// A tile's grid position plus its pixel rectangle `(x, y, w, h)` at that level.
/// Edge tiles have `w` or `h` below [`TILE_SIZE`] until padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileRef {
    pub coord: TileCoord,
    pub px_rect: (u32, u32, u32, u32),
}

impl TileRef {
    /// Tile at `(col, row)` clipped to a level of `dims`; `None` if it lies outside.
    pub fn at(level: Magnification, col: u32, row: u32, dims: (u32, u32)) -> Option<Self> {
        let x = col.checked_mul(TILE_SIZE)?;
        let y = row.checked_mul(TILE_SIZE)?;
        if x >= dims.0 || y >= dims.1 {
            return None;
        }
        Some(Self {
            coord: TileCoord::new(level, col, row),
            px_rect: (x, y, TILE_SIZE.min(dims.0 - x), TILE_SIZE.min(dims.1 - y)),
        })
    }
}

/// Columns and rows of the tile grid covering a level.
pub fn grid_dims(dims: (u32, u32)) -> (u32, u32) {
    (dims.0.div_ceil(TILE_SIZE), dims.1.div_ceil(TILE_SIZE))
}

/// Grid cell at a level of `level_dims` containing thumbnail pixel `(x, y)`.
///
/// The pixel is scaled by `level / thumb` per axis and divided by the tile
/// size, flooring. Integer arithmetic keeps the floor exact.
pub fn thumb_pixel_to_tile(x: u32, y: u32, thumb_dims: (u32, u32), level_dims: (u32, u32)) -> Result<(u32, u32)> {
    if x >= thumb_dims.0 || y >= thumb_dims.1 {
        return Err(Error::Range(format!(
            "pixel ({x},{y}) outside a {}x{} thumbnail",
            thumb_dims.0, thumb_dims.1
        )));
    }
    let col = (u64::from(x) * u64::from(level_dims.0)) / (u64::from(thumb_dims.0) * u64::from(TILE_SIZE));
    let row = (u64::from(y) * u64::from(level_dims.1)) / (u64::from(thumb_dims.1) * u64::from(TILE_SIZE));
    Ok((col as u32, row as u32))
}

/// Distinct tiles hit by a set of thumbnail pixels, ordered by `(row, col)`.
pub fn thumb_to_tiles(
    pixels: &[(u32, u32)],
    thumb_dims: (u32, u32),
    level: Magnification,
    level_dims: (u32, u32),
) -> Result<Vec<TileRef>> {
    let mut cells = BTreeSet::new();
    for &(x, y) in pixels {
        let (col, row) = thumb_pixel_to_tile(x, y, thumb_dims, level_dims)?;
        cells.insert((row, col));
    }
    Ok(cells
        .into_iter()
        .filter_map(|(row, col)| TileRef::at(level, col, row, level_dims))
        .collect())
}

/// Thumbnail pixel ranges `(x0..x1, y0..y1)` that map onto `coord`: the exact
/// preimage of [`thumb_pixel_to_tile`].
pub fn tile_footprint(
    coord: TileCoord,
    thumb_dims: (u32, u32),
    level_dims: (u32, u32),
) -> (std::ops::Range<u32>, std::ops::Range<u32>) {
    // Smallest thumbnail index whose scaled position reaches `cell * TILE_SIZE`.
    let lower = |cell: u32, thumb: u32, level: u32| -> u32 {
        let num = u64::from(cell) * u64::from(TILE_SIZE) * u64::from(thumb);
        (num.div_ceil(u64::from(level))).min(u64::from(thumb)) as u32
    };
    let xs = lower(coord.col, thumb_dims.0, level_dims.0)..lower(coord.col + 1, thumb_dims.0, level_dims.0);
    let ys = lower(coord.row, thumb_dims.1, level_dims.1)..lower(coord.row + 1, thumb_dims.1, level_dims.1);
    (xs, ys)
}

/// The four tiles one level finer that cover `tile`, clipped to the finer grid.
pub fn child_tiles(tile: &TileRef, next_dims: (u32, u32)) -> Result<Vec<TileRef>> {
    let next = tile
        .coord
        .level
        .next()
        .ok_or_else(|| Error::Range(format!("no magnification above {}", tile.coord.level)))?;
    let (c, r) = (tile.coord.col * 2, tile.coord.row * 2);
    Ok([(c, r), (c + 1, r), (c, r + 1), (c + 1, r + 1)]
        .into_iter()
        .filter_map(|(col, row)| TileRef::at(next, col, row, next_dims))
        .collect())
}

/// Places `img` at the top-left of a [`TILE_SIZE`] square filled with `background`.
pub fn pad_tile(img: &RgbImage, background: [u8; 3]) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 || w > TILE_SIZE || h > TILE_SIZE {
        return Err(Error::Size(format!("{w}x{h} tile cannot be padded to {TILE_SIZE}")));
    }
    if w == TILE_SIZE && h == TILE_SIZE {
        return Ok(img.clone());
    }
    let mut out = RgbImage::from_pixel(TILE_SIZE, TILE_SIZE, Rgb(background));
    image::imageops::replace(&mut out, img, 0, 0);
    Ok(out)
}

/// Per-pixel tissue test shared by the thumbnail mask and the tile gate: dark
/// enough to fall below the slide's Otsu threshold, and close enough in colour
/// to the slide's mean tissue colour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueClassifier {
    pub luma_threshold: u8,
    pub reference_color: [f64; 3],
    pub max_distance: f64,
}

impl TissueClassifier {
    pub fn is_tissue(&self, rgb: [u8; 3]) -> bool {
        if luma(rgb) > self.luma_threshold {
            return false;
        }
        let d2: f64 = rgb
            .iter()
            .zip(&self.reference_color)
            .map(|(&c, r)| (f64::from(c) - r).powi(2))
            .sum();
        d2 <= self.max_distance * self.max_distance
    }
}

pub fn tissue_fraction(tile: &RgbImage, classifier: &TissueClassifier) -> f64 {
    let total = tile.pixels().len();
    if total == 0 {
        return 0.0;
    }
    let tissue = tile.pixels().filter(|p| classifier.is_tissue(p.0)).count();
    tissue as f64 / total as f64
}

/// Keep iff the tissue fraction reaches `threshold`.
pub fn tissue_fraction_gate(tile: &RgbImage, classifier: &TissueClassifier, threshold: f64) -> bool {
    tissue_fraction(tile, classifier) >= threshold
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_maps_to_origin() {
        assert_eq!(thumb_pixel_to_tile(0, 0, (100, 100), (1600, 1600)).unwrap(), (0, 0));
        assert_eq!(thumb_pixel_to_tile(50, 50, (100, 100), (1600, 1600)).unwrap(), (1, 1));
        assert!(matches!(
            thumb_pixel_to_tile(100, 0, (100, 100), (1600, 1600)),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn duplicate_pixels_collapse_to_one_tile() {
        let tiles = thumb_to_tiles(&[(1, 1), (2, 3), (40, 1)], (100, 100), Magnification::X5, (1600, 1600)).unwrap();
        assert_eq!(tiles.len(), 2);
        assert_eq!(tiles[0].coord, TileCoord::new(Magnification::X5, 0, 0));
        assert_eq!(tiles[1].coord, TileCoord::new(Magnification::X5, 1, 0));
        assert_eq!(tiles[1].px_rect, (512, 0, 512, 512));
    }

    #[test]
    fn footprint_is_the_exact_preimage() {
        for (thumb, level) in [
            ((100, 70), (1600, 1120)),
            ((750, 550), (1500, 1100)),
            ((33, 17), (3000, 1999)),
        ] {
            let (gc, gr) = grid_dims(level);
            for row in 0..gr {
                for col in 0..gc {
                    let coord = TileCoord::new(Magnification::X5, col, row);
                    let (xs, ys) = tile_footprint(coord, thumb, level);
                    for y in 0..thumb.1 {
                        for x in 0..thumb.0 {
                            let hit = thumb_pixel_to_tile(x, y, thumb, level).unwrap() == (col, row);
                            assert_eq!(
                                hit,
                                xs.contains(&x) && ys.contains(&y),
                                "{thumb:?} {level:?} {coord:?} ({x},{y})"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn children_follow_the_factor_two_grid() {
        let dims5 = (4096, 4096);
        let dims10 = (8192, 8192);
        let t = TileRef::at(Magnification::X5, 0, 0, dims5).unwrap();
        let kids: Vec<(u32, u32)> = child_tiles(&t, dims10)
            .unwrap()
            .iter()
            .map(|k| (k.coord.col, k.coord.row))
            .collect();
        assert_eq!(kids, vec![(0, 0), (1, 0), (0, 1), (1, 1)]);

        let t = TileRef::at(Magnification::X5, 3, 5, dims5).unwrap();
        let kids: Vec<(u32, u32)> = child_tiles(&t, dims10)
            .unwrap()
            .iter()
            .map(|k| (k.coord.col, k.coord.row))
            .collect();
        assert_eq!(kids, vec![(6, 10), (7, 10), (6, 11), (7, 11)]);
        assert!(child_tiles(&t, dims10)
            .unwrap()
            .iter()
            .all(|k| k.coord.level == Magnification::X10));
    }

    #[test]
    fn children_are_clipped_at_the_edge() {
        // 5x level 700 wide: tile col 1 covers 512..700; at 10x (1400 wide) only col 2 exists.
        let t = TileRef::at(Magnification::X5, 1, 0, (700, 512)).unwrap();
        assert_eq!(t.px_rect, (512, 0, 188, 512));
        let kids = child_tiles(&t, (1400, 1024)).unwrap();
        let cells: Vec<(u32, u32)> = kids.iter().map(|k| (k.coord.col, k.coord.row)).collect();
        assert_eq!(cells, vec![(2, 0), (2, 1)]);
    }

    #[test]
    fn padding_fills_with_background() {
        let bg = [231, 229, 233];
        let full = RgbImage::from_pixel(512, 512, Rgb([1, 2, 3]));
        assert_eq!(pad_tile(&full, bg).unwrap(), full);

        let narrow = RgbImage::from_pixel(300, 512, Rgb([10, 20, 30]));
        let padded = pad_tile(&narrow, bg).unwrap();
        assert_eq!(padded.dimensions(), (512, 512));
        for y in 0..512 {
            assert_eq!(padded.get_pixel(299, y).0, [10, 20, 30]);
            for x in 300..512 {
                assert_eq!(padded.get_pixel(x, y).0, bg);
            }
        }

        let dot = RgbImage::from_pixel(1, 1, Rgb([0, 0, 0]));
        let padded = pad_tile(&dot, bg).unwrap();
        assert_eq!(padded.pixels().filter(|p| p.0 == [0, 0, 0]).count(), 1);

        assert!(matches!(pad_tile(&RgbImage::new(513, 10), bg), Err(Error::Size(_))));
    }

    #[test]
    fn gate_thresholds() {
        let cls = TissueClassifier {
            luma_threshold: 180,
            reference_color: [200.0, 120.0, 170.0],
            max_distance: 60.0,
        };
        let background = RgbImage::from_pixel(512, 512, Rgb([240, 240, 240]));
        let tissue = RgbImage::from_pixel(512, 512, Rgb([195, 125, 168]));
        assert!(!tissue_fraction_gate(&background, &cls, 0.01));
        assert!(tissue_fraction_gate(&background, &cls, 0.0));
        assert!(tissue_fraction_gate(&tissue, &cls, 1.0));
    }
}
