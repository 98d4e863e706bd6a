//! Tile embeddings.

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diff::Tensor2D;
use crate::error::{Error, Result};

use super::mask::luma;
use super::TILE_SIZE;

/// Embedding width produced by the pipeline.
pub const EMBED_DIM: usize = 1024;

/// Maps a padded 512×512 tile to a fixed-length embedding.
pub trait FeatureExtractor: Sync {
    fn dim(&self) -> usize;
    fn extract(&self, tile: &RgbImage) -> Result<Vec<f64>>;
}

const HIST_BINS: usize = 16;
const ORIENT_BINS: usize = 8;
const BLOCKS: u32 = 8;
const DESCRIPTOR_LEN: usize = 3 * HIST_BINS + ORIENT_BINS + 1 + (BLOCKS * BLOCKS) as usize * 3 + 6;

/// Colour histograms, gradient-orientation histogram, block means, and
/// channel moments, projected to [`EMBED_DIM`] by a fixed Gaussian matrix.
#[derive(Debug, Clone)]
pub struct HandcraftedExtractor {
    projection: Tensor2D,
}

impl HandcraftedExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (DESCRIPTOR_LEN as f64).sqrt();
        let values = (0..DESCRIPTOR_LEN * EMBED_DIM)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        let projection = Tensor2D::from_vec(DESCRIPTOR_LEN, EMBED_DIM, values)
            .unwrap_or_else(|_| unreachable!("finite Gaussian draws"));
        Self { projection }
    }

    /// The unprojected descriptor.
    pub fn descriptor(tile: &RgbImage) -> Vec<f64> {
        let (w, h) = tile.dimensions();
        let n = f64::from(w * h);
        let mut d = Vec::with_capacity(DESCRIPTOR_LEN);

        let mut hist = [[0u32; HIST_BINS]; 3];
        let mut sum = [0f64; 3];
        let mut sum2 = [0f64; 3];
        for p in tile.pixels() {
            for c in 0..3 {
                let v = p.0[c];
                hist[c][usize::from(v) * HIST_BINS / 256] += 1;
                sum[c] += f64::from(v);
                sum2[c] += f64::from(v) * f64::from(v);
            }
        }
        for h in &hist {
            d.extend(h.iter().map(|&c| f64::from(c) / n));
        }

        let gray: Vec<f64> = tile.pixels().map(|p| f64::from(luma(p.0))).collect();
        let at = |x: u32, y: u32| gray[(y * w + x) as usize];
        let mut orient = [0f64; ORIENT_BINS];
        let mut mag_sum = 0.0;
        for y in 0..h {
            for x in 0..w {
                let gx = at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y);
                let gy = at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1));
                let mag = (gx * gx + gy * gy).sqrt();
                if mag > 0.0 {
                    orient[orientation_bin(gx, gy)] += mag;
                }
                mag_sum += mag;
            }
        }
        d.extend(orient.iter().map(|m| m / (n * 255.0)));
        d.push(mag_sum / (n * 255.0));

        let mut blocks = vec![[0f64; 3]; (BLOCKS * BLOCKS) as usize];
        let mut counts = vec![0u32; (BLOCKS * BLOCKS) as usize];
        for (x, y, p) in tile.enumerate_pixels() {
            let b = ((y * BLOCKS / h) * BLOCKS + x * BLOCKS / w) as usize;
            counts[b] += 1;
            for c in 0..3 {
                blocks[b][c] += f64::from(p.0[c]);
            }
        }
        for (b, cnt) in blocks.iter().zip(&counts) {
            for v in b {
                d.push(if *cnt == 0 { 0.0 } else { v / (f64::from(*cnt) * 255.0) });
            }
        }

        for c in 0..3 {
            let mean = sum[c] / n;
            let var = (sum2[c] / n - mean * mean).max(0.0);
            d.push(mean / 255.0);
            d.push(var.sqrt() / 255.0);
        }
        d
    }
}

/// Sector of the unsigned gradient orientation in `[0, pi)`, eight equal sectors.
fn orientation_bin(gx: f64, gy: f64) -> usize {
    const TAN_22_5: f64 = 0.414_213_562_373_095_1;
    const TAN_67_5: f64 = 2.414_213_562_373_095;
    // Fold into the upper half plane, then compare slopes against the sector edges.
    let (gx, gy) = if gy < 0.0 || (gy == 0.0 && gx < 0.0) {
        (-gx, -gy)
    } else {
        (gx, gy)
    };
    if gx > 0.0 {
        if gy < TAN_22_5 * gx {
            0
        } else if gy < gx {
            1
        } else if gy < TAN_67_5 * gx {
            2
        } else {
            3
        }
    } else {
        let ax = -gx;
        if gy >= TAN_67_5 * ax {
            4
        } else if gy >= ax {
            5
        } else if gy >= TAN_22_5 * ax {
            6
        } else {
            7
        }
    }
}

impl FeatureExtractor for HandcraftedExtractor {
    fn dim(&self) -> usize {
        EMBED_DIM
    }

    fn extract(&self, tile: &RgbImage) -> Result<Vec<f64>> {
        if tile.dimensions() != (TILE_SIZE, TILE_SIZE) {
            return Err(Error::Size(format!(
                "extractor expects {TILE_SIZE}x{TILE_SIZE}, got {}x{}",
                tile.width(),
                tile.height()
            )));
        }
        let desc = Tensor2D::row_vector(Self::descriptor(tile))?;
        Ok(desc.matmul(&self.projection)?.into_values())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn tile() -> RgbImage {
        RgbImage::from_fn(TILE_SIZE, TILE_SIZE, |x, y| {
            Rgb([(x % 251) as u8, (y % 241) as u8, ((x + y) % 256) as u8])
        })
    }

    #[test]
    fn descriptor_layout() {
        assert_eq!(HandcraftedExtractor::descriptor(&tile()).len(), DESCRIPTOR_LEN);
    }

    #[test]
    fn embedding_is_deterministic_and_sized() {
        let ex = HandcraftedExtractor::new(3);
        let a = ex.extract(&tile()).unwrap();
        assert_eq!(a.len(), EMBED_DIM);
        assert_eq!(a, ex.extract(&tile()).unwrap());
    }

    #[test]
    fn one_pixel_changes_the_embedding() {
        let ex = HandcraftedExtractor::new(3);
        let mut t = tile();
        let a = ex.extract(&t).unwrap();
        t.put_pixel(100, 200, Rgb([0, 0, 0]));
        assert_ne!(a, ex.extract(&t).unwrap());
    }

    #[test]
    fn wrong_size_is_rejected() {
        let ex = HandcraftedExtractor::new(0);
        assert!(matches!(ex.extract(&RgbImage::new(256, 512)), Err(Error::Size(_))));
    }

    #[test]
    fn orientation_sectors_match_atan2() {
        for i in 0..720 {
            let a = (i as f64 + 0.25) * std::f64::consts::PI / 360.0;
            let (gx, gy) = (a.cos(), a.sin());
            let theta = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
            let expect = ((theta / std::f64::consts::PI * 8.0) as usize).min(7);
            assert_eq!(orientation_bin(gx, gy), expect, "angle {a}");
        }
    }
}
