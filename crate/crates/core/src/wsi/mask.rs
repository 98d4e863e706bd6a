use image::RgbImage;

use crate::error::{Error, Result};

/// Integer luma, `(77 R + 150 G + 29 B) >> 8`.
pub fn luma(rgb: [u8; 3]) -> u8 {
    ((77 * u32::from(rgb[0]) + 150 * u32::from(rgb[1]) + 29 * u32::from(rgb[2])) >> 8) as u8
}

pub fn histogram(img: &RgbImage) -> [u64; 256] {
    let mut h = [0u64; 256];
    for p in img.pixels() {
        h[usize::from(luma(p.0))] += 1;
    }
    h
}

/// Otsu's threshold: the `t` maximizing between-class variance of the
/// classes `<= t` and `> t`. Ties resolve to the smallest `t`.
///
/// With `N` pixels, luma sum `S`, and `W0`, `S0` the count and sum at or
/// below `t`, the variance is proportional to `(N S0 - W0 S)^2 / (W0 W1)`.
/// Candidates are compared by exact integer cross-multiplication, falling
/// back to floating point only for histograms too large for 128 bits.
pub fn otsu_threshold(hist: &[u64]) -> Result<u8> {
    if hist.len() != 256 {
        return Err(Error::Input(format!("histogram has {} bins, expected 256", hist.len())));
    }
    let total: u128 = hist.iter().map(|&c| u128::from(c)).sum();
    if total == 0 {
        return Err(Error::Input("empty histogram".into()));
    }
    let sum_all: u128 = hist.iter().enumerate().map(|(i, &c)| i as u128 * u128::from(c)).sum();

    let (mut w0, mut sum0) = (0u128, 0u128);
    // Best score as (numerator, denominator); 0/1 for one-sided splits.
    let (mut best_t, mut best) = (0u8, (0u128, 1u128));
    for (t, &count) in hist.iter().enumerate() {
        w0 += u128::from(count);
        sum0 += t as u128 * u128::from(count);
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let d = (total * sum0).abs_diff(w0 * sum_all);
        let cand = (d.checked_mul(d), w0.checked_mul(w1));
        let better = match (cand, best) {
            ((Some(num), Some(den)), (bn, bd)) => match (num.checked_mul(bd), bn.checked_mul(den)) {
                (Some(l), Some(r)) => l > r,
                _ => (num as f64) / (den as f64) > (bn as f64) / (bd as f64),
            },
            _ => {
                let score = (d as f64) * (d as f64) / ((w0 as f64) * (w1 as f64));
                score > (best.0 as f64) / (best.1 as f64)
            }
        };
        if better {
            best_t = t as u8;
            best = (cand.0.unwrap_or(u128::MAX), cand.1.unwrap_or(1));
        }
    }
    Ok(best_t)
}

/// Binary tissue mask over a thumbnail, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl TissueMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i as u32 % self.width, i as u32 / self.width))
    }

    /// `self ⊇ other`.
    pub fn contains(&self, other: &TissueMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| a || !b)
    }
}

/// Closing (dilation then erosion) with a 3x3 square.
///
/// Pixels outside the image are background for the dilation. The erosion runs
/// over the dilated image extended by one pixel on every side, so the result is
/// the closing computed on an unbounded background plane, clipped to the image.
/// That keeps the operation extensive and idempotent at the borders too.
pub fn morph_close(mask: &TissueMask) -> TissueMask {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let (pw, ph) = (w + 2, h + 2);
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h;

    // Dilation on the padded grid; padded (px, py) is image (px - 1, py - 1).
    let mut dilated = vec![false; (pw * ph) as usize];
    for py in 0..ph {
        for px in 0..pw {
            let (x, y) = (px - 1, py - 1);
            let mut any = false;
            'n: for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if inside(nx, ny) && mask.get(nx as u32, ny as u32) {
                        any = true;
                        break 'n;
                    }
                }
            }
            dilated[(py * pw + px) as usize] = any;
        }
    }

    let mut out = TissueMask::new(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            let mut all = true;
            'e: for dy in -1..=1 {
                for dx in -1..=1 {
                    let (px, py) = (x + dx + 1, y + dy + 1);
                    if !dilated[(py * pw + px) as usize] {
                        all = false;
                        break 'e;
                    }
                }
            }
            out.set(x as u32, y as u32, all);
        }
    }
    out
}

/// Otsu tissue mask of a thumbnail: pixels at or below the threshold (tissue is darker than glass).
pub fn tissue_mask(img: &RgbImage) -> Result<(TissueMask, u8)> {
    let t = otsu_threshold(&histogram(img))?;
    let mut mask = TissueMask::new(img.width(), img.height());
    for (x, y, p) in img.enumerate_pixels() {
        if luma(p.0) <= t {
            mask.set(x, y, true);
        }
    }
    Ok((mask, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TissuePixel {
    pub x: u32,
    pub y: u32,
    pub rgb: [u8; 3],
}

/// Keeps pixels within Euclidean distance `max_distance` of the mean colour of
/// the whole input set. Returns the kept pixels and that mean colour.
pub fn color_artifact_filter(pixels: &[TissuePixel], max_distance: f64) -> Result<(Vec<TissuePixel>, [f64; 3])> {
    if pixels.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut sum = [0u64; 3];
    for p in pixels {
        for c in 0..3 {
            sum[c] += u64::from(p.rgb[c]);
        }
    }
    let n = pixels.len() as f64;
    let mean = [sum[0] as f64 / n, sum[1] as f64 / n, sum[2] as f64 / n];
    let limit = max_distance * max_distance;
    let kept = pixels
        .iter()
        .filter(|p| {
            let d2: f64 = (0..3).map(|c| (f64::from(p.rgb[c]) - mean[c]).powi(2)).sum();
            d2 <= limit
        })
        .copied()
        .collect();
    Ok((kept, mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist_of(pairs: &[(usize, u64)]) -> Vec<u64> {
        let mut h = vec![0; 256];
        for &(v, c) in pairs {
            h[v] += c;
        }
        h
    }

    #[test]
    fn degenerate_histogram_gives_zero() {
        assert_eq!(otsu_threshold(&hist_of(&[(137, 500)])).unwrap(), 0);
    }

    #[test]
    fn two_spikes_break_ties_low() {
        assert_eq!(otsu_threshold(&hist_of(&[(10, 50), (200, 50)])).unwrap(), 10);
    }

    #[test]
    fn empty_or_malformed_histograms_fail() {
        assert!(matches!(otsu_threshold(&[0; 256]), Err(Error::Input(_))));
        assert!(matches!(otsu_threshold(&[1; 10]), Err(Error::Input(_))));
    }

    #[test]
    fn luma_extremes() {
        assert_eq!(luma([0, 0, 0]), 0);
        assert_eq!(luma([255, 255, 255]), 255);
    }

    #[test]
    fn closing_fills_a_pinhole_and_keeps_empty_masks() {
        let empty = TissueMask::new(7, 5);
        assert_eq!(morph_close(&empty), empty);

        let mut m = TissueMask::new(7, 7);
        for y in 2..5 {
            for x in 2..5 {
                m.set(x, y, true);
            }
        }
        m.set(3, 3, false);
        let closed = morph_close(&m);
        assert!(closed.get(3, 3));
        assert!(closed.contains(&m));
        assert_eq!(closed.count(), 9);
    }

    #[test]
    fn closing_keeps_border_pixels() {
        let mut m = TissueMask::new(4, 4);
        m.set(0, 0, true);
        m.set(3, 2, true);
        let closed = morph_close(&m);
        assert!(closed.contains(&m));
        assert_eq!(morph_close(&closed), closed);
    }

    #[test]
    fn color_filter_removes_annotation_ink() {
        let mut px: Vec<TissuePixel> = (0..10)
            .map(|i| TissuePixel {
                x: i,
                y: 0,
                rgb: [128, 128, 128],
            })
            .collect();
        px.push(TissuePixel {
            x: 10,
            y: 0,
            rgb: [0, 255, 0],
        });
        // Mean is (116.36, 139.64, 116.36); the green pixel sits ~208.4 away, the grays ~21.1.
        let mean: [f64; 3] = [1280.0 / 11.0, (1280.0 + 255.0) / 11.0, 1280.0 / 11.0];
        let green_dist =
            ((0.0 - mean[0]) * (0.0 - mean[0]) + (255.0 - mean[1]) * (255.0 - mean[1]) + mean[2] * mean[2]).sqrt();
        let (kept, m) = color_artifact_filter(&px, green_dist / 2.0).unwrap();
        assert_eq!(kept.len(), 10);
        assert!(kept.iter().all(|p| p.rgb == [128, 128, 128]));
        for c in 0..3 {
            assert!((m[c] - mean[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn color_filter_edge_cases() {
        let same: Vec<TissuePixel> = (0..4)
            .map(|i| TissuePixel {
                x: i,
                y: 1,
                rgb: [9, 8, 7],
            })
            .collect();
        assert_eq!(color_artifact_filter(&same, 0.0).unwrap().0.len(), 4);
        assert!(matches!(color_artifact_filter(&[], 10.0), Err(Error::EmptyMask)));
    }
}
