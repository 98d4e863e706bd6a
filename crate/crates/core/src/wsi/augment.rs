//! Tile augmentation: HED stain perturbation, Gaussian noise, quarter-turn
//! rotations, and flips.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Rows are the RGB absorbance of haematoxylin, eosin, and DAB.
const RGB_FROM_HED: [[f64; 3]; 3] = [[0.65, 0.70, 0.29], [0.07, 0.99, 0.11], [0.27, 0.57, 0.78]];
const LOG_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Each stain channel is scaled by `1 + a` with `a` uniform in `[-hed_alpha, hed_alpha]`.
    pub hed_alpha: f64,
    /// Standard deviation of additive noise in 8-bit intensity units.
    pub noise_sigma: f64,
    pub rotate: bool,
    pub flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hed_alpha: 0.05,
            noise_sigma: 2.0,
            rotate: true,
            flip: true,
        }
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub hed_scale: [f64; 3],
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub quarter_turns: u8,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            hed_scale: [1.0; 3],
            noise_sigma: 0.0,
            noise_seed: 0,
            quarter_turns: 0,
            flip_h: false,
            flip_v: false,
        }
    }

    pub fn draw(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let mut scale = [1.0; 3];
        if cfg.hed_alpha > 0.0 {
            for s in &mut scale {
                *s = 1.0 + rng.random_range(-cfg.hed_alpha..=cfg.hed_alpha);
            }
        }
        Self {
            hed_scale: scale,
            noise_sigma: cfg.noise_sigma,
            noise_seed: rng.random(),
            quarter_turns: if cfg.rotate { rng.random_range(0..4) } else { 0 },
            flip_h: cfg.flip && rng.random_bool(0.5),
            flip_v: cfg.flip && rng.random_bool(0.5),
        }
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            // Cofactor of m[j][i] over the determinant.
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    inv
}

/// Scales the stain concentrations of every pixel.
fn perturb_hed(img: &RgbImage, scale: [f64; 3]) -> RgbImage {
    let hed_from_rgb = invert3(&RGB_FROM_HED);
    let log_floor = LOG_FLOOR.ln();
    // Optical density of each 8-bit intensity, normalized by the log floor.
    let od: Vec<f64> = (0..=255u8)
        .map(|v| (f64::from(v) / 255.0).max(LOG_FLOOR).ln() / log_floor)
        .collect();
    // Stain scaling folded into a single RGB-to-log-RGB matrix.
    let mut m = [[0.0; 3]; 3];
    for (c_in, row) in m.iter_mut().enumerate() {
        for (c_out, v) in row.iter_mut().enumerate() {
            *v = (0..3)
                .map(|k| hed_from_rgb[c_in][k] * scale[k] * RGB_FROM_HED[k][c_out])
                .sum::<f64>()
                * log_floor;
        }
    }
    let mut out = img.clone();
    for p in out.pixels_mut() {
        let d = [
            od[usize::from(p.0[0])],
            od[usize::from(p.0[1])],
            od[usize::from(p.0[2])],
        ];
        for c in 0..3 {
            let log_rgb = d[0] * m[0][c] + d[1] * m[1][c] + d[2] * m[2][c];
            p.0[c] = (log_rgb.exp().clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    out
}

/// Rotates counter-clockwise by `quarter_turns` × 90°.
pub fn rotate90(img: &RgbImage, quarter_turns: u8) -> RgbImage {
    match quarter_turns % 4 {
        0 => img.clone(),
        1 => image::imageops::rotate270(img),
        2 => image::imageops::rotate180(img),
        _ => image::imageops::rotate90(img),
    }
}

pub fn apply_augmentation(img: &RgbImage, params: &AugmentParams) -> RgbImage {
    let mut out = if params.hed_scale == [1.0; 3] {
        img.clone()
    } else {
        perturb_hed(img, params.hed_scale)
    };
    if params.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
        // `noise_sigma > 0` was checked, so the distribution is valid.
        let normal = Normal::new(0.0, params.noise_sigma).unwrap_or_else(|_| unreachable!());
        for p in out.pixels_mut() {
            for c in p.0.iter_mut() {
                *c = (f64::from(*c) + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out = rotate90(&out, params.quarter_turns);
    if params.flip_h {
        image::imageops::flip_horizontal_in_place(&mut out);
    }
    if params.flip_v {
        image::imageops::flip_vertical_in_place(&mut out);
    }
    out
}

/// Two augmented copies of `img`, fully determined by `seed`.
pub fn augment(img: &RgbImage, cfg: &AugmentConfig, seed: u64) -> [RgbImage; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = AugmentParams::draw(cfg, &mut rng);
    let b = AugmentParams::draw(cfg, &mut rng);
    [apply_augmentation(img, &a), apply_augmentation(img, &b)]
}
