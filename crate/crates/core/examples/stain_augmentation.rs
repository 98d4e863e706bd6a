//! HED stain jitter, Gaussian noise, quarter turns, and flips on one tile.
//!
//! cargo run --release --example stain_augmentation -- [out_dir]

use std::path::PathBuf;

use wsi_mil::wsi::{
    apply_augmentation, augment, pad_tile, synth_slide, AugmentConfig, AugmentParams, PyramidSynthConfig, SlideMeta,
    TILE_SIZE,
};

fn centre_tile(meta: &SlideMeta, level: &image::RgbImage) -> image::RgbImage {
    let tissue = meta.regions[meta.regions.len() - 1];
    let x = (tissue.cx as u32)
        .saturating_sub(TILE_SIZE / 2)
        .min(level.width() - TILE_SIZE);
    let y = (tissue.cy as u32)
        .saturating_sub(TILE_SIZE / 2)
        .min(level.height() - TILE_SIZE);
    image::imageops::crop_imm(level, x, y, TILE_SIZE, TILE_SIZE).to_image()
}

fn main() -> wsi_mil::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("wsi-mil-augment"));
    std::fs::create_dir_all(&out).map_err(|e| wsi_mil::Error::Input(e.to_string()))?;

    let (meta, levels) = synth_slide(&PyramidSynthConfig::default(), 1)?;
    let tile = pad_tile(&centre_tile(&meta, &levels[0]), [242, 242, 240])?;
    tile.save(out.join("original.png"))?;

    let identity = apply_augmentation(&tile, &AugmentParams::identity());
    println!("identity parameters reproduce the tile: {}", identity == tile);

    let cfg = AugmentConfig::default();
    let [a, b] = augment(&tile, &cfg, 42);
    let [a2, _] = augment(&tile, &cfg, 42);
    println!("same seed, same output: {}", a == a2);
    a.save(out.join("augmented_1.png"))?;
    b.save(out.join("augmented_2.png"))?;

    let strong = AugmentParams {
        hed_scale: [1.3, 0.8, 1.0],
        quarter_turns: 1,
        flip_h: true,
        ..AugmentParams::identity()
    };
    apply_augmentation(&tile, &strong).save(out.join("strong.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}
