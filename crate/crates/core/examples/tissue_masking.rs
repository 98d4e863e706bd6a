//! Tissue mask of a synthetic slide thumbnail: Otsu threshold, closing, and
//! the colour filter that drops marker ink. Writes the thumbnail and masks.
//!
//! cargo run --release --example tissue_masking -- [out_dir]

use std::path::PathBuf;

use image::{Luma, Rgb, RgbImage};
use wsi_mil::wsi::{analyze_thumbnail, histogram, otsu_threshold, synth_slide, PyramidSynthConfig, RegionKind};

fn main() -> wsi_mil::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("wsi-mil-mask"));
    std::fs::create_dir_all(&out).map_err(|e| wsi_mil::Error::Input(e.to_string()))?;

    let cfg = PyramidSynthConfig {
        max_artifacts: 2,
        seed: 3,
        ..PyramidSynthConfig::default()
    };
    let (meta, levels) = synth_slide(&cfg, 1)?;
    let thumb = levels.last().expect("thumbnail level");
    for r in &meta.regions {
        println!("{:?} disk at ({:.0}, {:.0}) r={:.0}", r.kind, r.cx, r.cy, r.r);
    }

    let t = otsu_threshold(&histogram(thumb))?;
    let analysis = analyze_thumbnail(thumb, 60.0)?;
    println!("thumbnail {}x{}, Otsu threshold {t}", thumb.width(), thumb.height());
    println!(
        "closed mask {} px, after colour filter {} px, padding colour {:?}",
        analysis.mask.count(),
        analysis.tissue_pixels.len(),
        analysis.background
    );
    let scale = f64::from(meta.base_dims().0) / f64::from(thumb.width());
    let markers: Vec<_> = meta.regions.iter().filter(|r| r.kind == RegionKind::Artifact).collect();
    let on_marker = |x: u32, y: u32| {
        let (px, py) = ((f64::from(x) + 0.5) * scale, (f64::from(y) + 0.5) * scale);
        markers
            .iter()
            .any(|r| (px - r.cx).powi(2) + (py - r.cy).powi(2) < r.r * r.r)
    };
    let masked = analysis.mask.pixels().filter(|&(x, y)| on_marker(x, y)).count();
    let kept = analysis.tissue_pixels.iter().filter(|p| on_marker(p.x, p.y)).count();
    println!(
        "{} marker disk(s): {masked} marker pixels in the Otsu mask, {kept} after the colour filter",
        markers.len()
    );

    let mut mask = image::GrayImage::new(thumb.width(), thumb.height());
    for (x, y) in analysis.mask.pixels() {
        mask.put_pixel(x, y, Luma([128]));
    }
    for p in &analysis.tissue_pixels {
        mask.put_pixel(p.x, p.y, Luma([255]));
    }
    let mut kept = RgbImage::from_pixel(thumb.width(), thumb.height(), Rgb(analysis.background));
    for p in &analysis.tissue_pixels {
        kept.put_pixel(p.x, p.y, Rgb(p.rgb));
    }
    thumb.save(out.join("thumbnail.png"))?;
    mask.save(out.join("mask.png"))?;
    kept.save(out.join("tissue.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}
