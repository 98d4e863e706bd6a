//! Trains AMIL and AdMIL on bags with a planted positive region and paints
//! attention and contribution maps for a positive test bag.
//!
//! cargo run --release --example heatmaps -- [out_dir]

use std::path::PathBuf;

use image::{Rgb, RgbImage};
use wsi_mil::bags::{generate_planted, split_train_test, PlantedConfig};
use wsi_mil::heatmap::{
    heatmap_file_name, render_attention, render_contributions, top_fraction, write_image, PatchScoreMap,
};
use wsi_mil::mil::{train_model, Architecture, ModelDims, TrainConfig};
use wsi_mil::wsi::TILE_SIZE;

fn main() -> wsi_mil::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("wsi-mil-heatmaps"));
    std::fs::create_dir_all(&out).map_err(|e| wsi_mil::Error::Input(e.to_string()))?;

    let cfg = PlantedConfig::default();
    let bags = generate_planted(&cfg)?;
    let split = split_train_test(&bags, 0.2, 1)?;
    let bag = split.test.iter().find(|b| b.label == 1).expect("a positive test bag");
    let planted = bag.instance_labels.clone().unwrap_or_default();

    let cell = 24;
    let thumb_dims = (cfg.grid_cols * cell, cfg.grid_rows * cell);
    let level_dims = (cfg.grid_cols * TILE_SIZE, cfg.grid_rows * TILE_SIZE);
    let mut thumb = RgbImage::from_pixel(thumb_dims.0, thumb_dims.1, Rgb([245, 240, 242]));
    // outline the planted tiles on the canvas
    for (c, &f) in bag.tile_coords.as_ref().expect("grid coordinates").iter().zip(&planted) {
        if f == 1 {
            for i in 0..cell {
                for (x, y) in [(i, 0), (i, cell - 1), (0, i), (cell - 1, i)] {
                    thumb.put_pixel(c.col * cell + x, c.row * cell + y, Rgb([0, 0, 0]));
                }
            }
        }
    }

    for arch in [Architecture::Amil, Architecture::Admil] {
        let cv = train_model(
            &split.train,
            arch,
            &ModelDims::new(cfg.embed_dim, 16),
            &TrainConfig::default(),
        )?;
        let model = &cv.best()?.model;
        let output = model.forward(&bag.instances)?;
        let top = top_fraction(&output.attention, 0.1);
        let hits = top.iter().filter(|&&i| planted[i] == 1).count();
        let total = planted.iter().filter(|&&f| f == 1).count();
        println!(
            "{arch}: P(positive) {:.3}, top-decile recall {hits}/{total}",
            output.bag_prob
        );

        let coords = bag.tile_coords.clone().expect("grid coordinates");
        let map = PatchScoreMap::from_output(coords, &output, thumb_dims, level_dims)?;
        let path = out.join(heatmap_file_name(&bag.source_id, arch.as_str(), "attention"));
        write_image(&render_attention(&map, &thumb)?, &path)?;
        println!("  {}", path.display());
        if arch.is_additive() {
            let path = out.join(heatmap_file_name(&bag.source_id, arch.as_str(), "contrib"));
            write_image(&render_contributions(&map, &thumb)?, &path)?;
            println!("  {}", path.display());
        }
    }
    Ok(())
}
