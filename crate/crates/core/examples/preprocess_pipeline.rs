//! Synthetic slide pyramids through the whole pipeline into one embedding
//! store, then back as bags.
//!
//! cargo run --release --example preprocess_pipeline -- [slides] [target]

use std::time::Instant;

use wsi_mil::bags::load_dataset;
use wsi_mil::wsi::{
    run_pipeline, store_read, synth_corpus, HandcraftedExtractor, Magnification, PipelineConfig, PyramidSynthConfig,
};

fn main() -> wsi_mil::Result<()> {
    let mut args = std::env::args().skip(1);
    let slides: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(4);
    let target: Magnification = args
        .next()
        .map(|a| a.parse())
        .transpose()?
        .unwrap_or(Magnification::X10);

    let dir = std::env::temp_dir().join("wsi-mil-pipeline");
    let corpus = PyramidSynthConfig {
        slides,
        grid_cols: 3,
        grid_rows: 2,
        ..PyramidSynthConfig::default()
    };
    let manifest = synth_corpus(&corpus, &dir.join("slides"))?;
    println!("{slides} slides in {}", dir.join("slides").display());

    let cfg = PipelineConfig {
        target,
        ..PipelineConfig::default()
    };
    let start = Instant::now();
    let out = dir.join("embeddings.milstore");
    let (store, reports) = run_pipeline(&manifest, &cfg, &HandcraftedExtractor::new(0), &out)?;
    println!("slide     label  otsu  mask_px  tissue_px  gated  kept  rows");
    for (r, s) in reports.iter().zip(&store.slides) {
        println!(
            "{:<9} {:>5}  {:>4}  {:>7}  {:>9}  {:>5}  {:>4}  {:>4}",
            r.slide_id, s.label, r.otsu_threshold, r.mask_pixels, r.filtered_pixels, r.gated, r.kept, r.rows
        );
    }
    let size = std::fs::metadata(&out)
        .map_err(|e| wsi_mil::Error::Input(e.to_string()))?
        .len();
    let rows: usize = store.slides.iter().map(|s| s.len()).sum();
    println!(
        "{rows} rows of width {} in {size} bytes ({:.0}x smaller than raw tiles), {:.1}s",
        store.embed_dim,
        rows as f64 * 512.0 * 512.0 * 3.0 / size as f64,
        start.elapsed().as_secs_f64()
    );
    assert_eq!(store_read(&out)?, store);

    let rows: Vec<wsi_mil::bags::ManifestRow> = store
        .slides
        .iter()
        .map(|s| wsi_mil::bags::ManifestRow {
            source_id: s.slide_id.clone(),
            label: s.label,
            store_path: "embeddings.milstore".into(),
        })
        .collect();
    let ds = dir.join("dataset.csv");
    wsi_mil::bags::write_dataset_manifest(&ds, &rows)?;
    let bags = load_dataset(&ds, false)?;
    println!("{} bags ready for training (originals only)", bags.len());
    Ok(())
}
