//! Full protocol on synthetic bags: stratified 80/20 split, 5-fold CV on the
//! training side, best fold scored on the test side, repeated over runs.
//!
//! cargo run --release --example synthetic_benchmark -- [runs] [class_separation]

use std::time::Instant;

use wsi_mil::bags::{generate_synthetic, SynthConfig};
use wsi_mil::mil::{repeat_protocol, Architecture, ModelDims, TrainConfig};

fn main() -> wsi_mil::Result<()> {
    let mut args = std::env::args().skip(1);
    let runs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);
    let separation: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(2.0);

    let bags = generate_synthetic(&SynthConfig {
        class_separation: separation,
        seed: 11,
        ..SynthConfig::default()
    })?;
    let positives = bags.iter().filter(|b| b.label == 1).count();
    println!(
        "{} bags ({positives} positive), separation {separation}, {runs} runs",
        bags.len()
    );

    let dims = ModelDims::new(32, 16);
    for arch in Architecture::ALL {
        let start = Instant::now();
        let (summary, protocol) = repeat_protocol(&bags, arch, &dims, &TrainConfig::default(), runs)?;
        let folds: Vec<usize> = protocol.iter().map(|r| r.best_fold).collect();
        println!(
            "{arch:<6} test AUC {summary}  best folds {folds:?}  ({:.1}s)",
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
