//! One bag through AMIL, AdMIL, and the hybrid: attention weights, patch
//! logits, and the additive decomposition of the bag score.
//!
//! cargo run --release --example attention_models

use wsi_mil::bags::{generate_synthetic, SynthConfig};
use wsi_mil::mil::{Architecture, MilModel, ModelDims};

fn main() -> wsi_mil::Result<()> {
    let cfg = SynthConfig {
        num_bags: 2,
        min_instances: 6,
        max_instances: 6,
        ..SynthConfig::default()
    };
    let bag = generate_synthetic(&cfg)?.remove(1);
    println!(
        "bag {} label {} instance labels {:?}",
        bag.source_id, bag.label, bag.instance_labels
    );

    for arch in Architecture::ALL {
        let model = MilModel::new(arch, ModelDims::new(cfg.embed_dim, 16), 3)?;
        let out = model.forward(&bag.instances)?;
        println!("\n{arch}: P(positive) = {:.4}", out.bag_prob);
        let weights: Vec<String> = out.attention.iter().map(|a| format!("{a:.3}")).collect();
        println!("  attention  [{}]", weights.join(", "));
        if let (Some(logits), Some(scores)) = (&out.patch_logits, out.class_scores) {
            let contribs = out.bounded_contribs.clone().unwrap_or_default();
            for (i, c) in contribs.iter().enumerate() {
                let kind = if *c >= 0.5 { "excitatory" } else { "inhibitory" };
                println!(
                    "  tile {i}: logits ({:+.3}, {:+.3})  contribution {c:.3} {kind}",
                    logits.get(i, 0),
                    logits.get(i, 1)
                );
            }
            let sum1: f64 = (0..bag.len()).map(|i| logits.get(i, 1)).sum();
            println!("  class-1 score {:.6} = sum of patch logits {sum1:.6}", scores[1]);
        }
    }
    Ok(())
}
