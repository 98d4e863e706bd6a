//! Reverse-mode gradients of the bag loss against central differences.
//!
//! cargo run --release --example gradient_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wsi_mil::diff::{GradCheckOptions, Tensor2D};
use wsi_mil::mil::{model_grad_check, Architecture, MilModel, ModelDims};

fn main() -> wsi_mil::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bag = Tensor2D::from_vec(3, 8, (0..24).map(|_| StandardNormal.sample(&mut rng)).collect())?;
    for arch in Architecture::ALL {
        let model = MilModel::new(arch, ModelDims::new(8, 4), 1)?;
        let opts = GradCheckOptions {
            coords_per_param: usize::MAX,
            ..GradCheckOptions::default()
        };
        for label in [0.0, 1.0] {
            let report = model_grad_check(&model, &bag, label, opts)?;
            println!(
                "{arch:<6} y={label}  {} coordinates  max relative error {:.2e}",
                report.coords_checked, report.max_rel_error
            );
        }
    }
    Ok(())
}
