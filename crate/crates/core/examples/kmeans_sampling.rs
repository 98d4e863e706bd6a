//! Tile selection helpers: k-means over embeddings with per-cluster sampling
//! (10x/20x targets) and the fractional rule for large 5x tile sets.
//!
//! cargo run --release --example kmeans_sampling

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsi_mil::diff::Tensor2D;
use wsi_mil::wsi::{cluster_sample, kmeans, sample_level5};

fn main() -> wsi_mil::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let centres = [(-4.0, 0.0), (3.0, 3.0), (3.0, -3.0)];
    let mut rows = Vec::new();
    for (i, &(cx, cy)) in centres.iter().enumerate() {
        for _ in 0..20 + 15 * i {
            rows.push(vec![cx + rng.random_range(-1.0..1.0), cy + rng.random_range(-1.0..1.0)]);
        }
    }
    let points = Tensor2D::from_rows(&rows)?;
    let km = kmeans(&points, 3, 5, 100, 10)?;
    println!(
        "{} points, WCSS {:.3} after {} iterations",
        rows.len(),
        km.wcss,
        km.iterations
    );
    for k in 0..3 {
        let size = km.assignments.iter().filter(|&&a| a == k).count();
        let c = km.centroids.row(k);
        println!("  cluster {k}: {size:>2} points, centroid ({:+.2}, {:+.2})", c[0], c[1]);
    }
    let picked = cluster_sample(&km.assignments, 10, 9);
    println!("up to 10 per cluster: {} tiles", picked.len());

    for count in [400, 1000, 1001, 5000] {
        let keep = sample_level5(count, 0.6, 1000, 1)?;
        println!("5x: {count} gated tiles -> {} kept", keep.len());
    }
    Ok(())
}
