//! ROC curve and AUC with tied scores, run aggregation, and the report files.
//!
//! cargo run --release --example roc_report -- [out_dir]

use std::path::PathBuf;

use wsi_mil::metrics::{aggregate_runs, roc_auc, write_metrics_report, write_roc_points, MetricsRow, METRICS_HEADER};

fn main() -> wsi_mil::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("wsi-mil-roc"));
    std::fs::create_dir_all(&out).map_err(|e| wsi_mil::Error::Input(e.to_string()))?;

    let scores = [0.9, 0.8, 0.8, 0.7, 0.55, 0.5, 0.5, 0.3, 0.2, 0.1];
    let labels = [1, 1, 0, 1, 0, 1, 0, 0, 1, 0];
    let (roc, auc) = roc_auc(&scores, &labels)?;
    println!("threshold  fpr    tpr");
    for (t, (fpr, tpr)) in roc.thresholds.iter().zip(&roc.points) {
        println!("{t:>9.2}  {fpr:.3}  {tpr:.3}");
    }
    println!("AUC {auc:.4}");
    write_roc_points(&out.join("roc.csv"), &roc)?;

    let summary = aggregate_runs(&[0.962, 0.981, 0.955, 0.990, 0.970])?;
    let row = MetricsRow {
        model: "amil".into(),
        task: "synthetic".into(),
        magnification: "10x".into(),
        summary,
    };
    println!("\n{METRICS_HEADER}\n{}", row.to_line());
    write_metrics_report(&out.join("metrics.tsv"), &[row])?;
    println!("\nwrote {}", out.display());
    Ok(())
}
