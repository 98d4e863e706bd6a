//! ROC analysis, multi-run aggregation, and fold selection.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)`, from `(0,0)` to `(1,1)`.
    pub points: Vec<(f64, f64)>,
    /// Score threshold reached at each point; the first is `+inf`.
    pub thresholds: Vec<f64>,
}

/// ROC curve and its trapezoidal area.
///
/// Tied scores move the curve diagonally in one step, so the area equals the
/// Mann-Whitney statistic with ties counted as one half. The area is
/// accumulated in integer counts and divided once.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<(RocCurve, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!("{pos} positives, {neg} negatives")));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(s);
    }
    let auc = twice_area as f64 / (2.0 * pos as f64 * neg as f64);
    Ok((RocCurve { points, thresholds }, auc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub aucs: Vec<f64>,
    pub mean: f64,
    /// Sample (n - 1) standard deviation.
    pub std: f64,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

pub fn aggregate_runs(aucs: &[f64]) -> Result<RunSummary> {
    if aucs.len() < 2 {
        return Err(Error::Config(format!(
            "{} run(s); a spread needs at least two",
            aucs.len()
        )));
    }
    let n = aucs.len() as f64;
    let mean = aucs.iter().sum::<f64>() / n;
    let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(RunSummary {
        aucs: aucs.to_vec(),
        mean,
        std: var.sqrt(),
    })
}

/// Index of the fold with the highest validation AUC; ties go to the lowest index.
pub fn select_best_fold(val_aucs: &[f64]) -> Result<usize> {
    if val_aucs.len() < 2 {
        return Err(Error::Config(format!(
            "best-fold selection over {} fold(s)",
            val_aucs.len()
        )));
    }
    let mut best = 0;
    for (i, &auc) in val_aucs.iter().enumerate().skip(1) {
        if auc > val_aucs[best] {
            best = i;
        }
    }
    Ok(best)
}

/// One row of an experiment report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub model: String,
    pub task: String,
    pub magnification: String,
    pub summary: RunSummary,
}

pub const METRICS_HEADER: &str = "model\ttask\tmagnification\trun_aucs\tmean\tstd\tauc";

impl MetricsRow {
    pub fn to_line(&self) -> String {
        let runs: Vec<String> = self.summary.aucs.iter().map(|a| format!("{a:.6}")).collect();
        format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
            self.model,
            self.task,
            self.magnification,
            runs.join(";"),
            self.summary.mean,
            self.summary.std,
            self.summary
        )
    }
}

/// Tab-separated report, one row per model.
pub fn write_metrics_report(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// `fpr,tpr,threshold` rows for plotting.
pub fn write_roc_points(path: &Path, curve: &RocCurve) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::from("fpr,tpr,threshold\n");
    for (&(fpr, tpr), th) in curve.points.iter().zip(&curve.thresholds) {
        body.push_str(&format!("{fpr},{tpr},{th}\n"));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_tied_scores() {
        let (_, auc) = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 1.0);
        let (curve, auc) = roc_auc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap();
        assert_eq!(auc, 0.5);
        assert_eq!(curve.points, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn three_of_four_pairs() {
        let (curve, auc) = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 0.75);
        assert_eq!(*curve.points.first().unwrap(), (0.0, 0.0));
        assert_eq!(*curve.points.last().unwrap(), (1.0, 1.0));
    }

    #[test]
    fn single_class_is_degenerate() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(Error::DegenerateLabels(_))));
        assert!(matches!(roc_auc(&[0.1], &[1, 0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn aggregate_formats_like_a_results_table() {
        let s = aggregate_runs(&[0.9, 0.9, 0.9]).unwrap();
        assert_eq!(s.to_string(), "0.900 ± 0.000");
        let s = aggregate_runs(&[0.8, 1.0]).unwrap();
        assert!((s.std - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.to_string(), "0.900 ± 0.141");
        assert!(matches!(aggregate_runs(&[0.7]), Err(Error::Config(_))));
    }

    #[test]
    fn best_fold_argmax_with_low_index_ties() {
        assert_eq!(select_best_fold(&[0.7, 0.9, 0.8, 0.6, 0.5]).unwrap(), 1);
        assert_eq!(select_best_fold(&[0.9, 0.9]).unwrap(), 0);
        assert!(select_best_fold(&[0.9]).is_err());
    }
}
