//! Accuracy statistics across Monte Carlo trials and their CSV/JSON output.

use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (zero for a single trial).
    pub std: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Summary {
    /// Mean, spread and normal-approximation 95% interval of `values`.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { n, mean: f64::NAN, std: f64::NAN, ci_lo: f64::NAN, ci_hi: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let half = Z95 * std / (n as f64).sqrt();
        Self { n, mean, std, ci_lo: mean - half, ci_hi: mean + half }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub model: String,
    pub dataset: String,
    /// Perturbation family: `none`, `uniform`, `gaussian` or `attack`.
    pub kind: String,
    pub magnitude: f64,
    /// Accuracy per trial, in trial order.
    pub accuracies: Vec<f64>,
    pub summary: Summary,
}

impl ExperimentReport {
    pub fn new(model: &str, dataset: &str, kind: &str, magnitude: f64, accuracies: Vec<f64>) -> Self {
        Self {
            model: model.into(),
            dataset: dataset.into(),
            kind: kind.into(),
            magnitude,
            summary: Summary::of(&accuracies),
            accuracies,
        }
    }
}

pub const CSV_HEADER: [&str; 9] =
    ["model", "dataset", "kind", "magnitude", "trials", "mean", "std", "ci_lo", "ci_hi"];

/// One line per report.
pub fn to_csv(reports: &[ExperimentReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in reports {
        let s = &r.summary;
        w.write_record([
            r.model.clone(),
            r.dataset.clone(),
            r.kind.clone(),
            r.magnitude.to_string(),
            s.n.to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.ci_lo.to_string(),
            s.ci_hi.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_constant_values() {
        let s = Summary::of(&[0.9; 5]);
        assert_eq!((s.mean, s.std, s.ci_lo, s.ci_hi), (0.9, 0.0, 0.9, 0.9));
    }

    #[test]
    fn summary_matches_hand_computation() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((s.std - sd).abs() < 1e-15);
        assert!((s.ci_hi - (2.5 + 1.959963984540054 * sd / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let r = ExperimentReport::new("sdt", "wdbc", "uniform", 0.1, vec![0.9, 0.95]);
        let csv = to_csv(&[r]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "model,dataset,kind,magnitude,trials,mean,std,ci_lo,ci_hi");
        assert!(lines.next().unwrap().starts_with("sdt,wdbc,uniform,0.1,2,0.925"));
    }
}
