//! Classification metrics, ROC area, agreement statistics and grouped
//! evaluation.

pub mod agreement;
pub mod stratify;

use serde::{Deserialize, Serialize};

use crate::detect::ScoredWindow;
use crate::error::{Error, Result};
use crate::pipeline::WindowLabel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::shape(
                "confusion counts",
                "length",
                actual.len(),
                predicted.len(),
            ));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Row order of the text report.
pub const METRIC_NAMES: [&str; 12] = [
    "TPR",
    "TNR",
    "FPR",
    "FNR",
    "Gmean",
    "MCC",
    "Precision",
    "Recall",
    "Specificity",
    "Balanced Accuracy",
    "F1-score",
    "AUROC",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tpr: f64,
    pub tnr: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub gmean: f64,
    pub mcc: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub balanced_accuracy: f64,
    pub f1: f64,
    pub auroc: Option<f64>,
    /// Absent on averaged rows.
    pub counts: Option<ConfusionCounts>,
    /// Metrics whose denominator was zero and are reported as 0.
    #[serde(default)]
    pub degenerate: Vec<String>,
}

fn ratio(num: f64, den: f64, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        flags.push(name.to_string());
        0.0
    } else {
        num / den
    }
}

/// Threshold metrics from confusion counts; `auroc` is left empty.
pub fn confusion_metrics(c: ConfusionCounts) -> MetricsReport {
    let (tp, fp, tn, fnn) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let mut flags = Vec::new();
    let tpr = ratio(tp, tp + fnn, "tpr", &mut flags);
    let fnr = ratio(fnn, tp + fnn, "fnr", &mut flags);
    let tnr = ratio(tn, tn + fp, "tnr", &mut flags);
    let fpr = ratio(fp, tn + fp, "fpr", &mut flags);
    let precision = ratio(tp, tp + fp, "precision", &mut flags);
    let f1 = ratio(2.0 * precision * tpr, precision + tpr, "f1", &mut flags);
    let den = (tp + fp) * (tp + fnn) * (tn + fp) * (tn + fnn);
    let mcc = ratio(tp * tn - fp * fnn, den.sqrt(), "mcc", &mut flags);
    MetricsReport {
        tpr,
        tnr,
        fpr,
        fnr,
        gmean: (tpr * tnr).sqrt(),
        mcc,
        precision,
        recall: tpr,
        specificity: tnr,
        balanced_accuracy: (tpr + tnr) / 2.0,
        f1,
        auroc: None,
        counts: Some(c),
        degenerate: flags,
    }
}

impl MetricsReport {
    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [Option<f64>; 12] {
        [
            Some(self.tpr),
            Some(self.tnr),
            Some(self.fpr),
            Some(self.fnr),
            Some(self.gmean),
            Some(self.mcc),
            Some(self.precision),
            Some(self.recall),
            Some(self.specificity),
            Some(self.balanced_accuracy),
            Some(self.f1),
            self.auroc,
        ]
    }

    /// Checks the identities linking the metrics. Pairs involving a
    /// degenerate metric are skipped, since both sides are then reported as 0.
    pub fn check_consistency(&self, tol: f64) -> Result<()> {
        let deg = |n: &str| self.degenerate.iter().any(|d| d == n);
        let mut fails = Vec::new();
        let mut check = |name: &str, ok: bool| {
            if !ok {
                fails.push(name.to_string());
            }
        };
        let close = |a: f64, b: f64| (a - b).abs() <= tol;
        if !deg("tpr") {
            check("tpr + fnr = 1", close(self.tpr + self.fnr, 1.0));
        }
        if !deg("tnr") {
            check("tnr + fpr = 1", close(self.tnr + self.fpr, 1.0));
        }
        check("recall = tpr", self.recall == self.tpr);
        check("specificity = tnr", self.specificity == self.tnr);
        check("gmean", close(self.gmean, (self.tpr * self.tnr).sqrt()));
        check(
            "balanced accuracy",
            close(self.balanced_accuracy, (self.tpr + self.tnr) / 2.0),
        );
        check("mcc range", (-1.0 - tol..=1.0 + tol).contains(&self.mcc));
        for (n, v) in METRIC_NAMES.iter().zip(self.values()) {
            if let Some(v) = v {
                if *n != "MCC" && !(-tol..=1.0 + tol).contains(&v) {
                    fails.push(format!("{n} outside [0, 1]"));
                }
            }
        }
        if fails.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "inconsistent metrics: {}",
                fails.join(", ")
            )))
        }
    }

    /// Unweighted mean of several reports.
    pub fn average(reports: &[&MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
        let auroc = reports
            .iter()
            .map(|r| r.auroc)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        let mut degenerate: Vec<String> = reports
            .iter()
            .flat_map(|r| r.degenerate.iter().cloned())
            .collect();
        degenerate.sort();
        degenerate.dedup();
        Some(MetricsReport {
            tpr: mean(|r| r.tpr),
            tnr: mean(|r| r.tnr),
            fpr: mean(|r| r.fpr),
            fnr: mean(|r| r.fnr),
            gmean: mean(|r| r.gmean),
            mcc: mean(|r| r.mcc),
            precision: mean(|r| r.precision),
            recall: mean(|r| r.recall),
            specificity: mean(|r| r.specificity),
            balanced_accuracy: mean(|r| r.balanced_accuracy),
            f1: mean(|r| r.f1),
            auroc,
            counts: None,
            degenerate,
        })
    }
}

/// Area under the ROC curve via the rank-sum statistic with midranks for
/// ties.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auroc", "labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("auroc scores".into()));
    }
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "auroc needs both classes ({p} positive, {n} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p as f64 * n as f64))
}

/// Positive class for evaluation: anomalous windows. Proxy outliers count as
/// negatives.
pub fn is_positive(label: WindowLabel) -> bool {
    label == WindowLabel::Anomalous
}

/// Full report for labeled, thresholded windows.
pub fn evaluate(windows: &[ScoredWindow]) -> Result<MetricsReport> {
    let labeled: Vec<&ScoredWindow> = windows.iter().filter(|w| w.label.is_some()).collect();
    if labeled.is_empty() {
        return Err(Error::InvalidArgument(
            "no labeled windows to evaluate".into(),
        ));
    }
    let actual: Vec<bool> = labeled
        .iter()
        .map(|w| is_positive(w.label.unwrap()))
        .collect();
    let predicted: Vec<bool> = labeled.iter().map(|w| w.predicted).collect();
    let scores: Vec<f64> = labeled.iter().map(|w| w.score).collect();
    let mut report = confusion_metrics(ConfusionCounts::from_predictions(&predicted, &actual)?);
    report.auroc = auroc(&scores, &actual).ok();
    if report.auroc.is_none() {
        report.degenerate.push("auroc".into());
    }
    Ok(report)
}

/// Aligned text table, one column per named report.
pub fn render_table(columns: &[(&str, &MetricsReport)]) -> String {
    let name_w = METRIC_NAMES
        .iter()
        .map(|n| n.len())
        .max()
        .unwrap_or(0)
        .max("Metric".len());
    let col_w: Vec<usize> = columns.iter().map(|(n, _)| n.len().max(6)).collect();
    let mut out = format!("{:<name_w$}", "Metric");
    for ((n, _), w) in columns.iter().zip(&col_w) {
        out.push_str(&format!("  {n:>w$}"));
    }
    out.push('\n');
    for (row, name) in METRIC_NAMES.iter().enumerate() {
        out.push_str(&format!("{name:<name_w$}"));
        for ((_, r), w) in columns.iter().zip(&col_w) {
            let cell = r.values()[row].map_or("-".to_string(), |v| format!("{v:.3}"));
            out.push_str(&format!("  {cell:>w$}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn perfect_classifier() {
        let r = confusion_metrics(ConfusionCounts {
            tp: 5,
            fp: 0,
            tn: 5,
            fn_: 0,
        });
        for v in [r.tpr, r.tnr, r.f1, r.mcc, r.gmean] {
            assert_eq!(v, 1.0);
        }
        assert!(r.degenerate.is_empty());
    }

    #[test]
    fn hand_derived_counts() {
        let r = confusion_metrics(ConfusionCounts {
            tp: 3,
            fp: 2,
            tn: 4,
            fn_: 1,
        });
        assert!((r.precision - 0.6).abs() < 1e-15);
        assert_eq!(r.recall, 0.75);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        // (12 - 2) / sqrt(5 · 4 · 6 · 5)
        assert!((r.mcc - 10.0 / 600f64.sqrt()).abs() < 1e-15);
        r.check_consistency(1e-12).unwrap();
    }

    #[test]
    fn no_positives_is_flagged() {
        let r = confusion_metrics(ConfusionCounts {
            tp: 0,
            fp: 1,
            tn: 3,
            fn_: 0,
        });
        assert_eq!(r.tpr, 0.0);
        assert!(r.degenerate.contains(&"tpr".to_string()));
        assert!(r.degenerate.contains(&"mcc".to_string()));
        r.check_consistency(1e-12).unwrap();
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(
            auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
            1.0
        );
        assert_eq!(auroc(&[0.3; 4], &[false, true, false, true]).unwrap(), 0.5);
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [false, false, true, true];
        assert_eq!(auroc(&s, &l).unwrap(), 0.75);
        assert_eq!(pairwise(&s, &l), 0.75);
        assert!(auroc(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn table_has_every_row() {
        let mut r = confusion_metrics(ConfusionCounts {
            tp: 1,
            fp: 1,
            tn: 1,
            fn_: 1,
        });
        let t = render_table(&[("depCAE", &r)]);
        assert_eq!(t.lines().count(), 13);
        assert!(t.lines().last().unwrap().trim_end().ends_with('-'));
        r.auroc = Some(0.5);
        assert!(render_table(&[("a", &r)]).contains("0.500"));
    }

    proptest! {
        #[test]
        fn auroc_equals_pairwise(pairs in prop::collection::vec((0u8..8, any::<bool>()), 2..80)) {
            let s: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 8.0).collect();
            let l: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(l.contains(&true) && l.contains(&false));
            prop_assert_eq!(auroc(&s, &l).unwrap(), pairwise(&s, &l));
        }

        #[test]
        fn auroc_invariant_to_monotone_transform(pairs in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..60)) {
            let s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let l: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(l.contains(&true) && l.contains(&false));
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() + 1.0).collect();
            prop_assert_eq!(auroc(&s, &l).unwrap(), auroc(&t, &l).unwrap());
        }

        #[test]
        fn reports_are_consistent(tp in 0u64..50, fp in 0u64..50, tn in 0u64..50, fnn in 0u64..50) {
            let r = confusion_metrics(ConfusionCounts { tp, fp, tn, fn_: fnn });
            prop_assert!(r.check_consistency(1e-12).is_ok());
            prop_assert_eq!(r.counts.unwrap().total(), tp + fp + tn + fnn);
        }
    }
}
