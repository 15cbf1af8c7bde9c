use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class and support-weighted classification metrics; 0/0 is taken as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_classes: usize,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<usize>>,
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    #[serde(rename = "fn")]
    pub fn_: Vec<usize>,
    pub support: Vec<usize>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub oa: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

pub fn compute_metrics(preds: &[usize], labels: &[usize], classes: usize) -> Result<MetricsReport> {
    if preds.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = preds.iter().chain(labels).find(|&&c| c >= classes) {
        return Err(Error::Data(format!("class id {bad} outside [0, {classes})")));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        confusion[l][p] += 1;
    }
    let tp: Vec<usize> = (0..classes).map(|c| confusion[c][c]).collect();
    let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let predicted: Vec<usize> = (0..classes).map(|c| confusion.iter().map(|r| r[c]).sum()).collect();
    let fp: Vec<usize> = (0..classes).map(|c| predicted[c] - tp[c]).collect();
    let fn_: Vec<usize> = (0..classes).map(|c| support[c] - tp[c]).collect();
    let precision: Vec<f64> = (0..classes).map(|c| ratio(tp[c] as f64, predicted[c] as f64)).collect();
    let recall: Vec<f64> = (0..classes).map(|c| ratio(tp[c] as f64, support[c] as f64)).collect();
    let f1: Vec<f64> = (0..classes)
        .map(|c| ratio(2.0 * precision[c] * recall[c], precision[c] + recall[c]))
        .collect();
    let n = labels.len() as f64;
    let weighted = |v: &[f64]| ratio(v.iter().zip(&support).map(|(x, &s)| x * s as f64).sum(), n);
    let correct: usize = tp.iter().sum();
    Ok(MetricsReport {
        num_classes: classes,
        weighted_precision: weighted(&precision),
        weighted_recall: weighted(&recall),
        weighted_f1: weighted(&f1),
        oa: ratio(correct as f64, n),
        confusion,
        tp,
        fp,
        fn_,
        support,
        precision,
        recall,
        f1,
    })
}

impl MetricsReport {
    /// Confusion matrix as CSV with a header row of predicted class ids.
    pub fn confusion_csv(&self, names: &[String]) -> String {
        let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| i.to_string());
        let mut out = String::from("true\\pred");
        for c in 0..self.num_classes {
            out.push(',');
            out.push_str(&name(c));
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(&name(i));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}
