//! Classification metrics, ranking metrics and subject-level aggregation.
//!
//! Multi-class precision, recall, F1, AUROC and AUPRC are macro averages of the
//! per-class (one-vs-rest) values.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Metric name to value, as reported per subject.
pub type MetricMap = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    probabilities: Vec<Vec<f64>>,
    predicted: Vec<usize>,
    true_labels: Vec<usize>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl PredictionBatch {
    /// Rows must sum to 1 within 1e-6 and labels must index a column.
    pub fn new(probabilities: Vec<Vec<f64>>, true_labels: Vec<usize>) -> Result<Self> {
        if probabilities.len() != true_labels.len() {
            return Err(Error::Dimension {
                op: "prediction batch",
                left: vec![probabilities.len()],
                right: vec![true_labels.len()],
            });
        }
        let k = probabilities.first().map_or(0, Vec::len);
        for (i, row) in probabilities.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.len() != k || (s - 1.0).abs() > 1e-6 || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Contract(format!("row {i} is not a probability vector")));
            }
            if true_labels[i] >= k {
                return Err(Error::Contract(format!("label {} out of range for {k} classes", true_labels[i])));
            }
        }
        let predicted = probabilities.iter().map(|r| argmax(r)).collect();
        Ok(Self {
            probabilities,
            predicted,
            true_labels,
        })
    }

    /// Softmax of each logit row.
    pub fn from_logits(logits: &Tensor, true_labels: Vec<usize>) -> Result<Self> {
        let rows = (0..logits.rows())
            .map(|i| {
                let r = logits.row(i);
                let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = r.iter().map(|v| math::exp(v - m)).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|v| v / z).collect()
            })
            .collect();
        Self::new(rows, true_labels)
    }

    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.probabilities.first().map_or(0, Vec::len)
    }

    pub fn probabilities(&self) -> &[Vec<f64>] {
        &self.probabilities
    }

    pub fn predicted(&self) -> &[usize] {
        &self.predicted
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_metrics(batch: &PredictionBatch) -> Result<ClassificationMetrics> {
    if batch.is_empty() {
        return Err(Error::Contract("empty prediction batch".to_string()));
    }
    let k = batch.class_count();
    let (mut tp, mut fp, mut fneg) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for (&p, &t) in batch.predicted.iter().zip(&batch.true_labels) {
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let (mut prec, mut rec, mut f1) = (0.0, 0.0, 0.0);
    for c in 0..k {
        if tp[c] + fp[c] + fneg[c] == 0 {
            log::warn!("class {c} absent from truth and predictions; scored 0");
            continue;
        }
        let p = ratio(tp[c], tp[c] + fp[c]);
        let r = ratio(tp[c], tp[c] + fneg[c]);
        prec += p;
        rec += r;
        if p + r > 0.0 {
            f1 += 2.0 * p * r / (p + r);
        }
    }
    Ok(ClassificationMetrics {
        accuracy: ratio(tp.iter().sum(), batch.len()),
        precision: prec / k as f64,
        recall: rec / k as f64,
        f1: f1 / k as f64,
    })
}

/// Scores and binary truth for every class present in the labels.
fn one_vs_rest(batch: &PredictionBatch) -> Result<Vec<(Vec<f64>, Vec<bool>)>> {
    if batch.is_empty() {
        return Err(Error::Contract("empty prediction batch".to_string()));
    }
    let mut out = Vec::new();
    for c in 0..batch.class_count() {
        let truth: Vec<bool> = batch.true_labels.iter().map(|&t| t == c).collect();
        let pos = truth.iter().filter(|&&t| t).count();
        if pos == 0 {
            log::warn!("class {c} has no positives; left out of the ranking average");
            continue;
        }
        if pos == truth.len() {
            return Err(Error::UndefinedMetric("single-class truth".to_string()));
        }
        out.push((batch.probabilities.iter().map(|r| r[c]).collect(), truth));
    }
    Ok(out)
}

/// Mann-Whitney statistic with tied scores sharing their average rank.
pub fn binary_auroc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    let n = scores.len();
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs positives and negatives".to_string()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&o| truth[o]).count() as f64;
        i = j + 1;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Step-wise area under the precision-recall curve, thresholds at distinct scores.
pub fn binary_auprc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    let pos = truth.iter().filter(|&&t| t).count();
    if pos == 0 || pos == truth.len() {
        return Err(Error::UndefinedMetric("AUPRC needs positives and negatives".to_string()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut prev_recall, mut area) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        tp += order[i..=j].iter().filter(|&&o| truth[o]).count();
        seen += j - i + 1;
        let recall = tp as f64 / pos as f64;
        area += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
        i = j + 1;
    }
    Ok(area)
}

pub fn auroc(batch: &PredictionBatch) -> Result<f64> {
    let parts = one_vs_rest(batch)?;
    let mut s = 0.0;
    for (scores, truth) in &parts {
        s += binary_auroc(scores, truth)?;
    }
    Ok(s / parts.len() as f64)
}

pub fn auprc(batch: &PredictionBatch) -> Result<f64> {
    let parts = one_vs_rest(batch)?;
    let mut s = 0.0;
    for (scores, truth) in &parts {
        s += binary_auprc(scores, truth)?;
    }
    Ok(s / parts.len() as f64)
}

/// All six metrics keyed by name.
pub fn metric_map(batch: &PredictionBatch) -> Result<MetricMap> {
    let c = classification_metrics(batch)?;
    let mut m = MetricMap::new();
    m.insert("accuracy".to_string(), c.accuracy);
    m.insert("precision".to_string(), c.precision);
    m.insert("recall".to_string(), c.recall);
    m.insert("f1".to_string(), c.f1);
    m.insert("auroc".to_string(), auroc(batch)?);
    m.insert("auprc".to_string(), auprc(batch)?);
    Ok(m)
}

/// Mean and population standard deviation, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

fn two_decimals(x: f64) -> f64 {
    math::round(x * 100.0) / 100.0
}

/// Per metric, mean and population std over the subjects reporting it, as
/// percentages rounded to 2 decimals.
pub fn aggregate_subjects(per_subject: &[MetricMap]) -> BTreeMap<String, Summary> {
    let mut keys: Vec<&String> = per_subject.iter().flat_map(|m| m.keys()).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter()
        .map(|k| {
            let v: Vec<f64> = per_subject.iter().filter_map(|m| m.get(k)).map(|x| 100.0 * x).collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (
                k.clone(),
                Summary {
                    mean: two_decimals(mean),
                    std: two_decimals(math::sqrt(var)),
                },
            )
        })
        .collect()
}

/// Median of a nonempty list (mean of the two middle values for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(labels: &[usize], k: usize) -> Vec<Vec<f64>> {
        labels
            .iter()
            .map(|&l| (0..k).map(|c| if c == l { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    #[test]
    fn all_correct() {
        let labels = vec![0, 1, 2, 1, 0];
        let b = PredictionBatch::new(onehot(&labels, 3), labels).unwrap();
        let m = classification_metrics(&b).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(auroc(&b).unwrap(), 1.0);
        assert_eq!(auprc(&b).unwrap(), 1.0);
    }

    #[test]
    fn complement_is_zero_accuracy() {
        let truth = vec![0, 1, 1, 0];
        let pred: Vec<usize> = truth.iter().map(|t| 1 - t).collect();
        let b = PredictionBatch::new(onehot(&pred, 2), truth).unwrap();
        assert_eq!(classification_metrics(&b).unwrap().accuracy, 0.0);
    }

    #[test]
    fn single_class_truth_undefined() {
        let b = PredictionBatch::new(vec![vec![0.6, 0.4], vec![0.3, 0.7]], vec![0, 0]).unwrap();
        assert!(matches!(auroc(&b), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auprc(&b), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn rejects_bad_rows_and_empty() {
        assert!(PredictionBatch::new(vec![vec![0.5, 0.6]], vec![0]).is_err());
        assert!(PredictionBatch::new(vec![vec![0.5, 0.5]], vec![2]).is_err());
        let e = PredictionBatch::new(vec![], vec![]).unwrap();
        assert!(matches!(classification_metrics(&e), Err(Error::Contract(_))));
    }

    #[test]
    fn aggregation_two_point() {
        let mk = |a: f64| MetricMap::from([("accuracy".to_string(), a)]);
        let s = aggregate_subjects(&[mk(0.8), mk(0.9)]);
        assert_eq!(s["accuracy"], Summary { mean: 85.0, std: 5.0 });
        let s = aggregate_subjects(&[mk(0.8123)]);
        assert_eq!(s["accuracy"], Summary { mean: 81.23, std: 0.0 });
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
