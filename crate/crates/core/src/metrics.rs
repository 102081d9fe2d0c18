//! Confusion matrices and the evaluation suite.
//!
//! Multi-class figures come from one-vs-rest counts per class and an
//! unweighted macro mean. Ratios with a zero denominator evaluate to 0, and
//! MCC is 0 whenever any factor under its square root is 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

pub const ZERO_DIVISION_CONVENTION: &str =
    "ratios with a zero denominator are reported as 0; MCC is 0 when any marginal product is 0";

/// Counts indexed `[actual][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            n_classes: n,
            counts: rows.concat(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.n_classes + predicted]
    }

    pub fn add(&mut self, actual: usize, predicted: usize) {
        self.counts[actual * self.n_classes + predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|k| self.get(k, k)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n_classes.max(1)).map(|r| r.to_vec()).collect()
    }

    /// One-vs-rest counts treating `class` as positive.
    pub fn binary_counts(&self, class: usize) -> BinaryCounts {
        let tp = self.get(class, class);
        let row: u64 = (0..self.n_classes).map(|p| self.get(class, p)).sum();
        let col: u64 = (0..self.n_classes).map(|a| self.get(a, class)).sum();
        let fn_ = row - tp;
        let fp = col - tp;
        BinaryCounts {
            tp,
            fp,
            tn: self.total() - tp - fn_ - fp,
            fn_,
        }
    }

    /// CSV with a header of predicted class names; one row per actual class.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("actual\\predicted");
        for name in class_names {
            write!(out, ",{name}").unwrap();
        }
        out.push('\n');
        for (a, row) in self.rows().iter().enumerate() {
            out.push_str(&class_names[a]);
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(actual: &[usize], predicted: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::Shape(format!("{} actual vs {} predicted labels", actual.len(), predicted.len())));
    }
    let mut cm = ConfusionMatrix::new(n_classes);
    for (&a, &p) in actual.iter().zip(predicted) {
        if a >= n_classes || p >= n_classes {
            return Err(Error::InvalidInput(format!("label pair ({a}, {p}) outside {n_classes} classes")));
        }
        cm.add(a, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl BinaryCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub recall: f64,
    pub jaccard: f64,
    pub dice: f64,
    pub f1: f64,
    pub mcc: f64,
    pub accuracy: f64,
    pub error_rate: f64,
    pub kappa: f64,
    pub observed_agreement: f64,
    pub chance_agreement: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Cohen's kappa from exact integer agreement counts:
/// `(n·agree − chance) / (n² − chance)` with `chance = Σ row·col`.
fn kappa_exact(n: u64, agree: u64, chance: i128) -> f64 {
    let n = n as i128;
    let num = n * agree as i128 - chance;
    let den = n * n - chance;
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn binary_metrics(c: BinaryCounts) -> ClassMetrics {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let total = tp + fp + tn + fn_;
    let sensitivity = ratio(tp, tp + fn_);
    let accuracy = ratio(tp + tn, total);
    let marginals = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    let mcc = if marginals == 0.0 {
        0.0
    } else {
        let cross = c.tp as i128 * c.tn as i128 - c.fp as i128 * c.fn_ as i128;
        cross as f64 / marginals.sqrt()
    };
    let chance_counts = (c.tp + c.fp) as i128 * (c.tp + c.fn_) as i128 + (c.tn + c.fp) as i128 * (c.tn + c.fn_) as i128;
    let chance = ratio(chance_counts as f64, total * total);
    // 2PR/(P+R) reduces to the same fraction as Dice
    let overlap = ratio(2.0 * tp, fp + 2.0 * tp + fn_);
    ClassMetrics {
        sensitivity,
        specificity: ratio(tn, tn + fp),
        precision: ratio(tp, tp + fp),
        recall: sensitivity,
        jaccard: ratio(tp, tp + fn_ + fp),
        dice: overlap,
        f1: overlap,
        mcc,
        accuracy,
        error_rate: 1.0 - accuracy,
        kappa: kappa_exact(c.total(), c.tp + c.tn, chance_counts),
        observed_agreement: accuracy,
        chance_agreement: chance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    pub name: String,
    pub counts: BinaryCounts,
    pub metrics: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_classes: usize,
    pub total: u64,
    /// Trace over total of the full matrix.
    pub overall_accuracy: f64,
    /// Multi-class Cohen's kappa of the full matrix.
    pub overall_kappa: f64,
    pub per_class: Vec<ClassReport>,
    pub macro_average: ClassMetrics,
    pub confusion: Vec<Vec<u64>>,
    pub conventions: String,
}

fn macro_mean(per_class: &[ClassReport]) -> ClassMetrics {
    let n = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|c| f(&c.metrics)).sum::<f64>() / n;
    let accuracy = mean(|m| m.accuracy);
    let sensitivity = mean(|m| m.sensitivity);
    let dice = mean(|m| m.dice);
    ClassMetrics {
        sensitivity,
        specificity: mean(|m| m.specificity),
        precision: mean(|m| m.precision),
        recall: sensitivity,
        jaccard: mean(|m| m.jaccard),
        dice,
        f1: dice,
        mcc: mean(|m| m.mcc),
        accuracy,
        error_rate: 1.0 - accuracy,
        kappa: mean(|m| m.kappa),
        observed_agreement: accuracy,
        chance_agreement: mean(|m| m.chance_agreement),
    }
}

pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    report_named(cm, &(0..cm.n_classes()).map(|k| k.to_string()).collect::<Vec<_>>())
}

pub fn report_named(cm: &ConfusionMatrix, class_names: &[String]) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 || cm.n_classes() == 0 {
        return Err(Error::InvalidInput("cannot report on an empty confusion matrix".into()));
    }
    if class_names.len() != cm.n_classes() {
        return Err(Error::Shape(format!("{} names for {} classes", class_names.len(), cm.n_classes())));
    }
    let per_class: Vec<ClassReport> = (0..cm.n_classes())
        .map(|k| {
            let counts = cm.binary_counts(k);
            ClassReport {
                class: k,
                name: class_names[k].clone(),
                counts,
                metrics: binary_metrics(counts),
            }
        })
        .collect();
    let n = total as f64;
    let observed = cm.trace() as f64 / n;
    let chance: i128 = (0..cm.n_classes())
        .map(|k| {
            let row: u64 = (0..cm.n_classes()).map(|p| cm.get(k, p)).sum();
            let col: u64 = (0..cm.n_classes()).map(|a| cm.get(a, k)).sum();
            row as i128 * col as i128
        })
        .sum();
    Ok(MetricsReport {
        n_classes: cm.n_classes(),
        total,
        overall_accuracy: observed,
        overall_kappa: kappa_exact(total, cm.trace(), chance),
        macro_average: macro_mean(&per_class),
        per_class,
        confusion: cm.rows(),
        conventions: ZERO_DIVISION_CONVENTION.into(),
    })
}

const METRIC_COLUMNS: &str = "sensitivity,specificity,precision,recall,jaccard,dice,f1,mcc,accuracy,error_rate,kappa,observed_agreement,chance_agreement";

fn metric_values(m: &ClassMetrics) -> [f64; 13] {
    [
        m.sensitivity,
        m.specificity,
        m.precision,
        m.recall,
        m.jaccard,
        m.dice,
        m.f1,
        m.mcc,
        m.accuracy,
        m.error_rate,
        m.kappa,
        m.observed_agreement,
        m.chance_agreement,
    ]
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("report json: {e}")))
    }

    /// One row per class plus a trailing `macro` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("class,name,tp,fp,tn,fn,{METRIC_COLUMNS}\n");
        for c in &self.per_class {
            write!(out, "{},{},{},{},{},{}", c.class, c.name, c.counts.tp, c.counts.fp, c.counts.tn, c.counts.fn_).unwrap();
            for v in metric_values(&c.metrics) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out.push_str("macro,macro,,,,");
        for v in metric_values(&self.macro_average) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr).unwrap();
        }
        out
    }
}

/// Sweeps a decision threshold over the distinct scores (a sample is called
/// positive when its score is at least the threshold) and integrates the
/// curve with the trapezoid rule.
pub fn roc(scores: &[f64], actual: &[bool]) -> Result<RocCurve> {
    if scores.len() != actual.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), actual.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("roc score".into()));
    }
    let positives = actual.iter().filter(|&&a| a).count();
    let negatives = actual.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidInput("roc needs both positive and negative samples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        while k < order.len() && scores[order[k]] == threshold {
            if actual[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    let auc = points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum();
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassRoc {
    /// `None` for classes that are absent or exhaustive in `actual`.
    pub per_class: Vec<Option<RocCurve>>,
    pub macro_auc: f64,
}

impl MulticlassRoc {
    /// Long-format CSV: `class,threshold,fpr,tpr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,threshold,fpr,tpr\n");
        for (k, curve) in self.per_class.iter().enumerate() {
            for p in curve.iter().flat_map(|c| &c.points) {
                writeln!(out, "{k},{},{},{}", p.threshold, p.fpr, p.tpr).unwrap();
            }
        }
        out
    }
}

/// One-vs-rest curves from per-sample class probabilities.
pub fn roc_one_vs_rest(probabilities: &[Vec<f64>], actual: &[usize], n_classes: usize) -> Result<MulticlassRoc> {
    if probabilities.len() != actual.len() || probabilities.iter().any(|p| p.len() != n_classes) {
        return Err(Error::Shape("probability rows must match labels and class count".into()));
    }
    let per_class: Vec<Option<RocCurve>> = (0..n_classes)
        .map(|k| {
            let scores: Vec<f64> = probabilities.iter().map(|p| p[k]).collect();
            let truth: Vec<bool> = actual.iter().map(|&a| a == k).collect();
            roc(&scores, &truth).ok()
        })
        .collect();
    let aucs: Vec<f64> = per_class.iter().flatten().map(|c| c.auc).collect();
    if aucs.is_empty() {
        return Err(Error::InvalidInput("no class has both positive and negative samples".into()));
    }
    Ok(MulticlassRoc {
        macro_auc: aucs.iter().sum::<f64>() / aucs.len() as f64,
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Psnr {
    Db(f64),
    /// Identical inputs.
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub mse: f64,
    pub psnr: Psnr,
}

pub const PEAK: f64 = 255.0;

pub fn mse_psnr(a: &Frame, b: &Frame) -> Result<Fidelity> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let n = a.pixels().len() as f64;
    let mse = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
    let psnr = if mse == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Db(10.0 * (PEAK * PEAK / mse).log10())
    };
    Ok(Fidelity { mse, psnr })
}
