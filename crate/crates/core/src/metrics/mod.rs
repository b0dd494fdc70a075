//! Per-label and macro MCC / F1 for the three heads.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelKind;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Matthews correlation; 0 when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        mcc(self)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-column binary counts. Entries must be 0 or 1.
pub fn confusion_counts(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<Vec<ConfusionCounts>> {
    if pred.dim() != truth.dim() {
        return Err(Error::invalid(format!("prediction shape {:?} vs truth {:?}", pred.dim(), truth.dim())));
    }
    if pred.iter().chain(truth.iter()).any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("confusion counts need binary matrices"));
    }
    let mut out = vec![ConfusionCounts::default(); pred.ncols()];
    for (p_row, t_row) in pred.rows().into_iter().zip(truth.rows()) {
        for (c, (&p, &t)) in p_row.iter().zip(t_row.iter()).enumerate() {
            let cc = &mut out[c];
            match (p == 1.0, t == 1.0) {
                (true, true) => cc.tp += 1,
                (true, false) => cc.fp += 1,
                (false, false) => cc.tn += 1,
                (false, true) => cc.fn_ += 1,
            }
        }
    }
    Ok(out)
}

pub fn mcc(c: &ConfusionCounts) -> f64 {
    // products in f64: u64 factors overflow past ~65k instances per label
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den.sqrt()
    }
}

pub fn macro_f1(counts: &[ConfusionCounts]) -> f64 {
    mean(counts.iter().map(ConfusionCounts::f1))
}

pub fn macro_mcc(counts: &[ConfusionCounts]) -> f64 {
    mean(counts.iter().map(mcc))
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

/// Binary predictions from logits: `σ(logit) > 0.5` for the multi-label
/// heads, argmax one-hot (lowest index on ties) for the user head.
pub fn threshold_predictions(logits: ArrayView2<f64>, kind: LabelKind) -> Array2<f64> {
    threshold_predictions_at(logits, kind, 0.5)
}

/// As [`threshold_predictions`] with probability cut-off `p` for the
/// multi-label heads.
pub fn threshold_predictions_at(logits: ArrayView2<f64>, kind: LabelKind, p: f64) -> Array2<f64> {
    let cut = (p / (1.0 - p)).ln();
    match kind {
        LabelKind::Activity | LabelKind::Context => logits.mapv(|z| if z > cut { 1.0 } else { 0.0 }),
        LabelKind::User => {
            let mut out = Array2::zeros(logits.raw_dim());
            for (r, row) in logits.rows().into_iter().enumerate() {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                if !row.is_empty() {
                    out[[r, best]] = 1.0;
                }
            }
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub head: LabelKind,
    pub per_label: Vec<LabelMetrics>,
    pub macro_mcc: f64,
    pub macro_f1: f64,
}

impl MetricsReport {
    pub fn from_counts(head: LabelKind, names: &[String], counts: &[ConfusionCounts]) -> Result<Self> {
        if names.len() != counts.len() {
            return Err(Error::invalid(format!("{} label names for {} count rows", names.len(), counts.len())));
        }
        let per_label = names
            .iter()
            .zip(counts)
            .map(|(n, c)| LabelMetrics {
                label: n.clone(),
                counts: *c,
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
                mcc: c.mcc(),
            })
            .collect();
        Ok(Self { head, per_label, macro_mcc: macro_mcc(counts), macro_f1: macro_f1(counts) })
    }

    /// Thresholds `logits` for `head` and scores them against `truth`.
    pub fn evaluate(head: LabelKind, names: &[String], logits: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<Self> {
        Self::evaluate_at(head, names, logits, truth, 0.5)
    }

    pub fn evaluate_at(
        head: LabelKind,
        names: &[String],
        logits: ArrayView2<f64>,
        truth: ArrayView2<f64>,
        threshold: f64,
    ) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid(format!("threshold must lie in (0, 1), got {threshold}")));
        }
        let pred = threshold_predictions_at(logits, head, threshold);
        let counts = confusion_counts(pred.view(), truth)?;
        Self::from_counts(head, names, &counts)
    }

    pub fn get(&self, label: &str) -> Option<&LabelMetrics> {
        self.per_label.iter().find(|m| m.label == label)
    }
}

/// Reports for all three heads on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub activity: MetricsReport,
    pub context: MetricsReport,
    pub user: MetricsReport,
}

impl EvalReport {
    pub fn heads(&self) -> [&MetricsReport; 3] {
        [&self.activity, &self.context, &self.user]
    }

    pub fn head(&self, kind: LabelKind) -> &MetricsReport {
        match kind {
            LabelKind::Activity => &self.activity,
            LabelKind::Context => &self.context,
            LabelKind::User => &self.user,
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for r in self.heads() {
            let _ = writeln!(out, "[{}] macro MCC {:.3}  macro F1 {:.3}", r.head, r.macro_mcc, r.macro_f1);
            let width = r.per_label.iter().map(|m| m.label.len()).max().unwrap_or(5).max(5);
            let _ = writeln!(
                out,
                "  {:width$}  {:>6} {:>6} {:>6} {:>6}  {:>6} {:>6} {:>6} {:>6}",
                "label", "tp", "fp", "tn", "fn", "prec", "rec", "f1", "mcc"
            );
            for m in &r.per_label {
                let c = m.counts;
                let _ = writeln!(
                    out,
                    "  {:width$}  {:>6} {:>6} {:>6} {:>6}  {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
                    m.label, c.tp, c.fp, c.tn, c.fn_, m.precision, m.recall, m.f1, m.mcc
                );
            }
        }
        out
    }

    /// Columns `head, label, tp, fp, tn, fn, precision, recall, f1, mcc`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        let wrap = |e: csv::Error| Error::parse(path, e);
        w.write_record(["head", "label", "tp", "fp", "tn", "fn", "precision", "recall", "f1", "mcc"]).map_err(wrap)?;
        for r in self.heads() {
            for m in &r.per_label {
                let c = m.counts;
                w.write_record([
                    r.head.to_string(),
                    m.label.clone(),
                    c.tp.to_string(),
                    c.fp.to_string(),
                    c.tn.to_string(),
                    c.fn_.to_string(),
                    m.precision.to_string(),
                    m.recall.to_string(),
                    m.f1.to_string(),
                    m.mcc.to_string(),
                ])
                .map_err(wrap)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Rebuilds a report from its CSV form; label order is file order.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
        let mut names: [Vec<String>; 3] = Default::default();
        let mut counts: [Vec<ConfusionCounts>; 3] = Default::default();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::parse(path, e))?;
            if rec.len() != 10 {
                return Err(Error::parse(path, format!("expected 10 columns, got {}", rec.len())));
            }
            let head: LabelKind = rec[0].parse().map_err(|e| Error::parse(path, e))?;
            let num = |i: usize| rec[i].parse::<u64>().map_err(|e| Error::parse(path, e));
            let slot = head as usize;
            names[slot].push(rec[1].to_string());
            counts[slot].push(ConfusionCounts::new(num(2)?, num(3)?, num(4)?, num(5)?));
        }
        let build = |k: LabelKind| MetricsReport::from_counts(k, &names[k as usize], &counts[k as usize]);
        Ok(Self { activity: build(LabelKind::Activity)?, context: build(LabelKind::Context)?, user: build(LabelKind::User)? })
    }
}
