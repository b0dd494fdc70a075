//! Training objective: class-weighted BCE for the multi-label heads, softmax
//! cross-entropy for the user head, and the instance-pair supervised
//! contrastive loss over fused representations.
//!
//! Every loss is a batch mean and comes with its analytic gradient.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{head_matrix, pairing_matrix, LabelKind, LabelSet, PairingScope};
use crate::model::HeadLogits;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Contrastive term.
    pub alpha: f64,
    /// Context head.
    pub gamma1: f64,
    /// User head.
    pub gamma2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.5, gamma1: 1.0, gamma2: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("alpha", self.alpha), ("gamma1", self.gamma1), ("gamma2", self.gamma2)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("loss weight {n} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-class BCE weights, mean 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeightTable {
    pub weights: Vec<f64>,
}

impl ClassWeightTable {
    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![1.0; n] }
    }
}

/// Inverse-frequency weights from an `N × C` training label matrix.
/// Classes without positives get the largest weight of the others.
pub fn class_weights(labels: ArrayView2<f64>) -> Result<ClassWeightTable> {
    let n = labels.nrows();
    if n == 0 {
        return Err(Error::invalid("class weights need at least one label row"));
    }
    let freq: Vec<f64> = labels.sum_axis(Axis(0)).iter().map(|s| s / n as f64).collect();
    let seen: Vec<f64> = freq.iter().copied().filter(|&f| f > 0.0).collect();
    if seen.is_empty() {
        return Ok(ClassWeightTable::uniform(freq.len()));
    }
    let mean_freq = freq.iter().sum::<f64>() / freq.len() as f64;
    let raw: Vec<Option<f64>> = freq.iter().map(|&f| (f > 0.0).then(|| mean_freq / f)).collect();
    let max = raw.iter().flatten().copied().fold(f64::MIN, f64::max);
    let filled: Vec<f64> = raw.into_iter().map(|w| w.unwrap_or(max)).collect();
    let mean_w = filled.iter().sum::<f64>() / filled.len() as f64;
    Ok(ClassWeightTable { weights: filled.into_iter().map(|w| w / mean_w).collect() })
}

fn check_binary(targets: ArrayView2<f64>) -> Result<()> {
    if targets.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::invalid("targets must be 0 or 1"));
    }
    Ok(())
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Class-weighted BCE on logits, averaged over samples and classes, and
/// its gradient w.r.t. the logits.
pub fn weighted_bce_with_grad(
    logits: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    w: &ClassWeightTable,
) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != targets.dim() || w.weights.len() != logits.ncols() {
        return Err(Error::invalid(format!(
            "bce shapes: logits {:?}, targets {:?}, {} weights",
            logits.dim(),
            targets.dim(),
            w.weights.len()
        )));
    }
    check_binary(targets)?;
    let count = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    Zip::indexed(&mut grad).and(&logits).and(&targets).for_each(|(_, c), g, &z, &y| {
        let wc = w.weights[c];
        // -[y log σ(z) + (1-y) log(1-σ(z))] = softplus(z) - y z
        loss += wc * (softplus(z) - y * z);
        *g = wc * (sigmoid(z) - y) / count;
    });
    Ok((loss / count, grad))
}

pub fn weighted_bce(logits: ArrayView2<f64>, targets: ArrayView2<f64>, w: &ClassWeightTable) -> Result<f64> {
    weighted_bce_with_grad(logits, targets, w).map(|(l, _)| l)
}

/// Softmax cross-entropy against one-hot targets, averaged over rows.
pub fn cross_entropy_with_grad(logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != targets.dim() {
        return Err(Error::invalid(format!("ce shapes: {:?} vs {:?}", logits.dim(), targets.dim())));
    }
    check_binary(targets)?;
    if targets.rows().into_iter().any(|r| r.sum() != 1.0) {
        return Err(Error::invalid("cross-entropy targets must be one-hot"));
    }
    let n = logits.nrows().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for ((z, y), mut g) in logits.rows().into_iter().zip(targets.rows()).zip(grad.rows_mut()) {
        let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        let target = y.iter().position(|&t| t == 1.0).expect("one-hot");
        loss += lse - z[target];
        for (k, gk) in g.iter_mut().enumerate() {
            *gk = ((z[k] - lse).exp() - y[k]) / n;
        }
    }
    Ok((loss / n, grad))
}

pub fn cross_entropy(logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
    cross_entropy_with_grad(logits, targets).map(|(l, _)| l)
}

/// Batch indices sharing at least one pairing label with the anchor, and
/// those sharing none. The anchor itself is in neither set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPartition {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

pub fn partition_pairs(anchor: usize, pairing: ArrayView2<f64>) -> Result<PairPartition> {
    let b = pairing.nrows();
    if b < 2 {
        return Err(Error::DegenerateBatch(b));
    }
    if anchor >= b {
        return Err(Error::invalid(format!("anchor {anchor} outside batch of {b}")));
    }
    let ya = pairing.row(anchor);
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for j in (0..b).filter(|&j| j != anchor) {
        if pairing.row(j).dot(&ya) > 0.0 {
            positives.push(j);
        } else {
            negatives.push(j);
        }
    }
    Ok(PairPartition { positives, negatives })
}

fn mean_rows(x: ArrayView2<f64>, rows: &[usize]) -> Array1<f64> {
    let mut m = Array1::zeros(x.ncols());
    for &r in rows {
        m += &x.row(r);
    }
    m / rows.len() as f64
}

/// Mean positive and negative vectors. `None` for an empty positive set;
/// an empty negative set gives the zero vector.
pub fn pair_means(x: ArrayView2<f64>, part: &PairPartition) -> (Option<Array1<f64>>, Array1<f64>) {
    let plus = (!part.positives.is_empty()).then(|| mean_rows(x, &part.positives));
    let minus = if part.negatives.is_empty() {
        Array1::zeros(x.ncols())
    } else {
        mean_rows(x, &part.negatives)
    };
    (plus, minus)
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        u.dot(&v) / (nu * nv)
    }
}

/// Two-logit cross-entropy with class 0 as target: `log(1 + e^(s⁻ - s⁺))`.
pub fn anchor_term(sim_pos: f64, sim_neg: f64) -> f64 {
    softplus(sim_neg - sim_pos)
}

struct ContrastiveParts {
    terms: Vec<f64>,
    grad: Option<Array2<f64>>,
}

fn contrastive_impl(x: ArrayView2<f64>, pairing: ArrayView2<f64>, want_grad: bool) -> Result<ContrastiveParts> {
    let b = x.nrows();
    if b < 2 {
        return Err(Error::DegenerateBatch(b));
    }
    if pairing.nrows() != b {
        return Err(Error::invalid(format!("{} representations vs {} pairing rows", b, pairing.nrows())));
    }
    let shared = pairing.dot(&pairing.t());
    let pos = Array2::from_shape_fn((b, b), |(a, j)| f64::from(u8::from(a != j && shared[[a, j]] > 0.0)));
    let neg = Array2::from_shape_fn((b, b), |(a, j)| f64::from(u8::from(a != j && shared[[a, j]] == 0.0)));
    let n_pos = pos.sum_axis(Axis(1));
    let n_neg = neg.sum_axis(Axis(1));
    // row-normalised masks turn the masked sums into means
    let pos_w = Array2::from_shape_fn((b, b), |(a, j)| if n_pos[a] > 0.0 { pos[[a, j]] / n_pos[a] } else { 0.0 });
    let neg_w = Array2::from_shape_fn((b, b), |(a, j)| if n_neg[a] > 0.0 { neg[[a, j]] / n_neg[a] } else { 0.0 });
    let m_pos = pos_w.dot(&x);
    let m_neg = neg_w.dot(&x);

    let row_norm = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect::<Vec<f64>>();
    let nx = row_norm(&x.to_owned());
    let np = row_norm(&m_pos);
    let nn = row_norm(&m_neg);
    let cos_rows = |m: &Array2<f64>, nm: &[f64]| -> Vec<f64> {
        (0..b)
            .map(|a| {
                if nx[a] == 0.0 || nm[a] == 0.0 {
                    0.0
                } else {
                    x.row(a).dot(&m.row(a)) / (nx[a] * nm[a])
                }
            })
            .collect()
    };
    let s_pos = cos_rows(&m_pos, &np);
    let s_neg = cos_rows(&m_neg, &nn);
    let active: Vec<bool> = n_pos.iter().map(|&c| c > 0.0).collect();
    let terms: Vec<f64> = (0..b)
        .map(|a| if active[a] { anchor_term(s_pos[a], s_neg[a]) } else { 0.0 })
        .collect();
    if !want_grad {
        return Ok(ContrastiveParts { terms, grad: None });
    }

    let d = x.ncols();
    let mut d_x = Array2::zeros((b, d));
    let mut d_mp = Array2::zeros((b, d));
    let mut d_mn = Array2::zeros((b, d));
    for a in 0..b {
        if !active[a] {
            continue;
        }
        let g = sigmoid(s_neg[a] - s_pos[a]) / b as f64;
        let xa = x.row(a);
        // d cos(u, v)/du = v/(|u||v|) - cos u/|u|^2, symmetric in v
        for (m, nm, s, sign, d_m) in [
            (&m_pos, np[a], s_pos[a], -1.0, &mut d_mp),
            (&m_neg, nn[a], s_neg[a], 1.0, &mut d_mn),
        ] {
            if nx[a] == 0.0 || nm == 0.0 {
                continue;
            }
            let v = m.row(a);
            let coef = sign * g;
            let inv = 1.0 / (nx[a] * nm);
            let mut dxa = d_x.row_mut(a);
            let mut dma = d_m.row_mut(a);
            for k in 0..d {
                dxa[k] += coef * (v[k] * inv - s * xa[k] / (nx[a] * nx[a]));
                dma[k] = coef * (xa[k] * inv - s * v[k] / (nm * nm));
            }
        }
    }
    d_x += &pos_w.t().dot(&d_mp);
    d_x += &neg_w.t().dot(&d_mn);
    Ok(ContrastiveParts { terms, grad: Some(d_x) })
}

/// Per-anchor contrastive terms (zero for anchors without positives).
pub fn contrastive_terms(x: ArrayView2<f64>, pairing: ArrayView2<f64>) -> Result<Vec<f64>> {
    contrastive_impl(x, pairing, false).map(|p| p.terms)
}

/// Mean over the batch of the per-anchor terms. The divisor is the full
/// batch size, including anchors without positives.
pub fn contrastive_loss(x: ArrayView2<f64>, pairing: ArrayView2<f64>) -> Result<f64> {
    let terms = contrastive_terms(x, pairing)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

pub fn contrastive_loss_with_grad(x: ArrayView2<f64>, pairing: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    let parts = contrastive_impl(x, pairing, true)?;
    let loss = parts.terms.iter().sum::<f64>() / parts.terms.len() as f64;
    Ok((loss, parts.grad.expect("requested")))
}

/// Label matrices for one batch.
#[derive(Debug, Clone)]
pub struct BatchTargets {
    pub activity: Array2<f64>,
    pub context: Array2<f64>,
    pub user: Array2<f64>,
    pub pairing: Array2<f64>,
}

impl BatchTargets {
    pub fn from_labels(labels: &[&LabelSet], scope: PairingScope) -> Self {
        Self {
            activity: head_matrix(labels.iter().copied(), LabelKind::Activity),
            context: head_matrix(labels.iter().copied(), LabelKind::Context),
            user: head_matrix(labels.iter().copied(), LabelKind::User),
            pairing: pairing_matrix(labels.iter().copied(), scope),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_a: f64,
    pub l_pp: f64,
    pub l_u: f64,
    pub l_d: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(l_a: f64, l_pp: f64, l_u: f64, l_d: f64, w: &LossWeights) -> Self {
        let total = l_a + w.gamma1 * l_pp + w.gamma2 * l_u + w.alpha * l_d;
        Self { l_a, l_pp, l_u, l_d, total }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_a, self.l_pp, self.l_u, self.l_d, self.total].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct LossGrads {
    pub d_logits: HeadLogits,
    pub d_fused: Array2<f64>,
}

fn total_impl(
    logits: &HeadLogits,
    fused: ArrayView2<f64>,
    targets: &BatchTargets,
    weights: &LossWeights,
    w_a: &ClassWeightTable,
    w_pp: &ClassWeightTable,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<LossGrads>)> {
    weights.validate()?;
    let b = fused.nrows();
    if [logits.activity.nrows(), logits.context.nrows(), logits.user.nrows(), targets.pairing.nrows()]
        .iter()
        .any(|&n| n != b)
    {
        return Err(Error::invalid("inconsistent batch sizes in total_loss"));
    }
    let (l_a, g_a) = weighted_bce_with_grad(logits.activity.view(), targets.activity.view(), w_a)?;
    let (l_pp, mut g_pp) = weighted_bce_with_grad(logits.context.view(), targets.context.view(), w_pp)?;
    let (l_u, mut g_u) = cross_entropy_with_grad(logits.user.view(), targets.user.view())?;
    // with alpha = 0 the contrastive value is diagnostic only, so a
    // singleton batch reports 0 instead of failing
    let (l_d, g_d) = if b < 2 && weights.alpha == 0.0 {
        (0.0, None)
    } else if want_grad && weights.alpha != 0.0 {
        let (l, g) = contrastive_loss_with_grad(fused, targets.pairing.view())?;
        (l, Some(g))
    } else {
        (contrastive_loss(fused, targets.pairing.view())?, None)
    };
    let breakdown = LossBreakdown::combine(l_a, l_pp, l_u, l_d, weights);
    if !want_grad {
        return Ok((breakdown, None));
    }
    g_pp *= weights.gamma1;
    g_u *= weights.gamma2;
    let d_fused = match g_d {
        Some(g) => g * weights.alpha,
        None => Array2::zeros(fused.raw_dim()),
    };
    Ok((breakdown, Some(LossGrads { d_logits: HeadLogits { activity: g_a, context: g_pp, user: g_u }, d_fused })))
}

/// All loss components and their weighted sum.
pub fn total_loss(
    logits: &HeadLogits,
    fused: ArrayView2<f64>,
    targets: &BatchTargets,
    weights: &LossWeights,
    w_a: &ClassWeightTable,
    w_pp: &ClassWeightTable,
) -> Result<LossBreakdown> {
    total_impl(logits, fused, targets, weights, w_a, w_pp, false).map(|(l, _)| l)
}

pub fn total_loss_with_grad(
    logits: &HeadLogits,
    fused: ArrayView2<f64>,
    targets: &BatchTargets,
    weights: &LossWeights,
    w_a: &ClassWeightTable,
    w_pp: &ClassWeightTable,
) -> Result<(LossBreakdown, LossGrads)> {
    total_impl(logits, fused, targets, weights, w_a, w_pp, true).map(|(l, g)| (l, g.expect("requested")))
}
