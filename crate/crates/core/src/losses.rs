//! Cross-entropy, supervised contrastive and margin-based contrastive losses
//! with analytic gradients, and their joint objective `ce + λ·cont`.
//!
//! Anchor sets are derived from the batch labels: for anchor `i`, the
//! positives are the other members of its class and the negatives are every
//! member of another class. Anchors whose positive (or negative) set is empty
//! skip the corresponding term.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{ForwardRecord, UpstreamGrad};
use crate::linalg::{dot, norm};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("batch of {0} is too small for this loss")]
    BatchTooSmall(usize),
    #[error("representation {index} is not unit-norm (norm {norm})")]
    NotNormalized { index: usize, norm: f64 },
    #[error("batch has no same-class pair")]
    NoPositivePairs,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    None,
    Scl,
    Margin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    /// Squared Euclidean distance.
    L2,
    /// Manhattan distance.
    L1,
    /// `1 − cos(a, b)`.
    Cosine,
}

/// How the adaptive margin enters the margin-loss gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginGrad {
    /// The margin is a constant.
    Stop,
    /// Differentiate through the max: the maximizing pair receives the
    /// margin's gradient.
    Through,
}

macro_rules! str_enum {
    ($ty:ty { $($variant:path => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(format!("unknown {} {other:?}", stringify!($ty))),
                }
            }
        }
    };
}

str_enum!(LossMode { LossMode::None => "none", LossMode::Scl => "scl", LossMode::Margin => "margin" });
str_enum!(DistanceMetric { DistanceMetric::L2 => "l2", DistanceMetric::L1 => "l1", DistanceMetric::Cosine => "cosine" });
str_enum!(MarginGrad { MarginGrad::Stop => "stop", MarginGrad::Through => "through" });

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    pub tau: f64,
    pub lambda: f64,
    pub metric: DistanceMetric,
    pub margin_grad: MarginGrad,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::Margin,
            tau: 0.3,
            lambda: 2.0,
            metric: DistanceMetric::L2,
            margin_grad: MarginGrad::Stop,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(LossError::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

impl DistanceMetric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceMetric::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            DistanceMetric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            DistanceMetric::Cosine => {
                let (na, nb) = (norm(a), norm(b));
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot(a, b) / (na * nb)
                }
            }
        }
    }

    /// Adds `scale · ∂dist/∂a` to `ga` and `scale · ∂dist/∂b` to `gb`.
    fn accumulate_grad(self, a: &[f64], b: &[f64], scale: f64, ga: &mut [f64], gb: &mut [f64]) {
        match self {
            DistanceMetric::L2 => {
                for k in 0..a.len() {
                    let g = 2.0 * (a[k] - b[k]) * scale;
                    ga[k] += g;
                    gb[k] -= g;
                }
            }
            DistanceMetric::L1 => {
                for k in 0..a.len() {
                    let diff = a[k] - b[k];
                    let s = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    ga[k] += s * scale;
                    gb[k] -= s * scale;
                }
            }
            DistanceMetric::Cosine => {
                let (na, nb) = (norm(a), norm(b));
                if na == 0.0 || nb == 0.0 {
                    return;
                }
                let cos = dot(a, b) / (na * nb);
                // ∂(1 − cos)/∂a = −(b/(‖a‖‖b‖) − cos·a/‖a‖²)
                for k in 0..a.len() {
                    ga[k] -= scale * (b[k] / (na * nb) - cos * a[k] / (na * na));
                    gb[k] -= scale * (a[k] / (na * nb) - cos * b[k] / (nb * nb));
                }
            }
        }
    }
}

fn log_softmax_at(logits: &[f64], idx: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let probs = logits.iter().map(|l| (l - lse).exp()).collect();
    (logits[idx] - lse, probs)
}

/// Mean negative log-likelihood and its gradient `(softmax − onehot)/M`.
pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    check_batch(logits.len(), labels.len(), 1)?;
    let m = logits.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (l, &y) in logits.iter().zip(labels) {
        if y >= l.len() {
            return Err(LossError::LabelOutOfRange {
                label: y,
                num_classes: l.len(),
            });
        }
        let (lp, mut probs) = log_softmax_at(l, y);
        loss -= lp;
        probs[y] -= 1.0;
        probs.iter_mut().for_each(|g| *g /= m);
        grads.push(probs);
    }
    Ok((loss / m, grads))
}

fn check_batch(n: usize, n_labels: usize, min: usize) -> Result<()> {
    if n != n_labels {
        return Err(LossError::ShapeMismatch(format!(
            "{n} representations but {n_labels} labels"
        )));
    }
    if n < min {
        return Err(LossError::BatchTooSmall(n));
    }
    Ok(())
}

/// Supervised contrastive loss over unit-norm `z` with temperature `tau`.
pub fn scl_loss(z: &[Vec<f64>], labels: &[usize], tau: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    check_batch(z.len(), labels.len(), 2)?;
    if !(tau > 0.0) {
        return Err(LossError::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    for (index, v) in z.iter().enumerate() {
        let n = norm(v);
        if (n - 1.0).abs() > 1e-9 {
            return Err(LossError::NotNormalized { index, norm: n });
        }
    }
    let m = z.len();
    let dim = z[0].len();
    let mf = m as f64;
    let mut loss = 0.0;
    let mut grads = vec![vec![0.0; dim]; m];
    let mut sims = vec![0.0; m];
    let mut coef = vec![0.0; m];
    for i in 0..m {
        let n_pos = labels.iter().enumerate().filter(|&(a, &y)| a != i && y == labels[i]).count();
        if n_pos == 0 {
            continue;
        }
        let mut max = f64::NEG_INFINITY;
        for a in 0..m {
            if a != i {
                sims[a] = dot(&z[i], &z[a]) / tau;
                max = max.max(sims[a]);
            }
        }
        let sum: f64 = (0..m).filter(|&a| a != i).map(|a| (sims[a] - max).exp()).sum();
        let lse = max + sum.ln();
        let pos_sum: f64 = (0..m)
            .filter(|&a| a != i && labels[a] == labels[i])
            .map(|a| sims[a])
            .sum();
        loss += (lse - pos_sum / n_pos as f64) / mf;

        // ∂ℓ_i/∂s_ia = (q_ia − 1[a ∈ P(i)]/|P(i)|)/M
        for a in 0..m {
            if a == i {
                coef[a] = 0.0;
                continue;
            }
            let q = (sims[a] - lse).exp();
            let pos = if labels[a] == labels[i] { 1.0 / n_pos as f64 } else { 0.0 };
            coef[a] = (q - pos) / mf;
        }
        for a in 0..m {
            let c = coef[a];
            if c == 0.0 {
                continue;
            }
            for k in 0..dim {
                grads[i][k] += c * z[a][k] / tau;
                grads[a][k] += c * z[i][k] / tau;
            }
        }
    }
    Ok((loss, grads))
}

/// Largest same-class distance in the batch, with its pair `(i, p)`, `i < p`.
fn margin_and_pair(h: &[Vec<f64>], labels: &[usize], metric: DistanceMetric) -> Option<(f64, usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..h.len() {
        for p in (i + 1)..h.len() {
            if labels[i] != labels[p] {
                continue;
            }
            let d = metric.distance(&h[i], &h[p]);
            if best.is_none_or(|(b, _, _)| d > b) {
                best = Some((d, i, p));
            }
        }
    }
    best
}

/// The adaptive margin: the maximum same-class pairwise distance.
pub fn adaptive_margin(h: &[Vec<f64>], labels: &[usize], metric: DistanceMetric) -> Result<f64> {
    check_batch(h.len(), labels.len(), 0)?;
    margin_and_pair(h, labels, metric)
        .map(|(d, _, _)| d)
        .ok_or(LossError::NoPositivePairs)
}

/// Margin-based contrastive loss `(L_pos + L_neg)/(d·M)` and its gradient
/// with respect to `h`. A batch without any same-class pair has a zero
/// margin, so both terms vanish.
pub fn margin_loss(
    h: &[Vec<f64>],
    labels: &[usize],
    metric: DistanceMetric,
    margin_grad: MarginGrad,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_batch(h.len(), labels.len(), 2)?;
    let m = h.len();
    let dim = h[0].len();
    if let Some(bad) = h.iter().find(|v| v.len() != dim) {
        return Err(LossError::ShapeMismatch(format!(
            "representation of length {} in a batch of dimension {dim}",
            bad.len()
        )));
    }
    let (xi, arg) = match margin_and_pair(h, labels, metric) {
        Some((xi, i, p)) => (xi, Some((i, p))),
        None => (0.0, None),
    };
    let scale = 1.0 / (dim as f64 * m as f64);
    let mut pos = 0.0;
    let mut neg = 0.0;
    let mut dloss_dxi = 0.0;
    let mut grads = vec![vec![0.0; dim]; m];
    for i in 0..m {
        let n_pos = labels.iter().enumerate().filter(|&(a, &y)| a != i && y == labels[i]).count();
        let n_neg = labels.iter().filter(|&&y| y != labels[i]).count();
        for a in 0..m {
            if a == i {
                continue;
            }
            let (gi, ga) = pair_mut(&mut grads, i, a);
            if labels[a] == labels[i] {
                let w = 1.0 / n_pos as f64;
                pos += w * metric.distance(&h[i], &h[a]);
                metric.accumulate_grad(&h[i], &h[a], w * scale, gi, ga);
            } else {
                let w = 1.0 / n_neg as f64;
                let gap = xi - metric.distance(&h[i], &h[a]);
                if gap > 0.0 {
                    neg += w * gap;
                    metric.accumulate_grad(&h[i], &h[a], -w * scale, gi, ga);
                    dloss_dxi += w * scale;
                }
            }
        }
    }
    if margin_grad == MarginGrad::Through && dloss_dxi != 0.0 {
        if let Some((i, p)) = arg {
            let (gi, gp) = pair_mut(&mut grads, i, p);
            metric.accumulate_grad(&h[i], &h[p], dloss_dxi, gi, gp);
        }
    }
    Ok(((pos + neg) * scale, grads))
}

fn pair_mut<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert_ne!(i, j);
    if i < j {
        let (a, b) = v.split_at_mut(j);
        (&mut a[i], &mut b[0])
    } else {
        let (a, b) = v.split_at_mut(i);
        (&mut b[0], &mut a[j])
    }
}

/// Contrastive term with its gradient on whichever output it reads.
#[derive(Debug, Clone, PartialEq)]
pub enum ContrastiveGrad {
    None,
    Z(Vec<Vec<f64>>),
    H(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveReport {
    pub loss: f64,
    pub grad: ContrastiveGrad,
}

impl ContrastiveReport {
    pub fn zero() -> Self {
        Self {
            loss: 0.0,
            grad: ContrastiveGrad::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub ce: f64,
    pub cont: f64,
    pub total: f64,
    pub grad_logits: Vec<Vec<f64>>,
    /// Empty inner vectors mean no gradient on that output.
    pub grad_z: Vec<Vec<f64>>,
    pub grad_h: Vec<Vec<f64>>,
}

impl LossReport {
    /// Per-example upstream gradients for [`crate::encoder::EncoderParams::backward`].
    pub fn upstream(&self) -> Vec<UpstreamGrad> {
        (0..self.grad_logits.len())
            .map(|i| UpstreamGrad {
                logits: self.grad_logits[i].clone(),
                h: self.grad_h[i].clone(),
                z: self.grad_z[i].clone(),
            })
            .collect()
    }
}

/// `total = ce + λ·cont`, with the contrastive gradient scaled by `λ`.
pub fn joint_loss(ce: (f64, Vec<Vec<f64>>), cont: ContrastiveReport, lambda: f64) -> Result<LossReport> {
    let (ce_loss, grad_logits) = ce;
    let m = grad_logits.len();
    let empty = || vec![Vec::new(); m];
    let scaled = |g: Vec<Vec<f64>>| -> Result<Vec<Vec<f64>>> {
        if g.len() != m {
            return Err(LossError::ShapeMismatch(format!(
                "contrastive gradient covers {} examples, cross-entropy {m}",
                g.len()
            )));
        }
        Ok(g.into_iter()
            .map(|v| v.into_iter().map(|x| lambda * x).collect())
            .collect())
    };
    let (grad_z, grad_h) = match cont.grad {
        ContrastiveGrad::None => (empty(), empty()),
        ContrastiveGrad::Z(g) => (scaled(g)?, empty()),
        ContrastiveGrad::H(g) => (empty(), scaled(g)?),
    };
    Ok(LossReport {
        ce: ce_loss,
        cont: cont.loss,
        total: ce_loss + lambda * cont.loss,
        grad_logits,
        grad_z,
        grad_h,
    })
}

/// The contrastive term selected by `cfg.mode` on representations `h` / `z`.
pub fn contrastive(
    h: &[Vec<f64>],
    z: &[Vec<f64>],
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<ContrastiveReport> {
    Ok(match cfg.mode {
        LossMode::None => ContrastiveReport::zero(),
        LossMode::Scl => {
            let (loss, g) = scl_loss(z, labels, cfg.tau)?;
            ContrastiveReport {
                loss,
                grad: ContrastiveGrad::Z(g),
            }
        }
        LossMode::Margin => {
            let (loss, g) = margin_loss(h, labels, cfg.metric, cfg.margin_grad)?;
            ContrastiveReport {
                loss,
                grad: ContrastiveGrad::H(g),
            }
        }
    })
}

/// Full objective for one batch of forward records. Single-example batches
/// carry no contrastive term.
pub fn batch_loss(records: &[ForwardRecord], labels: &[usize], cfg: &LossConfig) -> Result<LossReport> {
    let logits: Vec<Vec<f64>> = records.iter().map(|r| r.logits.clone()).collect();
    let ce = cross_entropy(&logits, labels)?;
    let cont = if records.len() < 2 {
        ContrastiveReport::zero()
    } else {
        let h: Vec<Vec<f64>> = records.iter().map(|r| r.h.clone()).collect();
        let z: Vec<Vec<f64>> = records.iter().map(|r| r.z.clone()).collect();
        contrastive(&h, &z, labels, cfg)?
    };
    joint_loss(ce, cont, cfg.lambda)
}
