//! OOD scoring functions on penultimate representations, their fitting, and
//! the `ood-det/1` detector file.
//!
//! Every score follows one convention: higher means more likely OOD.
//!
//! | kind   | score                                   |
//! |--------|-----------------------------------------|
//! | msp    | `1 − max_j p_j`                         |
//! | energy | `−log Σ_j exp(w_jᵀh + b_j)`             |
//! | maha   | `min_j (h − μ_j)ᵀ Σ⁺ (h − μ_j)`         |
//! | cosine | `−max_i cos(h, h_i)` over the val bank  |
//!
//! The Mahalanobis score is the nonnegative class-conditional distance
//! itself, so large distances rank as OOD.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::encoder::{softmax, EncoderParams};
use crate::linalg::{self, dot, l2_normalize, norm, LinalgError, Matrix};

pub const DETECTOR_FORMAT: &str = "ood-det/1";

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("probabilities do not form a distribution (sum {0})")]
    NotADistribution(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class {0} has no validation examples")]
    MissingClass(usize),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("cannot score a zero vector")]
    ZeroVector,
    #[error("cannot fit a detector on an empty set")]
    Empty,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("detector format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, ScorerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Msp,
    Energy,
    Maha,
    Cosine,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 4] = [
        ScorerKind::Msp,
        ScorerKind::Energy,
        ScorerKind::Maha,
        ScorerKind::Cosine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::Msp => "msp",
            ScorerKind::Energy => "energy",
            ScorerKind::Maha => "maha",
            ScorerKind::Cosine => "cosine",
        }
    }

    /// Parses a comma-separated list such as `msp,maha`.
    pub fn parse_list(s: &str) -> std::result::Result<Vec<ScorerKind>, String> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScorerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "msp" => Ok(ScorerKind::Msp),
            "energy" => Ok(ScorerKind::Energy),
            "maha" | "mahalanobis" => Ok(ScorerKind::Maha),
            "cosine" => Ok(ScorerKind::Cosine),
            other => Err(format!("unknown scorer {other:?}")),
        }
    }
}

/// Softmax layer weights (`C × d`, row `j` is `w_j`) and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(ScorerError::DimensionMismatch {
                expected: weight.rows(),
                got: bias.len(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn from_params(params: &EncoderParams) -> Self {
        Self {
            weight: params.head_weight.clone(),
            bias: params.head_bias.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn logits(&self, h: &[f64], with_bias: bool) -> Result<Vec<f64>> {
        if h.len() != self.dim() {
            return Err(ScorerError::DimensionMismatch {
                expected: self.dim(),
                got: h.len(),
            });
        }
        let mut out = self.weight.matvec(h)?;
        if with_bias {
            linalg::axpy(1.0, &self.bias, &mut out);
        }
        Ok(out)
    }
}

/// `1 − max_j p_j`.
pub fn score_msp(probs: &[f64]) -> Result<f64> {
    let sum: f64 = probs.iter().sum();
    if probs.is_empty() || (sum - 1.0).abs() > 1e-8 || probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(ScorerError::NotADistribution(sum));
    }
    Ok(1.0 - probs.iter().copied().fold(0.0, f64::max))
}

/// Negative log-sum-exp of the head logits, with max subtraction.
pub fn score_energy(head: &ClassifierHead, h: &[f64], ignore_bias: bool) -> Result<f64> {
    let logits = head.logits(h, !ignore_bias)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    Ok(-(max + sum.ln()))
}

/// Class means and the pseudo-inverse of the shared covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MahaDetector {
    pub class_means: Vec<Vec<f64>>,
    pub cov_pinv: Matrix,
}

impl MahaDetector {
    pub fn dim(&self) -> usize {
        self.cov_pinv.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }
}

/// Fits class-conditional Gaussians with a shared covariance.
pub fn fit_maha<V: AsRef<[f64]>>(val_h: &[V], labels: &[usize], num_classes: usize) -> Result<MahaDetector> {
    if val_h.is_empty() {
        return Err(ScorerError::Empty);
    }
    if labels.len() != val_h.len() {
        return Err(ScorerError::DimensionMismatch {
            expected: val_h.len(),
            got: labels.len(),
        });
    }
    let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); num_classes];
    for (h, &y) in val_h.iter().zip(labels) {
        members
            .get_mut(y)
            .ok_or(ScorerError::LabelOutOfRange {
                label: y,
                num_classes,
            })?
            .push(h.as_ref());
    }
    let class_means = members
        .iter()
        .enumerate()
        .map(|(j, rows)| {
            if rows.is_empty() {
                Err(ScorerError::MissingClass(j))
            } else {
                Ok(linalg::mean_vector(rows)?)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let cov = linalg::shared_covariance(val_h, labels, &class_means)?;
    let cov_pinv = linalg::pseudo_inverse(&cov, linalg::DEFAULT_PINV_RTOL)?;
    Ok(MahaDetector {
        class_means,
        cov_pinv,
    })
}

/// Minimum squared Mahalanobis distance to a class mean.
pub fn score_maha(det: &MahaDetector, h: &[f64]) -> Result<f64> {
    if h.len() != det.dim() {
        return Err(ScorerError::DimensionMismatch {
            expected: det.dim(),
            got: h.len(),
        });
    }
    let mut best = f64::INFINITY;
    for mu in &det.class_means {
        let diff = linalg::sub(h, mu);
        best = best.min(det.cov_pinv.quad_form(&diff)?);
    }
    Ok(best.max(0.0))
}

/// Bank of L2-normalized validation representations.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineDetector {
    bank: Vec<Vec<f64>>,
}

impl CosineDetector {
    pub fn fit<V: AsRef<[f64]>>(val_h: &[V]) -> Result<Self> {
        let first = val_h.first().ok_or(ScorerError::Empty)?.as_ref().len();
        let bank = val_h
            .iter()
            .map(|h| {
                let h = h.as_ref();
                if h.len() != first {
                    return Err(ScorerError::DimensionMismatch {
                        expected: first,
                        got: h.len(),
                    });
                }
                l2_normalize(h).map_err(|_| ScorerError::ZeroVector)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bank })
    }

    pub fn bank(&self) -> &[Vec<f64>] {
        &self.bank
    }

    pub fn dim(&self) -> usize {
        self.bank[0].len()
    }
}

/// `−max_i cos(h, bank_i)`.
pub fn score_cosine(det: &CosineDetector, h: &[f64]) -> Result<f64> {
    if h.len() != det.dim() {
        return Err(ScorerError::DimensionMismatch {
            expected: det.dim(),
            got: h.len(),
        });
    }
    let q = l2_normalize(h).map_err(|_| ScorerError::ZeroVector)?;
    let best = det
        .bank
        .iter()
        .map(|b| dot(&q, b))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(-best.clamp(-1.0, 1.0))
}

/// A fitted detector of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorArtifact {
    Msp(ClassifierHead),
    /// `ignore_bias` drops the head bias from the log-sum-exp.
    Energy { head: ClassifierHead, ignore_bias: bool },
    Maha(MahaDetector),
    Cosine(CosineDetector),
}

/// Options for [`DetectorArtifact::fit`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitOptions {
    pub energy_ignore_bias: bool,
}

impl DetectorArtifact {
    /// Fits `kind` from the trained head and validation representations.
    pub fn fit<V: AsRef<[f64]>>(
        kind: ScorerKind,
        params: &EncoderParams,
        val_h: &[V],
        labels: &[usize],
        opts: FitOptions,
    ) -> Result<Self> {
        Ok(match kind {
            ScorerKind::Msp => DetectorArtifact::Msp(ClassifierHead::from_params(params)),
            ScorerKind::Energy => DetectorArtifact::Energy {
                head: ClassifierHead::from_params(params),
                ignore_bias: opts.energy_ignore_bias,
            },
            ScorerKind::Maha => DetectorArtifact::Maha(fit_maha(val_h, labels, params.num_classes())?),
            ScorerKind::Cosine => DetectorArtifact::Cosine(CosineDetector::fit(val_h)?),
        })
    }

    pub fn kind(&self) -> ScorerKind {
        match self {
            DetectorArtifact::Msp(_) => ScorerKind::Msp,
            DetectorArtifact::Energy { .. } => ScorerKind::Energy,
            DetectorArtifact::Maha(_) => ScorerKind::Maha,
            DetectorArtifact::Cosine(_) => ScorerKind::Cosine,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DetectorArtifact::Msp(head) | DetectorArtifact::Energy { head, .. } => head.dim(),
            DetectorArtifact::Maha(m) => m.dim(),
            DetectorArtifact::Cosine(c) => c.dim(),
        }
    }

    /// Class count, where the detector knows it.
    pub fn num_classes(&self) -> Option<usize> {
        match self {
            DetectorArtifact::Msp(head) | DetectorArtifact::Energy { head, .. } => Some(head.num_classes()),
            DetectorArtifact::Maha(m) => Some(m.num_classes()),
            DetectorArtifact::Cosine(_) => None,
        }
    }

    /// OOD score of a representation `h` (higher = more OOD).
    pub fn score(&self, h: &[f64]) -> Result<f64> {
        match self {
            DetectorArtifact::Msp(head) => score_msp(&softmax(&head.logits(h, true)?)),
            DetectorArtifact::Energy { head, ignore_bias } => score_energy(head, h, *ignore_bias),
            DetectorArtifact::Maha(m) => score_maha(m, h),
            DetectorArtifact::Cosine(c) => score_cosine(c, h),
        }
    }

    pub fn to_json(&self) -> Value {
        let payload = match self {
            DetectorArtifact::Msp(head) => json!({
                "softmax_weights": head.weight.to_rows(),
                "softmax_bias": head.bias,
            }),
            DetectorArtifact::Energy { head, ignore_bias } => json!({
                "softmax_weights": head.weight.to_rows(),
                "softmax_bias": head.bias,
                "ignore_bias": ignore_bias,
            }),
            DetectorArtifact::Maha(m) => json!({
                "means": m.class_means,
                "cov_pinv": m.cov_pinv.as_slice(),
            }),
            DetectorArtifact::Cosine(c) => json!({ "bank": c.bank }),
        };
        json!({
            "format": DETECTOR_FORMAT,
            "kind": self.kind().as_str(),
            "dim": self.dim(),
            "num_classes": self.num_classes(),
            "payload": payload,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let fmt_err = |m: String| ScorerError::Format(m);
        let format = v
            .get("format")
            .and_then(Value::as_str)
            .ok_or_else(|| fmt_err("missing format tag".into()))?;
        if format != DETECTOR_FORMAT {
            return Err(fmt_err(format!(
                "unsupported version {format:?} (expected {DETECTOR_FORMAT:?})"
            )));
        }
        let kind: ScorerKind = v
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| fmt_err("missing kind".into()))?
            .parse()
            .map_err(fmt_err)?;
        let dim = v
            .get("dim")
            .and_then(Value::as_u64)
            .ok_or_else(|| fmt_err("missing dim".into()))? as usize;
        let payload = v.get("payload").ok_or_else(|| fmt_err("missing payload".into()))?;
        let field = |name: &str| {
            payload
                .get(name)
                .ok_or_else(|| fmt_err(format!("{kind} payload lacks {name:?}")))
        };
        let rows = |name: &str| -> Result<Vec<Vec<f64>>> {
            serde_json::from_value(field(name)?.clone())
                .map_err(|e| fmt_err(format!("{name}: {e}")))
        };
        let flat = |name: &str| -> Result<Vec<f64>> {
            serde_json::from_value(field(name)?.clone())
                .map_err(|e| fmt_err(format!("{name}: {e}")))
        };
        let head = || -> Result<ClassifierHead> {
            let w = Matrix::from_rows(&rows("softmax_weights")?)?;
            ClassifierHead::new(w, flat("softmax_bias")?)
        };
        let det = match kind {
            ScorerKind::Msp => DetectorArtifact::Msp(head()?),
            ScorerKind::Energy => DetectorArtifact::Energy {
                head: head()?,
                ignore_bias: field("ignore_bias")?
                    .as_bool()
                    .ok_or_else(|| fmt_err("ignore_bias must be a bool".into()))?,
            },
            ScorerKind::Maha => {
                let class_means = rows("means")?;
                let cov_pinv = Matrix::new(dim, dim, flat("cov_pinv")?)?;
                if class_means.is_empty() || class_means.iter().any(|m| m.len() != dim) {
                    return Err(fmt_err("class means do not match dim".into()));
                }
                if cov_pinv.max_asymmetry() > 1e-8 * cov_pinv.max_abs().max(1.0) {
                    return Err(fmt_err("cov_pinv is not symmetric".into()));
                }
                DetectorArtifact::Maha(MahaDetector {
                    class_means,
                    cov_pinv,
                })
            }
            ScorerKind::Cosine => {
                let bank = rows("bank")?;
                if bank.is_empty() || bank.iter().any(|b| b.len() != dim) {
                    return Err(fmt_err("bank rows do not match dim".into()));
                }
                if bank.iter().any(|b| (norm(b) - 1.0).abs() > 1e-9) {
                    return Err(fmt_err("bank rows are not unit vectors".into()));
                }
                DetectorArtifact::Cosine(CosineDetector { bank })
            }
        };
        if det.dim() != dim {
            return Err(fmt_err(format!(
                "payload has dimension {}, header says {dim}",
                det.dim()
            )));
        }
        Ok(det)
    }
}

pub fn save_detector(det: &DetectorArtifact, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&det.to_json()).expect("json value serializes");
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_detector(path: impl AsRef<Path>) -> Result<DetectorArtifact> {
    let text = fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text).map_err(|e| ScorerError::Format(e.to_string()))?;
    DetectorArtifact::from_json(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn rand_rows(rng: &mut SplitMix64, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.normal()).collect()).collect()
    }

    #[test]
    fn msp_cases() {
        assert_eq!(score_msp(&[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(score_msp(&[0.25; 4]).unwrap(), 0.75);
        assert!(matches!(score_msp(&[0.5, 0.6]), Err(ScorerError::NotADistribution(_))));
        let mut rng = SplitMix64::new(3);
        for _ in 0..20 {
            let raw: Vec<f64> = (0..5).map(|_| rng.next_f64()).collect();
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let mut max = p[0];
            for &x in &p {
                if x > max {
                    max = x;
                }
            }
            assert_eq!(score_msp(&p).unwrap(), 1.0 - max);
        }
    }

    #[test]
    fn msp_shift_invariance() {
        let logits = [0.3, -1.2, 2.5];
        let shifted: Vec<f64> = logits.iter().map(|l| l + 17.0).collect();
        let a = score_msp(&softmax(&logits)).unwrap();
        let b = score_msp(&softmax(&shifted)).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn energy_cases() {
        let head = ClassifierHead::new(Matrix::zeros(1, 3), vec![0.0]).unwrap();
        assert_eq!(score_energy(&head, &[1.0, 2.0, 3.0], false).unwrap(), 0.0);
        let mut rng = SplitMix64::new(1);
        let w = Matrix::from_rows(&rand_rows(&mut rng, 4, 3)).unwrap();
        let head = ClassifierHead::new(w, vec![0.0; 4]).unwrap();
        assert!((score_energy(&head, &[0.0; 3], false).unwrap() + 4.0_f64.ln()).abs() < 1e-15);
        assert!(score_energy(&head, &[0.0; 2], false).is_err());
    }

    #[test]
    fn energy_matches_naive_sum() {
        let mut rng = SplitMix64::new(2);
        for _ in 0..20 {
            let w = Matrix::from_rows(&rand_rows(&mut rng, 3, 4)).unwrap();
            let b: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let h: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let head = ClassifierHead::new(w.clone(), b.clone()).unwrap();
            let naive: f64 = (0..3).map(|j| (dot(w.row(j), &h) + b[j]).exp()).sum::<f64>();
            assert!((score_energy(&head, &h, false).unwrap() + naive.ln()).abs() < 1e-10);
            let naive_nb: f64 = (0..3).map(|j| dot(w.row(j), &h).exp()).sum::<f64>();
            assert!((score_energy(&head, &h, true).unwrap() + naive_nb.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_decreases_with_any_logit() {
        let w = Matrix::identity(3);
        let head = ClassifierHead::new(w, vec![0.1, -0.2, 0.3]).unwrap();
        for j in 0..3 {
            let mut last = f64::INFINITY;
            for t in 0..10 {
                let mut h = vec![0.2, -0.4, 0.7];
                h[j] += t as f64 * 0.5;
                let e = score_energy(&head, &h, false).unwrap();
                assert!(e < last);
                last = e;
            }
        }
    }

    #[test]
    fn maha_rank_zero_case() {
        let val = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        let det = fit_maha(&val, &[0, 1], 2).unwrap();
        assert_eq!(det.class_means, val);
        assert_eq!(det.cov_pinv, Matrix::zeros(2, 2));
        assert_eq!(score_maha(&det, &[10.0, -4.0]).unwrap(), 0.0);
    }

    #[test]
    fn maha_hand_cases() {
        let det = MahaDetector {
            class_means: vec![vec![0.0, 0.0]],
            cov_pinv: Matrix::identity(2),
        };
        assert_eq!(score_maha(&det, &[3.0, 4.0]).unwrap(), 25.0);
        assert_eq!(score_maha(&det, &[0.0, 0.0]).unwrap(), 0.0);
        assert!(score_maha(&det, &[1.0]).is_err());
    }

    #[test]
    fn maha_missing_class() {
        let val = vec![vec![1.0], vec![2.0]];
        assert!(matches!(fit_maha(&val, &[0, 0], 2), Err(ScorerError::MissingClass(1))));
        assert!(matches!(fit_maha(&val, &[0, 5], 2), Err(ScorerError::LabelOutOfRange { .. })));
    }

    #[test]
    fn maha_means_are_statistically_close() {
        let mut rng = SplitMix64::new(12);
        let sigma = 0.5;
        let n = 200;
        let truth = [vec![2.0, 0.0, -1.0], vec![-2.0, 1.0, 0.0]];
        let mut val = Vec::new();
        let mut labels = Vec::new();
        for (j, mu) in truth.iter().enumerate() {
            for _ in 0..n {
                val.push(mu.iter().map(|m| m + sigma * rng.normal()).collect::<Vec<f64>>());
                labels.push(j);
            }
        }
        let det = fit_maha(&val, &labels, 2).unwrap();
        let bound = 3.0 * sigma / (n as f64).sqrt();
        for (est, mu) in det.class_means.iter().zip(&truth) {
            for (a, b) in est.iter().zip(mu) {
                assert!((a - b).abs() < bound);
            }
        }
    }

    #[test]
    fn maha_matches_per_class_quadratic_forms() {
        let mut rng = SplitMix64::new(5);
        let val = rand_rows(&mut rng, 40, 3);
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let det = fit_maha(&val, &labels, 3).unwrap();
        for _ in 0..20 {
            let h: Vec<f64> = (0..3).map(|_| 2.0 * rng.normal()).collect();
            let mut best = f64::INFINITY;
            for mu in &det.class_means {
                let diff = Matrix::new(3, 1, linalg::sub(&h, mu)).unwrap();
                let q = diff
                    .transpose()
                    .matmul(&det.cov_pinv)
                    .unwrap()
                    .matmul(&diff)
                    .unwrap()
                    .get(0, 0);
                best = best.min(q);
            }
            assert!((score_maha(&det, &h).unwrap() - best).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_cases() {
        let det = CosineDetector::fit(&[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]]).unwrap();
        assert!((score_cosine(&det, &[0.0, 5.0, 0.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(score_cosine(&det, &[0.0, 0.0, 3.0]).unwrap(), 0.0);
        assert!(matches!(score_cosine(&det, &[0.0; 3]), Err(ScorerError::ZeroVector)));
        let mut rng = SplitMix64::new(8);
        let bank = rand_rows(&mut rng, 15, 4);
        let det = CosineDetector::fit(&bank).unwrap();
        for _ in 0..20 {
            let h: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let mut best = -1.0_f64;
            for b in &bank {
                best = best.max(dot(&h, b) / (linalg::norm(&h) * linalg::norm(b)));
            }
            assert!((score_cosine(&det, &h).unwrap() + best).abs() < 1e-12);
        }
    }

    #[test]
    fn detector_round_trip_and_validation() {
        let mut rng = SplitMix64::new(4);
        let val = rand_rows(&mut rng, 30, 4);
        let labels: Vec<usize> = (0..30).map(|i| i % 2).collect();
        let det = DetectorArtifact::Maha(fit_maha(&val, &labels, 2).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.json");
        save_detector(&det, &path).unwrap();
        let back = load_detector(&path).unwrap();
        for _ in 0..100 {
            let h: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let (a, b) = (det.score(&h).unwrap(), back.score(&h).unwrap());
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        let mut v = det.to_json();
        v["kind"] = json!("bogus");
        assert!(matches!(DetectorArtifact::from_json(&v), Err(ScorerError::Format(_))));
        let mut v = det.to_json();
        v["kind"] = json!("cosine");
        assert!(matches!(DetectorArtifact::from_json(&v), Err(ScorerError::Format(_))));
        let mut v = det.to_json();
        v["format"] = json!("ood-det/2");
        match DetectorArtifact::from_json(&v) {
            Err(ScorerError::Format(msg)) => assert!(msg.contains("unsupported version")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn every_kind_round_trips() {
        let params = crate::encoder::init_params(3, &[], 4, 2, 0).unwrap();
        let mut rng = SplitMix64::new(6);
        let val = rand_rows(&mut rng, 10, 4);
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        for kind in ScorerKind::ALL {
            let det = DetectorArtifact::fit(kind, &params, &val, &labels, FitOptions::default()).unwrap();
            let back = DetectorArtifact::from_json(&det.to_json()).unwrap();
            assert_eq!(back, det);
        }
    }

    #[test]
    fn scorer_kind_parsing() {
        assert_eq!(
            ScorerKind::parse_list("msp, energy,maha,cosine").unwrap(),
            ScorerKind::ALL.to_vec()
        );
        assert!(ScorerKind::parse_list("msp,odin").is_err());
    }
}
