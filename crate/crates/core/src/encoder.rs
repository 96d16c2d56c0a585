//! Feed-forward tanh encoder with a softmax head, its backward pass, and Adam
//! with linear learning-rate decay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm, Matrix};
use crate::rng::SplitMix64;

/// Representations with a smaller norm cannot be normalized.
pub const MIN_REP_NORM: f64 = 1e-30;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("representation norm {0:e} is too small to normalize")]
    DegenerateRepresentation(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("optimizer already took all {0} scheduled steps")]
    StepsExhausted(usize),
}

pub type Result<T> = std::result::Result<T, EncoderError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Hidden tanh stack ending in the representation `h`, plus the softmax head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamsFile", try_from = "ParamsFile")]
pub struct EncoderParams {
    pub layers: Vec<Layer>,
    /// `C × d`; row `j` is the class weight `w_j`.
    pub head_weight: Matrix,
    pub head_bias: Vec<f64>,
}

fn glorot(rng: &mut SplitMix64, fan_out: usize, fan_in: usize) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_out * fan_in).map(|_| rng.uniform(-a, a)).collect();
    Matrix::new(fan_out, fan_in, data).expect("shape")
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(
    input_dim: usize,
    hidden_dims: &[usize],
    rep_dim: usize,
    num_classes: usize,
    seed: u64,
) -> Result<EncoderParams> {
    if input_dim == 0 || rep_dim == 0 || num_classes == 0 || hidden_dims.contains(&0) {
        return Err(EncoderError::InvalidShape(
            "all dimensions must be at least 1".into(),
        ));
    }
    let mut rng = SplitMix64::new(seed);
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden_dims);
    dims.push(rep_dim);
    let layers = dims
        .windows(2)
        .map(|w| Layer {
            weight: glorot(&mut rng, w[1], w[0]),
            bias: vec![0.0; w[1]],
        })
        .collect();
    Ok(EncoderParams {
        layers,
        head_weight: glorot(&mut rng, num_classes, rep_dim),
        head_bias: vec![0.0; num_classes],
    })
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    /// `acts[0]` is the input; `acts[k+1] = tanh(pre[k])`.
    pub acts: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub h_norm: f64,
    pub z: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Upstream gradients for one example. An empty vector means zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpstreamGrad {
    pub logits: Vec<f64>,
    pub h: Vec<f64>,
    pub z: Vec<f64>,
}

impl EncoderParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn rep_dim(&self) -> usize {
        self.head_weight.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.head_weight.rows()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weight.rows())
            .collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            head_weight: Matrix::zeros(self.head_weight.rows(), self.head_weight.cols()),
            head_bias: vec![0.0; self.head_bias.len()],
        }
    }

    /// All parameter tensors in a fixed order (layer weights and biases, then
    /// the head).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.layers.len() + 2);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
        }
        out.push(self.head_weight.as_slice());
        out.push(&self.head_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias);
        }
        out.push(self.head_weight.as_mut_slice());
        out.push(&mut self.head_bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, other: &EncoderParams, alpha: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Hidden stack only: returns the representation `h`.
    pub fn represent(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for l in &self.layers {
            a = l
                .weight
                .matvec(&a)
                .expect("chained shapes")
                .into_iter()
                .zip(&l.bias)
                .map(|(v, b)| (v + b).tanh())
                .collect();
        }
        Ok(a)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(EncoderError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardRecord> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(x.to_vec());
        for l in &self.layers {
            let p: Vec<f64> = l
                .weight
                .matvec(acts.last().expect("nonempty"))
                .expect("chained shapes")
                .into_iter()
                .zip(&l.bias)
                .map(|(v, b)| v + b)
                .collect();
            acts.push(p.iter().map(|v| v.tanh()).collect());
            pre.push(p);
        }
        let h = acts.last().expect("nonempty").clone();
        let h_norm = norm(&h);
        if h_norm <= MIN_REP_NORM {
            return Err(EncoderError::DegenerateRepresentation(h_norm));
        }
        let z = h.iter().map(|v| v / h_norm).collect();
        let logits: Vec<f64> = self
            .head_weight
            .matvec(&h)
            .expect("head shape")
            .into_iter()
            .zip(&self.head_bias)
            .map(|(v, b)| v + b)
            .collect();
        let probs = softmax(&logits);
        Ok(ForwardRecord {
            acts,
            pre,
            h,
            h_norm,
            z,
            logits,
            probs,
        })
    }

    /// Parameter gradients of a loss whose derivatives with respect to each
    /// example's logits, `h` and `z` are given in `grads`. Contributions are
    /// summed over examples in order.
    pub fn backward(&self, records: &[ForwardRecord], grads: &[UpstreamGrad]) -> Result<EncoderParams> {
        if records.len() != grads.len() {
            return Err(EncoderError::ShapeMismatch(format!(
                "{} records but {} gradient sets",
                records.len(),
                grads.len()
            )));
        }
        let d = self.rep_dim();
        let c = self.num_classes();
        let check = |v: &[f64], n: usize, what: &str| {
            if v.is_empty() || v.len() == n {
                Ok(())
            } else {
                Err(EncoderError::ShapeMismatch(format!(
                    "{what} gradient has length {}, expected {n}",
                    v.len()
                )))
            }
        };
        let mut out = self.zeros_like();
        for (rec, up) in records.iter().zip(grads) {
            check(&up.logits, c, "logit")?;
            check(&up.h, d, "h")?;
            check(&up.z, d, "z")?;

            let mut g_h = vec![0.0; d];
            if !up.logits.is_empty() {
                for (j, &gl) in up.logits.iter().enumerate() {
                    if gl == 0.0 {
                        continue;
                    }
                    out.head_bias[j] += gl;
                    for (k, &hk) in rec.h.iter().enumerate() {
                        let v = out.head_weight.get(j, k) + gl * hk;
                        out.head_weight.set(j, k, v);
                    }
                    crate::linalg::axpy(gl, self.head_weight.row(j), &mut g_h);
                }
            }
            if !up.h.is_empty() {
                crate::linalg::axpy(1.0, &up.h, &mut g_h);
            }
            if !up.z.is_empty() {
                // dz/dh = (I − z zᵀ)/‖h‖
                let zg = dot(&rec.z, &up.z);
                for k in 0..d {
                    g_h[k] += (up.z[k] - rec.z[k] * zg) / rec.h_norm;
                }
            }

            let mut g_act = g_h;
            for (li, layer) in self.layers.iter().enumerate().rev() {
                let act = &rec.acts[li + 1];
                let input = &rec.acts[li];
                let g_pre: Vec<f64> = g_act
                    .iter()
                    .zip(act)
                    .map(|(g, a)| g * (1.0 - a * a))
                    .collect();
                let gl = &mut out.layers[li];
                for (r, &gp) in g_pre.iter().enumerate() {
                    if gp == 0.0 {
                        continue;
                    }
                    gl.bias[r] += gp;
                    crate::linalg::axpy(gp, input, gl.weight.row_mut(r));
                }
                if li > 0 {
                    g_act = layer.weight.matvec_t(&g_pre).expect("chained shapes");
                }
            }
        }
        Ok(out)
    }
}

/// Adam (β1 = 0.9, β2 = 0.999, ε = 1e-8) with learning rate decaying linearly
/// to zero over `total_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    lr: f64,
    total_steps: usize,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64, total_steps: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            lr,
            total_steps,
        }
    }

    pub fn for_params(params: &EncoderParams, lr: f64, total_steps: usize) -> Self {
        Self::new(params.num_params(), lr, total_steps)
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// Rate applied by the next update.
    pub fn effective_lr(&self) -> f64 {
        self.lr * (1.0 - self.step as f64 / self.total_steps as f64)
    }

    /// One update over flat parameter and gradient sequences of equal length.
    pub fn update<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut f64>,
        grads: impl IntoIterator<Item = &'a f64>,
    ) -> Result<()> {
        if self.step >= self.total_steps {
            return Err(EncoderError::StepsExhausted(self.total_steps));
        }
        let lr = self.effective_lr();
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let mut n = 0;
        for ((p, &g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            n += 1;
        }
        if n != self.m.len() {
            return Err(EncoderError::ShapeMismatch(format!(
                "optimizer holds {} moments but received {n} parameters",
                self.m.len()
            )));
        }
        self.step += 1;
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut EncoderParams, grads: &EncoderParams) -> Result<()> {
    let grad_tensors = grads.tensors();
    let ps = params.tensors_mut();
    state.update(
        ps.into_iter().flat_map(|t| t.iter_mut()),
        grad_tensors.into_iter().flat_map(|t| t.iter()),
    )
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ShapeFile {
    input_dim: usize,
    hidden_dims: Vec<usize>,
    rep_dim: usize,
    num_classes: usize,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    shape: ShapeFile,
    layers: Vec<LayerFile>,
    head: LayerFile,
}

impl From<EncoderParams> for ParamsFile {
    fn from(p: EncoderParams) -> Self {
        ParamsFile {
            shape: ShapeFile {
                input_dim: p.input_dim(),
                hidden_dims: p.hidden_dims(),
                rep_dim: p.rep_dim(),
                num_classes: p.num_classes(),
            },
            layers: p
                .layers
                .iter()
                .map(|l| LayerFile {
                    weight: l.weight.to_rows(),
                    bias: l.bias.clone(),
                })
                .collect(),
            head: LayerFile {
                weight: p.head_weight.to_rows(),
                bias: p.head_bias.clone(),
            },
        }
    }
}

impl TryFrom<ParamsFile> for EncoderParams {
    type Error = EncoderError;

    fn try_from(f: ParamsFile) -> Result<Self> {
        let to_matrix = |rows: &[Vec<f64>], r: usize, c: usize| -> Result<Matrix> {
            let m = Matrix::from_rows(rows).map_err(|e| EncoderError::InvalidShape(e.to_string()))?;
            if m.rows() != r || (r > 0 && m.cols() != c) {
                return Err(EncoderError::InvalidShape(format!(
                    "expected {r}x{c} weight, found {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
            Ok(m)
        };
        let mut dims = vec![f.shape.input_dim];
        dims.extend_from_slice(&f.shape.hidden_dims);
        dims.push(f.shape.rep_dim);
        if f.layers.len() != dims.len() - 1 {
            return Err(EncoderError::InvalidShape(format!(
                "expected {} layers, found {}",
                dims.len() - 1,
                f.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(f.layers.len());
        for (lf, w) in f.layers.iter().zip(dims.windows(2)) {
            if lf.bias.len() != w[1] {
                return Err(EncoderError::InvalidShape("bias length".into()));
            }
            layers.push(Layer {
                weight: to_matrix(&lf.weight, w[1], w[0])?,
                bias: lf.bias.clone(),
            });
        }
        if f.head.bias.len() != f.shape.num_classes {
            return Err(EncoderError::InvalidShape("head bias length".into()));
        }
        let params = EncoderParams {
            layers,
            head_weight: to_matrix(&f.head.weight, f.shape.num_classes, f.shape.rep_dim)?,
            head_bias: f.head.bias,
        };
        if !params.is_finite() {
            return Err(EncoderError::InvalidShape("non-finite parameter".into()));
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_vec(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params(5, &[7, 6], 4, 3, 11).unwrap();
        let b = init_params(5, &[7, 6], 4, 3, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(5, &[7, 6], 4, 3, 12).unwrap());
        for l in &a.layers {
            assert!(l.bias.iter().all(|&b| b == 0.0));
            let bound = (6.0 / (l.weight.rows() + l.weight.cols()) as f64).sqrt();
            assert!(l.weight.as_slice().iter().all(|w| w.abs() <= bound));
        }
        assert!(a.head_bias.iter().all(|&b| b == 0.0));
        let bound = (6.0 / 7.0_f64).sqrt();
        assert!(a.head_weight.as_slice().iter().all(|w| w.abs() <= bound));
        assert_eq!(a.hidden_dims(), vec![7, 6]);
        assert!(init_params(0, &[], 4, 3, 0).is_err());
    }

    #[test]
    fn zero_weights_give_uniform_probs() {
        let mut p = init_params(3, &[], 3, 4, 0).unwrap();
        p.head_weight = Matrix::zeros(4, 3);
        // keep h nonzero through the bias
        p.layers[0].weight = Matrix::zeros(3, 3);
        p.layers[0].bias = vec![0.5, 0.0, 0.0];
        let rec = p.forward(&[1.0, 2.0, 3.0]).unwrap();
        for q in &rec.probs {
            assert!((q - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn all_zero_params_are_degenerate() {
        let p = init_params(3, &[], 3, 2, 0).unwrap().zeros_like();
        assert!(matches!(
            p.forward(&[1.0, 0.0, 0.0]),
            Err(EncoderError::DegenerateRepresentation(_))
        ));
    }

    #[test]
    fn identity_layer_applies_tanh() {
        let mut p = init_params(3, &[], 3, 2, 0).unwrap();
        p.layers[0].weight = Matrix::identity(3);
        let rec = p.forward(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(rec.h, vec![0.0, 1.0_f64.tanh(), 0.0]);
        assert_eq!(rec.z, vec![0.0, 1.0, 0.0]);
        assert!(matches!(
            p.forward(&[1.0]),
            Err(EncoderError::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn random_forward_is_normalized() {
        let mut rng = SplitMix64::new(4);
        for s in 0..20 {
            let p = init_params(6, &[8], 5, 4, s).unwrap();
            let x = rand_vec(&mut rng, 6);
            let rec = p.forward(&x).unwrap();
            assert!((rec.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((norm(&rec.z) - 1.0).abs() < 1e-12);
            assert_eq!(rec, p.forward(&x).unwrap());
            assert_eq!(rec.h, p.represent(&x).unwrap());
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = init_params(4, &[5], 3, 2, 1).unwrap();
        let rec = p.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let g = p
            .backward(&[rec], &[UpstreamGrad { logits: vec![0.0; 2], h: vec![0.0; 3], z: vec![0.0; 3] }])
            .unwrap();
        assert_eq!(g, p.zeros_like());
    }

    #[test]
    fn logit_gradient_of_head_is_h() {
        let p = init_params(3, &[], 3, 2, 5).unwrap();
        let x = [0.3, -0.2, 0.9];
        let rec = p.forward(&x).unwrap();
        let g = p
            .backward(
                std::slice::from_ref(&rec),
                &[UpstreamGrad { logits: vec![1.0, 0.0], ..Default::default() }],
            )
            .unwrap();
        assert_eq!(g.head_weight.row(0), rec.h.as_slice());
        assert!(g.head_weight.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_shape_errors() {
        let p = init_params(3, &[], 3, 2, 5).unwrap();
        let rec = p.forward(&[0.3, -0.2, 0.9]).unwrap();
        assert!(p.backward(std::slice::from_ref(&rec), &[]).is_err());
        assert!(p
            .backward(&[rec], &[UpstreamGrad { logits: vec![1.0], ..Default::default() }])
            .is_err());
    }

    /// Scalar test objective: Σ_i a·logits + b·h + c·z with fixed coefficient
    /// vectors.
    fn objective(p: &EncoderParams, xs: &[Vec<f64>], coefs: &[UpstreamGrad]) -> f64 {
        xs.iter()
            .zip(coefs)
            .map(|(x, c)| {
                let r = p.forward(x).unwrap();
                dot(&r.logits, &c.logits) + dot(&r.h, &c.h) + dot(&r.z, &c.z)
            })
            .sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SplitMix64::new(99);
        for seed in 0..5 {
            let p = init_params(4, &[6, 5], 3, 3, seed).unwrap();
            let xs: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, 4)).collect();
            let coefs: Vec<UpstreamGrad> = (0..3)
                .map(|_| UpstreamGrad {
                    logits: rand_vec(&mut rng, 3),
                    h: rand_vec(&mut rng, 3),
                    z: rand_vec(&mut rng, 3),
                })
                .collect();
            let recs: Vec<ForwardRecord> = xs.iter().map(|x| p.forward(x).unwrap()).collect();
            let analytic = p.backward(&recs, &coefs).unwrap();
            let step = 1e-5;
            let mut probe = p.clone();
            let n_tensors = probe.tensors().len();
            for t in 0..n_tensors {
                let len = probe.tensors()[t].len();
                for k in 0..len {
                    let orig = probe.tensors()[t][k];
                    probe.tensors_mut()[t][k] = orig + step;
                    let up = objective(&probe, &xs, &coefs);
                    probe.tensors_mut()[t][k] = orig - step;
                    let down = objective(&probe, &xs, &coefs);
                    probe.tensors_mut()[t][k] = orig;
                    let numeric = (up - down) / (2.0 * step);
                    let a = analytic.tensors()[t][k];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    assert!(rel < 1e-4, "tensor {t} entry {k}: {a} vs {numeric}");
                }
            }
        }
    }

    #[test]
    fn adam_zero_grad_is_noop_and_schedule() {
        let mut p = init_params(3, &[4], 2, 2, 0).unwrap();
        let before = p.clone();
        let zeros = p.zeros_like();
        let mut st = AdamState::for_params(&p, 0.1, 3);
        adam_step(&mut st, &mut p, &zeros).unwrap();
        assert_eq!(p, before);
        assert!((st.effective_lr() - 0.1 * 2.0 / 3.0).abs() < 1e-15);
        adam_step(&mut st, &mut p, &zeros).unwrap();
        assert_eq!(st.step(), 2);
        // step = T−1 → lr/T
        assert!((st.effective_lr() - 0.1 / 3.0).abs() < 1e-15);
        adam_step(&mut st, &mut p, &zeros).unwrap();
        assert_eq!(
            adam_step(&mut st, &mut p, &zeros),
            Err(EncoderError::StepsExhausted(3))
        );
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // f(x) = (x − 3)²
        let mut x = [0.0_f64];
        let mut st = AdamState::new(1, 0.1, 200);
        for _ in 0..200 {
            let g = [2.0 * (x[0] - 3.0)];
            st.update(x.iter_mut(), g.iter()).unwrap();
        }
        assert!((x[0] - 3.0).abs() < 1e-2, "x = {}", x[0]);
    }

    #[test]
    fn params_json_round_trip() {
        let p = init_params(5, &[7], 4, 3, 2).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: EncoderParams = serde_json::from_str(&s).unwrap();
        for (a, b) in p.tensors().iter().zip(back.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
            }
        }
    }
}
