//! Dense vector and matrix primitives.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`. [`Matrix`] is a row-major dense
//! matrix. Everything here is a pure function over its inputs.

use thiserror::Error;

/// Cyclic Jacobi sweep cap.
pub const MAX_JACOBI_SWEEPS: usize = 100;

/// Default relative cutoff used by [`pseudo_inverse`] callers.
pub const DEFAULT_PINV_RTOL: f64 = 1e-10;

/// Relative tolerance used when checking symmetry of an input matrix.
pub const SYMMETRY_RTOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no mean supplied for class {0}")]
    MissingClassMean(usize),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("Jacobi iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("storage length {len} does not match shape {rows}x{cols}")]
    InvalidShape { rows: usize, cols: usize, len: usize },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(LinalgError::InvalidShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<V: AsRef<[f64]>>(rows: &[V]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(LinalgError::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `selfᵀ · y`.
    pub fn matvec_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.rows,
                got: y.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            axpy(yr, self.row(r), &mut out);
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), out.row_mut(r));
            }
        }
        Ok(out)
    }

    /// `xᵀ · self · x` for square `self`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        Ok(dot(x, &self.matvec(x)?))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest `|a_ij - a_ji|`. Requires a square matrix.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    fn check_symmetric(&self) -> Result<()> {
        if self.rows != self.cols {
            return Err(LinalgError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let asym = self.max_asymmetry();
        if asym > SYMMETRY_RTOL * self.max_abs() {
            return Err(LinalgError::NotSymmetric(asym));
        }
        Ok(())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn mean_vector<V: AsRef<[f64]>>(rows: &[V]) -> Result<Vec<f64>> {
    let first = rows.first().ok_or(LinalgError::EmptyInput)?.as_ref();
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for r in rows {
        let r = r.as_ref();
        if r.len() != dim {
            return Err(LinalgError::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        axpy(1.0, r, &mut acc);
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(acc)
}

/// Shared within-class covariance `(1/M) Σ_i (h_i − μ_{y_i})(h_i − μ_{y_i})ᵀ`.
///
/// `means[j]` is the mean of class `j`. Population (1/M) normalization.
pub fn shared_covariance<V: AsRef<[f64]>, W: AsRef<[f64]>>(
    rows: &[V],
    labels: &[usize],
    means: &[W],
) -> Result<Matrix> {
    if rows.is_empty() {
        return Err(LinalgError::EmptyInput);
    }
    if labels.len() != rows.len() {
        return Err(LinalgError::DimensionMismatch {
            expected: rows.len(),
            got: labels.len(),
        });
    }
    let dim = rows[0].as_ref().len();
    let mut cov = Matrix::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for (row, &label) in rows.iter().zip(labels) {
        let row = row.as_ref();
        let mean = means
            .get(label)
            .ok_or(LinalgError::MissingClassMean(label))?
            .as_ref();
        if row.len() != dim {
            return Err(LinalgError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        if mean.len() != dim {
            return Err(LinalgError::DimensionMismatch {
                expected: dim,
                got: mean.len(),
            });
        }
        for k in 0..dim {
            centered[k] = row[k] - mean[k];
        }
        for i in 0..dim {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let out = cov.row_mut(i);
            for j in i..dim {
                out[j] += ci * centered[j];
            }
        }
    }
    let m = rows.len() as f64;
    for i in 0..dim {
        for j in i..dim {
            let v = cov.get(i, j) / m;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok(cov)
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEig {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Matrix,
}

impl SymEig {
    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let scaled: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = Matrix::zeros(n, n);
        for k in 0..n {
            let s = scaled[k];
            if s == 0.0 {
                continue;
            }
            for i in 0..n {
                let vik = s * self.vectors.get(i, k);
                if vik == 0.0 {
                    continue;
                }
                for j in i..n {
                    let v = out.get(i, j) + vik * self.vectors.get(j, k);
                    out.set(i, j, v);
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                out.set(j, i, out.get(i, j));
            }
        }
        out
    }
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
///
/// Each eigenvector is sign-normalized so that its largest-magnitude entry is
/// positive, which makes the output deterministic.
pub fn sym_eig(m: &Matrix) -> Result<SymEig> {
    m.check_symmetric()?;
    let n = m.rows();
    let mut a = m.clone();
    // symmetrize away round-off asymmetry before rotating
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();

    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum::<f64>();
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence(MAX_JACOBI_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        for (r, x) in col.into_iter().enumerate() {
            vectors.set(r, dst, x);
        }
    }
    Ok(SymEig { values, vectors })
}

/// Moore–Penrose inverse of a symmetric PSD matrix via its eigen-decomposition.
///
/// Eigenvalues below `rel_tol · λ_max` (including small negative round-off)
/// are treated as zero.
pub fn pseudo_inverse(m: &Matrix, rel_tol: f64) -> Result<Matrix> {
    let eig = sym_eig(m)?;
    let lambda_max = eig.values.first().copied().unwrap_or(0.0);
    if lambda_max <= 0.0 {
        return Ok(Matrix::zeros(m.rows(), m.cols()));
    }
    let cutoff = rel_tol * lambda_max;
    Ok(eig.reconstruct_with(|l| if l < cutoff || l <= 0.0 { 0.0 } else { 1.0 / l }))
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(LinalgError::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Projects rows onto the top two principal components of the centered data.
///
/// Fewer than three rows is rejected. For one-dimensional data the second
/// coordinate is zero.
pub fn pca_project_2d<V: AsRef<[f64]>>(rows: &[V]) -> Result<Vec<[f64; 2]>> {
    if rows.len() < 3 {
        return Err(LinalgError::EmptyInput);
    }
    let mean = mean_vector(rows)?;
    let centered: Vec<Vec<f64>> = rows.iter().map(|r| sub(r.as_ref(), &mean)).collect();
    let dim = mean.len();
    let zero_mean = vec![vec![0.0; dim]];
    let labels = vec![0; centered.len()];
    let cov = shared_covariance(&centered, &labels, &zero_mean)?;
    let eig = sym_eig(&cov)?;
    let pc1 = eig.vectors.column(0);
    let pc2 = if dim > 1 {
        eig.vectors.column(1)
    } else {
        vec![0.0; dim]
    };
    Ok(centered
        .iter()
        .map(|c| [dot(c, &pc1), dot(c, &pc2)])
        .collect())
}
