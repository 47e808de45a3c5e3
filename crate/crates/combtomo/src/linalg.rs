//! Dense complex linear algebra with fixed storage and indexing conventions.
//!
//! Conventions used by every module in this crate:
//!
//! * matrices are row-major: entry `(r, c)` lives at `data[r * cols + c]`;
//! * composite tensor indices are built leftmost-factor-most-significant, so
//!   for subsystem dims `[d0, d1, d2]` the flat index of `(s0, s1, s2)` is
//!   `(s0 * d1 + s1) * d2 + s2`;
//! * the JSON form of a matrix is `{"rows": n, "cols": m, "data": [[re, im], ...]}`
//!   with `data` in row-major order.
//!
//! Eigen-, QR-, and singular-value decompositions are delegated to nalgebra;
//! everything index-sensitive (products, kron, partial trace, permutations) is
//! implemented directly against the row-major layout.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = num_complex::Complex64;

/// Tolerance for the Hermiticity precondition checks.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Eigenvalues above `-PSD_CLIP_TOL` are treated as rounding noise and clipped to zero.
pub const PSD_CLIP_TOL: f64 = 1e-8;
/// Relative singular-value cutoff for rank decisions in `qr_orthonormalize`.
pub const QR_RANK_TOL: f64 = 1e-10;
/// Residual tolerance of `solve_small_linear`, relative to `max(1, ||b||_F)`.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not Hermitian: defect {defect:.3e} exceeds tolerance {tol:.3e}")]
    NotHermitian { defect: f64, tol: f64 },
    #[error("matrix is not positive semidefinite: eigenvalue {min_eig:.3e} below -{tol:.3e}")]
    NotPsd { min_eig: f64, tol: f64 },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("input list is empty")]
    EmptyInput,
    #[error("rank deficient: numerical rank {rank} below required {required}")]
    RankDeficient { rank: usize, required: usize },
    #[error("linear system is singular or ill-conditioned: residual {residual:.3e}, condition estimate {condition:.3e}")]
    Singular { residual: f64, condition: f64 },
    #[error("bad subsystem index: {0}")]
    BadSubsystemIndex(String),
    #[error("subsystem dims {dims_product} do not match matrix dimension {matrix_dim}")]
    DimsProductMismatch { dims_product: usize, matrix_dim: usize },
    #[error("non-finite value in matrix data")]
    NonFinite,
    #[error("invalid dims: {0}")]
    BadDims(String),
}

/// Dense complex matrix, row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MatrixJson", try_from = "MatrixJson")]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    data: Vec<[f64; 2]>,
}

impl From<ComplexMatrix> for MatrixJson {
    fn from(m: ComplexMatrix) -> Self {
        MatrixJson {
            rows: m.rows,
            cols: m.cols,
            data: m.data.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

impl TryFrom<MatrixJson> for ComplexMatrix {
    type Error = String;

    fn try_from(j: MatrixJson) -> Result<Self, String> {
        if j.rows == 0 || j.cols == 0 {
            return Err("matrix dimensions must be positive".into());
        }
        if j.data.len() != j.rows * j.cols {
            return Err(format!(
                "data length {} does not match {}x{}",
                j.data.len(),
                j.rows,
                j.cols
            ));
        }
        if j.data.iter().any(|[re, im]| !re.is_finite() || !im.is_finite()) {
            return Err("non-finite entry in matrix data".into());
        }
        Ok(ComplexMatrix {
            rows: j.rows,
            cols: j.cols,
            data: j.data.into_iter().map(|[re, im]| C64::new(re, im)).collect(),
        })
    }
}

impl std::fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "ComplexMatrix {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            let entries: Vec<String> = (0..self.cols.min(8))
                .map(|c| {
                    let z = self.get(r, c);
                    format!("{:+.4}{:+.4}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", entries.join(", "))?;
        }
        if self.rows > 8 || self.cols > 8 {
            writeln!(f, "  ...")?;
        }
        Ok(())
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        ComplexMatrix {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    /// Builds from nested rows; panics on ragged input. Intended for literals in tests.
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        assert!(!rows.is_empty() && !rows[0].is_empty());
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        ComplexMatrix {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m.data[i * values.len() + i] = C64::new(*v, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn mul(&self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(
            self.cols, other.rows,
            "inner dimensions must agree: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = ComplexMatrix::zeros(self.rows, other.cols);
        // i-k-j order keeps both operands in row-major streaming access.
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn add(&self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        ComplexMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        ComplexMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scaled(&self, s: C64) -> ComplexMatrix {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    pub fn scaled_real(&self, s: f64) -> ComplexMatrix {
        self.scaled(C64::new(s, 0.0))
    }

    /// In-place `self += s * other`.
    pub fn axpy(&mut self, s: C64, other: &ComplexMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn adjoint(&self) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> C64 {
        assert!(self.is_square());
        (0..self.rows).map(|i| self.data[i * self.cols + i]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `||m - m^dag||_F`; zero iff exactly Hermitian.
    pub fn hermitian_defect(&self) -> f64 {
        assert!(self.is_square());
        let mut acc = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let d = self.data[r * self.cols + c] - self.data[c * self.cols + r].conj();
                acc += d.norm_sqr();
            }
        }
        acc.sqrt()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && self.hermitian_defect() <= tol * self.frobenius_norm().max(1.0)
    }

    /// `(m + m^dag) / 2`.
    pub fn hermitian_part(&self) -> ComplexMatrix {
        assert!(self.is_square());
        let adj = self.adjoint();
        self.add(&adj).scaled_real(0.5)
    }

    /// `||X^dag X - I||_F`; measures distance from having orthonormal columns.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.adjoint().mul(self);
        gram.sub(&ComplexMatrix::identity(self.cols)).frobenius_norm()
    }

    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Dimensions of tensor-product subsystems, leftmost factor most significant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsystemDims {
    dims: Vec<usize>,
}

impl SubsystemDims {
    pub fn new(dims: Vec<usize>) -> Result<Self, LinalgError> {
        if dims.is_empty() {
            return Err(LinalgError::BadDims("subsystem list is empty".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(LinalgError::BadDims("subsystem dimension is zero".into()));
        }
        Ok(SubsystemDims { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn total(&self) -> usize {
        self.dims.iter().product()
    }
}

pub(crate) fn to_na(m: &ComplexMatrix) -> DMatrix<C64> {
    DMatrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c))
}

pub(crate) fn from_na(m: &DMatrix<C64>) -> ComplexMatrix {
    ComplexMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
}

fn require_square(m: &ComplexMatrix) -> Result<(), LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare { rows: m.rows(), cols: m.cols() });
    }
    Ok(())
}

fn require_hermitian(m: &ComplexMatrix) -> Result<(), LinalgError> {
    require_square(m)?;
    let defect = m.hermitian_defect();
    let tol = HERMITIAN_TOL * m.frobenius_norm().max(1.0);
    if defect > tol {
        return Err(LinalgError::NotHermitian { defect, tol });
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns. The decomposition is made deterministic: each eigenvector is
/// rephased so its first component of magnitude above 1e-12 is real positive,
/// and eigenvalues closer than 1e-12 are ordered by the lexicographic order of
/// the rephased vectors.
pub fn hermitian_eig(m: &ComplexMatrix) -> Result<(Vec<f64>, ComplexMatrix), LinalgError> {
    require_hermitian(m)?;
    // Symmetrize so the backend sees an exactly Hermitian operand.
    let sym = m.hermitian_part();
    let eig = nalgebra::SymmetricEigen::new(to_na(&sym));
    let n = m.rows();

    let mut vectors: Vec<Vec<C64>> = (0..n)
        .map(|j| {
            let mut col: Vec<C64> = (0..n).map(|i| eig.eigenvectors[(i, j)]).collect();
            fix_phase(&mut col);
            col
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    // Stable ordering inside (near-)degenerate runs.
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n
            && (eig.eigenvalues[order[end - 1]] - eig.eigenvalues[order[end]]).abs() <= 1e-12
        {
            end += 1;
        }
        if end - start > 1 {
            order[start..end].sort_by(|&a, &b| lex_cmp(&vectors[a], &vectors[b]));
        }
        start = end;
    }

    let values: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j]).collect();
    let mut vecs = ComplexMatrix::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        let col = std::mem::take(&mut vectors[old_j]);
        for (i, v) in col.into_iter().enumerate() {
            vecs.set(i, new_j, v);
        }
    }
    Ok((values, vecs))
}

fn fix_phase(col: &mut [C64]) {
    for z in col.iter() {
        if z.norm() > 1e-12 {
            let phase = z.conj() / z.norm();
            for w in col.iter_mut() {
                *w *= phase;
            }
            return;
        }
    }
}

fn lex_cmp(a: &[C64], b: &[C64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.re.total_cmp(&y.re) {
            std::cmp::Ordering::Equal => {}
            o => return o,
        }
        match x.im.total_cmp(&y.im) {
            std::cmp::Ordering::Equal => {}
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Orthonormalizes the columns of a full-column-rank matrix (thin QR).
///
/// The output spans the same column space and satisfies `Q^dag Q = I` to
/// machine precision. Fails with `RankDeficient` when the smallest singular
/// value falls below `1e-10` times the largest.
pub fn qr_orthonormalize(m: &ComplexMatrix) -> Result<ComplexMatrix, LinalgError> {
    if m.rows() < m.cols() {
        return Err(LinalgError::ShapeMismatch {
            expected: "rows >= cols".into(),
            got: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    let na = to_na(m);
    let sv = na.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&s| s > QR_RANK_TOL * smax).count();
    if smax == 0.0 || rank < m.cols() {
        return Err(LinalgError::RankDeficient { rank, required: m.cols() });
    }
    let q = na.qr().q();
    Ok(from_na(&q))
}

/// Numerical rank of a list of same-shaped matrices, viewed as vectors.
///
/// Ranks by singular values of the stacked vectorization, counting those above
/// `tol` times the largest.
pub fn numerical_rank(mats: &[ComplexMatrix], tol: f64) -> Result<usize, LinalgError> {
    if mats.is_empty() {
        return Err(LinalgError::EmptyInput);
    }
    let (r0, c0) = (mats[0].rows(), mats[0].cols());
    for m in mats {
        if (m.rows(), m.cols()) != (r0, c0) {
            return Err(LinalgError::ShapeMismatch {
                expected: format!("{}x{}", r0, c0),
                got: format!("{}x{}", m.rows(), m.cols()),
            });
        }
    }
    let stacked = DMatrix::from_fn(mats.len(), r0 * c0, |i, j| mats[i].data()[j]);
    let sv = stacked.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol * smax).count())
}

/// Partial trace over the subsystems not listed in `keep`.
///
/// `keep` must be strictly increasing; the output's subsystem order is the
/// order of `keep`.
pub fn partial_trace(
    m: &ComplexMatrix,
    dims: &SubsystemDims,
    keep: &[usize],
) -> Result<ComplexMatrix, LinalgError> {
    require_square(m)?;
    let n = m.rows();
    if dims.total() != n {
        return Err(LinalgError::DimsProductMismatch { dims_product: dims.total(), matrix_dim: n });
    }
    if keep.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LinalgError::BadSubsystemIndex(
            "keep indices must be strictly increasing".into(),
        ));
    }
    if let Some(&bad) = keep.iter().find(|&&k| k >= dims.len()) {
        return Err(LinalgError::BadSubsystemIndex(format!(
            "index {} out of range for {} subsystems",
            bad,
            dims.len()
        )));
    }
    let legs = dims.dims();
    let is_kept: Vec<bool> = (0..legs.len()).map(|i| keep.contains(&i)).collect();
    let out_dim: usize = keep.iter().map(|&k| legs[k]).product();

    // For each flat index, its composite kept-part and traced-part indices.
    let mut kept_part = vec![0usize; n];
    let mut traced_part = vec![0usize; n];
    for idx in 0..n {
        let (mut kp, mut tp) = (0usize, 0usize);
        let mut rem = idx;
        for (leg, &d) in legs.iter().enumerate() {
            let stride: usize = legs[leg + 1..].iter().product();
            let s = rem / stride;
            rem %= stride;
            if is_kept[leg] {
                kp = kp * d + s;
            } else {
                tp = tp * d + s;
            }
        }
        kept_part[idx] = kp;
        traced_part[idx] = tp;
    }

    let mut out = ComplexMatrix::zeros(out_dim.max(1), out_dim.max(1));
    for r in 0..n {
        for c in 0..n {
            if traced_part[r] == traced_part[c] {
                let v = m.get(r, c);
                let (or, oc) = (kept_part[r], kept_part[c]);
                out.set(or, oc, out.get(or, oc) + v);
            }
        }
    }
    Ok(out)
}

/// Kronecker product; the left operand is the more significant factor.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(a.rows() * b.rows(), a.cols() * b.cols());
    for ra in 0..a.rows() {
        for ca in 0..a.cols() {
            let x = a.get(ra, ca);
            if x == C64::new(0.0, 0.0) {
                continue;
            }
            for rb in 0..b.rows() {
                for cb in 0..b.cols() {
                    out.set(ra * b.rows() + rb, ca * b.cols() + cb, x * b.get(rb, cb));
                }
            }
        }
    }
    out
}

/// Principal square root of a positive semidefinite matrix.
///
/// Eigenvalues in `[-1e-8, 0)` are clipped to zero; anything lower fails.
pub fn psd_sqrt(m: &ComplexMatrix) -> Result<ComplexMatrix, LinalgError> {
    let (values, vecs) = hermitian_eig(m)?;
    let min_eig = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -PSD_CLIP_TOL {
        return Err(LinalgError::NotPsd { min_eig, tol: PSD_CLIP_TOL });
    }
    let roots: Vec<f64> = values.iter().map(|&v| v.max(0.0).sqrt()).collect();
    let scaled = ComplexMatrix::from_fn(m.rows(), m.cols(), |r, c| vecs.get(r, c) * roots[c]);
    Ok(scaled.mul(&vecs.adjoint()))
}

/// Solves `a x = b` for square `a` by LU factorization.
///
/// The residual is checked against `1e-9 * max(1, ||b||_F)`; failures carry a
/// condition estimate from the LU diagonal.
pub fn solve_small_linear(
    a: &ComplexMatrix,
    b: &ComplexMatrix,
) -> Result<ComplexMatrix, LinalgError> {
    require_square(a)?;
    if a.rows() != b.rows() {
        return Err(LinalgError::ShapeMismatch {
            expected: format!("{} rows", a.rows()),
            got: format!("{} rows", b.rows()),
        });
    }
    let na = to_na(a);
    let nb = to_na(b);
    let lu = na.clone().lu();
    let cond = {
        let u = lu.u();
        let diag: Vec<f64> = (0..u.nrows().min(u.ncols())).map(|i| u[(i, i)].norm()).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if dmin == 0.0 { f64::INFINITY } else { dmax / dmin }
    };
    let x = match lu.solve(&nb) {
        Some(x) => x,
        None => return Err(LinalgError::Singular { residual: f64::INFINITY, condition: cond }),
    };
    let residual = (&na * &x - &nb).norm();
    let tol = SOLVE_RESIDUAL_TOL * nb.norm().max(1.0);
    if residual > tol || !residual.is_finite() {
        return Err(LinalgError::Singular { residual, condition: cond });
    }
    log::debug!("solve_small_linear: n={} condition~{:.3e} residual={:.3e}", a.rows(), cond, residual);
    Ok(from_na(&x))
}

// ---------------------------------------------------------------------------
// Crate-internal tensor-leg utilities.
// ---------------------------------------------------------------------------

/// Permutes the tensor legs of a flat vector: output leg `j` is input leg `perm[j]`.
pub(crate) fn permute_legs_vec(v: &[C64], dims: &[usize], perm: &[usize]) -> Vec<C64> {
    debug_assert_eq!(v.len(), dims.iter().product::<usize>());
    debug_assert_eq!(dims.len(), perm.len());
    let out_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let in_strides = strides_of(dims);
    let mut out = vec![C64::new(0.0, 0.0); v.len()];
    let mut out_multi = vec![0usize; perm.len()];
    for (out_idx, slot) in out.iter_mut().enumerate() {
        decompose_into(out_idx, &out_dims, &mut out_multi);
        let mut in_idx = 0;
        for (j, &p) in perm.iter().enumerate() {
            in_idx += out_multi[j] * in_strides[p];
        }
        *slot = v[in_idx];
    }
    out
}

pub(crate) fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    strides
}

pub(crate) fn decompose_into(mut idx: usize, dims: &[usize], out: &mut [usize]) {
    for i in (0..dims.len()).rev() {
        out[i] = idx % dims[i];
        idx /= dims[i];
    }
}

/// Embeds `op` acting on leg `at` of a tensor space, identity elsewhere.
/// `dims` lists the input leg sizes; `op` may be rectangular, in which case
/// the embedded operator maps leg `at` from `dims[at]` to `op.rows()`.
pub(crate) fn embed_at(op: &ComplexMatrix, dims: &[usize], at: usize) -> ComplexMatrix {
    debug_assert_eq!(op.cols(), dims[at]);
    let before: usize = dims[..at].iter().product();
    let after: usize = dims[at + 1..].iter().product();
    let mut out = kron(&ComplexMatrix::identity(before), op);
    if after > 1 {
        out = kron(&out, &ComplexMatrix::identity(after));
    }
    out
}
