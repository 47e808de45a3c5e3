//! Multi-time quantum processes as isometry sequences.
//!
//! An `N`-step process is a list of isometries `V^(0) .. V^(N-1)`. Step `k`
//! maps the fresh input leg `i_k` together with the carried ancilla `A_k`
//! into the output leg `o_k` and the next ancilla `A_{k+1}`; the ancilla
//! after the final step is discarded. `A_0` is trivial (dimension 1).
//!
//! Matrix conventions: the column index of `V^(k)` is the composite
//! `i_k * d_{A_k} + a` (input leg most significant) and the row index is
//! `o_k * d_{A_{k+1}} + a'` (output leg most significant).
//!
//! The Choi matrix of the process feeds one half of an unnormalized
//! maximally entangled pair into each input leg and keeps the other half as a
//! reference, so its legs are ordered `(i_0, o_0, i_1, o_1, ...)` with the
//! leftmost leg most significant and its trace is the product of the input
//! dimensions.

use crate::linalg::{
    self, kron, partial_trace, permute_legs_vec, ComplexMatrix, LinalgError, SubsystemDims, C64,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default ceiling on the Choi dimension, guarding desk-scale memory use.
pub const DEFAULT_CHOI_CAP: usize = 4096;
/// Tolerance for accepting a matrix as an isometry at construction.
pub const ISOMETRY_TOL: f64 = 1e-8;
/// Density operators may be subnormalized but not exceed unit trace by more than this.
pub const TRACE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CombError {
    #[error("invalid comb dimensions: {0}")]
    BadDims(String),
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("matrix is not an isometry: ||V^dag V - I||_F = {defect:.3e}")]
    NotIsometry { defect: f64 },
    #[error("matrix is not unitary")]
    NotUnitary,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("index out of range: {0}")]
    BadIndex(String),
    #[error("not a density operator: {0}")]
    BadState(String),
    #[error("invalid Kraus map: {0}")]
    BadKraus(String),
    #[error("Choi dimension {dim} exceeds cap {cap}")]
    ChoiTooLarge { dim: usize, cap: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Leg dimensions of an `N`-step process.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CombDimsJson", into = "CombDimsJson")]
pub struct CombDims {
    steps: usize,
    in_dims: Vec<usize>,
    out_dims: Vec<usize>,
    anc_dims: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CombDimsJson {
    steps: usize,
    in_dims: Vec<usize>,
    out_dims: Vec<usize>,
    anc_dims: Vec<usize>,
}

impl From<CombDims> for CombDimsJson {
    fn from(d: CombDims) -> Self {
        CombDimsJson {
            steps: d.steps,
            in_dims: d.in_dims,
            out_dims: d.out_dims,
            anc_dims: d.anc_dims,
        }
    }
}

impl TryFrom<CombDimsJson> for CombDims {
    type Error = String;

    fn try_from(j: CombDimsJson) -> Result<Self, String> {
        CombDims::new(j.in_dims, j.out_dims, j.anc_dims).map_err(|e| e.to_string())
    }
}

impl CombDims {
    /// Validates leg counts, the trivial initial ancilla, and per-step
    /// isometry existence `d_o[k] * d_A[k+1] >= d_i[k] * d_A[k]`.
    pub fn new(
        in_dims: Vec<usize>,
        out_dims: Vec<usize>,
        anc_dims: Vec<usize>,
    ) -> Result<Self, CombError> {
        let steps = in_dims.len();
        if steps == 0 {
            return Err(CombError::BadDims("a comb needs at least one step".into()));
        }
        if out_dims.len() != steps {
            return Err(CombError::BadDims(format!(
                "out_dims has {} entries for {} steps",
                out_dims.len(),
                steps
            )));
        }
        if anc_dims.len() != steps + 1 {
            return Err(CombError::BadDims(format!(
                "anc_dims needs {} entries (one per gap incl. both ends), got {}",
                steps + 1,
                anc_dims.len()
            )));
        }
        if in_dims.iter().chain(&out_dims).chain(&anc_dims).any(|&d| d == 0) {
            return Err(CombError::BadDims("all dimensions must be positive".into()));
        }
        if anc_dims[0] != 1 {
            return Err(CombError::BadDims(format!(
                "the initial ancilla must be trivial, got d_A[0] = {}",
                anc_dims[0]
            )));
        }
        for k in 0..steps {
            let out = out_dims[k] * anc_dims[k + 1];
            let inp = in_dims[k] * anc_dims[k];
            if out < inp {
                return Err(CombError::BadDims(format!(
                    "step {k} cannot host an isometry: d_o[{k}]*d_A[{}] = {out} < d_i[{k}]*d_A[{k}] = {inp}",
                    k + 1
                )));
            }
        }
        Ok(CombDims { steps, in_dims, out_dims, anc_dims })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn in_dims(&self) -> &[usize] {
        &self.in_dims
    }

    pub fn out_dims(&self) -> &[usize] {
        &self.out_dims
    }

    pub fn anc_dims(&self) -> &[usize] {
        &self.anc_dims
    }

    pub fn isometry_rows(&self, k: usize) -> usize {
        self.out_dims[k] * self.anc_dims[k + 1]
    }

    pub fn isometry_cols(&self, k: usize) -> usize {
        self.in_dims[k] * self.anc_dims[k]
    }

    /// Dimension of the process Choi matrix, `prod_k d_i[k] * d_o[k]`.
    pub fn choi_dim(&self) -> usize {
        self.in_dims.iter().zip(&self.out_dims).map(|(i, o)| i * o).product()
    }

    /// Interleaved Choi leg dimensions `(i_0, o_0, i_1, o_1, ...)`.
    pub fn choi_legs(&self) -> SubsystemDims {
        let mut legs = Vec::with_capacity(2 * self.steps);
        for k in 0..self.steps {
            legs.push(self.in_dims[k]);
            legs.push(self.out_dims[k]);
        }
        SubsystemDims::new(legs).expect("dims validated at construction")
    }
}

/// One time-step isometry `V : i (x) A_in -> o (x) A_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Isometry {
    matrix: ComplexMatrix,
    in_dim: usize,
    out_dim: usize,
    anc_in: usize,
    anc_out: usize,
}

impl Isometry {
    pub fn new(
        matrix: ComplexMatrix,
        in_dim: usize,
        out_dim: usize,
        anc_in: usize,
        anc_out: usize,
    ) -> Result<Self, CombError> {
        if matrix.rows() != out_dim * anc_out || matrix.cols() != in_dim * anc_in {
            return Err(CombError::BadShape(format!(
                "matrix is {}x{}, legs require {}x{}",
                matrix.rows(),
                matrix.cols(),
                out_dim * anc_out,
                in_dim * anc_in
            )));
        }
        let defect = matrix.orthonormality_defect();
        if !(defect <= ISOMETRY_TOL) {
            return Err(CombError::NotIsometry { defect });
        }
        Ok(Isometry { matrix, in_dim, out_dim, anc_in, anc_out })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn anc_in(&self) -> usize {
        self.anc_in
    }

    pub fn anc_out(&self) -> usize {
        self.anc_out
    }

    /// `V rho V^dag` without density-operator validation overhead.
    pub(crate) fn apply_raw(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        self.matrix.mul(rho).mul(&self.matrix.adjoint())
    }
}

/// Positive semidefinite operator with trace in `[0, 1]` (tolerances apply),
/// labeled by its tensor legs. Zero trace is allowed: subnormalized
/// conditional states can carry zero weight when an effect annihilates the
/// state it conditions on.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    matrix: ComplexMatrix,
    dims: SubsystemDims,
}

impl DensityOperator {
    pub fn new(matrix: ComplexMatrix, dims: SubsystemDims) -> Result<Self, CombError> {
        if !matrix.is_square() || matrix.rows() != dims.total() {
            return Err(CombError::BadState(format!(
                "matrix is {}x{}, legs give dimension {}",
                matrix.rows(),
                matrix.cols(),
                dims.total()
            )));
        }
        if !matrix.is_hermitian(linalg::HERMITIAN_TOL) {
            return Err(CombError::BadState("matrix is not Hermitian".into()));
        }
        let (values, _) = linalg::hermitian_eig(&matrix)?;
        if let Some(&min) = values.last() {
            if min < -linalg::PSD_CLIP_TOL {
                return Err(CombError::BadState(format!("negative eigenvalue {min:.3e}")));
            }
        }
        let trace = matrix.trace().re;
        if !(trace >= -TRACE_TOL && trace <= 1.0 + TRACE_TOL) {
            return Err(CombError::BadState(format!("trace {trace} outside [0, 1]")));
        }
        Ok(DensityOperator { matrix, dims })
    }

    /// Single-leg constructor.
    pub fn single(matrix: ComplexMatrix) -> Result<Self, CombError> {
        let dims = SubsystemDims::new(vec![matrix.rows()])?;
        Self::new(matrix, dims)
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn dims(&self) -> &SubsystemDims {
        &self.dims
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }
}

/// Choi matrix of a process, with interleaved `(i_k, o_k)` legs.
#[derive(Clone, Debug)]
pub struct ChoiMatrix {
    matrix: ComplexMatrix,
    legs: SubsystemDims,
}

impl ChoiMatrix {
    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn legs(&self) -> &SubsystemDims {
        &self.legs
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    /// Copy rescaled to unit trace.
    pub fn normalized(&self) -> ComplexMatrix {
        self.matrix.scaled_real(1.0 / self.trace())
    }

    pub fn purity(&self) -> f64 {
        let t = self.trace();
        self.matrix.frobenius_norm().powi(2) / (t * t)
    }
}

/// Completely positive trace-nonincreasing map in Kraus form.
#[derive(Clone, Debug)]
pub struct KrausMap {
    kraus: Vec<ComplexMatrix>,
    in_dim: usize,
    out_dim: usize,
}

impl KrausMap {
    pub fn new(kraus: Vec<ComplexMatrix>) -> Result<Self, CombError> {
        let first = kraus.first().ok_or_else(|| CombError::BadKraus("empty Kraus list".into()))?;
        let (out_dim, in_dim) = (first.rows(), first.cols());
        if kraus.iter().any(|k| k.rows() != out_dim || k.cols() != in_dim) {
            return Err(CombError::BadKraus("inconsistent Kraus operator shapes".into()));
        }
        // trace-nonincreasing: sum K^dag K <= I
        let mut gram = ComplexMatrix::zeros(in_dim, in_dim);
        for k in &kraus {
            gram = gram.add(&k.adjoint().mul(k));
        }
        let (values, _) = linalg::hermitian_eig(&gram)?;
        if let Some(&max) = values.first() {
            if max > 1.0 + TRACE_TOL {
                return Err(CombError::BadKraus(format!(
                    "sum of K^dag K has eigenvalue {max}, map increases trace"
                )));
            }
        }
        Ok(KrausMap { kraus, in_dim, out_dim })
    }

    pub fn identity(dim: usize) -> Self {
        KrausMap { kraus: vec![ComplexMatrix::identity(dim)], in_dim: dim, out_dim: dim }
    }

    /// Measure with `effect`, then prepare `state`: `rho -> tr(E rho) sigma`.
    pub fn measure_prepare(
        effect: &ComplexMatrix,
        state: &ComplexMatrix,
    ) -> Result<Self, CombError> {
        let root_e = linalg::psd_sqrt(effect)?;
        let root_s = linalg::psd_sqrt(state)?;
        let d_in = effect.rows();
        let d_out = state.rows();
        let mut kraus = Vec::with_capacity(d_in * d_out);
        for m in 0..d_out {
            for n in 0..d_in {
                // sqrt(sigma) |m><n| sqrt(E)
                let op = ComplexMatrix::from_fn(d_out, d_in, |r, c| {
                    root_s.get(r, m) * root_e.get(n, c)
                });
                kraus.push(op);
            }
        }
        KrausMap::new(kraus)
    }

    pub fn kraus(&self) -> &[ComplexMatrix] {
        &self.kraus
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Applies the map to `rho`.
    pub fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.out_dim, self.out_dim);
        for k in &self.kraus {
            out = out.add(&k.mul(rho).mul(&k.adjoint()));
        }
        out
    }
}

/// An `N`-step process: validated dimensions plus one isometry per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CombJson", into = "CombJson")]
pub struct QuantumComb {
    dims: CombDims,
    isometries: Vec<Isometry>,
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct CombJson {
    dims: CombDims,
    isometries: Vec<ComplexMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl From<QuantumComb> for CombJson {
    fn from(c: QuantumComb) -> Self {
        CombJson {
            dims: c.dims,
            isometries: c.isometries.into_iter().map(|v| v.matrix).collect(),
            seed: c.seed,
        }
    }
}

impl TryFrom<CombJson> for QuantumComb {
    type Error = String;

    fn try_from(j: CombJson) -> Result<Self, String> {
        QuantumComb::from_matrices(j.dims, j.isometries, j.seed).map_err(|e| e.to_string())
    }
}

impl QuantumComb {
    pub fn new(dims: CombDims, isometries: Vec<Isometry>) -> Result<Self, CombError> {
        if isometries.len() != dims.steps() {
            return Err(CombError::BadShape(format!(
                "{} isometries for {} steps",
                isometries.len(),
                dims.steps()
            )));
        }
        for (k, v) in isometries.iter().enumerate() {
            let expect = (
                dims.in_dims()[k],
                dims.out_dims()[k],
                dims.anc_dims()[k],
                dims.anc_dims()[k + 1],
            );
            let got = (v.in_dim(), v.out_dim(), v.anc_in(), v.anc_out());
            if expect != got {
                return Err(CombError::DimensionMismatch(format!(
                    "step {k}: isometry legs {got:?} do not match dims {expect:?}"
                )));
            }
        }
        Ok(QuantumComb { dims, isometries, seed: None })
    }

    pub fn from_matrices(
        dims: CombDims,
        matrices: Vec<ComplexMatrix>,
        seed: Option<u64>,
    ) -> Result<Self, CombError> {
        if matrices.len() != dims.steps() {
            return Err(CombError::BadShape(format!(
                "{} isometries for {} steps",
                matrices.len(),
                dims.steps()
            )));
        }
        let isometries = matrices
            .into_iter()
            .enumerate()
            .map(|(k, m)| {
                Isometry::new(
                    m,
                    dims.in_dims()[k],
                    dims.out_dims()[k],
                    dims.anc_dims()[k],
                    dims.anc_dims()[k + 1],
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut comb = QuantumComb::new(dims, isometries)?;
        comb.seed = seed;
        Ok(comb)
    }

    pub fn dims(&self) -> &CombDims {
        &self.dims
    }

    pub fn isometries(&self) -> &[Isometry] {
        &self.isometries
    }

    pub fn isometry(&self, k: usize) -> &Isometry {
        &self.isometries[k]
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn steps(&self) -> usize {
        self.dims.steps()
    }
}

/// SHA-256 of the canonical JSON serialization, as lowercase hex.
pub fn comb_hash(comb: &QuantumComb) -> String {
    let bytes = serde_json::to_vec(comb).expect("comb serialization cannot fail");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Haar-ish random isometry: complex Gaussian entries, then thin QR.
/// Deterministic for a fixed `(rows, cols, seed)`.
pub fn random_isometry(rows: usize, cols: usize, seed: u64) -> Result<ComplexMatrix, CombError> {
    if rows < cols || cols == 0 {
        return Err(CombError::BadShape(format!(
            "isometry needs rows >= cols >= 1, got {rows}x{cols}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = ComplexMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal))
    });
    Ok(linalg::qr_orthonormalize(&g)?)
}

/// Random comb over the given dimensions; step `k` uses a subseed derived
/// from `(seed, k)`.
pub fn random_comb(dims: &CombDims, seed: u64) -> Result<QuantumComb, CombError> {
    let matrices = (0..dims.steps())
        .map(|k| {
            random_isometry(dims.isometry_rows(k), dims.isometry_cols(k), mix_seed(seed, k as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    QuantumComb::from_matrices(dims.clone(), matrices, Some(seed))
}

/// SplitMix64-style subseed derivation; stable across platforms.
pub(crate) fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Applies one step: `V rho V^dag` on the `(i, A_in)` space.
pub fn step_apply(v: &Isometry, rho: &DensityOperator) -> Result<DensityOperator, CombError> {
    if rho.matrix().rows() != v.matrix().cols() {
        return Err(CombError::DimensionMismatch(format!(
            "state dimension {} does not match isometry input {}",
            rho.matrix().rows(),
            v.matrix().cols()
        )));
    }
    let out = v.apply_raw(rho.matrix());
    let dims = SubsystemDims::new(vec![v.out_dim(), v.anc_out()])?;
    DensityOperator::new(out, dims)
}

/// Runs a state through the whole comb.
///
/// `inputs[k]` is the fresh state fed into step `k`; `interleavers[k]` (one
/// per gap, length `N-1`) optionally consumes output `o_k` and feeds the
/// result forward as input `i_{k+1}`. At each gap exactly one of the two must
/// be present. Outputs that no interleaver consumed accumulate, so the result
/// lives on the surviving output legs in time order; the final ancilla is
/// traced out.
pub fn comb_apply(
    comb: &QuantumComb,
    inputs: &[Option<DensityOperator>],
    interleavers: &[Option<KrausMap>],
) -> Result<DensityOperator, CombError> {
    let n = comb.steps();
    let dims = comb.dims();
    if inputs.len() != n {
        return Err(CombError::BadShape(format!("expected {n} input slots, got {}", inputs.len())));
    }
    if interleavers.len() + 1 != n {
        return Err(CombError::BadShape(format!(
            "expected {} interleaver slots, got {}",
            n - 1,
            interleavers.len()
        )));
    }

    let first = inputs[0]
        .as_ref()
        .ok_or_else(|| CombError::BadIndex("inputs[0] must be present".into()))?;
    if first.matrix().rows() != dims.in_dims()[0] {
        return Err(CombError::DimensionMismatch(format!(
            "inputs[0] has dimension {}, step 0 expects {}",
            first.matrix().rows(),
            dims.in_dims()[0]
        )));
    }

    // legs: (history..., current_input, ancilla); A_0 is trivial so it is
    // represented implicitly until the first step is applied.
    let mut legs: Vec<usize> = vec![dims.in_dims()[0], 1];
    let mut state = kron(first.matrix(), &ComplexMatrix::identity(1));

    for k in 0..n {
        let hist: usize = legs[..legs.len() - 2].iter().product();
        let embedded = kron(&ComplexMatrix::identity(hist), comb.isometry(k).matrix());
        state = embedded.mul(&state).mul(&embedded.adjoint());
        let ll = legs.len();
        legs[ll - 2] = dims.out_dims()[k];
        legs[ll - 1] = dims.anc_dims()[k + 1];

        if k + 1 < n {
            match (&interleavers[k], &inputs[k + 1]) {
                (Some(map), None) => {
                    if map.in_dim() != dims.out_dims()[k] || map.out_dim() != dims.in_dims()[k + 1] {
                        return Err(CombError::DimensionMismatch(format!(
                            "gap {k}: interleaver maps {} -> {}, need {} -> {}",
                            map.in_dim(),
                            map.out_dim(),
                            dims.out_dims()[k],
                            dims.in_dims()[k + 1]
                        )));
                    }
                    let at = legs.len() - 2;
                    let next_dim = state.rows() / map.in_dim() * map.out_dim();
                    let mut next = ComplexMatrix::zeros(next_dim, next_dim);
                    for op in map.kraus() {
                        let embedded = linalg::embed_at(op, &legs, at);
                        next = next.add(&embedded.mul(&state).mul(&embedded.adjoint()));
                    }
                    state = next;
                    legs[at] = dims.in_dims()[k + 1];
                }
                (None, Some(fresh)) => {
                    if fresh.matrix().rows() != dims.in_dims()[k + 1] {
                        return Err(CombError::DimensionMismatch(format!(
                            "inputs[{}] has dimension {}, step {} expects {}",
                            k + 1,
                            fresh.matrix().rows(),
                            k + 1,
                            dims.in_dims()[k + 1]
                        )));
                    }
                    // (hist, o_k, A) (x) i -> reorder to (hist, o_k, i, A)
                    state = kron(&state, fresh.matrix());
                    legs.push(dims.in_dims()[k + 1]);
                    let l = legs.len();
                    let mut perm: Vec<usize> = (0..l).collect();
                    perm.swap(l - 1, l - 2); // i before A
                    state = permute_legs_mat(&state, &legs, &perm);
                    legs.swap(l - 1, l - 2);
                }
                (Some(_), Some(_)) => {
                    return Err(CombError::BadIndex(format!(
                        "gap {k}: both an interleaver and a fresh input were supplied"
                    )));
                }
                (None, None) => {
                    return Err(CombError::BadIndex(format!(
                        "gap {k}: neither an interleaver nor a fresh input was supplied"
                    )));
                }
            }
        }
    }

    // trace out the final ancilla (last leg)
    let full_dims = SubsystemDims::new(legs.clone())?;
    let keep: Vec<usize> = (0..legs.len() - 1).collect();
    let reduced = partial_trace(&state, &full_dims, &keep)?;
    let out_dims = SubsystemDims::new(legs[..legs.len() - 1].to_vec())?;
    DensityOperator::new(reduced, out_dims)
}

/// Permutes tensor legs of an operator (both row and column indices).
pub(crate) fn permute_legs_mat(
    m: &ComplexMatrix,
    dims: &[usize],
    perm: &[usize],
) -> ComplexMatrix {
    let n: usize = dims.iter().product();
    debug_assert_eq!(m.rows(), n);
    // row permutation applied to an identity-indexed basis: build the
    // permuted matrix directly through flat-index maps.
    let out_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let in_strides = linalg::strides_of(dims);
    let mut map = vec![0usize; n];
    let mut multi = vec![0usize; dims.len()];
    for (out_idx, slot) in map.iter_mut().enumerate() {
        linalg::decompose_into(out_idx, &out_dims, &mut multi);
        let mut in_idx = 0;
        for (j, &p) in perm.iter().enumerate() {
            in_idx += multi[j] * in_strides[p];
        }
        *slot = in_idx;
    }
    ComplexMatrix::from_fn(n, n, |r, c| m.get(map[r], map[c]))
}

/// The process Choi matrix, built by entangling each input leg with a
/// reference and pushing the comb side through the isometries as a pure
/// state; the final ancilla is traced out at the end.
pub fn choi_of_comb(comb: &QuantumComb, cap: Option<usize>) -> Result<ChoiMatrix, CombError> {
    let (psi, front, anc) = choi_vector(comb, cap.unwrap_or(DEFAULT_CHOI_CAP))?;
    // Choi = Psi Psi^dag with Psi reshaped (front x anc)
    let mut choi = ComplexMatrix::zeros(front, front);
    for r in 0..front {
        for c in 0..front {
            let mut acc = C64::new(0.0, 0.0);
            for a in 0..anc {
                acc += psi[r * anc + a] * psi[c * anc + a].conj();
            }
            choi.set(r, c, acc);
        }
    }
    Ok(ChoiMatrix { matrix: choi, legs: comb.dims().choi_legs() })
}

/// Purity `tr(Choi^2) / tr(Choi)^2` of the process Choi matrix, computed from
/// the pure-state form without materializing the Choi matrix.
pub fn comb_purity(comb: &QuantumComb, cap: Option<usize>) -> Result<f64, CombError> {
    let (psi, front, anc) = choi_vector(comb, cap.unwrap_or(DEFAULT_CHOI_CAP))?;
    // gram[a][b] = sum_f conj(psi[f,a]) psi[f,b]; tr(Choi^2) = ||gram||_F^2
    let mut gram = vec![C64::new(0.0, 0.0); anc * anc];
    for f in 0..front {
        let row = &psi[f * anc..(f + 1) * anc];
        for a in 0..anc {
            for b in 0..anc {
                gram[a * anc + b] += row[a].conj() * row[b];
            }
        }
    }
    let trace: f64 = (0..anc).map(|a| gram[a * anc + a].re).sum();
    let purity_num: f64 = gram.iter().map(|z| z.norm_sqr()).sum();
    Ok(purity_num / (trace * trace))
}

/// Shared pure-state construction for `choi_of_comb` and `comb_purity`.
/// Returns `(psi, front_dim, anc_dim)` where `psi` is row-major
/// `(front, anc)` with `front` the interleaved `(i_0, o_0, ...)` reference
/// and output legs.
fn choi_vector(comb: &QuantumComb, cap: usize) -> Result<(Vec<C64>, usize, usize), CombError> {
    let dims = comb.dims();
    let choi_dim = dims.choi_dim();
    if choi_dim > cap {
        return Err(CombError::ChoiTooLarge { dim: choi_dim, cap });
    }
    let n = dims.steps();

    // legs: interleaved refs/outputs so far, then (current input, ancilla)
    let d0 = dims.in_dims()[0];
    let mut legs: Vec<usize> = vec![d0, d0, 1];
    let mut psi = vec![C64::new(0.0, 0.0); d0 * d0];
    for j in 0..d0 {
        psi[j * d0 + j] = C64::new(1.0, 0.0); // sum_j |j>_ref |j>_in
    }

    for k in 0..n {
        // apply V^(k) on the trailing (input, ancilla) composite
        let v = comb.isometry(k).matrix();
        let front: usize = legs[..legs.len() - 2].iter().product();
        let in_dim = v.cols();
        let out_dim = v.rows();
        debug_assert_eq!(psi.len(), front * in_dim);
        let mut next = vec![C64::new(0.0, 0.0); front * out_dim];
        for f in 0..front {
            let src = &psi[f * in_dim..(f + 1) * in_dim];
            let dst = &mut next[f * out_dim..(f + 1) * out_dim];
            for r in 0..out_dim {
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..in_dim {
                    acc += v.get(r, c) * src[c];
                }
                dst[r] = acc;
            }
        }
        psi = next;
        let ll = legs.len();
        legs[ll - 2] = dims.out_dims()[k];
        legs[ll - 1] = dims.anc_dims()[k + 1];

        if k + 1 < n {
            let d = dims.in_dims()[k + 1];
            // append the next entangled pair: legs become
            // (..., o_k, A, r, i) -> permute to (..., o_k, r, i, A)
            let mut grown = vec![C64::new(0.0, 0.0); psi.len() * d * d];
            for (idx, val) in psi.iter().enumerate() {
                if *val == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..d {
                    grown[(idx * d + j) * d + j] = *val;
                }
            }
            legs.push(d);
            legs.push(d);
            let l = legs.len();
            // legs currently: [..., o_k, A, r, i]; target: [..., o_k, r, i, A]
            let mut perm: Vec<usize> = (0..l).collect();
            perm[l - 3] = l - 2;
            perm[l - 2] = l - 1;
            perm[l - 1] = l - 3;
            psi = permute_legs_vec(&grown, &legs, &perm);
            let reordered: Vec<usize> = perm.iter().map(|&p| legs[p]).collect();
            legs = reordered;
        }
    }

    let anc = *legs.last().unwrap();
    let front = psi.len() / anc;
    debug_assert_eq!(front, choi_dim);
    Ok((psi, front, anc))
}

/// The comb made of the first `k` steps (`1 <= k <= N`).
pub fn truncated_comb(comb: &QuantumComb, k: usize) -> Result<QuantumComb, CombError> {
    if k == 0 || k > comb.steps() {
        return Err(CombError::BadIndex(format!(
            "truncation length {k} outside 1..={}",
            comb.steps()
        )));
    }
    let dims = CombDims::new(
        comb.dims().in_dims()[..k].to_vec(),
        comb.dims().out_dims()[..k].to_vec(),
        comb.dims().anc_dims()[..=k].to_vec(),
    )?;
    QuantumComb::new(dims, comb.isometries()[..k].to_vec())
}

/// Rotates the ancilla gap after step `k` by the unitary `u`:
/// `V^(k) <- (I (x) u) V^(k)`, `V^(k+1) <- V^(k+1) (I (x) u^dag)`.
/// Observable behavior of the comb is unchanged.
pub fn gauge_transform(
    comb: &QuantumComb,
    k: usize,
    u: &ComplexMatrix,
) -> Result<QuantumComb, CombError> {
    if k + 1 >= comb.steps() {
        return Err(CombError::BadIndex(format!(
            "gap index {k} outside 0..={}",
            comb.steps().saturating_sub(2)
        )));
    }
    let d_anc = comb.dims().anc_dims()[k + 1];
    if !u.is_square() || u.rows() != d_anc {
        return Err(CombError::DimensionMismatch(format!(
            "gauge unitary is {}x{}, ancilla gap has dimension {d_anc}",
            u.rows(),
            u.cols()
        )));
    }
    if u.mul(&u.adjoint()).sub(&ComplexMatrix::identity(d_anc)).frobenius_norm() > 1e-10 {
        return Err(CombError::NotUnitary);
    }
    let mut matrices: Vec<ComplexMatrix> =
        comb.isometries().iter().map(|v| v.matrix().clone()).collect();
    let left = kron(&ComplexMatrix::identity(comb.dims().out_dims()[k]), u);
    matrices[k] = left.mul(&matrices[k]);
    let right = kron(&ComplexMatrix::identity(comb.dims().in_dims()[k + 1]), &u.adjoint());
    matrices[k + 1] = matrices[k + 1].mul(&right);
    QuantumComb::from_matrices(comb.dims().clone(), matrices, comb.seed())
}
