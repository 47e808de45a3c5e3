//! Stepwise reconstruction of a comb from sequential preparation and
//! measurement statistics.
//!
//! An experiment on an `N`-step process fixes a preparation index per step
//! (`alpha`) and an effect index per step (`beta`). Everything the first `t+1`
//! steps contribute is folded into a temporary state
//!
//! ```text
//! eta^(t) = rho^(t+1) (x) Tr_o[(E_t (x) I) V_t eta^(t-1) V_t^dag],
//! eta^(-1) = rho^(0),
//! ```
//!
//! carried on the next input together with the ancilla. The recovery loop
//! alternates between designing a set of experiment prefixes whose temporary
//! states span the operator space (so the next isometry is identifiable),
//! and fitting that isometry by least squares on the recorded probabilities
//! over the Stiefel manifold.
//!
//! Designs are greedy and deterministic: candidate prefixes are scanned in
//! lexicographic order and kept exactly when they raise the numerical rank of
//! the collected temporary states. When fitting from a file of records rather
//! than a live simulator, candidates are additionally restricted to prefixes
//! the records actually cover, so a re-derived design never asks for data
//! that was not taken.

pub mod instrument;
pub mod metrics;

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{self, BoundError};
use crate::comb::{mix_seed, random_isometry, CombDims, CombError, DensityOperator, Isometry, QuantumComb};
use crate::linalg::{self, ComplexMatrix, SubsystemDims, C64};
use crate::stiefel::{self, OptimizeError, OptimizerConfig, StiefelError, StiefelPoint};

/// Relative singular-value cutoff deciding linear independence of temporary
/// states during design.
pub const DESIGN_RANK_TOL: f64 = 1e-8;
/// A preparation must carry unit trace to this tolerance.
pub const PREP_TRACE_TOL: f64 = 1e-10;
/// Effect eigenvalues may leave `[0, 1]` by this much.
pub const EFFECT_TOL: f64 = 1e-10;
/// A designated completeness group of effects must sum to `I` to this.
pub const COMPLETENESS_TOL: f64 = 1e-9;
/// Default worker count for cost/gradient partitioning.
pub const DEFAULT_WORKERS: usize = 4;

#[derive(Debug, Error)]
pub enum TomoError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{what} index {index} out of range for {len}")]
    BadIndex { what: &'static str, index: usize, len: usize },
    #[error("design for step {step} reached rank {achieved} of the required {target}")]
    RankDeficientDesign { step: usize, achieved: usize, target: usize },
    #[error("bad design: {0}")]
    BadDesign(String),
    #[error("misaligned inputs: {0}")]
    Misalignment(String),
    #[error("bad set: {0}")]
    BadSet(String),
    #[error("map is not completely positive: {0}")]
    NotCp(String),
    #[error("map increases trace: {0}")]
    NotTni(String),
    #[error("no record for alpha {alpha:?}, beta {beta:?}")]
    MissingRecord { alpha: Vec<usize>, beta: Vec<usize> },
    #[error("bad input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Comb(#[from] CombError),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error(transparent)]
    Stiefel(#[from] StiefelError),
    #[error(transparent)]
    Bound(#[from] BoundError),
}

fn flatten_opt_error(e: OptimizeError<TomoError>) -> TomoError {
    match e {
        OptimizeError::Callback(t) => t,
        OptimizeError::Stiefel(s) => TomoError::Stiefel(s),
    }
}

/// Preparations available on one step's input. States are unit-trace; the
/// achieved vectorized rank is recorded so deficient sets can still be
/// constructed and fail later, at design time, where the contract puts it.
#[derive(Clone, Debug)]
pub struct PreparationSet {
    step: usize,
    states: Vec<DensityOperator>,
    rank: usize,
}

impl PreparationSet {
    pub fn new(step: usize, states: Vec<DensityOperator>) -> Result<Self, TomoError> {
        let first = states
            .first()
            .ok_or_else(|| TomoError::BadSet("preparation set is empty".into()))?;
        let dim = first.matrix().rows();
        if states.iter().any(|s| s.matrix().rows() != dim) {
            return Err(TomoError::BadSet("preparations have mixed dimensions".into()));
        }
        for (i, s) in states.iter().enumerate() {
            if (s.trace() - 1.0).abs() > PREP_TRACE_TOL {
                return Err(TomoError::BadSet(format!(
                    "preparation {i} has trace {}, want 1",
                    s.trace()
                )));
            }
        }
        let mats: Vec<ComplexMatrix> = states.iter().map(|s| s.matrix().clone()).collect();
        let rank = linalg::numerical_rank(&mats, DESIGN_RANK_TOL)?;
        Ok(PreparationSet { step, states, rank })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn states(&self) -> &[DensityOperator] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Dimension of the input the states prepare.
    pub fn dim(&self) -> usize {
        self.states[0].matrix().rows()
    }

    /// Achieved vectorized rank; `dim^2` means tomographically complete.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_complete(&self) -> bool {
        self.rank == self.dim() * self.dim()
    }

    /// Copy relabeled to another step.
    pub fn at_step(&self, step: usize) -> Self {
        PreparationSet { step, ..self.clone() }
    }
}

/// Effects available on one step's output, each `0 <= E <= I`. An optional
/// completeness group marks a subset summing to the identity, used by
/// probability-conservation checks.
#[derive(Clone, Debug)]
pub struct MeasurementSet {
    step: usize,
    effects: Vec<ComplexMatrix>,
    group: Option<Vec<usize>>,
    rank: usize,
}

impl MeasurementSet {
    pub fn new(
        step: usize,
        effects: Vec<ComplexMatrix>,
        group: Option<Vec<usize>>,
    ) -> Result<Self, TomoError> {
        let first = effects
            .first()
            .ok_or_else(|| TomoError::BadSet("measurement set is empty".into()))?;
        let dim = first.rows();
        for (i, e) in effects.iter().enumerate() {
            if !e.is_square() || e.rows() != dim {
                return Err(TomoError::BadSet(format!("effect {i} is not {dim}x{dim}")));
            }
            if !e.is_hermitian(linalg::HERMITIAN_TOL) {
                return Err(TomoError::BadSet(format!("effect {i} is not Hermitian")));
            }
            let (values, _) = linalg::hermitian_eig(e)?;
            let (max, min) = (values[0], values[values.len() - 1]);
            if min < -EFFECT_TOL || max > 1.0 + EFFECT_TOL {
                return Err(TomoError::BadSet(format!(
                    "effect {i} has spectrum [{min:.3e}, {max:.3e}] outside [0, 1]"
                )));
            }
        }
        if let Some(g) = &group {
            let mut sum = ComplexMatrix::zeros(dim, dim);
            for &i in g {
                let e = effects.get(i).ok_or(TomoError::BadIndex {
                    what: "completeness group effect",
                    index: i,
                    len: effects.len(),
                })?;
                sum = sum.add(e);
            }
            let defect = sum.max_abs_diff(&ComplexMatrix::identity(dim));
            if defect > COMPLETENESS_TOL {
                return Err(TomoError::BadSet(format!(
                    "completeness group misses the identity by {defect:.3e}"
                )));
            }
        }
        let rank = linalg::numerical_rank(&effects, DESIGN_RANK_TOL)?;
        Ok(MeasurementSet { step, effects, group, rank })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn effects(&self) -> &[ComplexMatrix] {
        &self.effects
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.effects[0].rows()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_complete(&self) -> bool {
        self.rank == self.dim() * self.dim()
    }

    /// Indices of the designated effects summing to `I`, when one was given.
    pub fn completeness_group(&self) -> Option<&[usize]> {
        self.group.as_deref()
    }

    pub fn at_step(&self, step: usize) -> Self {
        MeasurementSet { step, ..self.clone() }
    }
}

/// The single-qubit simulation sets: projectors onto the -X, +X, +Y
/// eigenstates and `|0>`, used both as preparations and as effects. The first
/// two effects sum to the identity and form the completeness group.
pub fn default_single_qubit_sets() -> (PreparationSet, MeasurementSet) {
    let c = C64::new;
    let mats = [
        ComplexMatrix::from_rows(&[
            vec![c(0.5, 0.0), c(-0.5, 0.0)],
            vec![c(-0.5, 0.0), c(0.5, 0.0)],
        ]),
        ComplexMatrix::from_rows(&[
            vec![c(0.5, 0.0), c(0.5, 0.0)],
            vec![c(0.5, 0.0), c(0.5, 0.0)],
        ]),
        ComplexMatrix::from_rows(&[
            vec![c(0.5, 0.0), c(0.0, -0.5)],
            vec![c(0.0, 0.5), c(0.5, 0.0)],
        ]),
        ComplexMatrix::from_rows(&[vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(0.0, 0.0)]]),
    ];
    let states = mats
        .iter()
        .map(|m| DensityOperator::single(m.clone()).expect("fixed projectors are valid states"))
        .collect();
    let preps = PreparationSet::new(0, states).expect("default preparations are well formed");
    let meas = MeasurementSet::new(0, mats.to_vec(), Some(vec![0, 1]))
        .expect("default effects are well formed");
    (preps, meas)
}

/// One experiment's indices and its observed outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
    #[serde(flatten)]
    pub outcome: Outcome,
}

/// Exact probability, or a binomial count at a known shot budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Outcome {
    Exact { prob: f64 },
    Sampled { counts: u64, shots: u64 },
}

impl ExperimentRecord {
    /// The estimated probability `p~` this record contributes to the cost.
    pub fn probability(&self) -> f64 {
        match self.outcome {
            Outcome::Exact { prob } => prob,
            Outcome::Sampled { counts, shots } => counts as f64 / shots as f64,
        }
    }

    pub fn validate(&self) -> Result<(), TomoError> {
        if self.alpha.len() != self.beta.len() || self.alpha.is_empty() {
            return Err(TomoError::BadDesign(format!(
                "record has {} alpha and {} beta indices",
                self.alpha.len(),
                self.beta.len()
            )));
        }
        match self.outcome {
            Outcome::Exact { prob } => {
                if !(0.0..=1.0).contains(&prob) {
                    return Err(TomoError::BadDesign(format!("probability {prob} outside [0, 1]")));
                }
            }
            Outcome::Sampled { counts, shots } => {
                if shots == 0 || counts > shots {
                    return Err(TomoError::BadDesign(format!(
                        "counts {counts} over shots {shots}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Recorded probabilities indexed by experiment prefix, for re-deriving
/// designs against data that was already taken.
#[derive(Clone, Debug, Default)]
pub struct RecordPool {
    map: HashMap<(Vec<usize>, Vec<usize>), f64>,
}

impl RecordPool {
    pub fn new(records: &[ExperimentRecord]) -> Result<Self, TomoError> {
        let mut map = HashMap::with_capacity(records.len());
        for r in records {
            r.validate()?;
            map.insert((r.alpha.clone(), r.beta.clone()), r.probability());
        }
        Ok(RecordPool { map })
    }

    pub fn probability(&self, alpha: &[usize], beta: &[usize]) -> Option<f64> {
        self.map.get(&(alpha.to_vec(), beta.to_vec())).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Memoized temporary states, keyed by `(level, alpha prefix, beta prefix)`.
///
/// Entries assume a fixed isometry prefix: reuse one cache per recovery run
/// (the prefix only grows there, and settled levels never change) and never
/// share a cache between combs.
#[derive(Debug, Default)]
pub struct TempStateCache {
    map: HashMap<(usize, Vec<usize>, Vec<usize>), DensityOperator>,
}

impl TempStateCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }
}

/// Temporary state after consuming every isometry in `prefix`, living on the
/// next input together with the ancilla. Uses `alpha[..=t+1]` and
/// `beta[..=t]` where `t + 1 = prefix.len()`; longer slices are fine.
pub fn temp_state(
    prefix: &[Isometry],
    preps: &[PreparationSet],
    meas: &[MeasurementSet],
    alpha: &[usize],
    beta: &[usize],
    cache: &mut TempStateCache,
) -> Result<DensityOperator, TomoError> {
    let level = prefix.len();
    if alpha.len() < level + 1 || beta.len() < level {
        return Err(TomoError::BadDesign(format!(
            "prefix of {level} isometries needs {} alpha and {level} beta indices, got {} and {}",
            level + 1,
            alpha.len(),
            beta.len()
        )));
    }
    if preps.len() < level + 1 || meas.len() < level {
        return Err(TomoError::Misalignment(format!(
            "prefix of {level} isometries needs sets for steps 0..={level}"
        )));
    }

    // deepest already-cached level, then extend forward
    let mut start = 0;
    let mut eta: Option<DensityOperator> = None;
    for l in (0..=level).rev() {
        let key = (l, alpha[..=l].to_vec(), beta[..l].to_vec());
        if let Some(hit) = cache.map.get(&key) {
            eta = Some(hit.clone());
            start = l;
            break;
        }
    }
    let mut eta = match eta {
        Some(e) => e,
        None => {
            let base = fresh_state(preps, 0, alpha[0])?.clone();
            cache.map.insert((0, alpha[..1].to_vec(), Vec::new()), base.clone());
            base
        }
    };

    for t in start..level {
        let v = &prefix[t];
        if v.matrix().cols() != eta.matrix().rows() {
            return Err(TomoError::DimensionMismatch(format!(
                "isometry {t} expects input dimension {}, temporary state has {}",
                v.matrix().cols(),
                eta.matrix().rows()
            )));
        }
        let effect = effect_at(meas, t, beta[t])?;
        if effect.rows() != v.out_dim() {
            return Err(TomoError::DimensionMismatch(format!(
                "effect at step {t} is {}-dimensional, output is {}",
                effect.rows(),
                v.out_dim()
            )));
        }
        let fresh = fresh_state(preps, t + 1, alpha[t + 1])?;

        let mid = v.matrix().mul(eta.matrix()).mul(&v.matrix().adjoint());
        let anc = v.anc_out();
        let weighted = effect_times(effect, &mid, anc);
        let legs = SubsystemDims::new(vec![v.out_dim(), anc])?;
        let reduced = linalg::partial_trace(&weighted, &legs, &[1])?;
        let next = linalg::kron(fresh.matrix(), &reduced);
        let next_dims = SubsystemDims::new(vec![fresh.matrix().rows(), anc])?;
        eta = DensityOperator::new(next, next_dims)?;
        cache
            .map
            .insert((t + 1, alpha[..t + 2].to_vec(), beta[..t + 1].to_vec()), eta.clone());
    }
    Ok(eta)
}

fn fresh_state<'a>(
    preps: &'a [PreparationSet],
    step: usize,
    index: usize,
) -> Result<&'a DensityOperator, TomoError> {
    preps[step].states().get(index).ok_or(TomoError::BadIndex {
        what: "preparation",
        index,
        len: preps[step].len(),
    })
}

fn effect_at<'a>(
    meas: &'a [MeasurementSet],
    step: usize,
    index: usize,
) -> Result<&'a ComplexMatrix, TomoError> {
    meas[step].effects().get(index).ok_or(TomoError::BadIndex {
        what: "effect",
        index,
        len: meas[step].len(),
    })
}

/// `(E (x) I_anc) . a` without materializing the Kronecker factor.
fn effect_times(e: &ComplexMatrix, a: &ComplexMatrix, anc: usize) -> ComplexMatrix {
    let d_o = e.rows();
    let cols = a.cols();
    let mut out = ComplexMatrix::zeros(a.rows(), cols);
    for ro in 0..d_o {
        for co in 0..d_o {
            let x = e.get(ro, co);
            if x == C64::new(0.0, 0.0) {
                continue;
            }
            for s in 0..anc {
                for c in 0..cols {
                    let v = out.get(ro * anc + s, c) + x * a.get(co * anc + s, c);
                    out.set(ro * anc + s, c, v);
                }
            }
        }
    }
    out
}

/// Probability the candidate isometry assigns to measuring `effect` after
/// feeding it `eta`: `Tr[(E (x) I) W eta W^dag]`. Raw value; callers clamp to
/// `[0, 1]` for reporting.
pub fn recovered_probability(
    w: &Isometry,
    eta: &DensityOperator,
    effect: &ComplexMatrix,
) -> Result<f64, TomoError> {
    if w.matrix().cols() != eta.matrix().rows() {
        return Err(TomoError::DimensionMismatch(format!(
            "isometry takes dimension {}, state has {}",
            w.matrix().cols(),
            eta.matrix().rows()
        )));
    }
    if !effect.is_square() || effect.rows() != w.out_dim() {
        return Err(TomoError::DimensionMismatch(format!(
            "effect is {}x{}, output dimension is {}",
            effect.rows(),
            effect.cols(),
            w.out_dim()
        )));
    }
    let a = w.matrix().mul(eta.matrix());
    let b = effect_times(effect, &a, w.anc_out());
    Ok(trace_against(w.matrix(), &b))
}

/// `Re Tr[W^dag B]`.
fn trace_against(w: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    let mut acc = 0.0;
    for (wv, bv) in w.data().iter().zip(b.data()) {
        acc += (wv.conj() * bv).re;
    }
    acc
}

/// Greedy experiment design for recovering step `k`: extends the previous
/// levels' selections with every `(alpha, beta)` pair in lexicographic order,
/// keeping a candidate exactly when its temporary state raises the collected
/// numerical rank, until `d_i^2 d_A^2` independent states are held. The
/// selected prefixes are then crossed with every final effect index below
/// `d_o^2`.
///
/// With `pool` set, only prefixes whose crossed records all exist in the pool
/// are considered, so designs re-derived from recovered isometries stay
/// answerable by the data on hand.
pub fn design_experiments(
    prefix: &[Isometry],
    preps: &[PreparationSet],
    meas: &[MeasurementSet],
    k: usize,
    cache: &mut TempStateCache,
    pool: Option<&RecordPool>,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, TomoError> {
    if prefix.len() != k {
        return Err(TomoError::Misalignment(format!(
            "designing step {k} requires exactly {k} recovered isometries, got {}",
            prefix.len()
        )));
    }
    if preps.len() <= k || meas.len() <= k {
        return Err(TomoError::Misalignment(format!(
            "designing step {k} requires sets for steps 0..={k}"
        )));
    }
    let selected = selected_prefixes(prefix, preps, meas, k, cache, pool)?;
    let n_beta = meas[k].dim() * meas[k].dim();
    if meas[k].len() < n_beta {
        return Err(TomoError::BadSet(format!(
            "measurement set at step {k} has {} effects, the design crosses {n_beta}",
            meas[k].len()
        )));
    }
    let mut design = Vec::with_capacity(selected.len() * n_beta);
    for (a, b) in &selected {
        for bk in 0..n_beta {
            let mut beta = b.clone();
            beta.push(bk);
            design.push((a.clone(), beta));
        }
    }
    Ok(design)
}

/// Level-by-level greedy selection of experiment prefixes, rebuilt
/// deterministically from the ground up for the requested level.
fn selected_prefixes(
    prefix: &[Isometry],
    preps: &[PreparationSet],
    meas: &[MeasurementSet],
    level: usize,
    cache: &mut TempStateCache,
    pool: Option<&RecordPool>,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, TomoError> {
    let mut parents: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new())];
    for l in 0..=level {
        let d_i = preps[l].dim();
        let d_a = if l == 0 { 1 } else { prefix[l - 1].anc_out() };
        let target = d_i * d_i * d_a * d_a;
        let betas_ahead = meas[l].dim() * meas[l].dim();

        let mut chosen: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        let mut mats: Vec<ComplexMatrix> = Vec::new();
        let mut rank = 0usize;
        'scan: for parent in &parents {
            for a in 0..preps[l].len() {
                let beta_range = if l == 0 { 0..1 } else { 0..meas[l - 1].len() };
                for b in beta_range {
                    let mut alpha = parent.0.clone();
                    alpha.push(a);
                    let mut beta = parent.1.clone();
                    if l > 0 {
                        beta.push(b);
                    }
                    if let Some(p) = pool {
                        let covered = (0..betas_ahead).all(|bk| {
                            let mut full = beta.clone();
                            full.push(bk);
                            p.probability(&alpha, &full).is_some()
                        });
                        if !covered {
                            continue;
                        }
                    }
                    let eta = temp_state(&prefix[..l], preps, meas, &alpha, &beta, cache)?;
                    mats.push(eta.matrix().clone());
                    let r = linalg::numerical_rank(&mats, DESIGN_RANK_TOL)?;
                    if r > rank {
                        rank = r;
                        chosen.push((alpha, beta));
                        if rank == target {
                            break 'scan;
                        }
                    } else {
                        mats.pop();
                    }
                }
            }
        }
        if rank < target {
            return Err(TomoError::RankDeficientDesign { step: l, achieved: rank, target });
        }
        parents = chosen;
    }
    Ok(parents)
}

/// Runs the designed experiments against a known comb. `shots: None` stores
/// the exact probabilities; `Some(n)` draws one binomial count per record
/// from a generator seeded only by `seed`, in design order.
pub fn simulate_experiments(
    truth: &QuantumComb,
    preps: &[PreparationSet],
    meas: &[MeasurementSet],
    design: &[(Vec<usize>, Vec<usize>)],
    shots: Option<u64>,
    seed: u64,
) -> Result<Vec<ExperimentRecord>, TomoError> {
    use rand::distributions::Distribution;
    use rand::SeedableRng;

    if let Some(0) = shots {
        return Err(TomoError::BadDesign("sampled mode needs at least one shot".into()));
    }
    let n = truth.steps();
    if preps.len() != n || meas.len() != n {
        return Err(TomoError::Misalignment(format!(
            "comb has {n} steps, got {} preparation and {} measurement sets",
            preps.len(),
            meas.len()
        )));
    }
    let mut cache = TempStateCache::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(design.len());
    for (alpha, beta) in design {
        if alpha.len() != beta.len() || alpha.is_empty() || alpha.len() > n {
            return Err(TomoError::BadDesign(format!(
                "design entry has {} alpha and {} beta indices for a {n}-step comb",
                alpha.len(),
                beta.len()
            )));
        }
        let k = alpha.len() - 1;
        let eta = temp_state(&truth.isometries()[..k], preps, meas, alpha, beta, &mut cache)?;
        let effect = effect_at(meas, k, beta[k])?;
        let p = recovered_probability(truth.isometry(k), &eta, effect)?.clamp(0.0, 1.0);
        let outcome = match shots {
            None => Outcome::Exact { prob: p },
            Some(n_s) => {
                let dist = rand_distr::Binomial::new(n_s, p)
                    .map_err(|e| TomoError::BadDesign(format!("binomial setup failed: {e}")))?;
                Outcome::Sampled { counts: dist.sample(&mut rng), shots: n_s }
            }
        };
        out.push(ExperimentRecord { alpha: alpha.clone(), beta: beta.clone(), outcome });
    }
    Ok(out)
}

/// Least-squares cost of a candidate isometry against recorded probabilities,
/// with its conjugate-Wirtinger gradient `sum 2 (p - p~) (E (x) I) W eta`.
///
/// The record sum is split into `workers` contiguous chunks reduced in chunk
/// order, so the result is bitwise reproducible for a fixed worker count.
pub fn cost_and_gradient(
    w: &ComplexMatrix,
    targets: &[f64],
    etas: &[DensityOperator],
    effects: &[ComplexMatrix],
    workers: usize,
) -> Result<(f64, ComplexMatrix), TomoError> {
    if targets.len() != etas.len() || targets.len() != effects.len() {
        return Err(TomoError::Misalignment(format!(
            "{} targets, {} states, {} effects",
            targets.len(),
            etas.len(),
            effects.len()
        )));
    }
    if workers == 0 {
        return Err(TomoError::BadInput("worker count must be positive".into()));
    }
    for (i, (eta, effect)) in etas.iter().zip(effects).enumerate() {
        if eta.matrix().rows() != w.cols() {
            return Err(TomoError::DimensionMismatch(format!(
                "state {i} has dimension {}, candidate takes {}",
                eta.matrix().rows(),
                w.cols()
            )));
        }
        if !effect.is_square() || w.rows() % effect.rows() != 0 {
            return Err(TomoError::DimensionMismatch(format!(
                "effect {i} is {}x{} against {} output rows",
                effect.rows(),
                effect.cols(),
                w.rows()
            )));
        }
    }

    let n = targets.len();
    let workers = workers.min(n.max(1));
    let base = n / workers;
    let extra = n % workers;
    let partials: Vec<(f64, ComplexMatrix)> = (0..workers)
        .into_par_iter()
        .map(|wk| {
            let lo = wk * base + wk.min(extra);
            let hi = lo + base + usize::from(wk < extra);
            let mut cost = 0.0;
            let mut grad = ComplexMatrix::zeros(w.rows(), w.cols());
            for j in lo..hi {
                let anc = w.rows() / effects[j].rows();
                let a = w.mul(etas[j].matrix());
                let b = effect_times(&effects[j], &a, anc);
                let dev = trace_against(w, &b) - targets[j];
                cost += dev * dev;
                grad.axpy(C64::new(2.0 * dev, 0.0), &b);
            }
            (cost, grad)
        })
        .collect();

    let mut cost = 0.0;
    let mut grad = ComplexMatrix::zeros(w.rows(), w.cols());
    for (c, g) in partials {
        cost += c;
        grad.axpy(C64::new(1.0, 0.0), &g);
    }
    Ok((cost, grad))
}

/// Shape of the isometry a recovery step is fitting.
#[derive(Clone, Copy, Debug)]
pub struct StepShape {
    pub in_dim: usize,
    pub out_dim: usize,
    pub anc_in: usize,
    pub anc_out: usize,
}

impl StepShape {
    pub fn rows(&self) -> usize {
        self.out_dim * self.anc_out
    }

    pub fn cols(&self) -> usize {
        self.in_dim * self.anc_in
    }
}

/// What one recovery step reported.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub final_cost: f64,
    /// Riemannian gradient norm at the returned point.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Restart index that produced the returned point.
    pub restart: usize,
}

/// Fits one isometry to recorded probabilities from `n_restarts` random
/// starting points, keeping the lowest-cost result. Deterministic given
/// `seed`; ties keep the earliest restart.
pub fn recover_isometry(
    targets: &[f64],
    etas: &[DensityOperator],
    effects: &[ComplexMatrix],
    shape: StepShape,
    cfg: &OptimizerConfig,
    n_restarts: usize,
    workers: usize,
    seed: u64,
) -> Result<(Isometry, RecoveryReport), TomoError> {
    if n_restarts == 0 {
        return Err(TomoError::BadInput("need at least one restart".into()));
    }
    if shape.rows() < shape.cols() {
        return Err(TomoError::DimensionMismatch(format!(
            "no isometry maps dimension {} into dimension {}",
            shape.cols(),
            shape.rows()
        )));
    }

    let mut best: Option<(stiefel::OptimizeResult, usize)> = None;
    for restart in 0..n_restarts {
        let x0 = random_isometry(shape.rows(), shape.cols(), mix_seed(seed, restart as u64))?;
        let start = StiefelPoint::new(x0)?;
        let run = stiefel::optimize(
            &start,
            |x| cost_and_gradient(x, targets, etas, effects, workers),
            cfg,
        )
        .map_err(flatten_opt_error)?;
        let better = match &best {
            None => true,
            Some((b, _)) => run.best_cost < b.best_cost,
        };
        if better {
            best = Some((run, restart));
        }
    }
    let (run, restart) = best.expect("at least one restart ran");

    let (_, grad) = cost_and_gradient(run.point.matrix(), targets, etas, effects, workers)?;
    let grad_norm = stiefel::riemannian_grad_norm(&grad, &run.point)?;
    let report = RecoveryReport {
        final_cost: run.best_cost,
        grad_norm,
        iterations: run.iterations,
        converged: run.converged,
        restart,
    };
    let matrix = run.point.into_matrix();
    let v = Isometry::new(matrix, shape.in_dim, shape.out_dim, shape.anc_in, shape.anc_out)?;
    Ok((v, report))
}

/// Where the recovery loop gets its probabilities.
#[derive(Clone, Copy, Debug)]
pub enum DataSource<'a> {
    /// Design against the growing recovered prefix, then ask a simulator of
    /// this comb for the outcomes, exactly like running a lab.
    Simulated { truth: &'a QuantumComb, shots: Option<u64> },
    /// Replay records taken earlier; designs are restricted to what they
    /// cover.
    Records(&'a [ExperimentRecord]),
}

/// Per-step summary of a full recovery run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub design_size: usize,
    pub final_cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restart: usize,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug)]
pub struct IqctOutcome {
    pub comb: QuantumComb,
    pub reports: Vec<StepReport>,
}

/// Full stepwise recovery: for each step, design experiments from the
/// already-recovered prefix, obtain the probabilities, and fit the next
/// isometry. Intermediate combs are the prefixes of the returned one.
///
/// The model is fixed by the sets' input/output dimensions and by
/// `model_anc`, which may be smaller than the ancillas of the process that
/// produced the data; the run then completes with positive final costs
/// rather than erroring, and the costs quantify the misfit.
#[allow(clippy::too_many_arguments)]
pub fn iqct_run(
    source: DataSource,
    preps: &[PreparationSet],
    meas: &[MeasurementSet],
    model_anc: &[usize],
    cfg: &OptimizerConfig,
    n_restarts: usize,
    workers: usize,
    seed: u64,
) -> Result<IqctOutcome, TomoError> {
    let n = preps.len();
    if n == 0 || meas.len() != n {
        return Err(TomoError::Misalignment(format!(
            "{n} preparation sets against {} measurement sets",
            meas.len()
        )));
    }
    let in_dims: Vec<usize> = preps.iter().map(|p| p.dim()).collect();
    let out_dims: Vec<usize> = meas.iter().map(|m| m.dim()).collect();
    let model_dims = CombDims::new(in_dims.clone(), out_dims.clone(), model_anc.to_vec())?;

    let pool = match source {
        DataSource::Records(records) => Some(RecordPool::new(records)?),
        DataSource::Simulated { truth, .. } => {
            if truth.dims().in_dims() != in_dims.as_slice()
                || truth.dims().out_dims() != out_dims.as_slice()
            {
                return Err(TomoError::DimensionMismatch(
                    "simulated comb and sets disagree on external dimensions".into(),
                ));
            }
            None
        }
    };

    let mut cache = TempStateCache::new();
    let mut recovered: Vec<Isometry> = Vec::with_capacity(n);
    let mut reports = Vec::with_capacity(n);

    for k in 0..n {
        let t0 = Instant::now();
        let design = design_experiments(&recovered, preps, meas, k, &mut cache, pool.as_ref())?;

        let targets: Vec<f64> = match source {
            DataSource::Simulated { truth, shots } => {
                let records = simulate_experiments(
                    truth,
                    preps,
                    meas,
                    &design,
                    shots,
                    mix_seed(seed, 2 * k as u64 + 1),
                )?;
                records.iter().map(|r| r.probability()).collect()
            }
            DataSource::Records(_) => {
                let pool = pool.as_ref().expect("records mode built a pool");
                design
                    .iter()
                    .map(|(a, b)| {
                        pool.probability(a, b).ok_or_else(|| TomoError::MissingRecord {
                            alpha: a.clone(),
                            beta: b.clone(),
                        })
                    })
                    .collect::<Result<_, _>>()?
            }
        };

        let mut etas = Vec::with_capacity(design.len());
        let mut effects = Vec::with_capacity(design.len());
        for (a, b) in &design {
            etas.push(temp_state(&recovered, preps, meas, a, b, &mut cache)?);
            effects.push(effect_at(meas, k, b[k])?.clone());
        }

        let shape = StepShape {
            in_dim: in_dims[k],
            out_dim: out_dims[k],
            anc_in: model_dims.anc_dims()[k],
            anc_out: model_dims.anc_dims()[k + 1],
        };
        let (v, rep) = recover_isometry(
            &targets,
            &etas,
            &effects,
            shape,
            cfg,
            n_restarts,
            workers,
            mix_seed(seed, 2 * k as u64),
        )?;
        reports.push(StepReport {
            step: k,
            design_size: design.len(),
            final_cost: rep.final_cost,
            grad_norm: rep.grad_norm,
            iterations: rep.iterations,
            converged: rep.converged,
            restart: rep.restart,
            elapsed_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        recovered.push(v);
    }

    let comb = QuantumComb::new(model_dims, recovered)?;
    Ok(IqctOutcome { comb, reports })
}

/// Optimizer settings for recovery runs: the default step cap with a
/// gradient threshold tight enough to push exact-data fits below 1e-8 cost.
pub fn default_recovery_config() -> OptimizerConfig {
    OptimizerConfig { delta: 1e-6, ..OptimizerConfig::default() }
}

/// Smallest truncation rank whose worst-case Hilbert-Schmidt error at this
/// normalized purity stays within `tolerance`.
pub fn minimal_final_ancilla(purity: f64, dim: usize, tolerance: f64) -> Result<usize, TomoError> {
    if !(tolerance >= 0.0) {
        return Err(TomoError::BadInput("tolerance must be nonnegative".into()));
    }
    for r in 1..=dim {
        if bounds::theorem1_bound(purity, r, dim)?.bound <= tolerance {
            return Ok(r);
        }
    }
    Ok(dim)
}
