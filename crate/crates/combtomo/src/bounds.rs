//! Rank-truncation errors and purity-driven worst-case bounds.
//!
//! For a unit-trace positive operator with spectrum `lambda` (descending),
//! keeping only the top `R` eigenspaces and redistributing the lost weight
//! uniformly over them yields the closest rank-`R` operator of the same
//! trace. Two squared-distance quantities matter here and are deliberately
//! kept separate:
//!
//! * [`truncation_distance_direct`] is the exact Hilbert-Schmidt distance of
//!   that optimal truncation, `sum_tail lambda^2 + (sum_tail lambda)^2 / R`.
//! * [`truncation_distance_paper`] is the analytic surrogate
//!   `sum_tail lambda^2 + (sum_tail lambda)^2 / R^2` that the worst-case
//!   bound is stated for. It is never larger than the direct distance and
//!   the bound machinery is calibrated against it, so the two must not be
//!   conflated.
//!
//! [`theorem1_bound`] bounds the surrogate over all unit-trace spectra whose
//! purity is at least the given value. Two extremal families drive it, both
//! parameterized by `K = ceil(1/purity)`: a "low" profile of `K-1` large
//! equal values plus a remainder, and a "high" profile of one dominant head
//! above `l - 1 >= K - 1` equal values, scanned over the support size `l`.
//! Neither family dominates the other on a fixed rank regime (despite the
//! ordering suggested by the branch names), so the exact-purity maximum
//! `S(P)` takes the larger of the two at every rank. `S` itself is not
//! monotone in purity: on each interval `[1/K, 1/(K-1)]` the low value is a
//! quadratic in `sqrt(P - 1/K)` and can rise toward the right edge. The
//! returned bound is therefore the monotone closure `max(S(P'), P' >= P)`,
//! which only requires comparing `S(P)` with the interval edges `S(1/m)`,
//! `m < K`. The worst spectrum that attains the bound is returned along with
//! the purity it lives at (`witness_purity`, equal to the query except where
//! the closure is strict).
//!
//! [`simplex_worst_case_oracle`] cross-checks the closed form by projected
//! Monte Carlo search at exactly the queried purity, so it probes `S(P)`
//! from below while the bound sits at or above `S(P)`.

use crate::comb::mix_seed;
use crate::linalg::{self, ComplexMatrix, LinalgError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Spectra are accepted with eigenvalues this far below zero.
pub const SPECTRUM_TOL: f64 = 1e-12;
/// Purity may exceed its algebraic range `[1/d, 1]` by this much.
pub const PURITY_TOL: f64 = 1e-9;
/// Target residual for projecting a sample onto the fixed-purity slice.
const PROJECTION_TOL: f64 = 1e-13;
const PROJECTION_MAX_ITERS: usize = 200;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("purity {purity} outside [{min:.6}, 1] for dimension {dim}")]
    BadPurity { purity: f64, min: f64, dim: usize },
    #[error("rank {rank} outside 1..={dim}")]
    BadRank { rank: usize, dim: usize },
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Which worst-case regime produced the bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankBranch {
    LowRank,
    HighRank,
}

impl std::fmt::Display for RankBranch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RankBranch::LowRank => write!(f, "low"),
            RankBranch::HighRank => write!(f, "high"),
        }
    }
}

/// Worst-case truncation bound together with its witness.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundResult {
    /// The purity that was asked about.
    pub purity: f64,
    pub rank: usize,
    /// Maximal surrogate distance over unit-trace spectra with purity at
    /// least `purity`; attained by `worst_spectrum`.
    pub bound: f64,
    /// Family of the attaining profile.
    pub branch: RankBranch,
    /// True when the rank sits on the seam `R = K - 1` that the two branch
    /// formulas leave unassigned; both are evaluated there.
    pub branch_gap: bool,
    /// `ceil(1/purity)`: the smallest rank a spectrum of this purity can have.
    pub k: usize,
    /// Level `beta_+(K)` of the low profile at the queried purity, when that
    /// profile admits a nontrivial truncation (`rank <= K - 1`).
    pub beta_plus: Option<f64>,
    /// Levels `beta_-(l)` at the queried purity over the scanned support
    /// sizes `l`.
    pub beta_minus_at: BTreeMap<usize, f64>,
    /// Purity of `worst_spectrum`. Equals `purity` except where the maximum
    /// over higher purities is strict; then it names the interval edge `1/m`
    /// the worst profile lives at.
    pub witness_purity: f64,
    /// A unit-trace spectrum (descending, length `dim`) attaining the bound.
    pub worst_spectrum: Vec<f64>,
}

/// The closest rank-`r` operator to `rho` of the same trace, with the exact
/// squared Hilbert-Schmidt distance computed from the matrices.
pub struct RankRApproximation {
    pub sigma: ComplexMatrix,
    pub distance: f64,
}

/// Best same-trace rank-`r` approximation: keep the top `r` eigenspaces and
/// shift each kept eigenvalue by `(lost trace)/r`.
pub fn optimal_rank_r(rho: &ComplexMatrix, r: usize) -> Result<RankRApproximation, BoundError> {
    let d = rho.rows();
    if r == 0 || r > d {
        return Err(BoundError::BadRank { rank: r, dim: d });
    }
    let (values, vectors) = linalg::hermitian_eig(rho)?;
    if values.iter().any(|&v| v < -linalg::PSD_CLIP_TOL) {
        return Err(BoundError::BadInput(format!(
            "operator has negative eigenvalue {:.3e}",
            values.last().copied().unwrap_or(0.0)
        )));
    }
    let lost: f64 = values[r..].iter().sum();
    let shift = lost / r as f64;
    let mut sigma = ComplexMatrix::zeros(d, d);
    for j in 0..r {
        let w = values[j].max(0.0) + shift;
        for row in 0..d {
            for col in 0..d {
                let contrib = vectors.get(row, j) * vectors.get(col, j).conj();
                sigma.set(row, col, sigma.get(row, col) + contrib.scale(w));
            }
        }
    }
    let distance = sigma.sub(rho).frobenius_norm().powi(2);
    Ok(RankRApproximation { sigma, distance })
}

/// Exact squared distance of the optimal same-trace rank-`r` truncation,
/// from the spectrum alone: `B + b^2 / r` with `B = sum_tail lambda^2`,
/// `b = sum_tail lambda`.
pub fn truncation_distance_direct(spectrum: &[f64], r: usize) -> Result<f64, BoundError> {
    let (tail_sq, tail) = spectrum_tail(spectrum, r)?;
    Ok(tail_sq + tail * tail / r as f64)
}

/// Analytic surrogate `B + b^2 / r^2` used by the worst-case bound. Smaller
/// than [`truncation_distance_direct`] whenever the tail is nonzero; kept as
/// its own quantity because the bound is calibrated against it.
pub fn truncation_distance_paper(spectrum: &[f64], r: usize) -> Result<f64, BoundError> {
    let (tail_sq, tail) = spectrum_tail(spectrum, r)?;
    let rf = r as f64;
    Ok(tail_sq + tail * tail / (rf * rf))
}

/// Sorts a copy descending and returns `(sum_tail lambda^2, sum_tail lambda)`.
fn spectrum_tail(spectrum: &[f64], r: usize) -> Result<(f64, f64), BoundError> {
    if spectrum.is_empty() {
        return Err(BoundError::BadInput("empty spectrum".into()));
    }
    if r == 0 || r > spectrum.len() {
        return Err(BoundError::BadRank { rank: r, dim: spectrum.len() });
    }
    if spectrum.iter().any(|v| !v.is_finite() || *v < -SPECTRUM_TOL) {
        return Err(BoundError::BadInput("spectrum entries must be finite and nonnegative".into()));
    }
    let mut sorted = spectrum.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let tail = &sorted[r..];
    Ok((tail.iter().map(|v| v * v).sum(), tail.iter().sum()))
}

/// `ceil(1/purity)` with guard digits, so a purity sitting numerically on
/// `1/K` lands on `K` rather than `K + 1`.
fn minimal_rank(purity: f64) -> usize {
    let raw = 1.0 / purity;
    let mut k = raw.ceil() as usize;
    if k > 1 && (k - 1) as f64 * purity >= 1.0 - 1e-9 {
        k -= 1;
    }
    k.max(1)
}

/// `1/x +- sqrt((purity - 1/x) / (x (x - 1)))`, the equal-value levels of the
/// extremal spectra. The argument is clipped at zero to absorb roundoff.
fn beta(purity: f64, x: f64, sign: f64) -> f64 {
    if x <= 1.0 {
        return 1.0;
    }
    let arg = ((purity - 1.0 / x) / (x * (x - 1.0))).max(0.0);
    1.0 / x + sign * arg.sqrt()
}

/// Exact-purity maximum `S(P)`: the larger of the two extremal families.
/// `k` must be `minimal_rank(purity)` clamped to `dim`.
fn family_max(purity: f64, rank: usize, k: usize, dim: usize) -> (f64, RankBranch, Vec<f64>) {
    let (bh, wh) = high_branch(purity, rank, k, dim);
    if rank + 1 <= k {
        let (bl, wl) = low_branch(purity, rank, k, dim);
        // ties go to the high profile; at interval edges the families meet
        // in the same uniform spectrum and differ only in rounding, so the
        // comparison carries a small absolute tolerance
        if bl > bh + 1e-14 {
            return (bl, RankBranch::LowRank, wl);
        }
    }
    (bh, RankBranch::HighRank, wh)
}

/// Worst-case surrogate truncation distance at rank `rank` over unit-trace
/// spectra of dimension `dim` with purity at least `purity` (see the module
/// docs for why the closure over higher purities is taken).
pub fn theorem1_bound(purity: f64, rank: usize, dim: usize) -> Result<BoundResult, BoundError> {
    if dim == 0 {
        return Err(BoundError::BadInput("dimension must be positive".into()));
    }
    if rank == 0 || rank > dim {
        return Err(BoundError::BadRank { rank, dim });
    }
    let min_purity = 1.0 / dim as f64;
    if !purity.is_finite() || purity < min_purity - PURITY_TOL || purity > 1.0 + PURITY_TOL {
        return Err(BoundError::BadPurity { purity, min: min_purity, dim });
    }
    let purity = purity.clamp(min_purity, 1.0);
    let k = minimal_rank(purity).min(dim);

    let (mut bound, mut branch, mut worst) = family_max(purity, rank, k, dim);
    let mut witness_purity = purity;
    // S only rises toward the right edge of each K-interval, so the closure
    // over [purity, 1] needs just the edge values S(1/m); nearest edge first
    // so ties resolve to the lowest admissible purity.
    for m in (2..k).rev() {
        let edge = 1.0 / m as f64;
        let cand = family_max(edge, rank, m, dim);
        if cand.0 > bound {
            bound = cand.0;
            branch = cand.1;
            worst = cand.2;
            witness_purity = edge;
        }
    }

    let beta_plus = (rank + 1 <= k).then(|| beta(purity, k as f64, 1.0));
    let mut beta_minus_at = BTreeMap::new();
    for l in rank.max(k)..=dim {
        if l > 1 {
            beta_minus_at.insert(l, beta(purity, l as f64, -1.0));
        }
    }

    Ok(BoundResult {
        purity,
        rank,
        bound: bound.max(0.0),
        branch,
        branch_gap: rank + 1 == k,
        k,
        beta_plus,
        beta_minus_at,
        witness_purity,
        worst_spectrum: worst,
    })
}

/// Worst case for ranks below the purity's minimal rank `K`: `K - 1` equal
/// levels at `beta_+(K)` plus a smaller remainder.
fn low_branch(purity: f64, rank: usize, k: usize, dim: usize) -> (f64, Vec<f64>) {
    let r = rank as f64;
    let bp = beta(purity, k as f64, 1.0);
    let bound = purity - r * bp * bp + (1.0 - r * bp).powi(2) / (r * r);
    let mut spectrum = vec![0.0; dim];
    for entry in spectrum.iter_mut().take(k.saturating_sub(1)) {
        *entry = bp;
    }
    if k >= 1 {
        spectrum[k - 1] = (1.0 - (k - 1) as f64 * bp).max(0.0);
    }
    spectrum.sort_by(|a, b| b.total_cmp(a));
    (bound, spectrum)
}

/// Worst case for ranks at or above `K`: one dominant level above `l - 1`
/// equal levels at `beta_-(l)`, maximized over the support size `l`.
fn high_branch(purity: f64, rank: usize, k: usize, dim: usize) -> (f64, Vec<f64>) {
    let r = rank as f64;
    let mut best = (0.0_f64, rank.max(k));
    for l in rank.max(k)..=dim {
        if l <= 1 {
            continue; // a single-level spectrum truncates exactly
        }
        let bm = beta(purity, l as f64, -1.0);
        let value = (l - rank) as f64 * (1.0 + (l - rank) as f64 / (r * r)) * bm * bm;
        if value > best.0 {
            best = (value, l);
        }
    }
    let (bound, l) = best;
    let mut spectrum = vec![0.0; dim];
    if l <= 1 {
        spectrum[0] = 1.0;
    } else {
        let bm = beta(purity, l as f64, -1.0);
        spectrum[0] = (1.0 - (l - 1) as f64 * bm).max(0.0);
        for entry in spectrum.iter_mut().take(l).skip(1) {
            *entry = bm;
        }
    }
    spectrum.sort_by(|a, b| b.total_cmp(a));
    (bound, spectrum)
}

/// Bound for every `(purity, rank)` pair, indexed `[purity][rank]`.
pub fn bound_table(
    purities: &[f64],
    ranks: &[usize],
    dim: usize,
) -> Result<Vec<Vec<BoundResult>>, BoundError> {
    purities
        .iter()
        .map(|&p| ranks.iter().map(|&r| theorem1_bound(p, r, dim)).collect())
        .collect()
}

/// Uniform sample from the unit simplex (descending order), via normalized
/// exponentials.
pub fn random_spectrum(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_simplex(dim, &mut rng)
}

fn sample_simplex(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            -u.ln()
        })
        .collect();
    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total;
    }
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Alternating projection of a simplex point onto the fixed-purity slice:
/// rescale the support around its centroid to hit the purity sphere, clip
/// negatives, renormalize; repeat. Entries clipped to zero stay zero, so
/// the support can only shrink. Samples that do not close the residual are
/// discarded rather than accepted with a biased purity.
fn project_to_purity(values: &mut [f64], purity: f64) -> bool {
    for _ in 0..PROJECTION_MAX_ITERS {
        let total: f64 = values.iter().sum();
        if !(total > 0.0) {
            return false;
        }
        for v in values.iter_mut() {
            *v /= total;
        }
        let s2: f64 = values.iter().map(|v| v * v).sum();
        if (s2 - purity).abs() <= PROJECTION_TOL {
            return true;
        }
        let support = values.iter().filter(|v| **v > 0.0).count();
        let centroid = 1.0 / support as f64;
        let den = s2 - centroid;
        let num = purity - centroid;
        // purity out of reach on this support: uniform is the floor
        if den <= f64::MIN_POSITIVE || num < 0.0 {
            return false;
        }
        let t = (num / den).sqrt();
        for v in values.iter_mut() {
            if *v > 0.0 {
                *v = (centroid + t * (*v - centroid)).max(0.0);
            }
        }
    }
    false
}

/// Monte Carlo maximum of the surrogate distance over the same feasible set
/// as [`theorem1_bound`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleResult {
    pub max_distance: f64,
    /// Spectrum (descending) where the maximum was seen.
    pub argmax_spectrum: Vec<f64>,
    pub samples: usize,
    pub workers: usize,
}

/// Projected Monte Carlo search for the worst spectrum: mostly fresh simplex
/// samples pushed onto the purity slice, plus a refinement phase that jitters
/// the best point seen with decaying noise. Work is split into `workers`
/// deterministic chunks with per-chunk seeds and folded in chunk order, so
/// the result depends only on `(seed, samples, workers)`, not thread timing.
pub fn simplex_worst_case_oracle(
    purity: f64,
    rank: usize,
    dim: usize,
    samples: usize,
    seed: u64,
    workers: usize,
) -> Result<OracleResult, BoundError> {
    if samples == 0 || workers == 0 {
        return Err(BoundError::BadInput("samples and workers must be positive".into()));
    }
    // validate the (purity, rank, dim) combination once up front
    theorem1_bound(purity, rank, dim)?;
    let purity = purity.clamp(1.0 / dim as f64, 1.0);

    let base = samples / workers;
    let extra = samples % workers;
    let results: Vec<(f64, Vec<f64>)> = (0..workers)
        .into_par_iter()
        .map(|w| {
            let quota = base + usize::from(w < extra);
            oracle_worker(purity, rank, dim, quota, mix_seed(seed, w as u64))
        })
        .collect();

    let mut best: (f64, Vec<f64>) = (f64::NEG_INFINITY, vec![]);
    for r in results {
        if r.0 > best.0 {
            best = r;
        }
    }
    if best.1.is_empty() {
        return Err(BoundError::BadInput(
            "no sample projected onto the purity slice; purity is at an edge of its range".into(),
        ));
    }
    Ok(OracleResult { max_distance: best.0, argmax_spectrum: best.1, samples, workers })
}

fn oracle_worker(
    purity: f64,
    rank: usize,
    dim: usize,
    quota: usize,
    seed: u64,
) -> (f64, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: (f64, Vec<f64>) = (f64::NEG_INFINITY, vec![]);
    let n_global = (quota * 7).div_ceil(10);
    let n_local = quota - n_global;

    let consider = |values: Vec<f64>, best: &mut (f64, Vec<f64>)| {
        if let Ok(d) = truncation_distance_paper(&values, rank) {
            if d > best.0 {
                let mut sorted = values;
                sorted.sort_by(|a, b| b.total_cmp(a));
                *best = (d, sorted);
            }
        }
    };

    for _ in 0..n_global {
        let mut v = sample_simplex(dim, &mut rng);
        if project_to_purity(&mut v, purity) {
            consider(v, &mut best);
        }
    }

    let mut sigma = 0.05;
    let decay_every = (n_local / 8).max(1);
    for j in 0..n_local {
        if j > 0 && j % decay_every == 0 {
            sigma *= 0.5;
        }
        let mut v = if best.1.is_empty() {
            sample_simplex(dim, &mut rng)
        } else {
            let noise = Normal::new(0.0, sigma).expect("sigma is positive");
            let mut v: Vec<f64> = best.1.iter().map(|&x| (x + rng.sample(noise)).max(0.0)).collect();
            let total: f64 = v.iter().sum();
            if total > 0.0 {
                for x in &mut v {
                    *x /= total;
                }
            } else {
                v = sample_simplex(dim, &mut rng);
            }
            v
        };
        if project_to_purity(&mut v, purity) {
            consider(v, &mut best);
        }
    }
    best
}
