//! Interleaved instruments between steps: one operator per map that replaces
//! the effect-then-fresh-state pair in the temporary-state recursion.
//!
//! A map `A` acting between an output of dimension `d_o` and the next input
//! of dimension `d_i'` is folded into
//!
//! ```text
//! xi = sum_ij A(|i><j|) (x) |j><i|,
//! ```
//!
//! an operator on the next input (most significant) and the output, with
//! `Tr_o[xi (I (x) rho)] = A(rho)`. The recursion becomes
//!
//! ```text
//! eta^(t) = Tr_o[(xi (x) I_A)(I_i' (x) V eta V^dag)],
//! ```
//!
//! which reduces to the state-and-effect form exactly when the map measures
//! an effect and prepares a fresh state.

use crate::comb::{DensityOperator, Isometry, KrausMap, QuantumComb};
use crate::linalg::{self, ComplexMatrix, SubsystemDims, C64};
use crate::tomo::{
    recovered_probability, MeasurementSet, PreparationSet, TempStateCache, TomoError,
    DESIGN_RANK_TOL,
};

/// Choi eigenvalues may dip below zero by this much before a map is
/// rejected as not completely positive.
pub const CP_TOL: f64 = 1e-10;
/// The traced effect may exceed the identity by this much.
pub const TNI_TOL: f64 = 1e-9;

/// A trace-nonincreasing map folded into its interleaving operator.
#[derive(Clone, Debug)]
pub struct Instrument {
    xi: ComplexMatrix,
    in_dim: usize,
    out_dim: usize,
}

/// The interleaving operator of a Kraus map, `out_dim * in_dim` square with
/// the map's output leg most significant.
pub fn instrument_xi(map: &KrausMap) -> ComplexMatrix {
    let (d_in, d_out) = (map.in_dim(), map.out_dim());
    let mut xi = ComplexMatrix::zeros(d_out * d_in, d_out * d_in);
    for i in 0..d_in {
        for j in 0..d_in {
            let mut unit = ComplexMatrix::zeros(d_in, d_in);
            unit.set(i, j, C64::new(1.0, 0.0));
            let img = map.apply(&unit);
            for a in 0..d_out {
                for b in 0..d_out {
                    xi.set(a * d_in + j, b * d_in + i, img.get(a, b));
                }
            }
        }
    }
    xi
}

impl Instrument {
    pub fn from_kraus(map: &KrausMap) -> Self {
        Instrument { xi: instrument_xi(map), in_dim: map.in_dim(), out_dim: map.out_dim() }
    }

    /// Accepts a raw interleaving operator after checking it encodes a
    /// completely positive trace-nonincreasing map.
    pub fn from_xi(xi: ComplexMatrix, in_dim: usize, out_dim: usize) -> Result<Self, TomoError> {
        let d = in_dim * out_dim;
        if in_dim == 0 || out_dim == 0 || !xi.is_square() || xi.rows() != d {
            return Err(TomoError::DimensionMismatch(format!(
                "interleaving operator is {}x{}, want {d}x{d}",
                xi.rows(),
                xi.cols()
            )));
        }
        // the Choi operator is xi with its bra input and ket output indices
        // exchanged; positivity there is complete positivity of the map
        let choi = ComplexMatrix::from_fn(d, d, |r, c| {
            let (i, a) = (r / out_dim, r % out_dim);
            let (j, b) = (c / out_dim, c % out_dim);
            xi.get(a * in_dim + j, b * in_dim + i)
        });
        if !choi.is_hermitian(linalg::HERMITIAN_TOL) {
            return Err(TomoError::NotCp("Choi operator is not Hermitian".into()));
        }
        let (values, _) = linalg::hermitian_eig(&choi)?;
        if let Some(&min) = values.last() {
            if min < -CP_TOL {
                return Err(TomoError::NotCp(format!("Choi eigenvalue {min:.3e}")));
            }
        }
        let inst = Instrument { xi, in_dim, out_dim };
        let (values, _) = linalg::hermitian_eig(&inst.trace_effect()?)?;
        if let Some(&max) = values.first() {
            if max > 1.0 + TNI_TOL {
                return Err(TomoError::NotTni(format!("traced effect eigenvalue {max}")));
            }
        }
        Ok(inst)
    }

    pub fn xi(&self) -> &ComplexMatrix {
        &self.xi
    }

    /// Dimension of the step output the instrument consumes.
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    /// Dimension of the next input it emits.
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `Tr_i'[xi]`, the effect whose probability the instrument's branch
    /// carries: `Tr[A(rho)] = Tr[(Tr_i' xi) rho]`.
    pub fn trace_effect(&self) -> Result<ComplexMatrix, TomoError> {
        let legs = SubsystemDims::new(vec![self.out_dim, self.in_dim])?;
        Ok(linalg::partial_trace(&self.xi, &legs, &[1])?.hermitian_part())
    }

    /// The map itself, `Tr_o[xi (I (x) rho)]`, for checking the encoding.
    pub fn apply(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix, TomoError> {
        if !rho.is_square() || rho.rows() != self.in_dim {
            return Err(TomoError::DimensionMismatch(format!(
                "instrument consumes dimension {}, state has {}",
                self.in_dim,
                rho.rows()
            )));
        }
        let lifted = self.xi.mul(&linalg::kron(&ComplexMatrix::identity(self.out_dim), rho));
        let legs = SubsystemDims::new(vec![self.out_dim, self.in_dim])?;
        Ok(linalg::partial_trace(&lifted, &legs, &[0])?)
    }
}

/// Instruments available between one step and the next.
#[derive(Clone, Debug)]
pub struct InstrumentSet {
    step: usize,
    instruments: Vec<Instrument>,
    rank: usize,
}

impl InstrumentSet {
    pub fn new(step: usize, instruments: Vec<Instrument>) -> Result<Self, TomoError> {
        let first = instruments
            .first()
            .ok_or_else(|| TomoError::BadSet("instrument set is empty".into()))?;
        let (d_in, d_out) = (first.in_dim, first.out_dim);
        if instruments.iter().any(|i| i.in_dim != d_in || i.out_dim != d_out) {
            return Err(TomoError::BadSet("instruments have mixed dimensions".into()));
        }
        let mats: Vec<ComplexMatrix> = instruments.iter().map(|i| i.xi.clone()).collect();
        let rank = linalg::numerical_rank(&mats, DESIGN_RANK_TOL)?;
        Ok(InstrumentSet { step, instruments, rank })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn instruments(&self) -> &[Instrument] {
        &self.instruments
    }

    pub fn len(&self) -> usize {
        self.instruments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instruments.is_empty()
    }

    pub fn in_dim(&self) -> usize {
        self.instruments[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.instruments[0].out_dim
    }

    /// Achieved rank of the interleaving operators.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Whether the operators span the full space. Trace-preserving
    /// instruments alone never do: their traced effects all equal the
    /// identity, which caps the span one short of each traced direction.
    pub fn is_spanning(&self) -> bool {
        let d = self.in_dim() * self.out_dim();
        self.rank == d * d
    }

    pub fn at_step(&self, step: usize) -> Self {
        InstrumentSet { step, ..self.clone() }
    }
}

/// A channel drawn from the Stinespring picture: an isometry into
/// `out (x) env` with the environment traced out, giving `kraus_count`
/// operators.
pub fn random_cptp(
    in_dim: usize,
    out_dim: usize,
    kraus_count: usize,
    seed: u64,
) -> Result<KrausMap, TomoError> {
    if in_dim == 0 || out_dim == 0 || kraus_count == 0 {
        return Err(TomoError::BadInput("channel dimensions must be positive".into()));
    }
    if out_dim * kraus_count < in_dim {
        return Err(TomoError::BadInput(format!(
            "no isometry maps {in_dim} into {out_dim}x{kraus_count}"
        )));
    }
    let v = crate::comb::random_isometry(out_dim * kraus_count, in_dim, seed)?;
    let kraus = (0..kraus_count)
        .map(|e| ComplexMatrix::from_fn(out_dim, in_dim, |a, b| v.get(a * kraus_count + e, b)))
        .collect();
    KrausMap::new(kraus).map_err(TomoError::from)
}

/// Fourteen single-qubit channels: the identity, a reset to `|0>`, and
/// twelve random channels. Trace preservation makes every traced effect the
/// identity, which caps the achievable rank at 13 of 16 no matter how many
/// channels join the set; fourteen gives that maximum a margin over
/// coincidences among the random draws. Spanning the full space needs maps
/// that give up trace preservation.
pub fn default_cptp_instrument_set(step: usize, seed: u64) -> Result<InstrumentSet, TomoError> {
    let mut instruments = vec![Instrument::from_kraus(&KrausMap::identity(2))];
    let reset = KrausMap::new(vec![
        ComplexMatrix::from_rows(&[
            vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
            vec![C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
        ]),
        ComplexMatrix::from_rows(&[
            vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            vec![C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
        ]),
    ])?;
    instruments.push(Instrument::from_kraus(&reset));
    for t in 0..12 {
        let map = random_cptp(2, 2, 2, crate::comb::mix_seed(seed, t))?;
        instruments.push(Instrument::from_kraus(&map));
    }
    InstrumentSet::new(step, instruments)
}

/// The sixteen measure-and-prepare maps built from the default single-qubit
/// sets, `rho -> tr(E_n rho) sigma_m` at index `4 m + n`. Their interleaving
/// operators are the products `sigma_m (x) E_n` and span the full space.
pub fn default_measure_prepare_set(step: usize) -> Result<InstrumentSet, TomoError> {
    let (preps, meas) = crate::tomo::default_single_qubit_sets();
    let mut instruments = Vec::with_capacity(16);
    for m in 0..preps.len() {
        for n in 0..meas.len() {
            let map = KrausMap::measure_prepare(&meas.effects()[n], preps.states()[m].matrix())?;
            instruments.push(Instrument::from_kraus(&map));
        }
    }
    InstrumentSet::new(step, instruments)
}

/// Temporary state under interleaved instruments: the initial preparation is
/// still a free choice, every later step replaces its effect-and-preparation
/// pair with `sets[t]`'s instrument `xs[t]`.
pub fn instrument_temp_state(
    prefix: &[Isometry],
    preps0: &PreparationSet,
    sets: &[InstrumentSet],
    alpha: usize,
    xs: &[usize],
    cache: &mut TempStateCache,
) -> Result<DensityOperator, TomoError> {
    let level = prefix.len();
    if xs.len() < level || sets.len() < level {
        return Err(TomoError::Misalignment(format!(
            "prefix of {level} isometries needs {level} instrument choices and sets, got {} and {}",
            xs.len(),
            sets.len()
        )));
    }
    let base = preps0.states().get(alpha).ok_or(TomoError::BadIndex {
        what: "preparation",
        index: alpha,
        len: preps0.len(),
    })?;

    let mut start = 0;
    let mut eta: Option<DensityOperator> = None;
    for l in (0..=level).rev() {
        let key = (l, vec![alpha], xs[..l].to_vec());
        if let Some(hit) = cache.map.get(&key) {
            eta = Some(hit.clone());
            start = l;
            break;
        }
    }
    let mut eta = match eta {
        Some(e) => e,
        None => {
            cache.map.insert((0, vec![alpha], Vec::new()), base.clone());
            base.clone()
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
        let inst = sets[t].instruments().get(xs[t]).ok_or(TomoError::BadIndex {
            what: "instrument",
            index: xs[t],
            len: sets[t].len(),
        })?;
        if inst.in_dim != v.out_dim() {
            return Err(TomoError::DimensionMismatch(format!(
                "instrument at step {t} consumes dimension {}, output is {}",
                inst.in_dim,
                v.out_dim()
            )));
        }
        let mid = v.matrix().mul(eta.matrix()).mul(&v.matrix().adjoint());
        let anc = v.anc_out();
        let lifted = linalg::kron(&ComplexMatrix::identity(inst.out_dim), &mid);
        let folded = linalg::kron(&inst.xi, &ComplexMatrix::identity(anc)).mul(&lifted);
        let legs = SubsystemDims::new(vec![inst.out_dim, v.out_dim(), anc])?;
        let reduced = linalg::partial_trace(&folded, &legs, &[0, 2])?;
        let next_dims = SubsystemDims::new(vec![inst.out_dim, anc])?;
        eta = DensityOperator::new(reduced.hermitian_part(), next_dims)?;
        cache.map.insert((t + 1, vec![alpha], xs[..t + 1].to_vec()), eta.clone());
    }
    Ok(eta)
}

/// Probability of the instrument's branch firing after the last step:
/// its traced effect measured on `W eta W^dag`.
pub fn instrument_probability(
    w: &Isometry,
    eta: &DensityOperator,
    instrument: &Instrument,
) -> Result<f64, TomoError> {
    recovered_probability(w, eta, &instrument.trace_effect()?)
}

/// Every `(alpha, xs, beta)` combination the sets offer, in lexicographic
/// order with the final effect varying fastest.
pub fn full_instrument_design(
    preps0: &PreparationSet,
    sets: &[InstrumentSet],
    final_meas: &MeasurementSet,
) -> Vec<(usize, Vec<usize>, usize)> {
    let mut design = Vec::new();
    let mut xs = vec![0usize; sets.len()];
    for alpha in 0..preps0.len() {
        loop {
            for beta in 0..final_meas.len() {
                design.push((alpha, xs.clone(), beta));
            }
            // odometer over the instrument choices, last digit fastest
            let mut digit = sets.len();
            while digit > 0 {
                xs[digit - 1] += 1;
                if xs[digit - 1] < sets[digit - 1].len() {
                    break;
                }
                xs[digit - 1] = 0;
                digit -= 1;
            }
            if digit == 0 {
                break;
            }
        }
    }
    design
}

/// Sum of squared probability differences between two combs over a shared
/// instrument design. Zero exactly when the combs are operationally
/// indistinguishable by these experiments; gauge freedom on internal
/// ancillas never moves it.
pub fn relative_cost(
    a: &QuantumComb,
    b: &QuantumComb,
    preps0: &PreparationSet,
    sets: &[InstrumentSet],
    final_meas: &MeasurementSet,
    design: &[(usize, Vec<usize>, usize)],
) -> Result<f64, TomoError> {
    let n = a.steps();
    if b.steps() != n {
        return Err(TomoError::DimensionMismatch(format!(
            "combs have {n} and {} steps",
            b.steps()
        )));
    }
    if a.dims().in_dims() != b.dims().in_dims() || a.dims().out_dims() != b.dims().out_dims() {
        return Err(TomoError::DimensionMismatch(
            "combs disagree on external dimensions".into(),
        ));
    }
    if sets.len() + 1 != n {
        return Err(TomoError::Misalignment(format!(
            "{n}-step combs interleave {} instrument sets, got {}",
            n - 1,
            sets.len()
        )));
    }
    let mut cache_a = TempStateCache::new();
    let mut cache_b = TempStateCache::new();
    let mut cost = 0.0;
    for (alpha, xs, beta) in design {
        if xs.len() != n - 1 {
            return Err(TomoError::BadDesign(format!(
                "design entry has {} instrument choices, want {}",
                xs.len(),
                n - 1
            )));
        }
        let effect = final_meas.effects().get(*beta).ok_or(TomoError::BadIndex {
            what: "effect",
            index: *beta,
            len: final_meas.len(),
        })?;
        let ea = instrument_temp_state(&a.isometries()[..n - 1], preps0, sets, *alpha, xs, &mut cache_a)?;
        let eb = instrument_temp_state(&b.isometries()[..n - 1], preps0, sets, *alpha, xs, &mut cache_b)?;
        let pa = recovered_probability(a.isometry(n - 1), &ea, effect)?;
        let pb = recovered_probability(b.isometry(n - 1), &eb, effect)?;
        cost += (pa - pb) * (pa - pb);
    }
    Ok(cost)
}
