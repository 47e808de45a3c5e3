//! First-order optimization over matrices with orthonormal columns.
//!
//! Points live on the complex Stiefel manifold `{X : X^dag X = I}`. Steps are
//! taken with an Adam-style moment scheme whose update direction is the
//! skew-Hermitian lift `D = M X^dag - X M^dag` of the momentum `M`, applied
//! through the Cayley transform `X <- (I + kD/2)^{-1} (I - kD/2) X`. The
//! Cayley transform of a skew-Hermitian generator is unitary, so the
//! constraint is preserved to solver precision at every step; a QR
//! re-orthonormalization backstop catches accumulated drift.
//!
//! The second moment is a scalar: it tracks `||G||_F^2` rather than
//! per-entry squares, and it starts at 1 so early steps are damped.

use crate::linalg::{self, ComplexMatrix, LinalgError, C64};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Constraint tolerance for accepting a matrix as a manifold point.
pub const STIEFEL_TOL: f64 = 1e-8;
/// Drift level beyond which `optimize` re-orthonormalizes and warns.
pub const REORTH_TOL: f64 = 1e-8;
/// A single retraction must return to the manifold at least this tightly.
pub const RETRACTION_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum StiefelError {
    #[error("matrix is {rows}x{cols} with ||X^dag X - I||_F = {defect:.3e}; not a Stiefel point at tolerance {tol:.3e}")]
    NotOnManifold { rows: usize, cols: usize, defect: f64, tol: f64 },
    #[error("direction is not skew-Hermitian: defect {defect:.3e}")]
    NotSkewHermitian { defect: f64 },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("non-finite cost or gradient at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Error type of `optimize`, keeping the callback's own error type intact.
#[derive(Debug, Error)]
pub enum OptimizeError<E: std::fmt::Debug + std::fmt::Display> {
    #[error("cost callback failed: {0}")]
    Callback(E),
    #[error(transparent)]
    Stiefel(#[from] StiefelError),
}

/// A matrix with orthonormal columns (`X^dag X = I` to 1e-8).
#[derive(Clone, Debug, PartialEq)]
pub struct StiefelPoint {
    matrix: ComplexMatrix,
}

impl StiefelPoint {
    pub fn new(matrix: ComplexMatrix) -> Result<Self, StiefelError> {
        if matrix.rows() < matrix.cols() {
            return Err(StiefelError::ShapeMismatch {
                expected: "rows >= cols".into(),
                got: format!("{}x{}", matrix.rows(), matrix.cols()),
            });
        }
        let defect = matrix.orthonormality_defect();
        if defect > STIEFEL_TOL || !defect.is_finite() {
            return Err(StiefelError::NotOnManifold {
                rows: matrix.rows(),
                cols: matrix.cols(),
                defect,
                tol: STIEFEL_TOL,
            });
        }
        Ok(StiefelPoint { matrix })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn constraint_defect(&self) -> f64 {
        self.matrix.orthonormality_defect()
    }
}

/// Optimizer state carried between `adam_step` calls.
#[derive(Clone, Debug)]
pub struct AdamState {
    first_moment: ComplexMatrix,
    second_moment: f64,
    iteration: usize,
}

impl AdamState {
    /// Fresh state for a point of the given shape: `M = 0`, `v = 1`, `t = 0`.
    pub fn new(rows: usize, cols: usize) -> Self {
        AdamState {
            first_moment: ComplexMatrix::zeros(rows, cols),
            second_moment: 1.0,
            iteration: 0,
        }
    }

    pub fn first_moment(&self) -> &ComplexMatrix {
        &self.first_moment
    }

    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct OptimizerConfig {
    /// First-moment decay rate.
    pub gamma1: f64,
    /// Second-moment decay rate.
    pub gamma2: f64,
    /// Numerical floor inside the bias-corrected scaling and the step cap.
    pub epsilon: f64,
    /// Maximum Cayley step length.
    pub kappa0: f64,
    /// Termination threshold on the Riemannian gradient norm.
    pub delta: f64,
    pub max_iters: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            gamma1: 0.9,
            gamma2: 0.999,
            epsilon: 1e-8,
            kappa0: 0.2,
            delta: 1e-4,
            max_iters: 50_000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), StiefelError> {
        let bad = |msg: &str| Err(StiefelError::InvalidConfig(msg.into()));
        if !(self.gamma1 > 0.0 && self.gamma1 < 1.0) {
            return bad("gamma1 must lie in (0, 1)");
        }
        if !(self.gamma2 > 0.0 && self.gamma2 < 1.0) {
            return bad("gamma2 must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.kappa0 > 0.0 && self.kappa0.is_finite()) {
            return bad("kappa0 must be positive");
        }
        if !(self.delta >= 0.0) {
            return bad("delta must be nonnegative");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        Ok(())
    }
}

/// Lifts a Euclidean gradient to the skew-Hermitian direction `G X^dag - X G^dag`.
pub fn euclid_to_skew(grad: &ComplexMatrix, x: &StiefelPoint) -> Result<ComplexMatrix, StiefelError> {
    let xm = x.matrix();
    if (grad.rows(), grad.cols()) != (xm.rows(), xm.cols()) {
        return Err(StiefelError::ShapeMismatch {
            expected: format!("{}x{}", xm.rows(), xm.cols()),
            got: format!("{}x{}", grad.rows(), grad.cols()),
        });
    }
    let gxd = grad.mul(&xm.adjoint());
    Ok(gxd.sub(&gxd.adjoint()))
}

/// Norm of the projected gradient, `||G X^dag - X G^dag||_F`. Zero at
/// stationary points of the restricted cost.
pub fn riemannian_grad_norm(grad: &ComplexMatrix, x: &StiefelPoint) -> Result<f64, StiefelError> {
    Ok(euclid_to_skew(grad, x)?.frobenius_norm())
}

/// Moves `x` along the flow of the skew-Hermitian generator `d` for time
/// `kappa` via the Cayley transform. The result stays on the manifold.
pub fn cayley_retract(
    x: &StiefelPoint,
    d: &ComplexMatrix,
    kappa: f64,
) -> Result<StiefelPoint, StiefelError> {
    let xm = x.matrix();
    let n = xm.rows();
    if !d.is_square() || d.rows() != n {
        return Err(StiefelError::ShapeMismatch {
            expected: format!("{n}x{n}"),
            got: format!("{}x{}", d.rows(), d.cols()),
        });
    }
    let skew_defect = d.add(&d.adjoint()).frobenius_norm();
    if skew_defect > 1e-12 * d.frobenius_norm().max(1.0) {
        return Err(StiefelError::NotSkewHermitian { defect: skew_defect });
    }
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(StiefelError::InvalidConfig(format!("kappa must be finite and >= 0, got {kappa}")));
    }
    let half = d.scaled(C64::new(0.0, 0.0) + C64::new(kappa / 2.0, 0.0));
    let eye = ComplexMatrix::identity(n);
    let plus = eye.add(&half);
    let minus = eye.sub(&half);
    let rhs = minus.mul(xm);
    let y = linalg::solve_small_linear(&plus, &rhs)?;
    let defect = y.orthonormality_defect();
    if !(defect <= RETRACTION_TOL) {
        return Err(StiefelError::NotOnManifold {
            rows: y.rows(),
            cols: y.cols(),
            defect,
            tol: RETRACTION_TOL,
        });
    }
    Ok(StiefelPoint { matrix: y })
}

/// One optimizer step. Pure: identical inputs give bitwise-identical outputs.
///
/// The iteration counter advances by one; both moments are updated from the
/// supplied ambient gradient before the step direction is formed.
pub fn adam_step(
    x: &StiefelPoint,
    grad: &ComplexMatrix,
    state: &AdamState,
    config: &OptimizerConfig,
) -> Result<(StiefelPoint, AdamState), StiefelError> {
    config.validate()?;
    let xm = x.matrix();
    if (grad.rows(), grad.cols()) != (xm.rows(), xm.cols()) {
        return Err(StiefelError::ShapeMismatch {
            expected: format!("{}x{}", xm.rows(), xm.cols()),
            got: format!("{}x{}", grad.rows(), grad.cols()),
        });
    }
    let t = state.iteration + 1;

    let mut m = state.first_moment.scaled_real(config.gamma1);
    m.axpy(C64::new(1.0 - config.gamma1, 0.0), grad);
    let grad_sq = grad.frobenius_norm().powi(2);
    let v = config.gamma2 * state.second_moment + (1.0 - config.gamma2) * grad_sq;

    let bias1 = 1.0 - config.gamma1.powf(t as f64);
    let bias2 = 1.0 - config.gamma2.powf(t as f64);
    let r = bias1 * (v / bias2 + config.epsilon).sqrt();

    let mxd = m.mul(&xm.adjoint());
    let d = mxd.sub(&mxd.adjoint()).scaled_real(1.0 / r);
    let kappa = config.kappa0.min(1.0 / (d.frobenius_norm() + config.epsilon));

    let next = cayley_retract(x, &d, kappa)?;
    Ok((next, AdamState { first_moment: m, second_moment: v, iteration: t }))
}

/// One row of the optimization trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationStat {
    pub iteration: usize,
    pub cost: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    /// Lowest-cost point seen anywhere along the run.
    pub point: StiefelPoint,
    pub best_cost: f64,
    /// Number of optimizer steps taken.
    pub iterations: usize,
    pub trace: Vec<IterationStat>,
    /// True when the gradient threshold fired before the iteration budget.
    pub converged: bool,
}

/// Runs the step loop until the Riemannian gradient norm falls below
/// `config.delta` or `config.max_iters` steps have been taken.
///
/// The callback maps a candidate matrix to `(cost, ambient gradient)` and must
/// be deterministic for a fixed input. Returns the best-seen point by cost,
/// which is not necessarily the final iterate.
pub fn optimize<E, F>(
    initial: &StiefelPoint,
    mut cost_and_grad: F,
    config: &OptimizerConfig,
) -> Result<OptimizeResult, OptimizeError<E>>
where
    E: std::fmt::Debug + std::fmt::Display,
    F: FnMut(&ComplexMatrix) -> Result<(f64, ComplexMatrix), E>,
{
    config.validate().map_err(StiefelError::from)?;
    let mut x = initial.clone();
    let mut state = AdamState::new(initial.matrix().rows(), initial.matrix().cols());
    let mut trace = Vec::new();
    let mut best = x.clone();
    let mut best_cost = f64::INFINITY;
    let mut converged = false;
    let mut steps = 0;

    for t in 1..=config.max_iters {
        let (cost, grad) = cost_and_grad(x.matrix()).map_err(OptimizeError::Callback)?;
        if !cost.is_finite() || !grad.all_finite() {
            return Err(StiefelError::NonFinite { iteration: t }.into());
        }
        let grad_norm = riemannian_grad_norm(&grad, &x)?;
        trace.push(IterationStat { iteration: t, cost, grad_norm });
        if cost < best_cost {
            best_cost = cost;
            best = x.clone();
        }

        let (mut next, next_state) = adam_step(&x, &grad, &state, config)?;
        let defect = next.constraint_defect();
        if defect > REORTH_TOL {
            log::warn!(
                "re-orthonormalizing at iteration {t}: constraint drift {defect:.3e} exceeds {REORTH_TOL:.1e}"
            );
            next = StiefelPoint::new(linalg::qr_orthonormalize(next.matrix()).map_err(StiefelError::from)?)
                .map_err(StiefelError::from)?;
        }
        x = next;
        state = next_state;
        steps = t;

        if grad_norm < config.delta {
            converged = true;
            break;
        }
    }

    // The final iterate was never scored inside the loop; give it the chance
    // to be the best-seen point.
    let (final_cost, _) = cost_and_grad(x.matrix()).map_err(OptimizeError::Callback)?;
    if final_cost.is_finite() && final_cost < best_cost {
        best_cost = final_cost;
        best = x;
    }

    Ok(OptimizeResult { point: best, best_cost, iterations: steps, trace, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::kron;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows, cols, |_, _| {
            c(rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal))
        })
    }

    fn random_point(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> StiefelPoint {
        StiefelPoint::new(linalg::qr_orthonormalize(&random_matrix(rng, rows, cols)).unwrap())
            .unwrap()
    }

    #[test]
    fn point_construction_enforces_orthonormality() {
        let m = ComplexMatrix::identity(3);
        assert!(StiefelPoint::new(m).is_ok());
        let bad = ComplexMatrix::identity(3).scaled_real(1.1);
        assert!(matches!(StiefelPoint::new(bad), Err(StiefelError::NotOnManifold { .. })));
        let wide = ComplexMatrix::zeros(2, 3);
        assert!(matches!(StiefelPoint::new(wide), Err(StiefelError::ShapeMismatch { .. })));
    }

    #[test]
    fn euclid_to_skew_is_skew_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_point(&mut rng, 5, 3);
        let g = random_matrix(&mut rng, 5, 3);
        let d = euclid_to_skew(&g, &x).unwrap();
        assert!(d.add(&d.adjoint()).frobenius_norm() < 1e-12);
        assert!((riemannian_grad_norm(&g, &x).unwrap() - d.frobenius_norm()).abs() < 1e-14);
    }

    #[test]
    fn cayley_stays_on_manifold_and_handles_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_point(&mut rng, 6, 2);
        let g = random_matrix(&mut rng, 6, 2);
        let d = euclid_to_skew(&g, &x).unwrap();
        for &kappa in &[0.0, 1e-3, 0.1, 0.5, 2.0] {
            let y = cayley_retract(&x, &d, kappa).unwrap();
            assert!(y.constraint_defect() <= 1e-12, "kappa={kappa}");
        }
        let y0 = cayley_retract(&x, &ComplexMatrix::zeros(6, 6), 0.3).unwrap();
        assert!(y0.matrix().max_abs_diff(x.matrix()) < 1e-15);
    }

    #[test]
    fn cayley_rejects_non_skew_directions() {
        let x = StiefelPoint::new(ComplexMatrix::identity(3)).unwrap();
        let d = ComplexMatrix::identity(3);
        assert!(matches!(cayley_retract(&x, &d, 0.1), Err(StiefelError::NotSkewHermitian { .. })));
    }

    #[test]
    fn first_step_moment_is_one_tenth_of_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_point(&mut rng, 4, 2);
        let g = random_matrix(&mut rng, 4, 2);
        let state = AdamState::new(4, 2);
        let config = OptimizerConfig::default();
        let (_, next_state) = adam_step(&x, &g, &state, &config).unwrap();
        let expect = g.scaled_real(0.1);
        assert!(next_state.first_moment().max_abs_diff(&expect) < 1e-15);
        assert_eq!(next_state.iteration(), 1);
    }

    #[test]
    fn zero_gradient_leaves_point_and_moment_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_point(&mut rng, 4, 2);
        let g = ComplexMatrix::zeros(4, 2);
        let state = AdamState::new(4, 2);
        let (y, next_state) = adam_step(&x, &g, &state, &OptimizerConfig::default()).unwrap();
        assert!(y.matrix().max_abs_diff(x.matrix()) < 1e-15);
        assert_eq!(next_state.first_moment().frobenius_norm(), 0.0);
    }

    #[test]
    fn adam_step_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = random_point(&mut rng, 5, 3);
        let g = random_matrix(&mut rng, 5, 3);
        let state = AdamState::new(5, 3);
        let config = OptimizerConfig::default();
        let (y1, s1) = adam_step(&x, &g, &state, &config).unwrap();
        let (y2, s2) = adam_step(&x, &g, &state, &config).unwrap();
        assert_eq!(y1.matrix(), y2.matrix());
        assert_eq!(s1.first_moment(), s2.first_moment());
        assert_eq!(s1.second_moment().to_bits(), s2.second_moment().to_bits());
    }

    // Pins the orientation of the update: with the momentum accumulating the
    // gradient of f positively and the Cayley transform applying (I - kD/2)
    // on the right-hand side, a step must decrease a linear cost.
    #[test]
    fn single_step_decreases_linear_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let x = random_point(&mut rng, 4, 2);
            let target = random_matrix(&mut rng, 4, 2);
            let f = |m: &ComplexMatrix| {
                m.data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, b)| (b.conj() * a).re)
                    .sum::<f64>()
            };
            // f(X) = Re tr(C^dag X); ambient gradient wrt conjugate coords is C/2.
            let g = target.scaled_real(0.5);
            let config = OptimizerConfig { kappa0: 1e-3, ..OptimizerConfig::default() };
            let (y, _) = adam_step(&x, &g, &AdamState::new(4, 2), &config).unwrap();
            assert!(
                f(y.matrix()) < f(x.matrix()),
                "step must move against the gradient"
            );
        }
    }

    #[test]
    fn drift_stays_bounded_over_ten_thousand_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let target = random_matrix(&mut rng, 4, 2);
        let mut x = random_point(&mut rng, 4, 2);
        let mut state = AdamState::new(4, 2);
        let config = OptimizerConfig::default();
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let g = target.scaled_real(0.5);
            let (y, s) = adam_step(&x, &g, &state, &config).unwrap();
            x = y;
            state = s;
            worst = worst.max(x.constraint_defect());
        }
        assert!(worst <= 1e-8, "worst drift {worst}");
    }

    #[test]
    fn huge_delta_stops_after_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let x = random_point(&mut rng, 4, 2);
        let v0 = random_point(&mut rng, 4, 2).into_matrix();
        let config = OptimizerConfig { delta: 1e10, ..OptimizerConfig::default() };
        let result = optimize::<StiefelError, _>(
            &x,
            |m| Ok((m.sub(&v0).frobenius_norm().powi(2), m.sub(&v0))),
            &config,
        )
        .unwrap();
        assert_eq!(result.iterations, 1);
        assert_eq!(result.trace.len(), 1);
        assert!(result.converged);
    }

    #[test]
    fn optimize_returns_best_seen_point() {
        // Quadratic pull toward a fixed manifold point.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let v0 = random_point(&mut rng, 4, 2).into_matrix();
        let x0 = random_point(&mut rng, 4, 2);
        let config = OptimizerConfig {
            kappa0: 0.5,
            delta: 1e-6,
            max_iters: 5000,
            ..OptimizerConfig::default()
        };
        let result = optimize::<StiefelError, _>(
            &x0,
            |m| Ok((m.sub(&v0).frobenius_norm().powi(2), m.sub(&v0))),
            &config,
        )
        .unwrap();
        let replayed = result.point.matrix().sub(&v0).frobenius_norm().powi(2);
        assert!((replayed - result.best_cost).abs() < 1e-12);
        let trace_min = result.trace.iter().map(|s| s.cost).fold(f64::INFINITY, f64::min);
        assert!(result.best_cost <= trace_min + 1e-15);
    }

    #[test]
    fn quadratic_benchmark_converges_from_random_starts() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let config = OptimizerConfig {
            kappa0: 0.5,
            delta: 1e-6,
            max_iters: 5000,
            ..OptimizerConfig::default()
        };
        for trial in 0..10 {
            let v0 = random_point(&mut rng, 4, 2).into_matrix();
            let x0 = random_point(&mut rng, 4, 2);
            let result = optimize::<StiefelError, _>(
                &x0,
                |m| Ok((m.sub(&v0).frobenius_norm().powi(2), m.sub(&v0))),
                &config,
            )
            .unwrap();
            assert!(
                result.best_cost <= 1e-6,
                "trial {trial}: cost {} after {} iterations",
                result.best_cost,
                result.iterations
            );
        }
    }

    #[test]
    fn callback_error_propagates() {
        let x = StiefelPoint::new(ComplexMatrix::identity(2)).unwrap();
        let result = optimize::<String, _>(
            &x,
            |_| Err("boom".to_string()),
            &OptimizerConfig::default(),
        );
        assert!(matches!(result, Err(OptimizeError::Callback(ref e)) if e == "boom"));
    }

    #[test]
    fn non_finite_cost_is_rejected() {
        let x = StiefelPoint::new(ComplexMatrix::identity(2)).unwrap();
        let result = optimize::<StiefelError, _>(
            &x,
            |m| Ok((f64::NAN, m.clone())),
            &OptimizerConfig::default(),
        );
        assert!(matches!(result, Err(OptimizeError::Stiefel(StiefelError::NonFinite { .. }))));
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut config = OptimizerConfig::default();
        config.gamma1 = 1.0;
        assert!(config.validate().is_err());
        let mut config = OptimizerConfig::default();
        config.max_iters = 0;
        assert!(config.validate().is_err());
        let mut config = OptimizerConfig::default();
        config.kappa0 = -0.1;
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_json_defaults_fill_missing_fields() {
        let config: OptimizerConfig = serde_json::from_str(r#"{"kappa0": 0.05}"#).unwrap();
        assert_eq!(config.kappa0, 0.05);
        assert_eq!(config.gamma1, 0.9);
        assert_eq!(config.max_iters, 50_000);
    }

    // The scalar second moment makes the step scale invariant to a global
    // rescaling of the cost once bias corrections settle; this just checks
    // the moments track the documented recursions.
    #[test]
    fn moment_recursions_match_by_hand_values() {
        let x = StiefelPoint::new(kron(
            &ComplexMatrix::identity(2),
            &ComplexMatrix::from_rows(&[vec![c(1.0, 0.0)], vec![c(0.0, 0.0)]]),
        ))
        .unwrap();
        let g = ComplexMatrix::from_fn(4, 2, |r, cc| c((r + cc) as f64 * 0.1, 0.0));
        let config = OptimizerConfig::default();
        let (_, s1) = adam_step(&x, &g, &AdamState::new(4, 2), &config).unwrap();
        let expect_v = 0.999 * 1.0 + 0.001 * g.frobenius_norm().powi(2);
        assert!((s1.second_moment() - expect_v).abs() < 1e-15);
        let (_, s2) = adam_step(&x, &g, &s1, &config).unwrap();
        assert_eq!(s2.iteration(), 2);
        let expect_m2 = g.scaled_real(0.9 * 0.1 + 0.1);
        assert!(s2.first_moment().max_abs_diff(&expect_m2) < 1e-15);
    }
}
