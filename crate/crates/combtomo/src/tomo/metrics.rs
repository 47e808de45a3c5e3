//! Distances between recovered and reference combs, compared through their
//! Choi operators.

use crate::comb::ChoiMatrix;
use crate::linalg;
use crate::tomo::TomoError;

/// Squared Hilbert-Schmidt distance `||A - B||_F^2` between two Choi
/// operators on the same legs. Unnormalized: divide by the squared trace to
/// compare processes independent of leg count.
pub fn hs_distance(a: &ChoiMatrix, b: &ChoiMatrix) -> Result<f64, TomoError> {
    if a.matrix().rows() != b.matrix().rows() {
        return Err(TomoError::DimensionMismatch(format!(
            "Choi operators have dimensions {} and {}",
            a.matrix().rows(),
            b.matrix().rows()
        )));
    }
    let d = a.matrix().sub(b.matrix()).frobenius_norm();
    Ok(d * d)
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(a) b sqrt(a)))^2` of the trace-normalized
/// Choi operators, in `[0, 1]` with 1 meaning equal processes.
pub fn uhlmann_fidelity(a: &ChoiMatrix, b: &ChoiMatrix) -> Result<f64, TomoError> {
    if a.matrix().rows() != b.matrix().rows() {
        return Err(TomoError::DimensionMismatch(format!(
            "Choi operators have dimensions {} and {}",
            a.matrix().rows(),
            b.matrix().rows()
        )));
    }
    if a.trace() <= 0.0 || b.trace() <= 0.0 {
        return Err(TomoError::BadInput(
            "fidelity needs strictly positive Choi traces".into(),
        ));
    }
    let an = a.normalized();
    let bn = b.normalized();
    let ra = linalg::psd_sqrt(&an)?;
    // products of PSD factors pick up tiny anti-Hermitian noise; drop it
    // before the second root
    let m = ra.mul(&bn).mul(&ra).hermitian_part();
    let root = linalg::psd_sqrt(&m)?;
    let f = root.trace().re;
    Ok((f * f).clamp(0.0, 1.0))
}

/// Least-squares slope of `ln y` against `ln x`. Pairs with a nonpositive or
/// nonfinite coordinate are dropped; returns NaN when fewer than two usable
/// pairs remain or every `x` coincides.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx <= 0.0 {
        return f64::NAN;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comb::{choi_of_comb, gauge_transform, random_comb, CombDims, Isometry, QuantumComb};
    use crate::linalg::{C64, ComplexMatrix};

    fn pure_comb(m: ComplexMatrix) -> QuantumComb {
        let dims = CombDims::new(vec![2], vec![2], vec![1, 1]).unwrap();
        QuantumComb::new(dims, vec![Isometry::new(m, 2, 2, 1, 1).unwrap()]).unwrap()
    }

    #[test]
    fn orthogonal_unitaries_sit_at_maximal_distance() {
        let x = ComplexMatrix::from_rows(&[
            vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        ]);
        let a = choi_of_comb(&pure_comb(ComplexMatrix::identity(2)), None).unwrap();
        let b = choi_of_comb(&pure_comb(x), None).unwrap();
        // rank-1 Choi operators of trace 2 with orthogonal ranges: 4 + 4
        assert!((hs_distance(&a, &b).unwrap() - 8.0).abs() < 1e-12);
        assert!(hs_distance(&a, &a).unwrap() < 1e-15);
        assert!(uhlmann_fidelity(&a, &b).unwrap() < 1e-12);
        assert!((uhlmann_fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_matches_commuting_closed_form() {
        // diagonal states: F = (sum sqrt(p_i q_i))^2
        let dims = CombDims::new(vec![1], vec![2], vec![1, 1]).unwrap();
        let amp = |t: f64| {
            ComplexMatrix::from_rows(&[vec![C64::new(t.cos(), 0.0)], vec![C64::new(t.sin(), 0.0)]])
        };
        let a = QuantumComb::new(
            dims.clone(),
            vec![Isometry::new(amp(std::f64::consts::FRAC_PI_4), 1, 2, 1, 1).unwrap()],
        )
        .unwrap();
        let b = QuantumComb::new(
            dims,
            vec![Isometry::new(amp(0.0), 1, 2, 1, 1).unwrap()],
        )
        .unwrap();
        // Choi of a: diag(1/2, 1/2) cross terms included, of b: diag(1, 0);
        // as states they are |+><+| and |0><0|, so F = 1/2
        let ca = choi_of_comb(&a, None).unwrap();
        let cb = choi_of_comb(&b, None).unwrap();
        assert!((uhlmann_fidelity(&ca, &cb).unwrap() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn gauge_freedom_moves_neither_metric() {
        let dims = CombDims::new(vec![2, 2], vec![2, 2], vec![1, 2, 2]).unwrap();
        let comb = random_comb(&dims, 40).unwrap();
        let u = {
            let h = ComplexMatrix::from_rows(&[
                vec![C64::new(0.0, 0.0), C64::new(0.0, -1.0)],
                vec![C64::new(0.0, 1.0), C64::new(0.0, 0.0)],
            ]);
            // exp(i pi/5 Y-like generator) via eigendecomposition
            let (values, vecs) = crate::linalg::hermitian_eig(&h).unwrap();
            let phase = ComplexMatrix::from_fn(2, 2, |r, c| {
                if r == c {
                    (C64::new(0.0, 0.628) * values[r]).exp()
                } else {
                    C64::new(0.0, 0.0)
                }
            });
            vecs.mul(&phase).mul(&vecs.adjoint())
        };
        let moved = gauge_transform(&comb, 0, &u).unwrap();
        let ca = choi_of_comb(&comb, None).unwrap();
        let cb = choi_of_comb(&moved, None).unwrap();
        assert!(hs_distance(&ca, &cb).unwrap() < 1e-18);
        assert!((uhlmann_fidelity(&ca, &cb).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn slope_recovers_exact_power_laws() {
        let xs: Vec<f64> = (1..=6).map(|i| 10f64.powi(i)).collect();
        let inv: Vec<f64> = xs.iter().map(|x| 3.0 / x).collect();
        assert!((log_log_slope(&xs, &inv) + 1.0).abs() < 1e-12);
        let half: Vec<f64> = xs.iter().map(|x| 0.2 / x.sqrt()).collect();
        assert!((log_log_slope(&xs, &half) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn slope_degenerates_to_nan() {
        assert!(log_log_slope(&[1.0], &[2.0]).is_nan());
        assert!(log_log_slope(&[], &[]).is_nan());
        assert!(log_log_slope(&[5.0, 5.0], &[1.0, 2.0]).is_nan());
        assert!(log_log_slope(&[1.0, -2.0], &[1.0, 2.0]).is_nan());
        // a dead-flat line still has slope zero, not NaN
        assert!(log_log_slope(&[1.0, 10.0], &[4.0, 4.0]).abs() < 1e-15);
    }
}
