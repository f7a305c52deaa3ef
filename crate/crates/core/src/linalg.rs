//! Small dense helpers shared by the two update steps.

use ndarray::{Array1, ArrayView1, ArrayView2};

/// Power iteration stops once `‖Gv − μv‖ ≤ POWER_TOL · μ`. A test on the
/// change in `μ` alone stalls when the top two eigenvalues are close.
pub const POWER_TOL: f64 = 1e-6;
pub const POWER_MAX_ITER: usize = 1000;

/// `Σ v_i²`, summed left to right. Feasibility checks and projections both go
/// through this so they agree to the last bit.
pub fn sq_norm(v: ArrayView1<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x * x)
}

pub fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |acc, (x, y)| {
        let d = x - y;
        acc + d * d
    })
}

pub fn fro_sq(m: ArrayView2<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc + x * x)
}

/// Outcome of a power iteration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Estimate of the largest eigenvalue of `MᵀM` (equivalently `‖M‖₂²`).
///
/// Iterates on whichever of `MᵀM` / `MMᵀ` is smaller. Returns `None` for an
/// all-zero matrix. On non-convergence the value is the Frobenius bound
/// `‖M‖_F²`, which always dominates the true norm.
pub fn gram_spectral_norm(m: ArrayView2<f64>) -> Option<PowerEstimate> {
    let fro = fro_sq(m);
    if fro == 0.0 {
        return None;
    }
    let gram = if m.ncols() <= m.nrows() {
        m.t().dot(&m)
    } else {
        m.dot(&m.t())
    };
    let k = gram.nrows();
    // Fixed, non-symmetric start so that structured inputs are not orthogonal
    // to the leading eigenvector.
    let mut v: Array1<f64> = (0..k).map(|i| 1.0 + 0.37 * ((i as f64) * 1.618).sin()).collect();
    let nv = sq_norm(v.view()).sqrt();
    v /= nv;
    for it in 1..=POWER_MAX_ITER {
        let w = gram.dot(&v);
        let mu = v.dot(&w);
        let nw = sq_norm(w.view()).sqrt();
        if nw == 0.0 {
            break;
        }
        let resid = sq_norm((&w - &(&v * mu)).view()).sqrt();
        if resid <= POWER_TOL * mu.abs() {
            return Some(PowerEstimate {
                value: mu.min(fro),
                iterations: it,
                converged: true,
            });
        }
        v = w / nw;
    }
    Some(PowerEstimate {
        value: fro,
        iterations: POWER_MAX_ITER,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn identity_and_scaled_identity() {
        let e = gram_spectral_norm(Array2::<f64>::eye(5).view()).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12);
        let e = gram_spectral_norm((Array2::<f64>::eye(3) * 2.0).view()).unwrap();
        assert!((e.value - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_has_no_estimate() {
        assert!(gram_spectral_norm(Array2::<f64>::zeros((3, 2)).view()).is_none());
    }

    #[test]
    fn wide_and_tall_agree() {
        let m = array![[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]];
        let a = gram_spectral_norm(m.view()).unwrap().value;
        let b = gram_spectral_norm(m.t()).unwrap().value;
        assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn sq_helpers() {
        let a = array![3.0, 4.0];
        let b = array![0.0, 0.0];
        assert_eq!(sq_norm(a.view()), 25.0);
        assert_eq!(sq_dist(a.view(), b.view()), 25.0);
    }
}
