//! Sparse-coding step: minimise over `S` with the dictionary held fixed.
//!
//! Each inner iteration minimises a separable majorizer of the objective,
//! tight at the previous iterate:
//!
//! ```text
//! A = (1/c_S) (DᵀX + (c_S I − DᵀD) S_prev)
//! S = shrink(A, θ)
//! ```
//!
//! with `c_S > ‖DᵀD‖₂`. The exact minimiser of that majorizer uses
//! `θ = λ / (2 c_S)`; the default [`ThresholdMode::PaperLiteral`] uses
//! `θ = λ / 2` instead, which amounts to an `ℓ₁` weight of `λ c_S`.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::gram_spectral_norm;
use crate::model::{CoefficientMatrix, DataMatrix, Dictionary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// `θ = λ/2`, independent of `c_S`.
    PaperLiteral,
    /// `θ = λ/(2 c_S)`, the exact surrogate minimiser. Guarantees monotone
    /// descent of the objective.
    ExactProx,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefStepConfig {
    pub lambda: f64,
    pub n_inner: usize,
    pub c_s_safety: f64,
    pub threshold_mode: ThresholdMode,
}

impl Default for CoefStepConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            n_inner: 100,
            c_s_safety: 1.01,
            threshold_mode: ThresholdMode::PaperLiteral,
        }
    }
}

impl CoefStepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", format!("must be > 0, got {}", self.lambda)));
        }
        if self.n_inner == 0 {
            return Err(Error::invalid("n_inner", "must be >= 1"));
        }
        if !(self.c_s_safety > 1.0 && self.c_s_safety.is_finite()) {
            return Err(Error::invalid(
                "c_s_safety",
                format!("must be > 1, got {}", self.c_s_safety),
            ));
        }
        Ok(())
    }

    pub fn threshold(&self, c_s: f64) -> f64 {
        match self.threshold_mode {
            ThresholdMode::PaperLiteral => self.lambda / 2.0,
            ThresholdMode::ExactProx => self.lambda / (2.0 * c_s),
        }
    }
}

/// Power-iteration estimate of `‖DᵀD‖₂`, never above the true value unless
/// iteration failed and the Frobenius bound `‖D‖_F²` was returned.
pub fn spectral_norm_sq(d: &Dictionary) -> Result<f64> {
    gram_spectral_norm(d.atoms().view())
        .map(|e| e.value)
        .ok_or(Error::ZeroMatrix)
}

/// Precomputed pieces of `A` that do not change across inner iterations.
struct Majorizer {
    dtx: Array2<f64>,
    /// `c_S I − DᵀD`
    damping: Array2<f64>,
    c_s: f64,
}

impl Majorizer {
    fn new(d: ArrayView2<f64>, x: ArrayView2<f64>, c_s: f64) -> Self {
        let dtx = d.t().dot(&x);
        let mut damping = d.t().dot(&d);
        damping.mapv_inplace(|v| -v);
        damping.diag_mut().mapv_inplace(|v| v + c_s);
        Self { dtx, damping, c_s }
    }

    fn a(&self, s_prev: ArrayView2<f64>) -> Array2<f64> {
        let mut a = self.damping.dot(&s_prev);
        let inv = 1.0 / self.c_s;
        Zip::from(&mut a)
            .and(&self.dtx)
            .for_each(|a, &b| *a = (b + *a) * inv);
        a
    }
}

fn check_shapes(x: &DataMatrix, d: &Dictionary, s: ArrayView2<f64>) -> Result<()> {
    check_dim("rows of D vs rows of X (T)", x.n_time(), d.n_time())?;
    check_dim("rows of S vs columns of D (K)", d.n_atoms(), s.nrows())?;
    check_dim("columns of S vs columns of X (N)", x.n_voxels(), s.ncols())
}

/// `A = (1/c_S)(DᵀX + (c_S I_K − DᵀD) S_prev)`.
pub fn compute_a(
    d: &Dictionary,
    x: &DataMatrix,
    s_prev: &CoefficientMatrix,
    c_s: f64,
) -> Result<Array2<f64>> {
    check_shapes(x, d, s_prev.values().view())?;
    if !(c_s > 0.0) {
        return Err(Error::invalid("c_s", format!("must be > 0, got {c_s}")));
    }
    Ok(Majorizer::new(d.atoms().view(), x.values().view(), c_s).a(s_prev.values().view()))
}

#[inline]
fn soft(a: f64, threshold: f64) -> f64 {
    if a.abs() > threshold {
        a - threshold * a.signum()
    } else {
        0.0
    }
}

/// Elementwise soft thresholding: entries with `|a| ≤ θ` become exactly zero,
/// the rest move `θ` towards zero.
pub fn shrink(a: ArrayView2<f64>, threshold: f64) -> CoefficientMatrix {
    CoefficientMatrix::from_raw(a.mapv(|v| soft(v, threshold)))
}

/// Runs `cfg.n_inner` majorization steps starting from `s_init`.
pub fn run_coefficient_update(
    x: &DataMatrix,
    d: &Dictionary,
    s_init: &CoefficientMatrix,
    cfg: &CoefStepConfig,
) -> Result<CoefficientMatrix> {
    run_coefficient_update_observed(x, d, s_init, cfg, |_, _| {})
}

/// As [`run_coefficient_update`], calling `observe(n, S^[n])` after every
/// inner iteration.
pub fn run_coefficient_update_observed(
    x: &DataMatrix,
    d: &Dictionary,
    s_init: &CoefficientMatrix,
    cfg: &CoefStepConfig,
    mut observe: impl FnMut(usize, &Array2<f64>),
) -> Result<CoefficientMatrix> {
    cfg.validate()?;
    check_shapes(x, d, s_init.values().view())?;
    let c_s = cfg.c_s_safety * spectral_norm_sq(d)?;
    let theta = cfg.threshold(c_s);
    let maj = Majorizer::new(d.atoms().view(), x.values().view(), c_s);
    let mut s = s_init.values().clone();
    for n in 1..=cfg.n_inner {
        let mut a = maj.a(s.view());
        a.mapv_inplace(|v| soft(v, theta));
        s = a;
        observe(n, &s);
    }
    Ok(CoefficientMatrix::from_raw(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{objective, AnchorSet, ConstraintSpec, Mode};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blind(atoms: Array2<f64>) -> Dictionary {
        let t = atoms.nrows();
        Dictionary::new(
            atoms,
            AnchorSet::empty(t),
            ConstraintSpec {
                mode: Mode::Blind,
                c_d: 1e6,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn spectral_norm_of_identities() {
        assert!((spectral_norm_sq(&blind(Array2::eye(4))).unwrap() - 1.0).abs() < 1e-12);
        assert!((spectral_norm_sq(&blind(Array2::eye(4) * 2.0)).unwrap() - 4.0).abs() < 1e-12);
        assert!(matches!(
            spectral_norm_sq(&blind(Array2::zeros((3, 2)))),
            Err(Error::ZeroMatrix)
        ));
    }

    #[test]
    fn a_with_zero_codes_is_scaled_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = blind(random(&mut rng, 5, 3));
        let x = DataMatrix::new(random(&mut rng, 5, 4)).unwrap();
        let a = compute_a(&d, &x, &CoefficientMatrix::zeros(3, 4), 2.5).unwrap();
        let expect = d.atoms().t().dot(x.values()) / 2.5;
        for (p, q) in a.iter().zip(expect.iter()) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn a_with_orthonormal_dictionary() {
        let d = blind(array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);
        let x = DataMatrix::new(array![[1.0, 2.0], [3.0, -4.0], [5.0, 6.0]]).unwrap();
        let s = CoefficientMatrix::new(array![[0.5, -1.0], [2.0, 0.25]]).unwrap();
        let a = compute_a(&d, &x, &s, 2.0).unwrap();
        let expect = d.atoms().t().dot(x.values()) * 0.5 + s.values() * 0.5;
        assert_eq!(a, expect);
    }

    #[test]
    fn a_matches_scalar_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dm = random(&mut rng, 2, 2);
        let xm = random(&mut rng, 2, 2);
        let sm = random(&mut rng, 2, 2);
        let c = 3.7;
        let a = compute_a(
            &blind(dm.clone()),
            &DataMatrix::new(xm.clone()).unwrap(),
            &CoefficientMatrix::new(sm.clone()).unwrap(),
            c,
        )
        .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut v = 0.0;
                for t in 0..2 {
                    v += dm[[t, i]] * xm[[t, j]];
                }
                for k in 0..2 {
                    let mut g = 0.0;
                    for t in 0..2 {
                        g += dm[[t, i]] * dm[[t, k]];
                    }
                    let delta = if i == k { 1.0 } else { 0.0 };
                    v += (c * delta - g) * sm[[k, j]];
                }
                assert!((a[[i, j]] - v / c).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn shrink_examples() {
        let a = array![[0.3, 0.03], [-0.2, 0.05]];
        let s = shrink(a.view(), 0.05);
        assert!((s.values()[[0, 0]] - 0.25).abs() < 1e-15);
        assert_eq!(s.values()[[0, 1]], 0.0);
        assert!((s.values()[[1, 0]] + 0.15).abs() < 1e-15);
        assert_eq!(s.values()[[1, 1]], 0.0);
        assert_eq!(shrink(a.view(), 0.0).values(), &a);
    }

    #[test]
    fn shrink_matches_grid_prox() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 3, 3);
        let theta = 0.07;
        let c_s = 1.9;
        let s = shrink(a.view(), theta);
        for (&ai, &si) in a.iter().zip(s.values().iter()) {
            let f = |v: f64| c_s * (v - ai).powi(2) + 2.0 * c_s * theta * v.abs();
            // coarse grid then golden-section refinement
            let mut best = -2.0;
            let mut i = -2.0;
            while i <= 2.0 {
                if f(i) < f(best) {
                    best = i;
                }
                i += 1e-3;
            }
            let (mut lo, mut hi) = (best - 1e-3, best + 1e-3);
            for _ in 0..200 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if f(m1) <= f(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            assert!((0.5 * (lo + hi) - si).abs() < 1e-7, "a={ai} s={si}");
        }
    }

    #[test]
    fn single_step_from_zero() {
        let d = blind(array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);
        let x = DataMatrix::new(array![[1.0, 0.02], [-3.0, 0.5], [9.0, 9.0]]).unwrap();
        let cfg = CoefStepConfig {
            n_inner: 1,
            threshold_mode: ThresholdMode::ExactProx,
            ..Default::default()
        };
        let s = run_coefficient_update(&x, &d, &CoefficientMatrix::zeros(2, 2), &cfg).unwrap();
        let c_s = cfg.c_s_safety * spectral_norm_sq(&d).unwrap();
        let a = d.atoms().t().dot(x.values()) / c_s;
        let expect = shrink(a.view(), cfg.lambda / (2.0 * c_s));
        assert_eq!(&s, &expect);
    }

    #[test]
    fn huge_lambda_zeroes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = blind(random(&mut rng, 6, 3));
        let x = DataMatrix::new(random(&mut rng, 6, 5)).unwrap();
        let max = d.atoms().t().dot(x.values()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cfg = CoefStepConfig {
            lambda: 1e3 * max,
            n_inner: 10,
            ..Default::default()
        };
        let s = run_coefficient_update(&x, &d, &CoefficientMatrix::zeros(3, 5), &cfg).unwrap();
        assert!(s.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn exact_prox_descends_every_inner_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = blind(random(&mut rng, 8, 3));
        let x = DataMatrix::new(random(&mut rng, 8, 5)).unwrap();
        let cfg = CoefStepConfig {
            n_inner: 200,
            threshold_mode: ThresholdMode::ExactProx,
            ..Default::default()
        };
        let s0 = CoefficientMatrix::zeros(3, 5);
        let mut prev = objective(&x, &d, &s0, cfg.lambda).unwrap();
        run_coefficient_update_observed(&x, &d, &s0, &cfg, |n, s| {
            let cur = objective(&x, &d, &CoefficientMatrix::new(s.clone()).unwrap(), cfg.lambda)
                .unwrap();
            assert!(cur <= prev * (1.0 + 1e-10), "iteration {n}: {prev} -> {cur}");
            prev = cur;
        })
        .unwrap();
    }

    #[test]
    fn fixed_point_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = blind(random(&mut rng, 6, 2));
        let x = DataMatrix::new(random(&mut rng, 6, 3)).unwrap();
        let cfg = CoefStepConfig {
            n_inner: 5000,
            threshold_mode: ThresholdMode::ExactProx,
            ..Default::default()
        };
        let s = run_coefficient_update(&x, &d, &CoefficientMatrix::zeros(2, 3), &cfg).unwrap();
        let one = CoefStepConfig { n_inner: 1, ..cfg };
        let again = run_coefficient_update(&x, &d, &s, &one).unwrap();
        // converged iterates are a fixed point of the deterministic map
        if again == s {
            let twice = run_coefficient_update(&x, &d, &again, &one).unwrap();
            assert_eq!(twice, s);
        } else {
            let diff = (&again.values().clone() - s.values()).mapv(f64::abs);
            assert!(diff.iter().all(|v| *v < 1e-12));
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = CoefStepConfig {
            c_s_safety: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = CoefStepConfig {
            n_inner: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn shrink_is_non_expansive_and_contracts_magnitudes(
            a in proptest::collection::vec(-5.0f64..5.0, 6),
            b in proptest::collection::vec(-5.0f64..5.0, 6),
            theta in 0.0f64..2.0,
        ) {
            let a = Array2::from_shape_vec((2, 3), a).unwrap();
            let b = Array2::from_shape_vec((2, 3), b).unwrap();
            let sa = shrink(a.view(), theta);
            let sb = shrink(b.view(), theta);
            let lhs: f64 = (sa.values() - sb.values()).iter().map(|v| v * v).sum();
            let rhs: f64 = (&a - &b).iter().map(|v| v * v).sum();
            prop_assert!(lhs <= rhs + 1e-12);
            for (s, x) in sa.values().iter().zip(a.iter()) {
                prop_assert!(s.abs() <= x.abs());
            }
        }
    }
}
