//! Scoring of recovered sources against ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::Mode;
use crate::simgen::SyntheticDataset;
use crate::solver::FitResult;

/// Sample Pearson correlation. Errors on constant input instead of returning
/// a made-up value.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim("pearson_r vector lengths", a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::invalid("pearson_r", "need at least two samples"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ConstantVector);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    /// Zero-based row of `S` taken as the estimate.
    pub matched_atom_index: usize,
    pub r: f64,
    pub one_minus_r_squared: f64,
    /// The estimated row carried no information (all zero or constant).
    pub degenerate: bool,
}

impl RecoveryScore {
    fn new(index: usize, r: f64, degenerate: bool) -> Self {
        Self {
            matched_atom_index: index,
            r,
            one_minus_r_squared: 1.0 - r * r,
            degenerate,
        }
    }
}

/// What gets correlated with the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreTarget {
    /// Rows of `S` against rows of `S_true`.
    #[default]
    SpatialMap,
    /// Columns of `D` against columns of `D_true`.
    TimeCourse,
}

fn correlate(est: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    match pearson_r(est, truth) {
        Ok(r) => Ok(Some(r)),
        Err(Error::ConstantVector) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Scores source `target` of `truth` against the fit.
///
/// With anchors the first constrained atom is the estimate, and the truth is
/// used only for scoring. In blind mode the atom with the largest `|r|` is
/// taken.
pub fn score_recovery(
    fit: &FitResult,
    truth: &SyntheticDataset,
    target: usize,
    what: ScoreTarget,
) -> Result<RecoveryScore> {
    let (estimates, reference) = match what {
        ScoreTarget::SpatialMap => {
            check_dim("voxels in fit vs truth (N)", truth.s_true.ncols(), fit.coefficients.values().ncols())?;
            (fit.coefficients.values().clone(), truth.s_true.row(target).to_vec())
        }
        ScoreTarget::TimeCourse => {
            check_dim("time points in fit vs truth (T)", truth.d_true.nrows(), fit.dictionary.n_time())?;
            (fit.dictionary.atoms().t().to_owned(), truth.d_true.column(target).to_vec())
        }
    };
    if target >= truth.s_true.nrows() {
        return Err(Error::invalid("target", format!("source {target} does not exist")));
    }
    let anchored = fit.config.mode() != Mode::Blind && fit.dictionary.n_anchored() > 0;
    if anchored {
        let row = estimates.row(0).to_vec();
        return Ok(match correlate(&row, &reference)? {
            Some(r) => RecoveryScore::new(0, r, false),
            None => RecoveryScore::new(0, 0.0, true),
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in estimates.rows().into_iter().enumerate() {
        if let Some(r) = correlate(&row.to_vec(), &reference)? {
            if best.is_none_or(|(_, b)| r.abs() > b.abs()) {
                best = Some((i, r));
            }
        }
    }
    Ok(match best {
        Some((i, r)) => RecoveryScore::new(i, r, false),
        None => RecoveryScore::new(0, 0.0, true),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub mean: f64,
    /// Sample standard deviation; zero for a single score.
    pub std: f64,
    pub n: usize,
}

/// Mean and sample standard deviation of `1 − r²` across runs.
pub fn ensemble(scores: &[RecoveryScore]) -> Result<EnsembleStats> {
    let values: Vec<f64> = scores.iter().map(|s| s.one_minus_r_squared).collect();
    ensemble_values(&values)
}

pub fn ensemble_values(values: &[f64]) -> Result<EnsembleStats> {
    if values.is_empty() {
        return Err(Error::invalid("scores", "cannot aggregate an empty list"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(EnsembleStats { mean, std, n })
}

/// `sqrt((s₁² + s₂²)/2)`, the pooled spread used when comparing two curves.
pub fn pooled_std(a: &EnsembleStats, b: &EnsembleStats) -> f64 {
    ((a.std * a.std + b.std * b.std) / 2.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pearson_basics() {
        let a = [1.0, 2.0, 4.0, 3.5];
        assert!((pearson_r(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson_r(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson_r(&a, &[2.0; 4]), Err(Error::ConstantVector)));
        assert!(pearson_r(&a, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pearson_two_pass_oracle() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 2.0, 3.0, 100.0];
        // means 2.5 and 26.5; covariance sum = Σ(a−2.5)(b−26.5)
        let cov = (-1.5) * (-25.5) + (-0.5) * (-24.5) + 0.5 * (-23.5) + 1.5 * 73.5;
        let va = 1.5f64.powi(2) * 2.0 + 0.5f64.powi(2) * 2.0;
        let vb = 25.5f64.powi(2) + 24.5f64.powi(2) + 23.5f64.powi(2) + 73.5f64.powi(2);
        let expect = cov / (va * vb).sqrt();
        assert!((pearson_r(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn ensemble_examples() {
        let s = |v: f64| RecoveryScore::new(0, (1.0 - v).sqrt(), false);
        let one = ensemble(&[s(0.4)]).unwrap();
        assert!((one.mean - 0.4).abs() < 1e-15);
        assert_eq!(one.std, 0.0);
        let two = ensemble(&[s(0.1), s(0.3)]).unwrap();
        assert!((two.mean - 0.2).abs() < 1e-12);
        let same = ensemble_values(&[0.25; 20]).unwrap();
        assert_eq!(same.std, 0.0);
        assert!(ensemble(&[]).is_err());
    }

    proptest! {
        #[test]
        fn pearson_is_symmetric_and_affine_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 5..20),
            seed in any::<u64>(),
            alpha in 0.1f64..10.0,
            beta in -5.0f64..5.0,
        ) {
            let b: Vec<f64> = a.iter().enumerate()
                .map(|(i, v)| v.sin() + ((seed.wrapping_add(i as u64) % 7) as f64))
                .collect();
            if let (Ok(r1), Ok(r2)) = (pearson_r(&a, &b), pearson_r(&b, &a)) {
                prop_assert!((r1 - r2).abs() < 1e-12);
                let t: Vec<f64> = a.iter().map(|v| alpha * v + beta).collect();
                let r3 = pearson_r(&t, &b).unwrap();
                prop_assert!((r1 - r3).abs() < 1e-9);
            }
        }
    }
}
