//! Dictionary step: minimise over `D` with the codes held fixed.
//!
//! Each inner iteration forms the unconstrained minimiser of a quadratic
//! majorizer,
//!
//! ```text
//! B = (1/c_D) (X Sᵀ + R (c_D I − S Sᵀ)),   c_D > ‖SᵀS‖₂
//! ```
//!
//! where `R` is the previous iterate, and then projects each column onto
//! its constraint ball: anchored atoms onto `‖d − δ‖² ≤ c_delta`, free
//! atoms onto `‖d‖² ≤ c_d`. The projections are exact Euclidean
//! projections, so every iterate is feasible.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{gram_spectral_norm, sq_dist, sq_norm};
use crate::model::{CoefficientMatrix, DataMatrix, Dictionary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DictStepConfig {
    pub n_inner: usize,
    pub c_d_safety: f64,
}

impl Default for DictStepConfig {
    fn default() -> Self {
        Self {
            n_inner: 100,
            c_d_safety: 1.01,
        }
    }
}

impl DictStepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_inner == 0 {
            return Err(Error::invalid("n_inner", "must be >= 1"));
        }
        if !(self.c_d_safety > 1.0 && self.c_d_safety.is_finite()) {
            return Err(Error::invalid(
                "c_d_safety",
                format!("must be > 1, got {}", self.c_d_safety),
            ));
        }
        Ok(())
    }
}

/// Curvature constant for the dictionary majorizer. An all-zero `S` makes the
/// data term vanish; any positive constant works, and 1 keeps `B = R` exact.
pub fn dictionary_curvature(s: &CoefficientMatrix, safety: f64) -> f64 {
    match gram_spectral_norm(s.values().view()) {
        Some(e) => safety * e.value,
        None => 1.0,
    }
}

struct Majorizer {
    xst: Array2<f64>,
    /// `c_D I − S Sᵀ`
    damping: Array2<f64>,
    c_d: f64,
}

impl Majorizer {
    fn new(x: ArrayView2<f64>, s: ArrayView2<f64>, c_d: f64) -> Self {
        let xst = x.dot(&s.t());
        let mut damping = s.dot(&s.t());
        damping.mapv_inplace(|v| -v);
        damping.diag_mut().mapv_inplace(|v| v + c_d);
        Self { xst, damping, c_d }
    }

    fn b(&self, r: ArrayView2<f64>) -> Array2<f64> {
        let mut b = r.dot(&self.damping);
        let inv = 1.0 / self.c_d;
        Zip::from(&mut b)
            .and(&self.xst)
            .for_each(|b, &p| *b = (p + *b) * inv);
        b
    }
}

fn check_shapes(x: &DataMatrix, s: ArrayView2<f64>, r: ArrayView2<f64>) -> Result<()> {
    check_dim("rows of R vs rows of X (T)", x.n_time(), r.nrows())?;
    check_dim("rows of S vs columns of R (K)", r.ncols(), s.nrows())?;
    check_dim("columns of S vs columns of X (N)", x.n_voxels(), s.ncols())
}

/// `B = (1/c_D)(X Sᵀ + R (c_D I_K − S Sᵀ))`.
pub fn compute_b(
    x: &DataMatrix,
    s: &CoefficientMatrix,
    r: ArrayView2<f64>,
    c_d_const: f64,
) -> Result<Array2<f64>> {
    check_shapes(x, s.values().view(), r)?;
    if !(c_d_const > 0.0) {
        return Err(Error::invalid("c_d_const", format!("must be > 0, got {c_d_const}")));
    }
    Ok(Majorizer::new(x.values().view(), s.values().view(), c_d_const).b(r))
}

/// Scales `offset` so that `‖centre + offset·scale − centre‖² ≤ radius` holds
/// when re-evaluated in floating point. Nudging the scale down by a few ulps
/// makes the projection idempotent bit for bit.
fn project_onto_ball(
    b: ArrayView1<f64>,
    centre: Option<ArrayView1<f64>>,
    radius: f64,
) -> Array1<f64> {
    let dist2 = match centre {
        Some(c) => sq_dist(b, c),
        None => sq_norm(b),
    };
    if dist2 <= radius {
        return b.to_owned();
    }
    let offset: Array1<f64> = match centre {
        Some(c) => &b - &c,
        None => b.to_owned(),
    };
    if radius == 0.0 {
        return match centre {
            Some(c) => c.to_owned(),
            None => Array1::zeros(b.len()),
        };
    }
    let mut scale = radius.sqrt() / dist2.sqrt();
    loop {
        let out = match centre {
            Some(c) => &c + &(&offset * scale),
            None => &offset * scale,
        };
        let d = match centre {
            Some(c) => sq_dist(out.view(), c),
            None => sq_norm(out.view()),
        };
        if d <= radius {
            return out;
        }
        scale *= 1.0 - 4.0 * f64::EPSILON;
    }
}

/// Nearest point to `b` in the ball `‖d − δ‖² ≤ c_delta`.
pub fn project_anchored(b: ArrayView1<f64>, delta: ArrayView1<f64>, c_delta: f64) -> Array1<f64> {
    project_onto_ball(b, Some(delta), c_delta)
}

/// Nearest point to `b` in the ball `‖d‖² ≤ c_d`.
pub fn project_free(b: ArrayView1<f64>, c_d: f64) -> Array1<f64> {
    project_onto_ball(b, None, c_d)
}

/// Projects every column of `b` onto its constraint set, writing into `out`.
fn project_columns(b: &Array2<f64>, template: &Dictionary, out: &mut Array2<f64>) {
    let m = template.n_anchored();
    let radius = template.constraints().anchor_radius();
    let c_d = template.constraints().c_d;
    for (i, (col, mut dst)) in b
        .axis_iter(Axis(1))
        .zip(out.axis_iter_mut(Axis(1)))
        .enumerate()
    {
        let p = if i < m {
            project_anchored(col, template.anchors().delta(i), radius)
        } else {
            project_free(col, c_d)
        };
        dst.assign(&p);
    }
}

/// Value of the smooth majorizer
/// `‖X − DS‖_F² + c_D ‖D − R‖_F² − ‖(D − R) S‖_F²`.
pub fn surrogate_value(
    d: ArrayView2<f64>,
    x: &DataMatrix,
    s: &CoefficientMatrix,
    r: ArrayView2<f64>,
    c_d_const: f64,
) -> Result<f64> {
    check_shapes(x, s.values().view(), r)?;
    check_dim("shape of D vs R (K)", r.ncols(), d.ncols())?;
    let s = s.values();
    let resid = &d.dot(s) - x.values();
    let diff = &d - &r;
    let ds = diff.dot(s);
    Ok(resid.iter().map(|v| v * v).sum::<f64>() + c_d_const * diff.iter().map(|v| v * v).sum::<f64>()
        - ds.iter().map(|v| v * v).sum::<f64>())
}

/// Gradient of [`surrogate_value`] in `D`:
/// `−2 X Sᵀ + 2 c_D (D − R) + 2 R S Sᵀ`. Vanishes exactly at `D = B`.
pub fn surrogate_gradient(
    d: ArrayView2<f64>,
    x: &DataMatrix,
    s: &CoefficientMatrix,
    r: ArrayView2<f64>,
    c_d_const: f64,
) -> Result<Array2<f64>> {
    check_shapes(x, s.values().view(), r)?;
    check_dim("shape of D vs R (K)", r.ncols(), d.ncols())?;
    let s = s.values();
    let sst = s.dot(&s.t());
    let xst = x.values().dot(&s.t());
    let rsst = r.dot(&sst);
    Ok((&(&d - &r) * c_d_const + &rsst - &xst) * 2.0)
}

pub fn run_dictionary_update(
    x: &DataMatrix,
    s: &CoefficientMatrix,
    d_init: &Dictionary,
    cfg: &DictStepConfig,
) -> Result<Dictionary> {
    run_dictionary_update_observed(x, s, d_init, cfg, |_, _| {})
}

/// As [`run_dictionary_update`], calling `observe(n, D^[n])` after each inner
/// iteration.
pub fn run_dictionary_update_observed(
    x: &DataMatrix,
    s: &CoefficientMatrix,
    d_init: &Dictionary,
    cfg: &DictStepConfig,
    mut observe: impl FnMut(usize, &Dictionary),
) -> Result<Dictionary> {
    cfg.validate()?;
    check_shapes(x, s.values().view(), d_init.atoms().view())?;
    let c_d = dictionary_curvature(s, cfg.c_d_safety);
    let maj = Majorizer::new(x.values().view(), s.values().view(), c_d);
    let mut current = d_init.clone();
    let mut next = current.atoms().clone();
    for n in 1..=cfg.n_inner {
        let b = maj.b(current.atoms().view());
        project_columns(&b, &current, &mut next);
        std::mem::swap(current.atoms_mut(), &mut next);
        observe(n, &current);
    }
    Ok(current)
}
