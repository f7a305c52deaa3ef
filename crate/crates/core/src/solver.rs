//! Alternating minimisation: a sparse-coding step followed by a constrained
//! dictionary step, repeated a fixed number of times.

use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::coefficient_update::{run_coefficient_update, CoefStepConfig};
use crate::dictionary_update::{project_anchored, project_free, run_dictionary_update, DictStepConfig};
use crate::error::{check_dim, Error, Result};
use crate::linalg::sq_norm;
use crate::model::{
    is_feasible, residual_sq, l1, AnchorSet, CoefficientMatrix, ConstraintSpec, DataMatrix,
    Dictionary, Mode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Anchored atoms start at their anchors, free atoms are random with
    /// squared norm `c_d`.
    AnchorPlusRandom,
    /// Every atom random, then projected onto its constraint set.
    AllRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub k: usize,
    pub constraints: ConstraintSpec,
    #[serde(skip)]
    pub anchors: AnchorSet,
    pub n_outer: usize,
    #[serde(rename = "coefficient_step")]
    pub coef_cfg: CoefStepConfig,
    #[serde(rename = "dictionary_step")]
    pub dict_cfg: DictStepConfig,
    pub seed: u64,
    pub init: InitStrategy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            k: 20,
            constraints: ConstraintSpec::default(),
            anchors: AnchorSet::default(),
            n_outer: 500,
            coef_cfg: CoefStepConfig::default(),
            dict_cfg: DictStepConfig::default(),
            seed: 0,
            init: InitStrategy::AnchorPlusRandom,
        }
    }
}

impl SolverConfig {
    pub fn lambda(&self) -> f64 {
        self.coef_cfg.lambda
    }

    pub fn mode(&self) -> Mode {
        self.constraints.mode
    }

    /// The anchors the solver actually uses; blind mode never looks at any.
    pub fn effective_anchors(&self, n_time: usize) -> AnchorSet {
        match self.constraints.mode {
            Mode::Blind => AnchorSet::empty(n_time),
            _ => self.anchors.clone(),
        }
    }

    /// Shorter budget used by the experiment sweeps.
    pub fn with_budget(mut self, n_outer: usize, n_inner: usize) -> Self {
        self.n_outer = n_outer;
        self.coef_cfg.n_inner = n_inner;
        self.dict_cfg.n_inner = n_inner;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.constraints.validate()?;
        self.coef_cfg.validate()?;
        self.dict_cfg.validate()?;
        if self.k == 0 {
            return Err(Error::invalid("k", "must be >= 1"));
        }
        if self.n_outer == 0 {
            return Err(Error::invalid("n_outer", "must be >= 1"));
        }
        if self.constraints.mode != Mode::Blind && self.anchors.len() > self.k {
            return Err(Error::invalid(
                "M",
                format!("{} anchors exceed k = {}", self.anchors.len(), self.k),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub residual: f64,
    /// Fraction of exactly-zero entries of `S`.
    pub sparsity: f64,
    pub max_feasibility_excess: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub dictionary: Dictionary,
    pub coefficients: CoefficientMatrix,
    pub history: Vec<IterationRecord>,
    pub config: SolverConfig,
    pub wall_time_s: f64,
}

fn random_unit_columns(rng: &mut ChaCha8Rng, t: usize, k: usize, sq_norm_target: f64) -> Array2<f64> {
    let mut out = Array2::zeros((t, k));
    for mut col in out.columns_mut() {
        col.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
        let n = sq_norm(col.view()).sqrt();
        // a zero draw from a continuous distribution does not happen in practice
        if n > 0.0 {
            col.mapv_inplace(|v| v * (sq_norm_target.sqrt() / n));
        }
        let fixed = project_free(col.view(), sq_norm_target);
        col.assign(&fixed);
    }
    out
}

/// Starting dictionary for [`fit`]. Deterministic in `cfg.seed`.
pub fn init_dictionary(cfg: &SolverConfig, t: usize) -> Result<Dictionary> {
    let anchors = cfg.effective_anchors(t);
    let m = anchors.len();
    if m > cfg.k {
        return Err(Error::invalid("M", format!("{m} anchors exceed k = {}", cfg.k)));
    }
    check_dim("anchor length vs time points (T)", t, anchors.n_time())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = &cfg.constraints;
    let atoms = match cfg.init {
        InitStrategy::AnchorPlusRandom => {
            let mut atoms = Array2::zeros((t, cfg.k));
            atoms.slice_mut(s![.., ..m]).assign(anchors.deltas());
            atoms
                .slice_mut(s![.., m..])
                .assign(&random_unit_columns(&mut rng, t, cfg.k - m, c.c_d));
            atoms
        }
        InitStrategy::AllRandom => {
            let mut atoms = Array2::from_shape_fn((t, cfg.k), |_| StandardNormal.sample(&mut rng));
            for (i, mut col) in atoms.columns_mut().into_iter().enumerate() {
                let p = if i < m {
                    project_anchored(col.view(), anchors.delta(i), c.anchor_radius())
                } else {
                    project_free(col.view(), c.c_d)
                };
                col.assign(&p);
            }
            atoms
        }
    };
    Dictionary::new(atoms, anchors, *c)
}

fn check_finite(what: &'static str, iteration: usize, m: ArrayView2<f64>) -> Result<()> {
    match m.indexed_iter().find(|(_, v)| !v.is_finite()) {
        Some(((row, col), _)) => Err(Error::NonFinite {
            what,
            iteration,
            row,
            col,
        }),
        None => Ok(()),
    }
}

pub fn fit(x: &DataMatrix, cfg: &SolverConfig) -> Result<FitResult> {
    fit_observed(x, cfg, |_, _, _| {})
}

/// As [`fit`], calling `observe(t, D_(t), S_(t))` after each outer iteration.
pub fn fit_observed(
    x: &DataMatrix,
    cfg: &SolverConfig,
    mut observe: impl FnMut(usize, &Dictionary, &CoefficientMatrix),
) -> Result<FitResult> {
    let start = Instant::now();
    cfg.validate()?;
    let mut d = init_dictionary(cfg, x.n_time())?;
    let mut s = CoefficientMatrix::zeros(cfg.k, x.n_voxels());
    let lambda = cfg.lambda();
    let mut history = Vec::with_capacity(cfg.n_outer);
    for it in 0..cfg.n_outer {
        s = run_coefficient_update(x, &d, &s, &cfg.coef_cfg)?;
        check_finite("S", it, s.values().view())?;
        d = run_dictionary_update(x, &s, &d, &cfg.dict_cfg)?;
        check_finite("D", it, d.atoms().view())?;

        let resid = residual_sq(x.values().view(), d.atoms().view(), s.values().view());
        history.push(IterationRecord {
            iteration: it,
            objective: resid + lambda * l1(s.values().view()),
            residual: resid.sqrt(),
            sparsity: s.zero_fraction(),
            max_feasibility_excess: is_feasible(&d, 0.0).max_excess,
        });
        observe(it, &d, &s);
    }
    Ok(FitResult {
        dictionary: d,
        coefficients: s,
        history,
        config: cfg.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient_update::ThresholdMode;
    use crate::model::FEASIBILITY_TOL;
    use rand::Rng;

    fn random(seed: u64, r: usize, c: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    fn unit_columns(mut m: Array2<f64>) -> Array2<f64> {
        for mut c in m.columns_mut() {
            let n = sq_norm(c.view()).sqrt();
            c.mapv_inplace(|v| v / n);
        }
        m
    }

    fn small_cfg(anchors: AnchorSet, k: usize, mode: Mode) -> SolverConfig {
        SolverConfig {
            k,
            anchors,
            constraints: ConstraintSpec {
                mode,
                ..Default::default()
            },
            ..Default::default()
        }
        .with_budget(20, 10)
    }

    #[test]
    fn anchors_fill_whole_dictionary() {
        let deltas = random(1, 6, 3);
        let cfg = small_cfg(AnchorSet::new(deltas.clone()).unwrap(), 3, Mode::AtomAssisted);
        let d = init_dictionary(&cfg, 6).unwrap();
        assert_eq!(d.atoms(), &deltas);
    }

    #[test]
    fn random_columns_have_target_norm_and_repeat() {
        let cfg = small_cfg(AnchorSet::empty(7), 5, Mode::Blind);
        let d = init_dictionary(&cfg, 7).unwrap();
        for c in d.atoms().columns() {
            assert!((sq_norm(c) - 1.0).abs() < 1e-12);
        }
        assert_eq!(init_dictionary(&cfg, 7).unwrap(), d);
        let all = SolverConfig {
            init: InitStrategy::AllRandom,
            ..cfg
        };
        assert!(is_feasible(&init_dictionary(&all, 7).unwrap(), FEASIBILITY_TOL).feasible);
    }

    #[test]
    fn too_many_anchors_is_an_error() {
        let cfg = SolverConfig {
            k: 1,
            ..small_cfg(AnchorSet::new(random(2, 4, 2)).unwrap(), 1, Mode::AtomAssisted)
        };
        assert!(init_dictionary(&cfg, 4).is_err());
    }

    #[test]
    fn zero_data_gives_zero_codes() {
        let x = DataMatrix::new(Array2::zeros((6, 8))).unwrap();
        let cfg = small_cfg(AnchorSet::empty(6), 3, Mode::Blind);
        let r = fit(&x, &cfg).unwrap();
        assert!(r.coefficients.values().iter().all(|v| *v == 0.0));
        assert!(r.history.iter().all(|h| h.objective == 0.0));
        assert_eq!(r.history.len(), 20);
    }

    #[test]
    fn fixed_anchors_recover_sparse_maps() {
        // T=40, K=M=2: smooth anchors, sparse nonnegative maps
        let t = 40;
        let n = 100;
        let deltas = unit_columns(Array2::from_shape_fn((t, 2), |(i, j)| {
            let x = i as f64 / t as f64;
            if j == 0 {
                (6.0 * x).sin() + 0.2
            } else {
                (-(x - 0.6).powi(2) * 30.0).exp()
            }
        }));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s_true = Array2::from_shape_fn((2, n), |_| {
            if rng.random_bool(0.3) {
                rng.random_range(0.5..2.0)
            } else {
                0.0
            }
        });
        let x = DataMatrix::new(deltas.dot(&s_true)).unwrap();
        let mut cfg = small_cfg(AnchorSet::new(deltas.clone()).unwrap(), 2, Mode::Sdl);
        cfg.coef_cfg.threshold_mode = ThresholdMode::ExactProx;
        cfg.coef_cfg.lambda = 1e-3;
        let cfg = cfg.with_budget(5, 400);
        let r = fit(&x, &cfg).unwrap();
        assert_eq!(r.dictionary.atoms(), &deltas);
        for k in 0..2 {
            let est = r.coefficients.values().row(k).to_vec();
            let tru = s_true.row(k).to_vec();
            let rr = crate::eval::pearson_r(&est, &tru).unwrap();
            assert!(rr >= 0.99, "row {k}: r = {rr}");
        }
    }

    #[test]
    fn exact_prox_fit_descends() {
        let x = DataMatrix::new(random(4, 12, 30)).unwrap();
        let deltas = unit_columns(random(5, 12, 1));
        let mut cfg = small_cfg(AnchorSet::new(deltas).unwrap(), 4, Mode::AtomAssisted);
        cfg.coef_cfg.threshold_mode = ThresholdMode::ExactProx;
        let r = fit(&x, &cfg).unwrap();
        for w in r.history.windows(2) {
            assert!(w[1].objective <= w[0].objective * (1.0 + 1e-8));
        }
        assert!(r.history.iter().all(|h| h.max_feasibility_excess <= FEASIBILITY_TOL));
    }

    #[test]
    fn sdl_keeps_anchors_bitwise_every_iteration() {
        let x = DataMatrix::new(random(6, 10, 20)).unwrap();
        let deltas = unit_columns(random(7, 10, 2));
        let cfg = small_cfg(AnchorSet::new(deltas.clone()).unwrap(), 5, Mode::Sdl);
        fit_observed(&x, &cfg, |_, d, _| {
            assert_eq!(d.atoms().slice(s![.., ..2]), deltas.view());
        })
        .unwrap();
    }

    #[test]
    fn blind_ignores_supplied_anchors() {
        let x = DataMatrix::new(random(8, 10, 20)).unwrap();
        let with = small_cfg(AnchorSet::new(random(9, 10, 2)).unwrap(), 4, Mode::Blind);
        let without = SolverConfig {
            anchors: AnchorSet::empty(10),
            ..with.clone()
        };
        let a = fit(&x, &with).unwrap();
        let b = fit(&x, &without).unwrap();
        assert_eq!(a.dictionary.atoms(), b.dictionary.atoms());
        assert_eq!(a.coefficients, b.coefficients);
    }

    #[test]
    fn fit_is_deterministic() {
        let x = DataMatrix::new(random(10, 10, 20)).unwrap();
        let cfg = small_cfg(AnchorSet::new(unit_columns(random(11, 10, 1))).unwrap(), 4, Mode::AtomAssisted);
        let a = fit(&x, &cfg).unwrap();
        let b = fit(&x, &cfg).unwrap();
        assert_eq!(a.dictionary, b.dictionary);
        assert_eq!(a.coefficients, b.coefficients);
        assert_eq!(a.history, b.history);
    }
}
