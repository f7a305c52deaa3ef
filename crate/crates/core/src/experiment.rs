//! The two robustness sweeps: a time-shifted task regressor and a task
//! regressor built from a narrower response than the one in the data.
//!
//! Every sweep point fits each method once per seed. Seeds only change the
//! solver's random initialisation; the dataset stays fixed unless
//! `reseed_noise` is set. Jobs run on a worker pool and are gathered by
//! `(point, method, seed)`, so output does not depend on scheduling.

use std::collections::HashMap;
use std::path::PathBuf;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficient_update::ThresholdMode;
use crate::error::{Error, Result};
use crate::eval::{ensemble, score_recovery, EnsembleStats, RecoveryScore, ScoreTarget};
use crate::hrf::{convolve_events, narrowed_hrf_family, shift_time_course, TimeCourse};
use crate::model::{is_feasible, AnchorSet, DataMatrix, Mode};
use crate::simgen::{generate, generate_with_noise_seed, DatasetSpec, SyntheticDataset};
use crate::solver::{fit, InitStrategy, SolverConfig};
use crate::storage::read_bundle;

pub const DESK_N_OUTER: usize = 100;
pub const DESK_N_INNER: usize = 20;
pub const PAPER_N_OUTER: usize = 500;
pub const PAPER_N_INNER: usize = 100;

pub const DEFAULT_SHIFTS_S: [f64; 9] = [-8.0, -6.0, -4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0];
pub const DEFAULT_HRF_SCALES: [f64; 6] = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5];
pub const DEFAULT_N_SEEDS: u64 = 20;

/// Partial solver settings; unset fields keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOverrides {
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub c_delta: Option<f64>,
    pub c_d: Option<f64>,
    pub n_outer: Option<usize>,
    pub n_inner: Option<usize>,
    pub c_s_safety: Option<f64>,
    pub c_d_safety: Option<f64>,
    pub threshold_mode: Option<ThresholdMode>,
    pub init: Option<InitStrategy>,
}

impl SolverOverrides {
    /// Solver settings for `mode`, starting from the desk or paper budget.
    pub fn build(&self, mode: Mode, paper_budget: bool) -> SolverConfig {
        let (n_outer, n_inner) = if paper_budget {
            (PAPER_N_OUTER, PAPER_N_INNER)
        } else {
            (DESK_N_OUTER, DESK_N_INNER)
        };
        let mut cfg = SolverConfig::default().with_budget(n_outer, n_inner);
        cfg.constraints.mode = mode;
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.lambda {
            cfg.coef_cfg.lambda = v;
        }
        if let Some(v) = self.c_delta {
            cfg.constraints.c_delta = v;
        }
        if let Some(v) = self.c_d {
            cfg.constraints.c_d = v;
        }
        if let Some(v) = self.n_outer {
            cfg.n_outer = v;
        }
        if let Some(v) = self.n_inner {
            cfg.coef_cfg.n_inner = v;
            cfg.dict_cfg.n_inner = v;
        }
        if let Some(v) = self.c_s_safety {
            cfg.coef_cfg.c_s_safety = v;
        }
        if let Some(v) = self.c_d_safety {
            cfg.dict_cfg.c_d_safety = v;
        }
        if let Some(v) = self.threshold_mode {
            cfg.coef_cfg.threshold_mode = v;
        }
        if let Some(v) = self.init {
            cfg.init = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Inline dataset spec; ignored when `dataset_dir` is set.
    pub dataset: Option<DatasetSpec>,
    /// A bundle written by `generate`.
    pub dataset_dir: Option<PathBuf>,
    pub methods: Vec<Mode>,
    pub shifts_s: Vec<f64>,
    pub hrf_scales: Vec<f64>,
    pub seeds: Vec<u64>,
    pub solver: SolverOverrides,
    pub paper_budget: bool,
    pub reseed_noise: bool,
    pub score_target: ScoreTarget,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            dataset_dir: None,
            methods: vec![Mode::AtomAssisted, Mode::Sdl, Mode::Blind],
            shifts_s: DEFAULT_SHIFTS_S.to_vec(),
            hrf_scales: DEFAULT_HRF_SCALES.to_vec(),
            seeds: (0..DEFAULT_N_SEEDS).collect(),
            solver: SolverOverrides::default(),
            paper_budget: false,
            reseed_noise: false,
            score_target: ScoreTarget::SpatialMap,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::invalid("methods", "at least one method is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds", "at least one seed is required"));
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<SyntheticDataset> {
        match (&self.dataset_dir, &self.dataset) {
            (Some(dir), _) => read_bundle(dir),
            (None, Some(spec)) => generate(spec),
            (None, None) => generate(&DatasetSpec::default()),
        }
    }
}

/// One aggregated row of a sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// Shift in seconds, or squared correlation of the imposed response with
    /// the true one.
    pub x: f64,
    pub method: Mode,
    pub stats: EnsembleStats,
    pub scores: Vec<RecoveryScore>,
    /// Largest constraint excess seen in any iteration of any seed.
    pub max_feasibility_excess: f64,
    /// Every final dictionary passed the direct feasibility check.
    pub all_feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub x_label: &'static str,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{},method,mean_one_minus_r2,std_one_minus_r2,n_seeds\n",
            self.x_label
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:?},{},{:?},{:?},{}\n",
                r.x, r.method, r.stats.mean, r.stats.std, r.stats.n
            ));
        }
        out
    }

    pub fn get(&self, x: f64, method: Mode) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && (r.x - x).abs() < 1e-12)
    }

    pub fn for_method(&self, method: Mode) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }
}

/// Unit-norm column matrix from a time course, the scale shared with the
/// free atoms (`c_d = 1`).
pub fn anchor_from(tc: &TimeCourse) -> Result<AnchorSet> {
    let v = tc.unit_norm();
    AnchorSet::new(Array2::from_shape_vec((v.len(), 1), v).expect("column vector"))
}

/// True task time course of a dataset as sampled in `D_true`.
pub fn true_task_course(ds: &SyntheticDataset) -> TimeCourse {
    TimeCourse {
        samples: ds.d_true.column(ds.task_index).to_vec(),
        tr: ds.spec.tr_s,
    }
}

struct Job {
    point: usize,
    method: Mode,
    seed: u64,
}

fn run_sweep(
    cfg: &ExperimentConfig,
    ds: &SyntheticDataset,
    x_label: &'static str,
    points: &[(f64, AnchorSet)],
    workers: usize,
) -> Result<SweepResult> {
    cfg.validate()?;
    // blind fits never see the anchor, so one per seed serves every point
    let mut jobs = Vec::new();
    for (p, _) in points.iter().enumerate() {
        for &method in &cfg.methods {
            if method == Mode::Blind && p > 0 {
                continue;
            }
            for &seed in &cfg.seeds {
                jobs.push(Job {
                    point: p,
                    method,
                    seed,
                });
            }
        }
    }

    let noisy: HashMap<u64, DataMatrix> = if cfg.reseed_noise {
        cfg.seeds
            .iter()
            .map(|&s| Ok((s, generate_with_noise_seed(&ds.spec, s)?.x)))
            .collect::<Result<_>>()?
    } else {
        HashMap::new()
    };

    let run = |job: &Job| -> Result<(RecoveryScore, f64, bool)> {
        let mut solver = cfg.solver.build(job.method, cfg.paper_budget);
        solver.seed = job.seed;
        solver.anchors = match job.method {
            Mode::Blind => AnchorSet::empty(ds.x.n_time()),
            _ => points[job.point].1.clone(),
        };
        let x = noisy.get(&job.seed).unwrap_or(&ds.x);
        let result = fit(x, &solver)?;
        let excess = result
            .history
            .iter()
            .map(|h| h.max_feasibility_excess)
            .fold(0.0, f64::max);
        let feasible = is_feasible(&result.dictionary, 0.0).feasible;
        let score = score_recovery(&result, ds, ds.task_index, cfg.score_target)?;
        Ok((score, excess, feasible))
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    let outcomes: Vec<(RecoveryScore, f64, bool)> =
        pool.install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>>>())?;

    let mut by_key: HashMap<(usize, Mode), Vec<(RecoveryScore, f64, bool)>> = HashMap::new();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        by_key.entry((job.point, job.method)).or_default().push(outcome);
    }
    let mut rows = Vec::new();
    for (p, (x, _)) in points.iter().enumerate() {
        for &method in &cfg.methods {
            let key = if method == Mode::Blind { (0, method) } else { (p, method) };
            let outcomes = &by_key[&key];
            let scores: Vec<RecoveryScore> = outcomes.iter().map(|o| o.0.clone()).collect();
            rows.push(SweepRow {
                x: *x,
                method,
                stats: ensemble(&scores)?,
                scores,
                max_feasibility_excess: outcomes.iter().map(|o| o.1).fold(0.0, f64::max),
                all_feasible: outcomes.iter().all(|o| o.2),
            });
        }
    }
    Ok(SweepResult { x_label, rows })
}

/// Anchors for the time-shift sweep. Off-grid shifts fail before any fitting.
pub fn shift_points(ds: &SyntheticDataset, shifts: &[f64]) -> Result<Vec<(f64, AnchorSet)>> {
    let base = true_task_course(ds);
    shifts
        .iter()
        .map(|&s| Ok((s, anchor_from(&shift_time_course(&base, s)?)?)))
        .collect()
}

/// Anchors for the response-shape sweep, keyed by the squared correlation of
/// the imposed response with the true one.
pub fn hrf_points(ds: &SyntheticDataset, scales: &[f64]) -> Result<Vec<(f64, AnchorSet)>> {
    let events = ds.spec.task_events()?;
    let family = narrowed_hrf_family(&ds.true_hrf, scales, ds.spec.tr_s)?;
    family
        .iter()
        .map(|member| Ok((member.r_squared, anchor_from(&convolve_events(events, &member.hrf)?)?)))
        .collect()
}

pub fn sweep_shift(cfg: &ExperimentConfig, workers: usize) -> Result<SweepResult> {
    sweep_shift_on(&cfg.load_dataset()?, cfg, workers)
}

pub fn sweep_hrf(cfg: &ExperimentConfig, workers: usize) -> Result<SweepResult> {
    sweep_hrf_on(&cfg.load_dataset()?, cfg, workers)
}

pub fn sweep_shift_on(ds: &SyntheticDataset, cfg: &ExperimentConfig, workers: usize) -> Result<SweepResult> {
    let points = shift_points(ds, &cfg.shifts_s)?;
    run_sweep(cfg, ds, "shift_seconds", &points, workers)
}

pub fn sweep_hrf_on(ds: &SyntheticDataset, cfg: &ExperimentConfig, workers: usize) -> Result<SweepResult> {
    let points = hrf_points(ds, &cfg.hrf_scales)?;
    run_sweep(cfg, ds, "hrf_r2", &points, workers)
}
