//! Synthetic task fMRI generator in the spirit of SimTB: Gaussian-blob
//! spatial maps on a 2-D grid, HRF-convolved event time courses, white
//! artifact time courses of three kurtosis classes, and additive Gaussian
//! noise.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hrf::{canonical_hrf, convolve_events, EventSequence, HrfParams, TimeCourse};
use crate::linalg::fro_sq;
use crate::model::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceRole {
    TaskOfInterest,
    Physiological,
    ArtifactGaussian,
    ArtifactSubgaussian,
    ArtifactSupergaussian,
}

impl SourceRole {
    pub fn is_artifact(self) -> bool {
        matches!(
            self,
            SourceRole::ArtifactGaussian | SourceRole::ArtifactSubgaussian | SourceRole::ArtifactSupergaussian
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center_x: f64,
    pub center_y: f64,
    pub sigma: f64,
    pub amplitude: f64,
}

impl Blob {
    pub fn new(center_x: f64, center_y: f64, sigma: f64) -> Self {
        Self {
            center_x,
            center_y,
            sigma,
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub role: SourceRole,
    pub blobs: Vec<Blob>,
    /// Event design for task and physiological sources; artifacts draw
    /// i.i.d. samples instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<EventSequence>,
    /// Target for `‖time course‖₂ · ‖spatial map‖₂`.
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub width: usize,
    pub height: usize,
    /// Number of time points.
    pub t: usize,
    pub tr_s: f64,
    pub sources: Vec<SourceSpec>,
    pub noise_sigma: f64,
    /// When set, `noise_sigma` is derived so that
    /// `‖D_true S_true‖_F / ‖noise‖_F` matches this in expectation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_snr: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub true_hrf: HrfParams,
}

fn block(first: f64, on: f64, off: f64, total: f64, tr: f64) -> Option<EventSequence> {
    Some(EventSequence::block_design(first, on, off, total, tr))
}

fn events(onsets: &[f64], dur: f64, total: f64, tr: f64) -> Option<EventSequence> {
    Some(EventSequence {
        onsets: onsets.to_vec(),
        durations: vec![dur; onsets.len()],
        total_time: total,
        tr,
    })
}

impl Default for DatasetSpec {
    /// Desk-scale layout: 40×40 grid, 200 volumes at TR 2 s, twenty sources
    /// (one task of interest, eleven physiological, eight artifacts), and a
    /// signal-to-noise ratio of about 3.
    fn default() -> Self {
        let (t, tr) = (200usize, 2.0);
        let total = t as f64 * tr;
        use SourceRole::*;
        let src = |role, blobs: Vec<Blob>, events, energy| SourceSpec {
            role,
            blobs,
            events,
            energy,
        };
        // Strong nuisance sources crowd the task blob so that a fit without
        // the task regressor merges it into mixtures.
        let (task, near, far) = (5.0, 50.0, 30.0);
        let sources = vec![
            src(TaskOfInterest, vec![Blob::new(14.0, 20.0, 2.5)], block(10.0, 20.0, 40.0, total, tr), task),
            src(Physiological, vec![Blob::new(22.0, 24.0, 4.0)], block(0.0, 30.0, 50.0, total, tr), near),
            src(Physiological, vec![Blob::new(8.0, 8.0, 3.0)], block(20.0, 10.0, 30.0, total, tr), far),
            src(Physiological, vec![Blob::new(32.0, 8.0, 3.5)], block(5.0, 16.0, 54.0, total, tr), far),
            src(Physiological, vec![Blob::new(8.0, 32.0, 3.0)], block(40.0, 24.0, 56.0, total, tr), far),
            src(Physiological, vec![Blob::new(32.0, 32.0, 3.0)], block(12.0, 14.0, 26.0, total, tr), far),
            src(Physiological, vec![Blob::new(20.0, 6.0, 3.0)], events(&[14.0, 52.0, 98.0, 130.0, 176.0, 230.0, 262.0, 300.0, 344.0, 380.0], 4.0, total, tr), far),
            src(Physiological, vec![Blob::new(6.0, 20.0, 3.0)], events(&[8.0, 40.0, 90.0, 150.0, 166.0, 210.0, 250.0, 290.0, 336.0, 370.0], 6.0, total, tr), far),
            src(Physiological, vec![Blob::new(34.0, 20.0, 3.0)], block(30.0, 40.0, 60.0, total, tr), far),
            src(Physiological, vec![Blob::new(20.0, 34.0, 3.0)], events(&[24.0, 70.0, 110.0, 140.0, 196.0, 220.0, 276.0, 320.0, 356.0], 8.0, total, tr), far),
            src(Physiological, vec![Blob::new(14.0, 26.0, 3.5)], block(50.0, 12.0, 36.0, total, tr), far),
            src(Physiological, vec![Blob::new(27.0, 13.0, 3.5)], block(2.0, 18.0, 62.0, total, tr), far),
            src(ArtifactGaussian, vec![Blob::new(23.0, 20.0, 6.0)], None, near),
            src(ArtifactGaussian, vec![Blob::new(4.0, 36.0, 5.0)], None, far),
            src(ArtifactGaussian, vec![Blob::new(36.0, 4.0, 5.0)], None, far),
            src(ArtifactSubgaussian, vec![Blob::new(30.0, 28.0, 5.0)], None, near),
            src(ArtifactSubgaussian, vec![Blob::new(4.0, 4.0, 5.0)], None, far),
            src(ArtifactSubgaussian, vec![Blob::new(36.0, 36.0, 5.0)], None, far),
            src(ArtifactSupergaussian, vec![Blob::new(27.0, 11.0, 5.0)], None, near),
            src(ArtifactSupergaussian, vec![Blob::new(12.0, 12.0, 5.0)], None, far),
        ];
        Self {
            width: 40,
            height: 40,
            t,
            tr_s: tr,
            sources,
            noise_sigma: 0.0,
            target_snr: Some(3.0),
            seed: 0,
            true_hrf: HrfParams::default(),
        }
    }
}

impl DatasetSpec {
    pub fn n_voxels(&self) -> usize {
        self.width * self.height
    }

    pub fn task_index(&self) -> Result<usize> {
        let tasks: Vec<usize> = self
            .sources
            .iter()
            .enumerate()
            .filter(|(_, s)| s.role == SourceRole::TaskOfInterest)
            .map(|(i, _)| i)
            .collect();
        match tasks.as_slice() {
            [i] => Ok(*i),
            _ => Err(Error::DatasetInvariant(format!(
                "exactly one task_of_interest source required, found {}",
                tasks.len()
            ))),
        }
    }

    /// Event design of the task of interest.
    pub fn task_events(&self) -> Result<&EventSequence> {
        let i = self.task_index()?;
        self.sources[i]
            .events
            .as_ref()
            .ok_or_else(|| Error::DatasetInvariant("task_of_interest has no event design".into()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.n_voxels() < 2 {
            return Err(Error::invalid("grid", "need at least two voxels"));
        }
        if self.t < 2 {
            return Err(Error::invalid("t", "need at least two time points"));
        }
        if !(self.tr_s > 0.0) {
            return Err(Error::invalid("tr_s", "must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma", "must be >= 0"));
        }
        if let Some(snr) = self.target_snr {
            if !(snr > 0.0 && snr.is_finite()) {
                return Err(Error::invalid("target_snr", "must be positive"));
            }
        }
        self.true_hrf.validate()?;
        self.task_index()?;
        for (i, s) in self.sources.iter().enumerate() {
            if s.blobs.is_empty() {
                return Err(Error::DatasetInvariant(format!("source {i} has no blobs")));
            }
            for b in &s.blobs {
                let inside = (0.0..=(self.width - 1) as f64).contains(&b.center_x)
                    && (0.0..=(self.height - 1) as f64).contains(&b.center_y);
                if !inside || !(b.sigma > 0.0) {
                    return Err(Error::DatasetInvariant(format!(
                        "source {i}: blob at ({}, {}) with sigma {} is not inside the grid",
                        b.center_x, b.center_y, b.sigma
                    )));
                }
            }
            if !(s.energy > 0.0) {
                return Err(Error::DatasetInvariant(format!("source {i}: energy must be positive")));
            }
            match (&s.events, s.role.is_artifact()) {
                (None, false) => {
                    return Err(Error::DatasetInvariant(format!(
                        "source {i} ({:?}) needs an event design",
                        s.role
                    )))
                }
                (Some(ev), false) => {
                    ev.validate()?;
                    if ev.n_samples() != self.t || (ev.tr - self.tr_s).abs() > 1e-9 {
                        return Err(Error::DatasetInvariant(format!(
                            "source {i}: event design does not span {} samples at TR {}",
                            self.t, self.tr_s
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub x: DataMatrix,
    /// `T × K_true`
    pub d_true: Array2<f64>,
    /// `K_true × N`, rows at unit peak.
    pub s_true: Array2<f64>,
    /// Echo of the generating spec with the effective `noise_sigma`.
    pub spec: DatasetSpec,
    pub true_hrf: HrfParams,
    pub task_index: usize,
}

/// Sum of isotropic Gaussian bumps on a `width × height` grid, unfolded row
/// by row and scaled to unit maximum absolute value.
pub fn render_spatial_map(blobs: &[Blob], width: usize, height: usize) -> Result<Array1<f64>> {
    if blobs.is_empty() {
        return Err(Error::invalid("blobs", "a spatial map needs at least one blob"));
    }
    let mut map = Array1::zeros(width * height);
    for y in 0..height {
        for x in 0..width {
            let v: f64 = blobs
                .iter()
                .map(|b| {
                    let r2 = (x as f64 - b.center_x).powi(2) + (y as f64 - b.center_y).powi(2);
                    b.amplitude * (-r2 / (2.0 * b.sigma * b.sigma)).exp()
                })
                .sum();
            map[y * width + x] = v;
        }
    }
    let m = map.iter().fold(0.0f64, |m, v: &f64| m.max(v.abs()));
    if m > 0.0 {
        map /= m;
    }
    Ok(map)
}

/// Unscaled i.i.d. draws with zero mean and unit variance.
pub fn artifact_samples(kind: SourceRole, t: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let draw: Box<dyn FnMut(&mut dyn rand::RngCore) -> f64> = match kind {
        SourceRole::ArtifactGaussian => Box::new(|r| StandardNormal.sample(r)),
        SourceRole::ArtifactSubgaussian => {
            let h = 3f64.sqrt();
            Box::new(move |r| r.random_range(-h..h))
        }
        SourceRole::ArtifactSupergaussian => {
            // Laplace with scale 1/√2 has unit variance
            let b = std::f64::consts::FRAC_1_SQRT_2;
            Box::new(move |r| {
                let u: f64 = r.random::<f64>() - 0.5;
                -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            })
        }
        other => {
            return Err(Error::invalid(
                "kind",
                format!("{other:?} is not an artifact role"),
            ))
        }
    };
    let mut draw = draw;
    Ok((0..t).map(|_| draw(rng)).collect())
}

/// Artifact time course scaled to unit maximum absolute value.
pub fn artifact_time_course(kind: SourceRole, t: usize, tr: f64, rng: &mut impl Rng) -> Result<TimeCourse> {
    let mut tc = TimeCourse {
        samples: artifact_samples(kind, t, rng)?,
        tr,
    };
    tc.normalize_max_abs();
    Ok(tc)
}

fn half_max_support(map: &Array1<f64>) -> Vec<bool> {
    map.iter().map(|v| v.abs() >= 0.5).collect()
}

fn overlaps(a: &[bool], b: &[bool]) -> bool {
    a.iter().zip(b).any(|(x, y)| *x && *y)
}

fn check_task_design(spec: &DatasetSpec, maps: &[Array1<f64>], task: usize) -> Result<()> {
    let supports: Vec<Vec<bool>> = maps.iter().map(half_max_support).collect();
    let task_support = &supports[task];
    let overlapping: Vec<usize> = (0..maps.len())
        .filter(|&i| i != task && overlaps(task_support, &supports[i]))
        .collect();
    if !overlapping.iter().any(|&i| spec.sources[i].role.is_artifact()) {
        return Err(Error::DatasetInvariant(
            "task_of_interest map does not overlap any artifact map".into(),
        ));
    }
    let max_neighbour = overlapping
        .iter()
        .map(|&i| spec.sources[i].energy)
        .fold(f64::NEG_INFINITY, f64::max);
    if spec.sources[task].energy > max_neighbour {
        return Err(Error::DatasetInvariant(format!(
            "task_of_interest energy {} exceeds every overlapping source (max {max_neighbour})",
            spec.sources[task].energy
        )));
    }
    Ok(())
}

/// Builds the dataset described by `spec`. Pure in `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<SyntheticDataset> {
    generate_with_noise_seed(spec, spec.seed)
}

/// As [`generate`] but with the additive noise drawn from its own seed, so
/// that noise can be redrawn while every source stays the same.
pub fn generate_with_noise_seed(spec: &DatasetSpec, noise_seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let task = spec.task_index()?;
    let (t, n, k) = (spec.t, spec.n_voxels(), spec.sources.len());
    let hrf = canonical_hrf(&spec.true_hrf, spec.tr_s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut d_true = Array2::zeros((t, k));
    let mut s_true = Array2::zeros((k, n));
    let mut maps = Vec::with_capacity(k);
    for (i, src) in spec.sources.iter().enumerate() {
        let tc = match &src.events {
            Some(ev) if !src.role.is_artifact() => convolve_events(ev, &hrf)?,
            _ => artifact_time_course(src.role, t, spec.tr_s, &mut rng)?,
        };
        let map = render_spatial_map(&src.blobs, spec.width, spec.height)?;
        let tc_norm = tc.samples.iter().map(|v| v * v).sum::<f64>().sqrt();
        let map_norm = map.dot(&map).sqrt();
        let gain = if tc_norm > 0.0 {
            src.energy / (tc_norm * map_norm)
        } else {
            0.0
        };
        for (dst, v) in d_true.column_mut(i).iter_mut().zip(&tc.samples) {
            *dst = v * gain;
        }
        s_true.row_mut(i).assign(&map);
        maps.push(map);
    }
    check_task_design(spec, &maps, task)?;

    let signal = d_true.dot(&s_true);
    let mut echo = spec.clone();
    if let Some(snr) = spec.target_snr {
        echo.noise_sigma = fro_sq(signal.view()).sqrt() / (snr * ((t * n) as f64).sqrt());
    }
    let mut x = signal;
    if echo.noise_sigma > 0.0 {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
        noise_rng.set_stream(1);
        let sigma = echo.noise_sigma;
        x.iter_mut().for_each(|v| {
            let e: f64 = StandardNormal.sample(&mut noise_rng);
            *v += sigma * e;
        });
    }
    Ok(SyntheticDataset {
        x: DataMatrix::new(x)?,
        d_true,
        s_true,
        true_hrf: spec.true_hrf,
        spec: echo,
        task_index: task,
    })
}
