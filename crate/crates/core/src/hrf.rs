//! Canonical double-gamma haemodynamic response, event convolution, and the
//! two ways the sweeps corrupt a task regressor: time shifts and narrowed
//! response shapes.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::eval::pearson_r;

const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HrfParams {
    /// Seconds.
    pub peak_delay: f64,
    /// Seconds.
    pub undershoot_delay: f64,
    pub peak_dispersion: f64,
    pub undershoot_dispersion: f64,
    pub undershoot_ratio: f64,
    /// Length of the sampled kernel in seconds.
    #[serde(rename = "duration_s")]
    pub duration: f64,
}

impl Default for HrfParams {
    fn default() -> Self {
        Self {
            peak_delay: 6.0,
            undershoot_delay: 16.0,
            peak_dispersion: 1.0,
            undershoot_dispersion: 1.0,
            undershoot_ratio: 1.0 / 6.0,
            duration: 32.0,
        }
    }
}

impl HrfParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("peak_delay", self.peak_delay),
            ("undershoot_delay", self.undershoot_delay),
            ("peak_dispersion", self.peak_dispersion),
            ("undershoot_dispersion", self.undershoot_dispersion),
            ("undershoot_ratio", self.undershoot_ratio),
            ("duration", self.duration),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if self.peak_delay >= self.undershoot_delay {
            return Err(Error::invalid(
                "peak_delay",
                "peak must come before the undershoot",
            ));
        }
        Ok(())
    }

    /// Uniform compression of the time axis by `scale`.
    pub fn compressed(&self, scale: f64) -> Self {
        Self {
            peak_delay: self.peak_delay * scale,
            undershoot_delay: self.undershoot_delay * scale,
            peak_dispersion: self.peak_dispersion * scale,
            undershoot_dispersion: self.undershoot_dispersion * scale,
            ..*self
        }
    }

    /// Unnormalised response at `t` seconds.
    pub fn value(&self, t: f64) -> f64 {
        let peak = gamma_pdf(t, self.peak_delay / self.peak_dispersion, self.peak_dispersion);
        let under = gamma_pdf(
            t,
            self.undershoot_delay / self.undershoot_dispersion,
            self.undershoot_dispersion,
        );
        peak - self.undershoot_ratio * under
    }
}

fn gamma_pdf(t: f64, shape: f64, scale: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    ((shape - 1.0) * t.ln() - t / scale - ln_gamma(shape) - shape * scale.ln()).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    /// Seconds, ascending.
    pub onsets: Vec<f64>,
    /// Seconds, one per onset.
    pub durations: Vec<f64>,
    #[serde(rename = "total_time_s")]
    pub total_time: f64,
    #[serde(rename = "tr_s")]
    pub tr: f64,
}

impl EventSequence {
    /// Regular on/off blocks starting at `first_onset`.
    pub fn block_design(first_onset: f64, on: f64, off: f64, total_time: f64, tr: f64) -> Self {
        let mut onsets = Vec::new();
        let mut t = first_onset;
        while t + on <= total_time + GRID_EPS {
            onsets.push(t);
            t += on + off;
        }
        let durations = vec![on; onsets.len()];
        Self {
            onsets,
            durations,
            total_time,
            tr,
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.total_time / self.tr).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tr > 0.0) {
            return Err(Error::invalid("tr", format!("must be positive, got {}", self.tr)));
        }
        if !(self.total_time > 0.0) {
            return Err(Error::invalid("total_time", "must be positive"));
        }
        if self.onsets.len() != self.durations.len() {
            return Err(Error::invalid("durations", "need exactly one duration per onset"));
        }
        for w in self.onsets.windows(2) {
            if w[1] < w[0] {
                return Err(Error::invalid("onsets", "must be sorted ascending"));
            }
        }
        for (&o, &d) in self.onsets.iter().zip(&self.durations) {
            if o < 0.0 || d < 0.0 || o + d > self.total_time + GRID_EPS {
                return Err(Error::invalid(
                    "onsets",
                    format!("event [{o}, {}) is outside [0, {}]", o + d, self.total_time),
                ));
            }
        }
        Ok(())
    }

    /// Indicator of active samples.
    pub fn boxcar(&self) -> Vec<f64> {
        (0..self.n_samples())
            .map(|k| {
                let t = k as f64 * self.tr;
                let active = self
                    .onsets
                    .iter()
                    .zip(&self.durations)
                    .any(|(&o, &d)| t >= o - GRID_EPS && t < o + d - GRID_EPS);
                if active {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeCourse {
    pub samples: Vec<f64>,
    pub tr: f64,
}

impl TimeCourse {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Divides by the largest absolute sample; an all-zero course is left alone.
    pub fn normalize_max_abs(&mut self) {
        let m = self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if m > 0.0 {
            self.samples.iter_mut().for_each(|v| *v /= m);
        }
    }

    /// Copy scaled to unit Euclidean norm.
    pub fn unit_norm(&self) -> Vec<f64> {
        let n = self.samples.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return self.samples.clone();
        }
        self.samples.iter().map(|v| v / n).collect()
    }
}

/// Samples `h(k·tr)` for `k = 0..=⌈duration/tr⌉`, scaled to a unit peak.
pub fn canonical_hrf(p: &HrfParams, tr: f64) -> Result<TimeCourse> {
    p.validate()?;
    if !(tr > 0.0 && tr.is_finite()) {
        return Err(Error::invalid("tr", format!("must be positive, got {tr}")));
    }
    let n = (p.duration / tr - GRID_EPS).ceil() as usize + 1;
    let mut samples: Vec<f64> = (0..n).map(|k| p.value(k as f64 * tr)).collect();
    let peak = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak > 0.0 {
        samples.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(TimeCourse { samples, tr })
}

/// Boxcar of `ev` convolved with `h`, truncated to the scan length and scaled
/// to unit maximum absolute value.
pub fn convolve_events(ev: &EventSequence, h: &TimeCourse) -> Result<TimeCourse> {
    ev.validate()?;
    if (ev.tr - h.tr).abs() > GRID_EPS * ev.tr.max(1.0) {
        return Err(Error::invalid(
            "tr",
            format!("event TR {} differs from kernel TR {}", ev.tr, h.tr),
        ));
    }
    let mut tc = TimeCourse {
        samples: convolve_raw(&ev.boxcar(), &h.samples),
        tr: ev.tr,
    };
    tc.normalize_max_abs();
    Ok(tc)
}

/// Causal discrete convolution truncated to `signal.len()`.
pub(crate) fn convolve_raw(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let t = signal.len();
    let mut out = vec![0.0; t];
    for (j, &s) in signal.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        for (k, &h) in kernel.iter().enumerate() {
            let n = j + k;
            if n >= t {
                break;
            }
            out[n] += s * h;
        }
    }
    out
}

/// Delays `tc` by `shift_seconds` (negative values advance it). Vacated
/// samples are zero. Only whole-sample shifts are accepted.
pub fn shift_time_course(tc: &TimeCourse, shift_seconds: f64) -> Result<TimeCourse> {
    let steps = shift_seconds / tc.tr;
    let rounded = steps.round();
    if (steps - rounded).abs() > GRID_EPS || !steps.is_finite() {
        return Err(Error::OffGridShift {
            shift_s: shift_seconds,
            tr_s: tc.tr,
        });
    }
    let steps = rounded as i64;
    let n = tc.len() as i64;
    let samples = (0..n)
        .map(|i| {
            let src = i - steps;
            if (0..n).contains(&src) {
                tc.samples[src as usize]
            } else {
                0.0
            }
        })
        .collect();
    Ok(TimeCourse {
        samples,
        tr: tc.tr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NarrowedHrf {
    pub scale: f64,
    pub params: HrfParams,
    pub hrf: TimeCourse,
    /// Squared correlation with the base response on the same grid.
    pub r_squared: f64,
}

/// Successively narrower responses, one per scale in `(0, 1]`, given in
/// strictly descending order.
pub fn narrowed_hrf_family(base: &HrfParams, scales: &[f64], tr: f64) -> Result<Vec<NarrowedHrf>> {
    for &w in scales {
        if !(w > 0.0 && w <= 1.0) {
            return Err(Error::invalid("scale", format!("{w} is outside (0, 1]")));
        }
    }
    if scales.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::invalid("scales", "must be strictly descending"));
    }
    let reference = canonical_hrf(base, tr)?;
    let mut family = Vec::with_capacity(scales.len());
    for &w in scales {
        let params = base.compressed(w);
        let hrf = canonical_hrf(&params, tr)?;
        let r = pearson_r(&hrf.samples, &reference.samples)?;
        family.push(NarrowedHrf {
            scale: w,
            params,
            hrf,
            r_squared: if w == 1.0 { 1.0 } else { r * r },
        });
    }
    if family.windows(2).any(|p| p[1].r_squared >= p[0].r_squared) {
        let values: Vec<f64> = family.iter().map(|f| f.r_squared).collect();
        return Err(Error::invalid(
            "scales",
            format!("squared correlations {values:?} are not strictly decreasing on a {tr} s grid"),
        ));
    }
    Ok(family)
}
