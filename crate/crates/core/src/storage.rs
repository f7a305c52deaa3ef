//! Plain-CSV matrices and JSON sidecars.
//!
//! Matrices are written one row per line, comma separated, no header. Each
//! value uses the shortest decimal form that parses back to the same
//! double, so a write/read round trip is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hrf::HrfParams;
use crate::model::{is_feasible, DataMatrix, Mode, FEASIBILITY_TOL};
use crate::solver::{FitResult, IterationRecord, SolverConfig};
use crate::simgen::{DatasetSpec, SourceRole, SyntheticDataset};

pub const X_FILE: &str = "X.csv";
pub const D_TRUE_FILE: &str = "D_true.csv";
pub const S_TRUE_FILE: &str = "S_true.csv";
pub const META_FILE: &str = "meta.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn format_matrix(m: &Array2<f64>) -> Result<String> {
    let mut out = String::with_capacity(m.len() * 20);
    for (r, row) in m.rows().into_iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(
                    "matrix",
                    format!("non-finite value {v} at ({r}, {c}) cannot be written"),
                ));
            }
            if c > 0 {
                out.push(',');
            }
            // Debug formatting is the shortest round-trip representation
            write!(out, "{v:?}").expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_matrix(m: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_matrix(m)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<Array2<f64>> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for (j, tok) in line.split(',').enumerate() {
            let v: f64 = tok.trim().parse().map_err(|_| {
                parse_err(format!("line {}, column {}: `{}` is not a number", i + 1, j + 1, tok.trim()))
            })?;
            if !v.is_finite() {
                return Err(parse_err(format!("line {}, column {}: non-finite value", i + 1, j + 1)));
            }
            values.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(parse_err(format!(
                    "ragged row at line {}: expected {c} values, found {count}",
                    i + 1
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err("empty matrix".into()))?;
    Ok(Array2::from_shape_vec((rows, cols), values).expect("row lengths were checked"))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text, path)
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub seed: u64,
    pub tr_s: f64,
    pub grid: Grid,
    pub source_roles: Vec<SourceRole>,
    pub task_index: usize,
    pub noise_sigma: f64,
    pub true_hrf: HrfParams,
    pub spec: DatasetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    /// `[rows, cols]` for matrices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<[usize; 2]>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub t: usize,
    pub n: usize,
    pub k_true: usize,
    pub files: Vec<ManifestEntry>,
}

impl BundleManifest {
    /// Re-hashes every listed file under `dir` and compares dimensions.
    pub fn verify(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for entry in &self.files {
            let path = dir.join(&entry.file);
            let digest = sha256_file(&path)?;
            if digest != entry.sha256 {
                return Err(Error::Parse {
                    path,
                    message: format!("checksum mismatch: manifest {} vs file {digest}", entry.sha256),
                });
            }
            if let Some([r, c]) = entry.shape {
                let m = read_matrix(&path)?;
                if m.dim() != (r, c) {
                    return Err(Error::Parse {
                        path,
                        message: format!("shape {:?} differs from manifest {:?}", m.dim(), (r, c)),
                    });
                }
            }
        }
        Ok(())
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `X.csv`, `D_true.csv`, `S_true.csv`, `meta.json` and
/// `manifest.json` into `dir`.
pub fn write_bundle(ds: &SyntheticDataset, dir: impl AsRef<Path>) -> Result<BundleManifest> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let matrices: [(&str, &Array2<f64>); 3] = [
        (X_FILE, ds.x.values()),
        (D_TRUE_FILE, &ds.d_true),
        (S_TRUE_FILE, &ds.s_true),
    ];
    let mut files = Vec::new();
    for (name, m) in matrices {
        let path = dir.join(name);
        write_matrix(m, &path)?;
        files.push(ManifestEntry {
            file: name.to_string(),
            shape: Some([m.nrows(), m.ncols()]),
            sha256: sha256_file(&path)?,
        });
    }
    let meta = BundleMeta {
        seed: ds.spec.seed,
        tr_s: ds.spec.tr_s,
        grid: Grid {
            width: ds.spec.width,
            height: ds.spec.height,
        },
        source_roles: ds.spec.sources.iter().map(|s| s.role).collect(),
        task_index: ds.task_index,
        noise_sigma: ds.spec.noise_sigma,
        true_hrf: ds.true_hrf,
        spec: ds.spec.clone(),
    };
    let meta_path = dir.join(META_FILE);
    write_json(&meta, &meta_path)?;
    files.push(ManifestEntry {
        file: META_FILE.to_string(),
        shape: None,
        sha256: sha256_file(&meta_path)?,
    });
    let manifest = BundleManifest {
        t: ds.x.n_time(),
        n: ds.x.n_voxels(),
        k_true: ds.d_true.ncols(),
        files,
    };
    write_json(&manifest, dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<SyntheticDataset> {
    let dir = dir.as_ref();
    let x = read_matrix(dir.join(X_FILE))?;
    let d_true = read_matrix(dir.join(D_TRUE_FILE))?;
    let s_true = read_matrix(dir.join(S_TRUE_FILE))?;
    let meta: BundleMeta = read_json(dir.join(META_FILE))?;
    let shape_err = |what: &str| Error::Parse {
        path: PathBuf::from(dir),
        message: format!("inconsistent bundle: {what}"),
    };
    if d_true.nrows() != x.nrows() || s_true.ncols() != x.ncols() || d_true.ncols() != s_true.nrows() {
        return Err(shape_err("X, D_true and S_true shapes do not conform"));
    }
    if meta.task_index >= s_true.nrows() {
        return Err(shape_err("task_index out of range"));
    }
    Ok(SyntheticDataset {
        x: DataMatrix::new(x)?,
        d_true,
        s_true,
        true_hrf: meta.true_hrf,
        task_index: meta.task_index,
        spec: meta.spec,
    })
}

pub const DICTIONARY_FILE: &str = "dictionary.csv";
pub const COEFFICIENTS_FILE: &str = "coefficients.csv";
pub const RESULT_FILE: &str = "result.json";
pub const TIMINGS_FILE: &str = "timings.json";

/// Contents of `result.json`. Wall-clock time lives in `timings.json` so
/// that this file is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub method: Mode,
    pub t: usize,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub config: SolverConfig,
    pub history: Vec<IterationRecord>,
    pub final_objective: f64,
    pub final_residual: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub wall_time_s: f64,
}

/// Writes `dictionary.csv`, `coefficients.csv`, `result.json` and
/// `timings.json`.
pub fn write_fit_result(fit: &FitResult, dir: impl AsRef<Path>) -> Result<FitSummary> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    write_matrix(fit.dictionary.atoms(), dir.join(DICTIONARY_FILE))?;
    write_matrix(fit.coefficients.values(), dir.join(COEFFICIENTS_FILE))?;
    let last = fit.history.last();
    let summary = FitSummary {
        method: fit.config.mode(),
        t: fit.dictionary.n_time(),
        n: fit.coefficients.values().ncols(),
        k: fit.dictionary.n_atoms(),
        m: fit.dictionary.n_anchored(),
        config: fit.config.clone(),
        history: fit.history.clone(),
        final_objective: last.map_or(f64::NAN, |h| h.objective),
        final_residual: last.map_or(f64::NAN, |h| h.residual),
        feasible: is_feasible(&fit.dictionary, FEASIBILITY_TOL).feasible,
    };
    write_json(&summary, dir.join(RESULT_FILE))?;
    write_json(
        &Timings {
            wall_time_s: fit.wall_time_s,
        },
        dir.join(TIMINGS_FILE),
    )?;
    Ok(summary)
}
