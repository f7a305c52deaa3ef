//! Core matrix types, the data-fit objective, and feasibility of a
//! dictionary with respect to its anchor and norm-ball constraints.
//!
//! The factorization is `X ≈ D S` with `X` of shape `T × N` (time × voxels),
//! `D` of shape `T × K` and `S` of shape `K × N`. The first `M` columns of
//! `D` are anchored: each must stay within squared distance `c_delta` of its
//! a-priori time course. The remaining `K - M` columns are free and must have
//! squared norm at most `c_d`.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{sq_dist, sq_norm};

/// Absolute tolerance on squared norms used by feasibility checks.
pub const FEASIBILITY_TOL: f64 = 1e-12;

fn first_non_finite(m: ArrayView2<f64>) -> Option<(usize, usize)> {
    m.indexed_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(idx, _)| idx)
}

/// Observation matrix, `T` time points by `N` voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix(Array2<f64>);

impl DataMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (t, n) = values.dim();
        if t < 2 {
            return Err(Error::invalid("T", format!("need at least 2 time points, got {t}")));
        }
        if n < 2 {
            return Err(Error::invalid("N", format!("need at least 2 voxels, got {n}")));
        }
        if let Some((r, c)) = first_non_finite(values.view()) {
            return Err(Error::invalid("X", format!("non-finite entry at ({r}, {c})")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn n_time(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_voxels(&self) -> usize {
        self.0.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// The a-priori time courses, one per anchored atom (`T × M`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnchorSet {
    deltas: Array2<f64>,
}

impl AnchorSet {
    pub fn new(deltas: Array2<f64>) -> Result<Self> {
        if let Some((r, c)) = first_non_finite(deltas.view()) {
            return Err(Error::invalid("anchors", format!("non-finite entry at ({r}, {c})")));
        }
        Ok(Self { deltas })
    }

    /// No anchors: the fully blind configuration.
    pub fn empty(n_time: usize) -> Self {
        Self {
            deltas: Array2::zeros((n_time, 0)),
        }
    }

    pub fn deltas(&self) -> &Array2<f64> {
        &self.deltas
    }

    pub fn delta(&self, i: usize) -> ArrayView1<'_, f64> {
        self.deltas.column(i)
    }

    pub fn len(&self) -> usize {
        self.deltas.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.ncols() == 0
    }

    pub fn n_time(&self) -> usize {
        self.deltas.nrows()
    }
}

/// How anchored atoms are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Anchored atoms move inside a ball of squared radius `c_delta`.
    AtomAssisted,
    /// Anchored atoms are held equal to their anchors (radius zero).
    Sdl,
    /// No anchors at all.
    Blind,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::AtomAssisted => "atom_assisted",
            Mode::Sdl => "sdl",
            Mode::Blind => "blind",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "atom_assisted" => Ok(Mode::AtomAssisted),
            "sdl" => Ok(Mode::Sdl),
            "blind" => Ok(Mode::Blind),
            other => Err(Error::invalid(
                "method",
                format!("unknown method `{other}` (expected atom_assisted, sdl or blind)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    /// Squared-distance radius around each anchor.
    pub c_delta: f64,
    /// Squared-norm bound for free atoms.
    pub c_d: f64,
    pub mode: Mode,
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        Self {
            c_delta: 0.2,
            c_d: 1.0,
            mode: Mode::AtomAssisted,
        }
    }
}

impl ConstraintSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_delta >= 0.0 && self.c_delta.is_finite()) {
            return Err(Error::invalid("c_delta", format!("must be >= 0, got {}", self.c_delta)));
        }
        if !(self.c_d > 0.0 && self.c_d.is_finite()) {
            return Err(Error::invalid("c_d", format!("must be > 0, got {}", self.c_d)));
        }
        Ok(())
    }

    /// Radius actually enforced on anchored atoms. SDL collapses the ball to
    /// its centre.
    pub fn anchor_radius(&self) -> f64 {
        match self.mode {
            Mode::Sdl => 0.0,
            _ => self.c_delta,
        }
    }
}

/// Dictionary `D = [D_C, D_F]` together with the constraint data it must
/// satisfy.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Array2<f64>,
    anchors: AnchorSet,
    constraints: ConstraintSpec,
}

impl Dictionary {
    pub fn new(atoms: Array2<f64>, anchors: AnchorSet, constraints: ConstraintSpec) -> Result<Self> {
        constraints.validate()?;
        let k = atoms.ncols();
        if k == 0 {
            return Err(Error::invalid("K", "dictionary needs at least one atom"));
        }
        if anchors.len() > k {
            return Err(Error::invalid(
                "M",
                format!("{} anchors exceed {} atoms", anchors.len(), k),
            ));
        }
        if constraints.mode == Mode::Blind && !anchors.is_empty() {
            return Err(Error::invalid("mode", "blind mode requires M = 0"));
        }
        check_dim("anchor length vs dictionary rows", atoms.nrows(), anchors.n_time())?;
        if let Some((r, c)) = first_non_finite(atoms.view()) {
            return Err(Error::invalid("D", format!("non-finite entry at ({r}, {c})")));
        }
        Ok(Self {
            atoms,
            anchors,
            constraints,
        })
    }

    pub fn atoms(&self) -> &Array2<f64> {
        &self.atoms
    }

    pub(crate) fn atoms_mut(&mut self) -> &mut Array2<f64> {
        &mut self.atoms
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    pub fn constraints(&self) -> &ConstraintSpec {
        &self.constraints
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn n_anchored(&self) -> usize {
        self.anchors.len()
    }

    pub fn n_time(&self) -> usize {
        self.atoms.nrows()
    }

    /// Same constraints, different atoms.
    pub fn with_atoms(&self, atoms: Array2<f64>) -> Result<Self> {
        Self::new(atoms, self.anchors.clone(), self.constraints)
    }

    pub fn into_atoms(self) -> Array2<f64> {
        self.atoms
    }
}

/// Sparse spatial maps, `K × N`. Sparsity is a property of the values; the
/// storage is dense.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix(Array2<f64>);

impl CoefficientMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some((r, c)) = first_non_finite(values.view()) {
            return Err(Error::invalid("S", format!("non-finite entry at ({r}, {c})")));
        }
        Ok(Self(values))
    }

    pub fn zeros(k: usize, n: usize) -> Self {
        Self(Array2::zeros((k, n)))
    }

    pub(crate) fn from_raw(values: Array2<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Fraction of entries that are exactly zero.
    pub fn zero_fraction(&self) -> f64 {
        let zeros = self.0.iter().filter(|v| **v == 0.0).count();
        zeros as f64 / self.0.len().max(1) as f64
    }
}

fn check_conformance(x: &DataMatrix, d: &Dictionary, s: &CoefficientMatrix) -> Result<()> {
    check_dim("rows of D vs rows of X (T)", x.n_time(), d.n_time())?;
    check_dim("rows of S vs columns of D (K)", d.n_atoms(), s.values().nrows())?;
    check_dim("columns of S vs columns of X (N)", x.n_voxels(), s.values().ncols())
}

pub(crate) fn residual_sq(x: ArrayView2<f64>, d: ArrayView2<f64>, s: ArrayView2<f64>) -> f64 {
    let mut r = d.dot(&s);
    r -= &x;
    r.iter().map(|v| v * v).sum()
}

pub(crate) fn l1(s: ArrayView2<f64>) -> f64 {
    s.iter().map(|v| v.abs()).sum()
}

/// `‖X − DS‖_F² + λ Σ|s_ij|`. Constraints are not penalised here; they are
/// enforced by projection.
pub fn objective(x: &DataMatrix, d: &Dictionary, s: &CoefficientMatrix, lambda: f64) -> Result<f64> {
    check_conformance(x, d, s)?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda", format!("must be >= 0, got {lambda}")));
    }
    Ok(residual_sq(x.values().view(), d.atoms().view(), s.values().view())
        + lambda * l1(s.values().view()))
}

/// `‖X − DS‖_F`.
pub fn residual_fro(x: &DataMatrix, d: &Dictionary, s: &CoefficientMatrix) -> Result<f64> {
    check_conformance(x, d, s)?;
    Ok(residual_sq(x.values().view(), d.atoms().view(), s.values().view()).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub atom: usize,
    /// Amount by which the squared distance (or norm) exceeds its bound.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
    /// Largest `max(0, ‖·‖² − c)` over all atoms.
    pub max_excess: f64,
}

/// Signed excess of every atom over its bound (negative means strictly inside).
pub(crate) fn atom_excesses(d: &Dictionary) -> impl Iterator<Item = (usize, f64)> + '_ {
    let m = d.n_anchored();
    let radius = d.constraints.anchor_radius();
    let c_d = d.constraints.c_d;
    d.atoms.axis_iter(Axis(1)).enumerate().map(move |(i, col)| {
        if i < m {
            (i, sq_dist(col, d.anchors.delta(i)) - radius)
        } else {
            (i, sq_norm(col) - c_d)
        }
    })
}

pub fn is_feasible(d: &Dictionary, tol: f64) -> FeasibilityReport {
    let mut violations = Vec::new();
    let mut max_excess = 0.0_f64;
    for (atom, excess) in atom_excesses(d) {
        max_excess = max_excess.max(excess);
        if excess > tol {
            violations.push(Violation { atom, excess });
        }
    }
    FeasibilityReport {
        feasible: violations.is_empty(),
        violations,
        max_excess,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn free_dict(atoms: Array2<f64>, c_d: f64) -> Dictionary {
        let t = atoms.nrows();
        Dictionary::new(
            atoms,
            AnchorSet::empty(t),
            ConstraintSpec {
                c_delta: 0.2,
                c_d,
                mode: Mode::Blind,
            },
        )
        .unwrap()
    }

    #[test]
    fn objective_of_zero_codes_is_data_energy() {
        let x = DataMatrix::new(array![[1.0, -2.0], [3.0, 0.5]]).unwrap();
        let d = free_dict(array![[1.0], [0.0]], 1.0);
        let s = CoefficientMatrix::zeros(1, 2);
        let v = objective(&x, &d, &s, 0.7).unwrap();
        assert_eq!(v, 1.0 + 4.0 + 9.0 + 0.25);
    }

    #[test]
    fn objective_hand_example() {
        // X = [[1],[1]] needs N >= 2, so duplicate the column and halve.
        let x = DataMatrix::new(array![[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let d = free_dict(array![[1.0], [0.0]], 1.0);
        let s = CoefficientMatrix::new(array![[1.0, 1.0]]).unwrap();
        let v = objective(&x, &d, &s, 0.1).unwrap();
        assert!((v / 2.0 - 1.1).abs() < 1e-15);
    }

    #[test]
    fn objective_rejects_mismatch() {
        let x = DataMatrix::new(Array2::zeros((3, 4))).unwrap();
        let d = free_dict(Array2::zeros((3, 2)), 1.0);
        let s = CoefficientMatrix::zeros(2, 5);
        let err = objective(&x, &d, &s, 0.1).unwrap_err();
        assert!(err.to_string().contains("(N)"), "{err}");
    }

    #[test]
    fn residual_examples() {
        let x = DataMatrix::new(Array2::eye(2)).unwrap();
        let d = free_dict(Array2::eye(2), 1.0);
        let s = CoefficientMatrix::new(Array2::eye(2) * 0.5).unwrap();
        assert!((residual_fro(&x, &d, &s).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        let s = CoefficientMatrix::new(Array2::eye(2)).unwrap();
        assert_eq!(residual_fro(&x, &d, &s).unwrap(), 0.0);
        assert_eq!(objective(&x, &d, &s, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn anchors_with_zero_free_atoms_are_feasible() {
        let deltas = array![[1.0], [2.0], [3.0]];
        let mut atoms = Array2::zeros((3, 3));
        atoms.column_mut(0).assign(&deltas.column(0));
        let d = Dictionary::new(atoms, AnchorSet::new(deltas).unwrap(), ConstraintSpec::default())
            .unwrap();
        let rep = is_feasible(&d, 0.0);
        assert!(rep.feasible);
        assert_eq!(rep.max_excess, 0.0);
    }

    #[test]
    fn boundary_free_atom_is_feasible() {
        let d = free_dict(array![[0.6], [0.8]], 1.0);
        // 0.36 + 0.64 rounds to exactly 1 in binary64
        assert!(is_feasible(&d, 0.0).feasible);
    }

    #[test]
    fn anchored_violation_reports_excess() {
        let deltas = array![[1.0], [0.0], [-1.0]];
        // v with ‖v‖² = 0.4 = 2 c_delta
        let v = array![0.4f64.sqrt(), 0.0, 0.0];
        let mut atoms = deltas.clone();
        atoms.column_mut(0).scaled_add(1.0, &v);
        let d = Dictionary::new(atoms, AnchorSet::new(deltas).unwrap(), ConstraintSpec::default())
            .unwrap();
        let rep = is_feasible(&d, FEASIBILITY_TOL);
        assert!(!rep.feasible);
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].atom, 0);
        assert!((rep.violations[0].excess - 0.2).abs() < 1e-12);
    }

    #[test]
    fn blind_mode_rejects_anchors() {
        let err = Dictionary::new(
            Array2::zeros((3, 2)),
            AnchorSet::new(Array2::zeros((3, 1))).unwrap(),
            ConstraintSpec {
                mode: Mode::Blind,
                ..Default::default()
            },
        );
        assert!(err.is_err());
    }

    #[test]
    fn data_matrix_validates() {
        assert!(DataMatrix::new(Array2::zeros((1, 4))).is_err());
        assert!(DataMatrix::new(array![[1.0, f64::NAN], [0.0, 0.0]]).is_err());
    }

    #[test]
    fn mode_round_trips_through_str() {
        for m in [Mode::AtomAssisted, Mode::Sdl, Mode::Blind] {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("ica".parse::<Mode>().is_err());
    }
}
