use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::expr::{LinExpr, Var};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Cone an affine image must lie in.
///
/// `Psd(side)` constraints list the `side (side + 1) / 2` lower-triangular
/// entries row by row, `(0,0), (1,0), (1,1), (2,0), ...`, with off-diagonal
/// entries multiplied by √2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    Zero(usize),
    NonNeg(usize),
    /// `(t, x)` with `‖x‖ ≤ t`.
    SecondOrder(usize),
    Psd(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(d) | Cone::NonNeg(d) | Cone::SecondOrder(d) => d,
            Cone::Psd(side) => side * (side + 1) / 2,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Cone::Zero(_) => "zero",
            Cone::NonNeg(_) => "nonneg",
            Cone::SecondOrder(_) => "soc",
            Cone::Psd(_) => "psd",
        }
    }

    /// Distance-like violation of `s` with respect to this cone (0 when
    /// inside). For PSD cones this is the negative part of the smallest
    /// eigenvalue.
    pub fn violation(&self, s: &[f64]) -> f64 {
        match *self {
            Cone::Zero(_) => s.iter().fold(0.0, |m, v| m.max(v.abs())),
            Cone::NonNeg(_) => s.iter().fold(0.0, |m, &v| m.max(-v)),
            Cone::SecondOrder(_) => {
                let norm = s[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                (norm - s[0]).max(0.0)
            }
            Cone::Psd(side) => {
                let m = smat(s, side);
                let lmin = SymmetricEigen::new(m).eigenvalues.min();
                (-lmin).max(0.0)
            }
        }
    }

    /// Violation of `y` with respect to the dual cone. All supported cones
    /// are self-dual except `Zero`, whose dual is the whole space.
    pub fn dual_violation(&self, y: &[f64]) -> f64 {
        match self {
            Cone::Zero(_) => 0.0,
            _ => self.violation(y),
        }
    }
}

/// Position of entry `(i, j)`, `i >= j`, in the packed lower triangle.
pub fn svec_index(i: usize, j: usize) -> usize {
    debug_assert!(i >= j);
    i * (i + 1) / 2 + j
}

/// Scaled packed vectorization of a symmetric matrix.
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            out.push(if i == j { m[(i, j)] } else { SQRT2 * m[(i, j)] });
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let x = v[svec_index(i, j)];
            if i == j {
                m[(i, i)] = x;
            } else {
                m[(i, j)] = x / SQRT2;
                m[(j, i)] = x / SQRT2;
            }
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeConstraint {
    pub cone: Cone,
    pub rows: Vec<LinExpr>,
    pub label: String,
}

impl ConeConstraint {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.eval(x)).collect()
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        self.cone.violation(&self.eval(x))
    }

    /// For PSD constraints, the symmetric matrix at `x`.
    pub fn matrix_at(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        match self.cone {
            Cone::Psd(side) => Some(smat(&self.eval(x), side)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("constraint `{label}` has {rows} rows but its cone needs {dim}")]
    DimensionMismatch { label: String, rows: usize, dim: usize },
    #[error("constraint `{label}` references unknown variable {var}")]
    UnknownVariable { label: String, var: usize },
}

/// Linear objective over affine cone constraints:
/// minimize `objective(x)` subject to `rows_i(x) ∈ cone_i`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConeProgram {
    pub var_names: Vec<String>,
    pub objective: LinExpr,
    pub constraints: Vec<ConeConstraint>,
}

impl ConeProgram {
    pub fn new() -> Self {
        ConeProgram::default()
    }

    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn new_var(&mut self, name: impl Into<String>) -> Var {
        self.var_names.push(name.into());
        Var(self.var_names.len() - 1)
    }

    pub fn var_name(&self, v: Var) -> &str {
        &self.var_names[v.0]
    }

    pub fn add(&mut self, cone: Cone, rows: Vec<LinExpr>, label: impl Into<String>) -> Result<usize, ProgramError> {
        let label = label.into();
        if rows.len() != cone.dim() {
            return Err(ProgramError::DimensionMismatch { label, rows: rows.len(), dim: cone.dim() });
        }
        let n = self.num_vars();
        if let Some(&(v, _)) = rows.iter().flat_map(|r| r.terms.iter()).find(|(v, _)| v.0 >= n) {
            return Err(ProgramError::UnknownVariable { label, var: v.0 });
        }
        let rows = rows.into_iter().map(LinExpr::compact).collect();
        self.constraints.push(ConeConstraint { cone, rows, label });
        Ok(self.constraints.len() - 1)
    }

    pub fn add_constraint(&mut self, c: ConeConstraint) -> Result<usize, ProgramError> {
        self.add(c.cone, c.rows, c.label)
    }

    pub fn add_eq(&mut self, row: LinExpr, label: impl Into<String>) {
        self.add(Cone::Zero(1), vec![row], label).expect("scalar row");
    }

    pub fn add_nonneg(&mut self, row: LinExpr, label: impl Into<String>) {
        self.add(Cone::NonNeg(1), vec![row], label).expect("scalar row");
    }

    /// Adds `entry(i, j)` (for `i >= j`) as a PSD constraint of the given side.
    pub fn add_psd_matrix(
        &mut self,
        side: usize,
        mut entry: impl FnMut(usize, usize) -> LinExpr,
        label: impl Into<String>,
    ) -> Result<usize, ProgramError> {
        self.add(Cone::Psd(side), psd_rows(side, &mut entry), label)
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        let n = self.num_vars();
        for c in &self.constraints {
            if c.rows.len() != c.cone.dim() {
                return Err(ProgramError::DimensionMismatch {
                    label: c.label.clone(),
                    rows: c.rows.len(),
                    dim: c.cone.dim(),
                });
            }
            if let Some(&(v, _)) = c.rows.iter().flat_map(|r| r.terms.iter()).find(|(v, _)| v.0 >= n) {
                return Err(ProgramError::UnknownVariable { label: c.label.clone(), var: v.0 });
            }
        }
        Ok(())
    }

    pub fn num_rows(&self) -> usize {
        self.constraints.iter().map(|c| c.rows.len()).sum()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    /// Largest cone violation over all constraints at `x`, with the label of
    /// the worst constraint.
    pub fn max_violation(&self, x: &[f64]) -> (f64, Option<&str>) {
        let mut worst = (0.0, None);
        for c in &self.constraints {
            let v = c.violation(x);
            if v > worst.0 {
                worst = (v, Some(c.label.as_str()));
            }
        }
        worst
    }
}

pub(crate) fn psd_rows(side: usize, entry: &mut impl FnMut(usize, usize) -> LinExpr) -> Vec<LinExpr> {
    let mut rows = Vec::with_capacity(side * (side + 1) / 2);
    for i in 0..side {
        for j in 0..=i {
            let e = entry(i, j);
            rows.push(if i == j { e } else { e.scaled(SQRT2) });
        }
    }
    rows
}
