use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use super::program::{Cone, ConeProgram, ProgramError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Target for primal residual, dual residual and relative gap.
    pub tolerance: f64,
    pub max_iter: u32,
    /// Seconds; `None` for no limit.
    pub time_limit: Option<f64>,
    pub verbose: bool,
    /// Let the backend split PSD cones along structural zeros on its own.
    pub backend_decomposition: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tolerance: 1e-8, max_iter: 200, time_limit: None, verbose: false, backend_decomposition: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
    IterLimit,
}

/// Residuals recomputed from a primal-dual pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    /// Largest cone violation of the constraint rows at `x`, relative to
    /// `max(1, max |constant term|)`.
    pub primal: f64,
    /// `‖c − Aᵀy‖∞` plus the dual cone violation of `y`, relative to
    /// `max(1, ‖c‖∞)`.
    pub dual: f64,
    /// `|primal objective − dual objective| / max(1, |primal objective|)`.
    pub gap: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub status: SolveStatus,
    pub primal: Option<Vec<f64>>,
    /// Multipliers, one vector per constraint, in the constraint's row order.
    pub dual: Option<Vec<Vec<f64>>>,
    pub objective: Option<f64>,
    pub residuals: Option<Residuals>,
    pub solve_time: f64,
    pub iterations: u32,
    pub backend_status: String,
    /// Optimal, but some residual lies between `tolerance` and its square root.
    pub reduced_accuracy: bool,
}

impl SolverResult {
    fn failed(status: SolveStatus, backend_status: String, solve_time: f64, iterations: u32) -> Self {
        SolverResult {
            status,
            primal: None,
            dual: None,
            objective: None,
            residuals: None,
            solve_time,
            iterations,
            backend_status,
            reduced_accuracy: false,
        }
    }
}

pub trait ConicBackend {
    fn name(&self) -> &'static str;
    fn solve(&self, program: &ConeProgram, options: &SolverOptions) -> Result<SolverResult, ProgramError>;
}

/// Linear solvers for the KKT system, tried in order until one does not stall.
const LINEAR_SOLVERS: [&str; 2] = ["faer", "qdldl"];

/// Adapter to the Clarabel interior-point solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

fn to_clarabel_cone(c: &Cone) -> SupportedConeT<f64> {
    match *c {
        Cone::Zero(d) => SupportedConeT::ZeroConeT(d),
        Cone::NonNeg(d) => SupportedConeT::NonnegativeConeT(d),
        Cone::SecondOrder(d) => SupportedConeT::SecondOrderConeT(d),
        // packed lower triangle by rows equals packed upper triangle by columns
        Cone::Psd(side) => SupportedConeT::PSDTriangleConeT(side),
    }
}

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, program: &ConeProgram, options: &SolverOptions) -> Result<SolverResult, ProgramError> {
        program.validate()?;
        let start = Instant::now();
        let n = program.num_vars();
        let m = program.num_rows();

        let obj = program.objective.clone().compact();
        let c_scale = obj.terms.iter().fold(1.0_f64, |s, &(_, c)| s.max(c.abs()));
        let mut q = vec![0.0; n];
        for &(v, c) in &obj.terms {
            q[v.0] = c / c_scale;
        }

        // Clarabel form: A x + s = b, s ∈ K. Our rows are a·x + b ∈ K.
        let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::with_capacity(m);
        let mut row = 0;
        for con in &program.constraints {
            for r in &con.rows {
                for &(v, c) in &r.terms {
                    ii.push(row);
                    jj.push(v.0);
                    vv.push(-c);
                }
                b.push(r.constant);
                row += 1;
            }
        }
        let a = CscMatrix::new_from_triplets(m, n, ii, jj, vv);
        let p = CscMatrix::zeros((n, n));
        let cones: Vec<_> = program.constraints.iter().map(|c| to_clarabel_cone(&c.cone)).collect();

        let mut solved = None;
        for method in LINEAR_SOLVERS {
            let settings = DefaultSettingsBuilder::default()
                .verbose(options.verbose)
                .max_iter(options.max_iter)
                .time_limit(options.time_limit.unwrap_or(f64::INFINITY))
                .tol_gap_abs(options.tolerance)
                .tol_gap_rel(options.tolerance)
                .tol_feas(options.tolerance)
                .presolve_enable(false)
                .chordal_decomposition_enable(options.backend_decomposition)
                .direct_solve_method(method.to_string())
                .build()
                .expect("valid settings");
            let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, settings) {
                Ok(s) => s,
                Err(e) => {
                    return Ok(SolverResult::failed(
                        SolveStatus::NumericalFailure,
                        format!("setup: {e}"),
                        start.elapsed().as_secs_f64(),
                        0,
                    ))
                }
            };
            solver.solve();
            let failed = matches!(solver.solution.status, SolverStatus::NumericalError | SolverStatus::InsufficientProgress);
            solved = Some(solver);
            if !failed {
                break;
            }
            log::warn!("{method} factorization stalled, retrying with the next linear solver");
        }
        let solver = solved.expect("at least one linear solver");
        let sol = &solver.solution;
        let elapsed = start.elapsed().as_secs_f64();
        let backend_status = format!("{:?}", sol.status);
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::IterLimit,
            _ => SolveStatus::NumericalFailure,
        };
        if !matches!(status, SolveStatus::Optimal | SolveStatus::IterLimit) {
            return Ok(SolverResult::failed(status, backend_status, elapsed, sol.iterations));
        }

        let x = sol.x.clone();
        let mut dual = Vec::with_capacity(program.constraints.len());
        let mut off = 0;
        for con in &program.constraints {
            let d = con.rows.len();
            dual.push(sol.z[off..off + d].iter().map(|z| z * c_scale).collect::<Vec<f64>>());
            off += d;
        }
        let residuals = verify(program, &x, &dual);
        let status = if status == SolveStatus::Optimal && residuals.max() > options.tolerance {
            log::info!(
                "backend reported {backend_status} but residuals {:?} exceed {}",
                residuals,
                options.tolerance
            );
            if residuals.max() > options.tolerance.sqrt() {
                SolveStatus::NumericalFailure
            } else {
                SolveStatus::Optimal
            }
        } else {
            status
        };
        if status == SolveStatus::NumericalFailure {
            let mut failed = SolverResult::failed(status, backend_status, elapsed, sol.iterations);
            failed.residuals = Some(residuals);
            return Ok(failed);
        }
        Ok(SolverResult {
            status,
            objective: Some(program.objective_value(&x)),
            primal: Some(x),
            dual: Some(dual),
            residuals: Some(residuals),
            solve_time: elapsed,
            iterations: sol.iterations,
            backend_status,
            reduced_accuracy: status == SolveStatus::Optimal && residuals.max() > options.tolerance,
        })
    }
}

/// Recomputes residuals of `(x, y)` for `program` without trusting the backend.
///
/// The dual of `min c·x + c0  s.t.  A_i x + b_i ∈ K_i` is
/// `max c0 − Σ b_i·y_i  s.t.  Σ A_iᵀ y_i = c,  y_i ∈ K_i*`.
pub fn verify(program: &ConeProgram, x: &[f64], y: &[Vec<f64>]) -> Residuals {
    let n = program.num_vars();
    let mut b_norm: f64 = 1.0;
    let mut primal: f64 = 0.0;
    let mut dual_cone: f64 = 0.0;
    let mut aty = vec![0.0; n];
    let mut by = 0.0;
    for (con, yi) in program.constraints.iter().zip(y) {
        for (r, &yr) in con.rows.iter().zip(yi) {
            b_norm = b_norm.max(r.constant.abs());
            for &(v, c) in &r.terms {
                aty[v.0] += c * yr;
            }
            by += r.constant * yr;
        }
        primal = primal.max(con.violation(x));
        dual_cone = dual_cone.max(con.cone.dual_violation(yi));
    }
    let obj = program.objective.clone().compact();
    let mut c = vec![0.0; n];
    for &(v, coef) in &obj.terms {
        c[v.0] = coef;
    }
    let c_norm = c.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
    let stat = c.iter().zip(&aty).fold(0.0_f64, |s, (ci, ai)| s.max((ci - ai).abs()));
    let p_obj = obj.eval(x);
    let d_obj = obj.constant - by;
    Residuals {
        primal: primal / b_norm,
        dual: (stat + dual_cone) / c_norm,
        gap: (p_obj - d_obj).abs() / p_obj.abs().max(1.0),
    }
}

/// Solves with the default backend.
pub fn solve(program: &ConeProgram, options: &SolverOptions) -> Result<SolverResult, ProgramError> {
    ClarabelBackend.solve(program, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::expr::LinExpr;

    #[test]
    fn lower_bound_is_attained() {
        let mut p = ConeProgram::new();
        let x = p.new_var("x");
        p.objective = LinExpr::var(x);
        p.add_nonneg(LinExpr::var(x) - LinExpr::constant(3.0), "x>=3");
        let r = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective.unwrap() - 3.0).abs() < 1e-7);
        assert!(r.residuals.unwrap().max() <= 1e-8);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut p = ConeProgram::new();
        let x = p.new_var("x");
        p.add_nonneg(LinExpr::var(x) - LinExpr::constant(1.0), "x>=1");
        p.add_nonneg(-LinExpr::var(x), "x<=0");
        let r = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.primal.is_none());
    }

    #[test]
    fn unbounded_direction_is_reported() {
        let mut p = ConeProgram::new();
        let x = p.new_var("x");
        p.objective = -LinExpr::var(x);
        p.add_nonneg(LinExpr::var(x), "x>=0");
        let r = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Unbounded);
    }

    #[test]
    fn psd_with_unit_offdiagonal() {
        // min a + d  s.t. [[a, 1], [1, d]] ⪰ 0
        let mut p = ConeProgram::new();
        let a = p.new_var("a");
        let d = p.new_var("d");
        p.objective = LinExpr::var(a) + LinExpr::var(d);
        p.add_psd_matrix(
            2,
            |i, j| match (i, j) {
                (0, 0) => LinExpr::var(a),
                (1, 1) => LinExpr::var(d),
                _ => LinExpr::constant(1.0),
            },
            "m",
        )
        .unwrap();
        let r = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        let x = r.primal.unwrap();
        assert!((r.objective.unwrap() - 2.0).abs() < 1e-7);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6);
    }
}
