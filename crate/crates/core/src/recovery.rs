//! Shunt and tap settings from a relaxation solution, rounding and gaps.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{SolveStatus, SolverResult};
use crate::network::{Network, TapGrid};
use crate::relaxations::{LiftedVars, RelaxationKind};

/// Values outside their range by at most this much are clamped silently.
pub const CLAMP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecoveryError {
    #[error("V_kk at bus {0} is not positive")]
    NonpositiveVkk(usize),
    #[error("W_ll of branch {0} is not positive")]
    NonpositiveWll(usize),
    #[error("{what} = {value} is outside [{lo}, {hi}] beyond tolerance")]
    OutOfRange { what: String, value: f64, lo: f64, hi: f64 },
    #[error("upper bound {0} is not positive")]
    NonpositiveUpper(f64),
    #[error("relaxation has no primal solution (status {0:?})")]
    NoSolution(SolveStatus),
}

/// Lifted values of one tap branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapValues {
    pub branch: usize,
    pub w_ll: f64,
    pub w_kl: f64,
    pub w_lm: Complex64,
}

/// Relaxation solution with every lifted handle resolved to a number.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationSolution {
    pub kind: RelaxationKind,
    pub bound: f64,
    pub status: SolveStatus,
    pub v_diag: Vec<f64>,
    /// `V_ij` for `i > j`.
    pub v_off: BTreeMap<(usize, usize), Complex64>,
    pub taps: Vec<TapValues>,
    pub xi: Vec<f64>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub v: Option<Vec<Complex64>>,
    pub solve_time: f64,
    pub iterations: u32,
}

impl RelaxationSolution {
    pub fn from_result(kind: RelaxationKind, vars: &LiftedVars, result: &SolverResult) -> Result<Self, RecoveryError> {
        let (Some(x), Some(bound)) = (&result.primal, result.objective) else {
            return Err(RecoveryError::NoSolution(result.status));
        };
        let val = |v: crate::conic::Var| x[v.0];
        Ok(RelaxationSolution {
            kind,
            bound,
            status: result.status,
            v_diag: vars.v_diag.iter().map(|&v| val(v)).collect(),
            v_off: vars.v_off.iter().map(|(&k, &(re, im))| (k, Complex64::new(val(re), val(im)))).collect(),
            taps: vars
                .taps
                .iter()
                .map(|t| TapValues {
                    branch: t.branch,
                    w_ll: val(t.w_ll),
                    w_kl: val(t.w_kl),
                    w_lm: Complex64::new(val(t.w_lm.0), val(t.w_lm.1)),
                })
                .collect(),
            xi: vars.xi.iter().map(|&v| val(v)).collect(),
            pg: vars.pg.iter().map(|&v| val(v)).collect(),
            qg: vars.qg.iter().map(|&v| val(v)).collect(),
            v: vars.v.as_ref().map(|v| v.iter().map(|&(re, im)| Complex64::new(val(re), val(im))).collect()),
            solve_time: result.solve_time,
            iterations: result.iterations,
        })
    }

    /// `V_ij`, if instantiated.
    pub fn v_entry(&self, i: usize, j: usize) -> Option<Complex64> {
        if i == j {
            return Some(Complex64::new(self.v_diag[i], 0.0));
        }
        let (a, b) = if i > j { (i, j) } else { (j, i) };
        let z = *self.v_off.get(&(a, b))?;
        Some(if i > j { z } else { z.conj() })
    }
}

/// Continuous and rounded shunt and tap settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteAssignment {
    /// Per shunt, in `[0, 1]`.
    pub u_hat: Vec<f64>,
    /// Per tap branch, within its grid range.
    pub t_hat: Vec<f64>,
    pub u_round: Vec<bool>,
    pub t_round: Vec<f64>,
    pub grids: Vec<TapGrid>,
    pub diagnostics: Vec<String>,
}

impl DiscreteAssignment {
    /// Assignment whose continuous part equals the given settings.
    pub fn fixed(net: &Network, u: Vec<bool>, t: Vec<f64>) -> Self {
        DiscreteAssignment {
            u_hat: u.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            t_hat: t.clone(),
            u_round: u,
            t_round: t,
            grids: tap_grids(net),
            diagnostics: Vec::new(),
        }
    }

    /// Shunts switched on and taps at the ratios stored in the case.
    pub fn case_defaults(net: &Network) -> Self {
        let t = net.tap_branches.iter().map(|&l| net.branches[l].nominal_tap).collect();
        DiscreteAssignment::fixed(net, vec![true; net.shunts.len()], t)
    }

    /// Ratio per branch: the rounded setting on tap branches, 1 elsewhere.
    pub fn branch_ratios(&self, net: &Network) -> Vec<f64> {
        let mut r = vec![1.0; net.branches.len()];
        for (&l, &t) in net.tap_branches.iter().zip(&self.t_round) {
            r[l] = t;
        }
        r
    }

    /// Shunt admittance `u (g' + j b')` per bus.
    pub fn shunt_admittance(&self, net: &Network) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); net.n_buses()];
        for (s, &on) in net.shunts.iter().zip(&self.u_round) {
            if on {
                y[s.bus] += Complex64::new(s.g_shunt, s.b_shunt);
            }
        }
        y
    }
}

fn tap_grids(net: &Network) -> Vec<TapGrid> {
    net.tap_branches
        .iter()
        .map(|&l| net.branches[l].tap.clone().expect("tap branch has a grid"))
        .collect()
}

fn clamp_checked(what: String, value: f64, lo: f64, hi: f64, diags: &mut Vec<String>) -> Result<f64, RecoveryError> {
    if value < lo - CLAMP_TOLERANCE || value > hi + CLAMP_TOLERANCE || value.is_nan() {
        return Err(RecoveryError::OutOfRange { what, value, lo, hi });
    }
    let c = value.clamp(lo, hi);
    if c != value {
        diags.push(format!("{what} clamped by {:.3e}", (c - value).abs()));
    }
    Ok(c)
}

/// `û_k = ξ_k / V_kk` and `t̂_ℓ = √(V_kk / W_ℓℓ)`; the rounded part is
/// filled by [`round_assignment`].
pub fn recover_continuous(net: &Network, sol: &RelaxationSolution) -> Result<DiscreteAssignment, RecoveryError> {
    let mut diags = Vec::new();
    let mut u_hat = Vec::with_capacity(net.shunts.len());
    for (s, &xi) in net.shunts.iter().zip(&sol.xi) {
        let vkk = sol.v_diag[s.bus];
        if !(vkk > 0.0) {
            return Err(RecoveryError::NonpositiveVkk(s.bus));
        }
        u_hat.push(clamp_checked(format!("u[{}]", s.bus), xi / vkk, 0.0, 1.0, &mut diags)?);
    }
    let grids = tap_grids(net);
    let mut t_hat = Vec::with_capacity(grids.len());
    for (tv, grid) in sol.taps.iter().zip(&grids) {
        let k = net.branches[tv.branch].from_bus;
        let vkk = sol.v_diag[k];
        if !(vkk > 0.0) {
            return Err(RecoveryError::NonpositiveVkk(k));
        }
        if !(tv.w_ll > 0.0) {
            return Err(RecoveryError::NonpositiveWll(tv.branch));
        }
        let t = (vkk / tv.w_ll).sqrt();
        if tv.w_kl > 0.0 {
            let alt = vkk / tv.w_kl;
            if (alt - t).abs() > 1e-4 {
                diags.push(format!("t[{}]: V_kk/W_kl = {alt:.6} differs from {t:.6}", tv.branch));
            }
        }
        t_hat.push(clamp_checked(format!("t[{}]", tv.branch), t, grid.t_min, grid.t_max, &mut diags)?);
    }
    Ok(DiscreteAssignment { u_round: vec![false; u_hat.len()], t_round: t_hat.clone(), u_hat, t_hat, grids, diagnostics: diags })
}

/// Nearest discrete values; `û = 0.5` switches the shunt on.
pub fn round_assignment(cont: &DiscreteAssignment) -> DiscreteAssignment {
    let mut out = cont.clone();
    out.u_round = cont.u_hat.iter().map(|&u| u >= 0.5).collect();
    out.t_round = cont.t_hat.iter().zip(&cont.grids).map(|(&t, g)| g.round(t)).collect();
    out
}

/// `100 (1 − bound / upper)` in percent.
pub fn optimality_gap(bound: f64, upper: f64) -> Result<f64, RecoveryError> {
    if !(upper > 0.0) {
        return Err(RecoveryError::NonpositiveUpper(upper));
    }
    Ok(100.0 * (1.0 - bound / upper))
}
