use thiserror::Error;

use super::expr::{LinExpr, Var};
use super::program::{Cone, ConeProgram};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EpigraphError {
    #[error("quadratic cost coefficient {0} is negative")]
    NegativeQuadCoefficient(f64),
    #[error("epigraph scale {0} is not positive and finite")]
    InvalidScale(f64),
}

/// Result of rewriting `c2 p² + c1 p + c0` for a linear objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Epigraph {
    /// Variable bounding `(p / scale)²` from above; `None` when `c2 = 0`.
    pub r: Option<Var>,
    pub scale: f64,
    /// Linear objective term `c2 scale² r + c1 p + c0`.
    pub contribution: LinExpr,
}

/// Adds `r ≥ (p / scale)²` to `program` as the second-order cone
/// `‖(2p / scale, r − 1)‖ ≤ r + 1` and returns the linear objective term.
/// `scale` should be the magnitude of `p`, so that the cone entries and
/// duals stay near one.
pub fn quad_cost_epigraph(
    program: &mut ConeProgram,
    c2: f64,
    c1: f64,
    c0: f64,
    p: impl Into<LinExpr>,
    scale: f64,
    name: &str,
) -> Result<Epigraph, EpigraphError> {
    if c2 < 0.0 || c2.is_nan() {
        return Err(EpigraphError::NegativeQuadCoefficient(c2));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(EpigraphError::InvalidScale(scale));
    }
    let p = p.into();
    let linear = c1 * p.clone() + LinExpr::constant(c0);
    if c2 == 0.0 {
        return Ok(Epigraph { r: None, scale, contribution: linear });
    }
    let r = program.new_var(format!("r[{name}]"));
    let rows = vec![
        LinExpr::var(r) + LinExpr::constant(1.0),
        (2.0 / scale) * p,
        LinExpr::var(r) - LinExpr::constant(1.0),
    ];
    program.add(Cone::SecondOrder(3), rows, format!("epigraph[{name}]")).expect("three rows");
    Ok(Epigraph { r: Some(r), scale, contribution: (c2 * scale * scale) * LinExpr::var(r) + linear })
}
