//! Conic program representation and solver interface.

pub mod dump;
pub mod epigraph;
pub mod expr;
pub mod hermitian;
pub mod program;
pub mod solver;

pub use dump::dump_program;
pub use epigraph::{quad_cost_epigraph, Epigraph, EpigraphError};
pub use expr::{ComplexExpr, LinExpr, Var};
pub use hermitian::{embed_hermitian_psd, HermitianBlock, HermitianError};
pub use program::{smat, svec, svec_index, Cone, ConeConstraint, ConeProgram, ProgramError};
pub use solver::{solve, verify, ClarabelBackend, ConicBackend, Residuals, SolveStatus, SolverOptions, SolverResult};
