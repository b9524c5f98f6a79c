//! Plain-text listing of a [`ConeProgram`] for cross-solver debugging.
//!
//! ```text
//! # orpd-cone-program v1
//! vars <n>
//! var <index> <name>
//! objective <constant>
//! c <var> <coef>
//! block <index> <zero|nonneg|soc|psd> <dim or side> <label>
//! b <row> <constant>
//! a <row> <var> <coef>
//! ```
//!
//! Rows are numbered within their block. PSD blocks list the scaled packed
//! lower triangle. Zero constants and coefficients are omitted.

use std::fmt::Write;

use super::program::{Cone, ConeProgram};

pub const DUMP_HEADER: &str = "# orpd-cone-program v1";

pub fn dump_program(program: &ConeProgram) -> String {
    let mut out = String::new();
    writeln!(out, "{DUMP_HEADER}").unwrap();
    writeln!(out, "vars {}", program.num_vars()).unwrap();
    for (i, name) in program.var_names.iter().enumerate() {
        writeln!(out, "var {i} {name}").unwrap();
    }
    let obj = program.objective.clone().compact();
    writeln!(out, "objective {:e}", obj.constant).unwrap();
    for (v, c) in &obj.terms {
        writeln!(out, "c {} {:e}", v.0, c).unwrap();
    }
    for (k, con) in program.constraints.iter().enumerate() {
        let size = match con.cone {
            Cone::Psd(side) => side,
            other => other.dim(),
        };
        writeln!(out, "block {k} {} {size} {}", con.cone.tag(), con.label).unwrap();
        for (r, row) in con.rows.iter().enumerate() {
            if row.constant != 0.0 {
                writeln!(out, "b {r} {:e}", row.constant).unwrap();
            }
            for (v, c) in &row.terms {
                writeln!(out, "a {r} {} {:e}", v.0, c).unwrap();
            }
        }
    }
    out
}
