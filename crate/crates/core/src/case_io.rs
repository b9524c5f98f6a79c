//! MATPOWER case files: parsing, validation and serialization.
//!
//! Only the subset of the format needed for optimal reactive power dispatch is
//! understood: `baseMVA`, `bus`, `gen`, `branch` and (optionally) `gencost`.
//! Every other assignment in the file (cell arrays, `version`, `areas`, ...)
//! is skipped.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Column indices of the MATPOWER `bus` matrix.
pub mod bus_col {
    pub const BUS_I: usize = 0;
    pub const TYPE: usize = 1;
    pub const PD: usize = 2;
    pub const QD: usize = 3;
    pub const GS: usize = 4;
    pub const BS: usize = 5;
    pub const VM: usize = 7;
    pub const VA: usize = 8;
    pub const VMAX: usize = 11;
    pub const VMIN: usize = 12;
}

/// Column indices of the MATPOWER `gen` matrix.
pub mod gen_col {
    pub const GEN_BUS: usize = 0;
    pub const PG: usize = 1;
    pub const QG: usize = 2;
    pub const QMAX: usize = 3;
    pub const QMIN: usize = 4;
    pub const STATUS: usize = 7;
    pub const PMAX: usize = 8;
    pub const PMIN: usize = 9;
}

/// Column indices of the MATPOWER `branch` matrix.
pub mod branch_col {
    pub const F_BUS: usize = 0;
    pub const T_BUS: usize = 1;
    pub const BR_R: usize = 2;
    pub const BR_X: usize = 3;
    pub const BR_B: usize = 4;
    pub const RATE_A: usize = 5;
    pub const TAP: usize = 8;
    pub const SHIFT: usize = 9;
    pub const BR_STATUS: usize = 10;
}

/// Column indices of the MATPOWER `gencost` matrix.
pub mod gencost_col {
    pub const MODEL: usize = 0;
    pub const NCOST: usize = 3;
    pub const COST: usize = 4;
}

pub const BUS_MIN_COLS: usize = 13;
pub const GEN_MIN_COLS: usize = 10;
pub const BRANCH_MIN_COLS: usize = 13;
pub const GENCOST_MIN_COLS: usize = 4;

/// Raw tabular content of a MATPOWER case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCase {
    pub base_mva: f64,
    pub bus_rows: Vec<Vec<f64>>,
    pub gen_rows: Vec<Vec<f64>>,
    pub branch_rows: Vec<Vec<f64>>,
    pub gencost_rows: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("required matrix `{0}` not found")]
    MissingMatrix(String),
    #[error("malformed row in `{matrix}` at line {line}: {reason}")]
    MalformedRow {
        matrix: String,
        line: usize,
        reason: String,
    },
    #[error("non-numeric entry in `{matrix}` at line {line}, column {col}: `{token}`")]
    NonNumericEntry {
        matrix: String,
        line: usize,
        col: usize,
        token: String,
    },
}

fn min_cols(matrix: &str) -> usize {
    match matrix {
        "bus" => BUS_MIN_COLS,
        "gen" => GEN_MIN_COLS,
        "branch" => BRANCH_MIN_COLS,
        "gencost" => GENCOST_MIN_COLS,
        _ => 0,
    }
}

const KNOWN_MATRICES: [&str; 4] = ["bus", "gen", "branch", "gencost"];

fn parse_number(token: &str) -> Option<f64> {
    match token {
        "Inf" | "inf" | "+Inf" => Some(f64::INFINITY),
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        _ => token.parse::<f64>().ok(),
    }
}

/// Splits `mpc.bus = [ ...` or `baseMVA = 100` into the assigned name and the
/// right-hand side.
fn assignment(stmt: &str) -> Option<(&str, &str)> {
    let eq = stmt.find('=')?;
    let lhs = stmt[..eq].trim();
    let rhs = stmt[eq + 1..].trim_start();
    let name = lhs.strip_prefix("mpc.").unwrap_or(lhs);
    let is_ident = !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !name.starts_with(|c: char| c.is_ascii_digit());
    is_ident.then_some((name, rhs))
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

struct MatrixState {
    name: String,
    rows: Vec<Vec<f64>>,
    current: Vec<f64>,
    current_line: usize,
}

impl MatrixState {
    fn finish_row(&mut self) -> Result<(), ParseError> {
        if self.current.is_empty() {
            return Ok(());
        }
        let row = std::mem::take(&mut self.current);
        let need = min_cols(&self.name);
        if row.len() < need {
            return Err(ParseError::MalformedRow {
                matrix: self.name.clone(),
                line: self.current_line,
                reason: format!("expected at least {need} columns, found {}", row.len()),
            });
        }
        if self.name != "gencost" {
            if let Some(first) = self.rows.first() {
                if first.len() != row.len() {
                    return Err(ParseError::MalformedRow {
                        matrix: self.name.clone(),
                        line: self.current_line,
                        reason: format!(
                            "row has {} columns but previous rows have {}",
                            row.len(),
                            first.len()
                        ),
                    });
                }
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Consumes matrix content; returns the unconsumed tail after `]` if the
    /// matrix closed on this line.
    fn feed<'a>(&mut self, content: &'a str, line_no: usize) -> Result<Option<&'a str>, ParseError> {
        let (body, rest) = match content.find(']') {
            Some(i) => (&content[..i], Some(&content[i + 1..])),
            None => (content, None),
        };
        let (body, continued) = match body.find("...") {
            Some(i) => (&body[..i], true),
            None => (body, false),
        };
        for (seg_idx, segment) in body.split(';').enumerate() {
            if seg_idx > 0 {
                self.finish_row()?;
            }
            for token in segment.split(|c: char| c.is_whitespace() || c == ',') {
                if token.is_empty() {
                    continue;
                }
                if self.current.is_empty() {
                    self.current_line = line_no;
                }
                let value = parse_number(token).ok_or_else(|| ParseError::NonNumericEntry {
                    matrix: self.name.clone(),
                    line: line_no,
                    col: self.current.len() + 1,
                    token: token.to_string(),
                })?;
                self.current.push(value);
            }
        }
        if rest.is_some() || !continued {
            self.finish_row()?;
        }
        Ok(rest)
    }
}

/// Parses the text of a MATPOWER `.m` case file.
///
/// Bus identifiers are kept exactly as written; nothing is renumbered here.
pub fn parse_case(text: &str) -> Result<RawCase, ParseError> {
    let mut base_mva: Option<f64> = None;
    let mut matrices: HashMap<String, Vec<Vec<f64>>> = HashMap::new();
    let mut open: Option<MatrixState> = None;
    let mut in_cell = false;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut rest = strip_comment(raw_line);

        // A line may hold several statements (`baseMVA = 100; bus = [];`).
        loop {
            if in_cell {
                match rest.find('}') {
                    Some(i) => {
                        in_cell = false;
                        rest = &rest[i + 1..];
                    }
                    None => break,
                }
            }
            if let Some(state) = open.as_mut() {
                match state.feed(rest, line_no)? {
                    Some(tail) => {
                        let state = open.take().expect("open matrix");
                        if KNOWN_MATRICES.contains(&state.name.as_str()) {
                            matrices.insert(state.name, state.rows);
                        }
                        rest = tail;
                    }
                    None => break,
                }
            }
            rest = rest.trim_start_matches(|c: char| c.is_whitespace() || c == ';');
            if rest.is_empty() {
                break;
            }
            let stmt_end = rest.find(';').unwrap_or(rest.len());
            let Some((name, rhs)) = assignment(&rest[..stmt_end]) else {
                rest = &rest[stmt_end..];
                continue;
            };
            // `rhs` borrowed from the statement; re-anchor it in `rest` so that
            // matrix rows separated by `;` stay visible.
            let rhs_start = rest.len() - rest[rest.find('=').unwrap_or(0) + 1..].trim_start().len();
            let full_rhs = &rest[rhs_start..];
            if let Some(content) = full_rhs.strip_prefix('[') {
                open = Some(MatrixState {
                    name: name.to_string(),
                    rows: Vec::new(),
                    current: Vec::new(),
                    current_line: line_no,
                });
                rest = content;
            } else if let Some(content) = full_rhs.strip_prefix('{') {
                in_cell = true;
                rest = content;
            } else {
                if name == "baseMVA" {
                    let token = rhs.trim();
                    let value = parse_number(token).ok_or_else(|| ParseError::NonNumericEntry {
                        matrix: "baseMVA".into(),
                        line: line_no,
                        col: 1,
                        token: token.to_string(),
                    })?;
                    base_mva = Some(value);
                }
                rest = &rest[stmt_end..];
            }
        }
    }
    if let Some(state) = open {
        return Err(ParseError::MalformedRow {
            matrix: state.name,
            line: state.current_line,
            reason: "matrix not terminated by `]`".into(),
        });
    }

    let base_mva = base_mva.ok_or_else(|| ParseError::MissingMatrix("baseMVA".into()))?;
    let mut take = |name: &str| {
        matrices
            .remove(name)
            .ok_or_else(|| ParseError::MissingMatrix(name.into()))
    };
    let bus_rows = take("bus")?;
    let gen_rows = take("gen")?;
    let branch_rows = take("branch")?;
    let gencost_rows = take("gencost").ok();
    Ok(RawCase {
        base_mva,
        bus_rows,
        gen_rows,
        branch_rows,
        gencost_rows,
    })
}

/// Writes a case back out in MATPOWER syntax. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn to_matpower(raw: &RawCase, function_name: &str) -> String {
    fn fmt_value(v: f64) -> String {
        if v == f64::INFINITY {
            "Inf".into()
        } else if v == f64::NEG_INFINITY {
            "-Inf".into()
        } else {
            format!("{v}")
        }
    }
    fn matrix(out: &mut String, name: &str, rows: &[Vec<f64>]) {
        let _ = writeln!(out, "mpc.{name} = [");
        for row in rows {
            let cells: Vec<String> = row.iter().map(|&v| fmt_value(v)).collect();
            let _ = writeln!(out, "\t{};", cells.join("\t"));
        }
        out.push_str("];\n\n");
    }
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {function_name}");
    out.push_str("mpc.version = '2';\n\n");
    let _ = writeln!(out, "mpc.baseMVA = {};\n", fmt_value(raw.base_mva));
    matrix(&mut out, "bus", &raw.bus_rows);
    matrix(&mut out, "gen", &raw.gen_rows);
    matrix(&mut out, "branch", &raw.branch_rows);
    if let Some(rows) = &raw.gencost_rows {
        matrix(&mut out, "gencost", rows);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Info,
    Warning,
    Error,
}

/// One finding of [`validate_case`]. Row indices are 0-based positions in the
/// corresponding raw matrix; bus IDs are the external MATPOWER IDs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DiagnosticKind {
    NonPositiveBaseMva { base_mva: f64 },
    DuplicateBus { bus_id: i64 },
    UnknownBus { matrix: String, row: usize, bus_id: i64 },
    InvertedVoltageBound { bus_id: i64, v_min: f64, v_max: f64 },
    NonPositiveVoltageBound { bus_id: i64, v_min: f64 },
    InvertedGenBound { row: usize, quantity: String, min: f64, max: f64 },
    NegativeResistance { row: usize, r: f64 },
    OutOfServiceBranch { row: usize },
    OutOfServiceGen { row: usize },
    IsolatedBus { bus_id: i64 },
    PhaseShift { row: usize, shift_deg: f64 },
    GencostCount { gens: usize, rows: usize },
    UnsupportedCostModel { row: usize, model: f64, ncost: f64 },
}

impl DiagnosticKind {
    pub fn severity(&self) -> Severity {
        use DiagnosticKind::*;
        match self {
            NegativeResistance { .. } => Severity::Warning,
            OutOfServiceBranch { .. } | OutOfServiceGen { .. } | IsolatedBus { .. } => Severity::Info,
            _ => Severity::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub kind: DiagnosticKind,
}

impl From<DiagnosticKind> for Diagnostic {
    fn from(kind: DiagnosticKind) -> Self {
        Diagnostic {
            severity: kind.severity(),
            kind,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use DiagnosticKind::*;
        let sev = match self.severity {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}: ")?;
        match &self.kind {
            NonPositiveBaseMva { base_mva } => write!(f, "baseMVA must be positive, got {base_mva}"),
            DuplicateBus { bus_id } => write!(f, "bus {bus_id} defined more than once"),
            UnknownBus { matrix, row, bus_id } => {
                write!(f, "{matrix} row {row} references unknown bus {bus_id}")
            }
            InvertedVoltageBound { bus_id, v_min, v_max } => {
                write!(f, "bus {bus_id} has Vmin {v_min} > Vmax {v_max}")
            }
            NonPositiveVoltageBound { bus_id, v_min } => {
                write!(f, "bus {bus_id} has non-positive Vmin {v_min}")
            }
            InvertedGenBound { row, quantity, min, max } => {
                write!(f, "gen row {row} has {quantity}min {min} > {quantity}max {max}")
            }
            NegativeResistance { row, r } => write!(f, "branch row {row} has negative resistance {r}"),
            OutOfServiceBranch { row } => write!(f, "branch row {row} is out of service and dropped"),
            OutOfServiceGen { row } => write!(f, "gen row {row} is out of service and dropped"),
            IsolatedBus { bus_id } => write!(f, "bus {bus_id} is isolated (type 4) and dropped"),
            PhaseShift { row, shift_deg } => {
                write!(f, "branch row {row} has unsupported phase shift {shift_deg} deg")
            }
            GencostCount { gens, rows } => {
                write!(f, "gencost has {rows} rows but gen has {gens}")
            }
            UnsupportedCostModel { row, model, ncost } => write!(
                f,
                "gencost row {row} uses model {model} with {ncost} terms; only polynomial (model 2) costs of degree <= 2 are supported"
            ),
        }
    }
}

/// True when a `gencost` row is a polynomial of degree at most two. Higher
/// degree rows are accepted when their leading coefficients are zero.
pub(crate) fn supported_cost_row(row: &[f64]) -> bool {
    if row.len() < GENCOST_MIN_COLS || row[gencost_col::MODEL] != 2.0 {
        return false;
    }
    let ncost = row[gencost_col::NCOST];
    if ncost < 0.0 || ncost.fract() != 0.0 {
        return false;
    }
    let ncost = ncost as usize;
    if row.len() < gencost_col::COST + ncost {
        return false;
    }
    let coeffs = &row[gencost_col::COST..gencost_col::COST + ncost];
    ncost <= 3 || coeffs[..ncost - 3].iter().all(|&c| c == 0.0)
}

/// Checks a parsed case for inconsistencies. An empty list means clean.
pub fn validate_case(raw: &RawCase) -> Vec<Diagnostic> {
    use DiagnosticKind::*;
    let mut out: Vec<Diagnostic> = Vec::new();
    let mut push = |k: DiagnosticKind| out.push(k.into());

    if raw.base_mva.is_nan() || raw.base_mva <= 0.0 {
        push(NonPositiveBaseMva { base_mva: raw.base_mva });
    }

    let mut ids = HashSet::new();
    for row in &raw.bus_rows {
        let id = row[bus_col::BUS_I] as i64;
        if !ids.insert(id) {
            push(DuplicateBus { bus_id: id });
        }
        if row[bus_col::TYPE] == 4.0 {
            push(IsolatedBus { bus_id: id });
        }
        let (v_min, v_max) = (row[bus_col::VMIN], row[bus_col::VMAX]);
        if v_min > v_max {
            push(InvertedVoltageBound { bus_id: id, v_min, v_max });
        }
        if v_min <= 0.0 {
            push(NonPositiveVoltageBound { bus_id: id, v_min });
        }
    }

    for (i, row) in raw.gen_rows.iter().enumerate() {
        let bus = row[gen_col::GEN_BUS] as i64;
        if !ids.contains(&bus) {
            push(UnknownBus { matrix: "gen".into(), row: i, bus_id: bus });
        }
        if row[gen_col::STATUS] <= 0.0 {
            push(OutOfServiceGen { row: i });
        }
        if row[gen_col::PMIN] > row[gen_col::PMAX] {
            push(InvertedGenBound {
                row: i,
                quantity: "P".into(),
                min: row[gen_col::PMIN],
                max: row[gen_col::PMAX],
            });
        }
        if row[gen_col::QMIN] > row[gen_col::QMAX] {
            push(InvertedGenBound {
                row: i,
                quantity: "Q".into(),
                min: row[gen_col::QMIN],
                max: row[gen_col::QMAX],
            });
        }
    }

    for (i, row) in raw.branch_rows.iter().enumerate() {
        for col in [branch_col::F_BUS, branch_col::T_BUS] {
            let bus = row[col] as i64;
            if !ids.contains(&bus) {
                push(UnknownBus { matrix: "branch".into(), row: i, bus_id: bus });
            }
        }
        if row[branch_col::BR_STATUS] == 0.0 {
            push(OutOfServiceBranch { row: i });
            continue;
        }
        if row[branch_col::BR_R] < 0.0 {
            push(NegativeResistance { row: i, r: row[branch_col::BR_R] });
        }
        if row[branch_col::SHIFT] != 0.0 {
            push(PhaseShift { row: i, shift_deg: row[branch_col::SHIFT] });
        }
    }

    if let Some(costs) = &raw.gencost_rows {
        // MATPOWER allows an extra block of reactive costs (2 * ng rows).
        if costs.len() != raw.gen_rows.len() && costs.len() != 2 * raw.gen_rows.len() {
            push(GencostCount { gens: raw.gen_rows.len(), rows: costs.len() });
        }
        for (i, row) in costs.iter().take(raw.gen_rows.len()).enumerate() {
            if !supported_cost_row(row) {
                let ncost = row.get(gencost_col::NCOST).copied().unwrap_or(f64::NAN);
                push(UnsupportedCostModel { row: i, model: row[gencost_col::MODEL], ncost });
            }
        }
    }
    out
}
