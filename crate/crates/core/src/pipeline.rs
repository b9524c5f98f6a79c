//! Batch runs over cases, relaxation kinds and objectives, and report output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acopf::{solve_subproblem, warm_start_from_relaxation, LocalStatus, SubproblemOptions};
use crate::case_io::{parse_case, ParseError};
use crate::conic::{solve, SolveStatus, SolverOptions};
use crate::network::{build_network_with, Network, NetworkError, NetworkOptions};
use crate::recovery::{optimality_gap, recover_continuous, round_assignment, RelaxationSolution};
use crate::relaxations::{build_relaxation_with, BuildOptions, ModelKind, Objective, RelaxationKind};

pub const REPORT_SCHEMA: &str = "orpd-report/1";

/// Slack allowed when checking normalized values against 1.
pub const NORMALIZATION_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("cannot build network from {path}: {source}")]
    Network { path: PathBuf, source: NetworkError },
    #[error("report serialization: {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Md,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Md),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

fn default_objectives() -> Vec<Objective> {
    vec![Objective::Cost]
}
fn default_tolerance() -> f64 {
    SolverOptions::default().tolerance
}
fn default_max_iter() -> u32 {
    SolverOptions::default().max_iter
}
fn default_time_limit() -> f64 {
    600.0
}
fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub cases: Vec<PathBuf>,
    pub kinds: Vec<ModelKind>,
    #[serde(default = "default_objectives")]
    pub objectives: Vec<Objective>,
    /// Clique decomposition of `V ⪰ 0` in the SDR kinds.
    #[serde(default)]
    pub chordal: bool,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: u32,
    /// Seconds per cell.
    #[serde(default = "default_time_limit")]
    pub time_limit: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<ReportFormat>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub network: NetworkOptions,
    #[serde(default)]
    pub build: BuildOptions,
    #[serde(default)]
    pub subproblem: SubproblemOptions,
}

impl RunConfig {
    pub fn new(cases: Vec<PathBuf>, kinds: Vec<ModelKind>, objectives: Vec<Objective>) -> Self {
        RunConfig {
            cases,
            kinds,
            objectives,
            chordal: false,
            tolerance: default_tolerance(),
            max_iter: default_max_iter(),
            time_limit: default_time_limit(),
            output: None,
            format: None,
            seed: 0,
            workers: default_workers(),
            network: NetworkOptions::default(),
            build: BuildOptions::default(),
            subproblem: SubproblemOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.cases.is_empty() {
            return bad("at least one case is required");
        }
        if self.kinds.is_empty() {
            return bad("at least one relaxation kind is required");
        }
        if self.objectives.is_empty() {
            return bad("at least one objective is required");
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return bad("tolerance must lie in (0, 1)");
        }
        if !(self.time_limit > 0.0) {
            return bad("time limit must be positive");
        }
        if self.workers == 0 {
            return bad("worker count must be positive");
        }
        Ok(())
    }

    fn solver_options(&self, remaining: f64) -> SolverOptions {
        SolverOptions {
            tolerance: self.tolerance,
            max_iter: self.max_iter,
            time_limit: Some(remaining.max(0.0)),
            ..SolverOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentReport {
    pub shunts_on: Vec<bool>,
    pub taps: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub t_hat: Vec<f64>,
}

/// One (case, objective, kind) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub case: String,
    pub objective: Objective,
    pub kind: ModelKind,
    pub chordal: bool,
    /// `true` when a bound, an upper bound and a gap were all obtained.
    pub completed: bool,
    pub failure: Option<String>,
    pub relaxation_status: Option<SolveStatus>,
    pub reduced_accuracy: bool,
    pub subproblem_status: Option<LocalStatus>,
    pub lower_bound: Option<f64>,
    pub upper_bound: Option<f64>,
    pub gap_percent: Option<f64>,
    pub normalized_bound: Option<f64>,
    pub normalized_upper: Option<f64>,
    pub assignment: Option<AssignmentReport>,
    pub diagnostics: Vec<String>,
}

/// Best values over the kinds of one (case, objective) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestValues {
    pub case: String,
    pub objective: Objective,
    pub best_bound: Option<f64>,
    pub best_upper: Option<f64>,
}

/// Run-dependent measurements kept apart from the reproducible fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub case: String,
    pub objective: Objective,
    pub kind: ModelKind,
    pub build_time: f64,
    pub solve_time: f64,
    pub subproblem_time: f64,
    pub relaxation_iterations: u32,
    pub subproblem_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Volatile {
    pub cells: Vec<CellTiming>,
    pub total_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub cases: Vec<String>,
    pub kinds: Vec<ModelKind>,
    pub objectives: Vec<Objective>,
    pub chordal: bool,
    pub tolerance: f64,
    pub time_limit: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrpdReport {
    pub schema: String,
    pub config: ReportConfig,
    pub notes: Vec<String>,
    pub cells: Vec<CellReport>,
    pub best: Vec<BestValues>,
    pub volatile: Volatile,
}

fn case_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

/// Reads and builds every case; any failure here is fatal.
fn load_cases(config: &RunConfig) -> Result<Vec<(String, Network)>, PipelineError> {
    config
        .cases
        .iter()
        .map(|path| {
            let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.clone(), source })?;
            let raw = parse_case(&text).map_err(|source| PipelineError::Parse { path: path.clone(), source })?;
            let net = build_network_with(&raw, &config.network)
                .map_err(|source| PipelineError::Network { path: path.clone(), source })?;
            Ok((case_name(path), net))
        })
        .collect()
}

fn empty_cell(case: &str, kind: RelaxationKind) -> CellReport {
    CellReport {
        case: case.to_string(),
        objective: kind.objective,
        kind: kind.model,
        chordal: kind.chordal,
        completed: false,
        failure: None,
        relaxation_status: None,
        reduced_accuracy: false,
        subproblem_status: None,
        lower_bound: None,
        upper_bound: None,
        gap_percent: None,
        normalized_bound: None,
        normalized_upper: None,
        assignment: None,
        diagnostics: Vec::new(),
    }
}

/// Build, solve, recover, round, resolve and compare for one cell.
pub fn run_cell(net: &Network, case: &str, kind: RelaxationKind, config: &RunConfig) -> (CellReport, CellTiming) {
    let mut cell = empty_cell(case, kind);
    let mut timing = CellTiming {
        case: case.to_string(),
        objective: kind.objective,
        kind: kind.model,
        build_time: 0.0,
        solve_time: 0.0,
        subproblem_time: 0.0,
        relaxation_iterations: 0,
        subproblem_iterations: 0,
    };
    let start = Instant::now();
    let over_time = |start: &Instant| start.elapsed().as_secs_f64() > config.time_limit;

    let t = Instant::now();
    let built = build_relaxation_with(net, kind, &config.build);
    timing.build_time = t.elapsed().as_secs_f64();
    let (program, vars) = match built {
        Ok(b) => b,
        Err(e) => {
            cell.failure = Some(format!("build: {e}"));
            return (cell, timing);
        }
    };

    let result = match solve(&program, &config.solver_options(config.time_limit - start.elapsed().as_secs_f64())) {
        Ok(r) => r,
        Err(e) => {
            cell.failure = Some(format!("solve: {e}"));
            return (cell, timing);
        }
    };
    timing.solve_time = result.solve_time;
    timing.relaxation_iterations = result.iterations;
    cell.relaxation_status = Some(result.status);
    cell.reduced_accuracy = result.reduced_accuracy;
    if result.reduced_accuracy {
        if let Some(r) = result.residuals {
            cell.diagnostics.push(format!(
                "relaxation residuals above tolerance: primal {:.1e}, dual {:.1e}, gap {:.1e}",
                r.primal, r.dual, r.gap
            ));
        }
    }
    if result.status != SolveStatus::Optimal {
        cell.failure = Some(format!("relaxation {:?} ({})", result.status, result.backend_status));
        return (cell, timing);
    }
    let solution = match RelaxationSolution::from_result(kind, &vars, &result) {
        Ok(s) => s,
        Err(e) => {
            cell.failure = Some(format!("recovery: {e}"));
            return (cell, timing);
        }
    };
    cell.lower_bound = Some(solution.bound);

    let continuous = match recover_continuous(net, &solution) {
        Ok(c) => c,
        Err(e) => {
            cell.failure = Some(format!("recovery: {e}"));
            return (cell, timing);
        }
    };
    let assignment = round_assignment(&continuous);
    cell.diagnostics.extend(assignment.diagnostics.iter().cloned());
    cell.assignment = Some(AssignmentReport {
        shunts_on: assignment.u_round.clone(),
        taps: assignment.t_round.clone(),
        u_hat: assignment.u_hat.clone(),
        t_hat: assignment.t_hat.clone(),
    });
    if over_time(&start) {
        cell.failure = Some(format!("time limit of {} s exceeded", config.time_limit));
        return (cell, timing);
    }

    let warm = warm_start_from_relaxation(net, &assignment, &solution);
    let local = solve_subproblem(net, &assignment, kind.objective, Some(&warm), &config.subproblem);
    timing.subproblem_time = local.time;
    timing.subproblem_iterations = local.iterations;
    cell.subproblem_status = Some(local.status);
    if !local.status.is_feasible() {
        cell.failure = Some(format!("subproblem {:?} (violation {:.2e})", local.status, local.max_violation));
        return (cell, timing);
    }
    if local.start != "warm" {
        cell.diagnostics.push(format!("subproblem converged from the `{}` start", local.start));
    }
    cell.upper_bound = Some(local.objective);
    match optimality_gap(solution.bound, local.objective) {
        Ok(g) => cell.gap_percent = Some(g),
        Err(e) => {
            cell.failure = Some(format!("gap: {e}"));
            return (cell, timing);
        }
    }
    if over_time(&start) {
        cell.failure = Some(format!("time limit of {} s exceeded", config.time_limit));
        return (cell, timing);
    }
    cell.completed = true;
    (cell, timing)
}

/// Fills normalized values from the best bound and upper bound of each
/// (case, objective) pair, using successful cells only.
pub fn normalize(cells: &mut [CellReport]) -> Vec<BestValues> {
    let mut best: BTreeMap<(String, Objective), (Option<f64>, Option<f64>)> = BTreeMap::new();
    for c in cells.iter() {
        let e = best.entry((c.case.clone(), c.objective)).or_insert((None, None));
        if c.completed {
            if let Some(lb) = c.lower_bound {
                e.0 = Some(e.0.map_or(lb, |b: f64| b.max(lb)));
            }
            if let Some(ub) = c.upper_bound {
                e.1 = Some(e.1.map_or(ub, |b: f64| b.min(ub)));
            }
        }
    }
    for c in cells.iter_mut() {
        let (lb, ub) = best[&(c.case.clone(), c.objective)];
        c.normalized_bound = if c.completed { c.lower_bound.zip(lb).map(|(x, b)| x / b) } else { None };
        c.normalized_upper = if c.completed { c.upper_bound.zip(ub).map(|(x, b)| x / b) } else { None };
    }
    let mut order: Vec<(String, Objective)> = Vec::new();
    for c in cells.iter() {
        let key = (c.case.clone(), c.objective);
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (best_bound, best_upper) = best[&key];
            BestValues { case: key.0, objective: key.1, best_bound, best_upper }
        })
        .collect()
}

/// Runs every (case, objective, kind) cell. Only unreadable or invalid input
/// is fatal; per-cell failures are recorded in the report.
pub fn run_pipeline(config: &RunConfig) -> Result<OrpdReport, PipelineError> {
    config.validate()?;
    let start = Instant::now();
    let nets = load_cases(config)?;
    let mut jobs = Vec::new();
    for (ci, _) in nets.iter().enumerate() {
        for &objective in &config.objectives {
            for &model in &config.kinds {
                jobs.push((ci, RelaxationKind::new(model, objective).with_chordal(config.chordal && model.is_sdr())));
            }
        }
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(CellReport, CellTiming)>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..config.workers.min(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(ci, kind)) = jobs.get(i) else { break };
                let (name, net) = &nets[ci];
                log::info!("{name} {} {:?}", kind.model.name(), kind.objective);
                let out = run_cell(net, name, kind, config);
                slots.lock().expect("no worker panicked")[i] = Some(out);
            });
        }
    });
    let (mut cells, timings): (Vec<_>, Vec<_>) =
        slots.into_inner().expect("no worker panicked").into_iter().map(|s| s.expect("every job ran")).unzip();
    let best = normalize(&mut cells);

    Ok(OrpdReport {
        schema: REPORT_SCHEMA.to_string(),
        config: ReportConfig {
            cases: nets.iter().map(|(n, _)| n.clone()).collect(),
            kinds: config.kinds.clone(),
            objectives: config.objectives.clone(),
            chordal: config.chordal,
            tolerance: config.tolerance,
            time_limit: config.time_limit,
            seed: config.seed,
        },
        notes: vec![
            "normalized values divide by the best bound and best upper bound among completed cells of the same case and objective".into(),
            "averages skip failed cells".into(),
        ],
        cells,
        best,
        volatile: Volatile { cells: timings, total_time: start.elapsed().as_secs_f64() },
    })
}

impl OrpdReport {
    /// Pretty JSON with keys sorted at every level.
    pub fn to_json(&self) -> Result<String, PipelineError> {
        let value = serde_json::to_value(self).map_err(|e| PipelineError::Serialize(e.to_string()))?;
        serde_json::to_string_pretty(&value).map_err(|e| PipelineError::Serialize(e.to_string()))
    }

    /// JSON without the `volatile` part; identical for identical runs.
    pub fn stable_json(&self) -> Result<String, PipelineError> {
        let mut value = serde_json::to_value(self).map_err(|e| PipelineError::Serialize(e.to_string()))?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("volatile");
        }
        serde_json::to_string_pretty(&value).map_err(|e| PipelineError::Serialize(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Serialize(e.to_string()))
    }

    pub fn all_completed(&self) -> bool {
        self.cells.iter().all(|c| c.completed)
    }
}

/// Columns of the CSV report, in order.
pub const CSV_COLUMNS: [&str; 14] = [
    "case",
    "objective",
    "kind",
    "chordal",
    "completed",
    "lower_bound",
    "upper_bound",
    "gap_percent",
    "normalized_bound",
    "normalized_upper",
    "relaxation_status",
    "subproblem_status",
    "shunts_on",
    "taps",
];

fn fixed(v: Option<f64>, decimals: usize) -> String {
    v.map(|x| format!("{x:.decimals$}")).unwrap_or_else(|| "--".to_string())
}

fn csv_text(report: &OrpdReport) -> Result<String, PipelineError> {
    let err = |e: csv::Error| PipelineError::Serialize(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).map_err(err)?;
    for c in &report.cells {
        let (shunts, taps) = match &c.assignment {
            Some(a) => (
                a.shunts_on.iter().map(|&u| if u { "1" } else { "0" }).collect::<Vec<_>>().join(" "),
                a.taps.iter().map(|t| format!("{t:.4}")).collect::<Vec<_>>().join(" "),
            ),
            None => (String::new(), String::new()),
        };
        w.write_record([
            c.case.clone(),
            format!("{:?}", c.objective).to_lowercase(),
            c.kind.name().to_lowercase(),
            c.chordal.to_string(),
            c.completed.to_string(),
            fixed(c.lower_bound, 2),
            fixed(c.upper_bound, 2),
            fixed(c.gap_percent, 2),
            fixed(c.normalized_bound, 4),
            fixed(c.normalized_upper, 4),
            c.relaxation_status.map(|s| format!("{s:?}")).unwrap_or_default(),
            c.subproblem_status.map(|s| format!("{s:?}")).unwrap_or_default(),
            shunts,
            taps,
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| PipelineError::Serialize(e.to_string()))
}

fn md_table(
    report: &OrpdReport,
    objective: Objective,
    title: &str,
    value: impl Fn(&CellReport) -> Option<f64>,
    decimals: usize,
) -> String {
    let kinds = &report.config.kinds;
    let mut out = format!("### {title} ({:?}, {})\n\n| case |", objective, objective.unit());
    for k in kinds {
        out += &format!(" {} |", k.name());
    }
    out += "\n|---|";
    out += &"---:|".repeat(kinds.len());
    out += "\n";
    let mut sums = vec![(0.0, 0usize); kinds.len()];
    for case in &report.config.cases {
        out += &format!("| {case} |");
        for (i, k) in kinds.iter().enumerate() {
            let v = report
                .cells
                .iter()
                .find(|c| &c.case == case && c.objective == objective && c.kind == *k)
                .and_then(|c| if c.completed { value(c) } else { None });
            if let Some(x) = v {
                sums[i].0 += x;
                sums[i].1 += 1;
            }
            out += &format!(" {} |", fixed(v, decimals));
        }
        out += "\n";
    }
    out += "| Average |";
    for (s, n) in sums {
        out += &format!(" {} |", fixed((n > 0).then(|| s / n as f64), decimals));
    }
    out += "\n";
    out
}

fn md_text(report: &OrpdReport) -> String {
    let mut out = String::from("# ORPD relaxation report\n\n");
    for &objective in &report.config.objectives {
        out += &md_table(report, objective, "Lower bounds", |c| c.lower_bound, 2);
        out += "\n";
        out += &md_table(report, objective, "Upper bounds", |c| c.upper_bound, 2);
        out += "\n";
        out += &md_table(report, objective, "Normalized bounds", |c| c.normalized_bound, 4);
        out += "\n";
        out += &md_table(report, objective, "Optimality gaps (%)", |c| c.gap_percent, 2);
        out += "\n";
    }
    let failed: Vec<_> = report.cells.iter().filter(|c| !c.completed).collect();
    if !failed.is_empty() {
        out += "### Failed cells\n\n";
        for c in failed {
            out += &format!(
                "- {} {:?} {}: {}\n",
                c.case,
                c.objective,
                c.kind.name(),
                c.failure.as_deref().unwrap_or("incomplete")
            );
        }
        out += "\n";
    }
    out += "Averages skip failed cells.\n";
    out
}

/// Renders the report in `format`.
pub fn render_report(report: &OrpdReport, format: ReportFormat) -> Result<String, PipelineError> {
    match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => csv_text(report),
        ReportFormat::Md => Ok(md_text(report)),
    }
}

/// Writes the report to `path`, or to stdout when `path` is `None`.
pub fn emit_report(report: &OrpdReport, format: ReportFormat, path: Option<&Path>) -> Result<(), PipelineError> {
    let text = render_report(report, format)?;
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| PipelineError::Io { path: p.to_path_buf(), source }),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|source| PipelineError::Io { path: PathBuf::from("<stdout>"), source }),
    }
}
