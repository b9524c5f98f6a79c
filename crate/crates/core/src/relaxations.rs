//! The four conic relaxations of the reactive dispatch problem.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acopf::{max_violation, residuals, OperatingPoint};
use crate::chordal::{build_graph, chordal_extension_with, decompose_psd, ChordalError, CliqueCover, MergeOptions};
use crate::conic::{
    embed_hermitian_psd, quad_cost_epigraph, ComplexExpr, Cone, ConeProgram, EpigraphError, HermitianBlock,
    HermitianError, LinExpr, ProgramError, Var,
};
use crate::network::Network;
use crate::recovery::DiscreteAssignment;

/// Floor on the per-generator epigraph scale, per unit.
const EPIGRAPH_MIN_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sdr1,
    Tcr1,
    Sdr2,
    Tcr2,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Sdr1, ModelKind::Tcr1, ModelKind::Sdr2, ModelKind::Tcr2];

    pub fn is_sdr(self) -> bool {
        matches!(self, ModelKind::Sdr1 | ModelKind::Sdr2)
    }

    /// Uses the convex-hull tap row.
    pub fn uses_hull(self) -> bool {
        matches!(self, ModelKind::Sdr2 | ModelKind::Tcr2)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Sdr1 => "SDR1",
            ModelKind::Tcr1 => "TCR1",
            ModelKind::Sdr2 => "SDR2",
            ModelKind::Tcr2 => "TCR2",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sdr1" => Ok(ModelKind::Sdr1),
            "tcr1" => Ok(ModelKind::Tcr1),
            "sdr2" => Ok(ModelKind::Sdr2),
            "tcr2" => Ok(ModelKind::Tcr2),
            other => Err(format!("unknown relaxation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Generation cost in $/h.
    Cost,
    /// Total active generation in MW.
    Loss,
}

impl Objective {
    pub fn unit(self) -> &'static str {
        match self {
            Objective::Cost => "$/h",
            Objective::Loss => "MW",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "cost" => Ok(Objective::Cost),
            "loss" => Ok(Objective::Loss),
            other => Err(format!("unknown objective `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelaxationKind {
    pub model: ModelKind,
    pub objective: Objective,
    /// Split `V ⪰ 0` over the cliques of a chordal extension. SDR only.
    pub chordal: bool,
}

impl RelaxationKind {
    pub fn new(model: ModelKind, objective: Objective) -> Self {
        RelaxationKind { model, objective, chordal: false }
    }

    pub fn with_chordal(mut self, chordal: bool) -> Self {
        self.chordal = chordal;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub merge: MergeOptions,
    /// Keep the two-sided tap bounds of TCR1 alongside the hull row in TCR2.
    pub tcr2_keep_tap_bounds: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { merge: MergeOptions::default(), tcr2_keep_tap_bounds: false }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelaxationError {
    #[error("tap range [{t_min}, {t_max}] is a single point")]
    DegenerateTapRange { t_min: f64, t_max: f64 },
    #[error("tap range [{t_min}, {t_max}] is invalid")]
    InvalidTapRange { t_min: f64, t_max: f64 },
    #[error("seed point violates the operating constraints by {violation:.3e} ({constraint})")]
    InfeasibleSeedPoint { violation: f64, constraint: String },
    #[error("assignment does not match the network: {0}")]
    AssignmentMismatch(String),
    #[error(transparent)]
    Epigraph(#[from] EpigraphError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Chordal(#[from] ChordalError),
    #[error(transparent)]
    Block(#[from] HermitianError),
}

/// Branch flows as affine expressions in the lifted variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowExprs {
    pub from: ComplexExpr,
    pub to: ComplexExpr,
}

/// Lifted quantities of one tap branch `ℓ = (k, m)` with `w = v_k / t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapVars {
    pub branch: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    /// `|w|²`
    pub w_ll: Var,
    /// `v_k w*`, real.
    pub w_kl: Var,
    /// `w v_m*` as (re, im).
    pub w_lm: (Var, Var),
    /// `w` as (re, im), TCR only.
    pub w: Option<(Var, Var)>,
}

/// Variable handles of a relaxation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedVars {
    pub n_buses: usize,
    /// `V_kk`
    pub v_diag: Vec<Var>,
    /// `V_ij = v_i v_j*` for `i > j`, as (re, im); only instantiated entries.
    pub v_off: BTreeMap<(usize, usize), (Var, Var)>,
    /// Aligned with `Network::tap_branches`.
    pub taps: Vec<TapVars>,
    /// Aligned with `Network::shunts`.
    pub xi: Vec<Var>,
    pub pg: Vec<Var>,
    pub qg: Vec<Var>,
    pub flows: Vec<FlowExprs>,
    /// Voltage vector, TCR only.
    pub v: Option<Vec<(Var, Var)>>,
    /// Epigraph variable and scale per generator for the cost objective.
    pub cost_epigraph: Vec<Option<(Var, f64)>>,
    pub cover: Option<CliqueCover>,
}

impl LiftedVars {
    /// `V_ij` as an expression, if instantiated.
    pub fn v_entry(&self, i: usize, j: usize) -> Option<ComplexExpr> {
        if i == j {
            return Some(ComplexExpr::real(LinExpr::var(self.v_diag[i])));
        }
        let (a, b) = if i > j { (i, j) } else { (j, i) };
        let &(re, im) = self.v_off.get(&(a, b))?;
        let e = ComplexExpr::new(LinExpr::var(re), LinExpr::var(im));
        Some(if i > j { e } else { e.conj() })
    }

    fn v_pair(&self, i: usize, j: usize) -> ComplexExpr {
        self.v_entry(i, j).expect("lifted entry exists for every branch pair")
    }

    /// Partial Hermitian block over all buses holding the instantiated entries.
    pub fn v_block(&self) -> HermitianBlock {
        let mut b = HermitianBlock::new(self.n_buses);
        for (k, &v) in self.v_diag.iter().enumerate() {
            b.set_real(k, k, LinExpr::var(v)).expect("in range");
        }
        for &(i, j) in self.v_off.keys() {
            b.set(i, j, self.v_pair(i, j)).expect("in range");
        }
        b
    }

    fn v_var(&self, k: usize) -> Option<ComplexExpr> {
        self.v.as_ref().map(|v| ComplexExpr::new(LinExpr::var(v[k].0), LinExpr::var(v[k].1)))
    }
}

fn cx(a: f64, b: f64) -> Complex64 {
    Complex64::new(a, b)
}

/// Tap rows for `(x, z1, z2) = (V_kk, W_kℓ, W_ℓℓ)`, each meaning `row ≥ 0`.
pub fn tap_envelope_rows(
    t_min: f64,
    t_max: f64,
    v_kk: &LinExpr,
    w_kl: &LinExpr,
    w_ll: &LinExpr,
    model: ModelKind,
    keep_bounds_with_hull: bool,
) -> Result<Vec<(LinExpr, &'static str)>, RelaxationError> {
    if !(t_min > 0.0) || !(t_max >= t_min) || !t_max.is_finite() {
        return Err(RelaxationError::InvalidTapRange { t_min, t_max });
    }
    if t_max - t_min <= 1e-12 {
        return Err(RelaxationError::DegenerateTapRange { t_min, t_max });
    }
    let x = || v_kk.clone();
    let lower_z1 = (w_kl.clone() - (1.0 / t_max) * x(), "tap_z1_lower");
    let upper_z1 = ((1.0 / t_min) * x() - w_kl.clone(), "tap_z1_upper");
    let lower_z2 = (w_ll.clone() - (1.0 / (t_max * t_max)) * x(), "tap_z2_lower");
    let upper_z2 = ((1.0 / (t_min * t_min)) * x() - w_ll.clone(), "tap_z2_upper");
    let hull = ((t_min + t_max) * w_kl.clone() - x() - (t_min * t_max) * w_ll.clone(), "tap_hull");
    Ok(match model {
        ModelKind::Sdr1 => vec![lower_z1, upper_z2],
        ModelKind::Tcr1 => vec![lower_z1, upper_z1, lower_z2, upper_z2],
        ModelKind::Sdr2 => vec![hull],
        ModelKind::Tcr2 if keep_bounds_with_hull => vec![hull, lower_z1, upper_z1, lower_z2, upper_z2],
        ModelKind::Tcr2 => vec![hull],
    })
}

pub fn build_relaxation(net: &Network, kind: RelaxationKind) -> Result<(ConeProgram, LiftedVars), RelaxationError> {
    build_relaxation_with(net, kind, &BuildOptions::default())
}

pub fn build_relaxation_with(
    net: &Network,
    kind: RelaxationKind,
    opts: &BuildOptions,
) -> Result<(ConeProgram, LiftedVars), RelaxationError> {
    let n = net.n_buses();
    let sdr = kind.model.is_sdr();
    let mut prog = ConeProgram::new();

    // which off-diagonal V entries exist
    let mut cover = None;
    let pairs: BTreeSet<(usize, usize)> = if sdr && kind.chordal {
        let c = chordal_extension_with(&build_graph(net), &opts.merge);
        let mut s = BTreeSet::new();
        for cl in &c.cliques {
            for (a, &i) in cl.iter().enumerate() {
                for &j in &cl[..a] {
                    s.insert((i.max(j), i.min(j)));
                }
            }
        }
        cover = Some(c);
        s
    } else if sdr {
        (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).collect()
    } else {
        net.branches.iter().map(|b| (b.from_bus.max(b.to_bus), b.from_bus.min(b.to_bus))).collect()
    };

    let v_diag: Vec<Var> = (0..n).map(|k| prog.new_var(format!("V[{k},{k}]"))).collect();
    let mut v_off = BTreeMap::new();
    for &(i, j) in &pairs {
        let re = prog.new_var(format!("ReV[{i},{j}]"));
        let im = prog.new_var(format!("ImV[{i},{j}]"));
        v_off.insert((i, j), (re, im));
    }
    let v = (!sdr).then(|| {
        (0..n)
            .map(|k| (prog.new_var(format!("Rev[{k}]")), prog.new_var(format!("Imv[{k}]"))))
            .collect::<Vec<_>>()
    });
    let taps: Vec<TapVars> = net
        .tap_branches
        .iter()
        .map(|&l| {
            let br = &net.branches[l];
            TapVars {
                branch: l,
                from_bus: br.from_bus,
                to_bus: br.to_bus,
                w_ll: prog.new_var(format!("Wll[{l}]")),
                w_kl: prog.new_var(format!("Wkl[{l}]")),
                w_lm: (prog.new_var(format!("ReWlm[{l}]")), prog.new_var(format!("ImWlm[{l}]"))),
                w: (!sdr).then(|| (prog.new_var(format!("Rew[{l}]")), prog.new_var(format!("Imw[{l}]")))),
            }
        })
        .collect();
    let xi: Vec<Var> = net.shunts.iter().map(|s| prog.new_var(format!("xi[{}]", s.bus))).collect();
    let pg: Vec<Var> = net.generators.iter().map(|g| prog.new_var(format!("pg[{}]", g.id))).collect();
    let qg: Vec<Var> = net.generators.iter().map(|g| prog.new_var(format!("qg[{}]", g.id))).collect();

    let mut vars = LiftedVars {
        n_buses: n,
        v_diag,
        v_off,
        taps,
        xi,
        pg,
        qg,
        flows: Vec::with_capacity(net.branches.len()),
        v,
        cost_epigraph: vec![None; net.generators.len()],
        cover,
    };

    // branch flows
    let tap_of: BTreeMap<usize, usize> = net.tap_branches.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    for br in &net.branches {
        let (k, m) = (br.from_bus, br.to_bus);
        let yc = br.series_admittance.conj();
        let a = yc - cx(0.0, br.shunt_susceptance_total / 2.0);
        let (from_sq, from_to) = match tap_of.get(&br.id) {
            Some(&ti) => {
                let t = &vars.taps[ti];
                (
                    ComplexExpr::real(LinExpr::var(t.w_ll)),
                    ComplexExpr::new(LinExpr::var(t.w_lm.0), LinExpr::var(t.w_lm.1)),
                )
            }
            None => (vars.v_pair(k, k), vars.v_pair(k, m)),
        };
        let s_from = from_sq.scale(a) - from_to.clone().scale(yc);
        let s_to = vars.v_pair(m, m).scale(a) - from_to.conj().scale(yc);
        vars.flows.push(FlowExprs { from: s_from, to: s_to });
    }

    // power balance
    let (from_of, to_of) = net.incidence();
    let shunt_idx: BTreeMap<usize, usize> = net.shunts.iter().enumerate().map(|(i, s)| (s.bus, i)).collect();
    for k in 0..n {
        let bus = &net.buses[k];
        let mut p = LinExpr::constant(-bus.p_demand);
        let mut q = LinExpr::constant(-bus.q_demand);
        for &g in &net.gens_by_bus[k] {
            p.add_term(vars.pg[g], 1.0);
            q.add_term(vars.qg[g], 1.0);
        }
        if let Some(&si) = shunt_idx.get(&k) {
            let s = &net.shunts[si];
            p.add_term(vars.xi[si], -s.g_shunt);
            q.add_term(vars.xi[si], s.b_shunt);
        }
        for &l in &from_of[k] {
            p -= vars.flows[l].from.re.clone();
            q -= vars.flows[l].from.im.clone();
        }
        for &l in &to_of[k] {
            p -= vars.flows[l].to.re.clone();
            q -= vars.flows[l].to.im.clone();
        }
        let (p, q) = (p.compact(), q.compact());
        prog.add_eq(p, format!("balance_p[{k}]"));
        prog.add_eq(q, format!("balance_q[{k}]"));
    }

    // shunt linearization
    for (si, s) in net.shunts.iter().enumerate() {
        prog.add_nonneg(LinExpr::var(vars.xi[si]), format!("xi_lower[{}]", s.bus));
        prog.add_nonneg(LinExpr::var(vars.v_diag[s.bus]) - LinExpr::var(vars.xi[si]), format!("xi_upper[{}]", s.bus));
    }

    // generator capacities
    for (g, gen) in net.generators.iter().enumerate() {
        let p = LinExpr::var(vars.pg[g]);
        let q = LinExpr::var(vars.qg[g]);
        prog.add_nonneg(p.clone() - LinExpr::constant(gen.p_min), format!("pg_lower[{g}]"));
        prog.add_nonneg(LinExpr::constant(gen.p_max) - p, format!("pg_upper[{g}]"));
        prog.add_nonneg(q.clone() - LinExpr::constant(gen.q_min), format!("qg_lower[{g}]"));
        prog.add_nonneg(LinExpr::constant(gen.q_max) - q, format!("qg_upper[{g}]"));
    }

    // thermal limits
    for br in &net.branches {
        if let Some(s) = br.thermal_limit {
            let f = &vars.flows[br.id];
            for (end, z) in [("from", &f.from), ("to", &f.to)] {
                prog.add(
                    Cone::SecondOrder(3),
                    vec![LinExpr::constant(s), z.re.clone(), z.im.clone()],
                    format!("thermal_{end}[{}]", br.id),
                )?;
            }
        }
    }

    // voltage magnitudes
    for (k, bus) in net.buses.iter().enumerate() {
        let x = LinExpr::var(vars.v_diag[k]);
        prog.add_nonneg(x.clone() - LinExpr::constant(bus.v_min * bus.v_min), format!("vm_lower[{k}]"));
        prog.add_nonneg(LinExpr::constant(bus.v_max * bus.v_max) - x, format!("vm_upper[{k}]"));
    }

    // tap coupling
    for t in &vars.taps {
        let grid = net.branches[t.branch].tap.as_ref().expect("tap branch has a grid");
        let x = LinExpr::var(vars.v_diag[t.from_bus]);
        let z1 = LinExpr::var(t.w_kl);
        let z2 = LinExpr::var(t.w_ll);
        match tap_envelope_rows(grid.t_min, grid.t_max, &x, &z1, &z2, kind.model, opts.tcr2_keep_tap_bounds) {
            Ok(rows) => {
                for (row, name) in rows {
                    prog.add_nonneg(row, format!("{name}[{}]", t.branch));
                }
            }
            Err(RelaxationError::DegenerateTapRange { t_min, .. }) => {
                prog.add_eq(z1 - (1.0 / t_min) * x.clone(), format!("tap_fixed_z1[{}]", t.branch));
                prog.add_eq(z2 - (1.0 / (t_min * t_min)) * x, format!("tap_fixed_z2[{}]", t.branch));
            }
            Err(e) => return Err(e),
        }
    }

    // semidefinite structure
    if sdr {
        let vb = vars.v_block();
        match &vars.cover {
            Some(c) => {
                for con in decompose_psd(&vb, c, "V")? {
                    prog.add_constraint(con)?;
                }
            }
            None => {
                prog.add_constraint(embed_hermitian_psd(&vb, "V")?)?;
            }
        }
        for t in &vars.taps {
            let wb = tap_block(&vars, t, false)?;
            prog.add_constraint(embed_hermitian_psd(&wb, format!("W[{}]", t.branch))?)?;
        }
    } else {
        let mut covered = vec![false; n];
        let mut done = BTreeSet::new();
        for br in net.branches.iter().filter(|b| !b.is_tap()) {
            let (k, m) = (br.from_bus.min(br.to_bus), br.from_bus.max(br.to_bus));
            if !done.insert((k, m)) {
                continue;
            }
            let mut b = HermitianBlock::new(3);
            b.set_real(0, 0, LinExpr::constant(1.0))?;
            b.set(1, 0, vars.v_var(k).expect("tcr"))?;
            b.set(2, 0, vars.v_var(m).expect("tcr"))?;
            b.set(1, 1, vars.v_pair(k, k))?;
            b.set(2, 1, vars.v_pair(m, k))?;
            b.set(2, 2, vars.v_pair(m, m))?;
            prog.add_constraint(embed_hermitian_psd(&b, format!("corner[{k},{m}]"))?)?;
            covered[k] = true;
            covered[m] = true;
        }
        for t in &vars.taps {
            let b = tap_block(&vars, t, true)?;
            prog.add_constraint(embed_hermitian_psd(&b, format!("corner_W[{}]", t.branch))?)?;
            covered[t.from_bus] = true;
            covered[t.to_bus] = true;
        }
        for k in (0..n).filter(|&k| !covered[k]) {
            let mut b = HermitianBlock::new(2);
            b.set_real(0, 0, LinExpr::constant(1.0))?;
            b.set(1, 0, vars.v_var(k).expect("tcr"))?;
            b.set(1, 1, vars.v_pair(k, k))?;
            prog.add_constraint(embed_hermitian_psd(&b, format!("corner_bus[{k}]"))?)?;
        }
        let r = net.reference_bus;
        let (lo, hi) = (net.buses[r].v_min, net.buses[r].v_max);
        let (re, im) = vars.v.as_ref().expect("tcr")[r];
        prog.add_nonneg(
            (lo + hi) * LinExpr::var(re) - LinExpr::var(vars.v_diag[r]) - LinExpr::constant(lo * hi),
            format!("reference_cut[{r}]"),
        );
        prog.add_eq(LinExpr::var(im), format!("reference_angle[{r}]"));
    }

    // objective
    let mut obj = LinExpr::zero();
    match kind.objective {
        Objective::Loss => {
            for &p in &vars.pg {
                obj.add_term(p, net.base_mva);
            }
        }
        Objective::Cost => {
            for (g, gen) in net.generators.iter().enumerate() {
                let scale = gen.p_max.abs().max(gen.p_min.abs()).max(EPIGRAPH_MIN_SCALE);
                let e = quad_cost_epigraph(&mut prog, gen.cost_c2, gen.cost_c1, gen.cost_c0, vars.pg[g], scale, &format!("{g}"))?;
                vars.cost_epigraph[g] = e.r.map(|r| (r, e.scale));
                obj += e.contribution;
            }
        }
    }
    prog.objective = obj.compact();
    prog.validate()?;
    Ok((prog, vars))
}

/// `W_ℓ` over `(v_k, w, v_m)`, optionally bordered by `[1, w^H]`.
fn tap_block(vars: &LiftedVars, t: &TapVars, bordered: bool) -> Result<HermitianBlock, HermitianError> {
    let (k, m) = (t.from_bus, t.to_bus);
    let o = usize::from(bordered);
    let mut b = HermitianBlock::new(3 + o);
    if bordered {
        let (wr, wi) = t.w.expect("tcr tap vars");
        b.set_real(0, 0, LinExpr::constant(1.0))?;
        b.set(1, 0, vars.v_var(k).expect("tcr"))?;
        b.set(2, 0, ComplexExpr::new(LinExpr::var(wr), LinExpr::var(wi)))?;
        b.set(3, 0, vars.v_var(m).expect("tcr"))?;
    }
    b.set(o, o, vars.v_pair(k, k))?;
    b.set_real(o + 1, o, LinExpr::var(t.w_kl))?;
    b.set_real(o + 1, o + 1, LinExpr::var(t.w_ll))?;
    b.set(o + 2, o, vars.v_pair(m, k))?;
    b.set(o + 2, o + 1, ComplexExpr::new(LinExpr::var(t.w_lm.0), LinExpr::var(t.w_lm.1)).conj())?;
    b.set(o + 2, o + 2, vars.v_pair(m, m))?;
    Ok(b)
}

/// Rank-one lifting of an operating point with fixed discretes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedPoint {
    pub v: Vec<Complex64>,
    /// `v_k / t` per tap branch, aligned with `Network::tap_branches`.
    pub w: Vec<Complex64>,
    /// `u_k |v_k|²` per shunt.
    pub xi: Vec<f64>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    /// `(s_from, s_to)` per branch.
    pub flows: Vec<(Complex64, Complex64)>,
}

/// Lifts `point` after checking it against the operating constraints.
pub fn feasibility_embed(
    net: &Network,
    assignment: &DiscreteAssignment,
    point: &OperatingPoint,
) -> Result<LiftedPoint, RelaxationError> {
    if assignment.u_round.len() != net.shunts.len() || assignment.t_round.len() != net.tap_branches.len() {
        return Err(RelaxationError::AssignmentMismatch(format!(
            "{} shunts / {} taps expected",
            net.shunts.len(),
            net.tap_branches.len()
        )));
    }
    let res = residuals(net, assignment, point);
    let (violation, worst) = max_violation(&res);
    if violation > 1e-6 {
        return Err(RelaxationError::InfeasibleSeedPoint {
            violation,
            constraint: worst.map(|r| r.label()).unwrap_or_default(),
        });
    }
    let ratios = assignment.branch_ratios(net);
    let w = net
        .tap_branches
        .iter()
        .map(|&l| point.v[net.branches[l].from_bus] / ratios[l])
        .collect();
    let xi = net
        .shunts
        .iter()
        .zip(&assignment.u_round)
        .map(|(s, &u)| if u { point.v[s.bus].norm_sqr() } else { 0.0 })
        .collect();
    let flows = net
        .branches
        .iter()
        .map(|b| b.flows(point.v[b.from_bus], point.v[b.to_bus], ratios[b.id]))
        .collect();
    Ok(LiftedPoint { v: point.v.clone(), w, xi, pg: point.pg.clone(), qg: point.qg.clone(), flows })
}

impl LiftedVars {
    /// Values of every program variable at a lifted point.
    pub fn values_at(&self, net: &Network, num_vars: usize, p: &LiftedPoint) -> Vec<f64> {
        let mut x = vec![0.0; num_vars];
        let vv = |i: usize, j: usize| p.v[i] * p.v[j].conj();
        for (k, var) in self.v_diag.iter().enumerate() {
            x[var.0] = p.v[k].norm_sqr();
        }
        for (&(i, j), &(re, im)) in &self.v_off {
            let z = vv(i, j);
            x[re.0] = z.re;
            x[im.0] = z.im;
        }
        if let Some(v) = &self.v {
            for (k, &(re, im)) in v.iter().enumerate() {
                x[re.0] = p.v[k].re;
                x[im.0] = p.v[k].im;
            }
        }
        for (t, &w) in self.taps.iter().zip(&p.w) {
            x[t.w_ll.0] = w.norm_sqr();
            x[t.w_kl.0] = (p.v[t.from_bus] * w.conj()).re;
            let wlm = w * p.v[t.to_bus].conj();
            x[t.w_lm.0 .0] = wlm.re;
            x[t.w_lm.1 .0] = wlm.im;
            if let Some((re, im)) = t.w {
                x[re.0] = w.re;
                x[im.0] = w.im;
            }
        }
        for (var, &xi) in self.xi.iter().zip(&p.xi) {
            x[var.0] = xi;
        }
        for g in 0..net.generators.len() {
            x[self.pg[g].0] = p.pg[g];
            x[self.qg[g].0] = p.qg[g];
            if let Some((r, scale)) = self.cost_epigraph[g] {
                x[r.0] = (p.pg[g] / scale).powi(2);
            }
        }
        x
    }
}
