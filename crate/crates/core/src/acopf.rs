//! Continuous ACOPF with fixed shunt and tap settings: operating-point
//! residuals and a primal-dual interior-point local solver in rectangular
//! voltage coordinates.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Network;
use crate::recovery::{DiscreteAssignment, RelaxationSolution};
use crate::relaxations::Objective;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AcopfError {
    #[error("no feasible upper bound among {0} results")]
    NoFeasibleUpperBound(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v: Vec<Complex64>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    /// `(s_from, s_to)` per branch.
    pub flows: Vec<(Complex64, Complex64)>,
}

impl OperatingPoint {
    pub fn new(net: &Network, assignment: &DiscreteAssignment, v: Vec<Complex64>, pg: Vec<f64>, qg: Vec<f64>) -> Self {
        let ratios = assignment.branch_ratios(net);
        let flows = net
            .branches
            .iter()
            .map(|b| b.flows(v[b.from_bus], v[b.to_bus], ratios[b.id]))
            .collect();
        OperatingPoint { v, pg, qg, flows }
    }

    /// Voltages, dispatch and flows stored in the case file.
    pub fn from_case(net: &Network, assignment: &DiscreteAssignment) -> Self {
        let v = net.buses.iter().map(|b| Complex64::from_polar(b.vm_case, b.va_case)).collect();
        let pg = net.generators.iter().map(|g| g.pg_case).collect();
        let qg = net.generators.iter().map(|g| g.qg_case).collect();
        OperatingPoint::new(net, assignment, v, pg, qg)
    }

    pub fn objective(&self, net: &Network, objective: Objective) -> f64 {
        match objective {
            Objective::Cost => net.generators.iter().zip(&self.pg).map(|(g, &p)| g.cost(p)).sum(),
            Objective::Loss => self.pg.iter().sum::<f64>() * net.base_mva,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResidualKind {
    BalanceP,
    BalanceQ,
    PgLower,
    PgUpper,
    QgLower,
    QgUpper,
    ThermalFrom,
    ThermalTo,
    VmLower,
    VmUpper,
    ReferenceAngle,
    TapRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub kind: ResidualKind,
    /// Bus, generator, branch or tap index depending on `kind`.
    pub index: usize,
    /// Signed mismatch for equalities, positive part for inequalities.
    pub value: f64,
}

impl Residual {
    pub fn label(&self) -> String {
        format!("{:?}[{}]", self.kind, self.index)
    }
}

/// Every operating constraint at `point` with the discretes of `assignment`.
/// Flows are recomputed from the voltages.
pub fn residuals(net: &Network, assignment: &DiscreteAssignment, point: &OperatingPoint) -> Vec<Residual> {
    let n = net.n_buses();
    let ratios = assignment.branch_ratios(net);
    let y_sh = assignment.shunt_admittance(net);
    let mut p_bal = vec![0.0; n];
    let mut q_bal = vec![0.0; n];
    for (k, bus) in net.buses.iter().enumerate() {
        let s_sh = y_sh[k].conj() * point.v[k].norm_sqr();
        p_bal[k] = -bus.p_demand - s_sh.re;
        q_bal[k] = -bus.q_demand - s_sh.im;
    }
    for (g, gen) in net.generators.iter().enumerate() {
        p_bal[gen.bus] += point.pg[g];
        q_bal[gen.bus] += point.qg[g];
    }
    let mut out = Vec::new();
    let pos = |x: f64| x.max(0.0);
    let mut thermal = Vec::new();
    for br in &net.branches {
        let (sf, st) = br.flows(point.v[br.from_bus], point.v[br.to_bus], ratios[br.id]);
        p_bal[br.from_bus] -= sf.re;
        q_bal[br.from_bus] -= sf.im;
        p_bal[br.to_bus] -= st.re;
        q_bal[br.to_bus] -= st.im;
        if let Some(s) = br.thermal_limit {
            thermal.push(Residual { kind: ResidualKind::ThermalFrom, index: br.id, value: pos(sf.norm() - s) });
            thermal.push(Residual { kind: ResidualKind::ThermalTo, index: br.id, value: pos(st.norm() - s) });
        }
    }
    for k in 0..n {
        out.push(Residual { kind: ResidualKind::BalanceP, index: k, value: p_bal[k] });
        out.push(Residual { kind: ResidualKind::BalanceQ, index: k, value: q_bal[k] });
    }
    for (g, gen) in net.generators.iter().enumerate() {
        out.push(Residual { kind: ResidualKind::PgLower, index: g, value: pos(gen.p_min - point.pg[g]) });
        out.push(Residual { kind: ResidualKind::PgUpper, index: g, value: pos(point.pg[g] - gen.p_max) });
        out.push(Residual { kind: ResidualKind::QgLower, index: g, value: pos(gen.q_min - point.qg[g]) });
        out.push(Residual { kind: ResidualKind::QgUpper, index: g, value: pos(point.qg[g] - gen.q_max) });
    }
    out.extend(thermal);
    for (k, bus) in net.buses.iter().enumerate() {
        let vm = point.v[k].norm();
        out.push(Residual { kind: ResidualKind::VmLower, index: k, value: pos(bus.v_min - vm) });
        out.push(Residual { kind: ResidualKind::VmUpper, index: k, value: pos(vm - bus.v_max) });
    }
    out.push(Residual {
        kind: ResidualKind::ReferenceAngle,
        index: net.reference_bus,
        value: point.v[net.reference_bus].arg(),
    });
    for (i, (&t, grid)) in assignment.t_round.iter().zip(&assignment.grids).enumerate() {
        out.push(Residual { kind: ResidualKind::TapRange, index: i, value: pos(grid.t_min - t).max(pos(t - grid.t_max)) });
    }
    out
}

/// Largest absolute residual and the constraint it belongs to.
pub fn max_violation(res: &[Residual]) -> (f64, Option<&Residual>) {
    let mut worst = (0.0, None);
    for r in res {
        if r.value.abs() > worst.0 {
            worst = (r.value.abs(), Some(r));
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalStatus {
    LocalOptimal,
    FeasibleOnly,
    Infeasible,
    Diverged,
}

impl LocalStatus {
    pub fn is_feasible(self) -> bool {
        matches!(self, LocalStatus::LocalOptimal | LocalStatus::FeasibleOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSolveResult {
    pub point: OperatingPoint,
    /// $/h or MW.
    pub objective: f64,
    pub status: LocalStatus,
    /// Per unit, recomputed outside the solver.
    pub max_violation: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub time: f64,
    /// Which start produced the result: `warm`, `case`, `flat` or `restored`.
    pub start: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubproblemOptions {
    pub feas_tol: f64,
    pub grad_tol: f64,
    pub comp_tol: f64,
    pub cost_tol: f64,
    pub max_iter: usize,
    /// Multiplier applied to the objective inside the solver; `None` picks
    /// 1e-4 for cost and 1e-2 for loss.
    pub objective_scale: Option<f64>,
}

impl Default for SubproblemOptions {
    fn default() -> Self {
        SubproblemOptions {
            feas_tol: 1e-6,
            grad_tol: 1e-6,
            comp_tol: 1e-6,
            cost_tol: 1e-6,
            max_iter: 400,
            objective_scale: None,
        }
    }
}

/// `Σ c z_i z_j` over the stacked real and imaginary voltage parts.
#[derive(Debug, Clone, Default)]
struct Quad {
    terms: Vec<(usize, usize, f64)>,
}

impl Quad {
    fn value(&self, z: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, j, c)| c * z[i] * z[j]).sum()
    }

    fn grad_into(&self, z: &[f64], out: &mut [f64], w: f64) {
        for &(i, j, c) in &self.terms {
            out[i] += w * c * z[j];
            out[j] += w * c * z[i];
        }
    }

    fn hess_into(&self, h: &mut DMatrix<f64>, w: f64) {
        for &(i, j, c) in &self.terms {
            h[(i, j)] += w * c;
            h[(j, i)] += w * c;
        }
    }
}

/// Adds `a v_i v_j*` to the pair `(re, im)`.
fn add_product(re: &mut Quad, im: &mut Quad, a: Complex64, i: usize, j: usize, n: usize) {
    let (ei, fi, ej, fj) = (i, n + i, j, n + j);
    // v_i v_j* = (e_i e_j + f_i f_j) + j (f_i e_j - e_i f_j)
    let (al, be) = (a.re, a.im);
    re.terms.extend([(ei, ej, al), (fi, fj, al), (fi, ej, -be), (ei, fj, be)]);
    im.terms.extend([(ei, ej, be), (fi, fj, be), (fi, ej, al), (ei, fj, -al)]);
}

struct Thermal {
    p: Quad,
    q: Quad,
    limit_sq: f64,
}

struct Evaluation {
    f: f64,
    df: DVector<f64>,
    g: DVector<f64>,
    jg: DMatrix<f64>,
    h: DVector<f64>,
    jh: DMatrix<f64>,
}

/// The subproblem in `x = (e, f, pg, qg)`.
struct Model {
    n: usize,
    ng: usize,
    nx: usize,
    p_inj: Vec<Quad>,
    q_inj: Vec<Quad>,
    p_demand: Vec<f64>,
    q_demand: Vec<f64>,
    gen_bus: Vec<usize>,
    reference: usize,
    /// `x_i = value`
    fixed: Vec<(usize, f64)>,
    /// `sign * x_i - bound ≤ 0`
    bounds: Vec<(usize, f64, f64)>,
    v_min_sq: Vec<f64>,
    v_max_sq: Vec<f64>,
    thermal: Vec<Thermal>,
    /// `(c2, c1)` per generator after scaling, and the loss weight.
    quad_cost: Vec<(f64, f64)>,
    with_objective: bool,
}

impl Model {
    fn new(net: &Network, assignment: &DiscreteAssignment, objective: Objective, scale: f64) -> Self {
        let n = net.n_buses();
        let ng = net.generators.len();
        let ratios = assignment.branch_ratios(net);
        let y_sh = assignment.shunt_admittance(net);
        let mut p_inj = vec![Quad::default(); n];
        let mut q_inj = vec![Quad::default(); n];
        // S_k = Σ_m conj(Y_km) v_k v_m*
        for k in 0..n {
            if y_sh[k] != Complex64::new(0.0, 0.0) {
                let (p, q) = (&mut p_inj[k], &mut q_inj[k]);
                add_product(p, q, y_sh[k].conj(), k, k, n);
            }
        }
        let mut thermal = Vec::new();
        for br in &net.branches {
            let t = ratios[br.id];
            let y = br.series_admittance;
            let ys = y + Complex64::new(0.0, br.shunt_susceptance_total / 2.0);
            let (k, m) = (br.from_bus, br.to_bus);
            let mut pf = Quad::default();
            let mut qf = Quad::default();
            let mut pt = Quad::default();
            let mut qt = Quad::default();
            add_product(&mut pf, &mut qf, ys.conj() / (t * t), k, k, n);
            add_product(&mut pf, &mut qf, -y.conj() / t, k, m, n);
            add_product(&mut pt, &mut qt, -y.conj() / t, m, k, n);
            add_product(&mut pt, &mut qt, ys.conj(), m, m, n);
            p_inj[k].terms.extend_from_slice(&pf.terms);
            q_inj[k].terms.extend_from_slice(&qf.terms);
            p_inj[m].terms.extend_from_slice(&pt.terms);
            q_inj[m].terms.extend_from_slice(&qt.terms);
            if let Some(s) = br.thermal_limit {
                thermal.push(Thermal { p: pf, q: qf, limit_sq: s * s });
                thermal.push(Thermal { p: pt, q: qt, limit_sq: s * s });
            }
        }
        let mut fixed = Vec::new();
        let mut bounds = Vec::new();
        for (g, gen) in net.generators.iter().enumerate() {
            for (idx, lo, hi) in [(2 * n + g, gen.p_min, gen.p_max), (2 * n + ng + g, gen.q_min, gen.q_max)] {
                if (hi - lo).abs() <= 1e-9 {
                    fixed.push((idx, 0.5 * (lo + hi)));
                } else {
                    if lo.is_finite() {
                        bounds.push((idx, -1.0, -lo));
                    }
                    if hi.is_finite() {
                        bounds.push((idx, 1.0, hi));
                    }
                }
            }
        }
        let quad_cost = net
            .generators
            .iter()
            .map(|g| match objective {
                Objective::Cost => (g.cost_c2 * scale, g.cost_c1 * scale),
                Objective::Loss => (0.0, net.base_mva * scale),
            })
            .collect();
        Model {
            n,
            ng,
            nx: 2 * n + 2 * ng,
            p_inj,
            q_inj,
            p_demand: net.buses.iter().map(|b| b.p_demand).collect(),
            q_demand: net.buses.iter().map(|b| b.q_demand).collect(),
            gen_bus: net.generators.iter().map(|g| g.bus).collect(),
            reference: net.reference_bus,
            fixed,
            bounds,
            v_min_sq: net.buses.iter().map(|b| b.v_min * b.v_min).collect(),
            v_max_sq: net.buses.iter().map(|b| b.v_max * b.v_max).collect(),
            thermal,
            quad_cost,
            with_objective: true,
        }
    }

    fn neq(&self) -> usize {
        2 * self.n + 1 + self.fixed.len()
    }

    fn niq(&self) -> usize {
        2 * self.n + self.thermal.len() + self.bounds.len()
    }

    fn eval(&self, x: &DVector<f64>) -> Evaluation {
        let (n, ng, nx) = (self.n, self.ng, self.nx);
        let z = &x.as_slice()[..2 * n];
        let mut f = 0.0;
        let mut df = DVector::zeros(nx);
        if self.with_objective {
            for (g, &(c2, c1)) in self.quad_cost.iter().enumerate() {
                let p = x[2 * n + g];
                f += c2 * p * p + c1 * p;
                df[2 * n + g] = 2.0 * c2 * p + c1;
            }
        }
        let neq = self.neq();
        let mut g = DVector::zeros(neq);
        let mut jg = DMatrix::zeros(neq, nx);
        for k in 0..n {
            g[k] = self.p_inj[k].value(z) + self.p_demand[k];
            g[n + k] = self.q_inj[k].value(z) + self.q_demand[k];
            let mut row = vec![0.0; 2 * n];
            self.p_inj[k].grad_into(z, &mut row, 1.0);
            for (j, v) in row.iter().enumerate() {
                jg[(k, j)] = *v;
            }
            let mut row = vec![0.0; 2 * n];
            self.q_inj[k].grad_into(z, &mut row, 1.0);
            for (j, v) in row.iter().enumerate() {
                jg[(n + k, j)] = *v;
            }
        }
        for (gi, &b) in self.gen_bus.iter().enumerate() {
            g[b] -= x[2 * n + gi];
            g[n + b] -= x[2 * n + ng + gi];
            jg[(b, 2 * n + gi)] -= 1.0;
            jg[(n + b, 2 * n + ng + gi)] -= 1.0;
        }
        g[2 * n] = x[n + self.reference];
        jg[(2 * n, n + self.reference)] = 1.0;
        for (r, &(idx, val)) in self.fixed.iter().enumerate() {
            g[2 * n + 1 + r] = x[idx] - val;
            jg[(2 * n + 1 + r, idx)] = 1.0;
        }

        let niq = self.niq();
        let mut h = DVector::zeros(niq);
        let mut jh = DMatrix::zeros(niq, nx);
        for k in 0..n {
            let vm2 = z[k] * z[k] + z[n + k] * z[n + k];
            h[2 * k] = self.v_min_sq[k] - vm2;
            h[2 * k + 1] = vm2 - self.v_max_sq[k];
            jh[(2 * k, k)] = -2.0 * z[k];
            jh[(2 * k, n + k)] = -2.0 * z[n + k];
            jh[(2 * k + 1, k)] = 2.0 * z[k];
            jh[(2 * k + 1, n + k)] = 2.0 * z[n + k];
        }
        let mut r = 2 * n;
        for th in &self.thermal {
            let (p, q) = (th.p.value(z), th.q.value(z));
            h[r] = p * p + q * q - th.limit_sq;
            let mut row = vec![0.0; 2 * n];
            th.p.grad_into(z, &mut row, 2.0 * p);
            th.q.grad_into(z, &mut row, 2.0 * q);
            for (j, v) in row.iter().enumerate() {
                jh[(r, j)] = *v;
            }
            r += 1;
        }
        for &(idx, sign, bound) in &self.bounds {
            h[r] = sign * x[idx] - bound;
            jh[(r, idx)] = sign;
            r += 1;
        }
        Evaluation { f, df, g, jg, h, jh }
    }

    /// Hessian of the Lagrangian `f + lamᵀ g + muᵀ h`.
    fn hessian(&self, x: &DVector<f64>, lam: &DVector<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
        let (n, nx) = (self.n, self.nx);
        let z = &x.as_slice()[..2 * n];
        let mut hm = DMatrix::zeros(nx, nx);
        if self.with_objective {
            for (g, &(c2, _)) in self.quad_cost.iter().enumerate() {
                hm[(2 * n + g, 2 * n + g)] += 2.0 * c2;
            }
        }
        for k in 0..n {
            self.p_inj[k].hess_into(&mut hm, lam[k]);
            self.q_inj[k].hess_into(&mut hm, lam[n + k]);
            let w = 2.0 * (mu[2 * k + 1] - mu[2 * k]);
            hm[(k, k)] += w;
            hm[(n + k, n + k)] += w;
        }
        for (i, th) in self.thermal.iter().enumerate() {
            let m = mu[2 * n + i];
            if m == 0.0 {
                continue;
            }
            let (p, q) = (th.p.value(z), th.q.value(z));
            let mut gp = vec![0.0; 2 * n];
            let mut gq = vec![0.0; 2 * n];
            th.p.grad_into(z, &mut gp, 1.0);
            th.q.grad_into(z, &mut gq, 1.0);
            let nz: Vec<usize> = (0..2 * n).filter(|&j| gp[j] != 0.0 || gq[j] != 0.0).collect();
            for &a in &nz {
                for &b in &nz {
                    hm[(a, b)] += 2.0 * m * (gp[a] * gp[b] + gq[a] * gq[b]);
                }
            }
            th.p.hess_into(&mut hm, 2.0 * m * p);
            th.q.hess_into(&mut hm, 2.0 * m * q);
        }
        hm
    }
}

struct IpmOutcome {
    x: DVector<f64>,
    converged: bool,
    diverged: bool,
    iterations: usize,
    gradcond: f64,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
}

/// Primal-dual interior-point iteration with a step-to-boundary rule.
fn interior_point(model: &Model, x0: DVector<f64>, opts: &SubproblemOptions) -> IpmOutcome {
    const XI: f64 = 0.99995;
    const SIGMA: f64 = 0.1;
    const Z0: f64 = 1.0;
    const ALPHA_MIN: f64 = 1e-8;
    let (nx, neq, niq) = (model.nx, model.neq(), model.niq());
    let mut x = x0;
    let mut ev = model.eval(&x);
    let mut gamma = 1.0;
    let mut lam = DVector::zeros(neq);
    let mut z = DVector::from_element(niq, Z0);
    let mut mu = DVector::from_element(niq, Z0);
    for i in 0..niq {
        if ev.h[i] < -Z0 {
            z[i] = -ev.h[i];
        }
        if gamma / z[i] > Z0 {
            mu[i] = gamma / z[i];
        }
    }
    let mut f0 = ev.f;
    let mut gradcond = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let lxx = model.hessian(&x, &lam, &mu);
        let lx = &ev.df + ev.jg.transpose() * &lam + ev.jh.transpose() * &mu;
        let zinv: DVector<f64> = z.map(|v| 1.0 / v);
        let w = mu.component_mul(&zinv);
        let mut jh_w = ev.jh.clone();
        for (r, mut row) in jh_w.row_iter_mut().enumerate() {
            row *= w[r];
        }
        let m_mat = lxx + ev.jh.transpose() * &jh_w;
        let rhs_h = (mu.component_mul(&ev.h) + DVector::from_element(niq, gamma)).component_mul(&zinv);
        let n_vec = &lx + ev.jh.transpose() * rhs_h;
        let dim = nx + neq;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (nx, nx)).copy_from(&m_mat);
        kkt.view_mut((0, nx), (nx, neq)).copy_from(&ev.jg.transpose());
        kkt.view_mut((nx, 0), (neq, nx)).copy_from(&ev.jg);
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, nx).copy_from(&(-&n_vec));
        rhs.rows_mut(nx, neq).copy_from(&(-&ev.g));
        let Some(sol) = kkt.lu().solve(&rhs) else {
            return IpmOutcome { x, converged: false, diverged: true, iterations: it, gradcond };
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return IpmOutcome { x, converged: false, diverged: true, iterations: it, gradcond };
        }
        let dx = sol.rows(0, nx).into_owned();
        let dlam = sol.rows(nx, neq).into_owned();
        let dz = -&ev.h - &z - &ev.jh * &dx;
        let dmu = -&mu + zinv.component_mul(&(DVector::from_element(niq, gamma) - mu.component_mul(&dz)));

        let step = |v: &DVector<f64>, dv: &DVector<f64>| {
            let mut a: f64 = 1.0;
            for i in 0..v.len() {
                if dv[i] < 0.0 {
                    a = a.min(XI * v[i] / -dv[i]);
                }
            }
            a
        };
        let alphap = step(&z, &dz);
        let alphad = step(&mu, &dmu);
        x += alphap * &dx;
        z += alphap * &dz;
        lam += alphad * &dlam;
        mu += alphad * &dmu;
        if niq > 0 {
            gamma = SIGMA * z.dot(&mu) / niq as f64;
        }

        ev = model.eval(&x);
        let lx = &ev.df + ev.jg.transpose() * &lam + ev.jh.transpose() * &mu;
        let maxh = ev.h.iter().fold(0.0_f64, |m, &v| m.max(v));
        let xnorm = inf_norm(&x);
        let znorm = inf_norm(&z);
        let lam_norm = inf_norm(&lam).max(inf_norm(&mu));
        // absolute, so convergence agrees with the residual check in `solve_subproblem`
        let feascond = inf_norm(&ev.g).max(maxh);
        gradcond = inf_norm(&lx) / (1.0 + lam_norm.max(znorm));
        let compcond = z.dot(&mu) / (1.0 + xnorm);
        let costcond = (ev.f - f0).abs() / (1.0 + f0.abs());
        log::trace!("ipm {it}: feas {feascond:.2e} grad {gradcond:.2e} comp {compcond:.2e} cost {costcond:.2e}");
        if feascond < opts.feas_tol && gradcond < opts.grad_tol && compcond < opts.comp_tol && costcond < opts.cost_tol {
            return IpmOutcome { x, converged: true, diverged: false, iterations: it, gradcond };
        }
        if x.iter().any(|v| !v.is_finite())
            || alphap < ALPHA_MIN
            || alphad < ALPHA_MIN
            || gamma < f64::EPSILON
            || gamma > 1.0 / f64::EPSILON
        {
            return IpmOutcome { x, converged: false, diverged: true, iterations: it, gradcond };
        }
        f0 = ev.f;
    }
    IpmOutcome { x, converged: false, diverged: false, iterations: opts.max_iter, gradcond }
}

fn pack(model: &Model, p: &OperatingPoint) -> DVector<f64> {
    let (n, ng) = (model.n, model.ng);
    let mut x = DVector::zeros(model.nx);
    for k in 0..n {
        x[k] = p.v[k].re;
        x[n + k] = p.v[k].im;
    }
    for g in 0..ng {
        x[2 * n + g] = p.pg[g];
        x[2 * n + ng + g] = p.qg[g];
    }
    x
}

fn unpack(net: &Network, assignment: &DiscreteAssignment, x: &DVector<f64>) -> OperatingPoint {
    let n = net.n_buses();
    let ng = net.generators.len();
    let v = (0..n).map(|k| Complex64::new(x[k], x[n + k])).collect();
    let pg = (0..ng).map(|g| x[2 * n + g]).collect();
    let qg = (0..ng).map(|g| x[2 * n + ng + g]).collect();
    OperatingPoint::new(net, assignment, v, pg, qg)
}

/// Flat voltages at the middle of each magnitude range and dispatch at the
/// middle of each capacity range.
pub fn flat_start(net: &Network, assignment: &DiscreteAssignment) -> OperatingPoint {
    let v = net.buses.iter().map(|b| Complex64::new(0.5 * (b.v_min + b.v_max), 0.0)).collect();
    let pg = net.generators.iter().map(|g| 0.5 * (g.p_min + g.p_max)).collect();
    let qg = net.generators.iter().map(|g| 0.5 * (g.q_min + g.q_max)).collect();
    OperatingPoint::new(net, assignment, v, pg, qg)
}

/// Start from a relaxation: magnitudes `√V_kk`, angles propagated from the
/// reference bus along a spanning tree using `arg V_km`, dispatch clamped to
/// capacities.
pub fn warm_start_from_relaxation(net: &Network, assignment: &DiscreteAssignment, sol: &RelaxationSolution) -> OperatingPoint {
    let n = net.n_buses();
    let mut adj = vec![Vec::new(); n];
    for b in &net.branches {
        adj[b.from_bus].push(b.to_bus);
        adj[b.to_bus].push(b.from_bus);
    }
    let mut angle = vec![f64::NAN; n];
    angle[net.reference_bus] = 0.0;
    let mut queue = VecDeque::from([net.reference_bus]);
    while let Some(k) = queue.pop_front() {
        for &m in &adj[k] {
            if angle[m].is_nan() {
                let vkm = sol.v_entry(k, m).unwrap_or(Complex64::new(1.0, 0.0));
                angle[m] = angle[k] - vkm.arg();
                queue.push_back(m);
            }
        }
    }
    let v = (0..n)
        .map(|k| {
            let b = &net.buses[k];
            let vm = sol.v_diag[k].max(0.0).sqrt().clamp(b.v_min, b.v_max);
            Complex64::from_polar(vm, if angle[k].is_nan() { 0.0 } else { angle[k] })
        })
        .collect();
    let pg = net.generators.iter().zip(&sol.pg).map(|(g, &p)| p.clamp(g.p_min, g.p_max)).collect();
    let qg = net.generators.iter().zip(&sol.qg).map(|(g, &q)| q.clamp(g.q_min, g.q_max)).collect();
    OperatingPoint::new(net, assignment, v, pg, qg)
}

/// Solves the continuous subproblem with the discretes of `assignment`.
///
/// Tries the warm start (if any), then the case profile, then a flat start.
/// If none converges, a feasibility phase without objective seeds a final
/// attempt.
pub fn solve_subproblem(
    net: &Network,
    assignment: &DiscreteAssignment,
    objective: Objective,
    warm: Option<&OperatingPoint>,
    opts: &SubproblemOptions,
) -> LocalSolveResult {
    let start = Instant::now();
    let scale = opts.objective_scale.unwrap_or(match objective {
        Objective::Cost => 1e-4,
        Objective::Loss => 1e-2,
    });
    let model = Model::new(net, assignment, objective, scale);
    let mut starts: Vec<(&str, OperatingPoint)> = Vec::new();
    if let Some(w) = warm {
        starts.push(("warm", w.clone()));
    }
    starts.push(("case", OperatingPoint::from_case(net, assignment)));
    starts.push(("flat", flat_start(net, assignment)));

    let mut iterations = 0;
    let mut fallback: Option<LocalSolveResult> = None;
    let finish = |x: &DVector<f64>, converged: bool, gradcond: f64, iterations: usize, label: &str| {
        let point = unpack(net, assignment, x);
        let (viol, _) = max_violation(&residuals(net, assignment, &point));
        let status = if viol <= opts.feas_tol {
            if converged && gradcond <= opts.grad_tol {
                LocalStatus::LocalOptimal
            } else {
                LocalStatus::FeasibleOnly
            }
        } else {
            LocalStatus::Infeasible
        };
        LocalSolveResult {
            objective: point.objective(net, objective),
            point,
            status,
            max_violation: viol,
            stationarity: gradcond,
            iterations,
            time: start.elapsed().as_secs_f64(),
            start: label.to_string(),
        }
    };
    for (label, p) in &starts {
        let out = interior_point(&model, pack(&model, p), opts);
        iterations += out.iterations;
        let res = finish(&out.x, out.converged, out.gradcond, iterations, label);
        if res.status == LocalStatus::LocalOptimal {
            return res;
        }
        log::debug!("subproblem start `{label}` ended {:?} (violation {:.2e})", res.status, res.max_violation);
        let better = match &fallback {
            None => true,
            Some(f) => rank(&res) < rank(f),
        };
        if better {
            fallback = Some(if out.diverged && !res.status.is_feasible() {
                LocalSolveResult { status: LocalStatus::Diverged, ..res }
            } else {
                res
            });
        }
    }

    // feasibility phase, then one more optimization from its point
    let mut feas_model = Model::new(net, assignment, objective, scale);
    feas_model.with_objective = false;
    let flat = pack(&model, &flat_start(net, assignment));
    let out = interior_point(&feas_model, flat, opts);
    iterations += out.iterations;
    let seed = out.x.clone();
    let feasible_seed = finish(&seed, false, f64::INFINITY, iterations, "restored");
    if feasible_seed.status.is_feasible() {
        let out = interior_point(&model, seed, opts);
        iterations += out.iterations;
        let res = finish(&out.x, out.converged, out.gradcond, iterations, "restored");
        if res.status.is_feasible() {
            return res;
        }
        return LocalSolveResult { iterations, time: start.elapsed().as_secs_f64(), ..feasible_seed };
    }
    let mut best = fallback.expect("at least one start");
    best.iterations = iterations;
    best.time = start.elapsed().as_secs_f64();
    best
}

fn rank(r: &LocalSolveResult) -> (u8, u64) {
    let s = match r.status {
        LocalStatus::LocalOptimal => 0,
        LocalStatus::FeasibleOnly => 1,
        LocalStatus::Infeasible => 2,
        LocalStatus::Diverged => 3,
    };
    (s, if r.status.is_feasible() { r.objective.to_bits() } else { r.max_violation.to_bits() })
}

/// Index and value of the smallest objective among feasible results.
pub fn upper_bound_select(results: &[LocalSolveResult]) -> Result<(usize, f64), AcopfError> {
    results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.status.is_feasible())
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective))
        .map(|(i, r)| (i, r.objective))
        .ok_or(AcopfError::NoFeasibleUpperBound(results.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_expansion_matches_complex_arithmetic() {
        let n = 2;
        let z = [1.02, 0.97, 0.03, -0.11];
        let v = [Complex64::new(z[0], z[2]), Complex64::new(z[1], z[3])];
        let a = Complex64::new(0.3, -1.7);
        let mut re = Quad::default();
        let mut im = Quad::default();
        add_product(&mut re, &mut im, a, 0, 1, n);
        let want = a * v[0] * v[1].conj();
        assert!((re.value(&z) - want.re).abs() < 1e-14);
        assert!((im.value(&z) - want.im).abs() < 1e-14);
    }

    #[test]
    fn quad_derivatives_match_finite_differences() {
        let n = 2;
        let mut re = Quad::default();
        let mut im = Quad::default();
        add_product(&mut re, &mut im, Complex64::new(0.4, 2.0), 0, 1, n);
        add_product(&mut re, &mut im, Complex64::new(-1.1, 0.5), 1, 1, n);
        let z = [1.0, 0.9, 0.1, -0.2];
        let mut g = vec![0.0; 4];
        re.grad_into(&z, &mut g, 1.0);
        for i in 0..4 {
            let mut zp = z;
            zp[i] += 1e-7;
            let fd = (re.value(&zp) - re.value(&z)) / 1e-7;
            assert!((fd - g[i]).abs() < 1e-5, "{i}: {fd} vs {}", g[i]);
        }
    }

    fn fake(obj: f64, status: LocalStatus) -> LocalSolveResult {
        LocalSolveResult {
            point: OperatingPoint { v: vec![], pg: vec![], qg: vec![], flows: vec![] },
            objective: obj,
            status,
            max_violation: 0.0,
            stationarity: 0.0,
            iterations: 0,
            time: 0.0,
            start: "warm".into(),
        }
    }

    #[test]
    fn selector_picks_smallest_feasible() {
        let rs = [fake(8079.1, LocalStatus::LocalOptimal), fake(8078.75, LocalStatus::LocalOptimal), fake(1.0, LocalStatus::Infeasible)];
        assert_eq!(upper_bound_select(&rs).unwrap(), (1, 8078.75));
        let bad = [fake(1.0, LocalStatus::Infeasible), fake(2.0, LocalStatus::Diverged)];
        assert_eq!(upper_bound_select(&bad), Err(AcopfError::NoFeasibleUpperBound(2)));
    }
}
