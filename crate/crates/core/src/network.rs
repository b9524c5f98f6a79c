//! Per-unit electrical model of a transmission network with switchable shunts
//! and tap-changing transformers.

use std::collections::{HashMap, VecDeque};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case_io::{
    branch_col, bus_col, gen_col, gencost_col, supported_cost_row, validate_case, Diagnostic,
    DiagnosticKind, RawCase, Severity,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("case has validation errors: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidCase(Vec<Diagnostic>),
    #[error("network is not connected")]
    DisconnectedNetwork,
    #[error("no reference bus (type 3)")]
    NoReferenceBus,
    #[error("more than one reference bus: {0:?}")]
    MultipleReferenceBuses(Vec<i64>),
    #[error("branch {0} has zero series impedance")]
    ZeroImpedanceBranch(usize),
    #[error("branch {0} has a phase shift, which is not supported")]
    UnsupportedPhaseShift(usize),
    #[error("generator {0} uses an unsupported cost model")]
    UnsupportedCostModel(usize),
    #[error("tap grid is invalid: {0}")]
    InvalidTapGrid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// Dense internal index.
    pub id: usize,
    /// Bus number in the source case.
    pub external_id: i64,
    pub p_demand: f64,
    pub q_demand: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub is_reference: bool,
    /// Voltage magnitude stored in the case (used only for cold starts).
    pub vm_case: f64,
    /// Voltage angle stored in the case, radians.
    pub va_case: f64,
}

/// Switchable shunt block at a bus; `g_shunt + j b_shunt` is drawn when the
/// switch is on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuntElement {
    pub bus: usize,
    pub g_shunt: f64,
    pub b_shunt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: usize,
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Cost coefficients against per-unit power: `c2 p^2 + c1 p + c0` in $/h.
    pub cost_c2: f64,
    pub cost_c1: f64,
    pub cost_c0: f64,
    /// Dispatch stored in the case, per unit.
    pub pg_case: f64,
    pub qg_case: f64,
}

impl Generator {
    pub fn cost(&self, p: f64) -> f64 {
        self.cost_c2 * p * p + self.cost_c1 * p + self.cost_c0
    }
}

/// Uniform grid of admissible tap ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl Default for TapGrid {
    /// 0.9 to 1.1 p.u. in steps of 0.0125 (17 settings).
    fn default() -> Self {
        TapGrid::new(0.9, 1.1, 0.0125).expect("default grid is valid")
    }
}

impl TapGrid {
    pub fn new(t_min: f64, t_max: f64, step: f64) -> Result<Self, NetworkError> {
        if !(t_min > 0.0) || t_max < t_min {
            return Err(NetworkError::InvalidTapGrid(format!(
                "need 0 < t_min <= t_max, got [{t_min}, {t_max}]"
            )));
        }
        if t_max == t_min {
            return Ok(TapGrid { t_min, t_max, step: 0.0, values: vec![t_min] });
        }
        if !(step > 0.0) {
            return Err(NetworkError::InvalidTapGrid(format!("non-positive step {step}")));
        }
        let intervals = (t_max - t_min) / step;
        let count = intervals.round();
        if (intervals - count).abs() > 1e-9 {
            return Err(NetworkError::InvalidTapGrid(format!(
                "range [{t_min}, {t_max}] is not a whole number of {step} steps"
            )));
        }
        let values = (0..=count as usize).map(|i| t_min + i as f64 * step).collect();
        Ok(TapGrid { t_min, t_max, step, values })
    }

    pub fn is_degenerate(&self) -> bool {
        self.values.len() == 1
    }

    /// Nearest grid value; ties go to the larger value and out-of-range
    /// inputs clamp to the closest end.
    pub fn round(&self, t: f64) -> f64 {
        if self.is_degenerate() {
            return self.t_min;
        }
        let pos = (t - self.t_min) / self.step;
        // Half-step ties are decided in index space so that 1.00625 is a tie.
        let idx = (pos + 0.5 + 1e-9).floor();
        let idx = idx.clamp(0.0, (self.values.len() - 1) as f64) as usize;
        self.values[idx]
    }
}

/// Free-function form of [`TapGrid::round`].
pub fn tap_grid_round(grid: &TapGrid, t: f64) -> f64 {
    grid.round(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    /// Row of the branch in the source case.
    pub source_row: usize,
    /// Tap side.
    pub from_bus: usize,
    pub to_bus: usize,
    pub series_admittance: Complex64,
    pub shunt_susceptance_total: f64,
    pub thermal_limit: Option<f64>,
    pub tap: Option<TapGrid>,
    /// TAP column of the case (1.0 when the column is 0). Informational only:
    /// tap branches range over their grid.
    pub nominal_tap: f64,
}

impl Branch {
    /// Complex power injected into the branch at each end,
    /// `(s_from, s_to)`, for voltages `v_from`, `v_to` and tap ratio `t`.
    pub fn flows(&self, v_from: Complex64, v_to: Complex64, t: f64) -> (Complex64, Complex64) {
        let y = self.series_admittance;
        let y_sh = Complex64::new(0.0, self.shunt_susceptance_total / 2.0);
        let w = v_from / t;
        let s_from = w * ((y_sh + y) * w - y * v_to).conj();
        let s_to = v_to * (-y * w + (y_sh + y) * v_to).conj();
        (s_from, s_to)
    }

    pub fn is_tap(&self) -> bool {
        self.tap.is_some()
    }
}

/// Free-function form of [`Branch::flows`].
pub fn branch_flow(branch: &Branch, v_from: Complex64, v_to: Complex64, t: f64) -> (Complex64, Complex64) {
    branch.flows(v_from, v_to, t)
}

/// Which branches get a variable tap ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapRule {
    /// Every branch whose TAP column is nonzero.
    #[default]
    NonZero,
    /// Branches whose TAP column is neither 0 nor exactly 1.
    NonUnity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkOptions {
    pub tap_rule: TapRule,
    pub tap_grid: TapGrid,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        NetworkOptions { tap_rule: TapRule::NonZero, tap_grid: TapGrid::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    /// Set U, one element per bus.
    pub shunts: Vec<ShuntElement>,
    /// Set T as branch ids, ascending.
    pub tap_branches: Vec<usize>,
    pub gens_by_bus: Vec<Vec<usize>>,
    pub reference_bus: usize,
}

impl Network {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Shunt element at `bus`, if the bus is in U.
    pub fn shunt_at(&self, bus: usize) -> Option<&ShuntElement> {
        self.shunts.iter().find(|s| s.bus == bus)
    }

    /// Branch ids leaving (`from`) and entering (`to`) each bus.
    pub fn incidence(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let n = self.n_buses();
        let mut from = vec![Vec::new(); n];
        let mut to = vec![Vec::new(); n];
        for br in &self.branches {
            from[br.from_bus].push(br.id);
            to[br.to_bus].push(br.id);
        }
        (from, to)
    }

    pub fn total_demand(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.p_demand, q + b.q_demand))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }
}

/// Builds the per-unit model with default options.
pub fn build_network(raw: &RawCase) -> Result<Network, NetworkError> {
    build_network_with(raw, &NetworkOptions::default())
}

pub fn build_network_with(raw: &RawCase, opts: &NetworkOptions) -> Result<Network, NetworkError> {
    let diagnostics = validate_case(raw);
    if let Some(d) = diagnostics.iter().find(|d| matches!(d.kind, DiagnosticKind::PhaseShift { .. })) {
        if let DiagnosticKind::PhaseShift { row, .. } = d.kind {
            return Err(NetworkError::UnsupportedPhaseShift(row));
        }
    }
    if let Some(d) = diagnostics.iter().find(|d| matches!(d.kind, DiagnosticKind::UnsupportedCostModel { .. })) {
        if let DiagnosticKind::UnsupportedCostModel { row, .. } = d.kind {
            return Err(NetworkError::UnsupportedCostModel(row));
        }
    }
    let errors: Vec<Diagnostic> =
        diagnostics.into_iter().filter(|d| d.severity == Severity::Error).collect();
    if !errors.is_empty() {
        return Err(NetworkError::InvalidCase(errors));
    }

    let base = raw.base_mva;
    let mut index_of: HashMap<i64, usize> = HashMap::new();
    let mut buses = Vec::new();
    let mut shunts = Vec::new();
    let mut refs = Vec::new();
    for row in raw.bus_rows.iter().filter(|r| r[bus_col::TYPE] != 4.0) {
        let id = buses.len();
        let external_id = row[bus_col::BUS_I] as i64;
        index_of.insert(external_id, id);
        let is_reference = row[bus_col::TYPE] == 3.0;
        if is_reference {
            refs.push(external_id);
        }
        buses.push(Bus {
            id,
            external_id,
            p_demand: row[bus_col::PD] / base,
            q_demand: row[bus_col::QD] / base,
            v_min: row[bus_col::VMIN],
            v_max: row[bus_col::VMAX],
            is_reference,
            vm_case: row[bus_col::VM],
            va_case: row[bus_col::VA].to_radians(),
        });
        let (gs, bs) = (row[bus_col::GS], row[bus_col::BS]);
        if gs != 0.0 || bs != 0.0 {
            shunts.push(ShuntElement { bus: id, g_shunt: gs / base, b_shunt: bs / base });
        }
    }
    let reference_bus = match refs.as_slice() {
        [] => return Err(NetworkError::NoReferenceBus),
        [r] => index_of[r],
        _ => return Err(NetworkError::MultipleReferenceBuses(refs)),
    };

    let mut branches = Vec::new();
    let mut tap_branches = Vec::new();
    for (row_idx, row) in raw.branch_rows.iter().enumerate() {
        if row[branch_col::BR_STATUS] == 0.0 {
            continue;
        }
        let (Some(&from_bus), Some(&to_bus)) = (
            index_of.get(&(row[branch_col::F_BUS] as i64)),
            index_of.get(&(row[branch_col::T_BUS] as i64)),
        ) else {
            // Touches an isolated bus.
            continue;
        };
        let id = branches.len();
        let z = Complex64::new(row[branch_col::BR_R], row[branch_col::BR_X]);
        if z.norm() == 0.0 {
            return Err(NetworkError::ZeroImpedanceBranch(id));
        }
        let rate = row[branch_col::RATE_A];
        let tap_col = row[branch_col::TAP];
        let is_tap = match opts.tap_rule {
            TapRule::NonZero => tap_col != 0.0,
            TapRule::NonUnity => tap_col != 0.0 && tap_col != 1.0,
        };
        if is_tap {
            tap_branches.push(id);
        }
        branches.push(Branch {
            id,
            source_row: row_idx,
            from_bus,
            to_bus,
            series_admittance: z.inv(),
            shunt_susceptance_total: row[branch_col::BR_B],
            thermal_limit: (rate > 0.0).then(|| rate / base),
            tap: is_tap.then(|| opts.tap_grid.clone()),
            nominal_tap: if tap_col == 0.0 { 1.0 } else { tap_col },
        });
    }

    let mut generators = Vec::new();
    let mut gens_by_bus = vec![Vec::new(); buses.len()];
    for (row_idx, row) in raw.gen_rows.iter().enumerate() {
        if row[gen_col::STATUS] <= 0.0 {
            continue;
        }
        let Some(&bus) = index_of.get(&(row[gen_col::GEN_BUS] as i64)) else {
            continue;
        };
        let (c2, c1, c0) = match &raw.gencost_rows {
            Some(costs) => {
                let c = &costs[row_idx];
                if !supported_cost_row(c) {
                    return Err(NetworkError::UnsupportedCostModel(row_idx));
                }
                let ncost = c[gencost_col::NCOST] as usize;
                let coeffs = &c[gencost_col::COST..gencost_col::COST + ncost];
                let coef = |power: usize| {
                    if power < ncost {
                        coeffs[ncost - 1 - power]
                    } else {
                        0.0
                    }
                };
                (coef(2), coef(1), coef(0))
            }
            None => (0.0, 0.0, 0.0),
        };
        let id = generators.len();
        gens_by_bus[bus].push(id);
        generators.push(Generator {
            id,
            bus,
            p_min: row[gen_col::PMIN] / base,
            p_max: row[gen_col::PMAX] / base,
            q_min: row[gen_col::QMIN] / base,
            q_max: row[gen_col::QMAX] / base,
            cost_c2: c2 * base * base,
            cost_c1: c1 * base,
            cost_c0: c0,
            pg_case: row[gen_col::PG] / base,
            qg_case: row[gen_col::QG] / base,
        });
    }

    let net = Network {
        base_mva: base,
        buses,
        branches,
        generators,
        shunts,
        tap_branches,
        gens_by_bus,
        reference_bus,
    };
    if !is_connected(&net) {
        return Err(NetworkError::DisconnectedNetwork);
    }
    Ok(net)
}

fn is_connected(net: &Network) -> bool {
    let n = net.n_buses();
    if n == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); n];
    for br in &net.branches {
        adj[br.from_bus].push(br.to_bus);
        adj[br.to_bus].push(br.from_bus);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(k) = queue.pop_front() {
        for &m in &adj[k] {
            if !seen[m] {
                seen[m] = true;
                count += 1;
                queue.push_back(m);
            }
        }
    }
    count == n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_io::parse_case;
    use approx::assert_relative_eq;

    fn three_bus() -> RawCase {
        parse_case(
            "baseMVA = 100;
bus = [1 3 0 0 0 0 1 1 0 0 1 1.1 0.9; 2 1 50 20 0 10 1 1 0 0 1 1.1 0.9; 3 1 30 10 0 0 1 1 0 0 1 1.1 0.9];
gen = [1 0 0 100 -100 1 100 1 200 0];
branch = [1 2 0.01 0.1 0.02 150 0 0 0 0 1 -360 360; 2 3 0.01 0.1 0 0 0 0 0.98 0 1 -360 360];
gencost = [2 0 0 3 0.01 20 5];",
        )
        .unwrap()
    }

    #[test]
    fn default_grid_has_17_values_including_unity() {
        let g = TapGrid::default();
        assert_eq!(g.values.len(), 17);
        assert_relative_eq!(g.values[8], 1.0, epsilon = 1e-15);
        assert_relative_eq!(*g.values.last().unwrap(), 1.1, epsilon = 1e-12);
    }

    #[test]
    fn tap_rounding_examples() {
        let g = TapGrid::default();
        assert_eq!(g.round(1.006), g.values[8]);
        assert_eq!(g.round(1.00625), g.values[9]);
        assert_eq!(g.round(0.85), 0.9);
        assert_eq!(g.round(1.3), g.values[16]);
        assert_eq!(g.round(0.90624), 0.9);
        assert_eq!(g.round(0.90626), g.values[1]);
    }

    #[test]
    fn tap_rounding_is_idempotent_on_grid() {
        let g = TapGrid::default();
        for &v in &g.values {
            assert_eq!(g.round(v), v);
        }
    }

    #[test]
    fn per_unit_conversion() {
        let net = build_network(&three_bus()).unwrap();
        assert_eq!(net.n_buses(), 3);
        assert_relative_eq!(net.buses[1].p_demand, 0.5);
        assert_eq!(net.shunts.len(), 1);
        assert_relative_eq!(net.shunts[0].b_shunt, 0.1);
        assert_eq!(net.tap_branches, vec![1]);
        assert_eq!(net.branches[0].thermal_limit, Some(1.5));
        assert_eq!(net.branches[1].thermal_limit, None);
        let g = &net.generators[0];
        assert_relative_eq!(g.cost_c2, 100.0);
        assert_relative_eq!(g.cost_c1, 2000.0);
        assert_relative_eq!(g.cost_c0, 5.0);
        // cost(p in p.u.) equals the MATPOWER cost of P in MW
        assert_relative_eq!(g.cost(0.5), 0.01 * 50.0 * 50.0 + 20.0 * 50.0 + 5.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_impedance_branch_is_rejected() {
        let mut raw = three_bus();
        raw.branch_rows[0][branch_col::BR_R] = 0.0;
        raw.branch_rows[0][branch_col::BR_X] = 0.0;
        assert_eq!(build_network(&raw).unwrap_err(), NetworkError::ZeroImpedanceBranch(0));
    }

    #[test]
    fn reference_bus_errors() {
        let mut raw = three_bus();
        raw.bus_rows[0][bus_col::TYPE] = 1.0;
        assert_eq!(build_network(&raw).unwrap_err(), NetworkError::NoReferenceBus);
        raw.bus_rows[0][bus_col::TYPE] = 3.0;
        raw.bus_rows[2][bus_col::TYPE] = 3.0;
        assert!(matches!(build_network(&raw).unwrap_err(), NetworkError::MultipleReferenceBuses(_)));
    }

    #[test]
    fn disconnected_and_shifted_cases_fail() {
        let mut raw = three_bus();
        raw.branch_rows[1][branch_col::BR_STATUS] = 0.0;
        assert_eq!(build_network(&raw).unwrap_err(), NetworkError::DisconnectedNetwork);
        let mut raw = three_bus();
        raw.branch_rows[1][branch_col::SHIFT] = 3.0;
        assert_eq!(build_network(&raw).unwrap_err(), NetworkError::UnsupportedPhaseShift(1));
    }

    #[test]
    fn out_of_service_generator_is_dropped() {
        let mut raw = three_bus();
        raw.gen_rows.push(raw.gen_rows[0].clone());
        raw.gen_rows[1][gen_col::STATUS] = 0.0;
        let cost = raw.gencost_rows.as_ref().unwrap()[0].clone();
        raw.gencost_rows.as_mut().unwrap().push(cost);
        let net = build_network(&raw).unwrap();
        assert_eq!(net.generators.len(), 1);
    }

    #[test]
    fn flat_voltage_flows() {
        let net = build_network(&three_bus()).unwrap();
        let one = Complex64::new(1.0, 0.0);
        let mut br = net.branches[1].clone();
        let (sf, st) = br.flows(one, one, 1.0);
        assert!(sf.norm() < 1e-15 && st.norm() < 1e-15);
        br.shunt_susceptance_total = 0.2;
        let (sf, st) = br.flows(one, one, 1.0);
        assert_relative_eq!(sf.im, -0.1, epsilon = 1e-15);
        assert_relative_eq!(st.im, -0.1, epsilon = 1e-15);
        assert!(sf.re.abs() < 1e-15 && st.re.abs() < 1e-15);
    }

    #[test]
    fn build_is_deterministic() {
        let raw = three_bus();
        assert_eq!(build_network(&raw).unwrap(), build_network(&raw).unwrap());
    }
}
