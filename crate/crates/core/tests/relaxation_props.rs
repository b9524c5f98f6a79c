mod common;

use num_complex::Complex64;
use proptest::prelude::*;

use orpd::acopf::{solve_subproblem, LocalStatus, OperatingPoint, SubproblemOptions};
use orpd::conic::expr::{LinExpr, Var};
use orpd::conic::program::{ConeProgram, Cone};
use orpd::network::Network;
use orpd::recovery::DiscreteAssignment;
use orpd::relaxations::{
    build_relaxation, feasibility_embed, tap_envelope_rows, ModelKind, Objective, RelaxationError, RelaxationKind,
};

const T_MIN: f64 = 0.9;
const T_MAX: f64 = 1.1;

fn handles() -> (LinExpr, LinExpr, LinExpr) {
    (LinExpr::var(Var(0)), LinExpr::var(Var(1)), LinExpr::var(Var(2)))
}

fn hull_at(x: f64, z1: f64, z2: f64) -> f64 {
    let (a, b, c) = handles();
    let rows = tap_envelope_rows(T_MIN, T_MAX, &a, &b, &c, ModelKind::Sdr2, false).unwrap();
    assert_eq!(rows.len(), 1);
    rows[0].0.eval(&[x, z1, z2])
}

fn rows_of(model: ModelKind) -> Vec<LinExpr> {
    let (a, b, c) = handles();
    tap_envelope_rows(T_MIN, T_MAX, &a, &b, &c, model, false).unwrap().into_iter().map(|(r, _)| r).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    /// On the tap curve the hull row equals `−(x/t²)(t − t̲)(t − t̄)`.
    #[test]
    fn hull_row_on_tap_curve(x in 0.81f64..1.21, t in 0.7f64..1.3) {
        let got = hull_at(x, x / t, x / (t * t));
        let want = -(x / (t * t)) * (t - T_MIN) * (t - T_MAX);
        prop_assert!((got - want).abs() < 1e-12);
        if (T_MIN..=T_MAX).contains(&t) {
            prop_assert!(got >= -1e-15);
        } else {
            prop_assert!(got < 0.0);
        }
    }

    /// Every lifted point of an admissible tap satisfies the rows of all four
    /// models.
    #[test]
    fn lifted_taps_satisfy_all_models(x in 0.81f64..1.21, t in T_MIN..=T_MAX) {
        let point = [x, x / t, x / (t * t)];
        for model in ModelKind::ALL {
            for r in rows_of(model) {
                prop_assert!(r.eval(&point) >= -1e-12, "{:?}", model);
            }
        }
    }

    /// The hull is concave in `(x, z1, z2)` along chords of the tap curve:
    /// convex combinations of lifted points stay feasible.
    #[test]
    fn hull_contains_chords(x1 in 0.81f64..1.21, x2 in 0.81f64..1.21, t1 in T_MIN..=T_MAX, t2 in T_MIN..=T_MAX, s in 0.0f64..1.0) {
        let p = |x: f64, t: f64| [x, x / t, x / (t * t)];
        let (a, b) = (p(x1, t1), p(x2, t2));
        let m: Vec<f64> = (0..3).map(|i| s * a[i] + (1.0 - s) * b[i]).collect();
        prop_assert!(hull_at(m[0], m[1], m[2]) >= -1e-12);
    }
}

#[test]
fn hull_examples() {
    assert!(hull_at(1.0, 1.0 / 0.95, 1.0 / (0.95 * 0.95)) > 0.0);
    assert!(hull_at(1.0, 1.0 / 0.8, 1.0 / 0.64) < 0.0);
    assert!(hull_at(1.0, 1.0 / T_MIN, 1.0 / (T_MIN * T_MIN)).abs() < 1e-12);
}

#[test]
fn one_sided_and_two_sided_bounds() {
    // SDR1: z1 ≥ x/t̄, z2 ≤ x/t̲²; TCR1 adds z1 ≤ x/t̲ and z2 ≥ x/t̄²
    assert_eq!(rows_of(ModelKind::Sdr1).len(), 2);
    assert_eq!(rows_of(ModelKind::Tcr1).len(), 4);
    let above = [1.0, 1.0 / 0.85, 1.0];
    assert!(rows_of(ModelKind::Sdr1).iter().all(|r| r.eval(&above) >= 0.0));
    assert!(rows_of(ModelKind::Tcr1).iter().any(|r| r.eval(&above) < 0.0));
}

#[test]
fn degenerate_tap_range_is_rejected() {
    let (a, b, c) = handles();
    let err = tap_envelope_rows(1.0, 1.0, &a, &b, &c, ModelKind::Sdr2, false).unwrap_err();
    assert!(matches!(err, RelaxationError::DegenerateTapRange { .. }));
}

/// Constraint content without labels, in a canonical order.
fn row_set(p: &ConeProgram) -> Vec<String> {
    let mut rows: Vec<String> = p
        .constraints
        .iter()
        .map(|c| format!("{:?} {:?}", c.cone, c.rows.iter().map(|r| r.clone().compact()).collect::<Vec<_>>()))
        .collect();
    rows.sort();
    rows
}

#[test]
fn without_taps_hull_models_coincide() {
    let net = common::network("case30");
    assert!(net.tap_branches.is_empty());
    for objective in [Objective::Cost, Objective::Loss] {
        for (a, b) in [(ModelKind::Sdr1, ModelKind::Sdr2), (ModelKind::Tcr1, ModelKind::Tcr2)] {
            let (pa, va) = build_relaxation(&net, RelaxationKind::new(a, objective)).unwrap();
            let (pb, _) = build_relaxation(&net, RelaxationKind::new(b, objective)).unwrap();
            assert_eq!(pa.num_vars(), pb.num_vars());
            assert_eq!(row_set(&pa), row_set(&pb), "{a:?} vs {b:?}");
            assert_eq!(va.xi.len(), 2);
        }
    }
}

#[test]
fn program_shapes() {
    let net = common::network("case14");
    let n = net.n_buses();
    for model in ModelKind::ALL {
        let (p, vars) = build_relaxation(&net, RelaxationKind::new(model, Objective::Cost)).unwrap();
        p.validate().unwrap();
        assert_eq!(vars.taps.len(), 3);
        assert_eq!(vars.xi.len(), 1);
        let full = p.constraints.iter().any(|c| c.cone == Cone::Psd(2 * n));
        assert_eq!(full, model.is_sdr(), "{model:?}");
        assert_eq!(vars.v.is_some(), !model.is_sdr());
        let hull = p.constraints.iter().filter(|c| c.label.starts_with("tap_hull")).count();
        assert_eq!(hull, if model.uses_hull() { 3 } else { 0 }, "{model:?}");
        // every branch pair is instantiated
        for b in &net.branches {
            assert!(vars.v_entry(b.from_bus, b.to_bus).is_some());
        }
    }
}

fn local_optimum(net: &Network, objective: Objective) -> (DiscreteAssignment, OperatingPoint) {
    let assignment = DiscreteAssignment::fixed(net, vec![true; net.shunts.len()], vec![1.0; net.tap_branches.len()]);
    let opts = SubproblemOptions { feas_tol: 1e-10, ..SubproblemOptions::default() };
    let r = solve_subproblem(net, &assignment, objective, None, &opts);
    assert_eq!(r.status, LocalStatus::LocalOptimal);
    (assignment, r.point)
}

#[test]
fn rank_one_points_are_contained() {
    for name in ["case14", "case30"] {
        let net = common::network(name);
        for objective in [Objective::Cost, Objective::Loss] {
            let (assignment, point) = local_optimum(&net, objective);
            let lifted = feasibility_embed(&net, &assignment, &point).unwrap();
            for model in ModelKind::ALL {
                for chordal in [false, true] {
                    let kind = RelaxationKind::new(model, objective).with_chordal(chordal && model.is_sdr());
                    let (p, vars) = build_relaxation(&net, kind).unwrap();
                    let x = vars.values_at(&net, p.num_vars(), &lifted);
                    let (worst, label) = p.max_violation(&x);
                    assert!(worst <= 1e-8, "{name} {objective:?} {model:?} chordal={chordal}: {worst} at {label:?}");
                    let obj = point.objective(&net, objective);
                    assert!((p.objective_value(&x) - obj).abs() <= 1e-8 * obj.abs().max(1.0));
                }
            }
        }
    }
}

#[test]
fn infeasible_seed_is_refused() {
    let net = common::network("case14");
    let (assignment, mut point) = local_optimum(&net, Objective::Cost);
    point.v[3] *= Complex64::new(1.2, 0.0);
    let point = OperatingPoint::new(&net, &assignment, point.v.clone(), point.pg.clone(), point.qg.clone());
    let err = feasibility_embed(&net, &assignment, &point).unwrap_err();
    assert!(matches!(err, RelaxationError::InfeasibleSeedPoint { violation, .. } if violation > 1e-6));
}
