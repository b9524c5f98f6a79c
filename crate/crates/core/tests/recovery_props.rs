mod common;

use std::collections::BTreeMap;

use num_complex::Complex64;
use proptest::prelude::*;

use orpd::conic::solver::SolveStatus;
use orpd::network::Network;
use orpd::recovery::{optimality_gap, recover_continuous, round_assignment, RecoveryError, RelaxationSolution, TapValues};
use orpd::relaxations::{ModelKind, Objective, RelaxationKind};

/// Relaxation values of the rank-one lift of `v` with shunt switches `u` and
/// ratios `t`, all scaled by `scale`.
fn lifted_solution(net: &Network, v: &[Complex64], u: &[bool], t: &[f64], scale: f64) -> RelaxationSolution {
    let taps = net
        .tap_branches
        .iter()
        .zip(t)
        .map(|(&l, &ratio)| {
            let b = &net.branches[l];
            let w = v[b.from_bus] / ratio;
            TapValues {
                branch: l,
                w_ll: scale * w.norm_sqr(),
                w_kl: scale * (v[b.from_bus] * w.conj()).re,
                w_lm: scale * w * v[b.to_bus].conj(),
            }
        })
        .collect();
    let mut v_off = BTreeMap::new();
    for b in &net.branches {
        let (i, j) = (b.from_bus.max(b.to_bus), b.from_bus.min(b.to_bus));
        v_off.insert((i, j), scale * v[i] * v[j].conj());
    }
    RelaxationSolution {
        kind: RelaxationKind::new(ModelKind::Sdr2, Objective::Cost),
        bound: 0.0,
        status: SolveStatus::Optimal,
        v_diag: v.iter().map(|x| scale * x.norm_sqr()).collect(),
        v_off,
        taps,
        xi: net.shunts.iter().zip(u).map(|(s, &on)| if on { scale * v[s.bus].norm_sqr() } else { 0.0 }).collect(),
        pg: vec![0.0; net.generators.len()],
        qg: vec![0.0; net.generators.len()],
        v: None,
        solve_time: 0.0,
        iterations: 0,
    }
}

fn voltages(net: &Network, seed: &[f64]) -> Vec<Complex64> {
    (0..net.n_buses())
        .map(|k| {
            let s = seed[k % seed.len()];
            Complex64::from_polar(0.95 + 0.1 * s, 0.3 * (s - 0.5))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn integral_lifts_recover_exactly(
        seed in prop::collection::vec(0.0f64..1.0, 1..20),
        u in prop::collection::vec(any::<bool>(), 14),
        steps in prop::collection::vec(0usize..17, 17),
    ) {
        for name in ["case14", "case118"] {
            let net = common::network(name);
            let grid = orpd::network::TapGrid::default();
            let u: Vec<bool> = (0..net.shunts.len()).map(|i| u[i % u.len()]).collect();
            let t: Vec<f64> = (0..net.tap_branches.len()).map(|i| grid.values[steps[i % steps.len()]]).collect();
            let sol = lifted_solution(&net, &voltages(&net, &seed), &u, &t, 1.0);
            let cont = recover_continuous(&net, &sol).unwrap();
            for (a, &b) in cont.u_hat.iter().zip(&u) {
                let want = if b { 1.0 } else { 0.0 };
                prop_assert!((a - want).abs() < 1e-12);
            }
            for (a, b) in cont.t_hat.iter().zip(&t) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let rounded = round_assignment(&cont);
            prop_assert_eq!(&rounded.u_round, &u);
            prop_assert_eq!(&rounded.t_round, &t);
        }
    }

    #[test]
    fn recovery_is_scale_invariant(
        seed in prop::collection::vec(0.0f64..1.0, 1..20),
        ts in prop::collection::vec(0.9f64..1.1, 3),
        scale in 0.1f64..10.0,
    ) {
        let net = common::network("case14");
        let v = voltages(&net, &seed);
        let a = recover_continuous(&net, &lifted_solution(&net, &v, &[true], &ts, 1.0)).unwrap();
        let b = recover_continuous(&net, &lifted_solution(&net, &v, &[true], &ts, scale)).unwrap();
        for (x, y) in a.u_hat.iter().zip(&b.u_hat).chain(a.t_hat.iter().zip(&b.t_hat)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_is_nonnegative_below_upper(upper in 1.0f64..1e6, frac in 0.0f64..1.0) {
        let gap = optimality_gap(frac * upper, upper).unwrap();
        prop_assert!((0.0..=100.0).contains(&gap));
        prop_assert!((gap - 100.0 * (1.0 - frac)).abs() < 1e-9);
    }
}

#[test]
fn out_of_range_ratio_is_reported() {
    let net = common::network("case14");
    let v = vec![Complex64::new(1.0, 0.0); net.n_buses()];
    let sol = lifted_solution(&net, &v, &[true], &[1.0, 1.0, 1.3], 1.0);
    assert!(matches!(recover_continuous(&net, &sol), Err(RecoveryError::OutOfRange { .. })));
    let mut sol = lifted_solution(&net, &v, &[true], &[1.0, 1.0, 1.0], 1.0);
    sol.v_diag[net.shunts[0].bus] = 0.0;
    assert!(matches!(recover_continuous(&net, &sol), Err(RecoveryError::NonpositiveVkk(_))));
}

#[test]
fn gap_requires_positive_upper() {
    assert!(optimality_gap(1.0, 0.0).is_err());
    assert!((optimality_gap(8078.62, 8078.75).unwrap() - 0.0016).abs() < 1e-4);
}
