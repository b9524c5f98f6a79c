mod common;

use num_complex::Complex64;
use proptest::prelude::*;

use orpd::case_io::validate_case;
use orpd::network::{branch_flow, build_network, Branch, TapGrid};

fn branch(y: Complex64, b_total: f64) -> Branch {
    Branch {
        id: 0,
        source_row: 0,
        from_bus: 0,
        to_bus: 1,
        series_admittance: y,
        shunt_susceptance_total: b_total,
        thermal_limit: None,
        tap: Some(TapGrid::default()),
        nominal_tap: 1.0,
    }
}

/// Pi model written out in currents: `i_f = (y + jb/2)/t² v_f − y/t v_t`,
/// `i_t = −y/t v_f + (y + jb/2) v_t`.
fn pi_model(y: Complex64, b_total: f64, vf: Complex64, vt: Complex64, t: f64) -> (Complex64, Complex64) {
    let ysh = Complex64::new(0.0, b_total / 2.0);
    let i_f = (y + ysh) / (t * t) * vf - y / t * vt;
    let i_t = -y / t * vf + (y + ysh) * vt;
    (vf * i_f.conj(), vt * i_t.conj())
}

#[test]
fn case_dimensions() {
    // (name, |N|, |L|, |U|, |T|) under the nonzero-TAP rule
    let expected = [
        ("case14", 14, 20, 1, 3),
        ("case24_ieee_rts", 24, 38, 1, 5),
        ("case30", 30, 41, 2, 0),
        ("case_ieee30", 30, 41, 2, 7),
        ("case39", 39, 46, 0, 12),
        ("case57", 57, 80, 3, 17),
        ("case118", 118, 186, 14, 11),
        ("case300", 300, 411, 29, 129),
    ];
    for (name, n, l, u, t) in expected {
        let net = common::network(name);
        let got = (net.n_buses(), net.branches.len(), net.shunts.len(), net.tap_branches.len());
        assert_eq!(got, (n, l, u, t), "{name}");
        assert!(net.tap_branches.iter().all(|&b| net.branches[b].tap.is_some()), "{name}");
        assert_eq!(net.buses.iter().filter(|b| b.is_reference).count(), 1, "{name}");
    }
}

#[test]
fn case14_validates_clean() {
    assert!(validate_case(&common::raw("case14")).is_empty());
}

#[test]
fn phase_shifting_case_is_rejected() {
    assert!(build_network(&common::raw("case89pegase")).is_err());
}

#[test]
fn branch_flow_matches_pi_model() {
    let y = Complex64::new(1.0, -2.0);
    let vf = Complex64::new(1.02, 0.0);
    let vt = Complex64::from_polar(1.0, -0.05);
    let t = 1.0125;
    let b = branch(y, 0.04);
    let (sf, st) = branch_flow(&b, vf, vt, t);
    let (ef, et) = pi_model(y, 0.04, vf, vt, t);
    assert!((sf - ef).norm() < 1e-12, "{sf} vs {ef}");
    assert!((st - et).norm() < 1e-12, "{st} vs {et}");
}

#[test]
fn line_charging_at_equal_voltages() {
    // no series current: each end sees only half the charging susceptance
    let b = branch(Complex64::new(5.0, -15.0), 0.3);
    let v = Complex64::new(1.0, 0.0);
    let (sf, st) = b.flows(v, v, 1.0);
    assert!((sf - Complex64::new(0.0, -0.15)).norm() < 1e-12);
    assert!((st - Complex64::new(0.0, -0.15)).norm() < 1e-12);
}

proptest! {
    #[test]
    fn flows_match_pi_model(
        r in 0.001f64..0.2, x in 0.01f64..0.5, bc in 0.0f64..0.5,
        mf in 0.9f64..1.1, mt in 0.9f64..1.1, af in -0.5f64..0.5, at in -0.5f64..0.5,
        t in 0.9f64..1.1,
    ) {
        let y = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
        let vf = Complex64::from_polar(mf, af);
        let vt = Complex64::from_polar(mt, at);
        let (sf, st) = branch(y, bc).flows(vf, vt, t);
        let (ef, et) = pi_model(y, bc, vf, vt, t);
        prop_assert!((sf - ef).norm() < 1e-10);
        prop_assert!((st - et).norm() < 1e-10);
    }

    #[test]
    fn active_loss_is_resistive_heating(
        r in 0.001f64..0.2, x in 0.01f64..0.5, bc in 0.0f64..0.5,
        mf in 0.9f64..1.1, mt in 0.9f64..1.1, af in -0.5f64..0.5, at in -0.5f64..0.5,
        t in 0.9f64..1.1,
    ) {
        let y = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
        let vf = Complex64::from_polar(mf, af);
        let vt = Complex64::from_polar(mt, at);
        let (sf, st) = branch(y, bc).flows(vf, vt, t);
        let heat = y.re * (vf / t - vt).norm_sqr();
        prop_assert!(heat >= 0.0);
        prop_assert!((sf.re + st.re - heat).abs() < 1e-10);
    }
}
