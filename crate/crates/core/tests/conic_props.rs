use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use proptest::prelude::*;

use orpd::conic::expr::{ComplexExpr, LinExpr, Var};
use orpd::conic::hermitian::{embed_hermitian_psd, HermitianBlock};
use orpd::conic::program::{smat, svec, Cone, ConeProgram};
use orpd::conic::solver::{solve, verify, SolveStatus, SolverOptions};

fn hermitian(side: usize, entries: &[(f64, f64)]) -> DMatrix<Complex64> {
    let mut m = DMatrix::zeros(side, side);
    let mut it = entries.iter();
    for i in 0..side {
        for j in 0..=i {
            let &(re, im) = it.next().unwrap();
            if i == j {
                m[(i, i)] = Complex64::new(re, 0.0);
            } else {
                m[(i, j)] = Complex64::new(re, im);
                m[(j, i)] = Complex64::new(re, -im);
            }
        }
    }
    m
}

fn block_of(m: &DMatrix<Complex64>) -> HermitianBlock {
    let n = m.nrows();
    let mut b = HermitianBlock::new(n);
    for i in 0..n {
        for j in 0..=i {
            b.set(i, j, ComplexExpr::constant(m[(i, j)])).unwrap();
        }
    }
    b
}

fn min_eig_complex(m: &DMatrix<Complex64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn entries(max_side: usize) -> impl Strategy<Value = (usize, Vec<(f64, f64)>)> {
    (1..=max_side).prop_flat_map(|n| (Just(n), prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * (n + 1) / 2)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn embedding_spectrum_doubles_hermitian_spectrum((n, e) in entries(6)) {
        let m = hermitian(n, &e);
        let c = embed_hermitian_psd(&block_of(&m), "m").unwrap();
        prop_assert_eq!(c.cone, Cone::Psd(2 * n));
        let real = c.matrix_at(&[]).unwrap();
        let mut got: Vec<f64> = SymmetricEigen::new(real).eigenvalues.iter().copied().collect();
        let mut want: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().flat_map(|&l| [l, l]).collect();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-10, "{} vs {}", g, w);
        }
    }

    #[test]
    fn svec_round_trips_and_preserves_inner_products(
        (n, a) in (1usize..=6).prop_flat_map(|n| (Just(n), prop::collection::vec(-1.0f64..1.0, n * n))),
        b in prop::collection::vec(-1.0f64..1.0, 36),
    ) {
        let a = DMatrix::from_row_slice(n, n, &a);
        let a = &a + a.transpose();
        let b = DMatrix::from_row_slice(n, n, &b[..n * n]);
        let b = &b + b.transpose();
        let (sa, sb) = (svec(&a), svec(&b));
        prop_assert_eq!(sa.len(), n * (n + 1) / 2);
        prop_assert!((smat(&sa, n) - &a).abs().max() < 1e-14);
        let frob = a.component_mul(&b).sum();
        let packed: f64 = sa.iter().zip(&sb).map(|(x, y)| x * y).sum();
        prop_assert!((frob - packed).abs() < 1e-12);
    }
}

/// `min Re tr(C X)` over Hermitian `X ⪰ 0` with `tr X = 1` is `λ_min(C)`.
#[test]
fn hermitian_sdp_attains_smallest_eigenvalue() {
    let c = hermitian(3, &[(2.0, 0.0), (0.5, 0.3), (1.0, 0.0), (-0.2, 0.4), (0.1, -0.6), (1.5, 0.0)]);
    let mut p = ConeProgram::new();
    let mut x = HermitianBlock::new(3);
    let mut objective = LinExpr::zero();
    let mut trace = LinExpr::constant(-1.0);
    for i in 0..3 {
        let d = p.new_var(format!("x{i}{i}"));
        x.set_real(i, i, LinExpr::var(d)).unwrap();
        objective.add_term(d, c[(i, i)].re);
        trace.add_term(d, 1.0);
        for j in 0..i {
            let (re, im): (Var, Var) = (p.new_var(format!("re{i}{j}")), p.new_var(format!("im{i}{j}")));
            x.set(i, j, ComplexExpr::new(LinExpr::var(re), LinExpr::var(im))).unwrap();
            // C_ij X_ji + C_ji X_ij = 2 Re(C_ij conj(X_ij))
            objective.add_term(re, 2.0 * c[(i, j)].re);
            objective.add_term(im, 2.0 * c[(i, j)].im);
        }
    }
    p.objective = objective;
    p.add_eq(trace, "trace");
    p.add_constraint(embed_hermitian_psd(&x, "x").unwrap()).unwrap();
    let r = solve(&p, &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    let want = min_eig_complex(&c);
    assert!((r.objective.unwrap() - want).abs() < 1e-6, "{:?} vs {want}", r.objective);
    let res = verify(&p, r.primal.as_ref().unwrap(), r.dual.as_ref().unwrap());
    assert!(res.max() <= (SolverOptions::default().tolerance).sqrt());
}

#[test]
fn second_order_cone_projection() {
    // min t  s.t. ‖(x − 3, y + 4)‖ ≤ t, x, y free
    let mut p = ConeProgram::new();
    let (t, x, y) = (p.new_var("t"), p.new_var("x"), p.new_var("y"));
    p.objective = LinExpr::var(t);
    p.add(
        Cone::SecondOrder(3),
        vec![LinExpr::var(t), LinExpr::var(x) - LinExpr::constant(3.0), LinExpr::var(y) + LinExpr::constant(4.0)],
        "soc",
    )
    .unwrap();
    p.add_nonneg(LinExpr::constant(1.0) - LinExpr::var(x), "x<=1");
    p.add_nonneg(LinExpr::var(y), "y>=0");
    let r = solve(&p, &SolverOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    // nearest admissible point is (1, 0)
    assert!((r.objective.unwrap() - 20f64.sqrt()).abs() < 1e-6);
}

#[test]
fn infeasible_and_unbounded_are_reported() {
    let mut p = ConeProgram::new();
    let x = p.new_var("x");
    p.add_nonneg(LinExpr::var(x) - LinExpr::constant(1.0), "x>=1");
    p.add_nonneg(-LinExpr::var(x), "x<=0");
    assert_eq!(solve(&p, &SolverOptions::default()).unwrap().status, SolveStatus::Infeasible);

    let mut q = ConeProgram::new();
    let y = q.new_var("y");
    q.objective = LinExpr::var(y);
    q.add_nonneg(LinExpr::constant(1.0) - LinExpr::var(y), "y<=1");
    assert_eq!(solve(&q, &SolverOptions::default()).unwrap().status, SolveStatus::Unbounded);
}
