use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use risjrc_sdp::{solve, ConicProblem, Constraint, Settings, Status, SymMatrix};

#[test]
fn small_lp() {
    // min -x0 - 2 x1  s.t. x0 + x1 + s = 4, x0 + 3 x1 + t = 6
    let mut p = ConicProblem::new();
    let v = p.add_lp_vars(4);
    p.set_objective_lp(v, -1.0);
    p.set_objective_lp(v + 1, -2.0);
    p.add_constraint(Constraint::new(4.0).lp(v, 1.0).lp(v + 1, 1.0).lp(v + 2, 1.0));
    p.add_constraint(Constraint::new(6.0).lp(v, 1.0).lp(v + 1, 3.0).lp(v + 3, 1.0));
    let sol = solve(&p, &Settings::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    // vertex (3, 1): objective -5
    assert!((sol.primal_objective + 5.0).abs() < 1e-8);
    assert!((sol.x_lp[0] - 3.0).abs() < 1e-6);
    assert!((sol.x_lp[1] - 1.0).abs() < 1e-6);
}

#[test]
fn minimum_eigenvalue() {
    let c = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
    let mut p = ConicProblem::new();
    let b = p.add_psd_block(3);
    p.set_objective_psd(b, SymMatrix::Dense(c.clone()));
    p.add_constraint(Constraint::new(1.0).dense(b, DMatrix::identity(3, 3)));
    let sol = solve(&p, &Settings::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    let expected = 2.0 - 2f64.sqrt();
    assert!((sol.primal_objective - expected).abs() < 1e-8, "{}", sol.primal_objective);
}

#[test]
fn schur_epigraph_reciprocal() {
    // min u  s.t. [[a, 1], [1, u]] ⪰ 0  =>  u = 1 / a
    let a = 4.0;
    let mut p = ConicProblem::new();
    let b = p.add_psd_block(2);
    p.set_objective_psd(b, SymMatrix::Sparse(vec![(1, 1, 1.0)]));
    p.add_constraint(Constraint::new(a).pick(b, 0, 0, 1.0));
    p.add_constraint(Constraint::new(1.0).pick(b, 0, 1, 1.0));
    let sol = solve(&p, &Settings::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.primal_objective - 0.25).abs() < 1e-9);
    assert!((sol.x_psd[0][(1, 1)] - 0.25).abs() < 1e-8);
}

#[test]
fn detects_primal_infeasibility() {
    // x0 + x1 = -1 with x >= 0
    let mut p = ConicProblem::new();
    let v = p.add_lp_vars(2);
    p.set_objective_lp(v, 1.0);
    p.add_constraint(Constraint::new(-1.0).lp(v, 1.0).lp(v + 1, 1.0));
    let sol = solve(&p, &Settings::default()).unwrap();
    assert!(sol.status.is_infeasible(), "{:?}", sol.status);
}

#[test]
fn detects_unboundedness() {
    // min -x0 s.t. x0 - x1 = 0
    let mut p = ConicProblem::new();
    let v = p.add_lp_vars(2);
    p.set_objective_lp(v, -1.0);
    p.add_constraint(Constraint::new(0.0).lp(v, 1.0).lp(v + 1, -1.0));
    let sol = solve(&p, &Settings::default()).unwrap();
    assert_eq!(sol.status, Status::DualInfeasible);
}

#[test]
fn rejects_malformed_data() {
    let mut p = ConicProblem::new();
    let b = p.add_psd_block(2);
    p.add_constraint(Constraint::new(1.0).dense(b, DMatrix::identity(3, 3)));
    assert!(solve(&p, &Settings::default()).is_err());
}

#[test]
fn mixed_blocks_maxcut_relaxation() {
    // Max-cut SDP relaxation of a 4-cycle: max <L/4, X>, diag X = 1.
    // The 4-cycle is bipartite, so the relaxation is tight at 4.
    let l = DMatrix::from_row_slice(
        4,
        4,
        &[2., -1., 0., -1., -1., 2., -1., 0., 0., -1., 2., -1., -1., 0., -1., 2.],
    );
    let mut p = ConicProblem::new();
    let b = p.add_psd_block(4);
    p.set_objective_psd(b, SymMatrix::Dense(-l / 4.0));
    for i in 0..4 {
        p.add_constraint(Constraint::new(1.0).entry(b, i, i, 1.0));
    }
    let sol = solve(&p, &Settings::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.primal_objective + 4.0).abs() < 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lambda_min_matches_eigendecomposition(
        entries in proptest::collection::vec(-1.0f64..1.0, 25)
    ) {
        let a = DMatrix::from_vec(5, 5, entries);
        let c = &a + a.transpose();
        let lmin = SymmetricEigen::new(c.clone()).eigenvalues.min();
        let mut p = ConicProblem::new();
        let b = p.add_psd_block(5);
        p.set_objective_psd(b, SymMatrix::Dense(c));
        p.add_constraint(Constraint::new(1.0).dense(b, DMatrix::identity(5, 5)));
        let sol = solve(&p, &Settings::default()).unwrap();
        prop_assert!(sol.status.is_solved());
        prop_assert!((sol.primal_objective - lmin).abs() < 1e-7);
        prop_assert!((sol.dual_objective - lmin).abs() < 1e-7);
    }
}
