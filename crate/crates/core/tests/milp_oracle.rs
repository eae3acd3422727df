mod common;

use lazymtl::milp::{Budget, Model, Relation, Status};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn branch_and_bound_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..60 {
        let mut m = common::random_milp(&mut rng, 6, 8);
        if let Err(e) = common::check_against_enumeration(&mut m, 1e-7) {
            panic!("model {i}: {e}\n{}", m.to_lp_string());
        }
    }
}

#[test]
fn lp_matches_reference_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..200 {
        let mut m = common::random_milp(&mut rng, 4, 12);
        let bounds: Vec<_> = m.vars().iter().map(|v| (v.lower, v.upper)).collect();
        let expected = common::reference_lp(&m, &bounds);
        let sol = m.solve_lp(&Budget::unlimited()).unwrap();
        match expected {
            None => assert_eq!(sol.status, Status::Infeasible, "model {i}"),
            Some(e) => {
                assert_eq!(sol.status, Status::Optimal, "model {i}");
                assert!(
                    (sol.objective.unwrap() - e).abs() < 1e-7 * (1.0 + e.abs()),
                    "model {i}"
                );
            }
        }
    }
}

#[test]
fn repeated_solves_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = common::random_milp(&mut rng, 8, 10);
    let a = m.clone().solve_milp(&Budget::unlimited()).unwrap();
    let b = m.clone().solve_milp(&Budget::unlimited()).unwrap();
    assert_eq!(a.values, b.values);
    assert_eq!(a.stats, b.stats);
}

#[test]
fn activating_rows_never_improves_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let mut m = common::random_milp(&mut rng, 5, 6);
        let rows: Vec<_> = (0..m.num_rows()).map(lazymtl::milp::RowId).collect();
        for &r in &rows[rows.len() / 2..] {
            m.set_row_active(r, false).unwrap();
        }
        let relaxed = m.solve_milp(&Budget::unlimited()).unwrap();
        for &r in &rows {
            m.set_row_active(r, true).unwrap();
        }
        let full = m.solve_milp(&Budget::unlimited()).unwrap();
        if let (Some(a), Some(b)) = (relaxed.objective, full.objective) {
            assert!(b >= a - 1e-7);
        }
        if relaxed.status == Status::Infeasible {
            assert_eq!(full.status, Status::Infeasible);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Optimal LPs satisfy complementary slackness: the objective equals the
    /// bound terms of the reduced costs and row duals.
    #[test]
    fn lp_duals_certify_optimality(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m: Model<f64> = common::random_milp(&mut rng, 3, 8);
        let sol = m.solve_lp(&Budget::unlimited()).unwrap();
        prop_assume!(sol.status == Status::Optimal);
        let x = sol.values.unwrap();
        let y = sol.duals.unwrap();
        let c = m.objective_coefficients();
        let mut dual_obj = 0.0;
        for (j, v) in m.vars().iter().enumerate() {
            let mut d = c[j];
            for (i, r) in m.rows().iter().enumerate() {
                for &(var, a) in &r.coeffs {
                    if var.0 == j {
                        d -= y[i] * a;
                    }
                }
            }
            if d > 1e-7 {
                prop_assert!((x[j] - v.lower).abs() < 1e-7);
            } else if d < -1e-7 {
                prop_assert!((x[j] - v.upper).abs() < 1e-7);
            }
            dual_obj += d * x[j];
        }
        for (i, r) in m.rows().iter().enumerate() {
            match r.relation {
                Relation::Le => prop_assert!(y[i] <= 1e-7),
                Relation::Ge => prop_assert!(y[i] >= -1e-7),
                Relation::Eq => {}
            }
            dual_obj += y[i] * r.rhs;
        }
        prop_assert!((dual_obj - sol.objective.unwrap()).abs() < 1e-6 * (1.0 + dual_obj.abs()));
    }
}
