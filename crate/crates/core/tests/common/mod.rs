//! Shared generators and reference solvers for integration tests.
#![allow(dead_code)]

use lazymtl::milp::{Model, Relation, Status, VarKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random mixed-binary model with bounded continuous variables.
pub fn random_milp(rng: &mut ChaCha8Rng, max_bin: usize, max_cont: usize) -> Model<f64> {
    let mut m = Model::new();
    let nb = rng.gen_range(1..=max_bin);
    let nc = rng.gen_range(0..=max_cont);
    let mut vars = Vec::new();
    for i in 0..nb {
        vars.push(m.add_binary(&format!("z{i}")));
    }
    for i in 0..nc {
        let lo = rng.gen_range(-10..=0) as f64;
        let hi = lo + rng.gen_range(0..=15) as f64;
        vars.push(m.add_continuous(&format!("x{i}"), lo, hi));
    }
    let rows = rng.gen_range(1..=12);
    for r in 0..rows {
        let mut coeffs = Vec::new();
        for &v in &vars {
            if rng.gen_bool(0.4) {
                let c = rng.gen_range(-5..=5) as f64 + if rng.gen_bool(0.3) { 0.5 } else { 0.0 };
                coeffs.push((v, c));
            }
        }
        let rel = match rng.gen_range(0..6) {
            0 => Relation::Eq,
            1 | 2 => Relation::Ge,
            _ => Relation::Le,
        };
        let rhs = rng.gen_range(-8..=8) as f64;
        m.add_row(&format!("r{r}"), coeffs, rel, rhs);
    }
    m.set_objective(
        vars.iter()
            .map(|&v| (v, rng.gen_range(-6..=6) as f64))
            .collect(),
    );
    m
}

/// Solves the LP with the given per-variable bounds using an independent
/// simplex implementation. Returns `None` when infeasible.
pub fn reference_lp(m: &Model<f64>, bounds: &[(f64, f64)]) -> Option<f64> {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let obj = m.objective_coefficients();
    let vars: Vec<_> = bounds
        .iter()
        .zip(obj)
        .map(|(&b, &c)| p.add_var(c, b))
        .collect();
    for r in m.rows().iter().filter(|r| r.active) {
        let expr: Vec<_> = r.coeffs.iter().map(|&(v, c)| (vars[v.0], c)).collect();
        let op = match r.relation {
            Relation::Le => ComparisonOp::Le,
            Relation::Ge => ComparisonOp::Ge,
            Relation::Eq => ComparisonOp::Eq,
        };
        p.add_constraint(expr.as_slice(), op, r.rhs);
    }
    match p.solve() {
        Ok(s) => Some(s.objective()),
        Err(minilp::Error::Infeasible) => None,
        Err(e) => panic!("reference solver: {e}"),
    }
}

/// Optimal MILP objective by enumerating every binary assignment.
pub fn enumerate_milp(m: &Model<f64>) -> Option<f64> {
    let bins: Vec<usize> = (0..m.num_vars())
        .filter(|&j| m.vars()[j].kind == VarKind::Binary)
        .collect();
    let base: Vec<(f64, f64)> = m.vars().iter().map(|v| (v.lower, v.upper)).collect();
    let mut best: Option<f64> = None;
    for mask in 0u64..(1 << bins.len()) {
        let mut b = base.clone();
        for (i, &j) in bins.iter().enumerate() {
            let v = ((mask >> i) & 1) as f64;
            b[j] = (v, v);
        }
        if let Some(o) = reference_lp(m, &b) {
            best = Some(best.map_or(o, |x: f64| x.min(o)));
        }
    }
    best
}

/// Compares the built-in MILP result with enumeration; `Err` describes the
/// mismatch.
pub fn check_against_enumeration(m: &mut Model<f64>, tol: f64) -> Result<(), String> {
    let expected = enumerate_milp(m);
    let sol = m
        .solve_milp(&Default::default())
        .map_err(|e| e.to_string())?;
    match (expected, sol.status) {
        (None, Status::Infeasible) => Ok(()),
        (Some(e), Status::Optimal) => {
            let got = sol.objective.unwrap();
            let vals = sol.values.as_ref().unwrap();
            if !m.is_feasible(vals, 1e-6, true) {
                return Err("returned point infeasible".into());
            }
            if (got - e).abs() <= tol * (1.0 + e.abs()) {
                Ok(())
            } else {
                Err(format!("objective {got} vs enumerated {e}"))
            }
        }
        (e, s) => Err(format!("status {s:?} vs enumerated {e:?}")),
    }
}
