//! Input-space copy of an encoded model, used for solving.
//!
//! States are affine in the inputs (`x_k = A^k x_0 + sum_j A^(k-1-j) B u_j`),
//! so the dynamics rows and state columns drop out. Inputs are split as
//! `u = u+ - u-`, which makes the effort slacks and their rows redundant.
//! State bounds become rows that are switched on only once a solution
//! violates them; inside the bounds every big-M row is exact, so the optimum
//! of the reduced problem is the optimum of the full one.

use crate::dynamics::LinearSystem;
use crate::milp::{Budget, MilpError, Model, Relation, RowId, Solution, SolveStats, Status, VarId};
use crate::Scalar;

#[derive(Debug, Clone, Copy)]
enum Slot {
    State(usize, usize),
    Input(usize, usize),
    Slack(usize, usize),
    Copy(VarId),
}

#[derive(Debug, Clone)]
struct Mirror<S> {
    row: RowId,
    coeffs: Vec<(VarId, S)>,
    rhs: S,
}

/// Lazily enforced bounds of one state coordinate.
#[derive(Debug, Clone)]
struct StateBound<S> {
    var: VarId,
    k: usize,
    d: usize,
    lower: RowId,
    upper: RowId,
    enforce_lower: bool,
    enforce_upper: bool,
    /// Bounds the rows were last written with.
    seen: Option<(S, S)>,
}

#[derive(Debug, Clone)]
pub(super) struct Condensed<S> {
    model: Model<S>,
    system: LinearSystem<S>,
    slots: Vec<Slot>,
    x: Vec<Vec<VarId>>,
    u: Vec<Vec<VarId>>,
    s: Vec<Vec<VarId>>,
    /// `(u+, u-)` per input coordinate.
    split: Vec<Vec<(VarId, VarId)>>,
    /// `gains[t] = A^t B`.
    gains: Vec<Vec<Vec<S>>>,
    /// Unforced response `A^k x_0`.
    free: Vec<Vec<S>>,
    x0: Vec<S>,
    /// Rows of the full model below this id are dynamics and effort rows.
    structural: usize,
    rows: Vec<Option<Mirror<S>>>,
    bounds: Vec<StateBound<S>>,
}

fn mat_mul<S: Scalar>(a: &[Vec<S>], b: &[Vec<S>]) -> Vec<Vec<S>> {
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| {
                    row.iter()
                        .zip(b)
                        .fold(S::zero(), |acc, (&r, bj)| acc + r * bj[j])
                })
                .collect()
        })
        .collect()
}

fn mat_vec<S: Scalar>(a: &[Vec<S>], x: &[S]) -> Vec<S> {
    a.iter()
        .map(|row| {
            row.iter()
                .zip(x)
                .fold(S::zero(), |acc, (&r, &v)| acc + r * v)
        })
        .collect()
}

impl<S: Scalar> Condensed<S> {
    pub fn new(
        system: &LinearSystem<S>,
        x: &[Vec<VarId>],
        u: &[Vec<VarId>],
        s: &[Vec<VarId>],
        structural: usize,
        full: &Model<S>,
    ) -> Self {
        let n = u.len();
        let mut gains = Vec::with_capacity(n);
        let mut g = system.b.clone();
        for _ in 0..n {
            let next = mat_mul(&system.a, &g);
            gains.push(g);
            g = next;
        }
        let mut model = Model::new();
        let mut slots = vec![Slot::Copy(VarId(usize::MAX)); full.num_vars()];
        for (k, row) in x.iter().enumerate() {
            for (d, v) in row.iter().enumerate() {
                slots[v.0] = Slot::State(k, d);
            }
        }
        let mut split = Vec::with_capacity(n);
        for (k, row) in u.iter().enumerate() {
            let mut pairs = Vec::with_capacity(row.len());
            for (d, v) in row.iter().enumerate() {
                slots[v.0] = Slot::Input(k, d);
                let zero = S::zero();
                let plus = model.add_continuous(&format!("up_{k}_{d}"), zero, zero);
                let minus = model.add_continuous(&format!("um_{k}_{d}"), zero, zero);
                pairs.push((plus, minus));
            }
            split.push(pairs);
        }
        for (k, row) in s.iter().enumerate() {
            for (d, v) in row.iter().enumerate() {
                slots[v.0] = Slot::Slack(k, d);
            }
        }
        let mut c = Condensed {
            model,
            system: system.clone(),
            slots: Vec::new(),
            x: x.to_vec(),
            u: u.to_vec(),
            s: s.to_vec(),
            split,
            gains,
            free: Vec::new(),
            x0: Vec::new(),
            structural,
            rows: Vec::new(),
            bounds: Vec::new(),
        };
        for (i, slot) in slots.into_iter().enumerate() {
            let slot = match slot {
                Slot::Copy(_) => c.copy_var(full, i),
                other => other,
            };
            c.slots.push(slot);
        }
        for k in 1..x.len() {
            for d in 0..x[k].len() {
                let zero = S::zero();
                let lower = c.model.add_row_with(
                    &format!("xlo_{k}_{d}"),
                    Vec::new(),
                    Relation::Ge,
                    zero,
                    false,
                );
                let upper = c.model.add_row_with(
                    &format!("xhi_{k}_{d}"),
                    Vec::new(),
                    Relation::Le,
                    zero,
                    false,
                );
                c.bounds.push(StateBound {
                    var: x[k][d],
                    k,
                    d,
                    lower,
                    upper,
                    enforce_lower: false,
                    enforce_upper: false,
                    seen: None,
                });
            }
        }
        c
    }

    fn copy_var(&mut self, full: &Model<S>, i: usize) -> Slot {
        let v = full.var(VarId(i));
        let id = match v.kind {
            crate::milp::VarKind::Binary => self.model.add_binary(&v.name),
            crate::milp::VarKind::Continuous => {
                self.model.add_continuous(&v.name, v.lower, v.upper)
            }
        };
        Slot::Copy(id)
    }

    /// Coefficients in the reduced variables and the constant dropped from
    /// the left-hand side.
    fn translate(&self, coeffs: &[(VarId, S)]) -> (Vec<(VarId, S)>, S) {
        let mut out = Vec::new();
        let mut constant = S::zero();
        for &(v, a) in coeffs {
            match self.slots[v.0] {
                Slot::State(k, d) => {
                    constant += a * self.free[k][d];
                    for j in 0..k {
                        let g = &self.gains[k - 1 - j][d];
                        for (e, &ge) in g.iter().enumerate() {
                            if ge != S::zero() {
                                let (p, m) = self.split[j][e];
                                out.push((p, a * ge));
                                out.push((m, -(a * ge)));
                            }
                        }
                    }
                }
                Slot::Input(k, d) => {
                    let (p, m) = self.split[k][d];
                    out.push((p, a));
                    out.push((m, -a));
                }
                // |u| at any optimum with a non-negative cost.
                Slot::Slack(k, d) => {
                    let (p, m) = self.split[k][d];
                    out.push((p, a));
                    out.push((m, a));
                }
                Slot::Copy(w) => out.push((w, a)),
            }
        }
        (out, constant)
    }

    fn sync(&mut self, full: &Model<S>) -> Result<(), MilpError> {
        let x0: Vec<S> = self.x[0].iter().map(|&v| full.var(v).lower).collect();
        let rebuild = x0 != self.x0;
        if rebuild {
            let mut free = vec![x0.clone()];
            for k in 1..self.x.len() {
                free.push(mat_vec(&self.system.a, &free[k - 1]));
            }
            self.free = free;
            self.x0 = x0;
            for b in &mut self.bounds {
                b.seen = None;
            }
        }
        for i in self.slots.len()..full.num_vars() {
            let slot = self.copy_var(full, i);
            self.slots.push(slot);
        }
        for (i, slot) in self.slots.iter().enumerate() {
            let v = full.var(VarId(i));
            match *slot {
                Slot::Copy(w) => self.model.set_bounds(w, v.lower, v.upper)?,
                Slot::Input(k, d) => {
                    let zero = S::zero();
                    let (p, m) = self.split[k][d];
                    self.model
                        .set_bounds(p, v.lower.max(zero), v.upper.max(zero))?;
                    self.model
                        .set_bounds(m, (-v.upper).max(zero), (-v.lower).max(zero))?;
                }
                Slot::State(..) | Slot::Slack(..) => {}
            }
        }
        if self.rows.len() < full.num_rows() {
            self.rows.resize(full.num_rows(), None);
        }
        for r in self.structural..full.num_rows() {
            let src = full.row(RowId(r));
            let stale = match &self.rows[r] {
                None => true,
                Some(m) => rebuild || m.rhs != src.rhs || m.coeffs != src.coeffs,
            };
            if stale {
                let (coeffs, c) = self.translate(&src.coeffs);
                let rhs = src.rhs - c;
                let row = match &self.rows[r] {
                    Some(m) => {
                        self.model.update_row(m.row, coeffs, rhs)?;
                        m.row
                    }
                    None => {
                        self.model
                            .add_row_with(&src.name, coeffs, src.relation, rhs, src.active)
                    }
                };
                self.rows[r] = Some(Mirror {
                    row,
                    coeffs: src.coeffs.clone(),
                    rhs: src.rhs,
                });
            }
            let row = self.rows[r].as_ref().map(|m| m.row).expect("mirrored");
            if self.model.row(row).active != src.active {
                self.model.set_row_active(row, src.active)?;
            }
        }
        for i in 0..self.bounds.len() {
            let (var, k, d) = (self.bounds[i].var, self.bounds[i].k, self.bounds[i].d);
            let v = full.var(var);
            let now = (v.lower, v.upper);
            if self.bounds[i].seen != Some(now) {
                let (coeffs, c) = self.translate(&[(self.x[k][d], S::one())]);
                let b = &self.bounds[i];
                let (lo_row, hi_row) = (b.lower, b.upper);
                let lo = if v.lower.is_finite() {
                    v.lower - c
                } else {
                    S::zero()
                };
                let hi = if v.upper.is_finite() {
                    v.upper - c
                } else {
                    S::zero()
                };
                self.model.update_row(lo_row, coeffs.clone(), lo)?;
                self.model.update_row(hi_row, coeffs, hi)?;
                self.bounds[i].seen = Some(now);
            }
            let b = &self.bounds[i];
            let on_lo = b.enforce_lower && v.lower.is_finite();
            let on_hi = b.enforce_upper && v.upper.is_finite();
            let (lo_row, hi_row) = (b.lower, b.upper);
            self.model.set_row_active(lo_row, on_lo)?;
            self.model.set_row_active(hi_row, on_hi)?;
        }
        let objective: Vec<(VarId, S)> = full
            .objective_coefficients()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != S::zero())
            .map(|(j, &c)| (VarId(j), c))
            .collect();
        let (objective, _) = self.translate(&objective);
        self.model.set_objective(objective);
        Ok(())
    }

    /// Values for every variable of the full model.
    fn expand(&self, full: &Model<S>, values: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); full.num_vars()];
        let inputs: Vec<Vec<S>> = self
            .split
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&(p, m)| values[p.0] - values[m.0])
                    .collect()
            })
            .collect();
        let mut state = self.x0.clone();
        for (k, row) in self.x.iter().enumerate() {
            for (d, v) in row.iter().enumerate() {
                out[v.0] = state[d];
            }
            if let Some(u) = inputs.get(k) {
                let ax = mat_vec(&self.system.a, &state);
                let bu = mat_vec(&self.system.b, u);
                state = ax.iter().zip(&bu).map(|(&a, &b)| a + b).collect();
            }
        }
        for (k, row) in self.u.iter().enumerate() {
            for (d, v) in row.iter().enumerate() {
                out[v.0] = inputs[k][d];
                out[self.s[k][d].0] = inputs[k][d].abs();
            }
        }
        for (i, slot) in self.slots.iter().enumerate() {
            if let Slot::Copy(w) = *slot {
                out[i] = values[w.0];
            }
        }
        out
    }

    /// Marks violated state bounds for enforcement; returns how many.
    fn enforce_violated(&mut self, full: &Model<S>, values: &[S]) -> usize {
        let mut added = 0;
        for b in &mut self.bounds {
            let v = full.var(b.var);
            let x = values[b.var.0];
            let tol = |bound: S| S::lit(1e-9) * (S::one() + bound.abs());
            if !b.enforce_lower && v.lower.is_finite() && x < v.lower - tol(v.lower) {
                b.enforce_lower = true;
                added += 1;
            }
            if !b.enforce_upper && v.upper.is_finite() && x > v.upper + tol(v.upper) {
                b.enforce_upper = true;
                added += 1;
            }
        }
        added
    }

    /// Reduced-space version of a full-model point.
    fn reduce(&self, values: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.model.num_vars()];
        for (i, slot) in self.slots.iter().enumerate() {
            match *slot {
                Slot::Input(k, d) => {
                    let (p, m) = self.split[k][d];
                    out[p.0] = values[i].max(S::zero());
                    out[m.0] = (-values[i]).max(S::zero());
                }
                Slot::Copy(w) => out[w.0] = values[i],
                Slot::State(..) | Slot::Slack(..) => {}
            }
        }
        out
    }

    /// Solves the full model's current state, offering `start` (a point of
    /// the full model) to the solver as a first incumbent.
    pub fn solve(
        &mut self,
        full: &Model<S>,
        budget: &Budget,
        start: Option<&[S]>,
    ) -> Result<Solution<S>, MilpError> {
        let mut start = start.map(|v| v.to_vec());
        let mut stats = SolveStats::default();
        loop {
            self.sync(full)?;
            let remaining = Budget {
                deadline: budget.deadline,
                max_pivots: budget
                    .max_pivots
                    .map(|m| m.saturating_sub(stats.simplex_iterations)),
            };
            let reduced = start.take().map(|v| self.reduce(&v));
            self.model.set_start(reduced);
            let sol = self.model.solve_milp(&remaining)?;
            stats.simplex_iterations += sol.stats.simplex_iterations;
            stats.nodes += sol.stats.nodes;
            stats.lp_solves += sol.stats.lp_solves;
            let no_point = |status| Solution {
                status,
                values: None,
                objective: None,
                duals: None,
                stats,
            };
            let Some(reduced) = sol.values else {
                return Ok(no_point(sol.status));
            };
            let values = self.expand(full, &reduced);
            if self.enforce_violated(full, &values) == 0 {
                return Ok(Solution {
                    status: sol.status,
                    objective: Some(full.objective_value(&values)),
                    values: Some(values),
                    duals: None,
                    stats,
                });
            }
            if sol.status != Status::Optimal {
                return Ok(no_point(Status::BudgetExceeded));
            }
            start = Some(values);
        }
    }
}
