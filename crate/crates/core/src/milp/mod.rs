//! Self-contained MILP: model with switchable rows, bounded simplex for the
//! LP relaxation and best-bound branch-and-bound over binary variables.
//!
//! Rows carry an `active` flag. Inactive rows are dropped when the LP is
//! assembled, so constraints can be toggled without re-encoding the model.
//! The optimal basis of the last root LP is kept and used to warm-start the
//! next solve.

mod branch;
mod simplex;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::Scalar;
use simplex::{LpData, LpStatus, Meter, Pos, Tableau};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RowId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    BudgetExceeded,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MilpError {
    #[error("unknown row id {0}")]
    UnknownRow(usize),
    #[error("unknown variable id {0}")]
    UnknownVar(usize),
    #[error("variable {0}: lower bound exceeds upper bound")]
    InvalidBounds(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone)]
pub struct Variable<S> {
    pub name: String,
    pub lower: S,
    pub upper: S,
    pub kind: VarKind,
}

#[derive(Debug, Clone)]
pub struct Row<S> {
    pub name: String,
    pub coeffs: Vec<(VarId, S)>,
    pub relation: Relation,
    pub rhs: S,
    pub active: bool,
}

impl<S: Scalar> Row<S> {
    pub fn activity(&self, values: &[S]) -> S {
        self.coeffs
            .iter()
            .fold(S::zero(), |acc, &(v, c)| acc + c * values[v.0])
    }

    pub fn satisfied(&self, values: &[S], tol: S) -> bool {
        let a = self.activity(values);
        match self.relation {
            Relation::Le => a <= self.rhs + tol,
            Relation::Ge => a >= self.rhs - tol,
            Relation::Eq => (a - self.rhs).abs() <= tol,
        }
    }
}

/// Wall-clock deadline and/or pivot allowance for one solve.
#[derive(Debug, Clone, Copy, Default)]
pub struct Budget {
    pub deadline: Option<Instant>,
    /// Total simplex pivots over all LPs of the solve; a deterministic
    /// stand-in for a time limit.
    pub max_pivots: Option<u64>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Budget::default()
    }

    pub fn pivots(n: u64) -> Self {
        Budget {
            deadline: None,
            max_pivots: Some(n),
        }
    }

    pub fn until(deadline: Instant) -> Self {
        Budget {
            deadline: Some(deadline),
            max_pivots: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions<S> {
    pub feasibility_tol: S,
    pub optimality_tol: S,
    pub integrality_tol: S,
    /// Absolute optimality gap for pruning.
    pub gap_tol: S,
    pub pivot_tol: S,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_threshold: usize,
    pub max_iterations: Option<u64>,
}

impl<S: Scalar> Default for SolverOptions<S> {
    fn default() -> Self {
        let eps = S::epsilon();
        let at_least = |v: f64, k: f64| S::lit(v).max(eps * S::lit(k));
        SolverOptions {
            feasibility_tol: at_least(1e-7, 1e3),
            optimality_tol: at_least(1e-9, 1e2),
            integrality_tol: at_least(1e-6, 1e3),
            gap_tol: at_least(1e-6, 1e3),
            pivot_tol: at_least(1e-9, 1e2),
            degenerate_threshold: 50,
            max_iterations: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SolveStats {
    pub simplex_iterations: u64,
    pub nodes: u64,
    pub lp_solves: u64,
}

#[derive(Debug, Clone)]
pub struct Solution<S> {
    pub status: Status,
    /// Values for every model variable; `None` when no (incumbent) point
    /// is available.
    pub values: Option<Vec<S>>,
    pub objective: Option<S>,
    /// Row duals of an optimal LP solve, zero for inactive rows.
    pub duals: Option<Vec<S>>,
    pub stats: SolveStats,
}

impl<S: Scalar> Solution<S> {
    fn without_point(status: Status, stats: SolveStats) -> Self {
        Solution {
            status,
            values: None,
            objective: None,
            duals: None,
            stats,
        }
    }

    pub fn value(&self, v: VarId) -> Option<S> {
        self.values.as_ref().map(|vals| vals[v.0])
    }
}

/// Column of the compact LP identified by model ids, so a basis survives
/// row activation changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum ColKey {
    Var(usize),
    Row(usize),
}

#[derive(Debug, Clone, Default)]
struct WarmStart {
    basic: Vec<ColKey>,
    at_upper: Vec<ColKey>,
}

#[derive(Debug, Clone)]
pub struct Model<S> {
    vars: Vec<Variable<S>>,
    rows: Vec<Row<S>>,
    objective: Vec<S>,
    warm: Option<WarmStart>,
    start: Option<Vec<S>>,
    pub options: SolverOptions<S>,
}

impl<S: Scalar> Default for Model<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Assembled LP with the maps back to model ids.
struct Assembled<S> {
    lp: LpData<S>,
    cols: Vec<usize>,
    rows: Vec<usize>,
    col_of_var: Vec<Option<usize>>,
    /// Values of variables left out of the LP.
    parked: Vec<S>,
}

impl<S: Scalar> Model<S> {
    pub fn new() -> Self {
        Model {
            vars: Vec::new(),
            rows: Vec::new(),
            objective: Vec::new(),
            warm: None,
            start: None,
            options: SolverOptions::default(),
        }
    }

    pub fn add_continuous(&mut self, name: &str, lower: S, upper: S) -> VarId {
        self.vars.push(Variable {
            name: name.to_string(),
            lower,
            upper,
            kind: VarKind::Continuous,
        });
        self.objective.push(S::zero());
        VarId(self.vars.len() - 1)
    }

    pub fn add_binary(&mut self, name: &str) -> VarId {
        self.vars.push(Variable {
            name: name.to_string(),
            lower: S::zero(),
            upper: S::one(),
            kind: VarKind::Binary,
        });
        self.objective.push(S::zero());
        VarId(self.vars.len() - 1)
    }

    /// Adds an active row. Panics if a coefficient references an undeclared
    /// variable (a construction bug, not a runtime condition).
    pub fn add_row(
        &mut self,
        name: &str,
        coeffs: Vec<(VarId, S)>,
        relation: Relation,
        rhs: S,
    ) -> RowId {
        self.add_row_with(name, coeffs, relation, rhs, true)
    }

    pub fn add_row_with(
        &mut self,
        name: &str,
        coeffs: Vec<(VarId, S)>,
        relation: Relation,
        rhs: S,
        active: bool,
    ) -> RowId {
        for &(v, _) in &coeffs {
            assert!(
                v.0 < self.vars.len(),
                "row `{name}` references undeclared variable {}",
                v.0
            );
        }
        self.rows.push(Row {
            name: name.to_string(),
            coeffs: merge(coeffs),
            relation,
            rhs,
            active,
        });
        RowId(self.rows.len() - 1)
    }

    /// Replaces the (minimized) objective.
    pub fn set_objective(&mut self, coeffs: Vec<(VarId, S)>) {
        self.objective.iter_mut().for_each(|c| *c = S::zero());
        for (v, c) in coeffs {
            self.objective[v.0] += c;
        }
    }

    pub fn objective_coefficients(&self) -> &[S] {
        &self.objective
    }

    pub fn set_row_active(&mut self, row: RowId, active: bool) -> Result<(), MilpError> {
        self.rows
            .get_mut(row.0)
            .ok_or(MilpError::UnknownRow(row.0))?
            .active = active;
        Ok(())
    }

    /// Replaces the coefficients and right-hand side of a row in place.
    pub fn update_row(
        &mut self,
        row: RowId,
        coeffs: Vec<(VarId, S)>,
        rhs: S,
    ) -> Result<(), MilpError> {
        if row.0 >= self.rows.len() {
            return Err(MilpError::UnknownRow(row.0));
        }
        if let Some(&(v, _)) = coeffs.iter().find(|(v, _)| v.0 >= self.vars.len()) {
            return Err(MilpError::UnknownVar(v.0));
        }
        let r = &mut self.rows[row.0];
        r.coeffs = merge(coeffs);
        r.rhs = rhs;
        Ok(())
    }

    pub fn set_bounds(&mut self, var: VarId, lower: S, upper: S) -> Result<(), MilpError> {
        let v = self
            .vars
            .get_mut(var.0)
            .ok_or(MilpError::UnknownVar(var.0))?;
        v.lower = lower;
        v.upper = upper;
        Ok(())
    }

    pub fn var(&self, id: VarId) -> &Variable<S> {
        &self.vars[id.0]
    }

    pub fn row(&self, id: RowId) -> &Row<S> {
        &self.rows[id.0]
    }

    pub fn vars(&self) -> &[Variable<S>] {
        &self.vars
    }

    pub fn rows(&self) -> &[Row<S>] {
        &self.rows
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_active_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.active).count()
    }

    /// Candidate solution for the next `solve_milp`. It seeds the incumbent
    /// if it is feasible at solve time, so among equally good solutions the
    /// start is kept.
    pub fn set_start(&mut self, values: Option<Vec<S>>) {
        self.start = values.filter(|v| v.len() == self.vars.len());
    }

    /// Drops the stored warm-start basis.
    pub fn clear_warm_start(&mut self) {
        self.warm = None;
    }

    pub fn objective_value(&self, values: &[S]) -> S {
        self.objective
            .iter()
            .zip(values)
            .fold(S::zero(), |acc, (&c, &v)| acc + c * v)
    }

    /// Checks bounds, active rows and (with `integral`) binary integrality.
    pub fn is_feasible(&self, values: &[S], tol: S, integral: bool) -> bool {
        values.len() == self.vars.len()
            && self.vars.iter().zip(values).all(|(v, &x)| {
                x >= v.lower - tol
                    && x <= v.upper + tol
                    && (!integral || v.kind != VarKind::Binary || (x - x.round()).abs() <= tol)
            })
            && self
                .rows
                .iter()
                .filter(|r| r.active)
                .all(|r| r.satisfied(values, tol))
    }

    fn assemble(&self) -> Result<Assembled<S>, MilpError> {
        for (i, v) in self.vars.iter().enumerate() {
            if v.lower > v.upper || v.lower.is_nan() || v.upper.is_nan() {
                return Err(MilpError::InvalidBounds(i));
            }
        }
        let mut used = vec![false; self.vars.len()];
        let rows: Vec<usize> = (0..self.rows.len())
            .filter(|&i| self.rows[i].active)
            .collect();
        for &r in &rows {
            for &(v, c) in &self.rows[r].coeffs {
                if c != S::zero() {
                    used[v.0] = true;
                }
            }
        }
        for (j, &c) in self.objective.iter().enumerate() {
            if c != S::zero() {
                used[j] = true;
            }
        }
        let cols: Vec<usize> = (0..self.vars.len()).filter(|&j| used[j]).collect();
        let mut col_of_var = vec![None; self.vars.len()];
        for (k, &j) in cols.iter().enumerate() {
            col_of_var[j] = Some(k);
        }
        let parked = self
            .vars
            .iter()
            .map(|v| {
                if v.lower.is_finite() {
                    v.lower
                } else if v.upper.is_finite() {
                    v.upper
                } else {
                    S::zero()
                }
            })
            .collect();
        let (n, m) = (cols.len(), rows.len());
        let mut a = vec![S::zero(); m * n];
        let mut lower = Vec::with_capacity(n + m);
        let mut upper = Vec::with_capacity(n + m);
        let mut cost = Vec::with_capacity(n + m);
        for &j in &cols {
            lower.push(self.vars[j].lower);
            upper.push(self.vars[j].upper);
            cost.push(self.objective[j]);
        }
        for (i, &r) in rows.iter().enumerate() {
            let row = &self.rows[r];
            for &(v, c) in &row.coeffs {
                if let Some(k) = col_of_var[v.0] {
                    a[i * n + k] += c;
                }
            }
            let (lo, hi) = match row.relation {
                Relation::Le => (S::neg_infinity(), row.rhs),
                Relation::Ge => (row.rhs, S::infinity()),
                Relation::Eq => (row.rhs, row.rhs),
            };
            lower.push(lo);
            upper.push(hi);
            cost.push(S::zero());
        }
        Ok(Assembled {
            lp: LpData {
                n,
                m,
                a,
                lower,
                upper,
                cost,
            },
            cols,
            rows,
            col_of_var,
            parked,
        })
    }

    fn warm_tableau(&self, asm: &Assembled<S>) -> Tableau<S> {
        let Some(warm) = &self.warm else {
            return Tableau::slack(&asm.lp);
        };
        let n = asm.lp.n;
        let row_pos: HashMap<usize, usize> =
            asm.rows.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let to_col = |k: &ColKey| match *k {
            ColKey::Var(v) => asm.col_of_var[v],
            ColKey::Row(r) => row_pos.get(&r).map(|&i| n + i),
        };
        let basic: Vec<usize> = warm.basic.iter().filter_map(to_col).collect();
        let upper: Vec<usize> = warm.at_upper.iter().filter_map(to_col).collect();
        Tableau::from_basis(&asm.lp, &basic, &upper, &self.options)
    }

    fn remember_basis(&mut self, asm: &Assembled<S>, tab: &Tableau<S>) {
        let n = asm.lp.n;
        let key = |c: usize| {
            if c < n {
                ColKey::Var(asm.cols[c])
            } else {
                ColKey::Row(asm.rows[c - n])
            }
        };
        let basic = tab.basis.iter().map(|&c| key(c)).collect();
        let at_upper = (0..tab.width())
            .filter(|&c| tab.pos[c] == Pos::Upper)
            .map(key)
            .collect();
        self.warm = Some(WarmStart { basic, at_upper });
    }

    fn expand(&self, asm: &Assembled<S>, tab: &Tableau<S>) -> Vec<S> {
        let mut values = asm.parked.clone();
        for (k, &j) in asm.cols.iter().enumerate() {
            values[j] = tab.x[k];
        }
        values
    }

    /// Re-optimizes, refactoring once from the final basis if the returned
    /// point violates an active row.
    fn optimize_checked(
        &self,
        asm: &Assembled<S>,
        tab: &mut Tableau<S>,
        meter: &mut Meter<'_>,
    ) -> Result<LpStatus, MilpError> {
        let mut status = tab.optimize(&self.options, meter)?;
        for _ in 0..2 {
            if status != LpStatus::Optimal {
                break;
            }
            tab.recompute_basic_values();
            let values = self.expand(asm, tab);
            let tol = self.options.feasibility_tol * S::lit(10.0);
            let rows_ok = asm.rows.iter().all(|&r| {
                self.rows[r].satisfied(&values, tol * (S::one() + self.rows[r].rhs.abs()))
            });
            let bounds_ok = (0..tab.width())
                .all(|c| tab.x[c] >= tab.lower[c] - tol && tab.x[c] <= tab.upper[c] + tol);
            if rows_ok && bounds_ok {
                return Ok(status);
            }
            let basic = tab.basis.clone();
            let at_upper: Vec<usize> = (0..tab.width())
                .filter(|&c| tab.pos[c] == Pos::Upper)
                .collect();
            let (lo, hi) = (tab.lower.clone(), tab.upper.clone());
            *tab = Tableau::from_basis(&asm.lp, &basic, &at_upper, &self.options);
            for c in 0..tab.width() {
                if tab.lower[c] != lo[c] || tab.upper[c] != hi[c] {
                    tab.set_bounds(c, lo[c], hi[c]);
                }
            }
            status = tab.optimize(&self.options, meter)?;
        }
        if status == LpStatus::Optimal {
            return Err(MilpError::Numerical(
                "solution violates active rows after refactorization".into(),
            ));
        }
        Ok(status)
    }

    /// Solves the LP relaxation (binaries relaxed to `[0, 1]`).
    pub fn solve_lp(&mut self, budget: &Budget) -> Result<Solution<S>, MilpError> {
        let asm = self.assemble()?;
        let mut meter = Meter::new(budget);
        let mut tab = self.warm_tableau(&asm);
        let status = self.optimize_checked(&asm, &mut tab, &mut meter)?;
        let stats = SolveStats {
            simplex_iterations: meter.pivots,
            nodes: 0,
            lp_solves: 1,
        };
        Ok(match status {
            LpStatus::Optimal => {
                self.remember_basis(&asm, &tab);
                let values = self.expand(&asm, &tab);
                let mut duals = vec![S::zero(); self.rows.len()];
                for (i, &r) in asm.rows.iter().enumerate() {
                    duals[r] = tab.d[asm.lp.n + i];
                }
                Solution {
                    status: Status::Optimal,
                    objective: Some(self.objective_value(&values)),
                    values: Some(values),
                    duals: Some(duals),
                    stats,
                }
            }
            LpStatus::Infeasible => Solution::without_point(Status::Infeasible, stats),
            LpStatus::Unbounded => Solution::without_point(Status::Unbounded, stats),
            LpStatus::Budget => Solution::without_point(Status::BudgetExceeded, stats),
        })
    }

    /// Solves the mixed-integer program by best-bound branch-and-bound.
    pub fn solve_milp(&mut self, budget: &Budget) -> Result<Solution<S>, MilpError> {
        let asm = self.assemble()?;
        let tol = self.options.feasibility_tol;
        let mut meter = Meter::new(budget);
        let mut stats = SolveStats {
            simplex_iterations: 0,
            nodes: 1,
            lp_solves: 1,
        };
        let start = match self.start.take() {
            Some(v) if self.is_feasible(&v, tol, true) => Some(v),
            Some(v) => self.fix_binaries_and_solve(&asm, &v, &mut meter, &mut stats)?,
            None => None,
        }
        .map(|v| (self.objective_value(&v), v));
        let mut root = self.warm_tableau(&asm);
        let status = self.optimize_checked(&asm, &mut root, &mut meter)?;
        stats.simplex_iterations = meter.pivots;
        let outcome = match status {
            LpStatus::Optimal => {
                self.remember_basis(&asm, &root);
                branch::run(self, &asm, root, start, &mut meter, &mut stats)?
            }
            LpStatus::Infeasible => return Ok(Solution::without_point(Status::Infeasible, stats)),
            LpStatus::Unbounded => return Ok(Solution::without_point(Status::Unbounded, stats)),
            LpStatus::Budget => branch::Outcome {
                incumbent: start.map(|(_, v)| v),
                exhausted: false,
            },
        };
        stats.simplex_iterations = meter.pivots;
        Ok(match outcome.incumbent {
            Some(mut values) => {
                for (v, x) in self.vars.iter().zip(values.iter_mut()) {
                    if v.kind == VarKind::Binary {
                        *x = x.round();
                    }
                }
                let unlimited = Budget::unlimited();
                let mut polish = Meter::new(&unlimited);
                if let Some(polished) =
                    self.fix_binaries_and_solve(&asm, &values, &mut polish, &mut stats)?
                {
                    values = polished;
                }
                stats.simplex_iterations += polish.pivots;
                Solution {
                    status: if outcome.exhausted {
                        Status::Optimal
                    } else {
                        Status::BudgetExceeded
                    },
                    objective: Some(self.objective_value(&values)),
                    values: Some(values),
                    duals: None,
                    stats,
                }
            }
            None => Solution::without_point(
                if outcome.exhausted {
                    Status::Infeasible
                } else {
                    Status::BudgetExceeded
                },
                stats,
            ),
        })
    }

    /// Re-solves the continuous part with binaries fixed at the rounded
    /// values of `values`. Used to polish the final incumbent (binaries
    /// inside the integrality tolerance can leave big-M rows short by `M`
    /// times that tolerance) and to repair a start whose continuous part no
    /// longer fits.
    fn fix_binaries_and_solve(
        &self,
        asm: &Assembled<S>,
        values: &[S],
        meter: &mut Meter<'_>,
        stats: &mut SolveStats,
    ) -> Result<Option<Vec<S>>, MilpError> {
        let binaries: Vec<usize> = (0..asm.cols.len())
            .filter(|&k| self.vars[asm.cols[k]].kind == VarKind::Binary)
            .collect();
        if binaries.is_empty() || values.len() != self.vars.len() {
            return Ok(None);
        }
        let mut tab = self.warm_tableau(asm);
        for &k in &binaries {
            let v = values[asm.cols[k]].round();
            if v < asm.lp.lower[k] || v > asm.lp.upper[k] {
                return Ok(None);
            }
            tab.set_bounds(k, v, v);
        }
        let status = self.optimize_checked(asm, &mut tab, meter);
        stats.lp_solves += 1;
        match status {
            Ok(LpStatus::Optimal) => Ok(Some(self.expand(asm, &tab))),
            Ok(_) | Err(MilpError::Numerical(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Writes the model in LP text format. Inactive rows are emitted as
    /// comments so lazy and fully activated models diff cleanly.
    pub fn write_lp(&self, out: &mut impl io::Write) -> io::Result<()> {
        out.write_all(self.to_lp_string().as_bytes())
    }

    pub fn to_lp_string(&self) -> String {
        let mut s = String::new();
        let term = |s: &mut String, c: S, name: &str| {
            let sign = if c < S::zero() { "-" } else { "+" };
            let _ = write!(s, " {sign} {} {name}", c.abs());
        };
        s.push_str("Minimize\n obj:");
        let mut any = false;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != S::zero() {
                term(&mut s, c, &self.vars[j].name);
                any = true;
            }
        }
        if !any {
            s.push_str(" 0");
        }
        s.push_str("\nSubject To\n");
        for r in &self.rows {
            let mut line = String::new();
            if !r.active {
                line.push_str("\\ inactive ");
            }
            let _ = write!(line, " {}:", r.name);
            for &(v, c) in &r.coeffs {
                term(&mut line, c, &self.vars[v.0].name);
            }
            if r.coeffs.is_empty() {
                line.push_str(" 0 x_zero");
            }
            let op = match r.relation {
                Relation::Le => "<=",
                Relation::Ge => ">=",
                Relation::Eq => "=",
            };
            let _ = writeln!(line, " {op} {}", r.rhs);
            s.push_str(&line);
        }
        s.push_str("Bounds\n");
        for v in self.vars.iter().filter(|v| v.kind == VarKind::Continuous) {
            let _ = match (v.lower.is_finite(), v.upper.is_finite()) {
                _ if v.lower == v.upper => writeln!(s, " {} = {}", v.name, v.lower),
                (true, true) => writeln!(s, " {} <= {} <= {}", v.lower, v.name, v.upper),
                (true, false) => writeln!(s, " {} >= {}", v.name, v.lower),
                (false, true) => writeln!(s, " -inf <= {} <= {}", v.name, v.upper),
                (false, false) => writeln!(s, " {} free", v.name),
            };
        }
        let bins: Vec<&str> = self
            .vars
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .map(|v| v.name.as_str())
            .collect();
        if !bins.is_empty() {
            s.push_str("Binaries\n");
            for b in bins {
                let _ = writeln!(s, " {b}");
            }
        }
        s.push_str("End\n");
        s
    }
}

fn merge<S: Scalar>(coeffs: Vec<(VarId, S)>) -> Vec<(VarId, S)> {
    let mut out: Vec<(VarId, S)> = Vec::with_capacity(coeffs.len());
    for (v, c) in coeffs {
        match out.iter_mut().find(|(w, _)| *w == v) {
            Some(e) => e.1 += c,
            None => out.push((v, c)),
        }
    }
    out
}

/// Solver back end: load a model, solve under a budget, read the solution.
/// The built-in solver is the default; an external solver can implement the
/// same three calls.
pub trait MilpBackend<S: Scalar> {
    fn name(&self) -> &str;
    fn load(&mut self, model: &Model<S>) -> Result<(), MilpError>;
    fn solve(&mut self, budget: &Budget) -> Result<Status, MilpError>;
    fn solution(&self) -> Option<&Solution<S>>;
}

#[derive(Debug, Default)]
pub struct BuiltinBackend<S> {
    model: Option<Model<S>>,
    last: Option<Solution<S>>,
}

impl<S: Scalar> MilpBackend<S> for BuiltinBackend<S> {
    fn name(&self) -> &str {
        "builtin"
    }

    fn load(&mut self, model: &Model<S>) -> Result<(), MilpError> {
        self.model = Some(model.clone());
        self.last = None;
        Ok(())
    }

    fn solve(&mut self, budget: &Budget) -> Result<Status, MilpError> {
        let model = self
            .model
            .as_mut()
            .ok_or_else(|| MilpError::Numerical("no model loaded".into()))?;
        let sol = model.solve_milp(budget)?;
        let status = sol.status;
        self.last = Some(sol);
        Ok(status)
    }

    fn solution(&self) -> Option<&Solution<S>> {
        self.last.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inf() -> f64 {
        f64::INFINITY
    }

    #[test]
    fn lp_single_variable_lower_bound() {
        let mut m = Model::<f64>::new();
        let x = m.add_continuous("x", -inf(), inf());
        m.add_row("lo", vec![(x, 1.0)], Relation::Ge, 3.0);
        m.add_row("hi", vec![(x, 1.0)], Relation::Le, 10.0);
        m.set_objective(vec![(x, 1.0)]);
        let s = m.solve_lp(&Budget::unlimited()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.value(x).unwrap() - 3.0).abs() < 1e-12);
        assert!((s.objective.unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lp_simplex_facet() {
        let mut m = Model::<f64>::new();
        let x = m.add_continuous("x", 0.0, inf());
        let y = m.add_continuous("y", 0.0, inf());
        m.add_row("cap", vec![(x, 1.0), (y, 1.0)], Relation::Le, 1.0);
        m.set_objective(vec![(x, -1.0), (y, -1.0)]);
        let s = m.solve_lp(&Budget::unlimited()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.objective.unwrap() + 1.0).abs() < 1e-12);
        let v = s.values.unwrap();
        assert!((v[0] + v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lp_infeasible_and_unbounded() {
        let mut m = Model::<f64>::new();
        let x = m.add_continuous("x", -inf(), inf());
        m.add_row("a", vec![(x, 1.0)], Relation::Le, 0.0);
        m.add_row("b", vec![(x, 1.0)], Relation::Ge, 1.0);
        assert_eq!(
            m.solve_lp(&Budget::unlimited()).unwrap().status,
            Status::Infeasible
        );

        let mut u = Model::<f64>::new();
        let x = u.add_continuous("x", -inf(), inf());
        u.add_row("a", vec![(x, 1.0)], Relation::Ge, 5.0);
        u.set_objective(vec![(x, -1.0)]);
        assert_eq!(
            u.solve_lp(&Budget::unlimited()).unwrap().status,
            Status::Unbounded
        );
    }

    #[test]
    fn lp_in_f32() {
        let mut m = Model::<f32>::new();
        let x = m.add_continuous("x", 0.0, 4.0);
        let y = m.add_continuous("y", 0.0, 4.0);
        m.add_row("c", vec![(x, 1.0), (y, 2.0)], Relation::Ge, 4.0);
        m.set_objective(vec![(x, 1.0), (y, 1.0)]);
        let s = m.solve_lp(&Budget::unlimited()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.objective.unwrap() - 2.0).abs() < 1e-5);
    }

    #[test]
    fn milp_rounding_forced() {
        let mut m = Model::<f64>::new();
        let z = m.add_binary("z");
        m.add_row("half", vec![(z, 1.0)], Relation::Ge, 0.5);
        m.set_objective(vec![(z, 1.0)]);
        let s = m.solve_milp(&Budget::unlimited()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_eq!(s.value(z), Some(1.0));
    }

    #[test]
    fn milp_knapsack() {
        let mut m = Model::<f64>::new();
        let a = m.add_binary("a");
        let b = m.add_binary("b");
        m.add_row("cap", vec![(a, 1.0), (b, 1.0)], Relation::Le, 1.0);
        m.set_objective(vec![(a, -2.0), (b, -3.0)]);
        let s = m.solve_milp(&Budget::unlimited()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_eq!(s.objective, Some(-3.0));
        assert_eq!(s.value(b), Some(1.0));
        assert_eq!(s.value(a), Some(0.0));
    }

    #[test]
    fn milp_needs_branching() {
        // max x + y  s.t. 2x + 2y <= 3 with binaries: LP gives 1.5, MILP gives 1
        let mut m = Model::<f64>::new();
        let x = m.add_binary("x");
        let y = m.add_binary("y");
        m.add_row("c", vec![(x, 2.0), (y, 2.0)], Relation::Le, 3.0);
        m.set_objective(vec![(x, -1.0), (y, -1.0)]);
        let lp = m.clone().solve_lp(&Budget::unlimited()).unwrap();
        assert!((lp.objective.unwrap() + 1.5).abs() < 1e-9);
        let s = m.solve_milp(&Budget::unlimited()).unwrap();
        assert_eq!(s.objective, Some(-1.0));
        assert!(s.stats.nodes > 1);
    }

    /// Point-outside-unit-square group with the state pinned by bounds.
    fn outside_square_model(px: f64, py: f64) -> Model<f64> {
        let mut m = Model::<f64>::new();
        let x = m.add_continuous("x", px, px);
        let y = m.add_continuous("y", py, py);
        let faces = [
            ([1.0, 0.0], 1.0),
            ([-1.0, 0.0], 0.0),
            ([0.0, 1.0], 1.0),
            ([0.0, -1.0], 0.0),
        ];
        let big_m = 12.0;
        let mut zs = Vec::new();
        for (i, (a, b)) in faces.iter().enumerate() {
            let z = m.add_binary(&format!("z{i}"));
            zs.push(z);
            m.add_row(
                &format!("f{i}"),
                vec![(x, a[0]), (y, a[1]), (z, big_m)],
                Relation::Ge,
                *b,
            );
        }
        m.add_row(
            "card",
            zs.iter().map(|&z| (z, 1.0)).collect(),
            Relation::Le,
            3.0,
        );
        m
    }

    #[test]
    fn big_m_point_outside_square() {
        // brute force over z in {0,1}^4 agrees with the solver
        for (p, outside) in [
            ((0.5, 0.5), false),
            ((2.0, 0.5), true),
            ((0.5, -0.1), true),
            ((0.9, 0.2), false),
        ] {
            let mut m = outside_square_model(p.0, p.1);
            let mut brute = false;
            for mask in 0u32..16 {
                let z: Vec<f64> = (0..4).map(|i| ((mask >> i) & 1) as f64).collect();
                let vals = [vec![p.0, p.1], z].concat();
                brute |= m.is_feasible(&vals, 1e-9, true);
            }
            let status = m.solve_milp(&Budget::unlimited()).unwrap().status;
            assert_eq!(brute, outside, "{p:?}");
            assert_eq!(status == Status::Optimal, outside, "{p:?}");
        }
    }

    #[test]
    fn row_activation_round_trip() {
        let mut m = Model::<f64>::new();
        let x = m.add_continuous("x", 0.0, inf());
        let lo = m.add_row("lo", vec![(x, 1.0)], Relation::Ge, 3.0);
        m.add_row("hi", vec![(x, 1.0)], Relation::Le, 10.0);
        m.set_objective(vec![(x, 1.0)]);
        let first = m.solve_lp(&Budget::unlimited()).unwrap().values.unwrap();
        m.set_row_active(lo, false).unwrap();
        let relaxed = m.solve_lp(&Budget::unlimited()).unwrap();
        assert_eq!(relaxed.value(x), Some(0.0));
        m.set_row_active(lo, true).unwrap();
        let again = m.solve_lp(&Budget::unlimited()).unwrap().values.unwrap();
        assert_eq!(first, again);

        let bad = m.add_row_with("bad", vec![(x, 1.0)], Relation::Ge, 11.0, false);
        assert_eq!(
            m.solve_lp(&Budget::unlimited()).unwrap().status,
            Status::Optimal
        );
        m.set_row_active(bad, true).unwrap();
        assert_eq!(
            m.solve_lp(&Budget::unlimited()).unwrap().status,
            Status::Infeasible
        );
        assert_eq!(
            m.set_row_active(RowId(99), true),
            Err(MilpError::UnknownRow(99))
        );
    }

    #[test]
    fn update_row_moves_geometry() {
        // point (1.5, 0.5) inside the square shifted to x <= 2
        let mut m = Model::<f64>::new();
        let x = m.add_continuous("x", 1.5, 1.5);
        let r = m.add_row("face", vec![(x, 1.0)], Relation::Le, 1.0);
        assert_eq!(
            m.solve_lp(&Budget::unlimited()).unwrap().status,
            Status::Infeasible
        );
        m.update_row(r, vec![(x, 1.0)], 2.0).unwrap();
        assert_eq!(
            m.solve_lp(&Budget::unlimited()).unwrap().status,
            Status::Optimal
        );
        let before = m.solve_lp(&Budget::unlimited()).unwrap().values;
        m.update_row(r, vec![(x, 1.0)], 2.0).unwrap();
        assert_eq!(m.solve_lp(&Budget::unlimited()).unwrap().values, before);
        assert_eq!(
            m.update_row(RowId(5), vec![], 0.0),
            Err(MilpError::UnknownRow(5))
        );
        assert_eq!(
            m.update_row(r, vec![(VarId(9), 1.0)], 0.0),
            Err(MilpError::UnknownVar(9))
        );
    }

    #[test]
    fn pivot_budget_is_reported() {
        let mut m = Model::<f64>::new();
        let xs: Vec<_> = (0..6)
            .map(|i| m.add_continuous(&format!("x{i}"), 0.0, 10.0))
            .collect();
        for i in 0..6 {
            m.add_row(
                &format!("r{i}"),
                xs.iter()
                    .enumerate()
                    .map(|(j, &v)| (v, 1.0 + ((i + j) % 3) as f64))
                    .collect(),
                Relation::Ge,
                5.0,
            );
        }
        m.set_objective(xs.iter().map(|&v| (v, 1.0)).collect());
        let s = m.clone().solve_lp(&Budget::pivots(0)).unwrap();
        assert_eq!(s.status, Status::BudgetExceeded);
        assert!(s.values.is_none());
        assert_eq!(
            m.solve_lp(&Budget::unlimited()).unwrap().status,
            Status::Optimal
        );
    }

    #[test]
    fn start_is_kept_among_ties() {
        // x + y = 1 with equal costs: both vertices are optimal
        let build = || {
            let mut m = Model::<f64>::new();
            let x = m.add_binary("x");
            let y = m.add_binary("y");
            m.add_row("one", vec![(x, 1.0), (y, 1.0)], Relation::Eq, 1.0);
            m.set_objective(vec![(x, 1.0), (y, 1.0)]);
            m
        };
        let mut m = build();
        let first = m.solve_milp(&Budget::unlimited()).unwrap().values.unwrap();
        let other: Vec<f64> = first.iter().map(|v| 1.0 - v).collect();
        let mut m = build();
        m.set_start(Some(other.clone()));
        assert_eq!(
            m.solve_milp(&Budget::unlimited()).unwrap().values.unwrap(),
            other
        );
        // an infeasible start is ignored
        let mut m = build();
        m.set_start(Some(vec![1.0, 1.0]));
        assert_eq!(
            m.solve_milp(&Budget::unlimited()).unwrap().values.unwrap(),
            first
        );
        // under a zero budget the start is returned as the incumbent
        let mut m = build();
        m.set_start(Some(other.clone()));
        let s = m.solve_milp(&Budget::pivots(0)).unwrap();
        assert_eq!((s.status, s.values), (Status::BudgetExceeded, Some(other)));
    }

    #[test]
    fn lp_text_dump() {
        let mut m = Model::<f64>::new();
        let x = m.add_continuous("x", 0.0, 4.0);
        let z = m.add_binary("z");
        m.add_row("c1", vec![(x, 1.0), (z, -2.5)], Relation::Le, 1.0);
        m.add_row_with("c2", vec![(x, 1.0)], Relation::Ge, 3.0, false);
        m.set_objective(vec![(x, 1.0)]);
        let text = m.to_lp_string();
        assert_eq!(
            text,
            "Minimize\n obj: + 1 x\nSubject To\n c1: + 1 x - 2.5 z <= 1\n\\ inactive  c2: + 1 x >= 3\nBounds\n 0 <= x <= 4\nBinaries\n z\nEnd\n"
        );
    }

    #[test]
    fn builtin_backend_round_trip() {
        let mut m = Model::<f64>::new();
        let z = m.add_binary("z");
        m.add_row("c", vec![(z, 1.0)], Relation::Ge, 0.2);
        m.set_objective(vec![(z, 1.0)]);
        let mut be = BuiltinBackend::default();
        assert_eq!(be.name(), "builtin");
        be.load(&m).unwrap();
        assert_eq!(be.solve(&Budget::unlimited()).unwrap(), Status::Optimal);
        assert_eq!(be.solution().unwrap().objective, Some(1.0));
    }
}
