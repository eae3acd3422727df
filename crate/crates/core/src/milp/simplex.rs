//! Dense bounded-variable simplex over the tableau `B^-1 [A | -I]`.
//!
//! Every row `a_i . x` gets a logical column `r_i` with `a_i . x - r_i = 0`,
//! so row senses become bounds on `r_i` and the LP is
//! `min c.x  s.t.  [A | -I] (x, r) = 0,  l <= (x, r) <= u`.

use std::time::Instant;

use super::{Budget, MilpError, SolverOptions};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Pos {
    Basic(usize),
    Lower,
    Upper,
    /// Free nonbasic variable parked at zero.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Budget,
}

/// Compact LP: only active rows and the columns they (or the objective)
/// reference.
#[derive(Debug, Clone)]
pub(crate) struct LpData<S> {
    pub n: usize,
    pub m: usize,
    /// Row-major `m x n` constraint matrix.
    pub a: Vec<S>,
    pub lower: Vec<S>,
    pub upper: Vec<S>,
    pub cost: Vec<S>,
}

/// Pivot counter and deadline shared by every LP of one solve.
pub(crate) struct Meter<'a> {
    pub budget: &'a Budget,
    pub pivots: u64,
}

impl<'a> Meter<'a> {
    pub fn new(budget: &'a Budget) -> Self {
        Meter { budget, pivots: 0 }
    }

    pub fn exhausted(&self) -> bool {
        if let Some(max) = self.budget.max_pivots {
            if self.pivots >= max {
                return true;
            }
        }
        if let Some(deadline) = self.budget.deadline {
            if self.pivots.is_multiple_of(8) && Instant::now() >= deadline {
                return true;
            }
        }
        false
    }

    fn tick(&mut self) {
        self.pivots += 1;
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Tableau<S> {
    pub m: usize,
    w: usize,
    t: Vec<S>,
    pub basis: Vec<usize>,
    pub pos: Vec<Pos>,
    pub x: Vec<S>,
    pub d: Vec<S>,
    pub lower: Vec<S>,
    pub upper: Vec<S>,
    cost: Vec<S>,
    /// Pivots since the tableau was last built from scratch.
    pub age: u64,
}

impl<S: Scalar> Tableau<S> {
    /// Slack basis: every logical basic, structurals at a finite bound.
    pub fn slack(lp: &LpData<S>) -> Self {
        let (m, n) = (lp.m, lp.n);
        let w = n + m;
        let mut t = vec![S::zero(); m * w];
        for i in 0..m {
            for j in 0..n {
                t[i * w + j] = -lp.a[i * n + j];
            }
            t[i * w + n + i] = S::one();
        }
        let mut pos = vec![Pos::Lower; w];
        let mut x = vec![S::zero(); w];
        for j in 0..n {
            let (p, v) = default_position(lp.lower[j], lp.upper[j], lp.cost[j]);
            pos[j] = p;
            x[j] = v;
        }
        let basis: Vec<usize> = (n..w).collect();
        for (i, &b) in basis.iter().enumerate() {
            pos[b] = Pos::Basic(i);
        }
        let mut tab = Tableau {
            m,
            w,
            t,
            basis,
            pos,
            x,
            d: vec![S::zero(); w],
            lower: lp.lower.clone(),
            upper: lp.upper.clone(),
            cost: lp.cost.clone(),
            age: 0,
        };
        tab.recompute_basic_values();
        tab.recompute_reduced_costs();
        tab.age = 0;
        tab
    }

    /// Crashes the requested columns into a slack basis. Columns that would
    /// make the basis singular are left nonbasic.
    pub fn from_basis(
        lp: &LpData<S>,
        basic: &[usize],
        at_upper: &[usize],
        opts: &SolverOptions<S>,
    ) -> Self {
        let mut tab = Self::slack(lp);
        let w = tab.w;
        let mut wanted = vec![false; w];
        for &c in basic {
            if c < w {
                wanted[c] = true;
            }
        }
        for &q in basic {
            if q >= w || matches!(tab.pos[q], Pos::Basic(_)) {
                continue;
            }
            let mut best: Option<(usize, S)> = None;
            for r in 0..tab.m {
                let cur = tab.basis[r];
                if wanted[cur] {
                    continue;
                }
                let v = tab.t[r * w + q].abs();
                if v > opts.pivot_tol && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((r, v));
                }
            }
            if let Some((r, _)) = best {
                let leaving = tab.basis[r];
                tab.pivot(r, q);
                let (p, v) = default_position(tab.lower[leaving], tab.upper[leaving], S::zero());
                tab.pos[leaving] = p;
                tab.x[leaving] = v;
            }
        }
        for &j in at_upper {
            if j < w && !matches!(tab.pos[j], Pos::Basic(_)) && tab.upper[j].is_finite() {
                tab.pos[j] = Pos::Upper;
                tab.x[j] = tab.upper[j];
            }
        }
        tab.recompute_basic_values();
        tab.recompute_reduced_costs();
        tab.age = 0;
        tab
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn recompute_basic_values(&mut self) {
        let w = self.w;
        let nonzero: Vec<(usize, S)> = (0..w)
            .filter(|&j| !matches!(self.pos[j], Pos::Basic(_)) && self.x[j] != S::zero())
            .map(|j| (j, self.x[j]))
            .collect();
        for i in 0..self.m {
            let row = &self.t[i * w..(i + 1) * w];
            let s = nonzero
                .iter()
                .fold(S::zero(), |acc, &(j, v)| acc + row[j] * v);
            self.x[self.basis[i]] = -s;
        }
    }

    pub fn recompute_reduced_costs(&mut self) {
        let w = self.w;
        self.d.copy_from_slice(&self.cost);
        for i in 0..self.m {
            let cb = self.cost[self.basis[i]];
            if cb == S::zero() {
                continue;
            }
            let row = &self.t[i * w..(i + 1) * w];
            for j in 0..w {
                self.d[j] -= cb * row[j];
            }
        }
        for i in 0..self.m {
            self.d[self.basis[i]] = S::zero();
        }
    }

    pub fn objective(&self) -> S {
        self.x
            .iter()
            .zip(&self.cost)
            .fold(S::zero(), |acc, (&x, &c)| acc + x * c)
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.w;
        let piv = self.t[r * w + q];
        let inv = S::one() / piv;
        let mut nz: Vec<usize> = Vec::new();
        for j in 0..w {
            let v = self.t[r * w + j];
            if v != S::zero() {
                self.t[r * w + j] = v * inv;
                nz.push(j);
            }
        }
        self.t[r * w + q] = S::one();
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[q];
            if f == S::zero() {
                continue;
            }
            for &j in &nz {
                row[j] -= f * prow[j];
            }
            row[q] = S::zero();
        }
        let f = self.d[q];
        if f != S::zero() {
            for &j in &nz {
                self.d[j] -= f * prow[j];
            }
            self.d[q] = S::zero();
        }
        self.age += 1;
        let leaving = self.basis[r];
        self.basis[r] = q;
        self.pos[q] = Pos::Basic(r);
        // caller assigns the leaving position
        self.pos[leaving] = Pos::Lower;
    }

    /// Changes the bounds of column `j`, keeping a nonbasic column on a bound.
    pub fn set_bounds(&mut self, j: usize, lo: S, hi: S) {
        self.lower[j] = lo;
        self.upper[j] = hi;
        if let Pos::Basic(_) = self.pos[j] {
            return;
        }
        let (p, v) = match self.pos[j] {
            Pos::Upper if hi.is_finite() => (Pos::Upper, hi),
            _ => default_position(lo, hi, self.d[j]),
        };
        let delta = v - self.x[j];
        self.pos[j] = p;
        self.x[j] = v;
        if delta != S::zero() {
            for i in 0..self.m {
                let a = self.t[i * self.w + j];
                if a != S::zero() {
                    let b = self.basis[i];
                    self.x[b] -= a * delta;
                }
            }
        }
    }

    fn infeasibility(&self, j: usize, tol: S) -> S {
        let v = self.x[j];
        if v < self.lower[j] - tol {
            self.lower[j] - v
        } else if v > self.upper[j] + tol {
            v - self.upper[j]
        } else {
            S::zero()
        }
    }

    /// Moves nonbasic columns to the bound matching the sign of their reduced
    /// cost. Returns false when some column would need an infinite bound.
    fn make_dual_feasible(&mut self, tol: S) -> bool {
        let mut ok = true;
        let mut changed = false;
        for j in 0..self.w {
            if let Pos::Basic(_) = self.pos[j] {
                continue;
            }
            let (lo, hi, dj) = (self.lower[j], self.upper[j], self.d[j]);
            if lo == hi {
                if self.pos[j] != Pos::Lower || self.x[j] != lo {
                    self.pos[j] = Pos::Lower;
                    self.x[j] = lo;
                    changed = true;
                }
                continue;
            }
            let want = if dj > tol {
                if lo.is_finite() {
                    Some((Pos::Lower, lo))
                } else {
                    ok = false;
                    None
                }
            } else if dj < -tol {
                if hi.is_finite() {
                    Some((Pos::Upper, hi))
                } else {
                    ok = false;
                    None
                }
            } else {
                None
            };
            if let Some((p, v)) = want {
                if self.pos[j] != p || self.x[j] != v {
                    self.pos[j] = p;
                    self.x[j] = v;
                    changed = true;
                }
            }
        }
        if changed {
            self.recompute_basic_values();
        }
        ok
    }

    /// Runs the simplex method from the current basis to optimality.
    pub fn optimize(
        &mut self,
        opts: &SolverOptions<S>,
        meter: &mut Meter<'_>,
    ) -> Result<LpStatus, MilpError> {
        if self.make_dual_feasible(opts.optimality_tol) {
            match self.dual(opts, meter)? {
                LpStatus::Optimal => self.primal(false, opts, meter),
                other => Ok(other),
            }
        } else {
            match self.primal(true, opts, meter)? {
                LpStatus::Optimal => self.primal(false, opts, meter),
                other => Ok(other),
            }
        }
    }

    fn iteration_cap(&self, opts: &SolverOptions<S>) -> u64 {
        opts.max_iterations
            .unwrap_or(200 * (self.m + self.w) as u64 + 10_000)
    }

    /// Primal simplex. With `phase_one` the objective is the sum of bound
    /// violations of basic variables; returns `Optimal` once feasible.
    fn primal(
        &mut self,
        phase_one: bool,
        opts: &SolverOptions<S>,
        meter: &mut Meter<'_>,
    ) -> Result<LpStatus, MilpError> {
        let tol = opts.feasibility_tol;
        let dtol = opts.optimality_tol;
        let w = self.w;
        let mut degenerate = 0usize;
        let mut bland = false;
        let cap = self.iteration_cap(opts);
        let mut iters = 0u64;
        let mut d1 = vec![S::zero(); w];
        loop {
            if meter.exhausted() {
                return Ok(LpStatus::Budget);
            }
            iters += 1;
            if iters > cap {
                return Err(MilpError::Numerical(
                    "primal simplex iteration limit".into(),
                ));
            }
            let dvec: &[S] = if phase_one {
                let mut any = false;
                d1.iter_mut().for_each(|v| *v = S::zero());
                for i in 0..self.m {
                    let b = self.basis[i];
                    let c = if self.x[b] < self.lower[b] - tol {
                        -S::one()
                    } else if self.x[b] > self.upper[b] + tol {
                        S::one()
                    } else {
                        continue;
                    };
                    any = true;
                    let row = &self.t[i * w..(i + 1) * w];
                    for j in 0..w {
                        d1[j] -= c * row[j];
                    }
                }
                if !any {
                    return Ok(LpStatus::Optimal);
                }
                &d1
            } else {
                &self.d
            };

            // pricing
            let mut enter: Option<(usize, S, S)> = None; // (col, dir, score)
            for j in 0..w {
                let dir = match self.pos[j] {
                    Pos::Basic(_) => continue,
                    _ if self.lower[j] == self.upper[j] => continue,
                    Pos::Lower if dvec[j] < -dtol => S::one(),
                    Pos::Upper if dvec[j] > dtol => -S::one(),
                    Pos::Zero if dvec[j].abs() > dtol => {
                        if dvec[j] < S::zero() {
                            S::one()
                        } else {
                            -S::one()
                        }
                    }
                    _ => continue,
                };
                let score = dvec[j].abs();
                if bland {
                    enter = Some((j, dir, score));
                    break;
                }
                if enter.is_none_or(|(_, _, s)| score > s) {
                    enter = Some((j, dir, score));
                }
            }
            let Some((q, dir, _)) = enter else {
                return Ok(if phase_one {
                    LpStatus::Infeasible
                } else {
                    LpStatus::Optimal
                });
            };

            // ratio test
            let flip = if self.lower[q].is_finite() && self.upper[q].is_finite() {
                self.upper[q] - self.lower[q]
            } else {
                S::infinity()
            };
            let mut best: Option<(usize, Pos, S, S)> = None; // (row, leaving position, limit, |alpha|)
            let tie = S::lit(1e-12);
            for i in 0..self.m {
                let alpha = self.t[i * w + q];
                if alpha.abs() <= opts.pivot_tol {
                    continue;
                }
                let delta = -alpha * dir;
                let b = self.basis[i];
                let (xb, lb, ub) = (self.x[b], self.lower[b], self.upper[b]);
                let (limit, p) = if phase_one && xb < lb - tol {
                    if delta > S::zero() {
                        ((lb - xb) / delta, Pos::Lower)
                    } else {
                        continue;
                    }
                } else if phase_one && xb > ub + tol {
                    if delta < S::zero() {
                        ((xb - ub) / -delta, Pos::Upper)
                    } else {
                        continue;
                    }
                } else if delta < S::zero() && lb.is_finite() {
                    (((xb - lb) / -delta).max(S::zero()), Pos::Lower)
                } else if delta > S::zero() && ub.is_finite() {
                    (((ub - xb) / delta).max(S::zero()), Pos::Upper)
                } else {
                    continue;
                };
                let better = match best {
                    None => true,
                    Some((r, _, bl, a)) => {
                        limit < bl - tie
                            || (limit <= bl + tie
                                && if bland {
                                    b < self.basis[r]
                                } else {
                                    alpha.abs() > a
                                })
                    }
                };
                if better {
                    best = Some((i, p, limit, alpha.abs()));
                }
            }
            let (theta, leave) = match best {
                Some((r, p, limit, _)) if limit < flip => (limit, Some((r, p))),
                _ => (flip, None),
            };
            if !theta.is_finite() {
                if phase_one {
                    return Err(MilpError::Numerical("unbounded phase-one ray".into()));
                }
                return Ok(LpStatus::Unbounded);
            }

            meter.tick();
            if theta > S::lit(1e-12) {
                degenerate = 0;
                bland = false;
            } else {
                degenerate += 1;
                if degenerate > opts.degenerate_threshold {
                    bland = true;
                }
            }
            let step = theta * dir;
            for i in 0..self.m {
                let a = self.t[i * w + q];
                if a != S::zero() {
                    let b = self.basis[i];
                    self.x[b] -= a * step;
                }
            }
            self.x[q] += step;
            match leave {
                Some((r, p)) => {
                    let leaving = self.basis[r];
                    self.pivot(r, q);
                    self.pos[leaving] = p;
                    self.x[leaving] = if p == Pos::Lower {
                        self.lower[leaving]
                    } else {
                        self.upper[leaving]
                    };
                }
                None => {
                    // bound flip of the entering column
                    if dir > S::zero() {
                        self.pos[q] = Pos::Upper;
                        self.x[q] = self.upper[q];
                    } else {
                        self.pos[q] = Pos::Lower;
                        self.x[q] = self.lower[q];
                    }
                }
            }
        }
    }

    /// Dual simplex from a dual-feasible basis.
    fn dual(
        &mut self,
        opts: &SolverOptions<S>,
        meter: &mut Meter<'_>,
    ) -> Result<LpStatus, MilpError> {
        let tol = opts.feasibility_tol;
        let w = self.w;
        let cap = self.iteration_cap(opts);
        let mut iters = 0u64;
        let mut degenerate = 0usize;
        let mut bland = false;
        loop {
            if meter.exhausted() {
                return Ok(LpStatus::Budget);
            }
            iters += 1;
            if iters > cap {
                return Err(MilpError::Numerical("dual simplex iteration limit".into()));
            }
            let mut leave: Option<(usize, S)> = None;
            for i in 0..self.m {
                let viol = self.infeasibility(self.basis[i], tol);
                if viol <= S::zero() {
                    continue;
                }
                let better = match leave {
                    None => true,
                    Some((r, v)) => {
                        if bland {
                            self.basis[i] < self.basis[r]
                        } else {
                            viol > v
                        }
                    }
                };
                if better {
                    leave = Some((i, viol));
                }
            }
            let Some((r, _)) = leave else {
                return Ok(LpStatus::Optimal);
            };
            let b = self.basis[r];
            let below = self.x[b] < self.lower[b];
            let target = if below { self.lower[b] } else { self.upper[b] };

            let mut enter: Option<(usize, S, S)> = None; // (col, ratio, |alpha|)
            let tie = S::lit(1e-12);
            for j in 0..w {
                let s = match self.pos[j] {
                    Pos::Basic(_) => continue,
                    _ if self.lower[j] == self.upper[j] => continue,
                    Pos::Lower => S::one(),
                    Pos::Upper => -S::one(),
                    Pos::Zero => S::zero(),
                };
                let alpha = self.t[r * w + j];
                if alpha.abs() <= opts.pivot_tol {
                    continue;
                }
                // direction the entering column moves so x_b heads to target
                let s = if s == S::zero() {
                    if below == (alpha < S::zero()) {
                        S::one()
                    } else {
                        -S::one()
                    }
                } else {
                    s
                };
                let dxb = -alpha * s;
                if below != (dxb > S::zero()) {
                    continue;
                }
                let ratio = self.d[j].abs() / alpha.abs();
                let better = match enter {
                    None => true,
                    Some((c, best, a)) => {
                        if ratio < best - tie {
                            true
                        } else if ratio <= best + tie {
                            if bland {
                                j < c
                            } else {
                                alpha.abs() > a
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    enter = Some((j, ratio, alpha.abs()));
                }
            }
            let Some((q, ratio, _)) = enter else {
                return Ok(LpStatus::Infeasible);
            };
            meter.tick();
            if ratio > S::lit(1e-12) {
                degenerate = 0;
                bland = false;
            } else {
                degenerate += 1;
                if degenerate > opts.degenerate_threshold {
                    bland = true;
                }
            }
            let alpha_rq = self.t[r * w + q];
            let step = (self.x[b] - target) / alpha_rq;
            for i in 0..self.m {
                let a = self.t[i * w + q];
                if a != S::zero() {
                    let bi = self.basis[i];
                    self.x[bi] -= a * step;
                }
            }
            self.x[q] += step;
            self.pivot(r, q);
            self.pos[b] = if below { Pos::Lower } else { Pos::Upper };
            self.x[b] = target;
        }
    }
}

fn default_position<S: Scalar>(lo: S, hi: S, cost: S) -> (Pos, S) {
    if cost < S::zero() && hi.is_finite() {
        (Pos::Upper, hi)
    } else if lo.is_finite() {
        (Pos::Lower, lo)
    } else if hi.is_finite() {
        (Pos::Upper, hi)
    } else {
        (Pos::Zero, S::zero())
    }
}
