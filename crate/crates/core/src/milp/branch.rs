//! Branch-and-bound over binary columns.
//!
//! Nodes are explored best-bound first (ties: deeper, then older). After a
//! node branches, the child on the rounding side is processed immediately on
//! the parent's tableau (a plunge) so incumbents appear early; the sibling is
//! queued with a copy of the parent tableau while the cache has room.
//! Otherwise it is later re-solved on the tableau of the last finished node,
//! with binary bounds reset to the node's fixes, and refactored from the
//! parent basis only when no such tableau is at hand.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::simplex::{LpStatus, Meter, Pos, Tableau};
use super::{Assembled, MilpError, Model, SolveStats, VarKind};
use crate::Scalar;

const TABLEAU_CACHE: usize = 16;
/// Pivots after which a reused tableau is rebuilt to shed rounding error.
const REFACTOR_AGE: u64 = 200;

pub(super) struct Outcome<S> {
    pub incumbent: Option<Vec<S>>,
    /// True when the tree was fully explored (no budget stop).
    pub exhausted: bool,
}

enum Start<S> {
    Tableau(Box<Tableau<S>>),
    Basis {
        basic: Vec<usize>,
        at_upper: Vec<usize>,
    },
}

struct Node<S> {
    bound: S,
    depth: usize,
    seq: u64,
    /// Column bound fixes from the root, applied in order.
    fixes: Vec<(usize, S)>,
    start: Start<S>,
}

impl<S: Scalar> PartialEq for Node<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<S: Scalar> Eq for Node<S> {}

impl<S: Scalar> PartialOrd for Node<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> Ord for Node<S> {
    // BinaryHeap is a max-heap: the "greatest" node is the one to pop.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .as_f64()
            .total_cmp(&self.bound.as_f64())
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

pub(super) fn run<S: Scalar>(
    model: &Model<S>,
    asm: &Assembled<S>,
    root: Tableau<S>,
    start: Option<(S, Vec<S>)>,
    meter: &mut Meter<'_>,
    stats: &mut SolveStats,
) -> Result<Outcome<S>, MilpError> {
    let opts = &model.options;
    let binaries: Vec<usize> = asm
        .cols
        .iter()
        .enumerate()
        .filter(|&(_, &j)| model.vars[j].kind == VarKind::Binary)
        .map(|(k, _)| k)
        .collect();

    let mut heap: BinaryHeap<Node<S>> = BinaryHeap::new();
    let mut cached = 0usize;
    let mut seq = 0u64;
    let mut incumbent: Option<(S, Vec<S>)> = start;
    // (tableau already optimal for this node, depth, fixes)
    let mut current: Option<(Tableau<S>, usize, Vec<(usize, S)>)> = Some((root, 0, Vec::new()));
    // tableau of the last node whose plunge ended
    let mut spare: Option<Tableau<S>> = None;

    loop {
        let (tab, depth, fixes) = match current.take() {
            Some(c) => c,
            None => {
                let Some(node) = heap.pop() else {
                    break;
                };
                if incumbent
                    .as_ref()
                    .is_some_and(|(best, _)| node.bound >= *best - opts.gap_tol)
                {
                    if matches!(node.start, Start::Tableau(_)) {
                        cached -= 1;
                    }
                    continue;
                }
                if meter.exhausted() {
                    return Ok(finish(incumbent, false));
                }
                let mut tab = match node.start {
                    Start::Tableau(t) => {
                        cached -= 1;
                        *t
                    }
                    Start::Basis { basic, at_upper } => {
                        match spare.take().filter(|t| t.age < REFACTOR_AGE) {
                            Some(mut t) => {
                                for &c in &binaries {
                                    t.set_bounds(c, asm.lp.lower[c], asm.lp.upper[c]);
                                }
                                for &(c, v) in &node.fixes[..node.fixes.len() - 1] {
                                    t.set_bounds(c, v, v);
                                }
                                t
                            }
                            None => {
                                let mut t = Tableau::from_basis(&asm.lp, &basic, &at_upper, opts);
                                for &(c, v) in &node.fixes[..node.fixes.len() - 1] {
                                    t.set_bounds(c, v, v);
                                }
                                t
                            }
                        }
                    }
                };
                let &(c, v) = node
                    .fixes
                    .last()
                    .expect("queued nodes carry a branching fix");
                tab.set_bounds(c, v, v);
                stats.nodes += 1;
                stats.lp_solves += 1;
                match model.optimize_checked(asm, &mut tab, meter)? {
                    LpStatus::Optimal => (tab, node.depth, node.fixes),
                    LpStatus::Infeasible | LpStatus::Unbounded => {
                        spare = Some(tab);
                        continue;
                    }
                    LpStatus::Budget => return Ok(finish(incumbent, false)),
                }
            }
        };

        let obj = tab.objective();
        if incumbent
            .as_ref()
            .is_some_and(|(best, _)| obj >= *best - opts.gap_tol)
        {
            spare = Some(tab);
            continue;
        }

        // most fractional binary, lowest column on ties
        let mut branch: Option<(usize, S)> = None;
        for &k in &binaries {
            let v = tab.x[k];
            let frac = (v - v.floor()).min(v.ceil() - v);
            if frac > opts.integrality_tol && branch.is_none_or(|(_, f)| frac > f) {
                branch = Some((k, frac));
            }
        }
        let Some((k, _)) = branch else {
            incumbent = Some((obj, model.expand(asm, &tab)));
            spare = Some(tab);
            continue;
        };

        let up_first = tab.x[k] - tab.x[k].floor() >= S::lit(0.5);
        let (first, second) = if up_first {
            (S::one(), S::zero())
        } else {
            (S::zero(), S::one())
        };

        let mut sibling_fixes = fixes.clone();
        sibling_fixes.push((k, second));
        let start = if cached < TABLEAU_CACHE {
            cached += 1;
            Start::Tableau(Box::new(tab.clone()))
        } else {
            Start::Basis {
                basic: tab.basis.clone(),
                at_upper: (0..tab.width())
                    .filter(|&c| tab.pos[c] == Pos::Upper)
                    .collect(),
            }
        };
        seq += 1;
        heap.push(Node {
            bound: obj,
            depth: depth + 1,
            seq,
            fixes: sibling_fixes,
            start,
        });

        if meter.exhausted() {
            return Ok(finish(incumbent, false));
        }
        let mut tab = tab;
        let mut fixes = fixes;
        fixes.push((k, first));
        tab.set_bounds(k, first, first);
        stats.nodes += 1;
        stats.lp_solves += 1;
        match model.optimize_checked(asm, &mut tab, meter)? {
            LpStatus::Optimal => current = Some((tab, depth + 1, fixes)),
            LpStatus::Infeasible | LpStatus::Unbounded => spare = Some(tab),
            LpStatus::Budget => return Ok(finish(incumbent, false)),
        }
    }
    Ok(finish(incumbent, true))
}

fn finish<S>(incumbent: Option<(S, Vec<S>)>, exhausted: bool) -> Outcome<S> {
    Outcome {
        incumbent: incumbent.map(|(_, v)| v),
        exhausted,
    }
}
