//! Space robustness of sampled trajectories against NNF formulas, with the
//! witness (time index and predicate occurrence) that realizes the value.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::mtl::{NnfFormula, Node, OccId, Polarity};
use crate::predicate::Predicate;
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobustnessError {
    #[error("no predicate named `{0}`")]
    MissingPredicate(String),
    #[error("expected {expected} predicates (one per occurrence), got {got}")]
    OccurrenceCount { expected: usize, got: usize },
    #[error("predicate `{name}` has dimension {pred} but trajectory states have {state}")]
    Dimension {
        name: String,
        pred: usize,
        state: usize,
    },
    #[error("evaluation index {0} is outside the trajectory")]
    Index(usize),
    #[error("empty trajectory")]
    Empty,
    #[error("brute-force expansion limited to N <= {max_n} and depth <= {max_depth}")]
    TooLarge { max_n: usize, max_depth: usize },
}

/// Sampled trajectory; predicates read the leading `dim` components of each
/// state (the output / position coordinates).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory<S> {
    pub states: Vec<Vec<S>>,
    pub dt: f64,
}

impl<S: Scalar> Trajectory<S> {
    pub fn new(states: Vec<Vec<S>>, dt: f64) -> Self {
        Trajectory { states, dt }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Index of the last sample.
    pub fn last_index(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

/// Robustness value with the sample index and occurrence that realize it.
///
/// For vacuous subformulas (an empty time window) the value is infinite and
/// the index/occurrence are only placeholders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Witness<S> {
    pub value: S,
    pub index: usize,
    pub occurrence: OccId,
}

impl<S: Scalar> Witness<S> {
    fn key(&self) -> (usize, OccId) {
        (self.index, self.occurrence)
    }

    /// Smaller value wins; equal values go to the earlier index, then the
    /// lower occurrence id.
    fn min(self, other: Self) -> Self {
        if other.value < self.value || (other.value == self.value && other.key() < self.key()) {
            other
        } else {
            self
        }
    }

    fn max(self, other: Self) -> Self {
        if other.value > self.value || (other.value == self.value && other.key() < self.key()) {
            other
        } else {
            self
        }
    }

    pub fn satisfied(&self) -> bool {
        self.value >= S::zero()
    }
}

/// Robustness of a single literal at one state.
pub fn predicate_robustness<S: Scalar>(pred: &Predicate<S>, polarity: Polarity, state: &[S]) -> S {
    let d = pred.signed_distance(&state[..pred.dim()]);
    match polarity {
        Polarity::Safe => d,
        Polarity::Unsafe => -d,
    }
}

/// Picks the predicate for every occurrence of `nnf` from a name map.
pub fn resolve<S: Scalar>(
    nnf: &NnfFormula,
    preds: &HashMap<String, Predicate<S>>,
) -> Result<Vec<Predicate<S>>, RobustnessError> {
    nnf.occurrences
        .iter()
        .map(|o| {
            preds
                .get(&o.name)
                .cloned()
                .ok_or_else(|| RobustnessError::MissingPredicate(o.name.clone()))
        })
        .collect()
}

/// Shrinks safe sets and grows unsafe sets by `margin`, so that satisfying
/// the resized problem implies robustness at least `margin` on the original.
pub fn resize<S: Scalar>(
    nnf: &NnfFormula,
    per_occ: &[Predicate<S>],
    margin: S,
) -> Vec<Predicate<S>> {
    nnf.occurrences
        .iter()
        .zip(per_occ)
        .map(|(o, p)| match o.polarity {
            Polarity::Safe => p.offset(-margin),
            Polarity::Unsafe => p.offset(margin),
        })
        .collect()
}

fn check<S: Scalar>(
    nnf: &NnfFormula,
    preds: &[Predicate<S>],
    traj: &Trajectory<S>,
    at: usize,
) -> Result<(), RobustnessError> {
    if preds.len() != nnf.occurrences.len() {
        return Err(RobustnessError::OccurrenceCount {
            expected: nnf.occurrences.len(),
            got: preds.len(),
        });
    }
    if traj.is_empty() {
        return Err(RobustnessError::Empty);
    }
    if at >= traj.len() {
        return Err(RobustnessError::Index(at));
    }
    let state = traj.states[0].len();
    if let Some(p) = preds.iter().find(|p| p.dim() > state) {
        return Err(RobustnessError::Dimension {
            name: p.name.clone(),
            pred: p.dim(),
            state,
        });
    }
    Ok(())
}

fn first_occ(node: &Node) -> OccId {
    match node {
        Node::Lit(o) => *o,
        Node::And(cs) | Node::Or(cs) => cs.first().map_or(0, first_occ),
        Node::Globally(_, c) | Node::Eventually(_, c) => first_occ(c),
        Node::Until(_, a, _) => first_occ(a),
    }
}

struct Eval<'a, S> {
    nnf: &'a NnfFormula,
    preds: &'a [Predicate<S>],
    traj: &'a Trajectory<S>,
}

impl<S: Scalar> Eval<'_, S> {
    fn window(&self, k: usize, i: &crate::mtl::Interval) -> std::ops::RangeInclusive<usize> {
        let n = self.traj.last_index();
        let (lo, hi) = i.index_offsets(self.traj.dt);
        let end = hi.map_or(n, |h| (k + h).min(n));
        (k + lo)..=end
    }

    fn eval(&self, node: &Node, k: usize) -> Witness<S> {
        match node {
            Node::Lit(o) => {
                let occ = &self.nnf.occurrences[*o];
                Witness {
                    value: predicate_robustness(
                        &self.preds[*o],
                        occ.polarity,
                        &self.traj.states[k],
                    ),
                    index: k,
                    occurrence: *o,
                }
            }
            Node::And(cs) => cs
                .iter()
                .map(|c| self.eval(c, k))
                .reduce(Witness::min)
                .expect("non-empty conjunction"),
            Node::Or(cs) => cs
                .iter()
                .map(|c| self.eval(c, k))
                .reduce(Witness::max)
                .expect("non-empty disjunction"),
            Node::Globally(i, c) => self
                .window(k, i)
                .map(|j| self.eval(c, j))
                .reduce(Witness::min)
                .unwrap_or(Witness {
                    value: S::infinity(),
                    index: k,
                    occurrence: first_occ(c),
                }),
            Node::Eventually(i, c) => self
                .window(k, i)
                .map(|j| self.eval(c, j))
                .reduce(Witness::max)
                .unwrap_or(Witness {
                    value: S::neg_infinity(),
                    index: k,
                    occurrence: first_occ(c),
                }),
            Node::Until(i, a, b) => {
                let mut best: Option<Witness<S>> = None;
                // running min of the lhs over [k, j)
                let mut prefix: Option<Witness<S>> = None;
                let mut next = k;
                for j in self.window(k, i) {
                    while next < j {
                        let w = self.eval(a, next);
                        prefix = Some(prefix.map_or(w, |p| p.min(w)));
                        next += 1;
                    }
                    let rhs = self.eval(b, j);
                    let cand = prefix.map_or(rhs, |p| p.min(rhs));
                    best = Some(best.map_or(cand, |bw| bw.max(cand)));
                }
                best.unwrap_or(Witness {
                    value: S::neg_infinity(),
                    index: k,
                    occurrence: first_occ(b),
                })
            }
        }
    }
}

/// Robustness of `nnf` at sample `at`, with `preds[o]` the set used for
/// occurrence `o`. Unbounded windows extend to the end of the trajectory;
/// bounded ones are clipped to it.
pub fn evaluate<S: Scalar>(
    nnf: &NnfFormula,
    preds: &[Predicate<S>],
    traj: &Trajectory<S>,
    at: usize,
) -> Result<Witness<S>, RobustnessError> {
    check(nnf, preds, traj, at)?;
    Ok(Eval { nnf, preds, traj }.eval(&nnf.root, at))
}

/// Expanded min/max tree over `(occurrence, index)` leaves.
#[derive(Debug, Clone)]
enum Expanded {
    Leaf(OccId, usize),
    Min(Vec<Expanded>),
    Max(Vec<Expanded>),
}

pub const BRUTE_MAX_N: usize = 12;
pub const BRUTE_MAX_DEPTH: usize = 4;

/// Reference evaluator: expands the formula into an explicit min/max tree
/// over every `(occurrence, index)` leaf, then evaluates it. Exponential;
/// limited to short trajectories and shallow formulas.
pub fn evaluate_brute<S: Scalar>(
    nnf: &NnfFormula,
    preds: &[Predicate<S>],
    traj: &Trajectory<S>,
    at: usize,
) -> Result<Witness<S>, RobustnessError> {
    check(nnf, preds, traj, at)?;
    if traj.last_index() > BRUTE_MAX_N || nnf.formula.depth() > BRUTE_MAX_DEPTH {
        return Err(RobustnessError::TooLarge {
            max_n: BRUTE_MAX_N,
            max_depth: BRUTE_MAX_DEPTH,
        });
    }
    let n = traj.last_index();
    let dt = traj.dt;
    let indices = |k: usize, i: &crate::mtl::Interval| -> Vec<usize> {
        (0..=n)
            .filter(|&j| {
                let t = (j as f64 - k as f64) * dt;
                j >= k && t >= i.lo - 1e-9 * dt && i.hi.is_none_or(|h| t <= h + 1e-9 * dt)
            })
            .collect()
    };
    fn expand(
        node: &Node,
        k: usize,
        idx: &dyn Fn(usize, &crate::mtl::Interval) -> Vec<usize>,
    ) -> Expanded {
        match node {
            Node::Lit(o) => Expanded::Leaf(*o, k),
            Node::And(cs) => Expanded::Min(cs.iter().map(|c| expand(c, k, idx)).collect()),
            Node::Or(cs) => Expanded::Max(cs.iter().map(|c| expand(c, k, idx)).collect()),
            Node::Globally(i, c) => {
                Expanded::Min(idx(k, i).into_iter().map(|j| expand(c, j, idx)).collect())
            }
            Node::Eventually(i, c) => {
                Expanded::Max(idx(k, i).into_iter().map(|j| expand(c, j, idx)).collect())
            }
            Node::Until(i, a, b) => Expanded::Max(
                idx(k, i)
                    .into_iter()
                    .map(|j| {
                        let mut terms = vec![expand(b, j, idx)];
                        terms.extend((k..j).map(|l| expand(a, l, idx)));
                        Expanded::Min(terms)
                    })
                    .collect(),
            ),
        }
    }
    fn value<S: Scalar>(e: &Expanded, leaf: &dyn Fn(OccId, usize) -> S) -> Witness<S> {
        let pick = |cs: &[Expanded], is_min: bool| {
            let mut best: Option<Witness<S>> = None;
            for c in cs {
                let w = value(c, leaf);
                best = Some(match best {
                    None => w,
                    Some(b) => {
                        let better = if is_min {
                            w.value < b.value
                        } else {
                            w.value > b.value
                        };
                        if better
                            || (w.value == b.value
                                && (w.index, w.occurrence) < (b.index, b.occurrence))
                        {
                            w
                        } else {
                            b
                        }
                    }
                });
            }
            best
        };
        match e {
            Expanded::Leaf(o, k) => Witness {
                value: leaf(*o, *k),
                index: *k,
                occurrence: *o,
            },
            Expanded::Min(cs) => pick(cs, true).unwrap_or(Witness {
                value: S::infinity(),
                index: 0,
                occurrence: 0,
            }),
            Expanded::Max(cs) => pick(cs, false).unwrap_or(Witness {
                value: S::neg_infinity(),
                index: 0,
                occurrence: 0,
            }),
        }
    }
    let tree = expand(&nnf.root, at, &indices);
    let leaf = |o: OccId, k: usize| {
        predicate_robustness(&preds[o], nnf.occurrences[o].polarity, &traj.states[k])
    };
    Ok(value(&tree, &leaf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_square(name: &str) -> Predicate<f64> {
        Predicate::axis_box(name, &[0.0, 0.0], &[1.0, 1.0]).unwrap()
    }

    fn line(xs: &[f64]) -> Trajectory<f64> {
        Trajectory::new(xs.iter().map(|&x| vec![x, 0.5]).collect(), 1.0)
    }

    #[test]
    fn literal_values() {
        let nnf = NnfFormula::parse("p").unwrap();
        let p = [unit_square("p")];
        let w = evaluate(&nnf, &p, &line(&[0.5]), 0).unwrap();
        assert_eq!((w.value, w.index, w.occurrence), (0.5, 0, 0));
        let neg = NnfFormula::parse("!p").unwrap();
        assert_eq!(evaluate(&neg, &p, &line(&[2.0]), 0).unwrap().value, 1.0);
    }

    #[test]
    fn globally_picks_worst_sample() {
        let nnf = NnfFormula::parse("G p").unwrap();
        let w = evaluate(&nnf, &[unit_square("p")], &line(&[0.5, 0.8, 1.5, 0.5]), 0).unwrap();
        assert!((w.value + 0.5).abs() < 1e-12);
        assert_eq!(w.index, 2);
    }

    #[test]
    fn ties_prefer_earliest_index_then_lowest_occurrence() {
        let nnf = NnfFormula::parse("G (p & q)").unwrap();
        let preds = [unit_square("p"), unit_square("q")];
        let w = evaluate(&nnf, &preds, &line(&[0.5, 0.5, 0.5]), 0).unwrap();
        assert_eq!((w.index, w.occurrence), (0, 0));
    }

    #[test]
    fn bounded_window_and_eventually() {
        let nnf = NnfFormula::parse("F[1,2] p").unwrap();
        let traj = line(&[0.5, 3.0, 0.75, 0.5]);
        let w = evaluate(&nnf, &[unit_square("p")], &traj, 0).unwrap();
        assert!((w.value - 0.25).abs() < 1e-12);
        assert_eq!(w.index, 2);
    }

    #[test]
    fn until_semantics() {
        // a holds until b becomes true at index 2
        let nnf = NnfFormula::parse("(a U[0,3] b)").unwrap();
        let a = Predicate::axis_box("a", &[0.0, 0.0], &[10.0, 1.0]).unwrap();
        let b = Predicate::axis_box("b", &[4.0, 0.0], &[6.0, 1.0]).unwrap();
        let traj = line(&[1.0, 3.0, 5.0, 7.0]);
        let w = evaluate(&nnf, &[a.clone(), b.clone()], &traj, 0).unwrap();
        assert!((w.value - 0.5).abs() < 1e-12, "{w:?}");
        let brute = evaluate_brute(&nnf, &[a, b], &traj, 0).unwrap();
        assert_eq!(w, brute);
    }

    #[test]
    fn empty_windows_are_vacuous() {
        let nnf = NnfFormula::parse("G[5,6] p").unwrap();
        let w = evaluate(&nnf, &[unit_square("p")], &line(&[3.0]), 0).unwrap();
        assert_eq!(w.value, f64::INFINITY);
        let nnf = NnfFormula::parse("F[5,6] p").unwrap();
        assert_eq!(
            evaluate(&nnf, &[unit_square("p")], &line(&[3.0]), 0)
                .unwrap()
                .value,
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn input_errors() {
        let nnf = NnfFormula::parse("p & q").unwrap();
        let p = unit_square("p");
        assert_eq!(
            evaluate(&nnf, std::slice::from_ref(&p), &line(&[0.0]), 0),
            Err(RobustnessError::OccurrenceCount {
                expected: 2,
                got: 1
            })
        );
        let nnf = NnfFormula::parse("p").unwrap();
        assert_eq!(
            evaluate(&nnf, std::slice::from_ref(&p), &line(&[0.0]), 1),
            Err(RobustnessError::Index(1))
        );
        assert_eq!(
            evaluate(
                &nnf,
                std::slice::from_ref(&p),
                &Trajectory::new(vec![], 1.0),
                0
            ),
            Err(RobustnessError::Empty)
        );
        let short = Trajectory::new(vec![vec![0.0]], 1.0);
        assert!(matches!(
            evaluate(&nnf, &[p], &short, 0),
            Err(RobustnessError::Dimension { .. })
        ));
        let mut map = HashMap::new();
        map.insert("q".to_string(), unit_square("q"));
        assert_eq!(
            resolve(&nnf, &map),
            Err(RobustnessError::MissingPredicate("p".into()))
        );
    }

    #[test]
    fn resizing_moves_faces_by_margin() {
        let nnf = NnfFormula::parse("p & !q").unwrap();
        let sized = resize(&nnf, &[unit_square("p"), unit_square("q")], 0.25);
        assert_eq!(sized[0].b(), &[0.75, -0.25, 0.75, -0.25]);
        assert_eq!(sized[1].b(), &[1.25, 0.25, 1.25, 0.25]);
    }

    #[test]
    fn f32_instantiation() {
        let nnf = NnfFormula::parse("G p").unwrap();
        let p = Predicate::<f32>::axis_box("p", &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let traj = Trajectory::new(vec![vec![0.5f32, 0.5], vec![0.25, 0.5]], 0.5);
        assert_eq!(evaluate(&nnf, &[p], &traj, 0).unwrap().value, 0.25);
    }

    fn formula_strategy() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            Just("p".to_string()),
            Just("!p".to_string()),
            Just("q".to_string()),
            Just("!q".to_string())
        ];
        leaf.prop_recursive(3, 12, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} & {b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} | {b})")),
                (inner.clone(), 0u8..3, 0u8..4)
                    .prop_map(|(a, l, w)| format!("G[{l},{}] {a}", l + w)),
                (inner.clone(), 0u8..3, 0u8..4)
                    .prop_map(|(a, l, w)| format!("F[{l},{}] {a}", l + w)),
                inner.clone().prop_map(|a| format!("G {a}")),
                (inner.clone(), inner, 0u8..3).prop_map(|(a, b, w)| format!("({a} U[0,{w}] {b})")),
            ]
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            text in formula_strategy(),
            xs in proptest::collection::vec(-1.0f64..2.0, 1..8),
        ) {
            let nnf = NnfFormula::parse(&text).unwrap();
            prop_assume!(nnf.formula.depth() <= BRUTE_MAX_DEPTH);
            let p = unit_square("p");
            let q = Predicate::axis_box("q", &[0.5, 0.0], &[1.5, 1.0]).unwrap();
            let per_occ: Vec<_> = nnf.occurrences.iter().map(|o| if o.name == "p" { p.clone() } else { q.clone() }).collect();
            let traj = line(&xs);
            let fast = evaluate(&nnf, &per_occ, &traj, 0).unwrap();
            let slow = evaluate_brute(&nnf, &per_occ, &traj, 0).unwrap();
            prop_assert!(fast.value == slow.value || (fast.value - slow.value).abs() <= 1e-9);
        }

        #[test]
        fn witness_reproduces_value(
            text in formula_strategy(),
            xs in proptest::collection::vec(-1.0f64..2.0, 1..8),
        ) {
            let nnf = NnfFormula::parse(&text).unwrap();
            let p = unit_square("p");
            let per_occ: Vec<_> = nnf.occurrences.iter().map(|_| p.clone()).collect();
            let traj = line(&xs);
            let w = evaluate(&nnf, &per_occ, &traj, 0).unwrap();
            prop_assume!(w.value.is_finite());
            let o = &nnf.occurrences[w.occurrence];
            let direct = predicate_robustness(&per_occ[w.occurrence], o.polarity, &traj.states[w.index]);
            prop_assert_eq!(direct, w.value);
        }

        #[test]
        fn resizing_shifts_conjunctive_robustness(
            xs in proptest::collection::vec(-1.0f64..2.0, 1..8),
            margin in 0.0f64..0.5,
        ) {
            // on G(p & !q) every literal moves by exactly the margin
            let nnf = NnfFormula::parse("G (p & !q)").unwrap();
            let q = Predicate::axis_box("q", &[5.0, 0.0], &[6.0, 1.0]).unwrap();
            let preds = vec![unit_square("p"), q];
            let traj = line(&xs);
            let orig = evaluate(&nnf, &preds, &traj, 0).unwrap().value;
            let sized = evaluate(&nnf, &resize(&nnf, &preds, margin), &traj, 0).unwrap().value;
            prop_assert!((orig - margin - sized).abs() < 1e-9);
        }
    }
}
