//! Translation of a planning problem into a MILP whose predicate constraints
//! are all pre-encoded but switched off.
//!
//! Every `(occurrence, k)` pair owns a row group: `A y_k <= b~ - eps` for a
//! safe occurrence, and `A y_k + M z >= b~ + eps`, `sum z <= f - 1` for an
//! unsafe one, where `y_k` are the output coordinates of `x_k` and `b~` the
//! offsets resized by the robustness target. Groups are activated one at a
//! time by the synthesis loop.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

mod condensed;

use condensed::Condensed;

use crate::dynamics::LinearSystem;
use crate::milp::{Budget, MilpError, Model, Relation, RowId, Solution, VarId};
use crate::mtl::{Interval, MtlError, NnfFormula, Node, OccId, Polarity};
use crate::predicate::{Predicate, PredicateError};
use crate::robustness::{self, Trajectory};
use crate::Scalar;

/// Strict margin added to every predicate row so that solutions within the
/// solver's feasibility tolerance still have non-negative robustness.
pub const ENCODING_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("formula references undefined predicate `{0}`")]
    MissingPredicate(String),
    #[error("resized safe predicate `{0}` is empty")]
    EmptyResized(String),
    #[error("workspace box must be bounded with lower <= upper")]
    Workspace,
    #[error("robustness target must be finite and non-negative")]
    Robustness,
    #[error("predicate `{name}` has {got} faces, encoded with {expected}")]
    FaceCount {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("no row group for occurrence {0} at index {1}")]
    UnknownPair(OccId, usize),
    #[error("prefix of length {0} exceeds the horizon")]
    Prefix(usize),
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Mtl(#[from] MtlError),
    #[error(transparent)]
    Predicate(#[from] PredicateError),
    #[error(transparent)]
    Milp(#[from] MilpError),
}

/// Everything needed to build the MILP.
#[derive(Debug, Clone)]
pub struct PlanningProblem<S> {
    pub system: LinearSystem<S>,
    pub formula: NnfFormula,
    /// Predicates by name; names must be unique.
    pub predicates: Vec<Predicate<S>>,
    /// Box on the output coordinates.
    pub workspace: (Vec<S>, Vec<S>),
    /// Optional box on the remaining state coordinates.
    pub state_bounds: Option<(Vec<S>, Vec<S>)>,
    pub input_bounds: (Vec<S>, Vec<S>),
    /// Per-input effort weights.
    pub weights: Vec<S>,
    pub x0: Vec<S>,
    /// Horizon length N (trajectory indices 0..=N).
    pub horizon: usize,
    /// Desired robustness, used to resize predicates.
    pub robustness: S,
}

impl<S: Scalar> PlanningProblem<S> {
    pub fn predicate(&self, name: &str) -> Option<&Predicate<S>> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn validate(&self) -> Result<(), EncodingError> {
        let sys = &self.system;
        let (nx, nu, ny) = (sys.state_dim(), sys.input_dim(), sys.outputs);
        let dim = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(EncodingError::Dimension(format!(
                    "{what} has length {got}, expected {want}"
                )))
            }
        };
        dim("x0", self.x0.len(), nx)?;
        dim("workspace lower", self.workspace.0.len(), ny)?;
        dim("workspace upper", self.workspace.1.len(), ny)?;
        dim("input lower bound", self.input_bounds.0.len(), nu)?;
        dim("input upper bound", self.input_bounds.1.len(), nu)?;
        dim("weights", self.weights.len(), nu)?;
        if let Some((lo, hi)) = &self.state_bounds {
            dim("state lower bound", lo.len(), nx - ny)?;
            dim("state upper bound", hi.len(), nx - ny)?;
        }
        let (lo, hi) = &self.workspace;
        if lo
            .iter()
            .zip(hi)
            .any(|(l, h)| !l.is_finite() || !h.is_finite() || l > h)
        {
            return Err(EncodingError::Workspace);
        }
        if !self.robustness.is_finite() || self.robustness < S::zero() {
            return Err(EncodingError::Robustness);
        }
        for o in &self.formula.occurrences {
            let p = self
                .predicate(&o.name)
                .ok_or_else(|| EncodingError::MissingPredicate(o.name.clone()))?;
            dim(&format!("predicate `{}`", p.name), p.dim(), ny)?;
            if o.polarity == Polarity::Safe {
                let r = p.offset(-self.robustness);
                if r.chebyshev_radius(S::lit(1e6))?
                    .is_none_or(|rad| rad <= S::zero())
                {
                    return Err(EncodingError::EmptyResized(p.name.clone()));
                }
            }
        }
        Ok(())
    }

    /// Original predicate of every occurrence, in occurrence order.
    pub fn occurrence_predicates(&self) -> Result<Vec<Predicate<S>>, EncodingError> {
        self.formula
            .occurrences
            .iter()
            .map(|o| {
                self.predicate(&o.name)
                    .cloned()
                    .ok_or_else(|| EncodingError::MissingPredicate(o.name.clone()))
            })
            .collect()
    }
}

/// Big-M for a resized unsafe predicate: large enough that every face row
/// `a_i y + M >= b~_i + eps` holds for every `y` in the box.
pub fn compute_big_m<S: Scalar>(pred: &Predicate<S>, lower: &[S], upper: &[S]) -> S {
    let mut m = S::zero();
    for (a, &b) in pred.a().iter().zip(pred.b()) {
        let min_ay = a
            .iter()
            .zip(lower.iter().zip(upper))
            .fold(S::zero(), |s, (&ai, (&l, &h))| {
                s + if ai >= S::zero() { ai * l } else { ai * h }
            });
        m = m.max(b - min_ay);
    }
    (m + S::one()).max(S::one())
}

/// Largest value of `a_i y - b_i` over the box: the relaxation needed to
/// switch off a safe face row.
fn safe_relaxation<S: Scalar>(pred: &Predicate<S>, lower: &[S], upper: &[S]) -> S {
    let mut m = S::zero();
    for (a, &b) in pred.a().iter().zip(pred.b()) {
        let max_ay = a
            .iter()
            .zip(lower.iter().zip(upper))
            .fold(S::zero(), |s, (&ai, (&l, &h))| {
                s + if ai >= S::zero() { ai * h } else { ai * l }
            });
        m = m.max(max_ay - b);
    }
    (m + S::one()).max(S::one())
}

/// Row group of one `(occurrence, k)` pair.
#[derive(Debug, Clone)]
pub struct RowGroup {
    pub rows: Vec<RowId>,
    /// Face selectors (unsafe occurrences only).
    pub z: Vec<VarId>,
    /// Cardinality row `sum z <= f - 1` (unsafe occurrences only).
    pub card: Option<RowId>,
}

/// Boolean-indicator structure used by the complete encoding of formulas
/// outside the conjunctive/globally fragment.
#[derive(Debug, Clone, Default)]
struct Indicators {
    /// Safe rows `a y + Ms b <= b~ - eps + Ms` per `(occ, k)`.
    safe_rows: HashMap<(OccId, usize), Vec<RowId>>,
    leaf: HashMap<(OccId, usize), VarId>,
}

#[derive(Debug, Clone)]
pub struct EncodedScenario<S> {
    pub problem: PlanningProblem<S>,
    model: Model<S>,
    pub x: Vec<Vec<VarId>>,
    pub u: Vec<Vec<VarId>>,
    pub s: Vec<Vec<VarId>>,
    /// `groups[occ][k]` for `k` in `0..=N`.
    pub groups: Vec<Vec<RowGroup>>,
    /// Big-M per occurrence (zero for safe occurrences).
    pub big_m: Vec<S>,
    original: Vec<Predicate<S>>,
    resized: Vec<Predicate<S>>,
    active: BTreeSet<(OccId, usize)>,
    activations: Vec<(OccId, usize)>,
    indicators: Option<Indicators>,
    prefix: usize,
    /// Number of dynamics and effort rows, which come first.
    structural: usize,
    /// Reduced copy of the model the solver works on, built on first solve.
    condensed: Option<Condensed<S>>,
    /// Values of the last solve.
    last: Option<Vec<S>>,
}

impl<S: Scalar> EncodedScenario<S> {
    /// Builds the lazy encoding: dynamics, bounds and objective active, every
    /// predicate group inactive.
    pub fn encode(problem: PlanningProblem<S>) -> Result<Self, EncodingError> {
        problem.validate()?;
        let sys = &problem.system;
        let (nx, nu, ny) = (sys.state_dim(), sys.input_dim(), sys.outputs);
        let n = problem.horizon;
        let eps = S::lit(ENCODING_MARGIN);
        let mut model = Model::new();
        let (wl, wh) = &problem.workspace;

        let mut x = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let row: Vec<VarId> = (0..nx)
                .map(|d| {
                    let (lo, hi) = if k == 0 {
                        (problem.x0[d], problem.x0[d])
                    } else if d < ny {
                        (wl[d], wh[d])
                    } else if let Some((lo, hi)) = &problem.state_bounds {
                        (lo[d - ny], hi[d - ny])
                    } else {
                        (S::neg_infinity(), S::infinity())
                    };
                    model.add_continuous(&format!("x_{k}_{d}"), lo, hi)
                })
                .collect();
            x.push(row);
        }
        let (ul, uh) = &problem.input_bounds;
        let u: Vec<Vec<VarId>> = (0..n)
            .map(|k| {
                (0..nu)
                    .map(|d| model.add_continuous(&format!("u_{k}_{d}"), ul[d], uh[d]))
                    .collect()
            })
            .collect();
        let s: Vec<Vec<VarId>> = (0..n)
            .map(|k| {
                (0..nu)
                    .map(|d| model.add_continuous(&format!("s_{k}_{d}"), S::zero(), S::infinity()))
                    .collect()
            })
            .collect();

        for k in 0..n {
            for i in 0..nx {
                let mut coeffs = vec![(x[k + 1][i], S::one())];
                coeffs.extend(
                    (0..nx)
                        .filter(|&j| sys.a[i][j] != S::zero())
                        .map(|j| (x[k][j], -sys.a[i][j])),
                );
                coeffs.extend(
                    (0..nu)
                        .filter(|&j| sys.b[i][j] != S::zero())
                        .map(|j| (u[k][j], -sys.b[i][j])),
                );
                model.add_row(&format!("dyn_{k}_{i}"), coeffs, Relation::Eq, S::zero());
            }
            for d in 0..nu {
                model.add_row(
                    &format!("effp_{k}_{d}"),
                    vec![(u[k][d], S::one()), (s[k][d], -S::one())],
                    Relation::Le,
                    S::zero(),
                );
                model.add_row(
                    &format!("effn_{k}_{d}"),
                    vec![(u[k][d], S::one()), (s[k][d], S::one())],
                    Relation::Ge,
                    S::zero(),
                );
            }
        }
        let structural = model.num_rows();
        let mut objective = Vec::new();
        for sk in &s {
            for (d, &v) in sk.iter().enumerate() {
                if problem.weights[d] != S::zero() {
                    objective.push((v, problem.weights[d]));
                }
            }
        }
        model.set_objective(objective);

        let original = problem.occurrence_predicates()?;
        let resized = robustness::resize(&problem.formula, &original, problem.robustness);
        let mut groups = Vec::with_capacity(original.len());
        let mut big_m = Vec::with_capacity(original.len());
        for (o, occ) in problem.formula.occurrences.iter().enumerate() {
            let p = &resized[o];
            let mut per_k = Vec::with_capacity(n + 1);
            match occ.polarity {
                Polarity::Safe => {
                    big_m.push(S::zero());
                    for k in 0..=n {
                        let rows = (0..p.faces())
                            .map(|i| {
                                let coeffs = (0..ny).map(|d| (x[k][d], p.a()[i][d])).collect();
                                model.add_row_with(
                                    &format!("occ{o}_{k}_{i}"),
                                    coeffs,
                                    Relation::Le,
                                    p.b()[i] - eps,
                                    false,
                                )
                            })
                            .collect();
                        per_k.push(RowGroup {
                            rows,
                            z: Vec::new(),
                            card: None,
                        });
                    }
                }
                Polarity::Unsafe => {
                    let m = compute_big_m(p, wl, wh);
                    big_m.push(m);
                    for k in 0..=n {
                        let z: Vec<VarId> = (0..p.faces())
                            .map(|i| model.add_binary(&format!("z_{o}_{k}_{i}")))
                            .collect();
                        let rows = (0..p.faces())
                            .map(|i| {
                                let mut coeffs: Vec<_> =
                                    (0..ny).map(|d| (x[k][d], p.a()[i][d])).collect();
                                coeffs.push((z[i], m));
                                model.add_row_with(
                                    &format!("occ{o}_{k}_{i}"),
                                    coeffs,
                                    Relation::Ge,
                                    p.b()[i] + eps,
                                    false,
                                )
                            })
                            .collect();
                        let card = model.add_row_with(
                            &format!("card{o}_{k}"),
                            z.iter().map(|&v| (v, S::one())).collect(),
                            Relation::Le,
                            S::lit((p.faces() - 1) as f64),
                            false,
                        );
                        per_k.push(RowGroup {
                            rows,
                            z,
                            card: Some(card),
                        });
                    }
                }
            }
            groups.push(per_k);
        }

        let mut enc = EncodedScenario {
            problem,
            model,
            x,
            u,
            s,
            groups,
            big_m,
            original,
            resized,
            active: BTreeSet::new(),
            activations: Vec::new(),
            indicators: None,
            prefix: 0,
            structural,
            condensed: None,
            last: None,
        };
        for o in 0..enc.resized.len() {
            enc.pin_repeated_faces(o)?;
        }
        Ok(enc)
    }

    /// Fixes the selectors of faces that repeat an earlier face (padding) to
    /// one, so branching never tells copies of the same face apart.
    fn pin_repeated_faces(&mut self, o: OccId) -> Result<(), EncodingError> {
        let p = &self.resized[o];
        let repeated: Vec<bool> = (0..p.faces())
            .map(|i| (0..i).any(|j| p.a()[j] == p.a()[i] && p.b()[j] == p.b()[i]))
            .collect();
        for g in &self.groups[o] {
            for (&z, &rep) in g.z.iter().zip(&repeated) {
                let lo = if rep { S::one() } else { S::zero() };
                self.model.set_bounds(z, lo, S::one())?;
            }
        }
        Ok(())
    }

    /// Non-lazy encoding. On the conjunctive/globally fragment this activates
    /// every group the formula consults; otherwise it adds Boolean indicators
    /// so that disjunctions and eventualities are encoded exactly.
    pub fn encode_full(problem: PlanningProblem<S>) -> Result<Self, EncodingError> {
        let mut enc = Self::encode(problem)?;
        if enc.problem.formula.is_conjunctive_globally() {
            for (o, window) in enc.windows().into_iter().enumerate() {
                for k in window {
                    enc.activate(o, k)?;
                }
            }
        } else {
            enc.add_indicators();
        }
        Ok(enc)
    }

    /// Sample indices each occurrence is consulted at.
    pub fn windows(&self) -> Vec<BTreeSet<usize>> {
        self.problem
            .formula
            .occurrence_windows(self.problem.system.dt, self.problem.horizon)
    }

    /// Number of row groups the non-lazy encoding switches on.
    pub fn full_group_count(&self) -> usize {
        self.windows().iter().map(BTreeSet::len).sum()
    }

    /// Number of pre-encoded row groups.
    pub fn encoded_group_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    fn add_indicators(&mut self) {
        let mut ind = Indicators::default();
        let nnf = self.problem.formula.clone();
        let mut memo: HashMap<(usize, usize), VarId> = HashMap::new();
        let root = self.indicator(&nnf.root, 0, &mut ind, &mut memo);
        let one = S::one();
        self.model
            .set_bounds(root, one, one)
            .expect("indicator variable exists");
        self.indicators = Some(ind);
    }

    fn window(&self, k: usize, i: &Interval) -> std::ops::RangeInclusive<usize> {
        let n = self.problem.horizon;
        let (lo, hi) = i.index_offsets(self.problem.system.dt);
        (k + lo)..=hi.map_or(n, |h| (k + h).min(n))
    }

    fn indicator(
        &mut self,
        node: &Node,
        k: usize,
        ind: &mut Indicators,
        memo: &mut HashMap<(usize, usize), VarId>,
    ) -> VarId {
        let key = (node as *const Node as usize, k);
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let one = S::one();
        let tag = self.model.num_vars();
        let v = match node {
            Node::Lit(o) => self.leaf_indicator(*o, k, ind),
            Node::And(cs) => {
                let v = self
                    .model
                    .add_continuous(&format!("b_and{tag}"), S::zero(), one);
                for c in cs {
                    let cv = self.indicator(c, k, ind, memo);
                    self.model.add_row(
                        &format!("and{tag}"),
                        vec![(v, one), (cv, -one)],
                        Relation::Le,
                        S::zero(),
                    );
                }
                v
            }
            Node::Globally(i, c) => {
                let v = self
                    .model
                    .add_continuous(&format!("b_g{tag}"), S::zero(), one);
                for j in self.window(k, i) {
                    let cv = self.indicator(c, j, ind, memo);
                    self.model.add_row(
                        &format!("g{tag}_{j}"),
                        vec![(v, one), (cv, -one)],
                        Relation::Le,
                        S::zero(),
                    );
                }
                v
            }
            Node::Or(cs) => {
                let v = self
                    .model
                    .add_continuous(&format!("b_or{tag}"), S::zero(), one);
                let mut coeffs = vec![(v, one)];
                for c in cs {
                    coeffs.push((self.indicator(c, k, ind, memo), -one));
                }
                self.model
                    .add_row(&format!("or{tag}"), coeffs, Relation::Le, S::zero());
                v
            }
            Node::Eventually(i, c) => {
                let v = self
                    .model
                    .add_continuous(&format!("b_f{tag}"), S::zero(), one);
                let mut coeffs = vec![(v, one)];
                for j in self.window(k, i) {
                    coeffs.push((self.indicator(c, j, ind, memo), -one));
                }
                self.model
                    .add_row(&format!("f{tag}"), coeffs, Relation::Le, S::zero());
                v
            }
            Node::Until(i, a, b) => {
                let v = self
                    .model
                    .add_continuous(&format!("b_u{tag}"), S::zero(), one);
                let mut coeffs = vec![(v, one)];
                for j in self.window(k, i) {
                    let w = self
                        .model
                        .add_continuous(&format!("b_u{tag}_{j}"), S::zero(), one);
                    coeffs.push((w, -one));
                    let rv = self.indicator(b, j, ind, memo);
                    self.model.add_row(
                        &format!("u{tag}_{j}"),
                        vec![(w, one), (rv, -one)],
                        Relation::Le,
                        S::zero(),
                    );
                    for l in k..j {
                        let lv = self.indicator(a, l, ind, memo);
                        self.model.add_row(
                            &format!("u{tag}_{j}_{l}"),
                            vec![(w, one), (lv, -one)],
                            Relation::Le,
                            S::zero(),
                        );
                    }
                }
                self.model
                    .add_row(&format!("u{tag}"), coeffs, Relation::Le, S::zero());
                v
            }
        };
        memo.insert(key, v);
        v
    }

    /// Binary `b` that, when 1, enforces the literal `(o, k)`.
    fn leaf_indicator(&mut self, o: OccId, k: usize, ind: &mut Indicators) -> VarId {
        if let Some(&b) = ind.leaf.get(&(o, k)) {
            return b;
        }
        let b = self.model.add_binary(&format!("b_{o}_{k}"));
        let eps = S::lit(ENCODING_MARGIN);
        let p = self.resized[o].clone();
        let ny = self.problem.system.outputs;
        let (wl, wh) = self.problem.workspace.clone();
        match self.problem.formula.occurrences[o].polarity {
            Polarity::Safe => {
                let ms = safe_relaxation(&p.offset(-eps), &wl, &wh);
                let rows = (0..p.faces())
                    .map(|i| {
                        let mut coeffs: Vec<_> =
                            (0..ny).map(|d| (self.x[k][d], p.a()[i][d])).collect();
                        coeffs.push((b, ms));
                        self.model.add_row(
                            &format!("ind{o}_{k}_{i}"),
                            coeffs,
                            Relation::Le,
                            p.b()[i] - eps + ms,
                        )
                    })
                    .collect();
                ind.safe_rows.insert((o, k), rows);
            }
            Polarity::Unsafe => {
                let g = &self.groups[o][k];
                for &r in &g.rows {
                    self.model
                        .set_row_active(r, true)
                        .expect("group row exists");
                }
                let mut coeffs: Vec<_> = g.z.iter().map(|&z| (z, S::one())).collect();
                coeffs.push((b, S::one()));
                let f = S::lit(g.z.len() as f64);
                self.model
                    .add_row(&format!("indcard{o}_{k}"), coeffs, Relation::Le, f);
            }
        }
        ind.leaf.insert((o, k), b);
        b
    }

    pub fn model(&self) -> &Model<S> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model<S> {
        &mut self.model
    }

    pub fn horizon(&self) -> usize {
        self.problem.horizon
    }

    /// Original (unresized) predicate of every occurrence.
    pub fn original_predicates(&self) -> &[Predicate<S>] {
        &self.original
    }

    /// Resized predicate of every occurrence.
    pub fn resized_predicates(&self) -> &[Predicate<S>] {
        &self.resized
    }

    pub fn is_active(&self, occ: OccId, k: usize) -> bool {
        self.active.contains(&(occ, k))
    }

    /// Activations in the order they were made.
    pub fn activations(&self) -> &[(OccId, usize)] {
        &self.activations
    }

    /// Switches on the row group of `(occ, k)`. Returns false when it was
    /// already active.
    pub fn activate(&mut self, occ: OccId, k: usize) -> Result<bool, EncodingError> {
        let group = self
            .groups
            .get(occ)
            .and_then(|g| g.get(k))
            .ok_or(EncodingError::UnknownPair(occ, k))?;
        if !self.active.insert((occ, k)) {
            return Ok(false);
        }
        for &r in group.rows.iter().chain(&group.card) {
            self.model.set_row_active(r, true)?;
        }
        self.activations.push((occ, k));
        Ok(true)
    }

    /// Replaces the geometry of every occurrence of predicate `name`. A set
    /// with fewer faces than encoded is padded by repeating its last face.
    pub fn update_predicate(
        &mut self,
        name: &str,
        pred: &Predicate<S>,
    ) -> Result<(), EncodingError> {
        if self.indicators.is_some() {
            return Err(EncodingError::Unsupported(
                "geometry updates on the indicator encoding".into(),
            ));
        }
        let occs: Vec<OccId> = self
            .problem
            .formula
            .occurrences
            .iter()
            .filter(|o| o.name == name)
            .map(|o| o.id)
            .collect();
        let slot = self.problem.predicates.iter().position(|p| p.name == name);
        let Some(slot) = slot else {
            return Err(EncodingError::MissingPredicate(name.to_string()));
        };
        let expected = self.problem.predicates[slot].faces();
        if pred.faces() > expected {
            return Err(EncodingError::FaceCount {
                name: name.to_string(),
                expected,
                got: pred.faces(),
            });
        }
        if pred.dim() != self.problem.system.outputs {
            return Err(EncodingError::Dimension(format!(
                "predicate `{name}` has dimension {}",
                pred.dim()
            )));
        }
        let new = pred.padded_to(expected)?.renamed(name);
        let eps = S::lit(ENCODING_MARGIN);
        let rho = self.problem.robustness;
        let ny = self.problem.system.outputs;
        let (wl, wh) = self.problem.workspace.clone();
        for &o in &occs {
            let polarity = self.problem.formula.occurrences[o].polarity;
            let resized = match polarity {
                Polarity::Safe => {
                    let r = new.offset(-rho);
                    if r.chebyshev_radius(S::lit(1e6))?
                        .is_none_or(|rad| rad <= S::zero())
                    {
                        return Err(EncodingError::EmptyResized(name.to_string()));
                    }
                    r
                }
                Polarity::Unsafe => new.offset(rho),
            };
            if polarity == Polarity::Unsafe {
                self.big_m[o] = self.big_m[o].max(compute_big_m(&resized, &wl, &wh));
            }
            for k in 0..self.groups[o].len() {
                for i in 0..expected {
                    let mut coeffs: Vec<_> =
                        (0..ny).map(|d| (self.x[k][d], resized.a()[i][d])).collect();
                    let row = self.groups[o][k].rows[i];
                    let rhs = match polarity {
                        Polarity::Safe => resized.b()[i] - eps,
                        Polarity::Unsafe => {
                            coeffs.push((self.groups[o][k].z[i], self.big_m[o]));
                            resized.b()[i] + eps
                        }
                    };
                    self.model.update_row(row, coeffs, rhs)?;
                }
            }
            self.original[o] = new.clone();
            self.resized[o] = resized;
            self.pin_repeated_faces(o)?;
        }
        self.problem.predicates[slot] = new;
        Ok(())
    }

    /// Pins `x_0..x_{len-1}` and the inputs between them to executed values.
    pub fn fix_prefix(
        &mut self,
        states: &[Vec<S>],
        inputs: &[Vec<S>],
    ) -> Result<(), EncodingError> {
        if states.len() > self.problem.horizon + 1 || inputs.len() > self.problem.horizon {
            return Err(EncodingError::Prefix(states.len()));
        }
        for (k, st) in states.iter().enumerate() {
            for (d, &v) in st.iter().enumerate() {
                self.model.set_bounds(self.x[k][d], v, v)?;
            }
        }
        for (k, inp) in inputs.iter().enumerate() {
            for (d, &v) in inp.iter().enumerate() {
                self.model.set_bounds(self.u[k][d], v, v)?;
            }
        }
        self.prefix = states.len();
        Ok(())
    }

    /// Number of pinned states.
    pub fn prefix_len(&self) -> usize {
        self.prefix
    }

    /// Solves the current model. The solver works in input space (states
    /// substituted out, state bounds enforced on demand) and the result is
    /// mapped back onto the model's variables.
    ///
    /// The previous solution seeds the search: kept as is while feasible (so
    /// an unchanged plan survives among equal-cost optima), otherwise with
    /// its face choices re-solved for the current constraints.
    pub fn solve(&mut self, budget: &Budget) -> Result<Solution<S>, EncodingError> {
        let start = self.start_hint();
        let condensed = self.condensed.get_or_insert_with(|| {
            Condensed::new(
                &self.problem.system,
                &self.x,
                &self.u,
                &self.s,
                self.structural,
                &self.model,
            )
        });
        let sol = condensed.solve(&self.model, budget, start.as_deref())?;
        if sol.values.is_some() {
            self.last = sol.values.clone();
        }
        Ok(sol)
    }

    /// Last solution with every active unsafe group set to the face its
    /// trajectory point clears by the widest margin.
    fn start_hint(&self) -> Option<Vec<S>> {
        let mut v = self.last.clone()?;
        let ny = self.problem.system.outputs;
        for &(o, k) in &self.active {
            let g = &self.groups[o][k];
            if g.z.is_empty() {
                continue;
            }
            let p = &self.resized[o];
            let y: Vec<S> = self.x[k][..ny].iter().map(|id| v[id.0]).collect();
            let mut best: Option<(usize, S)> = None;
            for (i, &z) in g.z.iter().enumerate() {
                if self.model.var(z).lower == S::one() {
                    continue;
                }
                let slack = p.a()[i]
                    .iter()
                    .zip(&y)
                    .fold(-p.b()[i], |acc, (&a, &yv)| acc + a * yv);
                if best.is_none_or(|(_, s)| slack > s) {
                    best = Some((i, slack));
                }
            }
            for (i, &z) in g.z.iter().enumerate() {
                v[z.0] = if best.is_some_and(|(b, _)| b == i) {
                    S::zero()
                } else {
                    S::one()
                };
            }
        }
        Some(v)
    }

    /// Solves the model as encoded, with states, dynamics rows and effort
    /// slacks all handed to the solver.
    pub fn solve_uncondensed(&mut self, budget: &Budget) -> Result<Solution<S>, EncodingError> {
        Ok(self.model.solve_milp(budget)?)
    }

    pub fn states(&self, sol: &Solution<S>) -> Option<Vec<Vec<S>>> {
        let v = sol.values.as_ref()?;
        Some(
            self.x
                .iter()
                .map(|row| row.iter().map(|id| v[id.0]).collect())
                .collect(),
        )
    }

    pub fn inputs(&self, sol: &Solution<S>) -> Option<Vec<Vec<S>>> {
        let v = sol.values.as_ref()?;
        Some(
            self.u
                .iter()
                .map(|row| row.iter().map(|id| v[id.0]).collect())
                .collect(),
        )
    }

    pub fn trajectory(&self, sol: &Solution<S>) -> Option<Trajectory<S>> {
        Some(Trajectory::new(self.states(sol)?, self.problem.system.dt))
    }

    /// Effort `sum_k sum_j R_j |u_kj|` of an input sequence.
    pub fn effort(&self, inputs: &[Vec<S>]) -> S {
        inputs
            .iter()
            .flat_map(|u| {
                u.iter()
                    .zip(&self.problem.weights)
                    .map(|(&v, &w)| v.abs() * w)
            })
            .fold(S::zero(), |a, b| a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::double_integrator_2d;

    fn phi1_like(goal: Predicate<f64>) -> PlanningProblem<f64> {
        PlanningProblem {
            system: double_integrator_2d(0.5).unwrap(),
            formula: NnfFormula::parse("(G !unsafe) & (G[8.5,10] goal)").unwrap(),
            predicates: vec![
                Predicate::axis_box("unsafe", &[4.0, 2.0], &[6.0, 4.5]).unwrap(),
                goal,
            ],
            workspace: (vec![0.0, 0.0], vec![10.0, 6.0]),
            state_bounds: None,
            input_bounds: (vec![-2.0, -2.0], vec![2.0, 2.0]),
            weights: vec![1.0, 1.0],
            x0: vec![1.0, 3.0, 0.5, 0.0],
            horizon: 20,
            robustness: 0.5,
        }
    }

    fn goal() -> Predicate<f64> {
        Predicate::axis_box("goal", &[8.0, 2.5], &[9.5, 4.0]).unwrap()
    }

    #[test]
    fn big_m_closed_form() {
        let face = Predicate::new("f", vec![vec![1.0, 0.0]], vec![1.0]).unwrap();
        assert_eq!(compute_big_m(&face, &[0.0, 0.0], &[10.0, 10.0]), 2.0);
        let face = Predicate::new("f", vec![vec![-1.0, 0.0]], vec![0.0]).unwrap();
        assert_eq!(compute_big_m(&face, &[0.0, 0.0], &[10.0, 10.0]), 11.0);
        let face = Predicate::new("f", vec![vec![1.0, 0.0]], vec![0.0]).unwrap();
        assert_eq!(compute_big_m(&face, &[-3.0, -3.0], &[3.0, 3.0]), 4.0);
    }

    #[test]
    fn model_shape_by_construction() {
        let enc = EncodedScenario::encode(phi1_like(goal())).unwrap();
        let m = enc.model();
        assert_eq!(enc.x.len(), 21);
        assert_eq!(enc.x.iter().flatten().count(), 4 * 21);
        assert_eq!(enc.u.iter().flatten().count(), 2 * 20);
        assert_eq!(enc.s.iter().flatten().count(), 2 * 20);
        assert_eq!(enc.groups.len(), 2);
        assert!(enc.groups.iter().all(|g| g.len() == 21));
        assert_eq!(enc.encoded_group_count(), 42);
        assert_eq!(enc.full_group_count(), 21 + 4);
        let binaries = m
            .vars()
            .iter()
            .filter(|v| v.kind == crate::milp::VarKind::Binary)
            .count();
        assert_eq!(binaries, 4 * 21);
        // unsafe groups: f binaries plus the cardinality row; safe groups none
        assert!(enc.groups[0]
            .iter()
            .all(|g| g.z.len() == 4 && g.card.is_some()));
        assert!(enc.groups[1]
            .iter()
            .all(|g| g.z.is_empty() && g.card.is_none()));
        assert_eq!(m.num_active_rows(), 20 * 4 + 20 * 4);
    }

    #[test]
    fn empty_resized_goal_is_rejected() {
        let tight = Predicate::axis_box("goal", &[8.0, 2.5], &[9.0, 3.5]).unwrap();
        assert_eq!(
            EncodedScenario::encode(phi1_like(tight)).unwrap_err(),
            EncodingError::EmptyResized("goal".into())
        );
    }

    #[test]
    fn zero_robustness_keeps_offsets() {
        let mut p = phi1_like(goal());
        p.robustness = 0.0;
        let enc = EncodedScenario::encode(p).unwrap();
        assert_eq!(enc.resized_predicates(), enc.original_predicates());
    }

    #[test]
    fn activation_is_idempotent_and_bounded() {
        let mut enc = EncodedScenario::encode(phi1_like(goal())).unwrap();
        let before = enc.model().num_active_rows();
        assert!(enc.activate(1, 17).unwrap());
        assert!(!enc.activate(1, 17).unwrap());
        assert_eq!(enc.model().num_active_rows(), before + 4);
        assert_eq!(enc.activations(), &[(1, 17)]);
        assert_eq!(enc.activate(1, 21), Err(EncodingError::UnknownPair(1, 21)));
        assert_eq!(enc.activate(2, 0), Err(EncodingError::UnknownPair(2, 0)));
    }

    #[test]
    fn activated_goal_row_binds() {
        let mut enc = EncodedScenario::encode(phi1_like(goal())).unwrap();
        enc.activate(1, 17).unwrap();
        let sol = enc.solve(&Budget::unlimited()).unwrap();
        let xs = enc.states(&sol).unwrap();
        let shrunk = &enc.resized_predicates()[1];
        assert!(shrunk.signed_distance(&xs[17][..2]) >= 0.0);
    }

    #[test]
    fn translating_goal_shifts_rhs() {
        let mut enc = EncodedScenario::encode(phi1_like(goal())).unwrap();
        let row = enc.groups[1][5].rows[0];
        let before = enc.model().row(row).rhs;
        enc.update_predicate("goal", &goal().translated(&[1.0, 0.0]))
            .unwrap();
        // face 0 is x <= 9.5 with normal (1, 0)
        assert!((enc.model().row(row).rhs - before - 1.0).abs() < 1e-12);
        let same = enc.clone();
        enc.update_predicate("goal", &goal().translated(&[1.0, 0.0]))
            .unwrap();
        for (a, b) in enc.model().rows().iter().zip(same.model().rows()) {
            assert_eq!((a.rhs, &a.coeffs), (b.rhs, &b.coeffs));
        }
    }

    #[test]
    fn update_rejects_more_faces_and_pads_fewer() {
        let mut enc = EncodedScenario::encode(phi1_like(goal())).unwrap();
        let tri = Predicate::from_vertices_2d("x", &[[4.0, 2.0], [6.0, 2.0], [5.0, 4.0]]).unwrap();
        enc.update_predicate("unsafe", &tri).unwrap();
        assert_eq!(enc.original_predicates()[0].faces(), 4);
        let hex = Predicate::from_vertices_2d(
            "x",
            &[
                [0.0, 0.0],
                [2.0, 0.0],
                [3.0, 1.0],
                [2.0, 2.0],
                [0.0, 2.0],
                [-1.0, 1.0],
            ],
        )
        .unwrap();
        assert!(matches!(
            enc.update_predicate("unsafe", &hex),
            Err(EncodingError::FaceCount { .. })
        ));
    }

    #[test]
    fn condensed_solve_matches_direct() {
        let mut enc = EncodedScenario::encode_full(phi1_like(goal())).unwrap();
        let mut direct = enc.clone();
        let a = enc.solve(&Budget::unlimited()).unwrap();
        let b = direct.solve_uncondensed(&Budget::unlimited()).unwrap();
        assert!((a.objective.unwrap() - b.objective.unwrap()).abs() < 1e-6);
        assert!(enc
            .model()
            .is_feasible(a.values.as_ref().unwrap(), 1e-6, true));
    }

    #[test]
    fn workspace_is_enforced_on_demand() {
        let mut p = phi1_like(goal());
        // coasting at 2 m/s from x = 9 leaves the workspace within a step
        p.x0 = vec![9.0, 3.0, 2.0, 0.0];
        p.horizon = 6;
        let mut enc = EncodedScenario::encode(p).unwrap();
        let mut direct = enc.clone();
        let a = enc.solve(&Budget::unlimited()).unwrap();
        let b = direct.solve_uncondensed(&Budget::unlimited()).unwrap();
        let xs = enc.states(&a).unwrap();
        assert!(xs.iter().all(|x| x[0] <= 10.0 + 1e-9));
        assert!(a.objective.unwrap() > 1.0);
        assert!((a.objective.unwrap() - b.objective.unwrap()).abs() < 1e-6);
    }

    #[test]
    fn prefix_pins_states() {
        let mut enc = EncodedScenario::encode(phi1_like(goal())).unwrap();
        let pinned = vec![vec![1.0, 3.0, 0.5, 0.0], vec![1.3, 3.0, 0.7, 0.0]];
        enc.fix_prefix(&pinned, &[vec![0.4, 0.0]]).unwrap();
        let sol = enc.solve(&Budget::unlimited()).unwrap();
        let xs = enc.states(&sol).unwrap();
        assert_eq!(xs[1], pinned[1]);
        assert_eq!(enc.prefix_len(), 2);
    }
}
