//! Polyhedral predicate sets `{x | Ax <= b}` with unit-norm face normals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::milp::{Model, Relation, Status};
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredicateError {
    #[error("predicate `{0}` has no faces")]
    NoFaces(String),
    #[error("predicate `{name}`: row {row} has dimension {got}, expected {expected}")]
    Dimension {
        name: String,
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("predicate `{name}`: row {row} has a zero normal")]
    ZeroNormal { name: String, row: usize },
    #[error("predicate `{0}` is empty")]
    Empty(String),
    #[error("predicate `{0}` is unbounded")]
    Unbounded(String),
    #[error("predicate `{0}`: need at least 3 non-collinear vertices")]
    Degenerate(String),
    #[error("predicate `{name}` has {got} faces, more than the {max} allowed")]
    TooManyFaces {
        name: String,
        got: usize,
        max: usize,
    },
    #[error("predicate `{0}`: numerical failure in feasibility check")]
    Numerical(String),
}

/// Named polyhedron `{x | a_i . x <= b_i}` whose rows `a_i` have unit
/// Euclidean norm, so `b_i - a_i . x` is the signed distance to face `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate<S> {
    pub name: String,
    a: Vec<Vec<S>>,
    b: Vec<S>,
}

impl<S: Scalar> Predicate<S> {
    /// Normalizes every row of `(A, b)` jointly to a unit normal.
    pub fn new(name: impl Into<String>, a: Vec<Vec<S>>, b: Vec<S>) -> Result<Self, PredicateError> {
        let name = name.into();
        if a.is_empty() || a.len() != b.len() {
            return Err(PredicateError::NoFaces(name));
        }
        let dim = a[0].len();
        let mut rows = Vec::with_capacity(a.len());
        let mut rhs = Vec::with_capacity(b.len());
        for (i, (row, bi)) in a.into_iter().zip(b).enumerate() {
            if row.len() != dim || dim == 0 {
                return Err(PredicateError::Dimension {
                    name,
                    row: i,
                    got: row.len(),
                    expected: dim,
                });
            }
            let norm = row.iter().fold(S::zero(), |acc, &v| acc + v * v).sqrt();
            if !(norm > S::epsilon()) {
                return Err(PredicateError::ZeroNormal { name, row: i });
            }
            rows.push(row.into_iter().map(|v| v / norm).collect());
            rhs.push(bi / norm);
        }
        Ok(Predicate {
            name,
            a: rows,
            b: rhs,
        })
    }

    /// Builds the convex hull of 2D vertices in halfspace form.
    pub fn from_vertices_2d(
        name: impl Into<String>,
        vertices: &[[S; 2]],
    ) -> Result<Self, PredicateError> {
        let name = name.into();
        let hull = convex_hull(vertices);
        if hull.len() < 3 {
            return Err(PredicateError::Degenerate(name));
        }
        let mut a = Vec::with_capacity(hull.len());
        let mut b = Vec::with_capacity(hull.len());
        for i in 0..hull.len() {
            let p = hull[i];
            let q = hull[(i + 1) % hull.len()];
            // counter-clockwise hull: outward normal of edge p->q is (dy, -dx)
            let n = [q[1] - p[1], p[0] - q[0]];
            a.push(n.to_vec());
            b.push(n[0] * p[0] + n[1] * p[1]);
        }
        Predicate::new(name, a, b)
    }

    /// Axis-aligned box `lower <= x <= upper`.
    pub fn axis_box(
        name: impl Into<String>,
        lower: &[S],
        upper: &[S],
    ) -> Result<Self, PredicateError> {
        let n = lower.len();
        let mut a = Vec::with_capacity(2 * n);
        let mut b = Vec::with_capacity(2 * n);
        for d in 0..n {
            let mut row = vec![S::zero(); n];
            row[d] = S::one();
            a.push(row.clone());
            b.push(upper[d]);
            row[d] = -S::one();
            a.push(row);
            b.push(-lower[d]);
        }
        Predicate::new(name, a, b)
    }

    pub fn faces(&self) -> usize {
        self.b.len()
    }

    pub fn dim(&self) -> usize {
        self.a[0].len()
    }

    pub fn a(&self) -> &[Vec<S>] {
        &self.a
    }

    pub fn b(&self) -> &[S] {
        &self.b
    }

    /// `min_i (b_i - a_i . x)`: positive inside, negative outside.
    pub fn signed_distance(&self, x: &[S]) -> S {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, &bi)| bi - dot(row, x))
            .fold(S::infinity(), |m, v| if v < m { v } else { m })
    }

    pub fn contains(&self, x: &[S]) -> bool {
        self.signed_distance(x) >= S::zero()
    }

    /// Same normals with every offset moved by `delta` (`delta < 0` shrinks).
    pub fn offset(&self, delta: S) -> Self {
        Predicate {
            name: self.name.clone(),
            a: self.a.clone(),
            b: self.b.iter().map(|&v| v + delta).collect(),
        }
    }

    pub fn translated(&self, shift: &[S]) -> Self {
        let b = self
            .a
            .iter()
            .zip(&self.b)
            .map(|(row, &bi)| bi + dot(row, shift))
            .collect();
        Predicate {
            name: self.name.clone(),
            a: self.a.clone(),
            b,
        }
    }

    pub fn renamed(&self, name: impl Into<String>) -> Self {
        Predicate {
            name: name.into(),
            ..self.clone()
        }
    }

    /// Repeats the last face until there are `faces` rows; redundant
    /// halfspaces leave the set unchanged.
    pub fn padded_to(&self, faces: usize) -> Result<Self, PredicateError> {
        if self.faces() > faces {
            return Err(PredicateError::TooManyFaces {
                name: self.name.clone(),
                got: self.faces(),
                max: faces,
            });
        }
        let mut p = self.clone();
        while p.faces() < faces {
            p.a.push(self.a[self.faces() - 1].clone());
            p.b.push(self.b[self.faces() - 1]);
        }
        Ok(p)
    }

    /// Radius of the largest ball inside the set (capped at `cap`), or
    /// `None` when the set is empty.
    pub fn chebyshev_radius(&self, cap: S) -> Result<Option<S>, PredicateError> {
        let mut m = Model::new();
        let xs: Vec<_> = (0..self.dim())
            .map(|d| m.add_continuous(&format!("x{d}"), S::neg_infinity(), S::infinity()))
            .collect();
        let r = m.add_continuous("r", S::neg_infinity(), cap);
        for (i, (row, &bi)) in self.a.iter().zip(&self.b).enumerate() {
            let mut coeffs: Vec<_> = xs.iter().zip(row).map(|(&v, &c)| (v, c)).collect();
            coeffs.push((r, S::one()));
            m.add_row(&format!("f{i}"), coeffs, Relation::Le, bi);
        }
        m.set_objective(vec![(r, -S::one())]);
        let sol = m
            .solve_lp(&Default::default())
            .map_err(|_| PredicateError::Numerical(self.name.clone()))?;
        match sol.status {
            Status::Optimal => Ok(sol.objective.map(|o| -o)),
            Status::Infeasible => Ok(None),
            _ => Err(PredicateError::Numerical(self.name.clone())),
        }
    }

    /// Rejects empty sets and sets unbounded in some coordinate direction.
    pub fn validate(&self) -> Result<(), PredicateError> {
        match self.chebyshev_radius(S::lit(1e6))? {
            Some(r) if r >= -S::lit(1e-9) => {}
            _ => return Err(PredicateError::Empty(self.name.clone())),
        }
        for d in 0..self.dim() {
            for sign in [S::one(), -S::one()] {
                let mut m = Model::new();
                let xs: Vec<_> = (0..self.dim())
                    .map(|k| m.add_continuous(&format!("x{k}"), S::neg_infinity(), S::infinity()))
                    .collect();
                for (i, (row, &bi)) in self.a.iter().zip(&self.b).enumerate() {
                    m.add_row(
                        &format!("f{i}"),
                        xs.iter().copied().zip(row.iter().copied()).collect(),
                        Relation::Le,
                        bi,
                    );
                }
                m.set_objective(vec![(xs[d], sign)]);
                let sol = m
                    .solve_lp(&Default::default())
                    .map_err(|_| PredicateError::Numerical(self.name.clone()))?;
                match sol.status {
                    Status::Optimal => {}
                    Status::Unbounded => return Err(PredicateError::Unbounded(self.name.clone())),
                    _ => return Err(PredicateError::Numerical(self.name.clone())),
                }
            }
        }
        Ok(())
    }

    /// Vertices of a bounded 2D predicate in counter-clockwise order.
    pub fn vertices_2d(&self) -> Vec<[S; 2]> {
        assert_eq!(self.dim(), 2, "vertices_2d on a {}-D predicate", self.dim());
        let tol = S::lit(1e-9);
        let mut pts: Vec<[S; 2]> = Vec::new();
        for i in 0..self.faces() {
            for j in (i + 1)..self.faces() {
                let (a1, a2) = (&self.a[i], &self.a[j]);
                let det = a1[0] * a2[1] - a1[1] * a2[0];
                if det.abs() < tol {
                    continue;
                }
                let x = (self.b[i] * a2[1] - self.b[j] * a1[1]) / det;
                let y = (a1[0] * self.b[j] - a2[0] * self.b[i]) / det;
                let p = [x, y];
                if self.signed_distance(&p) >= -S::lit(1e-7)
                    && !pts
                        .iter()
                        .any(|q| (q[0] - x).abs() < S::lit(1e-7) && (q[1] - y).abs() < S::lit(1e-7))
                {
                    pts.push(p);
                }
            }
        }
        convex_hull(&pts)
    }
}

pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Andrew's monotone chain; counter-clockwise, collinear points dropped.
pub fn convex_hull<S: Scalar>(points: &[[S; 2]]) -> Vec<[S; 2]> {
    let mut pts: Vec<[S; 2]> = points.to_vec();
    pts.sort_by(|p, q| {
        p[0].partial_cmp(&q[0])
            .unwrap()
            .then(p[1].partial_cmp(&q[1]).unwrap())
    });
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [S; 2], a: [S; 2], b: [S; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[S; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2
            && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= S::zero()
        {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[S; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2
            && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= S::zero()
        {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}
