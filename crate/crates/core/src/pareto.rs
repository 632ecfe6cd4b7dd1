//! Multi-objective machinery on finite candidate sets: utopia point,
//! Pareto-optimality test, front extraction and weighted-sum scalarization.
//!
//! All objectives are minimized. Dominance scans are O(n^2), which is plenty
//! for the few thousand points these sets ever hold.

use thiserror::Error;

/// A point in criterion space, optionally tagged with a caller payload id.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectivePoint {
    pub values: Vec<f64>,
    pub id: Option<usize>,
}

impl ObjectivePoint {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, id: None }
    }

    pub fn with_id(values: Vec<f64>, id: usize) -> Self {
        Self {
            values,
            id: Some(id),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParetoError {
    #[error("operation requires a nonempty feasible set")]
    EmptySet,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point is not a member of the feasible set")]
    NotMember,
}

/// A finite stand-in for the feasible criterion space: every point has the
/// same objective count.
#[derive(Debug, Clone, Default)]
pub struct FeasibleSet {
    points: Vec<ObjectivePoint>,
}

impl FeasibleSet {
    pub fn new(points: Vec<ObjectivePoint>) -> Result<Self, ParetoError> {
        if let Some(first) = points.first() {
            let m = first.dim();
            for p in &points {
                if p.dim() != m {
                    return Err(ParetoError::DimensionMismatch {
                        expected: m,
                        got: p.dim(),
                    });
                }
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[ObjectivePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `a` dominates `b`: componentwise `<=` with at least one strict `<`.
fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strict = true;
        }
    }
    strict
}

/// Componentwise minimum over the set.
pub fn utopia_point(s: &FeasibleSet) -> Result<Vec<f64>, ParetoError> {
    let first = s.points.first().ok_or(ParetoError::EmptySet)?;
    let mut u = first.values.clone();
    for p in &s.points[1..] {
        for (ui, vi) in u.iter_mut().zip(&p.values) {
            if vi < ui {
                *ui = *vi;
            }
        }
    }
    Ok(u)
}

/// True iff no other set member dominates `p`. `p` must be a member
/// (compared by value).
pub fn is_pareto_optimal(p: &ObjectivePoint, s: &FeasibleSet) -> Result<bool, ParetoError> {
    if !s.points.iter().any(|q| q.values == p.values) {
        return Err(ParetoError::NotMember);
    }
    Ok(!s.points.iter().any(|q| dominates(&q.values, &p.values)))
}

/// The non-dominated subset, in input order. Duplicates of a front point are
/// all retained (a point never dominates its own copy).
pub fn pareto_front(s: &FeasibleSet) -> Result<FeasibleSet, ParetoError> {
    if s.is_empty() {
        return Err(ParetoError::EmptySet);
    }
    let points = s
        .points
        .iter()
        .filter(|p| !s.points.iter().any(|q| dominates(&q.values, &p.values)))
        .cloned()
        .collect();
    Ok(FeasibleSet { points })
}

/// Dot product of weights with objectives.
pub fn weighted_sum(p: &ObjectivePoint, w: &[f64]) -> Result<f64, ParetoError> {
    if w.len() != p.dim() {
        return Err(ParetoError::DimensionMismatch {
            expected: p.dim(),
            got: w.len(),
        });
    }
    Ok(p.values.iter().zip(w).map(|(f, w)| f * w).sum())
}

/// Set element minimizing the weighted sum, ties broken by lowest index.
/// With strictly positive weights the winner is always Pareto optimal.
pub fn argmin_weighted<'a>(
    s: &'a FeasibleSet,
    w: &[f64],
) -> Result<&'a ObjectivePoint, ParetoError> {
    if s.is_empty() {
        return Err(ParetoError::EmptySet);
    }
    let mut best: Option<(&ObjectivePoint, f64)> = None;
    for p in &s.points {
        let g = weighted_sum(p, w)?;
        match best {
            Some((_, bg)) if g >= bg => {}
            _ => best = Some((p, g)),
        }
    }
    Ok(best.unwrap().0)
}
