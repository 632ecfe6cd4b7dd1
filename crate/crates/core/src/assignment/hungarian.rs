//! Exact rectangular assignment via shortest augmenting paths with dual
//! potentials (Kuhn-Munkres family, O(G^2 P)). Greedy approximations are
//! not acceptable here: the duplicate-free guarantee of the one-to-one
//! branch rests on this matching being a true global optimum.

use super::AssignError;

/// Dense G x P cost matrix, lower entries are better matches.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    gts: usize,
    preds: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    /// Builds a matrix from row-major data. All entries must be finite.
    pub fn new(gts: usize, preds: usize, data: Vec<f64>) -> Result<Self, AssignError> {
        assert_eq!(data.len(), gts * preds, "cost matrix data length mismatch");
        if let Some(bad) = data.iter().find(|c| !c.is_finite()) {
            return Err(AssignError::NonFiniteCost { value: *bad });
        }
        Ok(Self { gts, preds, data })
    }

    pub fn from_fn(gts: usize, preds: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, AssignError> {
        let mut data = Vec::with_capacity(gts * preds);
        for g in 0..gts {
            for p in 0..preds {
                data.push(f(g, p));
            }
        }
        Self::new(gts, preds, data)
    }

    pub fn gts(&self) -> usize {
        self.gts
    }

    pub fn preds(&self) -> usize {
        self.preds
    }

    pub fn at(&self, gt: usize, pred: usize) -> f64 {
        self.data[gt * self.preds + pred]
    }
}

/// A minimum-cost injective assignment of every ground truth to a distinct
/// prediction column.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `(gt_index, pred_index)` pairs, sorted by gt index.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Solves the rectangular assignment problem exactly. Requires `G <= P`.
pub fn hungarian(cost: &CostMatrix) -> Result<Matching, AssignError> {
    let n = cost.gts();
    let m = cost.preds();
    if n > m {
        return Err(AssignError::TooFewPredictions { gts: n, preds: m });
    }
    if n == 0 {
        return Ok(Matching {
            pairs: Vec::new(),
            total_cost: 0.0,
        });
    }

    // 1-indexed arrays; index 0 is the virtual root column.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // row matched to each column, 0 = free
    let mut matched_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // Unwind the augmenting path.
        while j0 != 0 {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| matched_row[j] != 0)
        .map(|j| (matched_row[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(g, p)| cost.at(g, p)).sum();
    Ok(Matching { pairs, total_cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute force over all injections of rows into columns.
    pub(crate) fn brute_force_min_cost(cost: &CostMatrix) -> f64 {
        fn recurse(cost: &CostMatrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cost.gts() {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            for p in 0..cost.preds() {
                if !used[p] {
                    used[p] = true;
                    recurse(cost, row + 1, used, acc + cost.at(row, p), best);
                    used[p] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        let mut used = vec![false; cost.preds()];
        recurse(cost, 0, &mut used, 0.0, &mut best);
        if cost.gts() == 0 {
            0.0
        } else {
            best
        }
    }

    fn assert_valid(m: &Matching, gts: usize) {
        assert_eq!(m.pairs.len(), gts);
        let mut gs: Vec<_> = m.pairs.iter().map(|p| p.0).collect();
        gs.dedup();
        assert_eq!(gs.len(), gts);
        let mut ps: Vec<_> = m.pairs.iter().map(|p| p.1).collect();
        ps.sort_unstable();
        ps.dedup();
        assert_eq!(ps.len(), gts, "prediction column used twice");
    }

    #[test]
    fn two_by_two() {
        let cost = CostMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 0.0]).unwrap();
        let m = hungarian(&cost).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(m.total_cost, 1.0);
    }

    #[test]
    fn single_cell() {
        let cost = CostMatrix::new(1, 1, vec![5.0]).unwrap();
        let m = hungarian(&cost).unwrap();
        assert_eq!(m.pairs, vec![(0, 0)]);
        assert_eq!(m.total_cost, 5.0);
    }

    #[test]
    fn rectangular_two_by_three() {
        let cost = CostMatrix::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let m = hungarian(&cost).unwrap();
        assert_valid(&m, 2);
        assert_eq!(m.total_cost, 0.0);
        // gt 1 must take column 0 or 2; gt 0 takes 1 or 2.
        for &(g, p) in &m.pairs {
            assert_eq!(cost.at(g, p), 0.0);
        }
    }

    #[test]
    fn empty_matrix() {
        let cost = CostMatrix::new(0, 4, vec![]).unwrap();
        let m = hungarian(&cost).unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!(m.total_cost, 0.0);
    }

    #[test]
    fn dimension_error() {
        let cost = CostMatrix::new(3, 2, vec![0.0; 6]).unwrap();
        assert!(matches!(
            hungarian(&cost),
            Err(AssignError::TooFewPredictions { gts: 3, preds: 2 })
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            CostMatrix::new(1, 2, vec![0.0, f64::NAN]),
            Err(AssignError::NonFiniteCost { .. })
        ));
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..500 {
            let g = rng.gen_range(1..=5);
            let p = rng.gen_range(g..=7);
            let data: Vec<f64> = (0..g * p).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let cost = CostMatrix::new(g, p, data).unwrap();
            let m = hungarian(&cost).unwrap();
            assert_valid(&m, g);
            let best = brute_force_min_cost(&cost);
            assert!(
                (m.total_cost - best).abs() < 1e-9,
                "hungarian {} vs brute force {}",
                m.total_cost,
                best
            );
        }
    }

    #[test]
    fn invariant_under_positive_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let g = rng.gen_range(1..=4);
            let p = rng.gen_range(g..=6);
            // Distinct entries so the argmin is unique and scaling is testable.
            let mut vals: Vec<f64> = (0..g * p).map(|i| i as f64).collect();
            for i in (1..vals.len()).rev() {
                vals.swap(i, rng.gen_range(0..=i));
            }
            let cost = CostMatrix::new(g, p, vals.clone()).unwrap();
            let scaled =
                CostMatrix::new(g, p, vals.iter().map(|c| c * 3.5).collect()).unwrap();
            assert_eq!(hungarian(&cost).unwrap().pairs, hungarian(&scaled).unwrap().pairs);
        }
    }
}
