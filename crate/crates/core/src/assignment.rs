//! Minimum-cost bipartite matching with forbidden entries.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Rows are tracks, columns detections; `None` marks a forbidden pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Option<f64>>,
}

impl CostMatrix {
    /// All entries forbidden.
    pub fn forbidden(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![None; rows * cols],
        }
    }

    /// Dense matrix from equal-length rows; every entry must be finite and ≥ 0.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = Self::forbidden(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape {
                    context: "cost matrix rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            for (j, &c) in r.iter().enumerate() {
                m.set(i, j, c)?;
            }
        }
        Ok(m)
    }

    /// Dense costs with every entry above `gate` forbidden.
    pub fn gated<R: AsRef<[f64]>>(rows: &[R], gate: f64) -> Result<Self> {
        let mut m = Self::from_rows(rows)?;
        for e in &mut m.entries {
            if e.is_some_and(|c| !(c <= gate)) {
                *e = None;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.entries[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, cost: f64) -> Result<()> {
        if !(cost.is_finite() && cost >= 0.0) {
            return Err(Error::NonFinite(alloc::format!(
                "cost ({row}, {col}) = {cost}; costs must be finite and non-negative"
            )));
        }
        self.entries[row * self.cols + col] = Some(cost);
        Ok(())
    }

    pub fn forbid(&mut self, row: usize, col: usize) {
        self.entries[row * self.cols + col] = None;
    }

    pub fn allowed(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Assignment {
    pub fn total_cost(&self, costs: &CostMatrix) -> f64 {
        self.matches
            .iter()
            .map(|&(r, c)| costs.get(r, c).expect("matched pairs are allowed"))
            .sum()
    }
}

/// Maximum-cardinality matching of minimum total cost over allowed entries.
///
/// The matrix is padded to a square with a cost larger than any sum of real
/// entries, so that every extra real match beats any saving in cost; pad and
/// forbidden pairs are dropped from the result. Ties resolve by scan order,
/// which favours lower row and column indices.
pub fn hungarian(costs: &CostMatrix) -> Assignment {
    let (rows, cols) = (costs.rows, costs.cols);
    let n = rows.max(cols);
    if n == 0 || costs.allowed() == 0 {
        return Assignment {
            matches: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
        };
    }
    let max = costs
        .entries
        .iter()
        .flatten()
        .fold(0.0f64, |m, &c| m.max(c));
    let big = (max + 1.0) * (n as f64 + 1.0) * 2.0;
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            costs.get(i, j).unwrap_or(big)
        } else {
            big
        }
    };

    // Shortest augmenting paths with potentials; index 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_match = vec![None; rows];
    let mut col_taken = vec![false; cols];
    for j in 1..=n {
        let (r, c) = (owner[j] - 1, j - 1);
        if r < rows && c < cols && costs.get(r, c).is_some() {
            row_match[r] = Some(c);
            col_taken[c] = true;
        }
    }
    Assignment {
        matches: row_match
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
            .collect(),
        unmatched_rows: (0..rows).filter(|&r| row_match[r].is_none()).collect(),
        unmatched_cols: (0..cols).filter(|&c| !col_taken[c]).collect(),
    }
}

/// Exhaustive reference solver: most real matches, then least cost.
/// Exponential; intended for oracles on matrices up to about 8 × 8.
pub fn brute_force(costs: &CostMatrix) -> (usize, f64) {
    let n = costs.rows.max(costs.cols);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (0usize, 0.0f64);
    let mut first = true;
    permute(&mut perm, 0, &mut |p| {
        let (mut count, mut total) = (0, 0.0);
        for (r, &c) in p.iter().enumerate() {
            if r < costs.rows && c < costs.cols {
                if let Some(x) = costs.get(r, c) {
                    count += 1;
                    total += x;
                }
            }
        }
        if first || count > best.0 || (count == best.0 && total < best.1) {
            best = (count, total);
            first = false;
        }
    });
    best
}

fn permute(p: &mut [usize], k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(n: usize, m: usize, forbid: f64, rng: &mut impl Rng) -> CostMatrix {
        let mut c = CostMatrix::forbidden(n, m);
        for i in 0..n {
            for j in 0..m {
                if !rng.random_bool(forbid) {
                    c.set(i, j, rng.random_range(0.0..10.0)).unwrap();
                }
            }
        }
        c
    }

    fn check_valid(a: &Assignment, c: &CostMatrix) {
        let mut rows = vec![false; c.rows()];
        let mut cols = vec![false; c.cols()];
        for &(r, k) in &a.matches {
            assert!(!rows[r] && !cols[k]);
            assert!(c.get(r, k).is_some());
            rows[r] = true;
            cols[k] = true;
        }
        assert_eq!(a.matches.len() + a.unmatched_rows.len(), c.rows());
        assert_eq!(a.matches.len() + a.unmatched_cols.len(), c.cols());
    }

    #[test]
    fn two_by_two() {
        let c = CostMatrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        let a = hungarian(&c);
        assert_eq!(a.matches, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost(&c), 2.0);
    }

    #[test]
    fn single_entry() {
        let c = CostMatrix::from_rows(&[[5.0]]).unwrap();
        let a = hungarian(&c);
        assert_eq!(a.matches, vec![(0, 0)]);
        assert_eq!(a.total_cost(&c), 5.0);
    }

    #[test]
    fn empty_and_fully_forbidden() {
        let a = hungarian(&CostMatrix::forbidden(0, 0));
        assert!(a.matches.is_empty());
        let a = hungarian(&CostMatrix::forbidden(2, 3));
        assert!(a.matches.is_empty());
        assert_eq!((a.unmatched_rows.len(), a.unmatched_cols.len()), (2, 3));
    }

    #[test]
    fn ties_prefer_low_indices() {
        let c = CostMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(hungarian(&c).matches, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn cardinality_beats_cost() {
        // Matching (0,0) alone is cheap, but (0,1),(1,0) matches both rows.
        let mut c = CostMatrix::forbidden(2, 2);
        c.set(0, 0, 0.0).unwrap();
        c.set(0, 1, 9.0).unwrap();
        c.set(1, 0, 9.0).unwrap();
        let a = hungarian(&c);
        assert_eq!(a.matches, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn rectangular_matrices() {
        let c = CostMatrix::from_rows(&[[4.0, 1.0, 3.0]]).unwrap();
        let a = hungarian(&c);
        assert_eq!(a.matches, vec![(0, 1)]);
        assert_eq!(a.unmatched_cols, vec![0, 2]);
        let c = CostMatrix::from_rows(&[[4.0], [1.0], [3.0]]).unwrap();
        assert_eq!(hungarian(&c).matches, vec![(1, 0)]);
    }

    #[test]
    fn rejects_negative_and_nan() {
        assert!(CostMatrix::from_rows(&[[-1.0]]).is_err());
        assert!(CostMatrix::from_rows(&[[f64::NAN]]).is_err());
    }

    #[test]
    fn zero_gate_forbids_everything_positive() {
        let c = CostMatrix::gated(&[[0.5, 0.2], [0.1, 0.9]], 0.0).unwrap();
        assert!(hungarian(&c).matches.is_empty());
    }

    #[test]
    fn agrees_with_exhaustive_search() {
        let mut rng = seeded(11);
        for n in 1..=6 {
            for _ in 0..100 {
                let m = rng.random_range(1..=n);
                let forbid = [0.0, 0.3][rng.random_range(0..2)];
                let c = random_matrix(n, m, forbid, &mut rng);
                let a = hungarian(&c);
                check_valid(&a, &c);
                let (count, cost) = brute_force(&c);
                assert_eq!(a.matches.len(), count);
                assert!((a.total_cost(&c) - cost).abs() < 1e-9, "{c:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn beats_random_alternative_matchings(seed in 0u64..10_000, n in 1usize..9, m in 1usize..9) {
            let mut rng = seeded(seed);
            let c = random_matrix(n, m, 0.0, &mut rng);
            let a = hungarian(&c);
            check_valid(&a, &c);
            prop_assert_eq!(a.matches.len(), n.min(m));
            for _ in 0..20 {
                let mut cols: Vec<usize> = (0..m).collect();
                rand::seq::SliceRandom::shuffle(cols.as_mut_slice(), &mut rng);
                let alt: f64 = (0..n.min(m)).map(|r| c.get(r, cols[r]).unwrap()).sum();
                if n <= m {
                    prop_assert!(a.total_cost(&c) <= alt + 1e-9);
                }
            }
        }

        #[test]
        fn tighter_gates_never_match_more(seed in 0u64..10_000, g1 in 0.0f64..10.0, g2 in 0.0f64..10.0) {
            let mut rng = seeded(seed);
            let dense: Vec<Vec<f64>> = (0..5).map(|_| (0..6).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
            let (lo, hi) = if g1 < g2 { (g1, g2) } else { (g2, g1) };
            let tight = hungarian(&CostMatrix::gated(&dense, lo).unwrap());
            let loose = hungarian(&CostMatrix::gated(&dense, hi).unwrap());
            prop_assert!(tight.matches.len() <= loose.matches.len());
        }
    }
}
