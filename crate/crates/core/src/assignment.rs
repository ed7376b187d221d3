//! Minimum-cost bipartite matching with infeasible pairs.
//!
//! The solver maximizes the number of matched feasible pairs first and
//! minimizes total cost among those matchings. Forbidden pairs are priced
//! at a penalty larger than any feasible total, the rectangular problem is
//! solved with the shortest-augmenting-path Hungarian method, and
//! penalized pairs are dropped from the result.

use crate::error::{Error, Result};

/// Dense cost matrix; `None` marks a forbidden pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    cost: Vec<Option<f64>>,
}

impl CostMatrix {
    /// An all-forbidden matrix.
    pub fn new(rows: usize, cols: usize) -> Self {
        CostMatrix {
            rows,
            cols,
            cost: vec![None; rows * cols],
        }
    }

    /// Builds a matrix by evaluating `f` at every cell.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Option<f64>) -> Result<Self> {
        let mut m = CostMatrix::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                if let Some(v) = f(r, c) {
                    m.set(r, c, v)?;
                }
            }
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::param("cost", "ragged cost matrix"));
        }
        CostMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cost[row * self.cols + col]
    }

    /// Sets a feasible cost. Costs must be finite and non-negative.
    pub fn set(&mut self, row: usize, col: usize, value: f64) -> Result<()> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::param(
                "cost",
                format!("cell ({row}, {col}) must be finite and >= 0, got {value}"),
            ));
        }
        self.cost[row * self.cols + col] = Some(value);
        Ok(())
    }

    pub fn forbid(&mut self, row: usize, col: usize) {
        self.cost[row * self.cols + col] = None;
    }

    /// Sum of the costs of `pairs`. Panics on a forbidden pair.
    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs
            .iter()
            .map(|&(r, c)| self.get(r, c).expect("forbidden pair in matching"))
            .sum()
    }
}

/// Solves the assignment problem. Returns `(row, col)` pairs sorted by row.
pub fn solve_assignment(m: &CostMatrix) -> Vec<(usize, usize)> {
    if m.rows == 0 || m.cols == 0 || m.cost.iter().all(Option::is_none) {
        return Vec::new();
    }
    let transposed = m.rows > m.cols;
    let (n, k) = if transposed { (m.cols, m.rows) } else { (m.rows, m.cols) };
    let at = |i: usize, j: usize| if transposed { m.get(j, i) } else { m.get(i, j) };

    let max_cost = m.cost.iter().flatten().cloned().fold(0.0f64, f64::max);
    // Any matching with one fewer forbidden pair is strictly cheaper.
    let penalty = (max_cost + 1.0) * (n as f64 + 1.0);
    let dense: Vec<f64> = (0..n)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| at(i, j).unwrap_or(penalty))
        .collect();

    let assigned = hungarian(&dense, n, k);

    let mut pairs: Vec<(usize, usize)> = assigned
        .into_iter()
        .enumerate()
        .filter(|&(i, j)| at(i, j).is_some())
        .map(|(i, j)| if transposed { (j, i) } else { (i, j) })
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Shortest augmenting path Hungarian method for an `n × k` matrix with
/// `n <= k`. Returns the column assigned to each row.
fn hungarian(cost: &[f64], n: usize, k: usize) -> Vec<usize> {
    debug_assert!(n <= k);
    // 1-based with a virtual column 0, potentials u (rows) and v (cols).
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; k + 1];
    let mut row_of = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * k + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of = vec![0usize; n];
    for j in 1..=k {
        if row_of[j] != 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    col_of
}
