//! Minimum-cost perfect assignment.
//!
//! The solver is the shortest-augmenting-path Hungarian method with row and
//! column potentials, `O(n^3)`. Among equally cheap assignments the
//! lexicographically smallest row→column array is returned: row 0 takes the
//! lowest column that still admits an optimal completion, then row 1, and so
//! on.

use alloc::vec;
use alloc::vec::Vec;

use super::matrix::SquareMatrix;
use super::permutation::Permutation;
use crate::error::{Error, Result};
use num_traits::Float;

/// Plain Hungarian solve; returns `row -> column` and the total cost.
fn solve(n: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<usize>, f64) {
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let inf = f64::INFINITY;
    // 1-based potentials; column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| cost(i, j))
        .sum();
    (row_to_col, total)
}

pub fn assignment_cost(cost: &SquareMatrix, row_to_col: &Permutation) -> f64 {
    row_to_col
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)])
        .sum()
}

/// Minimum-total-cost assignment with the lowest-row/lowest-column
/// tie-break.
pub fn hungarian_assign(cost: &SquareMatrix) -> Result<Permutation> {
    if cost.data.len() != cost.n * cost.n {
        return Err(Error::shape("cost matrix is not square"));
    }
    if !cost.is_finite() {
        return Err(Error::NonFinite("assignment cost"));
    }
    let n = cost.n;
    let (_, optimum) = solve(n, |i, j| cost[(i, j)]);
    let scale = cost.data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale * (n.max(1) as f64);

    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    let mut taken = vec![false; n];
    let mut fixed_cost = 0.0;
    for row in 0..n {
        let mut chosen = None;
        for col in 0..n {
            if taken[col] {
                continue;
            }
            let rest_rows: Vec<usize> = (row + 1..n).collect();
            let rest_cols: Vec<usize> = (0..n).filter(|&c| !taken[c] && c != col).collect();
            let (_, rest) = solve(rest_rows.len(), |i, j| cost[(rest_rows[i], rest_cols[j])]);
            let total = fixed_cost + cost[(row, col)] + rest;
            if total <= optimum + tol {
                chosen = Some(col);
                break;
            }
        }
        // the unconstrained optimum always admits some completion
        let col = chosen.expect("an optimal completion exists");
        fixed_cost += cost[(row, col)];
        taken[col] = true;
        fixed.push(col);
    }
    Permutation::new(fixed)
}
