//! Exact square linear assignment (Hungarian method with row/column
//! potentials), returning the lexicographically smallest optimal
//! permutation.

use num_traits::Num;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Matrix2D;

/// Optimal row → column assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<T> {
    pub row_to_col: Vec<usize>,
    pub total: T,
}

/// Minimize `Σ cost[i][perm(i)]` over permutations of an `n × n` row-major
/// matrix. Works for any exact or floating ordered number type.
///
/// Among optimal permutations the lexicographically smallest
/// `(perm(0), perm(1), …)` is returned.
pub fn solve_assignment_slice<T>(cost: &[T], n: usize) -> Result<Assignment<T>>
where
    T: Num + Copy + PartialOrd,
{
    if cost.len() != n * n {
        return Err(Error::shape("cost matrix", format!("{n}x{n}"), cost.len()));
    }
    if n == 0 {
        return Ok(Assignment {
            row_to_col: vec![],
            total: T::zero(),
        });
    }
    let a = |i: usize, j: usize| cost[i * n + j];

    // 1-indexed potentials; column 0 is a virtual start column.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv: Vec<Option<T>> = vec![None; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta: Option<T> = None;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if minv[j].is_none_or(|m| cur < m) {
                    minv[j] = Some(cur);
                    way[j] = j0;
                }
                let mj = minv[j].unwrap();
                if delta.is_none_or(|d| mj < d) {
                    delta = Some(mj);
                    j1 = j;
                }
            }
            let delta = delta.expect("an unused column remains");
            for j in 0..=n {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else if let Some(m) = minv[j].as_mut() {
                    *m = *m - delta;
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
    let total = assignment_cost(cost, n, &row_to_col);

    // Reduced costs are zero on the matched edges in exact arithmetic; the
    // largest deviation there bounds the rounding noise for "tight".
    let reduced = |i: usize, j: usize| a(i, j) - u[i + 1] - v[j + 1];
    let abs = |x: T| if x < T::zero() { T::zero() - x } else { x };
    let mut tol = T::zero();
    for (i, &j) in row_to_col.iter().enumerate() {
        let r = abs(reduced(i, j));
        if r > tol {
            tol = r;
        }
    }
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| reduced(i, j) <= tol).collect())
        .collect();
    let lex = lexicographic_matching(&tight, row_to_col.clone());
    let lex_total = assignment_cost(cost, n, &lex);
    if lex_total <= total {
        Ok(Assignment {
            row_to_col: lex,
            total: lex_total,
        })
    } else {
        Ok(Assignment { row_to_col, total })
    }
}

/// `Σ cost[i][perm(i)]`, summed in row order.
pub fn assignment_cost<T: Num + Copy>(cost: &[T], n: usize, perm: &[usize]) -> T {
    perm.iter()
        .enumerate()
        .fold(T::zero(), |acc, (i, &j)| acc + cost[i * n + j])
}

/// Lexicographically smallest perfect matching of a bipartite graph that
/// contains the perfect matching `start`. `adj[i]` lists row `i`'s columns
/// in ascending order.
fn lexicographic_matching(adj: &[Vec<usize>], start: Vec<usize>) -> Vec<usize> {
    let n = adj.len();
    let mut col_of = start;
    let mut row_of = vec![0usize; n];
    for (i, &j) in col_of.iter().enumerate() {
        row_of[j] = i;
    }
    let mut locked = vec![false; n];
    for i in 0..n {
        for &j in &adj[i] {
            if j == col_of[i] {
                break;
            }
            if locked[j] {
                continue;
            }
            // Move i to j; the row holding j must reach i's old column
            // through an alternating path over unlocked rows.
            let target = col_of[i];
            let r = row_of[j];
            let mut seen = vec![false; n];
            seen[j] = true;
            let mut path = Vec::new();
            if augment(adj, &row_of, &locked, r, target, &mut seen, &mut path) {
                // path holds (row, new column) pairs.
                for &(row, col) in &path {
                    col_of[row] = col;
                    row_of[col] = row;
                }
                col_of[i] = j;
                row_of[j] = i;
                break;
            }
        }
        locked[col_of[i]] = true;
    }
    col_of
}

fn augment(
    adj: &[Vec<usize>],
    row_of: &[usize],
    locked: &[bool],
    row: usize,
    target: usize,
    seen: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    for &c in &adj[row] {
        if locked[c] || seen[c] {
            continue;
        }
        seen[c] = true;
        if c == target || augment(adj, row_of, locked, row_of[c], target, seen, path) {
            path.push((row, c));
            return true;
        }
    }
    false
}

/// Square assignment on a finite floating-point matrix.
pub fn solve_assignment<T: Real>(cost: &Matrix2D<T>) -> Result<Assignment<T>> {
    if cost.rows() != cost.cols() {
        return Err(Error::shape(
            "cost matrix",
            "square",
            format!("{}x{}", cost.rows(), cost.cols()),
        ));
    }
    if !cost.is_finite() {
        return Err(Error::NonFinite("cost matrix".into()));
    }
    solve_assignment_slice(cost.data(), cost.rows())
}

/// Assignment of `rows` items to `cols` items on a rectangular matrix, with
/// zero-cost padding. Returns `row → Some(col)` for real pairs.
pub fn solve_rectangular(cost: &[f64], rows: usize, cols: usize) -> Result<Vec<Option<usize>>> {
    if cost.len() != rows * cols {
        return Err(Error::shape("cost matrix", format!("{rows}x{cols}"), cost.len()));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cost matrix".into()));
    }
    let n = rows.max(cols);
    let mut padded = vec![0.0; n * n];
    for i in 0..rows {
        padded[i * n..i * n + cols].copy_from_slice(&cost[i * cols..(i + 1) * cols]);
    }
    let a = solve_assignment_slice(&padded, n)?;
    Ok((0..rows)
        .map(|i| Some(a.row_to_col[i]).filter(|&j| j < cols))
        .collect())
}
