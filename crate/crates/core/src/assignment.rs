//! Minimum-cost bipartite matching with forbidden pairs.
//!
//! The matrix is padded to square; every entry gets a two-part cost
//! `(forbidden, value)` compared lexicographically, so the solver first
//! maximizes the number of allowed pairs and then minimizes their summed
//! value. Among optimal matchings the lexicographically smallest pair list
//! is returned.

use std::ops::{Add, AddAssign, Sub, SubAssign};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    forbid_value: f64,
}

impl CostMatrix {
    /// Row-major `rows × cols` costs with `+∞` marking forbidden pairs.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_forbid(rows, cols, data, f64::INFINITY)
    }

    pub fn with_forbid(rows: usize, cols: usize, data: Vec<f64>, forbid_value: f64) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!("{} costs for a {rows}x{cols} matrix", data.len())));
        }
        if forbid_value.is_nan() {
            return Err(invalid("forbid value cannot be NaN"));
        }
        if data.iter().any(|&c| c != forbid_value && !c.is_finite()) {
            return Err(invalid("cost entries must be finite or the forbid value"));
        }
        Ok(Self { rows, cols, data, forbid_value })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("ragged cost matrix"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn forbid_value(&self) -> f64 {
        self.forbid_value
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn is_forbidden(&self, r: usize, c: usize) -> bool {
        self.get(r, c) == self.forbid_value
    }

    /// Summed cost of a matching.
    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(r, c)| self.get(r, c)).sum()
    }
}

/// Two-part cost: forbidden/padding count, then value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct Lex(i64, f64);

const LEX_INF: Lex = Lex(i64::MAX / 4, 0.0);
const LEX_ZERO: Lex = Lex(0, 0.0);

impl Add for Lex {
    type Output = Lex;
    fn add(self, o: Lex) -> Lex {
        Lex(self.0 + o.0, self.1 + o.1)
    }
}

impl Sub for Lex {
    type Output = Lex;
    fn sub(self, o: Lex) -> Lex {
        Lex(self.0 - o.0, self.1 - o.1)
    }
}

impl AddAssign for Lex {
    fn add_assign(&mut self, o: Lex) {
        *self = *self + o;
    }
}

impl SubAssign for Lex {
    fn sub_assign(&mut self, o: Lex) {
        *self = *self - o;
    }
}

struct Square<'a> {
    m: &'a CostMatrix,
    n: usize,
}

impl Square<'_> {
    /// Cost of a padded cell; padding is free, forbidden pairs count one.
    fn cost(&self, r: usize, c: usize) -> Lex {
        if r >= self.m.rows || c >= self.m.cols {
            LEX_ZERO
        } else if self.m.is_forbidden(r, c) {
            Lex(1, 0.0)
        } else {
            Lex(0, self.m.get(r, c))
        }
    }

    fn allowed(&self, r: usize, c: usize) -> bool {
        r < self.m.rows && c < self.m.cols && !self.m.is_forbidden(r, c)
    }
}

/// Optimal matching as `(row, col)` pairs sorted by row. Forbidden pairs
/// are never returned; rows or columns left over are unmatched.
pub fn solve(m: &CostMatrix) -> Vec<(usize, usize)> {
    let n = m.rows.max(m.cols);
    if m.rows == 0 || m.cols == 0 {
        return Vec::new();
    }
    let sq = Square { m, n };
    let (row_to_col, u, v) = hungarian(&sq);
    let scale = m
        .data
        .iter()
        .filter(|c| c.is_finite())
        .fold(1.0f64, |acc, c| acc.max(c.abs()));
    let eps = 1e-9 * scale;
    let tight = |r: usize, c: usize| {
        let red = sq.cost(r, c) - u[r] - v[c];
        red.0 == 0 && red.1 <= eps
    };
    let row_to_col = lex_smallest(&sq, row_to_col, &tight);
    (0..m.rows)
        .filter_map(|r| {
            let c = row_to_col[r];
            sq.allowed(r, c).then_some((r, c))
        })
        .collect()
}

/// Shortest-augmenting-path Hungarian method with potentials
/// (O(n³)). Returns the row assignment and the dual potentials.
fn hungarian(sq: &Square) -> (Vec<usize>, Vec<Lex>, Vec<Lex>) {
    let n = sq.n;
    // 1-based internally; index 0 is the virtual start column.
    let mut u = vec![LEX_ZERO; n + 1];
    let mut v = vec![LEX_ZERO; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![LEX_INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = LEX_INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = sq.cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
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
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

#[derive(Clone, Copy, PartialEq)]
enum RowState {
    Free,
    /// Fixed to its current column.
    Locked,
    /// Must stay on a non-allowed cell, but which one may change.
    Unmatched,
}

/// Walks rows in order and pins each to the smallest allowed column that
/// still admits an optimal completion. Only tight cells are used, so the
/// total cost is unchanged.
fn lex_smallest(sq: &Square, mut row_to_col: Vec<usize>, tight: &dyn Fn(usize, usize) -> bool) -> Vec<usize> {
    let n = sq.n;
    let mut col_to_row = vec![0usize; n];
    for (r, &c) in row_to_col.iter().enumerate() {
        col_to_row[c] = r;
    }
    let mut state = vec![RowState::Free; n];
    let usable = |state: &[RowState], r: usize, c: usize, current: &[usize]| -> bool {
        if current[r] == c {
            return true;
        }
        match state[r] {
            RowState::Locked => false,
            RowState::Unmatched => !sq.allowed(r, c) && tight(r, c),
            RowState::Free => tight(r, c),
        }
    };
    for i in 0..sq.m.rows {
        let mut done = false;
        for j in 0..sq.m.cols {
            if !sq.allowed(i, j) || !tight(i, j) {
                continue;
            }
            if row_to_col[i] == j {
                done = true;
                break;
            }
            // Give j to i; the displaced owner must reach i's old column.
            let owner = col_to_row[j];
            let target = row_to_col[i];
            state[i] = RowState::Locked;
            let mut seen = vec![false; n];
            seen[j] = true;
            let mut path = Vec::new();
            let found = find_path(owner, target, &state, &row_to_col, &col_to_row, &usable, &mut seen, &mut path);
            if found {
                // path holds (row, new_col) moves ending at `target`.
                for &(r, c) in &path {
                    row_to_col[r] = c;
                    col_to_row[c] = r;
                }
                row_to_col[i] = j;
                col_to_row[j] = i;
                done = true;
                break;
            }
            state[i] = RowState::Free;
        }
        state[i] = if done && sq.allowed(i, row_to_col[i]) {
            RowState::Locked
        } else {
            RowState::Unmatched
        };
    }
    row_to_col
}

/// Depth-first alternating path: `row` leaves its column for another
/// usable column; if that column is `target` the path ends, otherwise its
/// owner moves on in turn.
#[allow(clippy::too_many_arguments)]
fn find_path(
    row: usize,
    target: usize,
    state: &[RowState],
    row_to_col: &[usize],
    col_to_row: &[usize],
    usable: &dyn Fn(&[RowState], usize, usize, &[usize]) -> bool,
    seen: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    if state[row] == RowState::Locked {
        return false;
    }
    let n = row_to_col.len();
    for c in 0..n {
        if seen[c] || c == row_to_col[row] || !usable(state, row, c, row_to_col) {
            continue;
        }
        seen[c] = true;
        path.push((row, c));
        if c == target {
            return true;
        }
        if find_path(col_to_row[c], target, state, row_to_col, col_to_row, usable, seen, path) {
            return true;
        }
        path.pop();
    }
    false
}

/// Maximum-score matching: negates scores and forbids pairs whose score is
/// not strictly above `gate`.
pub fn solve_max_score(rows: usize, cols: usize, scores: &[f64], gate: f64) -> Result<Vec<(usize, usize)>> {
    let costs = scores
        .iter()
        .map(|&s| if s > gate { -s } else { f64::INFINITY })
        .collect();
    Ok(solve(&CostMatrix::new(rows, cols, costs)?))
}
