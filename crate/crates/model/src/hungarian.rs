//! Minimum-cost bipartite assignment.

use grounding_core::{Error, Result};

/// Relative tolerance under which two assignment totals count as tied.
const TIE_TOL: f64 = 1e-12;

/// Optimal assignment of every column (ground truth) of a `rows x cols`
/// cost matrix to a distinct row (proposal). `cost[r][c]`; requires
/// `rows >= cols`. Among optimal assignments the lexicographically smallest
/// (by column order) is returned. `result[c]` is the row given to column `c`.
pub fn hungarian_match(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidArgument("ragged cost matrix".into()));
    }
    if cols == 0 {
        return Ok(Vec::new());
    }
    if rows < cols {
        return Err(Error::InvalidArgument(format!(
            "{rows} proposals cannot cover {cols} targets"
        )));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite assignment cost".into()));
    }
    // Transpose: targets become the (fewer) rows of the classic formulation.
    let t: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| cost[r][c]).collect()).collect();
    let best = min_cost(&t, &vec![false; rows], 0);
    let mut used = vec![false; rows];
    let mut out = Vec::with_capacity(cols);
    let mut spent = 0.0;
    for c in 0..cols {
        let tol = TIE_TOL * best.abs().max(1.0);
        let mut pick = None;
        for r in 0..rows {
            if used[r] {
                continue;
            }
            used[r] = true;
            let rest = if c + 1 < cols { min_cost(&t, &used, c + 1) } else { 0.0 };
            used[r] = false;
            if spent + t[c][r] + rest <= best + tol {
                pick = Some(r);
                break;
            }
        }
        let pick = pick.expect("an optimal completion exists");
        used[pick] = true;
        spent += t[c][pick];
        out.push(pick);
    }
    Ok(out)
}

/// Optimal cost of assigning targets `first..` to unused proposals
/// (shortest augmenting path with potentials).
fn min_cost(t: &[Vec<f64>], used: &[bool], first: usize) -> f64 {
    let cols_all: Vec<usize> = (0..used.len()).filter(|&r| !used[r]).collect();
    let n = t.len() - first;
    let m = cols_all.len();
    debug_assert!(n <= m);
    let a = |i: usize, j: usize| t[first + i - 1][cols_all[j - 1]];
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut seen = vec![false; m + 1];
        loop {
            seen[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !seen[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
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
            for j in 0..=m {
                if seen[j] {
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
    let mut total = 0.0;
    for j in 1..=m {
        if p[j] != 0 {
            total += a(p[j], j);
        }
    }
    total
}

/// Sum of the assigned costs, in column order.
pub fn assignment_cost(cost: &[Vec<f64>], assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(c, &r)| cost[r][c]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_preference() {
        let cost = vec![vec![0.0, 5.0, 5.0], vec![5.0, 0.0, 5.0], vec![5.0, 5.0, 0.0]];
        assert_eq!(hungarian_match(&cost).unwrap(), [0, 1, 2]);
    }

    #[test]
    fn single_target_takes_argmin_with_lowest_index_on_ties() {
        let cost = vec![vec![3.0], vec![1.0], vec![2.0], vec![1.0]];
        assert_eq!(hungarian_match(&cost).unwrap(), [1]);
    }

    #[test]
    fn too_few_rows() {
        assert!(hungarian_match(&[vec![1.0, 2.0]]).is_err());
        assert!(hungarian_match(&[vec![f64::NAN]]).is_err());
    }
}
