//! Optimal column matching by cosine similarity.

use crate::data::Matrix;
use crate::error::{BndlError, Result};

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Minimum-cost assignment of every row of an `n × m` cost matrix (n ≤ m)
/// to a distinct column, via shortest augmenting paths with potentials.
///
/// Returns `assign[row] = column`.
pub fn min_cost_assignment(cost: &Matrix) -> Result<Vec<usize>> {
    let (n, m) = (cost.rows(), cost.cols());
    if n > m {
        return Err(BndlError::Shape(format!(
            "assignment needs rows <= columns, got {n}x{m}"
        )));
    }
    if cost.as_slice().iter().any(|c| !c.is_finite()) {
        return Err(BndlError::Domain("assignment costs must be finite".into()));
    }
    // 1-based potentials; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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
    let mut assign = vec![usize::MAX; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assign[owner[j] - 1] = j - 1;
        }
    }
    Ok(assign)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMatching {
    /// `columns[k]` is the column of `B` matched to column `k` of `A`.
    pub columns: Vec<usize>,
    pub cosines: Vec<f64>,
    pub total: f64,
}

/// Matches each column of `a` to a distinct column of `b`, maximizing the
/// summed cosine similarity. `a` may have fewer columns than `b`.
pub fn hungarian_match(a: &Matrix, b: &Matrix) -> Result<ColumnMatching> {
    if a.rows() != b.rows() {
        return Err(BndlError::Shape(format!(
            "column vectors differ in length: {} vs {}",
            a.rows(),
            b.rows()
        )));
    }
    let a_cols: Vec<Vec<f64>> = (0..a.cols()).map(|j| a.column(j)).collect();
    let b_cols: Vec<Vec<f64>> = (0..b.cols()).map(|j| b.column(j)).collect();
    let sim = Matrix::from_fn(a.cols(), b.cols(), |i, j| cosine(&a_cols[i], &b_cols[j]));
    let neg = Matrix::from_fn(a.cols(), b.cols(), |i, j| -sim.get(i, j));
    let columns = min_cost_assignment(&neg)?;
    let cosines: Vec<f64> = columns
        .iter()
        .enumerate()
        .map(|(i, &j)| sim.get(i, j))
        .collect();
    let total = cosines.iter().sum();
    Ok(ColumnMatching {
        columns,
        cosines,
        total,
    })
}
