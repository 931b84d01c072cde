//! Rectangular linear assignment (Kuhn-Munkres with row/column potentials,
//! shortest augmenting path form). Every row is assigned to a distinct column;
//! requires `rows <= cols`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("cost matrix has {rows} rows but only {cols} columns")]
    TooFewColumns { rows: usize, cols: usize },
    #[error("cost matrix data has {actual} entries, expected {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("cost at ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
}

/// Dense row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AssignmentError> {
        if data.len() != rows * cols {
            return Err(AssignmentError::ShapeMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(AssignmentError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignmentError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(AssignmentError::ShapeMismatch {
                expected: cols,
                actual: bad.len(),
            });
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// Cost of a full row-to-column mapping, summed in row order.
    pub fn total(&self, row_to_col: &[usize]) -> f64 {
        row_to_col
            .iter()
            .enumerate()
            .map(|(r, &c)| self.get(r, c))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column assigned to each row.
    pub row_to_col: Vec<usize>,
    /// Sum of the assigned costs in row order.
    pub total_cost: f64,
}

/// Minimum-cost assignment of every row to a distinct column.
pub fn solve(cost: &CostMatrix) -> Result<Assignment, AssignmentError> {
    let (n, m) = (cost.rows, cost.cols);
    if n > m {
        return Err(AssignmentError::TooFewColumns { rows: n, cols: m });
    }
    if n == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            total_cost: 0.0,
        });
    }

    // 1-based: index 0 is the virtual row/column of the augmenting search.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
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

    let mut row_to_col = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            row_to_col[owner[j] - 1] = j - 1;
        }
    }
    let total_cost = cost.total(&row_to_col);
    Ok(Assignment {
        row_to_col,
        total_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let c = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let a = solve(&c).unwrap();
        assert_eq!(a.row_to_col, vec![0, 1]);
        assert_eq!(a.total_cost, 2.0);
    }

    #[test]
    fn rectangular_picks_cheapest_columns() {
        let c = CostMatrix::from_rows(&[vec![9.0, 1.0, 5.0, 4.0], vec![9.0, 2.0, 9.0, 3.0]]).unwrap();
        let a = solve(&c).unwrap();
        assert_eq!(a.row_to_col, vec![1, 3]);
        assert_eq!(a.total_cost, 4.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            solve(&CostMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap()),
            Err(AssignmentError::TooFewColumns { .. })
        ));
        assert!(CostMatrix::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(matches!(
            CostMatrix::from_vec(1, 2, vec![0.0, f64::NAN]),
            Err(AssignmentError::NonFinite { row: 0, col: 1 })
        ));
        assert!(CostMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn empty() {
        let a = solve(&CostMatrix::from_vec(0, 3, vec![]).unwrap()).unwrap();
        assert!(a.row_to_col.is_empty());
    }
}
