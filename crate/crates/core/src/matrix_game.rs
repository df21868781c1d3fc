//! Zero-sum matrix games solved by linear programming. The row player
//! maximizes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simplex::{self, LinearProgram, LpError};

/// Tolerance for recognizing a pure optimal row.
const PURE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("payoff matrix is empty or ragged")]
    Shape,
    #[error("payoff matrix contains a non-finite entry")]
    NonFinite,
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixGameSolution {
    pub value: f64,
    pub row: Vec<f64>,
    pub col: Vec<f64>,
}

fn check(m: &[Vec<f64>]) -> Result<(usize, usize), GameError> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || m.iter().any(|r| r.len() != cols) {
        return Err(GameError::Shape);
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GameError::NonFinite);
    }
    Ok((rows, cols))
}

/// Worst-case payoff of a mixed row strategy.
pub fn guaranteed(m: &[Vec<f64>], row: &[f64]) -> f64 {
    let cols = m[0].len();
    (0..cols)
        .map(|j| m.iter().zip(row).map(|(r, &p)| p * r[j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Best payoff the row player can force against a mixed column strategy.
pub fn best_reply(m: &[Vec<f64>], col: &[f64]) -> f64 {
    m.iter()
        .map(|r| r.iter().zip(col).map(|(a, &q)| a * q).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let v: Vec<f64> = v.into_iter().map(|x| x.max(0.0)).collect();
    let total: f64 = v.iter().sum();
    v.into_iter().map(|x| x / total).collect()
}

/// Value and optimal strategies. Payoffs are shifted to be positive, then
/// each player's strategy comes from a basic optimal solution of its LP.
/// When some pure row is optimal, the lowest-index such row is returned
/// as the row strategy.
pub fn solve_matrix_game(m: &[Vec<f64>]) -> Result<MatrixGameSolution, GameError> {
    let (rows, cols) = check(m)?;
    let min = m.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min;
    let shifted: Vec<Vec<f64>> = m
        .iter()
        .map(|r| r.iter().map(|v| v + shift).collect())
        .collect();

    // row player: min sum(u) s.t. M'^T u >= 1; variables u then surplus
    let mut matrix = Vec::with_capacity(cols);
    for j in 0..cols {
        let mut line: Vec<f64> = shifted.iter().map(|r| r[j]).collect();
        line.extend((0..cols).map(|k| if k == j { -1.0 } else { 0.0 }));
        matrix.push(line);
    }
    let mut objective = vec![-1.0; rows];
    objective.extend(vec![0.0; cols]);
    let row_lp = LinearProgram {
        objective,
        matrix,
        rhs: vec![1.0; cols],
    };
    let row_sol = simplex::solve(&row_lp)?;
    let u_sum: f64 = row_sol.x[..rows].iter().sum();

    // column player: max sum(w) s.t. M' w <= 1; variables w then slack
    let matrix = shifted
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut line = r.clone();
            line.extend((0..rows).map(|k| if k == i { 1.0 } else { 0.0 }));
            line
        })
        .collect();
    let mut objective = vec![1.0; cols];
    objective.extend(vec![0.0; rows]);
    let col_lp = LinearProgram {
        objective,
        matrix,
        rhs: vec![1.0; rows],
    };
    let col_sol = simplex::solve(&col_lp)?;

    let value = 1.0 / u_sum - shift;
    let mut row = normalize(row_sol.x[..rows].to_vec());
    let col = normalize(col_sol.x[..cols].to_vec());
    let tol = PURE_TOL * value.abs().max(1.0);
    if let Some(i) = (0..rows).find(|&i| m[i].iter().copied().fold(f64::INFINITY, f64::min) >= value - tol)
    {
        row = (0..rows).map(|k| if k == i { 1.0 } else { 0.0 }).collect();
    }
    Ok(MatrixGameSolution { value, row, col })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matching_pennies() {
        let s = solve_matrix_game(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((s.value - 0.5).abs() < 1e-12);
        for p in s.row.iter().chain(&s.col) {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_row_is_pure() {
        let s = solve_matrix_game(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![1.0, -1.0]]).unwrap();
        assert_eq!(s.row, vec![0.0, 1.0, 0.0]);
        assert!((s.value - 2.0).abs() < 1e-12);
        assert_eq!(s.col, vec![1.0, 0.0]);
    }

    #[test]
    fn constant_matrix_takes_first_row() {
        let s = solve_matrix_game(&vec![vec![4.0; 3]; 3]).unwrap();
        assert_eq!(s.row, vec![1.0, 0.0, 0.0]);
        assert!((s.value - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rock_paper_scissors() {
        let m = vec![
            vec![0.0, -1.0, 1.0],
            vec![1.0, 0.0, -1.0],
            vec![-1.0, 1.0, 0.0],
        ];
        let s = solve_matrix_game(&m).unwrap();
        assert!(s.value.abs() < 1e-12);
        assert!(guaranteed(&m, &s.row) > -1e-12);
        assert!(best_reply(&m, &s.col) < 1e-12);
    }

    #[test]
    fn shape_errors() {
        assert_eq!(solve_matrix_game(&[]), Err(GameError::Shape));
        assert_eq!(
            solve_matrix_game(&[vec![1.0], vec![1.0, 2.0]]),
            Err(GameError::Shape)
        );
        assert_eq!(solve_matrix_game(&[vec![f64::NAN]]), Err(GameError::NonFinite));
    }
}
