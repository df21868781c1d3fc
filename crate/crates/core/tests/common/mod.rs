//! Reference implementations used only by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use vpn_reserve::switching_game::{Controller, GameState, SwitchingGame};

/// Value of a small zero-sum matrix game by support enumeration
/// (row player maximizes). Assumes a nondegenerate game.
pub fn support_enumeration(m: &[Vec<f64>]) -> (f64, Vec<f64>, Vec<f64>) {
    let rows = m.len();
    let cols = m[0].len();
    // a saddle point in pure strategies is the common case
    for i in 0..rows {
        for j in 0..cols {
            let row_min = m[i].iter().copied().fold(f64::INFINITY, f64::min);
            let col_max = (0..rows).map(|k| m[k][j]).fold(f64::NEG_INFINITY, f64::max);
            if m[i][j] == row_min && m[i][j] == col_max {
                let mut x = vec![0.0; rows];
                let mut y = vec![0.0; cols];
                x[i] = 1.0;
                y[j] = 1.0;
                return (m[i][j], x, y);
            }
        }
    }
    let k_max = rows.min(cols);
    for k in 2..=k_max {
        for rs in subsets(rows, k) {
            for cs in subsets(cols, k) {
                if let Some(found) = try_support(m, &rs, &cs) {
                    return found;
                }
            }
        }
    }
    panic!("no equilibrium found by support enumeration");
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..(1 << n))
        .filter(|mask| mask.count_ones() as usize == k)
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

fn try_support(m: &[Vec<f64>], rs: &[usize], cs: &[usize]) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let k = rs.len();
    // unknowns: k weights and the value
    let mut a = DMatrix::<f64>::zeros(k + 1, k + 1);
    let mut b = DVector::<f64>::zeros(k + 1);
    for (r, &j) in cs.iter().enumerate() {
        for (c, &i) in rs.iter().enumerate() {
            a[(r, c)] = m[i][j];
        }
        a[(r, k)] = -1.0;
    }
    for c in 0..k {
        a[(k, c)] = 1.0;
    }
    b[k] = 1.0;
    let xs = a.clone().lu().solve(&b)?;
    let mut a2 = DMatrix::<f64>::zeros(k + 1, k + 1);
    for (r, &i) in rs.iter().enumerate() {
        for (c, &j) in cs.iter().enumerate() {
            a2[(r, c)] = m[i][j];
        }
        a2[(r, k)] = -1.0;
    }
    for c in 0..k {
        a2[(k, c)] = 1.0;
    }
    let ys = a2.lu().solve(&b)?;
    let v = xs[k];
    let mut x = vec![0.0; m.len()];
    let mut y = vec![0.0; m[0].len()];
    for (c, &i) in rs.iter().enumerate() {
        x[i] = xs[c];
    }
    for (c, &j) in cs.iter().enumerate() {
        y[j] = ys[c];
    }
    let tol = 1e-11;
    if x.iter().chain(&y).any(|&p| p < -tol) {
        return None;
    }
    for j in 0..m[0].len() {
        let pay: f64 = (0..m.len()).map(|i| x[i] * m[i][j]).sum();
        if pay < v - 1e-9 {
            return None;
        }
    }
    for row in m {
        let pay: f64 = row.iter().zip(&y).map(|(a, b)| a * b).sum();
        if pay > v + 1e-9 {
            return None;
        }
    }
    Some((v, x, y))
}

/// Shapley value iteration on normalized values until the sup-norm
/// change drops below `tol`.
pub fn shapley_values(game: &SwitchingGame, tol: f64) -> Vec<f64> {
    let n = game.n_states();
    let mut v = vec![0.0; n];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..n)
            .map(|s| support_enumeration(&local_matrix(game, s, &v)).0)
            .collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < tol {
            return v;
        }
    }
    panic!("Shapley iteration did not converge");
}

/// Rebuilt here from the raw game data rather than borrowed from the crate.
pub fn local_matrix(game: &SwitchingGame, s: usize, v: &[f64]) -> Vec<Vec<f64>> {
    let st = &game.states[s];
    let rows = st.reward.len();
    let cols = st.reward[0].len();
    let mut m = vec![vec![0.0; cols]; rows];
    for a in 0..rows {
        for d in 0..cols {
            let row = match st.controller {
                Controller::Player1 => &st.transitions[a],
                Controller::Player2 => &st.transitions[d],
            };
            let cont: f64 = row.iter().map(|&(t, p)| p * v[t]).sum();
            m[a][d] = (1.0 - game.beta) * st.reward[a][d] + game.beta * cont;
        }
    }
    m
}

fn random_row<R: Rng>(rng: &mut R, n: usize) -> Vec<(usize, f64)> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().enumerate().map(|(t, p)| (t, p / total)).collect()
}

/// Random switching game with `e1` player-1 states followed by `e2`
/// player-2 states, each with between 1 and 3 actions per side.
pub fn random_game<R: Rng>(rng: &mut R, e1: usize, e2: usize, beta: f64) -> SwitchingGame {
    let n = e1 + e2;
    let states = (0..n)
        .map(|s| {
            let rows = rng.random_range(1..=3);
            let cols = rng.random_range(1..=3);
            let reward = (0..rows)
                .map(|_| (0..cols).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let controller = if s < e1 { Controller::Player1 } else { Controller::Player2 };
            let k = if s < e1 { rows } else { cols };
            let transitions = (0..k).map(|_| random_row(rng, n)).collect();
            GameState {
                controller,
                reward,
                transitions,
            }
        })
        .collect();
    SwitchingGame::new(beta, states).expect("valid random game")
}
