//! Two-person zero-sum discounted stochastic games with switching control:
//! in every state exactly one player drives the transition law.
//!
//! Values are normalized, `V = (1 - beta) * sum_t beta^t r_t`, so that the
//! one-step operator reads `(1 - beta) r + beta E[V]`. Player 1 maximizes.
//!
//! The solver alternates two steps:
//! 1. with player 1's strategy on E1 frozen, the game becomes a
//!    single-controller game (player 2 drives every transition) and is
//!    solved exactly by one LP over player 2's occupation measure;
//! 2. on every E1 state whose current strategy is no longer optimal in the
//!    local matrix game, player 1 switches to an extreme optimal strategy.
//!
//! It stops when the value vector repeats.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hose_model::{Action, ACTIONS};
use crate::matrix_game::{best_reply, guaranteed, solve_matrix_game, GameError};
use crate::mdp::Mdp;
use crate::mpls_hierarchy::{aggregate_links, NetworkModel};
use crate::simplex::{self, LinearProgram, LpError};

/// Default cap on improvement rounds.
pub const MAX_ROUNDS: usize = 200;
/// Largest product space accepted by builders.
pub const MAX_STATES: usize = 1_000_000;
/// Value-repeat tolerance.
pub const REPEAT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SwitchingError {
    #[error("discount factor must lie in [0, 1), got {0}")]
    InvalidDiscount(f64),
    #[error("state {state}: {message}")]
    Malformed { state: usize, message: String },
    #[error("game has no states")]
    Empty,
    #[error("player 1 strategy has {got} entries for {expected} states")]
    StrategyShape { expected: usize, got: usize },
    #[error("no value repeat after {rounds} rounds; last two values {previous:?} and {last:?}")]
    NoRepeat {
        rounds: usize,
        previous: Vec<f64>,
        last: Vec<f64>,
    },
    #[error("policy evaluation system is singular")]
    Singular,
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    MatrixGame(#[from] GameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Controller {
    Player1,
    Player2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub controller: Controller,
    /// `reward[a][d]`.
    pub reward: Vec<Vec<f64>>,
    /// One sparse row per action of the controlling player.
    pub transitions: Vec<Vec<(usize, f64)>>,
}

impl GameState {
    pub fn rows(&self) -> usize {
        self.reward.len()
    }

    pub fn cols(&self) -> usize {
        self.reward[0].len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingGame {
    pub beta: f64,
    pub states: Vec<GameState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatePartition {
    /// Player 1 (the VPNs) drives transitions.
    pub e1: Vec<usize>,
    /// Player 2 (the operator) drives transitions.
    pub e2: Vec<usize>,
}

impl SwitchingGame {
    pub fn new(beta: f64, states: Vec<GameState>) -> Result<Self, SwitchingError> {
        if !(0.0..1.0).contains(&beta) {
            return Err(SwitchingError::InvalidDiscount(beta));
        }
        if states.is_empty() {
            return Err(SwitchingError::Empty);
        }
        let n = states.len();
        for (s, st) in states.iter().enumerate() {
            let bad = |message: &str| SwitchingError::Malformed {
                state: s,
                message: message.to_string(),
            };
            if st.reward.is_empty() || st.reward[0].is_empty() {
                return Err(bad("empty reward matrix"));
            }
            let cols = st.reward[0].len();
            if st.reward.iter().any(|r| r.len() != cols) {
                return Err(bad("ragged reward matrix"));
            }
            if st.reward.iter().flatten().any(|v| !v.is_finite()) {
                return Err(bad("non-finite reward"));
            }
            let expected = match st.controller {
                Controller::Player1 => st.rows(),
                Controller::Player2 => cols,
            };
            if st.transitions.len() != expected {
                return Err(bad("one transition row per controlling action is required"));
            }
            for row in &st.transitions {
                let total: f64 = row.iter().map(|&(_, p)| p).sum();
                if row.iter().any(|&(t, p)| t >= n || !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(bad("transition row is not a distribution over states"));
                }
            }
        }
        Ok(SwitchingGame { beta, states })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn partition(&self) -> StatePartition {
        let (e1, e2) = (0..self.n_states()).partition(|&s| self.states[s].controller == Controller::Player1);
        StatePartition { e1, e2 }
    }

    fn controlling_row(&self, s: usize, a: usize, d: usize) -> &[(usize, f64)] {
        let st = &self.states[s];
        match st.controller {
            Controller::Player1 => &st.transitions[a],
            Controller::Player2 => &st.transitions[d],
        }
    }

    /// `(1 - beta) r(s,a,d) + beta E[V | s, a, d]`.
    pub fn local_matrix(&self, s: usize, values: &[f64]) -> Vec<Vec<f64>> {
        let st = &self.states[s];
        (0..st.rows())
            .map(|a| {
                (0..st.cols())
                    .map(|d| {
                        let cont: f64 = self
                            .controlling_row(s, a, d)
                            .iter()
                            .map(|&(t, p)| p * values[t])
                            .sum();
                        (1.0 - self.beta) * st.reward[a][d] + self.beta * cont
                    })
                    .collect()
            })
            .collect()
    }

    /// Cells of the largest LP the solver will build.
    pub fn lp_cells(&self) -> usize {
        let rows: usize = self.states.iter().map(|s| s.rows() + 1).sum();
        let vars: usize = self.states.iter().map(|s| s.cols() + 1 + s.rows()).sum();
        rows.saturating_mul(vars + rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleControllerSolution {
    pub values: Vec<f64>,
    /// Player 2's stationary strategy on every state.
    pub strategy: Vec<Vec<f64>>,
    pub residual: f64,
}

fn mix_rows(rows: &[Vec<(usize, f64)>], weights: &[f64]) -> Vec<(usize, f64)> {
    let mut acc: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for (row, &w) in rows.iter().zip(weights) {
        if w > 0.0 {
            for &(t, p) in row {
                *acc.entry(t).or_insert(0.0) += w * p;
            }
        }
    }
    acc.into_iter().collect()
}

/// Solves the game in which player 1 is held to `f` on E1 (entries for E2
/// states are ignored) and player 2 therefore drives every transition.
pub fn solve_single_controller(
    game: &SwitchingGame,
    f: &[Vec<f64>],
) -> Result<SingleControllerSolution, SwitchingError> {
    let n = game.n_states();
    if f.len() != n {
        return Err(SwitchingError::StrategyShape {
            expected: n,
            got: f.len(),
        });
    }
    // Per state: reward rows available to player 1 and the transition row
    // attached to each column of player 2.
    let mut rows_of: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
    let mut trans_of: Vec<Vec<Vec<(usize, f64)>>> = Vec::with_capacity(n);
    for (s, st) in game.states.iter().enumerate() {
        match st.controller {
            Controller::Player1 => {
                let w = &f[s];
                if w.len() != st.rows() {
                    return Err(SwitchingError::StrategyShape {
                        expected: st.rows(),
                        got: w.len(),
                    });
                }
                let mixed: Vec<f64> = (0..st.cols())
                    .map(|d| (0..st.rows()).map(|a| w[a] * st.reward[a][d]).sum())
                    .collect();
                rows_of.push(vec![mixed]);
                let row = mix_rows(&st.transitions, w);
                trans_of.push(vec![row; st.cols()]);
            }
            Controller::Player2 => {
                rows_of.push(st.reward.clone());
                trans_of.push(st.transitions.clone());
            }
        }
    }
    let min = rows_of.iter().flatten().flatten().copied().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min;

    // variable layout: x_{s,d} | z_s | slack per reward row
    let mut x_off = Vec::with_capacity(n);
    let mut k = 0;
    for st in &game.states {
        x_off.push(k);
        k += st.cols();
    }
    let z0 = k;
    let slack0 = z0 + n;
    let n_rows_total: usize = rows_of.iter().map(Vec::len).sum();
    let vars = slack0 + n_rows_total;
    let mut matrix = Vec::with_capacity(n_rows_total + n);
    let mut rhs = Vec::with_capacity(n_rows_total + n);
    let mut slack = slack0;
    for s in 0..n {
        for r in &rows_of[s] {
            let mut line = vec![0.0; vars];
            line[z0 + s] = 1.0;
            for (d, &v) in r.iter().enumerate() {
                line[x_off[s] + d] = -(v + shift);
            }
            line[slack] = -1.0;
            slack += 1;
            matrix.push(line);
            rhs.push(0.0);
        }
    }
    let gamma = 1.0 / n as f64;
    let balance0 = matrix.len();
    for _ in 0..n {
        matrix.push(vec![0.0; vars]);
        rhs.push(gamma);
    }
    for s in 0..n {
        for (d, row) in trans_of[s].iter().enumerate() {
            let j = x_off[s] + d;
            matrix[balance0 + s][j] += 1.0;
            for &(t, p) in row {
                matrix[balance0 + t][j] -= game.beta * p;
            }
        }
    }
    let mut objective = vec![0.0; vars];
    for z in objective.iter_mut().skip(z0).take(n) {
        *z = -1.0;
    }
    let lp = LinearProgram {
        objective,
        matrix,
        rhs,
    };
    let sol = simplex::solve(&lp)?;
    let residual = lp.residual(&sol.x);
    let strategy: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            let xs: Vec<f64> = (0..game.states[s].cols())
                .map(|d| sol.x[x_off[s] + d].max(0.0))
                .collect();
            let mass: f64 = xs.iter().sum();
            xs.into_iter().map(|v| v / mass).collect()
        })
        .collect();

    // evaluate: player 1 best-responds myopically, player 2 plays `strategy`
    let mut p = DMatrix::<f64>::identity(n, n);
    let mut rho = DVector::<f64>::zeros(n);
    for s in 0..n {
        let g = &strategy[s];
        rho[s] = rows_of[s]
            .iter()
            .map(|r| r.iter().zip(g).map(|(v, q)| v * q).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
            * (1.0 - game.beta);
        for (d, row) in trans_of[s].iter().enumerate() {
            for &(t, q) in row {
                p[(s, t)] -= game.beta * g[d] * q;
            }
        }
    }
    let v = p.lu().solve(&rho).ok_or(SwitchingError::Singular)?;
    Ok(SingleControllerSolution {
        values: v.iter().copied().collect(),
        strategy,
        residual,
    })
}

/// Player 1's extreme optimal strategy in the local game at `s`.
pub fn local_matrix_game(
    game: &SwitchingGame,
    s: usize,
    values: &[f64],
) -> Result<Vec<f64>, SwitchingError> {
    Ok(solve_matrix_game(&game.local_matrix(s, values))?.row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSolution {
    pub values: Vec<f64>,
    pub player1: Vec<Vec<f64>>,
    pub player2: Vec<Vec<f64>>,
    pub rounds: usize,
    /// Value vector after every single-controller solve.
    pub history: Vec<Vec<f64>>,
}

fn lowest_pure(rows: usize) -> Vec<f64> {
    (0..rows).map(|a| if a == 0 { 1.0 } else { 0.0 }).collect()
}

pub fn solve_switching_game(game: &SwitchingGame) -> Result<GameSolution, SwitchingError> {
    solve_switching_game_with(game, MAX_ROUNDS)
}

pub fn solve_switching_game_with(
    game: &SwitchingGame,
    max_rounds: usize,
) -> Result<GameSolution, SwitchingError> {
    let n = game.n_states();
    let partition = game.partition();
    let mut f: Vec<Vec<f64>> = game.states.iter().map(|st| lowest_pure(st.rows())).collect();
    let mut history: Vec<Vec<f64>> = Vec::new();
    for round in 1..=max_rounds {
        let sc = solve_single_controller(game, &f)?;
        let repeated = history.last().is_some_and(|prev: &Vec<f64>| {
            prev.iter().zip(&sc.values).all(|(a, b)| (a - b).abs() <= REPEAT_TOL)
        });
        history.push(sc.values.clone());
        // with no player 1 states the first solve is already final
        if repeated || partition.e1.is_empty() {
            let values = sc.values;
            let mut player1 = Vec::with_capacity(n);
            let mut player2 = Vec::with_capacity(n);
            for s in 0..n {
                let m = game.local_matrix(s, &values);
                let sol = solve_matrix_game(&m)?;
                player1.push(sol.row);
                player2.push(sol.col);
            }
            return Ok(GameSolution {
                values,
                player1,
                player2,
                rounds: round,
                history,
            });
        }
        for &s in &partition.e1 {
            let m = game.local_matrix(s, &sc.values);
            let sol = solve_matrix_game(&m)?;
            let tol = 1e-9 * sol.value.abs().max(1.0);
            if guaranteed(&m, &f[s]) < sol.value - tol {
                f[s] = sol.row;
            }
        }
    }
    let last = history.last().cloned().unwrap_or_default();
    let previous = if history.len() >= 2 {
        history[history.len() - 2].clone()
    } else {
        Vec::new()
    };
    Err(SwitchingError::NoRepeat {
        rounds: max_rounds,
        previous,
        last,
    })
}

/// Largest one-step gain available to either player against the returned
/// strategies and values: `(player 1 gain, player 2 gain)`.
pub fn deviation_gains(game: &SwitchingGame, sol: &GameSolution) -> (f64, f64) {
    let mut g1: f64 = 0.0;
    let mut g2: f64 = 0.0;
    for s in 0..game.n_states() {
        let m = game.local_matrix(s, &sol.values);
        g1 = g1.max(best_reply(&m, &sol.player2[s]) - sol.values[s]);
        g2 = g2.max(sol.values[s] - guaranteed(&m, &sol.player1[s]));
    }
    (g1, g2)
}

/// Cap on dense LP tableau cells for VPN games.
pub const MAX_LP_CELLS: usize = 50_000_000;

/// The switching game between all VPN segments (player 1) and the
/// operator's link chains (player 2) on the product of segment chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpnGame {
    pub game: SwitchingGame,
    /// Segment chain sizes, in VPN then segment order.
    pub radices: Vec<usize>,
    pub n_links: usize,
    /// Link driving each segment under operator control.
    pub segment_link: Vec<Option<usize>>,
}

/// Mixed-radix digits, first digit most significant.
pub fn decode_index(mut index: usize, radices: &[usize]) -> Vec<usize> {
    let mut digits = vec![0; radices.len()];
    for (d, &r) in digits.iter_mut().zip(radices).rev() {
        *d = index % r;
        index /= r;
    }
    digits
}

pub fn encode_index(digits: &[usize], radices: &[usize]) -> usize {
    digits.iter().zip(radices).fold(0, |acc, (&d, &r)| acc * r + d)
}

fn joint_actions(n: usize) -> Result<Vec<Vec<Action>>, SwitchingError> {
    let count = 3usize
        .checked_pow(n as u32)
        .filter(|&c| c <= MAX_STATES)
        .ok_or_else(|| SwitchingError::TooLarge(format!("3^{n} joint actions")))?;
    let radices = vec![ACTIONS; n];
    Ok((0..count)
        .map(|i| decode_index(i, &radices).into_iter().map(|d| Action::ALL[d]).collect())
        .collect())
}

/// Product distribution of independent per-coordinate moves.
fn product_row(radices: &[usize], rows: impl Iterator<Item = Vec<(usize, f64)>>) -> Vec<(usize, f64)> {
    let mut acc: Vec<(usize, f64)> = vec![(0, 1.0)];
    for (row, &r) in rows.zip(radices) {
        let mut next = Vec::with_capacity(acc.len() * row.len());
        for &(i, p) in &acc {
            for &(j, q) in &row {
                next.push((i * r + j, p * q));
            }
        }
        acc = next;
    }
    acc.sort_by_key(|&(i, _)| i);
    acc
}

impl VpnGame {
    /// Global states whose per-VPN costs (delay at the current state) are
    /// all within bounds form E1; player 1 drives them. The reward is
    /// the summed expected segment costs minus expected link costs and the
    /// headroom `lambda`.
    pub fn build(network: &NetworkModel, beta: f64, lambda: f64) -> Result<Self, SwitchingError> {
        let segments: Vec<&Mdp> = network.vpns.iter().flat_map(|v| v.segments.iter()).collect();
        let radices: Vec<usize> = segments.iter().map(|m| m.n_states()).collect();
        let n_states = radices
            .iter()
            .try_fold(1usize, |acc, &r| acc.checked_mul(r).filter(|&v| v <= MAX_STATES))
            .ok_or_else(|| SwitchingError::TooLarge(format!("product of segment sizes {radices:?}")))?;
        let a_joint = joint_actions(segments.len())?;
        let d_joint = joint_actions(network.links.len())?;
        let rows = n_states * (a_joint.len().max(d_joint.len()) + 1);
        let cols = n_states * (a_joint.len() + d_joint.len() + 2);
        if rows.saturating_mul(cols) > MAX_LP_CELLS {
            return Err(SwitchingError::TooLarge(format!(
                "{n_states} states with {} x {} joint actions",
                a_joint.len(),
                d_joint.len()
            )));
        }
        let segment_link: Vec<Option<usize>> = {
            let mut col = 0;
            segments
                .iter()
                .map(|_| {
                    let l = network
                        .routing
                        .rows()
                        .iter()
                        .position(|r| r[col] > 0.0 || r[col + 1] > 0.0);
                    col += 2;
                    l
                })
                .collect()
        };
        let seg_offsets: Vec<usize> = network
            .vpns
            .iter()
            .scan(0, |acc, v| {
                let o = *acc;
                *acc += v.segments.len();
                Some(o)
            })
            .collect();
        let mut states = Vec::with_capacity(n_states);
        for s in 0..n_states {
            let digits = decode_index(s, &radices);
            let per_vpn: Vec<Vec<usize>> = network
                .vpns
                .iter()
                .zip(&seg_offsets)
                .map(|(v, &o)| digits[o..o + v.segments.len()].to_vec())
                .collect();
            let costs = network
                .vpn_costs(&per_vpn, &per_vpn)
                .map_err(|e| SwitchingError::Malformed { state: s, message: e.to_string() })?;
            let within = costs.iter().zip(network.bounds.values()).all(|(c, b)| c <= b);
            let loads = aggregate_links(&network.routing, &network.vpn_flows(&per_vpn))
                .map_err(|e| SwitchingError::Malformed { state: s, message: e.to_string() })?;
            let link_states: Vec<usize> = network.links.iter().zip(&loads).map(|(l, &x)| l.snap(x)).collect();
            let reward: Vec<Vec<f64>> = a_joint
                .iter()
                .map(|acts| {
                    let gain: f64 = segments.iter().zip(&digits).zip(acts).map(|((m, &i), &a)| m.cost(i, a)).sum();
                    d_joint
                        .iter()
                        .map(|dacts| {
                            let loss: f64 = network
                                .links
                                .iter()
                                .zip(&link_states)
                                .zip(dacts)
                                .map(|((l, &i), &d)| l.mdp.cost(i, d))
                                .sum();
                            gain - loss - lambda
                        })
                        .collect()
                })
                .collect();
            let transitions = if within {
                a_joint
                    .iter()
                    .map(|acts| {
                        let rows = segments.iter().zip(&digits).zip(acts).map(|((m, &i), &a)| m.row(i, a).to_vec());
                        product_row(&radices, rows)
                    })
                    .collect()
            } else {
                d_joint
                    .iter()
                    .map(|dacts| {
                        let rows = segments.iter().zip(&digits).zip(&segment_link).map(|((m, &i), l)| {
                            let a = l.map_or(Action::Stay, |l| dacts[l]);
                            m.row(i, a).to_vec()
                        });
                        product_row(&radices, rows)
                    })
                    .collect()
            };
            states.push(GameState {
                controller: if within { Controller::Player1 } else { Controller::Player2 },
                reward,
                transitions,
            });
        }
        Ok(VpnGame {
            game: SwitchingGame::new(beta, states)?,
            radices,
            n_links: network.links.len(),
            segment_link,
        })
    }

    pub fn segment_states(&self, s: usize) -> Vec<usize> {
        decode_index(s, &self.radices)
    }

    /// Per-segment actions of player 1's joint action `a`.
    pub fn vpn_actions(&self, a: usize) -> Vec<Action> {
        decode_index(a, &vec![ACTIONS; self.radices.len()]).into_iter().map(|d| Action::ALL[d]).collect()
    }

    /// Per-link actions of player 2's joint action `d`.
    pub fn link_actions(&self, d: usize) -> Vec<Action> {
        decode_index(d, &vec![ACTIONS; self.n_links]).into_iter().map(|d| Action::ALL[d]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(controller: Controller, reward: Vec<Vec<f64>>, transitions: Vec<Vec<(usize, f64)>>) -> GameState {
        GameState {
            controller,
            reward,
            transitions,
        }
    }

    #[test]
    fn single_state_player_two() {
        let g = SwitchingGame::new(
            0.5,
            vec![state(
                Controller::Player2,
                vec![vec![3.0, 1.0], vec![0.0, 2.0]],
                vec![vec![(0, 1.0)], vec![(0, 1.0)]],
            )],
        )
        .unwrap();
        let sol = solve_switching_game(&g).unwrap();
        // absorbing state: normalized value equals the matrix-game value
        assert!((sol.values[0] - 1.5).abs() < 1e-9);
        let (a, b) = deviation_gains(&g, &sol);
        assert!(a < 1e-9 && b < 1e-9);
    }

    #[test]
    fn pure_player_two_state() {
        let g = SwitchingGame::new(
            0.3,
            vec![state(
                Controller::Player2,
                vec![vec![5.0, 2.0]],
                vec![vec![(0, 1.0)], vec![(0, 1.0)]],
            )],
        )
        .unwrap();
        let sc = solve_single_controller(&g, &[vec![1.0]]).unwrap();
        assert_eq!(sc.strategy[0], vec![0.0, 1.0]);
        assert!(sc.residual < 1e-8);
        assert!((sc.values[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_state_switching() {
        let g = SwitchingGame::new(
            0.8,
            vec![
                state(
                    Controller::Player1,
                    vec![vec![1.0, 0.0], vec![0.0, 2.0]],
                    vec![vec![(0, 1.0)], vec![(1, 1.0)]],
                ),
                state(
                    Controller::Player2,
                    vec![vec![4.0, -1.0], vec![0.0, 1.0]],
                    vec![vec![(0, 0.5), (1, 0.5)], vec![(1, 1.0)]],
                ),
            ],
        )
        .unwrap();
        let sol = solve_switching_game(&g).unwrap();
        let (a, b) = deviation_gains(&g, &sol);
        assert!(a < 1e-9 && b < 1e-9, "{a} {b}");
        assert_eq!(g.partition(), StatePartition { e1: vec![0], e2: vec![1] });
    }

    #[test]
    fn malformed_games() {
        assert!(matches!(
            SwitchingGame::new(1.0, vec![]),
            Err(SwitchingError::InvalidDiscount(_))
        ));
        assert_eq!(SwitchingGame::new(0.5, vec![]), Err(SwitchingError::Empty));
        let bad = state(Controller::Player1, vec![vec![1.0]], vec![vec![(0, 0.5)]]);
        assert!(matches!(
            SwitchingGame::new(0.5, vec![bad]),
            Err(SwitchingError::Malformed { .. })
        ));
    }
}
