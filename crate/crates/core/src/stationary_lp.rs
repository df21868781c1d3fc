//! Discounted occupation-measure LP, stationary strategy extraction and
//! the temporal-versus-spatial moment diagnostic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bellman_solver::{sojourn_statistics, BellmanError, Trajectory};
use crate::hose_model::{Action, ACTIONS};
use crate::mdp::{Mdp, StrategyMatrix};
use crate::simplex::{self, LinearProgram, LpError};

/// Basic values below this are treated as exact zeros.
const ZERO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StationaryError {
    #[error("initial distribution has {got} entries for {expected} states")]
    GammaLength { expected: usize, got: usize },
    #[error("initial distribution must be strictly positive and sum to 1")]
    GammaInvalid,
    #[error("column ({state}, {action}) sums to {sum}, expected {expected}")]
    ColumnSum {
        state: usize,
        action: usize,
        sum: f64,
        expected: f64,
    },
    #[error("state {0} carries no occupation mass")]
    ZeroMass(usize),
    #[error("k_max must be at least 1")]
    MomentOrder,
    #[error("occupation measure covers {occupation} states, embedding has {levels}")]
    Shape { occupation: usize, levels: usize },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Rollout(#[from] BellmanError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpInstance {
    /// Column `s * 3 + a` holds `x_{s,a}`; row `s'` is the balance of `s'`.
    pub lp: LinearProgram,
    pub n_states: usize,
    pub beta: f64,
    pub gamma: Vec<f64>,
}

pub fn column(state: usize, action: Action) -> usize {
    state * ACTIONS + action.index()
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub fn build_dual_lp(mdp: &Mdp, gamma: Option<&[f64]>) -> Result<LpInstance, StationaryError> {
    let n = mdp.n_states();
    let gamma = match gamma {
        Some(g) => g.to_vec(),
        None => uniform(n),
    };
    if gamma.len() != n {
        return Err(StationaryError::GammaLength {
            expected: n,
            got: gamma.len(),
        });
    }
    if gamma.iter().any(|&g| !(g > 0.0)) || (gamma.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(StationaryError::GammaInvalid);
    }
    let beta = mdp.beta;
    let cols = n * ACTIONS;
    let mut matrix = vec![vec![0.0; cols]; n];
    let mut objective = vec![0.0; cols];
    for s in 0..n {
        for a in Action::ALL {
            let j = column(s, a);
            objective[j] = mdp.cost(s, a);
            matrix[s][j] += 1.0;
            for &(t, p) in mdp.row(s, a) {
                matrix[t][j] -= beta * p;
            }
        }
    }
    for s in 0..n {
        for a in Action::ALL {
            let j = column(s, a);
            let sum: f64 = matrix.iter().map(|row| row[j]).sum();
            if (sum - (1.0 - beta)).abs() > 1e-12 {
                return Err(StationaryError::ColumnSum {
                    state: s,
                    action: a.index(),
                    sum,
                    expected: 1.0 - beta,
                });
            }
        }
    }
    Ok(LpInstance {
        lp: LinearProgram {
            objective,
            matrix,
            rhs: gamma.clone(),
        },
        n_states: n,
        beta,
        gamma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationMeasure {
    pub x: Vec<[f64; ACTIONS]>,
    /// `max |A x - gamma|`.
    pub residual: f64,
    pub objective: f64,
}

impl OccupationMeasure {
    pub fn total(&self) -> f64 {
        self.x.iter().flatten().sum()
    }

    pub fn state_mass(&self, state: usize) -> f64 {
        self.x[state].iter().sum()
    }
}

/// Basic optimal occupation measure.
///
/// Columns that duplicate a lower-index column of the same state (identical
/// cost and identical constraint column, e.g. a jump that is blocked at a
/// boundary) have their mass moved onto that lower column. This leaves the
/// point feasible, optimal and basic, and makes ties resolve towards the
/// lowest action index.
pub fn solve_simplex(instance: &LpInstance) -> Result<OccupationMeasure, StationaryError> {
    let lp = &instance.lp;
    let sol = simplex::solve(lp)?;
    let mut flat = sol.x;
    let scale = flat.iter().copied().fold(0.0, f64::max).max(1.0);
    for v in flat.iter_mut() {
        if *v < ZERO * scale {
            *v = 0.0;
        }
    }
    for s in 0..instance.n_states {
        for a in 1..ACTIONS {
            let j = s * ACTIONS + a;
            if flat[j] == 0.0 {
                continue;
            }
            let twin = (0..a).map(|b| s * ACTIONS + b).find(|&k| {
                lp.objective[k] == lp.objective[j] && lp.matrix.iter().all(|row| row[k] == row[j])
            });
            if let Some(k) = twin {
                flat[k] += flat[j];
                flat[j] = 0.0;
            }
        }
    }
    let x: Vec<[f64; ACTIONS]> = flat
        .chunks(ACTIONS)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok(OccupationMeasure {
        residual: lp.residual(&flat),
        objective: lp.value(&flat),
        x,
    })
}

/// `f(s,a) = x_{s,a} / sum_a x_{s,a}`.
pub fn extract_stationary_strategy(
    occupation: &OccupationMeasure,
) -> Result<StrategyMatrix, StationaryError> {
    let probs = occupation
        .x
        .iter()
        .enumerate()
        .map(|(s, col)| {
            let mass: f64 = col.iter().sum();
            if mass <= 0.0 {
                return Err(StationaryError::ZeroMass(s));
            }
            Ok(col.map(|v| v / mass))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StrategyMatrix { probs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarySolution {
    pub instance: LpInstance,
    pub occupation: OccupationMeasure,
    pub strategy: StrategyMatrix,
}

pub fn solve_stationary(mdp: &Mdp, gamma: Option<&[f64]>) -> Result<StationarySolution, StationaryError> {
    let instance = build_dual_lp(mdp, gamma)?;
    let occupation = solve_simplex(&instance)?;
    let strategy = extract_stationary_strategy(&occupation)?;
    Ok(StationarySolution {
        instance,
        occupation,
        strategy,
    })
}

/// One `(action, k)` cell of the moment comparison.
///
/// For `k = 0` both sides are the action's share of all epochs; for
/// `k >= 1` they are the `k`-th moment of the state level conditional on
/// the action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub action: Action,
    pub k: u32,
    pub spatial: f64,
    pub temporal: f64,
    pub abs_gap: f64,
    /// Relative to the spatial value; falls back to the absolute gap when
    /// the spatial value vanishes.
    pub rel_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityReport {
    pub epochs: usize,
    pub rows: Vec<MomentRow>,
}

impl ErgodicityReport {
    pub fn max_rel_gap(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_gap).fold(0.0, f64::max)
    }
}

fn moments(weights: &[[f64; ACTIONS]], levels: &[f64], k_max: u32) -> Vec<[f64; ACTIONS]> {
    let total: f64 = weights.iter().flatten().sum();
    (0..=k_max)
        .map(|k| {
            let mut out = [0.0; ACTIONS];
            for (a, slot) in out.iter_mut().enumerate() {
                let mass: f64 = weights.iter().map(|w| w[a]).sum();
                if k == 0 {
                    *slot = if total > 0.0 { mass / total } else { 0.0 };
                } else if mass > 0.0 {
                    let m: f64 = weights
                        .iter()
                        .zip(levels)
                        .map(|(w, &l)| w[a] * l.powi(k as i32))
                        .sum();
                    *slot = m / mass;
                }
            }
            out
        })
        .collect()
}

/// Compares moments of the state level under the occupation measure with
/// those of the visit frequencies in `trajectories`.
pub fn ergodicity_check(
    occupation: &OccupationMeasure,
    levels: &[f64],
    trajectories: &[Trajectory],
    k_max: u32,
) -> Result<ErgodicityReport, StationaryError> {
    if k_max < 1 {
        return Err(StationaryError::MomentOrder);
    }
    if occupation.x.len() != levels.len() {
        return Err(StationaryError::Shape {
            occupation: occupation.x.len(),
            levels: levels.len(),
        });
    }
    let counts = sojourn_statistics(trajectories)?;
    let mut visits = vec![[0.0; ACTIONS]; levels.len()];
    let mut epochs = 0;
    for (&(s, a), &c) in &counts {
        if let Some(cell) = visits.get_mut(s) {
            cell[a.index()] += c as f64;
        }
        epochs += c;
    }
    let spatial = moments(&occupation.x, levels, k_max);
    let temporal = moments(&visits, levels, k_max);
    let mut rows = Vec::new();
    for a in Action::ALL {
        for k in 0..=k_max {
            let sp = spatial[k as usize][a.index()];
            let te = temporal[k as usize][a.index()];
            let abs_gap = (sp - te).abs();
            let rel_gap = if sp.abs() < 1e-12 { abs_gap } else { abs_gap / sp.abs() };
            rows.push(MomentRow {
                action: a,
                k,
                spatial: sp,
                temporal: te,
                abs_gap,
                rel_gap,
            });
        }
    }
    Ok(ErgodicityReport { epochs, rows })
}
