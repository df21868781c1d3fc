//! A single finite chain with three actions, its stage costs and the
//! strategy types shared by the solvers.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::{flow_cost, CostError, PhiForm};
use crate::hose_model::{Action, ChainKernel, Segment, ACTIONS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("kernel has {kernel} states but {coords} coordinate rows were given")]
    Dimension { kernel: usize, coords: usize },
    #[error("state {state} has {got} coordinates, expected {expected}")]
    Coordinates { state: usize, got: usize, expected: usize },
    #[error("discount factor must lie in [0, 1), got {0}")]
    InvalidDiscount(f64),
    #[error("chain has no states")]
    Empty,
}

/// One chain: kernel, per-state traffic coordinates, and the derived costs.
///
/// The transition cost `c(s -> s')` is the delay at `s'` plus the price of
/// moving every coordinate's reservation from `phi(s)` to `phi(s')`. The
/// stage cost of `(s, a)` is its expectation under the kernel row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mdp {
    pub kernel: ChainKernel,
    /// Traffic per coordinate for each state (e.g. `[x_first, x_rest]`).
    pub coords: Vec<Vec<f64>>,
    pub prices: Vec<f64>,
    pub phi_form: PhiForm,
    pub beta: f64,
    /// Scalar embedding of each state (its first coordinate).
    pub levels: Vec<f64>,
    /// `phi` of every coordinate of every state.
    pub reservations: Vec<Vec<f64>>,
    /// Dense `c(s -> s')`.
    pub transition_cost: Vec<Vec<f64>>,
    pub costs: Vec<[f64; ACTIONS]>,
}

impl Mdp {
    pub fn new(
        kernel: ChainKernel,
        coords: Vec<Vec<f64>>,
        prices: Vec<f64>,
        phi_form: PhiForm,
        beta: f64,
    ) -> Result<Self, MdpError> {
        let n = kernel.len();
        if n == 0 {
            return Err(MdpError::Empty);
        }
        if coords.len() != n {
            return Err(MdpError::Dimension {
                kernel: n,
                coords: coords.len(),
            });
        }
        for (state, c) in coords.iter().enumerate() {
            if c.len() != prices.len() {
                return Err(MdpError::Coordinates {
                    state,
                    got: c.len(),
                    expected: prices.len(),
                });
            }
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(MdpError::InvalidDiscount(beta));
        }
        let reservations = coords
            .iter()
            .map(|c| {
                c.iter()
                    .zip(&prices)
                    .map(|(&x, &p)| phi_form.phi(x, p))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut transition_cost = vec![vec![0.0; n]; n];
        for (s, row) in transition_cost.iter_mut().enumerate() {
            for (t, cell) in row.iter_mut().enumerate() {
                *cell = coords[t]
                    .iter()
                    .zip(&coords[s])
                    .zip(&prices)
                    .map(|((&now, &prev), &p)| flow_cost(now, prev, p, phi_form))
                    .sum::<Result<f64, _>>()?;
            }
        }
        let costs = (0..n)
            .map(|s| {
                let mut c = [0.0; ACTIONS];
                for a in Action::ALL {
                    c[a.index()] = kernel
                        .row(s, a)
                        .iter()
                        .map(|&(t, p)| p * transition_cost[s][t])
                        .sum();
                }
                c
            })
            .collect();
        let levels = coords.iter().map(|c| c.first().copied().unwrap_or(0.0)).collect();
        Ok(Mdp {
            kernel,
            coords,
            prices,
            phi_form,
            beta,
            levels,
            reservations,
            transition_cost,
            costs,
        })
    }

    /// The chain of one hose segment, with the prices of its two flows.
    pub fn from_segment(
        segment: &Segment,
        kernel: ChainKernel,
        price_first: f64,
        price_rest: f64,
        phi_form: PhiForm,
        beta: f64,
    ) -> Result<Self, MdpError> {
        let coords = segment
            .states
            .iter()
            .map(|s| vec![s.x_first, s.x_rest])
            .collect();
        Mdp::new(kernel, coords, vec![price_first, price_rest], phi_form, beta)
    }

    pub fn n_states(&self) -> usize {
        self.coords.len()
    }

    pub fn cost(&self, state: usize, action: Action) -> f64 {
        self.costs[state][action.index()]
    }

    pub fn row(&self, state: usize, action: Action) -> &[(usize, f64)] {
        self.kernel.row(state, action)
    }

    /// `sum_{s'} p(s'|s,a) v(s')`.
    pub fn expect(&self, state: usize, action: Action, values: &[f64]) -> f64 {
        self.row(state, action).iter().map(|&(t, p)| p * values[t]).sum()
    }
}

/// Column-stochastic action probabilities, one column per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyMatrix {
    pub probs: Vec<[f64; ACTIONS]>,
}

impl StrategyMatrix {
    pub fn deterministic(actions: &[Action]) -> Self {
        let probs = actions
            .iter()
            .map(|a| {
                let mut col = [0.0; ACTIONS];
                col[a.index()] = 1.0;
                col
            })
            .collect();
        StrategyMatrix { probs }
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    /// The action of a unit column, `None` if the column is mixed.
    pub fn action(&self, state: usize) -> Option<Action> {
        let col = &self.probs[state];
        let hit = col.iter().position(|&p| p == 1.0)?;
        if col.iter().enumerate().all(|(i, &p)| i == hit || p == 0.0) {
            Action::from_index(hit)
        } else {
            None
        }
    }

    pub fn is_deterministic(&self) -> bool {
        (0..self.n_states()).all(|s| self.action(s).is_some())
    }

    pub fn is_column_stochastic(&self, tol: f64) -> bool {
        self.probs.iter().all(|col| {
            col.iter().all(|&p| p >= 0.0) && (col.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }

    pub fn sample<R: Rng>(&self, state: usize, rng: &mut R) -> Action {
        if let Some(a) = self.action(state) {
            return a;
        }
        let col = &self.probs[state];
        let idx = sample_index(col.iter().copied().enumerate(), rng);
        Action::from_index(idx).unwrap_or(Action::Stay)
    }
}

/// Inverse-CDF draw over `(outcome, probability)` pairs. Falls back to the
/// last outcome when rounding leaves the cumulative sum short of `u`.
pub fn sample_index<R: Rng>(pairs: impl IntoIterator<Item = (usize, f64)>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (idx, p) in pairs {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = idx;
        if u < acc {
            return idx;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hose_model::{build_state_space, build_transition_model, HoseSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn segment_mdp() -> Mdp {
        let hose = HoseSpec::full_mesh(vec![6.0, 6.0, 6.0]).unwrap();
        let space = build_state_space(&hose, 2.0).unwrap();
        let model = build_transition_model(&space, 1.0, 1.0, 11).unwrap();
        Mdp::from_segment(
            &space.segments[0],
            model.kernels()[0].clone(),
            1.0,
            2.0,
            PhiForm::Standard,
            0.9,
        )
        .unwrap()
    }

    #[test]
    fn stay_cost_is_pure_delay() {
        let m = segment_mdp();
        for s in 0..m.n_states() {
            let direct: f64 = m.coords[s]
                .iter()
                .zip(&m.prices)
                .map(|(&x, &p)| flow_cost(x, x, p, PhiForm::Standard).unwrap())
                .sum();
            assert_eq!(m.cost(s, Action::Stay), direct);
        }
    }

    #[test]
    fn stage_cost_is_kernel_expectation() {
        let m = segment_mdp();
        for s in 0..m.n_states() {
            for a in Action::ALL {
                let e: f64 = m
                    .row(s, a)
                    .iter()
                    .map(|&(t, p)| p * m.transition_cost[s][t])
                    .sum();
                assert!((m.cost(s, a) - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn strategy_helpers() {
        let f = StrategyMatrix::deterministic(&[Action::Stay, Action::JumpDown]);
        assert!(f.is_deterministic());
        assert!(f.is_column_stochastic(0.0));
        assert_eq!(f.action(1), Some(Action::JumpDown));
        let mixed = StrategyMatrix {
            probs: vec![[0.5, 0.5, 0.0]],
        };
        assert_eq!(mixed.action(0), None);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws: Vec<Action> = (0..200).map(|_| mixed.sample(0, &mut rng)).collect();
        assert!(draws.contains(&Action::Stay) && draws.contains(&Action::JumpUp));
        assert!(!draws.contains(&Action::JumpDown));
    }

    #[test]
    fn dimension_errors() {
        let m = segment_mdp();
        assert!(matches!(
            Mdp::new(m.kernel.clone(), vec![vec![1.0, 1.0]], vec![1.0, 1.0], PhiForm::Standard, 0.5),
            Err(MdpError::Dimension { .. })
        ));
        assert!(matches!(
            Mdp::new(m.kernel.clone(), m.coords.clone(), m.prices.clone(), PhiForm::Standard, 1.0),
            Err(MdpError::InvalidDiscount(_))
        ));
    }
}
