//! Finite-horizon backward induction over one chain, an exhaustive
//! expectimax reference, and seeded rollouts.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::{flow_cost, CostError};
use crate::hose_model::{Action, ACTIONS};
use crate::mdp::{sample_index, Mdp, StrategyMatrix};

/// Largest tree the exhaustive reference agrees to expand.
pub const ENUMERATION_LIMIT: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BellmanError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("state {state} is out of range for {len} states")]
    StateOutOfRange { state: usize, len: usize },
    #[error("enumeration would expand about {leaves:.0} leaves (limit {limit:.0})")]
    TooLarge { leaves: f64, limit: f64 },
    #[error("policy covers {policy} states, chain has {chain}")]
    PolicyShape { policy: usize, chain: usize },
    #[error("initial distribution must be non-negative with unit mass")]
    InvalidRestart,
    #[error("no trajectories given")]
    NoTrajectories,
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// `values[k][s]`: optimal value with `k` stages to go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub values: Vec<Vec<f64>>,
}

impl ValueTable {
    /// Value at epoch `t` of a horizon-`horizon` problem.
    pub fn at_epoch(&self, horizon: usize, t: usize) -> &[f64] {
        &self.values[horizon - t]
    }
}

/// One strategy per decision epoch `0..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySequence {
    pub horizon: usize,
    pub epochs: Vec<StrategyMatrix>,
}

impl PolicySequence {
    pub fn at(&self, epoch: usize) -> &StrategyMatrix {
        &self.epochs[epoch.min(self.horizon)]
    }
}

/// Maximizing action of `C(s,a) + beta * E[next]`; the lowest index wins ties.
fn best_action(mdp: &Mdp, state: usize, next: Option<&[f64]>) -> (Action, f64) {
    let mut best = (Action::Stay, f64::NEG_INFINITY);
    for a in Action::ALL {
        let mut q = mdp.cost(state, a);
        if let Some(v) = next {
            q += mdp.beta * mdp.expect(state, a, v);
        }
        if q > best.1 {
            best = (a, q);
        }
    }
    best
}

pub fn solve_finite_horizon(
    mdp: &Mdp,
    horizon: usize,
) -> Result<(PolicySequence, ValueTable), BellmanError> {
    if horizon == 0 {
        return Err(BellmanError::ZeroHorizon);
    }
    let n = mdp.n_states();
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(horizon + 1);
    let mut actions: Vec<Vec<Action>> = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        let next = if k == 0 { None } else { Some(values[k - 1].as_slice()) };
        let (acts, vals): (Vec<Action>, Vec<f64>) =
            (0..n).map(|s| best_action(mdp, s, next)).unzip();
        values.push(vals);
        actions.push(acts);
    }
    // epoch t has horizon - t stages to go
    let epochs = (0..=horizon)
        .map(|t| StrategyMatrix::deterministic(&actions[horizon - t]))
        .collect();
    Ok((PolicySequence { horizon, epochs }, ValueTable { values }))
}

/// Largest residual of `V_k(s) = C(s,F(s)) + beta E[V_{k-1}]` over the table.
pub fn bellman_residual(mdp: &Mdp, policy: &PolicySequence, table: &ValueTable) -> f64 {
    let h = policy.horizon;
    let mut worst: f64 = 0.0;
    for k in 0..=h {
        let f = &policy.epochs[h - k];
        for s in 0..mdp.n_states() {
            let a = f.action(s).unwrap_or(Action::Stay);
            let mut q = mdp.cost(s, a);
            if k > 0 {
                q += mdp.beta * mdp.expect(s, a, &table.values[k - 1]);
            }
            worst = worst.max((q - table.values[k][s]).abs());
        }
    }
    worst
}

/// Exact optimum over all history-dependent action choices with `horizon`
/// stages to go, by full tree expansion. Transition costs are evaluated
/// from the chain's coordinates on every edge, independently of the
/// precomputed tables.
pub fn enumerate_optimal(mdp: &Mdp, horizon: usize, initial: usize) -> Result<f64, BellmanError> {
    let n = mdp.n_states();
    if initial >= n {
        return Err(BellmanError::StateOutOfRange {
            state: initial,
            len: n,
        });
    }
    let leaves = (n as f64).powi(horizon as i32) * (ACTIONS as f64).powi(horizon as i32 + 1);
    if leaves > ENUMERATION_LIMIT {
        return Err(BellmanError::TooLarge {
            leaves,
            limit: ENUMERATION_LIMIT,
        });
    }
    expand(mdp, horizon, initial)
}

fn edge_cost(mdp: &Mdp, from: usize, to: usize) -> Result<f64, BellmanError> {
    let mut total = 0.0;
    for ((&now, &prev), &p) in mdp.coords[to].iter().zip(&mdp.coords[from]).zip(&mdp.prices) {
        total += flow_cost(now, prev, p, mdp.phi_form)?;
    }
    Ok(total)
}

fn expand(mdp: &Mdp, to_go: usize, state: usize) -> Result<f64, BellmanError> {
    let mut best = f64::NEG_INFINITY;
    for a in Action::ALL {
        let mut q = 0.0;
        for &(t, p) in mdp.row(state, a) {
            let mut branch = edge_cost(mdp, state, t)?;
            if to_go > 0 {
                branch += mdp.beta * expand(mdp, to_go - 1, t)?;
            }
            q += p * branch;
        }
        best = best.max(q);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub epoch: usize,
    pub state: usize,
    pub action: Action,
    /// `phi` of every coordinate of `state`.
    pub reservation: Vec<f64>,
    /// Transition cost from the previous state into `state` (zero
    /// penalty at epoch 0).
    pub cost: f64,
    /// Whether `state` was drawn from the restart law instead of the kernel.
    pub regenerated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Optional restart: before each transition, with probability `1 - beta`
/// the next state is drawn from `law` instead of the kernel.
#[derive(Debug, Clone, Copy)]
pub struct Restart<'a> {
    pub beta: f64,
    pub law: &'a [f64],
}

/// Follows `strategy_at(epoch)` for `epochs` decision epochs.
pub fn simulate<'p>(
    mdp: &Mdp,
    strategy_at: impl Fn(usize) -> &'p StrategyMatrix,
    initial: usize,
    epochs: usize,
    seed: u64,
    restart: Option<Restart<'_>>,
) -> Result<Trajectory, BellmanError> {
    let n = mdp.n_states();
    if initial >= n {
        return Err(BellmanError::StateOutOfRange {
            state: initial,
            len: n,
        });
    }
    if let Some(r) = restart {
        let mass: f64 = r.law.iter().sum();
        if r.law.len() != n || r.law.iter().any(|&p| p < 0.0) || (mass - 1.0).abs() > 1e-9 {
            return Err(BellmanError::InvalidRestart);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(epochs);
    let mut prev = initial;
    let mut state = initial;
    let mut regenerated = false;
    for epoch in 0..epochs {
        let strategy = strategy_at(epoch);
        if strategy.n_states() != n {
            return Err(BellmanError::PolicyShape {
                policy: strategy.n_states(),
                chain: n,
            });
        }
        let action = strategy.sample(state, &mut rng);
        steps.push(TrajectoryStep {
            epoch,
            state,
            action,
            reservation: mdp.reservations[state].clone(),
            cost: mdp.transition_cost[prev][state],
            regenerated,
        });
        prev = state;
        regenerated = false;
        if let Some(r) = restart {
            if rng.random::<f64>() >= r.beta {
                state = sample_index(r.law.iter().copied().enumerate(), &mut rng);
                regenerated = true;
                continue;
            }
        }
        state = sample_index(mdp.row(state, action).iter().copied(), &mut rng);
    }
    Ok(Trajectory { seed, steps })
}

/// Epochs `0..=T` under the finite-horizon policy.
pub fn rollout(
    policy: &PolicySequence,
    mdp: &Mdp,
    initial: usize,
    seed: u64,
) -> Result<Trajectory, BellmanError> {
    simulate(mdp, |t| policy.at(t), initial, policy.horizon + 1, seed, None)
}

/// Applies the first-epoch strategy at every epoch, for runs longer than
/// the solved horizon.
pub fn rollout_receding(
    policy: &PolicySequence,
    mdp: &Mdp,
    initial: usize,
    epochs: usize,
    seed: u64,
) -> Result<Trajectory, BellmanError> {
    let first = policy.at(0);
    simulate(mdp, |_| first, initial, epochs, seed, None)
}

/// Stationary strategy with restarts from `law` at rate `1 - beta`. The
/// visit frequencies of such a run converge to the normalized discounted
/// occupation measure started from `law`.
pub fn rollout_regenerative(
    strategy: &StrategyMatrix,
    mdp: &Mdp,
    law: &[f64],
    epochs: usize,
    seed: u64,
) -> Result<Trajectory, BellmanError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_1a57);
    let initial = sample_index(law.iter().copied().enumerate(), &mut rng);
    simulate(
        mdp,
        |_| strategy,
        initial,
        epochs,
        seed,
        Some(Restart {
            beta: mdp.beta,
            law,
        }),
    )
}

/// Visit counts of every `(state, action)` pair.
pub fn sojourn_statistics(
    trajectories: &[Trajectory],
) -> Result<BTreeMap<(usize, Action), usize>, BellmanError> {
    if trajectories.is_empty() {
        return Err(BellmanError::NoTrajectories);
    }
    let mut counts = BTreeMap::new();
    for step in trajectories.iter().flat_map(|t| &t.steps) {
        *counts.entry((step.state, step.action)).or_insert(0) += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::PhiForm;
    use crate::hose_model::{build_state_space, build_transition_model, ChainKernel, HoseSpec};

    fn chain(t_out: f64, alpha: f64, seed: u64, beta: f64) -> Mdp {
        let hose = HoseSpec::full_mesh(vec![t_out; 3]).unwrap();
        let space = build_state_space(&hose, alpha).unwrap();
        let model = build_transition_model(&space, 1.3, 0.7, seed).unwrap();
        Mdp::from_segment(
            &space.segments[0],
            model.kernels()[0].clone(),
            1.0,
            1.5,
            PhiForm::Standard,
            beta,
        )
        .unwrap()
    }

    #[test]
    fn zero_horizon_rejected() {
        assert_eq!(
            solve_finite_horizon(&chain(6.0, 2.0, 1, 0.9), 0),
            Err(BellmanError::ZeroHorizon)
        );
    }

    #[test]
    fn myopic_when_undiscounted() {
        let m = chain(6.0, 2.0, 2, 0.0);
        let (policy, values) = solve_finite_horizon(&m, 1).unwrap();
        for s in 0..m.n_states() {
            let (a, v) = best_action(&m, s, None);
            assert_eq!(policy.at(0).action(s), Some(a));
            assert_eq!(values.values[1][s], v);
        }
    }

    #[test]
    fn matches_enumeration_small() {
        let m = chain(6.0, 2.0, 3, 0.9);
        let (_, values) = solve_finite_horizon(&m, 3).unwrap();
        for s in 0..m.n_states() {
            let e = enumerate_optimal(&m, 3, s).unwrap();
            assert!((values.values[3][s] - e).abs() < 1e-9, "{} vs {}", values.values[3][s], e);
        }
    }

    #[test]
    fn enumeration_with_zero_horizon_is_best_single_action() {
        let m = chain(6.0, 2.0, 4, 0.5);
        for s in 0..m.n_states() {
            let best = Action::ALL.iter().map(|&a| m.cost(s, a)).fold(f64::MIN, f64::max);
            assert!((enumerate_optimal(&m, 0, s).unwrap() - best).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_guard() {
        let m = chain(20.0, 1.0, 5, 0.5);
        assert!(matches!(
            enumerate_optimal(&m, 6, 0),
            Err(BellmanError::TooLarge { .. })
        ));
    }

    #[test]
    fn identity_kernel_gives_geometric_sum() {
        let n = 3;
        let rows = (0..n).map(|i| [vec![(i, 1.0)], vec![(i, 1.0)], vec![(i, 1.0)]]).collect();
        let coords: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 * 2.0, 4.0 - i as f64 * 2.0]).collect();
        let m = Mdp::new(ChainKernel::from_rows(rows), coords, vec![1.0, 1.0], PhiForm::Standard, 0.8)
            .unwrap();
        for s in 0..n {
            let c = m.cost(s, Action::Stay);
            let closed: f64 = (0..=3).map(|t| 0.8f64.powi(t) * c).sum();
            assert!((enumerate_optimal(&m, 3, s).unwrap() - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn consistency_and_stochasticity() {
        let m = chain(9.0, 1.0, 6, 0.9);
        let (policy, values) = solve_finite_horizon(&m, 40).unwrap();
        assert!(bellman_residual(&m, &policy, &values) < 1e-12);
        assert!(policy.epochs.iter().all(|f| f.is_column_stochastic(0.0) && f.is_deterministic()));
    }

    #[test]
    fn rollouts_are_reproducible_and_connected() {
        let m = chain(9.0, 1.0, 7, 0.9);
        let (policy, _) = solve_finite_horizon(&m, 30).unwrap();
        let a = rollout(&policy, &m, 4, 77).unwrap();
        let b = rollout(&policy, &m, 4, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 31);
        for w in a.steps.windows(2) {
            let row = m.row(w[0].state, w[0].action);
            assert!(row.iter().any(|&(t, p)| t == w[1].state && p > 0.0));
        }
        assert_eq!(a.steps[0].cost, m.transition_cost[4][4]);
    }

    #[test]
    fn stay_policy_is_constant() {
        let m = chain(9.0, 1.0, 8, 0.9);
        let stay = StrategyMatrix::deterministic(&vec![Action::Stay; m.n_states()]);
        let t = simulate(&m, |_| &stay, 3, 50, 1, None).unwrap();
        assert!(t.steps.iter().all(|s| s.state == 3));
    }

    #[test]
    fn sojourn_counts_are_conserved() {
        let m = chain(9.0, 1.0, 9, 0.9);
        let (policy, _) = solve_finite_horizon(&m, 20).unwrap();
        let runs: Vec<Trajectory> = (0..3).map(|k| rollout(&policy, &m, k, k as u64).unwrap()).collect();
        let counts = sojourn_statistics(&runs).unwrap();
        assert_eq!(counts.values().sum::<usize>(), 63);
        let single = rollout(&policy, &m, 0, 0).unwrap();
        let one = Trajectory {
            seed: 0,
            steps: single.steps[..1].to_vec(),
        };
        assert_eq!(sojourn_statistics(&[one]).unwrap().len(), 1);
        assert_eq!(sojourn_statistics(&[]), Err(BellmanError::NoTrajectories));
    }

    #[test]
    fn regenerative_rollout_restarts() {
        let m = chain(9.0, 1.0, 10, 0.5);
        let (policy, _) = solve_finite_horizon(&m, 10).unwrap();
        let law = vec![1.0 / m.n_states() as f64; m.n_states()];
        let t = rollout_regenerative(policy.at(0), &m, &law, 1000, 3).unwrap();
        let restarts = t.steps.iter().filter(|s| s.regenerated).count();
        assert!((400..600).contains(&restarts), "{restarts}");
    }
}
