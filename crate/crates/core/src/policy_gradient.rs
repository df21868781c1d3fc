//! Average-reward optimization of parametrized logistic strategies by
//! simulation, with a likelihood-ratio eligibility vector that resets at a
//! recurrent state.
//!
//! On a chain state `s` with reservation sum `u(s)` (the sum of `phi` over
//! its coordinates), action `a` gets the raw score
//! `sigma(theta_a - u(s)) = 1 / (1 + exp(u(s) - theta_a))`. The raw scores
//! are normalized to a distribution, and every gradient is taken through
//! the normalization.
//!
//! One step at epoch `t` (counted from 1, `gamma_t = scale / t`):
//! 1. `x_{t+1}` is drawn from `p_theta_t(x_t, .)`;
//! 2. `theta += gamma_t (grad C(x_t) + (C(x_t) - lambda) z)` and
//!    `lambda += min(eta gamma_t, 1) (C(x_t) - lambda)`;
//! 3. `z` becomes 0 if `x_{t+1}` is the recurrent state, otherwise
//!    `z + grad p / p` evaluated at `theta_t`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ce_decomposer::CeConfig;
use crate::hose_model::{Action, ACTIONS};
use crate::mdp::{sample_index, Mdp};
use crate::mpls_hierarchy::{aggregate_links, decompose_links, satisfaction_check, HierarchyError, NetworkModel, Regime};

pub type Theta = [f64; ACTIONS];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PgError {
    #[error("theta must be finite, got {0:?}")]
    NonFiniteTheta(Theta),
    #[error("state {state} is outside a chain of {len} states")]
    State { state: usize, len: usize },
    #[error("transition {from} -> {to} has zero probability under the current policy")]
    ZeroProbability { from: usize, to: usize },
    #[error("theta {theta:?} exceeded {limit} at step {step}")]
    Diverged { step: usize, theta: Theta, limit: f64 },
    #[error("expected {expected} entries, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Raw logistic scores `sigma(theta_a - u)`.
pub fn raw_scores(u: f64, theta: &Theta) -> Theta {
    theta.map(|t| sigmoid(t - u))
}

/// Normalized action probabilities.
pub fn policy_probabilities(u: f64, theta: &Theta) -> Theta {
    let raw = raw_scores(u, theta);
    let total: f64 = raw.iter().sum();
    raw.map(|r| r / total)
}

/// `J[a][b] = d f_a / d theta_b`.
pub fn policy_jacobian(u: f64, theta: &Theta) -> [Theta; ACTIONS] {
    let raw = raw_scores(u, theta);
    let total: f64 = raw.iter().sum();
    let slope = raw.map(|r| r * (1.0 - r));
    let f = raw.map(|r| r / total);
    let mut j = [[0.0; ACTIONS]; ACTIONS];
    for a in 0..ACTIONS {
        for b in 0..ACTIONS {
            let own = if a == b { slope[a] } else { 0.0 };
            j[a][b] = (own - f[a] * slope[b]) / total;
        }
    }
    j
}

/// A chain together with the reservation sum of each of its states.
#[derive(Debug, Clone, Copy)]
pub struct ParamChain<'a> {
    pub mdp: &'a Mdp,
    sums: &'a [f64],
}

/// Reservation sum `u(s)` of every state.
pub fn phi_sums(mdp: &Mdp) -> Vec<f64> {
    mdp.reservations.iter().map(|r| r.iter().sum()).collect()
}

impl<'a> ParamChain<'a> {
    pub fn new(mdp: &'a Mdp, sums: &'a [f64]) -> Result<Self, PgError> {
        if sums.len() != mdp.n_states() {
            return Err(PgError::Dimension {
                what: "reservation sums",
                expected: mdp.n_states(),
                got: sums.len(),
            });
        }
        Ok(ParamChain { mdp, sums })
    }

    pub fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    fn check(&self, s: usize) -> Result<(), PgError> {
        if s >= self.n_states() {
            return Err(PgError::State {
                state: s,
                len: self.n_states(),
            });
        }
        Ok(())
    }

    pub fn probabilities(&self, s: usize, theta: &Theta) -> Theta {
        policy_probabilities(self.sums[s], theta)
    }

    fn kernel_prob(&self, s: usize, a: Action, t: usize) -> f64 {
        self.mdp.row(s, a).iter().filter(|&&(j, _)| j == t).map(|&(_, p)| p).sum()
    }

    /// `p_theta(s, .)` as a sparse row sorted by target.
    pub fn row(&self, s: usize, theta: &Theta) -> Result<Vec<(usize, f64)>, PgError> {
        self.check(s)?;
        let f = self.probabilities(s, theta);
        let mut acc = std::collections::BTreeMap::new();
        for a in Action::ALL {
            for &(t, p) in self.mdp.row(s, a) {
                *acc.entry(t).or_insert(0.0) += f[a.index()] * p;
            }
        }
        Ok(acc.into_iter().collect())
    }

    pub fn transition(&self, s: usize, t: usize, theta: &Theta) -> Result<f64, PgError> {
        self.check(s)?;
        self.check(t)?;
        let f = self.probabilities(s, theta);
        Ok(Action::ALL.iter().map(|&a| f[a.index()] * self.kernel_prob(s, a, t)).sum())
    }

    pub fn transition_gradient(&self, s: usize, t: usize, theta: &Theta) -> Result<Theta, PgError> {
        self.check(s)?;
        self.check(t)?;
        let j = policy_jacobian(self.sums[s], theta);
        let mut g = [0.0; ACTIONS];
        for a in Action::ALL {
            let p = self.kernel_prob(s, a, t);
            for (b, gb) in g.iter_mut().enumerate() {
                *gb += j[a.index()][b] * p;
            }
        }
        Ok(g)
    }

    /// `C(s, theta) = sum_a f_a C(s, a)`.
    pub fn cost(&self, s: usize, theta: &Theta) -> Result<f64, PgError> {
        self.check(s)?;
        let f = self.probabilities(s, theta);
        Ok(Action::ALL.iter().map(|&a| f[a.index()] * self.mdp.cost(s, a)).sum())
    }

    pub fn cost_gradient(&self, s: usize, theta: &Theta) -> Result<Theta, PgError> {
        self.check(s)?;
        let j = policy_jacobian(self.sums[s], theta);
        let mut g = [0.0; ACTIONS];
        for a in Action::ALL {
            let c = self.mdp.cost(s, a);
            for (b, gb) in g.iter_mut().enumerate() {
                *gb += j[a.index()][b] * c;
            }
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgState {
    pub theta: Theta,
    /// Running average-reward estimate.
    pub lambda: f64,
    /// Eligibility vector.
    pub z: Theta,
    /// Next step index, starting at 1.
    pub t: usize,
    pub state: usize,
    pub recurrent: usize,
}

impl PgState {
    /// Starts at `state` with `lambda` set to its current expected cost.
    pub fn new(chain: &ParamChain, theta: Theta, state: usize, recurrent: usize) -> Result<Self, PgError> {
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(PgError::NonFiniteTheta(theta));
        }
        chain.check(recurrent)?;
        let lambda = chain.cost(state, &theta)?;
        Ok(PgState {
            theta,
            lambda,
            z: [0.0; ACTIONS],
            t: 1,
            state,
            recurrent,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    /// Scale of the `lambda` step relative to `gamma_t`.
    pub eta: f64,
    /// `gamma_t = step_scale / t`; zero freezes the parameters.
    pub step_scale: f64,
    /// Largest admissible `|theta_i|`.
    pub theta_limit: f64,
}

/// Applies one update given the sampled successor `next`.
pub fn gradient_step(pg: &PgState, chain: &ParamChain, next: usize, params: &StepParams) -> Result<PgState, PgError> {
    let s = pg.state;
    let cost = chain.cost(s, &pg.theta)?;
    let grad = chain.cost_gradient(s, &pg.theta)?;
    let gamma = params.step_scale / pg.t as f64;
    let mut theta = pg.theta;
    for i in 0..ACTIONS {
        theta[i] += gamma * (grad[i] + (cost - pg.lambda) * pg.z[i]);
    }
    if theta.iter().any(|t| !(t.abs() <= params.theta_limit)) {
        return Err(PgError::Diverged {
            step: pg.t,
            theta,
            limit: params.theta_limit,
        });
    }
    let lambda = pg.lambda + (params.eta * gamma).min(1.0) * (cost - pg.lambda);
    let z = if next == pg.recurrent {
        [0.0; ACTIONS]
    } else {
        let p = chain.transition(s, next, &pg.theta)?;
        if !(p > 0.0) {
            return Err(PgError::ZeroProbability { from: s, to: next });
        }
        let dp = chain.transition_gradient(s, next, &pg.theta)?;
        let mut z = pg.z;
        for i in 0..ACTIONS {
            z[i] += dp[i] / p;
        }
        z
    };
    Ok(PgState {
        theta,
        lambda,
        z,
        t: pg.t + 1,
        state: next,
        recurrent: pg.recurrent,
    })
}

/// Draws `x_{t+1}` and applies [`gradient_step`].
pub fn simulate_step(
    pg: &PgState,
    chain: &ParamChain,
    params: &StepParams,
    rng: &mut ChaCha8Rng,
) -> Result<PgState, PgError> {
    let row = chain.row(pg.state, &pg.theta)?;
    let next = sample_index(row.into_iter(), rng);
    gradient_step(pg, chain, next, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgConfig {
    pub eta: f64,
    pub step_scale: f64,
    pub iterations: usize,
    /// The divergence guard fires at `divergence_factor * max(1, max |theta_0|)`.
    pub divergence_factor: f64,
}

impl Default for PgConfig {
    fn default() -> Self {
        PgConfig {
            eta: 0.1,
            step_scale: 1.0,
            iterations: 500,
            divergence_factor: 1e3,
        }
    }
}

impl PgConfig {
    pub fn validate(&self) -> Result<(), PgError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(PgError::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.step_scale >= 0.0 && self.step_scale.is_finite()) {
            return Err(PgError::Config(format!(
                "step scale must be non-negative, got {}",
                self.step_scale
            )));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(PgError::Config("divergence factor must exceed 1".into()));
        }
        Ok(())
    }

    fn step_params(&self, theta0: &[Theta]) -> StepParams {
        let scale = theta0.iter().flatten().fold(1.0_f64, |m, t| m.max(t.abs()));
        StepParams {
            eta: self.eta,
            step_scale: self.step_scale,
            theta_limit: self.divergence_factor * scale,
        }
    }
}

/// Per-chain history: entry `k` is the state after `k` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub theta: Vec<Theta>,
    pub lambda: Vec<f64>,
    pub states: Vec<usize>,
}

impl ChainTrace {
    fn start(pg: &PgState) -> Self {
        ChainTrace {
            theta: vec![pg.theta],
            lambda: vec![pg.lambda],
            states: vec![pg.state],
        }
    }

    fn push(&mut self, pg: &PgState) {
        self.theta.push(pg.theta);
        self.lambda.push(pg.lambda);
        self.states.push(pg.state);
    }

    /// `(max - min) / |mean|` of `lambda` over its last `window` entries.
    pub fn lambda_variation(&self, window: usize) -> f64 {
        let tail = &self.lambda[self.lambda.len().saturating_sub(window)..];
        let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = tail.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        (max - min) / mean.abs()
    }
}

/// One independent chain to optimize.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec<'a> {
    pub mdp: &'a Mdp,
    pub theta0: Theta,
    pub initial: usize,
    pub recurrent: usize,
}

/// Runs every chain for `config.iterations` steps from one seeded stream,
/// stepping the chains in order within each epoch.
pub fn run_policy_gradient(chains: &[ChainSpec], config: &PgConfig, seed: u64) -> Result<Vec<ChainTrace>, PgError> {
    config.validate()?;
    let theta0: Vec<Theta> = chains.iter().map(|c| c.theta0).collect();
    let params = config.step_params(&theta0);
    let sums: Vec<Vec<f64>> = chains.iter().map(|c| phi_sums(c.mdp)).collect();
    let pcs = chains
        .iter()
        .zip(&sums)
        .map(|(c, s)| ParamChain::new(c.mdp, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut states = chains
        .iter()
        .zip(&pcs)
        .map(|(c, pc)| PgState::new(pc, c.theta0, c.initial, c.recurrent))
        .collect::<Result<Vec<_>, _>>()?;
    let mut traces: Vec<ChainTrace> = states.iter().map(ChainTrace::start).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..config.iterations {
        for ((pg, pc), trace) in states.iter_mut().zip(&pcs).zip(&mut traces) {
            *pg = simulate_step(pg, pc, &params, &mut rng)?;
            trace.push(pg);
        }
    }
    Ok(traces)
}

/// Default starting thresholds: twice `phi` of half the segment's
/// egress, so all three actions start equally likely at the midpoint.
pub fn default_theta(mdp: &Mdp, t_out: f64) -> Result<Theta, PgError> {
    let mut u = 0.0;
    for &p in &mdp.prices {
        u += mdp
            .phi_form
            .phi(t_out / 2.0, p)
            .map_err(|e| PgError::Config(e.to_string()))?;
    }
    Ok([u; ACTIONS])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MplsPgRun {
    /// Per VPN, per segment.
    pub sites: Vec<Vec<ChainTrace>>,
    pub links: Vec<ChainTrace>,
    /// Regime of each step, in order.
    pub regimes: Vec<Regime>,
}

impl MplsPgRun {
    pub fn parameter_count(&self) -> usize {
        ACTIONS * (self.sites.iter().map(Vec::len).sum::<usize>() + self.links.len())
    }
}

/// Initial parameters for the MPLS variant.
#[derive(Debug, Clone, PartialEq)]
pub struct MplsStart {
    pub site_theta: Vec<Vec<Theta>>,
    pub site_recurrent: Vec<Vec<usize>>,
    pub link_theta: Vec<Theta>,
    pub link_recurrent: Vec<usize>,
}

/// Site chains update while every satisfaction bound holds. At epochs
/// where one is violated, the link chains take a step from the snapped
/// current loads and the sampled link levels are decomposed back into VPN
/// states; site parameters are then left unchanged.
pub fn run_mpls_policy_gradient(
    network: &NetworkModel,
    start: &MplsStart,
    config: &PgConfig,
    ce: &CeConfig,
    seed: u64,
) -> Result<MplsPgRun, PgError> {
    config.validate()?;
    let dim = |what, expected, got| {
        if expected == got {
            Ok(())
        } else {
            Err(PgError::Dimension { what, expected, got })
        }
    };
    dim("VPN parameter blocks", network.vpns.len(), start.site_theta.len())?;
    dim("VPN recurrent blocks", network.vpns.len(), start.site_recurrent.len())?;
    dim("link parameters", network.links.len(), start.link_theta.len())?;
    dim("link recurrent states", network.links.len(), start.link_recurrent.len())?;
    for (v, vpn) in network.vpns.iter().enumerate() {
        dim("site parameters", vpn.segments.len(), start.site_theta[v].len())?;
        dim("site recurrent states", vpn.segments.len(), start.site_recurrent[v].len())?;
    }
    let all_theta: Vec<Theta> = start
        .site_theta
        .iter()
        .flatten()
        .chain(&start.link_theta)
        .copied()
        .collect();
    let params = config.step_params(&all_theta);

    let site_sums: Vec<Vec<Vec<f64>>> = network
        .vpns
        .iter()
        .map(|v| v.segments.iter().map(phi_sums).collect())
        .collect();
    let link_sums: Vec<Vec<f64>> = network.links.iter().map(|l| phi_sums(&l.mdp)).collect();
    let site_chains = network
        .vpns
        .iter()
        .zip(&site_sums)
        .map(|(v, sums)| {
            v.segments
                .iter()
                .zip(sums)
                .map(|(m, s)| ParamChain::new(m, s))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let link_chains = network
        .links
        .iter()
        .zip(&link_sums)
        .map(|(l, s)| ParamChain::new(&l.mdp, s))
        .collect::<Result<Vec<_>, _>>()?;

    let mut sites: Vec<Vec<PgState>> = Vec::with_capacity(network.vpns.len());
    for (v, vpn) in network.vpns.iter().enumerate() {
        let mut row = Vec::with_capacity(vpn.segments.len());
        for (k, pc) in site_chains[v].iter().enumerate() {
            row.push(PgState::new(
                pc,
                start.site_theta[v][k],
                vpn.initial[k],
                start.site_recurrent[v][k],
            )?);
        }
        sites.push(row);
    }
    let initial_states = network.initial_states();
    let loads = aggregate_links(&network.routing, &network.vpn_flows(&initial_states))?;
    let mut links = link_chains
        .iter()
        .zip(&network.links)
        .zip(start.link_theta.iter().zip(&start.link_recurrent))
        .zip(&loads)
        .map(|(((pc, link), (&theta, &rec)), &load)| PgState::new(pc, theta, link.snap(load), rec))
        .collect::<Result<Vec<_>, _>>()?;

    let mut site_traces: Vec<Vec<ChainTrace>> = sites
        .iter()
        .map(|row| row.iter().map(ChainTrace::start).collect())
        .collect();
    let mut link_traces: Vec<ChainTrace> = links.iter().map(ChainTrace::start).collect();
    let mut regimes = Vec::with_capacity(config.iterations);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = initial_states.clone();
    let mut current = initial_states;
    for epoch in 0..config.iterations {
        let costs = network.vpn_costs(&current, &prev).map_err(HierarchyError::from)?;
        let report = satisfaction_check(&costs, &network.bounds)?;
        prev = current.clone();
        if !report.violated {
            regimes.push(Regime::Local);
            for (v, row) in sites.iter_mut().enumerate() {
                for (k, pg) in row.iter_mut().enumerate() {
                    *pg = simulate_step(pg, &site_chains[v][k], &params, &mut rng)?;
                    current[v][k] = pg.state;
                }
            }
        } else {
            regimes.push(Regime::Global);
            let loads = aggregate_links(&network.routing, &network.vpn_flows(&current))?;
            let mut levels = Vec::with_capacity(links.len());
            for ((pg, pc), (link, &load)) in links.iter_mut().zip(&link_chains).zip(network.links.iter().zip(&loads)) {
                pg.state = link.snap(load);
                *pg = simulate_step(pg, pc, &params, &mut rng)?;
                levels.push(link.grid[pg.state]);
            }
            let (next, _) = decompose_links(network, &levels, ce, seed, epoch)?;
            current = next;
            for (row, states) in sites.iter_mut().zip(&current) {
                for (pg, &s) in row.iter_mut().zip(states) {
                    pg.state = s;
                }
            }
        }
        for (row, traces) in sites.iter().zip(&mut site_traces) {
            for (pg, trace) in row.iter().zip(traces.iter_mut()) {
                trace.push(pg);
            }
        }
        for (pg, trace) in links.iter().zip(&mut link_traces) {
            trace.push(pg);
        }
    }
    Ok(MplsPgRun {
        sites: site_traces,
        links: link_traces,
        regimes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::PhiForm;
    use crate::hose_model::{build_state_space, build_transition_model, HoseSpec};

    fn segment_mdp() -> Mdp {
        let hose = HoseSpec::full_mesh(vec![9.0, 6.0, 8.0]).unwrap();
        let space = build_state_space(&hose, 1.0).unwrap();
        let model = build_transition_model(&space, 1.0, 1.0, 4).unwrap();
        Mdp::from_segment(
            &space.segments[0],
            model.kernels()[0].clone(),
            1.0,
            1.5,
            PhiForm::Standard,
            0.9,
        )
        .unwrap()
    }

    #[test]
    fn midpoint_is_uniform() {
        let p = policy_probabilities(5.0, &[5.0; 3]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(raw_scores(5.0, &[5.0, 4.0, 6.0])[0] == 0.5);
        assert!(raw_scores(5.0, &[5.0, 4.0, 6.0])[1] < 0.5);
        assert!(raw_scores(5.0, &[5.0, 4.0, 6.0])[2] > 0.5);
        let p = policy_probabilities(5.0, &[1e6, 5.0, 5.0]);
        assert!(p[0] > p[1] && p[0] > p[2]);
    }

    #[test]
    fn frozen_schedule_keeps_parameters() {
        let mdp = segment_mdp();
        let theta = default_theta(&mdp, 9.0).unwrap();
        let last = mdp.n_states() - 1;
        let spec = ChainSpec {
            mdp: &mdp,
            theta0: theta,
            initial: 0,
            recurrent: last,
        };
        let config = PgConfig {
            step_scale: 0.0,
            iterations: 50,
            ..PgConfig::default()
        };
        let traces = run_policy_gradient(&[spec], &config, 1).unwrap();
        assert!(traces[0].theta.iter().all(|t| *t == theta));
        assert!(traces[0].lambda.iter().all(|&l| l == traces[0].lambda[0]));
    }

    #[test]
    fn null_update_and_reset() {
        let mdp = segment_mdp();
        let sums = phi_sums(&mdp);
        let chain = ParamChain::new(&mdp, &sums).unwrap();
        let params = StepParams {
            eta: 0.1,
            step_scale: 1.0,
            theta_limit: 1e9,
        };
        let last = mdp.n_states() - 1;
        let mut pg = PgState::new(&chain, [4.0, 5.0, 6.0], 3, last).unwrap();
        pg.z = [0.3, -0.2, 0.1];
        let stepped = gradient_step(&pg, &chain, last, &params).unwrap();
        assert_eq!(stepped.z, [0.0; 3]);
        // with the cost equal to lambda and no cost gradient, theta is fixed
        let flat = [40.0; 3];
        let mut pg = PgState::new(&chain, flat, 3, last).unwrap();
        pg.z = [1.0, 2.0, 3.0];
        let g = chain.cost_gradient(3, &flat).unwrap();
        let next = chain.row(3, &flat).unwrap()[0].0;
        assert_ne!(next, last);
        let stepped = gradient_step(&pg, &chain, next, &params).unwrap();
        for i in 0..3 {
            assert!((stepped.theta[i] - flat[i] - g[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_are_distributions() {
        let mdp = segment_mdp();
        let sums = phi_sums(&mdp);
        let chain = ParamChain::new(&mdp, &sums).unwrap();
        for s in 0..mdp.n_states() {
            let row = chain.row(s, &[3.0, 20.0, -4.0]).unwrap();
            let total: f64 = row.iter().map(|&(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!(matches!(chain.cost(99, &[0.0; 3]), Err(PgError::State { .. })));
    }

    #[test]
    fn divergence_guard_fires() {
        let mdp = segment_mdp();
        let last = mdp.n_states() - 1;
        let spec = ChainSpec {
            mdp: &mdp,
            theta0: [1.0; 3],
            initial: 0,
            recurrent: last,
        };
        let config = PgConfig {
            step_scale: 1e6,
            divergence_factor: 2.0,
            iterations: 50,
            ..PgConfig::default()
        };
        assert!(matches!(
            run_policy_gradient(&[spec], &config, 1),
            Err(PgError::Diverged { .. })
        ));
    }
}
