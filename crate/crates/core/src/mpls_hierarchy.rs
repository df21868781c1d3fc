//! Several VPNs sharing an MPLS core: local per-site control while every
//! VPN meets its satisfaction bound, centralized link-level control while
//! any bound is violated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ce_decomposer::{run_ce, CeConfig, CeError, CeOutcome};
use crate::cost_model::{link_delay, link_stage_cost, vpn_stage_cost, CostError, PhiForm, PriceTable};
use crate::hose_model::{
    build_state_space_with, build_transition_model, grid, nearest_index, Action, ChainKernel,
    DiscreteStateSpace, GridEndpoint, HoseError, HoseSpec, TransitionModel,
};
use crate::mdp::{sample_index, Mdp, MdpError, StrategyMatrix};
use crate::seeds;
use crate::stationary_lp::{solve_stationary, StationaryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("routing matrix is empty or ragged")]
    RoutingShape,
    #[error("routing entries must be finite and non-negative")]
    RoutingEntry,
    #[error("expected {expected} entries, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("satisfaction bound {0} must be non-negative")]
    InvalidBound(f64),
    #[error("initial state index {index} is outside segment {segment} of VPN {vpn}")]
    InitialState { vpn: usize, segment: usize, index: usize },
    #[error("epoch {epoch}: decomposition failed after retry: {source}")]
    Decomposition { epoch: usize, source: CeError },
    #[error(transparent)]
    Hose(#[from] HoseError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Stationary(#[from] StationaryError),
}

/// Rows are MPLS links, columns the concatenated flows of all VPNs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingMatrix {
    rows: Vec<Vec<f64>>,
}

impl RoutingMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, HierarchyError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(HierarchyError::RoutingShape);
        }
        if rows.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(HierarchyError::RoutingEntry);
        }
        Ok(RoutingMatrix { rows })
    }

    pub fn identity(n: usize) -> Self {
        RoutingMatrix {
            rows: (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_links(&self) -> usize {
        self.rows.len()
    }

    pub fn n_flows(&self) -> usize {
        self.rows[0].len()
    }

    pub fn apply(&self, flows: &[f64]) -> Result<Vec<f64>, HierarchyError> {
        if flows.len() != self.n_flows() {
            return Err(HierarchyError::Dimension {
                what: "flows",
                expected: self.n_flows(),
                got: flows.len(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|row| row.iter().zip(flows).map(|(r, x)| r * x).sum())
            .collect())
    }
}

/// Loads `R (x~ | y~ | ...)` from per-VPN expanded flow vectors.
pub fn aggregate_links(routing: &RoutingMatrix, vpn_flows: &[Vec<f64>]) -> Result<Vec<f64>, HierarchyError> {
    let flat: Vec<f64> = vpn_flows.iter().flatten().copied().collect();
    routing.apply(&flat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionBounds {
    bounds: Vec<f64>,
}

impl SatisfactionBounds {
    /// Zero bounds are accepted and mean "centralize whenever there is
    /// any cost"; infinite bounds never fire.
    pub fn new(bounds: Vec<f64>) -> Result<Self, HierarchyError> {
        if let Some(&b) = bounds.iter().find(|b| !(**b >= 0.0)) {
            return Err(HierarchyError::InvalidBound(b));
        }
        Ok(SatisfactionBounds { bounds })
    }

    pub fn values(&self) -> &[f64] {
        &self.bounds
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SatisfactionReport {
    pub violated: bool,
    pub per_vpn: Vec<bool>,
}

/// Violated iff some cost strictly exceeds its bound.
pub fn satisfaction_check(
    vpn_costs: &[f64],
    bounds: &SatisfactionBounds,
) -> Result<SatisfactionReport, HierarchyError> {
    if vpn_costs.len() != bounds.bounds.len() {
        return Err(HierarchyError::Dimension {
            what: "VPN costs",
            expected: bounds.bounds.len(),
            got: vpn_costs.len(),
        });
    }
    let per_vpn: Vec<bool> = vpn_costs.iter().zip(&bounds.bounds).map(|(c, b)| c > b).collect();
    Ok(SatisfactionReport {
        violated: per_vpn.iter().any(|&v| v),
        per_vpn,
    })
}

/// Which part of the stage cost is held against the satisfaction bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundCost {
    /// Delay plus reservation-change penalty.
    #[default]
    Full,
    DelayOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpnModel {
    pub name: String,
    pub hose: HoseSpec,
    pub space: DiscreteStateSpace,
    pub transitions: TransitionModel,
    pub prices: PriceTable,
    pub segments: Vec<Mdp>,
    pub satisfaction: f64,
    pub initial: Vec<usize>,
}

/// Everything needed to assemble one VPN.
#[derive(Debug, Clone, PartialEq)]
pub struct VpnInput {
    pub name: String,
    pub hose: HoseSpec,
    pub flow_prices: Vec<f64>,
    pub satisfaction: f64,
    pub initial: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSettings {
    pub alpha: f64,
    pub endpoint: GridEndpoint,
    pub rate_up: f64,
    pub rate_down: f64,
    pub beta: f64,
    pub phi_form: PhiForm,
}

impl VpnModel {
    pub fn build(input: VpnInput, settings: ChainSettings, seed: u64) -> Result<Self, HierarchyError> {
        let space = build_state_space_with(&input.hose, settings.alpha, settings.endpoint)?;
        let transitions = build_transition_model(&space, settings.rate_up, settings.rate_down, seed)?;
        let n_flows = 2 * space.segments.len();
        if input.flow_prices.len() != n_flows {
            return Err(HierarchyError::Dimension {
                what: "flow prices",
                expected: n_flows,
                got: input.flow_prices.len(),
            });
        }
        if input.initial.len() != space.segments.len() {
            return Err(HierarchyError::Dimension {
                what: "initial states",
                expected: space.segments.len(),
                got: input.initial.len(),
            });
        }
        let prices = PriceTable::new(input.flow_prices, Vec::new(), settings.beta, 0.0, settings.phi_form)?;
        let mut segments = Vec::with_capacity(space.segments.len());
        for (k, seg) in space.segments.iter().enumerate() {
            if input.initial[k] >= seg.len() {
                return Err(HierarchyError::InitialState {
                    vpn: 0,
                    segment: k,
                    index: input.initial[k],
                });
            }
            segments.push(Mdp::from_segment(
                seg,
                transitions.kernels()[k].clone(),
                prices.flow[2 * k],
                prices.flow[2 * k + 1],
                settings.phi_form,
                settings.beta,
            )?);
        }
        Ok(VpnModel {
            name: input.name,
            hose: input.hose,
            space,
            transitions,
            prices,
            segments,
            satisfaction: input.satisfaction,
            initial: input.initial,
        })
    }

    pub fn n_flows(&self) -> usize {
        2 * self.segments.len()
    }

    /// Expanded flow vector of per-segment state indices.
    pub fn flows(&self, states: &[usize]) -> Vec<f64> {
        self.space.expand(states)
    }

    pub fn stage_cost(&self, now: &[usize], prev: &[usize], kind: BoundCost) -> Result<f64, CostError> {
        let x = self.flows(now);
        match kind {
            BoundCost::Full => vpn_stage_cost(&x, &self.flows(prev), &self.prices),
            BoundCost::DelayOnly => x
                .iter()
                .zip(&self.prices.flow)
                .map(|(&v, &p)| link_delay(v, self.prices.phi_form.phi(v, p)?))
                .sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    /// Discretized load levels.
    pub grid: Vec<f64>,
    pub mdp: Mdp,
}

impl LinkModel {
    pub fn snap(&self, load: f64) -> usize {
        nearest_index(self.grid.iter().copied(), load)
    }
}

/// Per-link load range over every combination of VPN states, discretized
/// with step `alpha`, with kernels drawn at rates `nu1`, `nu2`.
pub fn build_link_mdp(
    vpns: &[VpnModel],
    routing: &RoutingMatrix,
    link_prices: &[f64],
    settings: ChainSettings,
    seed: u64,
) -> Result<Vec<LinkModel>, HierarchyError> {
    let n_flows: usize = vpns.iter().map(VpnModel::n_flows).sum();
    if routing.n_flows() != n_flows {
        return Err(HierarchyError::Dimension {
            what: "routing columns",
            expected: n_flows,
            got: routing.n_flows(),
        });
    }
    if link_prices.len() != routing.n_links() {
        return Err(HierarchyError::Dimension {
            what: "link prices",
            expected: routing.n_links(),
            got: link_prices.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut links = Vec::with_capacity(routing.n_links());
    for (row, &price) in routing.rows().iter().zip(link_prices) {
        let (mut lo, mut hi) = (0.0, 0.0);
        let mut col = 0;
        for vpn in vpns {
            for seg in &vpn.space.segments {
                let (r1, r2) = (row[col], row[col + 1]);
                let contrib = seg.states.iter().map(|s| r1 * s.x_first + r2 * s.x_rest);
                let (a, b) = contrib.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                lo += a;
                hi += b;
                col += 2;
            }
        }
        let levels = if hi - lo <= 1e-12 {
            vec![lo]
        } else {
            grid(lo, hi, settings.alpha, GridEndpoint::Include)
        };
        let kernel = ChainKernel::sample(levels.len(), settings.rate_up, settings.rate_down, &mut rng)?;
        let coords = levels.iter().map(|&l| vec![l]).collect();
        let mdp = Mdp::new(kernel, coords, vec![price], settings.phi_form, settings.beta)?;
        links.push(LinkModel { grid: levels, mdp });
    }
    Ok(links)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub vpns: Vec<VpnModel>,
    pub routing: RoutingMatrix,
    pub links: Vec<LinkModel>,
    pub link_prices: PriceTable,
    pub bounds: SatisfactionBounds,
    pub bound_cost: BoundCost,
}

/// Inputs for [`NetworkModel::build`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInput {
    pub vpns: Vec<VpnInput>,
    pub routing: RoutingMatrix,
    pub link_prices: Vec<f64>,
    pub vpn_chain: ChainSettings,
    pub link_chain: ChainSettings,
    pub lambda_headroom: f64,
    pub bound_cost: BoundCost,
}

impl NetworkModel {
    /// VPN `v` draws its kernels from the seed labelled `vpn/v`, the links
    /// from `links`.
    pub fn build(input: NetworkInput, seed: u64) -> Result<Self, HierarchyError> {
        let bounds = SatisfactionBounds::new(input.vpns.iter().map(|v| v.satisfaction).collect())?;
        let vpns = input
            .vpns
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                VpnModel::build(v, input.vpn_chain, seeds::derive(seed, &format!("vpn/{i}"))).map_err(|e| match e {
                    HierarchyError::InitialState { segment, index, .. } => HierarchyError::InitialState {
                        vpn: i,
                        segment,
                        index,
                    },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let links = build_link_mdp(
            &vpns,
            &input.routing,
            &input.link_prices,
            input.link_chain,
            seeds::derive(seed, "links"),
        )?;
        let link_prices = PriceTable::new(
            Vec::new(),
            input.link_prices,
            input.link_chain.beta,
            input.lambda_headroom,
            input.link_chain.phi_form,
        )?;
        Ok(NetworkModel {
            vpns,
            routing: input.routing,
            links,
            link_prices,
            bounds,
            bound_cost: input.bound_cost,
        })
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.vpns.iter().map(VpnModel::n_flows).collect()
    }

    pub fn initial_states(&self) -> Vec<Vec<usize>> {
        self.vpns.iter().map(|v| v.initial.clone()).collect()
    }

    pub fn vpn_flows(&self, states: &[Vec<usize>]) -> Vec<Vec<f64>> {
        self.vpns.iter().zip(states).map(|(v, s)| v.flows(s)).collect()
    }

    pub fn vpn_costs(&self, now: &[Vec<usize>], prev: &[Vec<usize>]) -> Result<Vec<f64>, CostError> {
        self.vpns
            .iter()
            .zip(now.iter().zip(prev))
            .map(|(v, (n, p))| v.stage_cost(n, p, self.bound_cost))
            .collect()
    }

    /// Stationary LP strategies of every segment and every link.
    pub fn stationary_policies(&self) -> Result<Policies, HierarchyError> {
        let local = self
            .vpns
            .iter()
            .map(|v| {
                v.segments
                    .iter()
                    .map(|m| Ok(solve_stationary(m, None)?.strategy))
                    .collect::<Result<Vec<_>, HierarchyError>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let global = self
            .links
            .iter()
            .map(|l| Ok(solve_stationary(&l.mdp, None)?.strategy))
            .collect::<Result<Vec<_>, HierarchyError>>()?;
        Ok(Policies { local, global })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policies {
    /// Per VPN, per segment.
    pub local: Vec<Vec<StrategyMatrix>>,
    /// Per link.
    pub global: Vec<StrategyMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Local,
    Global,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::Local => "LOCAL",
            Regime::Global => "GLOBAL",
        }
    }
}

/// One epoch of a hierarchical run. `regime` and the action fields
/// describe the step that led into this epoch's state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyEpoch {
    pub epoch: usize,
    pub regime: Regime,
    /// Per VPN, per segment state index.
    pub states: Vec<Vec<usize>>,
    pub flows: Vec<Vec<f64>>,
    pub loads: Vec<f64>,
    pub local_actions: Option<Vec<Vec<Action>>>,
    pub link_actions: Option<Vec<Action>>,
    pub vpn_costs: Vec<f64>,
    pub global_cost: f64,
    pub violated: Vec<bool>,
    /// Sup-norm link residual of the decomposition, for global steps.
    pub ce_residual: Option<f64>,
    pub ce_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalTrajectory {
    pub seed: u64,
    pub epochs: Vec<HierarchyEpoch>,
}

impl HierarchicalTrajectory {
    pub fn global_epochs(&self) -> usize {
        self.epochs.iter().filter(|e| e.regime == Regime::Global).count()
    }
}

fn check_policies(network: &NetworkModel, policies: &Policies) -> Result<(), HierarchyError> {
    if policies.local.len() != network.vpns.len() {
        return Err(HierarchyError::Dimension {
            what: "local policies",
            expected: network.vpns.len(),
            got: policies.local.len(),
        });
    }
    for (v, p) in network.vpns.iter().zip(&policies.local) {
        if p.len() != v.segments.len() || p.iter().zip(&v.segments).any(|(f, m)| f.n_states() != m.n_states()) {
            return Err(HierarchyError::Dimension {
                what: "segment policies",
                expected: v.segments.len(),
                got: p.len(),
            });
        }
    }
    if policies.global.len() != network.links.len()
        || policies.global.iter().zip(&network.links).any(|(f, l)| f.n_states() != l.grid.len())
    {
        return Err(HierarchyError::Dimension {
            what: "link policies",
            expected: network.links.len(),
            got: policies.global.len(),
        });
    }
    Ok(())
}

/// Maps decomposed flow reservations back to per-segment states.
fn decode_states(network: &NetworkModel, reservations: &[f64]) -> Result<Vec<Vec<usize>>, CostError> {
    let mut out = Vec::with_capacity(network.vpns.len());
    let mut col = 0;
    for vpn in &network.vpns {
        let form = vpn.prices.phi_form;
        let mut states = Vec::with_capacity(vpn.segments.len());
        for (k, seg) in vpn.space.segments.iter().enumerate() {
            let first = form.phi_inverse(reservations[col].max(0.0), vpn.prices.flow[2 * k])?;
            let rest = form.phi_inverse(reservations[col + 1].max(0.0), vpn.prices.flow[2 * k + 1])?;
            let estimate = ((first + seg.t_out - rest) / 2.0).clamp(0.0, seg.t_out);
            states.push(seg.nearest(estimate));
            col += 2;
        }
        out.push(states);
    }
    Ok(out)
}

/// Splits link traffic levels into per-segment VPN states: the link
/// reservations `phi(level)` are decomposed by Cross-Entropy (retried once
/// with twice the sample size if the quantile never stalls) and mapped
/// back through `phi^-1`. The CE seed is derived from `seed` and `epoch`.
pub fn decompose_links(
    network: &NetworkModel,
    levels: &[f64],
    ce: &CeConfig,
    seed: u64,
    epoch: usize,
) -> Result<(Vec<Vec<usize>>, CeOutcome), HierarchyError> {
    let target = levels
        .iter()
        .zip(&network.link_prices.link)
        .map(|(&l, &p)| network.link_prices.phi_form.phi(l, p))
        .collect::<Result<Vec<_>, _>>()?;
    let ce_seed = seeds::derive(seed, &format!("ce/{epoch}"));
    let blocks = network.block_sizes();
    let outcome = match run_ce(&target, &network.routing, &blocks, ce, ce_seed) {
        Ok(o) => o,
        Err(CeError::NotConverged(_)) => {
            let doubled = CeConfig {
                n: ce.n * 2,
                ..ce.clone()
            };
            run_ce(&target, &network.routing, &blocks, &doubled, ce_seed)
                .map_err(|source| HierarchyError::Decomposition { epoch, source })?
        }
        Err(source) => return Err(HierarchyError::Decomposition { epoch, source }),
    };
    Ok((decode_states(network, &outcome.best)?, outcome))
}

pub fn simulate_hierarchical(
    network: &NetworkModel,
    policies: &Policies,
    horizon: usize,
    seed: u64,
    ce: &CeConfig,
) -> Result<HierarchicalTrajectory, HierarchyError> {
    check_policies(network, policies)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = network.initial_states();
    let mut prev_states = states.clone();
    let mut prev_loads: Option<Vec<f64>> = None;
    let mut epochs: Vec<HierarchyEpoch> = Vec::with_capacity(horizon + 1);
    let mut regime = Regime::Local;
    let mut local_actions = None;
    let mut link_actions = None;
    let mut ce_residual = None;
    let mut ce_iterations = None;
    for epoch in 0..=horizon {
        let flows = network.vpn_flows(&states);
        let loads = aggregate_links(&network.routing, &flows)?;
        let vpn_costs = network.vpn_costs(&states, &prev_states)?;
        let global_cost = link_stage_cost(&loads, prev_loads.as_ref().unwrap_or(&loads), &network.link_prices)?;
        let report = satisfaction_check(&vpn_costs, &network.bounds)?;
        epochs.push(HierarchyEpoch {
            epoch,
            regime,
            states: states.clone(),
            flows,
            loads: loads.clone(),
            local_actions: local_actions.take(),
            link_actions: link_actions.take(),
            vpn_costs,
            global_cost,
            violated: report.per_vpn.clone(),
            ce_residual: ce_residual.take(),
            ce_iterations: ce_iterations.take(),
        });
        if epoch == horizon {
            break;
        }
        prev_states = states.clone();
        prev_loads = Some(loads.clone());
        if !report.violated {
            regime = Regime::Local;
            let mut acts = Vec::with_capacity(states.len());
            for ((vpn, pol), st) in network.vpns.iter().zip(&policies.local).zip(states.iter_mut()) {
                let mut row = Vec::with_capacity(st.len());
                for ((mdp, f), s) in vpn.segments.iter().zip(pol).zip(st.iter_mut()) {
                    let a = f.sample(*s, &mut rng);
                    *s = sample_index(mdp.row(*s, a).iter().copied(), &mut rng);
                    row.push(a);
                }
                acts.push(row);
            }
            local_actions = Some(acts);
        } else {
            regime = Regime::Global;
            let mut acts = Vec::with_capacity(network.links.len());
            let mut levels = Vec::with_capacity(network.links.len());
            for ((link, f), &load) in network.links.iter().zip(&policies.global).zip(&loads) {
                let i = link.snap(load);
                let d = f.sample(i, &mut rng);
                let j = sample_index(link.mdp.row(i, d).iter().copied(), &mut rng);
                acts.push(d);
                levels.push(link.grid[j]);
            }
            let (next, outcome) = decompose_links(network, &levels, ce, seed, epoch)?;
            states = next;
            ce_residual = Some(outcome.residual_inf());
            ce_iterations = Some(outcome.iterations());
            link_actions = Some(acts);
        }
    }
    Ok(HierarchicalTrajectory { seed, epochs })
}
