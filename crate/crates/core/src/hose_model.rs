//! Hose declarations, their discretized per-site state spaces, and the
//! randomized three-action transition kernels.
//!
//! Each source site of a VPN owns one *segment*: the hose constraint
//! `x_first + x_rest = t_out` leaves a single free coordinate, which is
//! discretized with step `alpha`. States are indexed by increasing `x_first`.
//!
//! Actions move along the segment:
//! - [`Action::Stay`] keeps the state.
//! - [`Action::JumpUp`] moves to one of the (up to) three lower indices,
//!   i.e. towards `x_first = 0` where the second flow carries everything.
//! - [`Action::JumpDown`] moves to one of the (up to) three higher indices.
//!
//! Jump probabilities are a normalized, descending-sorted sample of
//! exponential variates, drawn once per `(state, action)` and then frozen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type SiteId = u32;

/// Number of actions available in every state.
pub const ACTIONS: usize = 3;

/// Largest jump distance of the two moving actions.
const MAX_JUMP: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HoseError {
    #[error("site list is empty")]
    NoSites,
    #[error("site {0} is declared twice")]
    DuplicateSite(SiteId),
    #[error("t_out has {got} entries for {expected} sites")]
    EgressCount { expected: usize, got: usize },
    #[error("t_out of site {site} must be strictly positive and finite, got {value}")]
    InvalidEgress { site: SiteId, value: f64 },
    #[error("connection ({0}, {1}) references an undeclared site")]
    UnknownEndpoint(SiteId, SiteId),
    #[error("connection ({0}, {0}) is a self loop")]
    SelfLoop(SiteId),
    #[error("site {site} has {count} outgoing connections; exactly 2 are required")]
    Fanout { site: SiteId, count: usize },
    #[error("alpha must be strictly positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("alpha = {alpha} exceeds t_out = {t_out} of site {site}")]
    AlphaTooLarge { site: SiteId, alpha: f64, t_out: f64 },
    #[error("transition rate {name} must be strictly positive and finite, got {value}")]
    InvalidRate { name: &'static str, value: f64 },
    #[error("segment {0} does not exist")]
    UnknownSegment(usize),
    #[error("state index {index} is out of range for a segment of {len} states")]
    StateOutOfRange { index: usize, len: usize },
}

/// One of the three traffic motions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    /// `a0`: the traffic stays in its current state.
    Stay,
    /// `a1`: jump towards lower state indices.
    JumpUp,
    /// `a2`: jump towards higher state indices.
    JumpDown,
}

impl Action {
    pub const ALL: [Action; ACTIONS] = [Action::Stay, Action::JumpUp, Action::JumpDown];

    pub fn index(self) -> usize {
        match self {
            Action::Stay => 0,
            Action::JumpUp => 1,
            Action::JumpDown => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }
}

/// A directed origin/destination pair carried by a VPN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flow {
    pub src: SiteId,
    pub dst: SiteId,
}

/// The client's traffic declaration: per-site egress volumes and
/// which ordered site pairs may exchange traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoseSpec {
    sites: Vec<SiteId>,
    t_out: Vec<f64>,
    connections: Vec<(SiteId, SiteId)>,
}

impl HoseSpec {
    pub fn new(
        sites: Vec<SiteId>,
        t_out: Vec<f64>,
        connections: Vec<(SiteId, SiteId)>,
    ) -> Result<Self, HoseError> {
        if sites.is_empty() {
            return Err(HoseError::NoSites);
        }
        for (i, s) in sites.iter().enumerate() {
            if sites[..i].contains(s) {
                return Err(HoseError::DuplicateSite(*s));
            }
        }
        if t_out.len() != sites.len() {
            return Err(HoseError::EgressCount {
                expected: sites.len(),
                got: t_out.len(),
            });
        }
        for (site, &value) in sites.iter().zip(&t_out) {
            if !(value.is_finite() && value > 0.0) {
                return Err(HoseError::InvalidEgress { site: *site, value });
            }
        }
        let mut connections = connections;
        connections.sort_unstable();
        connections.dedup();
        for &(a, b) in &connections {
            if !sites.contains(&a) || !sites.contains(&b) {
                return Err(HoseError::UnknownEndpoint(a, b));
            }
            if a == b {
                return Err(HoseError::SelfLoop(a));
            }
        }
        let spec = HoseSpec {
            sites,
            t_out,
            connections,
        };
        for &site in &spec.sites {
            let count = spec.destinations(site).len();
            if count != 2 {
                return Err(HoseError::Fanout { site, count });
            }
        }
        Ok(spec)
    }

    /// Sites `1..=n` with every ordered pair connected.
    pub fn full_mesh(t_out: Vec<f64>) -> Result<Self, HoseError> {
        let sites: Vec<SiteId> = (1..=t_out.len() as SiteId).collect();
        let connections = sites
            .iter()
            .flat_map(|&a| sites.iter().filter(move |&&b| b != a).map(move |&b| (a, b)))
            .collect();
        HoseSpec::new(sites, t_out, connections)
    }

    pub fn sites(&self) -> &[SiteId] {
        &self.sites
    }

    pub fn t_out(&self) -> &[f64] {
        &self.t_out
    }

    pub fn connections(&self) -> &[(SiteId, SiteId)] {
        &self.connections
    }

    fn position(&self, site: SiteId) -> usize {
        self.sites.iter().position(|&s| s == site).unwrap_or(usize::MAX)
    }

    /// Destinations of `site`, ordered by their position in the site list.
    fn destinations(&self, site: SiteId) -> Vec<SiteId> {
        let mut dsts: Vec<SiteId> = self
            .connections
            .iter()
            .filter(|(a, _)| *a == site)
            .map(|&(_, b)| b)
            .collect();
        dsts.sort_by_key(|&d| self.position(d));
        dsts
    }

    /// Flows in canonical order: for every site, its first then its second
    /// destination.
    pub fn flows(&self) -> Vec<Flow> {
        self.sites
            .iter()
            .flat_map(|&src| {
                self.destinations(src)
                    .into_iter()
                    .map(move |dst| Flow { src, dst })
            })
            .collect()
    }
}

/// Whether a grid whose range is not a multiple of the step gets the exact
/// upper endpoint appended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridEndpoint {
    #[default]
    Include,
    Truncate,
}

/// `lo, lo + step, ...` up to `hi`. The values never exceed `hi`.
pub fn grid(lo: f64, hi: f64, step: f64, endpoint: GridEndpoint) -> Vec<f64> {
    let span = hi - lo;
    let tol = 1e-9 * hi.abs().max(1.0);
    let steps = ((span + tol) / step).floor().max(0.0) as usize;
    let mut points: Vec<f64> = (0..=steps)
        .map(|k| (lo + k as f64 * step).min(hi))
        .collect();
    let last = *points.last().unwrap_or(&lo);
    if hi - last > tol {
        if endpoint == GridEndpoint::Include {
            points.push(hi);
        }
    } else if let Some(p) = points.last_mut() {
        // snap a near-hit onto the exact endpoint
        *p = hi;
    }
    points
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoseState {
    pub x_first: f64,
    pub x_rest: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub site: SiteId,
    pub t_out: f64,
    pub first: Flow,
    pub rest: Flow,
    pub states: Vec<HoseState>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Index of the state whose `x_first` is closest to `x` (lower index on ties).
    pub fn nearest(&self, x: f64) -> usize {
        nearest_index(self.states.iter().map(|s| s.x_first), x)
    }
}

pub fn nearest_index(values: impl Iterator<Item = f64>, x: f64) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        let d = (v - x).abs();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteStateSpace {
    pub alpha: f64,
    pub segments: Vec<Segment>,
}

impl DiscreteStateSpace {
    /// Number of product states over all segments.
    pub fn product_size(&self) -> usize {
        self.segments.iter().map(Segment::len).product()
    }

    /// Both hose components of every segment, in flow order.
    pub fn expand(&self, indices: &[usize]) -> Vec<f64> {
        self.segments
            .iter()
            .zip(indices)
            .flat_map(|(seg, &i)| {
                let s = seg.states[i];
                [s.x_first, s.x_rest]
            })
            .collect()
    }
}

pub fn build_state_space(hose: &HoseSpec, alpha: f64) -> Result<DiscreteStateSpace, HoseError> {
    build_state_space_with(hose, alpha, GridEndpoint::Include)
}

pub fn build_state_space_with(
    hose: &HoseSpec,
    alpha: f64,
    endpoint: GridEndpoint,
) -> Result<DiscreteStateSpace, HoseError> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(HoseError::InvalidAlpha(alpha));
    }
    let flows = hose.flows();
    let mut segments = Vec::with_capacity(hose.sites.len());
    for (k, (&site, &t_out)) in hose.sites.iter().zip(&hose.t_out).enumerate() {
        if alpha > t_out {
            return Err(HoseError::AlphaTooLarge { site, alpha, t_out });
        }
        let states = grid(0.0, t_out, alpha, endpoint)
            .into_iter()
            .map(|x_first| HoseState {
                x_first,
                x_rest: t_out - x_first,
            })
            .collect();
        segments.push(Segment {
            site,
            t_out,
            first: flows[2 * k],
            rest: flows[2 * k + 1],
            states,
        });
    }
    Ok(DiscreteStateSpace { alpha, segments })
}

/// Sparse transition row: `(next state index, probability)` pairs.
pub type KernelRow = Vec<(usize, f64)>;

/// Frozen transition law of one chain (a segment or an MPLS link).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainKernel {
    rows: Vec<[KernelRow; ACTIONS]>,
}

impl ChainKernel {
    /// Draws the jump laws of an `n`-state chain. States are visited in
    /// order and, within a state, `JumpUp` is drawn before `JumpDown`.
    pub fn sample<R: rand::Rng>(
        n: usize,
        rate_up: f64,
        rate_down: f64,
        rng: &mut R,
    ) -> Result<Self, HoseError> {
        check_rate("rate_up", rate_up)?;
        check_rate("rate_down", rate_down)?;
        let up = Exp::new(rate_up).expect("validated rate");
        let down = Exp::new(rate_down).expect("validated rate");
        let rows = (0..n)
            .map(|i| {
                let stay = vec![(i, 1.0)];
                let below: Vec<usize> = (1..=MAX_JUMP).filter_map(|k| i.checked_sub(k)).collect();
                let above: Vec<usize> = (1..=MAX_JUMP).map(|k| i + k).filter(|&j| j < n).collect();
                let jump_up = ordered_row(i, &below, &up, rng);
                let jump_down = ordered_row(i, &above, &down, rng);
                [stay, jump_up, jump_down]
            })
            .collect();
        Ok(ChainKernel { rows })
    }

    /// Builds a kernel from explicit rows. Rows are not re-validated.
    pub fn from_rows(rows: Vec<[KernelRow; ACTIONS]>) -> Self {
        ChainKernel { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, state: usize, action: Action) -> &[(usize, f64)] {
        &self.rows[state][action.index()]
    }

    pub fn try_row(&self, state: usize, action: Action) -> Result<&[(usize, f64)], HoseError> {
        self.rows
            .get(state)
            .map(|r| r[action.index()].as_slice())
            .ok_or(HoseError::StateOutOfRange {
                index: state,
                len: self.rows.len(),
            })
    }
}

fn check_rate(name: &'static str, value: f64) -> Result<(), HoseError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(HoseError::InvalidRate { name, value })
    }
}

/// `targets` are ordered nearest first.
fn ordered_row<R: rand::Rng>(
    from: usize,
    targets: &[usize],
    law: &Exp<f64>,
    rng: &mut R,
) -> KernelRow {
    match targets.len() {
        0 => vec![(from, 1.0)],
        1 => vec![(targets[0], 1.0)],
        k => {
            let mut draws: Vec<f64> = (0..k).map(|_| law.sample(rng)).collect();
            draws.sort_by(|a, b| b.total_cmp(a));
            let total: f64 = draws.iter().sum();
            let mut row: KernelRow = targets
                .iter()
                .zip(&draws)
                .map(|(&t, &d)| (t, d / total))
                .collect();
            // push the rounding residue onto the nearest neighbour
            let residue = 1.0 - row.iter().map(|(_, p)| p).sum::<f64>();
            row[0].1 += residue;
            row
        }
    }
}

/// Per-segment kernels of one VPN, drawn from a single seeded stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    kernels: Vec<ChainKernel>,
}

impl TransitionModel {
    pub fn kernels(&self) -> &[ChainKernel] {
        &self.kernels
    }

    pub fn kernel(&self, segment: usize) -> Result<&ChainKernel, HoseError> {
        self.kernels
            .get(segment)
            .ok_or(HoseError::UnknownSegment(segment))
    }
}

pub fn build_transition_model(
    space: &DiscreteStateSpace,
    lambda1: f64,
    lambda2: f64,
    seed: u64,
) -> Result<TransitionModel, HoseError> {
    check_rate("lambda1", lambda1)?;
    check_rate("lambda2", lambda2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernels = space
        .segments
        .iter()
        .map(|seg| ChainKernel::sample(seg.len(), lambda1, lambda2, &mut rng))
        .collect::<Result<_, _>>()?;
    Ok(TransitionModel {
        lambda1,
        lambda2,
        seed,
        kernels,
    })
}

/// The frozen kernel row for `(segment, state_index, action)`.
pub fn transition_distribution(
    model: &TransitionModel,
    segment: usize,
    state_index: usize,
    action: Action,
) -> Result<&[(usize, f64)], HoseError> {
    model.kernel(segment)?.try_row(state_index, action)
}
