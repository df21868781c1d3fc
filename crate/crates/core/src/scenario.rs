//! Scenario files: one TOML document describing the VPNs, the MPLS core and
//! every solver setting. Loading validates the whole file and fills in all
//! defaults, so the returned [`Scenario`] is complete.
//!
//! ```toml
//! seed = 7
//! alpha = 1.0
//!
//! [[vpn]]
//! name = "X"
//! t_out = [9.0, 6.0, 8.0]
//! ```
//!
//! See the repository README for the full key list.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ce_decomposer::{CeConfig, Planting, UpdateRule};
use crate::cost_model::PhiForm;
use crate::hose_model::{build_state_space_with, GridEndpoint, HoseSpec, SiteId};
use crate::mpls_hierarchy::{
    BoundCost, ChainSettings, HierarchyError, NetworkInput, NetworkModel, RoutingMatrix, VpnInput,
};
use crate::policy_gradient::{default_theta, PgConfig, Theta};
use crate::seeds;

/// Largest accepted scenario file.
pub const MAX_SCENARIO_BYTES: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario exceeds {MAX_SCENARIO_BYTES} bytes")]
    TooLarge,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Model(#[from] HierarchyError),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

fn default_beta() -> f64 {
    0.9
}
fn default_horizon() -> usize {
    500
}
fn default_rate() -> f64 {
    1.0
}
fn default_infinity() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    /// Kernel rates of the site chains.
    #[serde(default = "default_rate")]
    pub lambda1: f64,
    #[serde(default = "default_rate")]
    pub lambda2: f64,
    /// Kernel rates of the link chains.
    #[serde(default = "default_rate")]
    pub nu1: f64,
    #[serde(default = "default_rate")]
    pub nu2: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Rates {
            lambda1: 1.0,
            lambda2: 1.0,
            nu1: 1.0,
            nu2: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VpnConfig {
    #[serde(default)]
    pub name: String,
    pub t_out: Vec<f64>,
    /// Site identifiers; `1..=n` when empty.
    #[serde(default)]
    pub sites: Vec<SiteId>,
    /// Ordered `[src, dst]` pairs; full mesh when empty.
    #[serde(default)]
    pub connections: Vec<[SiteId; 2]>,
    /// One price per flow (two per site); all 1 when empty.
    #[serde(default)]
    pub prices: Vec<f64>,
    #[serde(default = "default_infinity")]
    pub satisfaction: f64,
    /// Initial state index per site; all 0 when empty.
    #[serde(default)]
    pub initial: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingConfig {
    /// Links by flows; identity when empty.
    #[serde(default)]
    pub matrix: Vec<Vec<f64>>,
    /// One price per link; all 1 when empty.
    #[serde(default)]
    pub link_prices: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyConfig {
    #[serde(default)]
    pub bound_cost: BoundCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CeSection {
    #[serde(default = "CeSection::default_k")]
    pub k: f64,
    #[serde(default = "CeSection::default_rho")]
    pub rho: f64,
    #[serde(default = "CeSection::default_n")]
    pub n: usize,
    #[serde(default = "CeSection::default_d")]
    pub d: usize,
    #[serde(default = "default_rate")]
    pub grid_step: f64,
    #[serde(default = "CeSection::default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub update: UpdateRule,
    /// True per-VPN shapes for plant-and-recover runs; empty decomposes
    /// the link reservations of the initial state instead.
    #[serde(default)]
    pub planted: Vec<f64>,
    #[serde(default)]
    pub planting: Planting,
    /// Independent seeded runs of the `ce` command.
    #[serde(default = "CeSection::default_runs")]
    pub runs: usize,
}

impl CeSection {
    fn default_k() -> f64 {
        70.0
    }
    fn default_rho() -> f64 {
        0.1
    }
    fn default_n() -> usize {
        1000
    }
    fn default_d() -> usize {
        5
    }
    fn default_max_iter() -> usize {
        200
    }
    fn default_runs() -> usize {
        1
    }

    pub fn config(&self) -> CeConfig {
        CeConfig {
            k: self.k,
            rho: self.rho,
            n: self.n,
            d: self.d,
            grid_step: self.grid_step,
            max_iter: self.max_iter,
            update: self.update,
        }
    }
}

impl Default for CeSection {
    fn default() -> Self {
        toml::from_str("").expect("all CE fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgSection {
    #[serde(default = "PgSection::default_eta")]
    pub eta: f64,
    #[serde(default = "default_rate")]
    pub step_scale: f64,
    #[serde(default = "default_horizon")]
    pub iterations: usize,
    #[serde(default = "PgSection::default_factor")]
    pub divergence_factor: f64,
    /// Per VPN, per site; twice `phi(t_out / 2)` when empty.
    #[serde(default)]
    pub theta0: Vec<Vec<Theta>>,
    /// Per VPN, per site recurrent state index; `(t_out; 0)` when empty.
    #[serde(default)]
    pub recurrent: Vec<Vec<usize>>,
    /// Run the MPLS variant with link-level parameters.
    #[serde(default)]
    pub mpls: bool,
    /// Per link; twice `phi` of the mid load when empty.
    #[serde(default)]
    pub link_theta0: Vec<Theta>,
    /// Per link recurrent index; the lowest load level when empty.
    #[serde(default)]
    pub link_recurrent: Vec<usize>,
}

impl PgSection {
    fn default_eta() -> f64 {
        0.1
    }
    fn default_factor() -> f64 {
        1e3
    }

    pub fn config(&self) -> PgConfig {
        PgConfig {
            eta: self.eta,
            step_scale: self.step_scale,
            iterations: self.iterations,
            divergence_factor: self.divergence_factor,
        }
    }
}

impl Default for PgSection {
    fn default() -> Self {
        toml::from_str("").expect("all PG fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicityConfig {
    #[serde(default = "ErgodicityConfig::default_epochs")]
    pub epochs: usize,
    #[serde(default = "ErgodicityConfig::default_k_max")]
    pub k_max: u32,
}

impl ErgodicityConfig {
    fn default_epochs() -> usize {
        100_000
    }
    fn default_k_max() -> u32 {
        2
    }
}

impl Default for ErgodicityConfig {
    fn default() -> Self {
        ErgodicityConfig {
            epochs: Self::default_epochs(),
            k_max: Self::default_k_max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub alpha: f64,
    #[serde(default)]
    pub grid_endpoint: GridEndpoint,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub phi_form: PhiForm,
    #[serde(default)]
    pub lambda_headroom: f64,
    #[serde(default)]
    pub rates: Rates,
    #[serde(rename = "vpn")]
    pub vpns: Vec<VpnConfig>,
    #[serde(default)]
    pub routing: RoutingConfig,
    #[serde(default)]
    pub hierarchy: HierarchyConfig,
    #[serde(default)]
    pub ce: CeSection,
    #[serde(default)]
    pub pg: PgSection,
    #[serde(default)]
    pub ergodicity: ErgodicityConfig,
}

fn positive(path: &str, v: f64) -> Result<(), ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be positive and finite, got {v}")))
    }
}

fn length(path: &str, expected: usize, got: usize) -> Result<(), ScenarioError> {
    if expected == got {
        Ok(())
    } else {
        Err(invalid(path, format!("expected {expected} entries, got {got}")))
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        if text.len() > MAX_SCENARIO_BYTES {
            return Err(ScenarioError::TooLarge);
        }
        let mut s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate_and_fill()?;
        Ok(s)
    }

    /// Canonical TOML of the fully resolved scenario.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical TOML, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn n_flows(&self) -> usize {
        self.vpns.iter().map(|v| 2 * v.t_out.len()).sum()
    }

    fn hose(&self, v: usize) -> Result<HoseSpec, ScenarioError> {
        let cfg = &self.vpns[v];
        let connections = cfg.connections.iter().map(|&[a, b]| (a, b)).collect();
        HoseSpec::new(cfg.sites.clone(), cfg.t_out.clone(), connections)
            .map_err(|e| invalid(format!("vpn[{v}]"), e.to_string()))
    }

    pub fn vpn_chain(&self) -> ChainSettings {
        ChainSettings {
            alpha: self.alpha,
            endpoint: self.grid_endpoint,
            rate_up: self.rates.lambda1,
            rate_down: self.rates.lambda2,
            beta: self.beta,
            phi_form: self.phi_form,
        }
    }

    pub fn link_chain(&self) -> ChainSettings {
        ChainSettings {
            rate_up: self.rates.nu1,
            rate_down: self.rates.nu2,
            ..self.vpn_chain()
        }
    }

    fn validate_and_fill(&mut self) -> Result<(), ScenarioError> {
        positive("alpha", self.alpha)?;
        if !(0.0..1.0).contains(&self.beta) {
            return Err(invalid("beta", format!("must lie in [0, 1), got {}", self.beta)));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        if !(self.lambda_headroom >= 0.0 && self.lambda_headroom.is_finite()) {
            return Err(invalid("lambda_headroom", "must be non-negative and finite"));
        }
        positive("rates.lambda1", self.rates.lambda1)?;
        positive("rates.lambda2", self.rates.lambda2)?;
        positive("rates.nu1", self.rates.nu1)?;
        positive("rates.nu2", self.rates.nu2)?;
        if self.vpns.is_empty() {
            return Err(invalid("vpn", "at least one VPN is required"));
        }
        for v in 0..self.vpns.len() {
            self.fill_vpn(v)?;
        }
        self.fill_routing()?;
        self.check_ce()?;
        self.check_ergodicity()?;
        self.fill_pg()?;
        Ok(())
    }

    fn fill_vpn(&mut self, v: usize) -> Result<(), ScenarioError> {
        let alpha = self.alpha;
        let endpoint = self.grid_endpoint;
        let cfg = &mut self.vpns[v];
        let path = format!("vpn[{v}]");
        if cfg.name.is_empty() {
            cfg.name = format!("vpn{}", v + 1);
        }
        let n = cfg.t_out.len();
        if n == 0 {
            return Err(invalid(format!("{path}.t_out"), "at least one site is required"));
        }
        if cfg.sites.is_empty() {
            cfg.sites = (1..=n as SiteId).collect();
        }
        length(&format!("{path}.sites"), n, cfg.sites.len())?;
        for (i, &t) in cfg.t_out.iter().enumerate() {
            positive(&format!("{path}.t_out[{i}]"), t)?;
            if alpha > t {
                return Err(invalid(
                    format!("{path}.t_out[{i}]"),
                    format!("alpha {alpha} exceeds the egress {t} of site {}", cfg.sites[i]),
                ));
            }
        }
        if cfg.connections.is_empty() {
            for &a in &cfg.sites {
                for &b in &cfg.sites {
                    if a != b {
                        cfg.connections.push([a, b]);
                    }
                }
            }
        }
        if cfg.prices.is_empty() {
            cfg.prices = vec![1.0; 2 * n];
        }
        length(&format!("{path}.prices"), 2 * n, cfg.prices.len())?;
        for (i, &p) in cfg.prices.iter().enumerate() {
            positive(&format!("{path}.prices[{i}]"), p)?;
        }
        if cfg.satisfaction.is_nan() || cfg.satisfaction < 0.0 {
            return Err(invalid(format!("{path}.satisfaction"), "must be non-negative"));
        }
        if cfg.initial.is_empty() {
            cfg.initial = vec![0; n];
        }
        length(&format!("{path}.initial"), n, cfg.initial.len())?;
        let hose = self.hose(v)?;
        let space = build_state_space_with(&hose, alpha, endpoint).map_err(|e| invalid(&path, e.to_string()))?;
        for (i, (&s, seg)) in self.vpns[v].initial.iter().zip(&space.segments).enumerate() {
            if s >= seg.len() {
                return Err(invalid(
                    format!("{path}.initial[{i}]"),
                    format!("state {s} is outside the {} states of site {}", seg.len(), seg.site),
                ));
            }
        }
        Ok(())
    }

    fn fill_routing(&mut self) -> Result<(), ScenarioError> {
        let flows = self.n_flows();
        let r = &mut self.routing;
        if r.matrix.is_empty() {
            r.matrix = RoutingMatrix::identity(flows).rows().to_vec();
        }
        for (i, row) in r.matrix.iter().enumerate() {
            if row.len() != flows {
                return Err(invalid(
                    format!("routing.matrix[{i}]"),
                    format!("expected {flows} columns (one per flow), got {}", row.len()),
                ));
            }
            if let Some(j) = row.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(invalid(format!("routing.matrix[{i}][{j}]"), "must be finite and non-negative"));
            }
        }
        if r.link_prices.is_empty() {
            r.link_prices = vec![1.0; r.matrix.len()];
        }
        length("routing.link_prices", r.matrix.len(), r.link_prices.len())?;
        for (i, &p) in r.link_prices.iter().enumerate() {
            positive(&format!("routing.link_prices[{i}]"), p)?;
        }
        Ok(())
    }

    fn check_ce(&self) -> Result<(), ScenarioError> {
        let ce = &self.ce;
        positive("ce.k", ce.k)?;
        ce.config().validate().map_err(|e| invalid("ce", e.to_string()))?;
        if ce.max_iter == 0 {
            return Err(invalid("ce.max_iter", "must be at least 1"));
        }
        if ce.runs == 0 {
            return Err(invalid("ce.runs", "must be at least 1"));
        }
        if !ce.planted.is_empty() {
            length("ce.planted", self.vpns.len(), ce.planted.len())?;
            for (i, &p) in ce.planted.iter().enumerate() {
                if !(p > 1.0 && p.is_finite()) {
                    return Err(invalid(format!("ce.planted[{i}]"), format!("shape must exceed 1, got {p}")));
                }
            }
        }
        Ok(())
    }

    fn check_ergodicity(&self) -> Result<(), ScenarioError> {
        if self.ergodicity.epochs == 0 {
            return Err(invalid("ergodicity.epochs", "must be at least 1"));
        }
        if self.ergodicity.k_max == 0 {
            return Err(invalid("ergodicity.k_max", "must be at least 1"));
        }
        Ok(())
    }

    fn fill_pg(&mut self) -> Result<(), ScenarioError> {
        self.pg.config().validate().map_err(|e| invalid("pg", e.to_string()))?;
        if self.pg.iterations == 0 {
            return Err(invalid("pg.iterations", "must be at least 1"));
        }
        let network = self.network()?;
        let pg = &mut self.pg;
        if pg.theta0.is_empty() {
            pg.theta0 = network
                .vpns
                .iter()
                .map(|v| {
                    v.segments
                        .iter()
                        .zip(&v.space.segments)
                        .map(|(m, seg)| default_theta(m, seg.t_out).map_err(|e| invalid("pg.theta0", e.to_string())))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
        }
        if pg.recurrent.is_empty() {
            pg.recurrent = network
                .vpns
                .iter()
                .map(|v| v.space.segments.iter().map(|seg| seg.nearest(seg.t_out)).collect())
                .collect();
        }
        length("pg.theta0", network.vpns.len(), pg.theta0.len())?;
        length("pg.recurrent", network.vpns.len(), pg.recurrent.len())?;
        for (v, vpn) in network.vpns.iter().enumerate() {
            length(&format!("pg.theta0[{v}]"), vpn.segments.len(), pg.theta0[v].len())?;
            length(&format!("pg.recurrent[{v}]"), vpn.segments.len(), pg.recurrent[v].len())?;
            for (i, t) in pg.theta0[v].iter().enumerate() {
                if t.iter().any(|x| !x.is_finite()) {
                    return Err(invalid(format!("pg.theta0[{v}][{i}]"), "must be finite"));
                }
            }
            for (i, (&r, m)) in pg.recurrent[v].iter().zip(&vpn.segments).enumerate() {
                if r >= m.n_states() {
                    return Err(invalid(
                        format!("pg.recurrent[{v}][{i}]"),
                        format!("state {r} is outside the {} states of the site", m.n_states()),
                    ));
                }
            }
        }
        if pg.link_theta0.is_empty() {
            pg.link_theta0 = network
                .links
                .iter()
                .zip(&network.link_prices.link)
                .map(|(l, &p)| {
                    let mid = (l.grid[0] + l.grid[l.grid.len() - 1]) / 2.0;
                    let u = 2.0 * network.link_prices.phi_form.phi(mid, p).unwrap_or(mid);
                    [u; 3]
                })
                .collect();
        }
        if pg.link_recurrent.is_empty() {
            pg.link_recurrent = vec![0; network.links.len()];
        }
        length("pg.link_theta0", network.links.len(), pg.link_theta0.len())?;
        length("pg.link_recurrent", network.links.len(), pg.link_recurrent.len())?;
        for (i, (&r, l)) in pg.link_recurrent.iter().zip(&network.links).enumerate() {
            if r >= l.grid.len() {
                return Err(invalid(format!("pg.link_recurrent[{i}]"), "state outside the link grid"));
            }
        }
        Ok(())
    }

    /// Seed of the model's kernels, derived from the master seed.
    pub fn model_seed(&self) -> u64 {
        seeds::derive(self.seed, "model")
    }

    /// Builds every VPN and link chain.
    pub fn network(&self) -> Result<NetworkModel, ScenarioError> {
        let vpns = (0..self.vpns.len())
            .map(|v| {
                let cfg = &self.vpns[v];
                Ok(VpnInput {
                    name: cfg.name.clone(),
                    hose: self.hose(v)?,
                    flow_prices: cfg.prices.clone(),
                    satisfaction: cfg.satisfaction,
                    initial: cfg.initial.clone(),
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let routing = RoutingMatrix::new(self.routing.matrix.clone())?;
        Ok(NetworkModel::build(
            NetworkInput {
                vpns,
                routing,
                link_prices: self.routing.link_prices.clone(),
                vpn_chain: self.vpn_chain(),
                link_chain: self.link_chain(),
                lambda_headroom: self.lambda_headroom,
                bound_cost: self.hierarchy.bound_cost,
            },
            self.model_seed(),
        )?)
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let meta = std::fs::metadata(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if meta.len() > MAX_SCENARIO_BYTES as u64 {
        return Err(ScenarioError::TooLarge);
    }
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_toml(&text)
}
