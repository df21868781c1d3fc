//! Command dispatch: runs one solver on a scenario and writes its CSV
//! tables plus a `manifest.toml` listing every file with its SHA-256.
//!
//! All randomness derives from the scenario's master seed through
//! [`crate::seeds::derive`], and floats are printed in their shortest
//! round-trip form, so identical inputs give byte-identical outputs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bellman_solver::{rollout, rollout_regenerative, solve_finite_horizon, BellmanError};
use crate::ce_decomposer::{planted_target, run_ce, CeError, GammaParams};
use crate::cost_model::CostError;
use crate::hose_model::Action;
use crate::mdp::Mdp;
use crate::mpls_hierarchy::{aggregate_links, simulate_hierarchical, HierarchyError, NetworkModel, Regime};
use crate::policy_gradient::{run_mpls_policy_gradient, run_policy_gradient, ChainSpec, MplsStart, PgError};
use crate::scenario::{Scenario, ScenarioError};
use crate::seeds;
use crate::stationary_lp::{ergodicity_check, solve_stationary, uniform, StationaryError};
use crate::switching_game::{deviation_gains, solve_switching_game, Controller, SwitchingError, VpnGame};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("bellman: {0}")]
    Bellman(#[from] BellmanError),
    #[error("stationary: {0}")]
    Stationary(#[from] StationaryError),
    #[error("hierarchy: {0}")]
    Hierarchy(#[from] HierarchyError),
    #[error("ce: {0}")]
    Ce(#[from] CeError),
    #[error("game: {0}")]
    Game(#[from] SwitchingError),
    #[error("pg: {0}")]
    Pg(#[from] PgError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("{command}: {message}")]
    Unsupported { command: Command, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Bellman,
    Stationary,
    Ergodicity,
    Hierarchy,
    Ce,
    Game,
    Pg,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Bellman,
        Command::Stationary,
        Command::Ergodicity,
        Command::Hierarchy,
        Command::Ce,
        Command::Game,
        Command::Pg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Bellman => "bellman",
            Command::Stationary => "stationary",
            Command::Ergodicity => "ergodicity",
            Command::Hierarchy => "hierarchy",
            Command::Ce => "ce",
            Command::Game => "game",
            Command::Pg => "pg",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command {s:?}"))
    }
}

/// One CSV file: fixed header, string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&'static str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: Command,
    pub seed: u64,
    pub scenario_sha256: String,
    pub solver: String,
    pub version: String,
    pub files: Vec<FileEntry>,
    /// Headline numbers of the run.
    pub summary: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub tables: Vec<Table>,
}

/// Tables and headline numbers of one command, before anything is written.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Output {
    pub tables: Vec<Table>,
    pub summary: BTreeMap<String, String>,
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";")
}

fn act(a: Action) -> String {
    a.index().to_string()
}

/// Every segment of every VPN as `(vpn, site, mdp)`.
fn segments(network: &NetworkModel) -> impl Iterator<Item = (usize, usize, &Mdp)> {
    network
        .vpns
        .iter()
        .enumerate()
        .flat_map(|(v, vpn)| vpn.segments.iter().enumerate().map(move |(k, m)| (v, k, m)))
}

fn bellman(scenario: &Scenario, network: &NetworkModel) -> Result<Output, RunError> {
    let mut traj = Table::new(
        "bellman_trajectory.csv",
        &["vpn", "site", "epoch", "state", "x_first", "x_rest", "action", "b_first", "b_rest", "cost"],
    );
    let mut pol = Table::new(
        "bellman_policy.csv",
        &["vpn", "site", "state", "x_first", "x_rest", "action", "value"],
    );
    let mut total = 0.0;
    for (v, k, mdp) in segments(network) {
        let (policy, values) = solve_finite_horizon(mdp, scenario.horizon)?;
        let first = policy.at(0);
        for s in 0..mdp.n_states() {
            let a = first.action(s).unwrap_or(Action::Stay);
            pol.push(vec![
                v.to_string(),
                k.to_string(),
                s.to_string(),
                num(mdp.coords[s][0]),
                num(mdp.coords[s][1]),
                act(a),
                num(values.at_epoch(scenario.horizon, 0)[s]),
            ]);
        }
        let seed = seeds::derive(scenario.seed, &format!("bellman/{v}/{k}"));
        let run = rollout(&policy, mdp, network.vpns[v].initial[k], seed)?;
        for step in &run.steps {
            total += step.cost;
            traj.push(vec![
                v.to_string(),
                k.to_string(),
                step.epoch.to_string(),
                step.state.to_string(),
                num(mdp.coords[step.state][0]),
                num(mdp.coords[step.state][1]),
                act(step.action),
                num(step.reservation[0]),
                num(step.reservation[1]),
                num(step.cost),
            ]);
        }
    }
    let mut summary = BTreeMap::new();
    summary.insert("total_cost".into(), num(total));
    Ok(Output {
        tables: vec![traj, pol],
        summary,
    })
}

fn stationary(network: &NetworkModel) -> Result<Output, RunError> {
    let mut pol = Table::new(
        "stationary_policy.csv",
        &["vpn", "site", "state", "x_first", "x_rest", "action", "mass"],
    );
    let mut occ = Table::new("occupation.csv", &["vpn", "site", "state", "action", "x"]);
    let mut worst: f64 = 0.0;
    for (v, k, mdp) in segments(network) {
        let sol = solve_stationary(mdp, None)?;
        worst = worst.max(sol.occupation.residual);
        for s in 0..mdp.n_states() {
            let a = sol.strategy.action(s).unwrap_or(Action::Stay);
            pol.push(vec![
                v.to_string(),
                k.to_string(),
                s.to_string(),
                num(mdp.coords[s][0]),
                num(mdp.coords[s][1]),
                act(a),
                num(sol.occupation.state_mass(s)),
            ]);
            for b in Action::ALL {
                occ.push(vec![
                    v.to_string(),
                    k.to_string(),
                    s.to_string(),
                    act(b),
                    num(sol.occupation.x[s][b.index()]),
                ]);
            }
        }
    }
    let mut summary = BTreeMap::new();
    summary.insert("max_lp_residual".into(), num(worst));
    Ok(Output {
        tables: vec![pol, occ],
        summary,
    })
}

/// Rolls out the first-epoch Bellman strategy with regenerative restarts
/// and compares its visit moments with the LP occupation measure.
fn ergodicity(scenario: &Scenario, network: &NetworkModel) -> Result<Output, RunError> {
    let mut table = Table::new(
        "ergodicity.csv",
        &["vpn", "site", "action", "k", "spatial", "temporal", "abs_gap", "rel_gap"],
    );
    let mut worst: f64 = 0.0;
    for (v, k, mdp) in segments(network) {
        let (policy, _) = solve_finite_horizon(mdp, scenario.horizon)?;
        let sol = solve_stationary(mdp, None)?;
        let law = uniform(mdp.n_states());
        let seed = seeds::derive(scenario.seed, &format!("ergodicity/{v}/{k}"));
        let run = rollout_regenerative(policy.at(0), mdp, &law, scenario.ergodicity.epochs, seed)?;
        let report = ergodicity_check(&sol.occupation, &mdp.levels, &[run], scenario.ergodicity.k_max)?;
        worst = worst.max(report.max_rel_gap());
        for row in &report.rows {
            table.push(vec![
                v.to_string(),
                k.to_string(),
                act(row.action),
                row.k.to_string(),
                num(row.spatial),
                num(row.temporal),
                num(row.abs_gap),
                num(row.rel_gap),
            ]);
        }
    }
    let mut summary = BTreeMap::new();
    summary.insert("max_rel_gap".into(), num(worst));
    Ok(Output {
        tables: vec![table],
        summary,
    })
}

fn hierarchy(scenario: &Scenario, network: &NetworkModel) -> Result<Output, RunError> {
    let policies = network.stationary_policies()?;
    let seed = seeds::derive(scenario.seed, "hierarchy");
    let run = simulate_hierarchical(network, &policies, scenario.horizon, seed, &scenario.ce.config())?;
    let mut sites = Table::new(
        "hierarchy_sites.csv",
        &["epoch", "regime", "vpn", "site", "state", "x_first", "x_rest", "action"],
    );
    let mut links = Table::new(
        "hierarchy_links.csv",
        &["epoch", "regime", "link", "load", "reservation", "action"],
    );
    let mut vpns = Table::new(
        "hierarchy_vpns.csv",
        &["epoch", "regime", "vpn", "cost", "bound", "violated", "ce_residual", "ce_iterations"],
    );
    let mut totals = Table::new(
        "hierarchy_epochs.csv",
        &["epoch", "regime", "global_cost", "vpn_cost_sum", "violated"],
    );
    let prices = &network.link_prices;
    for e in &run.epochs {
        let regime = e.regime.label().to_string();
        totals.push(vec![
            e.epoch.to_string(),
            regime.clone(),
            num(e.global_cost),
            num(e.vpn_costs.iter().sum()),
            e.violated.iter().any(|&v| v).to_string(),
        ]);
        for (v, states) in e.states.iter().enumerate() {
            for (k, &s) in states.iter().enumerate() {
                let action = e
                    .local_actions
                    .as_ref()
                    .map_or(String::new(), |acts| act(acts[v][k]));
                sites.push(vec![
                    e.epoch.to_string(),
                    regime.clone(),
                    v.to_string(),
                    k.to_string(),
                    s.to_string(),
                    num(e.flows[v][2 * k]),
                    num(e.flows[v][2 * k + 1]),
                    action,
                ]);
            }
        }
        for (l, &load) in e.loads.iter().enumerate() {
            let action = e.link_actions.as_ref().map_or(String::new(), |acts| act(acts[l]));
            links.push(vec![
                e.epoch.to_string(),
                regime.clone(),
                l.to_string(),
                num(load),
                num(prices.phi_form.phi(load, prices.link[l])?),
                action,
            ]);
        }
        for (v, &cost) in e.vpn_costs.iter().enumerate() {
            vpns.push(vec![
                e.epoch.to_string(),
                regime.clone(),
                v.to_string(),
                num(cost),
                num(network.bounds.values()[v]),
                e.violated[v].to_string(),
                e.ce_residual.map_or(String::new(), num),
                e.ce_iterations.map_or(String::new(), |i| i.to_string()),
            ]);
        }
    }
    let mut summary = BTreeMap::new();
    summary.insert("epochs".into(), run.epochs.len().to_string());
    summary.insert("global_epochs".into(), run.global_epochs().to_string());
    Ok(Output {
        tables: vec![totals, sites, links, vpns],
        summary,
    })
}

fn ce(scenario: &Scenario, network: &NetworkModel) -> Result<Output, RunError> {
    if network.vpns.len() < 2 {
        return Err(RunError::Unsupported {
            command: Command::Ce,
            message: "decomposition needs at least two VPNs".into(),
        });
    }
    let blocks = network.block_sizes();
    let config = scenario.ce.config();
    let mut trace = Table::new("ce_trace.csv", &["run", "iteration", "gamma_hat", "best_score", "shapes"]);
    let mut result = Table::new(
        "ce_result.csv",
        &["run", "status", "iterations", "residual_inf", "planted", "recovered"],
    );
    let mut flows = Table::new("ce_flows.csv", &["run", "flow", "planted", "decomposed"]);
    let mut recovered = 0;
    for r in 0..scenario.ce.runs {
        let seed = seeds::derive(scenario.seed, &format!("ce/run/{r}"));
        let (planted, target) = if scenario.ce.planted.is_empty() {
            let loads = aggregate_links(&network.routing, &network.vpn_flows(&network.initial_states()))?;
            let target = loads
                .iter()
                .zip(&network.link_prices.link)
                .map(|(&l, &p)| network.link_prices.phi_form.phi(l, p))
                .collect::<Result<Vec<_>, _>>()?;
            (None, target)
        } else {
            let truth = GammaParams::new(scenario.ce.planted.clone(), scenario.ce.planted.iter().sum())?;
            let plant_seed = seeds::derive(seed, "plant");
            let (x, target) = planted_target(&truth, &blocks, &network.routing, scenario.ce.planting, plant_seed)?;
            (Some(x), target)
        };
        let planted_text = if scenario.ce.planted.is_empty() {
            String::new()
        } else {
            join(&scenario.ce.planted)
        };
        match run_ce(&target, &network.routing, &blocks, &config, seed) {
            Ok(out) => {
                for it in &out.trace {
                    trace.push(vec![
                        r.to_string(),
                        it.iteration.to_string(),
                        num(it.gamma_hat),
                        num(it.best_score),
                        join(&it.shapes),
                    ]);
                }
                if out.params.shapes == scenario.ce.planted {
                    recovered += 1;
                }
                result.push(vec![
                    r.to_string(),
                    "stalled".into(),
                    out.iterations().to_string(),
                    num(out.residual_inf()),
                    planted_text,
                    join(&out.params.shapes),
                ]);
                for (f, &b) in out.best.iter().enumerate() {
                    let p = planted.as_ref().map_or(String::new(), |x| num(x[f]));
                    flows.push(vec![r.to_string(), f.to_string(), p, num(b)]);
                }
            }
            Err(CeError::NotConverged(n)) => {
                result.push(vec![
                    r.to_string(),
                    "not_converged".into(),
                    n.to_string(),
                    String::new(),
                    planted_text,
                    String::new(),
                ]);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut summary = BTreeMap::new();
    summary.insert("runs".into(), scenario.ce.runs.to_string());
    if !scenario.ce.planted.is_empty() {
        summary.insert("recovered".into(), recovered.to_string());
    }
    Ok(Output {
        tables: vec![trace, result, flows],
        summary,
    })
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn game(scenario: &Scenario, network: &NetworkModel) -> Result<Output, RunError> {
    let g = VpnGame::build(network, scenario.beta, scenario.lambda_headroom)?;
    let sol = solve_switching_game(&g.game)?;
    let (g1, g2) = deviation_gains(&g.game, &sol);
    let mut policy = Table::new(
        "game_policy.csv",
        &["state", "controller", "segments", "value", "vpn_actions", "vpn_prob", "link_actions", "link_prob"],
    );
    let mut strategy = Table::new("game_strategy.csv", &["state", "player", "action", "probability"]);
    let label = |acts: Vec<Action>| acts.into_iter().map(act).collect::<Vec<_>>().join(";");
    for s in 0..g.game.n_states() {
        let a = argmax(&sol.player1[s]);
        let d = argmax(&sol.player2[s]);
        let controller = match g.game.states[s].controller {
            Controller::Player1 => "E1",
            Controller::Player2 => "E2",
        };
        let segs = g.segment_states(s).iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";");
        policy.push(vec![
            s.to_string(),
            controller.into(),
            segs,
            num(sol.values[s]),
            label(g.vpn_actions(a)),
            num(sol.player1[s][a]),
            label(g.link_actions(d)),
            num(sol.player2[s][d]),
        ]);
        for (player, probs) in [("vpn", &sol.player1[s]), ("operator", &sol.player2[s])] {
            for (i, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    strategy.push(vec![s.to_string(), player.into(), i.to_string(), num(p)]);
                }
            }
        }
    }
    let part = g.game.partition();
    let mut summary = BTreeMap::new();
    summary.insert("rounds".into(), sol.rounds.to_string());
    summary.insert("e1_states".into(), part.e1.len().to_string());
    summary.insert("e2_states".into(), part.e2.len().to_string());
    summary.insert("vpn_deviation_gain".into(), num(g1));
    summary.insert("operator_deviation_gain".into(), num(g2));
    Ok(Output {
        tables: vec![policy, strategy],
        summary,
    })
}

const PG_HEADER: [&str; 10] = [
    "iteration", "scope", "vpn", "index", "regime", "state", "lambda", "theta1", "theta2", "theta3",
];

fn pg(scenario: &Scenario, network: &NetworkModel) -> Result<Output, RunError> {
    let seed = seeds::derive(scenario.seed, "pg");
    let config = scenario.pg.config();
    let mut table = Table::new("pg_trace.csv", &PG_HEADER);
    let mut summary = BTreeMap::new();
    let mut push = |iteration: usize, scope: &str, vpn: String, index: usize, regime: &str, trace: &crate::policy_gradient::ChainTrace| {
        let th = trace.theta[iteration];
        table.push(vec![
            iteration.to_string(),
            scope.into(),
            vpn,
            index.to_string(),
            regime.into(),
            trace.states[iteration].to_string(),
            num(trace.lambda[iteration]),
            num(th[0]),
            num(th[1]),
            num(th[2]),
        ]);
    };
    if scenario.pg.mpls {
        let start = MplsStart {
            site_theta: scenario.pg.theta0.clone(),
            site_recurrent: scenario.pg.recurrent.clone(),
            link_theta: scenario.pg.link_theta0.clone(),
            link_recurrent: scenario.pg.link_recurrent.clone(),
        };
        let run = run_mpls_policy_gradient(network, &start, &config, &scenario.ce.config(), seed)?;
        for it in 0..=config.iterations {
            let regime = if it == 0 { "" } else { run.regimes[it - 1].label() };
            for (v, traces) in run.sites.iter().enumerate() {
                for (k, tr) in traces.iter().enumerate() {
                    push(it, "site", v.to_string(), k, regime, tr);
                }
            }
            for (l, tr) in run.links.iter().enumerate() {
                push(it, "link", String::new(), l, regime, tr);
            }
        }
        let global = run.regimes.iter().filter(|&&r| r == Regime::Global).count();
        summary.insert("global_epochs".into(), global.to_string());
        summary.insert("parameters".into(), run.parameter_count().to_string());
    } else {
        let mut specs = Vec::new();
        let mut ids = Vec::new();
        for (v, k, mdp) in segments(network) {
            specs.push(ChainSpec {
                mdp,
                theta0: scenario.pg.theta0[v][k],
                initial: network.vpns[v].initial[k],
                recurrent: scenario.pg.recurrent[v][k],
            });
            ids.push((v, k));
        }
        let traces = run_policy_gradient(&specs, &config, seed)?;
        for it in 0..=config.iterations {
            for (&(v, k), tr) in ids.iter().zip(&traces) {
                push(it, "site", v.to_string(), k, "LOCAL", tr);
            }
        }
        let worst = traces.iter().map(|t| t.lambda_variation(50)).fold(0.0, f64::max);
        summary.insert("max_lambda_variation_last50".into(), num(worst));
    }
    Ok(Output {
        tables: vec![table],
        summary,
    })
}

/// Runs `command` without touching the filesystem.
pub fn execute(command: Command, scenario: &Scenario) -> Result<Output, RunError> {
    let network = scenario.network()?;
    match command {
        Command::Bellman => bellman(scenario, &network),
        Command::Stationary => stationary(&network),
        Command::Ergodicity => ergodicity(scenario, &network),
        Command::Hierarchy => hierarchy(scenario, &network),
        Command::Ce => ce(scenario, &network),
        Command::Game => game(scenario, &network),
        Command::Pg => pg(scenario, &network),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Runs `command` and writes its tables and `manifest.toml` into `out_dir`.
pub fn run(command: Command, scenario: &Scenario, out_dir: &Path) -> Result<RunArtifact, RunError> {
    let output = execute(command, scenario)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut files = Vec::with_capacity(output.tables.len());
    for table in &output.tables {
        let bytes = table.to_csv()?;
        let path = out_dir.join(&table.name);
        std::fs::write(&path, &bytes).map_err(io_err(&path))?;
        files.push(FileEntry {
            name: table.name.clone(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            rows: table.rows.len(),
        });
    }
    let manifest = Manifest {
        command,
        seed: scenario.seed,
        scenario_sha256: scenario.hash(),
        solver: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        files,
        summary: output.summary,
    };
    let path = out_dir.join("manifest.toml");
    let text = toml::to_string(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(RunArtifact {
        out_dir: out_dir.to_path_buf(),
        manifest,
        tables: output.tables,
    })
}
