//! Dynamic bandwidth reservation for hose-model VPNs.
//!
//! Traffic on each VPN site is a finite Markov decision process whose
//! adversarial (worst-case) policy drives the operator's reservations. The
//! crate provides the model, finite-horizon and stationary solvers, the
//! hierarchical multi-VPN controller with its Cross-Entropy decomposition,
//! a switching-control game solver, and a simulation-based policy gradient.

pub mod bellman_solver;
pub mod cost_model;
pub mod hose_model;
pub mod mdp;
pub mod simplex;
pub mod stationary_lp;
pub mod matrix_game;
pub mod switching_game;
pub mod ce_decomposer;
pub mod mpls_hierarchy;
pub mod seeds;
pub mod policy_gradient;
pub mod scenario;
pub mod runner;
