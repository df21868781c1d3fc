//! Cross-Entropy decomposition of aggregate link reservations into per-VPN
//! flow reservations.
//!
//! Candidates draw every flow of VPN `b` independently from a unit-scale
//! gamma law with shape `p_b`; the shapes are constrained to sum to `K`.
//! Each round scores candidates by the inverse link-space residual, keeps
//! the elites above the `(1 - rho)` quantile and refits the shapes on a
//! grid over the constrained simplex.
//!
//! Every round re-seeds the sampler identically, so rounds with the same
//! shapes see the same candidates and the quantile repeats exactly once
//! the shapes settle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaLaw};
use statrs::function::gamma::{digamma, ln_gamma};
use thiserror::Error;

use crate::mpls_hierarchy::RoutingMatrix;

/// Score given to a candidate that reproduces the target exactly.
pub const SCORE_CAP: f64 = 1e12;
/// Largest number of grid points a refit will scan.
pub const MAX_GRID_POINTS: usize = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CeError {
    #[error("gamma shape {0} must exceed 1")]
    InvalidShape(f64),
    #[error("shapes sum to {sum}, expected K = {k}")]
    ShapeSum { sum: f64, k: f64 },
    #[error("need at least two blocks, got {0}")]
    TooFewBlocks(usize),
    #[error("sample size must be at least 10, got {0}")]
    SampleSize(usize),
    #[error("rarity rho must lie in (0, 1), got {0}")]
    Rho(f64),
    #[error("stall window d must be at least 1")]
    Window,
    #[error("grid step must be positive, got {0}")]
    GridStep(f64),
    #[error("no grid point satisfies the shape constraints for K = {0}")]
    EmptyGrid(f64),
    #[error("grid would hold more than {MAX_GRID_POINTS} points")]
    GridTooLarge,
    #[error("no scores given")]
    NoScores,
    #[error("no elite sample reaches the quantile")]
    NoElites,
    #[error("candidate has {candidate} flows, routing expects {routing}; target has {target} links, routing has {links}")]
    Dimension {
        candidate: usize,
        routing: usize,
        target: usize,
        links: usize,
    },
    #[error("quantile did not stall within {0} iterations")]
    NotConverged(usize),
}

/// How refitted shapes are obtained from the elite log-ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Stationarity of the elite gamma log-likelihood under the sum
    /// constraint: `psi(p_b) - psi(p_n) = mean ln B_b - mean ln B_n`.
    #[default]
    Digamma,
    /// `ln(Gamma(p_b) Gamma(p_n)) / p_b = mean ln B_b - mean ln B_n`.
    LogGammaRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shapes: Vec<f64>,
    pub k: f64,
}

impl GammaParams {
    pub fn new(shapes: Vec<f64>, k: f64) -> Result<Self, CeError> {
        if shapes.len() < 2 {
            return Err(CeError::TooFewBlocks(shapes.len()));
        }
        if let Some(&bad) = shapes.iter().find(|&&p| !(p > 1.0 && p.is_finite())) {
            return Err(CeError::InvalidShape(bad));
        }
        let sum: f64 = shapes.iter().sum();
        if (sum - k).abs() > 1e-9 * k.abs().max(1.0) {
            return Err(CeError::ShapeSum { sum, k });
        }
        Ok(GammaParams { shapes, k })
    }

    /// `K / n` for every block.
    pub fn even(k: f64, blocks: usize) -> Result<Self, CeError> {
        GammaParams::new(vec![k / blocks as f64; blocks], k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeConfig {
    pub k: f64,
    pub rho: f64,
    pub n: usize,
    pub d: usize,
    pub grid_step: f64,
    pub max_iter: usize,
    pub update: UpdateRule,
}

impl Default for CeConfig {
    fn default() -> Self {
        CeConfig {
            k: 70.0,
            rho: 0.1,
            n: 1000,
            d: 5,
            grid_step: 1.0,
            max_iter: 200,
            update: UpdateRule::Digamma,
        }
    }
}

impl CeConfig {
    pub fn validate(&self) -> Result<(), CeError> {
        if self.n < 10 {
            return Err(CeError::SampleSize(self.n));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(CeError::Rho(self.rho));
        }
        if self.d == 0 {
            return Err(CeError::Window);
        }
        if !(self.grid_step > 0.0 && self.grid_step.is_finite()) {
            return Err(CeError::GridStep(self.grid_step));
        }
        Ok(())
    }
}

/// `n` candidates; block `b` covers `block_sizes[b]` consecutive flows.
pub fn sample_reservations(
    params: &GammaParams,
    block_sizes: &[usize],
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, CeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(params, block_sizes, n, &mut rng)
}

fn sample_with(
    params: &GammaParams,
    block_sizes: &[usize],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>, CeError> {
    if block_sizes.len() != params.shapes.len() {
        return Err(CeError::TooFewBlocks(block_sizes.len()));
    }
    let laws = params
        .shapes
        .iter()
        .map(|&p| Gamma::new(p, 1.0).map_err(|_| CeError::InvalidShape(p)))
        .collect::<Result<Vec<_>, _>>()?;
    let width: usize = block_sizes.iter().sum();
    Ok((0..n)
        .map(|_| {
            let mut v = Vec::with_capacity(width);
            for (law, &m) in laws.iter().zip(block_sizes) {
                for _ in 0..m {
                    v.push(law.sample(rng));
                }
            }
            v
        })
        .collect())
}

fn check_dims(candidate: &[f64], target: &[f64], routing: &RoutingMatrix) -> Result<(), CeError> {
    if candidate.len() != routing.n_flows() || target.len() != routing.n_links() {
        return Err(CeError::Dimension {
            candidate: candidate.len(),
            routing: routing.n_flows(),
            target: target.len(),
            links: routing.n_links(),
        });
    }
    Ok(())
}

/// `R c - target`.
pub fn residual(candidate: &[f64], target: &[f64], routing: &RoutingMatrix) -> Result<Vec<f64>, CeError> {
    check_dims(candidate, target, routing)?;
    Ok(routing
        .rows()
        .iter()
        .zip(target)
        .map(|(row, &t)| row.iter().zip(candidate).map(|(r, c)| r * c).sum::<f64>() - t)
        .collect())
}

/// Inverse Euclidean norm of the link-space residual, capped.
pub fn performance(candidate: &[f64], target: &[f64], routing: &RoutingMatrix) -> Result<f64, CeError> {
    let r = residual(candidate, target, routing)?;
    let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(if norm > 0.0 { (1.0 / norm).min(SCORE_CAP) } else { SCORE_CAP })
}

/// The `ceil((1 - rho) N)`-th smallest score (1-based).
pub fn quantile_level(scores: &[f64], rho: f64) -> Result<f64, CeError> {
    if scores.is_empty() {
        return Err(CeError::NoScores);
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(CeError::Rho(rho));
    }
    let n = scores.len();
    // guard against (1 - 0.1) * 10 = 9.000000000000002
    let idx = (((1.0 - rho) * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[idx - 1])
}

/// Grid values `grid_step * m > 1`.
fn axis(k: f64, step: f64) -> Vec<f64> {
    let first = (1.0 / step).floor() as usize + 1;
    (first..)
        .map(|m| m as f64 * step)
        .take_while(|&p| p < k)
        .collect()
}

/// All grid points `(p_1 .. p_{n-1})` with `p_n = K - sum > 1`.
fn grid_points(k: f64, blocks: usize, step: f64) -> Result<Vec<Vec<f64>>, CeError> {
    let values = axis(k, step);
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(blocks);
    fn rec(
        values: &[f64],
        k: f64,
        left: usize,
        current: &mut Vec<f64>,
        out: &mut Vec<Vec<f64>>,
    ) -> Result<(), CeError> {
        let used: f64 = current.iter().sum();
        if left == 0 {
            let last = k - used;
            if last > 1.0 + 1e-12 {
                if out.len() >= MAX_GRID_POINTS {
                    return Err(CeError::GridTooLarge);
                }
                let mut p = current.clone();
                p.push(last);
                out.push(p);
            }
            return Ok(());
        }
        for &v in values {
            if used + v >= k - 1.0 {
                break;
            }
            current.push(v);
            rec(values, k, left - 1, current, out)?;
            current.pop();
        }
        Ok(())
    }
    rec(&values, k, blocks - 1, &mut current, &mut out)?;
    if out.is_empty() {
        return Err(CeError::EmptyGrid(k));
    }
    Ok(out)
}

fn lhs(rule: UpdateRule, p: f64, p_last: f64) -> f64 {
    match rule {
        UpdateRule::Digamma => digamma(p) - digamma(p_last),
        UpdateRule::LogGammaRatio => (ln_gamma(p) + ln_gamma(p_last)) / p,
    }
}

/// Elite mean of `ln B_{b,j} - ln B_{n,j}` for each block `b < n` and
/// coordinate `j` (coordinates beyond the shorter block are paired
/// cyclically).
fn elite_log_ratios(samples: &[Vec<f64>], elites: &[usize], block_sizes: &[usize]) -> Vec<Vec<f64>> {
    let offsets: Vec<usize> = block_sizes
        .iter()
        .scan(0, |acc, &m| {
            let o = *acc;
            *acc += m;
            Some(o)
        })
        .collect();
    let last = block_sizes.len() - 1;
    let m_last = block_sizes[last];
    (0..last)
        .map(|b| {
            (0..block_sizes[b])
                .map(|j| {
                    let total: f64 = elites
                        .iter()
                        .map(|&i| {
                            let s = &samples[i];
                            s[offsets[b] + j].ln() - s[offsets[last] + j % m_last].ln()
                        })
                        .sum();
                    total / elites.len() as f64
                })
                .collect()
        })
        .collect()
}

/// Grid point minimizing the squared residual of the update system.
pub fn update_parameters(
    samples: &[Vec<f64>],
    scores: &[f64],
    gamma_hat: f64,
    block_sizes: &[usize],
    k: f64,
    grid_step: f64,
    rule: UpdateRule,
) -> Result<GammaParams, CeError> {
    let blocks = block_sizes.len();
    if blocks < 2 {
        return Err(CeError::TooFewBlocks(blocks));
    }
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(CeError::GridStep(grid_step));
    }
    let elites: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= gamma_hat).collect();
    if elites.is_empty() {
        return Err(CeError::NoElites);
    }
    let rhs = elite_log_ratios(samples, &elites, block_sizes);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for point in grid_points(k, blocks, grid_step)? {
        let p_last = point[blocks - 1];
        let mut err = 0.0;
        for (b, targets) in rhs.iter().enumerate() {
            let l = lhs(rule, point[b], p_last);
            err += targets.iter().map(|t| (l - t) * (l - t)).sum::<f64>();
        }
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, point));
        }
    }
    let (_, shapes) = best.ok_or(CeError::EmptyGrid(k))?;
    GammaParams::new(shapes, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeIteration {
    pub iteration: usize,
    pub gamma_hat: f64,
    /// Shapes after this round's refit.
    pub shapes: Vec<f64>,
    pub best_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeOutcome {
    pub params: GammaParams,
    /// Best-scoring candidate over all rounds.
    pub best: Vec<f64>,
    pub best_score: f64,
    /// Link-space residual of `best`.
    pub residual: Vec<f64>,
    pub trace: Vec<CeIteration>,
}

impl CeOutcome {
    pub fn residual_inf(&self) -> f64 {
        self.residual.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

pub fn run_ce(
    target: &[f64],
    routing: &RoutingMatrix,
    block_sizes: &[usize],
    config: &CeConfig,
    seed: u64,
) -> Result<CeOutcome, CeError> {
    config.validate()?;
    if target.len() != routing.n_links() || block_sizes.iter().sum::<usize>() != routing.n_flows() {
        return Err(CeError::Dimension {
            candidate: block_sizes.iter().sum(),
            routing: routing.n_flows(),
            target: target.len(),
            links: routing.n_links(),
        });
    }
    let mut params = GammaParams::even(config.k, block_sizes.len())?;
    let mut trace: Vec<CeIteration> = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for iteration in 1..=config.max_iter {
        let samples = sample_reservations(&params, block_sizes, config.n, seed)?;
        let scores = samples
            .iter()
            .map(|c| performance(c, target, routing))
            .collect::<Result<Vec<_>, _>>()?;
        for (c, &s) in samples.iter().zip(&scores) {
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, c.clone()));
            }
        }
        let gamma_hat = quantile_level(&scores, config.rho)?;
        params = update_parameters(
            &samples,
            &scores,
            gamma_hat,
            block_sizes,
            config.k,
            config.grid_step,
            config.update,
        )?;
        trace.push(CeIteration {
            iteration,
            gamma_hat,
            shapes: params.shapes.clone(),
            best_score: best.as_ref().map_or(0.0, |b| b.0),
        });
        let stalled = trace.len() > config.d
            && trace[trace.len() - 1 - config.d..]
                .iter()
                .all(|it| it.gamma_hat == gamma_hat);
        if stalled {
            let (best_score, best) = best.unwrap_or((0.0, Vec::new()));
            let residual = residual(&best, target, routing)?;
            return Ok(CeOutcome {
                params,
                best,
                best_score,
                residual,
                trace,
            });
        }
    }
    Err(CeError::NotConverged(config.max_iter))
}

/// How a planted reservation vector is drawn for recovery experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Planting {
    /// Flow `j` of an `m`-flow block takes the `(j + 1/2) / m` quantile of
    /// its gamma law: a draw whose empirical law matches the shape.
    #[default]
    Stratified,
    /// Plain i.i.d. draw.
    Random,
}

/// Planted per-flow reservations and their link image `R B`.
pub fn planted_target(
    params: &GammaParams,
    block_sizes: &[usize],
    routing: &RoutingMatrix,
    planting: Planting,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), CeError> {
    let flows = match planting {
        Planting::Random => sample_reservations(params, block_sizes, 1, seed)?.remove(0),
        Planting::Stratified => {
            let mut v = Vec::new();
            for (&p, &m) in params.shapes.iter().zip(block_sizes) {
                let law = GammaLaw::new(p, 1.0).map_err(|_| CeError::InvalidShape(p))?;
                for j in 0..m {
                    v.push(law.inverse_cdf((j as f64 + 0.5) / m as f64));
                }
            }
            v
        }
    };
    let zero = vec![0.0; routing.n_links()];
    let target = residual(&flows, &zero, routing)?;
    Ok((flows, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_examples() {
        let scores: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(quantile_level(&scores, 0.1).unwrap(), 9.0);
        assert_eq!(quantile_level(&[2.5; 7], 0.3).unwrap(), 2.5);
        assert_eq!(quantile_level(&scores, 0.999).unwrap(), 1.0);
        assert_eq!(quantile_level(&[], 0.1), Err(CeError::NoScores));
    }

    #[test]
    fn performance_examples() {
        let r = RoutingMatrix::identity(2);
        assert_eq!(performance(&[1.0, 2.0], &[1.0, 2.0], &r).unwrap(), SCORE_CAP);
        assert_eq!(performance(&[1.0, 2.0], &[1.0, 0.0], &r).unwrap(), 0.5);
        let a = performance(&[1.0, 1.0], &[0.0, 0.0], &r).unwrap();
        let b = performance(&[3.0, 1.0], &[0.0, 0.0], &r).unwrap();
        assert!(a > b);
    }

    #[test]
    fn params_validation() {
        assert!(GammaParams::new(vec![3.0, 4.0, 23.0], 30.0).is_ok());
        assert_eq!(GammaParams::new(vec![1.0, 29.0], 30.0), Err(CeError::InvalidShape(1.0)));
        assert!(matches!(
            GammaParams::new(vec![3.0, 4.0], 8.0),
            Err(CeError::ShapeSum { .. })
        ));
    }

    #[test]
    fn sampling_is_seeded_with_matching_means() {
        let p = GammaParams::new(vec![1.0 + 1e-6, 5.0, 12.0], 18.000001).unwrap();
        let a = sample_reservations(&p, &[1, 1, 1], 100_000, 3).unwrap();
        assert_eq!(a, sample_reservations(&p, &[1, 1, 1], 100_000, 3).unwrap());
        for (b, &shape) in p.shapes.iter().enumerate() {
            let mean = a.iter().map(|v| v[b]).sum::<f64>() / a.len() as f64;
            assert!((mean - shape).abs() < 0.02 * shape, "{mean} vs {shape}");
        }
    }

    #[test]
    fn grid_respects_constraints() {
        let pts = grid_points(8.0, 3, 1.0).unwrap();
        assert!(pts.iter().all(|p| p.iter().all(|&v| v > 1.0) && (p.iter().sum::<f64>() - 8.0).abs() < 1e-12));
        // (2,2,4) (2,3,3) (2,4,2) (3,2,3) (3,3,2) (4,2,2)
        assert_eq!(pts.len(), 6);
        assert_eq!(grid_points(5.0, 3, 1.0), Err(CeError::EmptyGrid(5.0)));
    }

    #[test]
    fn swapping_blocks_swaps_shapes() {
        let samples = vec![vec![2.0, 5.0, 9.0], vec![3.0, 6.0, 11.0], vec![1.5, 4.0, 7.0]];
        let swapped: Vec<Vec<f64>> = samples.iter().map(|v| vec![v[1], v[0], v[2]]).collect();
        let scores = vec![1.0, 1.0, 1.0];
        let a = update_parameters(&samples, &scores, 1.0, &[1, 1, 1], 20.0, 1.0, UpdateRule::Digamma).unwrap();
        let b = update_parameters(&swapped, &scores, 1.0, &[1, 1, 1], 20.0, 1.0, UpdateRule::Digamma).unwrap();
        assert_eq!((a.shapes[0], a.shapes[1], a.shapes[2]), (b.shapes[1], b.shapes[0], b.shapes[2]));
    }

    #[test]
    fn digamma_update_recovers_population_shapes() {
        let truth = GammaParams::new(vec![3.0, 4.0, 23.0], 30.0).unwrap();
        let samples = sample_reservations(&truth, &[6, 6, 6], 20_000, 1).unwrap();
        let scores = vec![1.0; samples.len()];
        let p = update_parameters(&samples, &scores, 1.0, &[6, 6, 6], 30.0, 1.0, UpdateRule::Digamma)
            .unwrap();
        assert_eq!(p.shapes, vec![3.0, 4.0, 23.0]);
    }

    #[test]
    fn log_gamma_ratio_update_misses_population_shapes() {
        let truth = GammaParams::new(vec![3.0, 4.0, 63.0], 70.0).unwrap();
        let samples = sample_reservations(&truth, &[6, 6, 6], 5_000, 1).unwrap();
        let scores = vec![1.0; samples.len()];
        let p = update_parameters(
            &samples,
            &scores,
            1.0,
            &[6, 6, 6],
            70.0,
            1.0,
            UpdateRule::LogGammaRatio,
        )
        .unwrap();
        assert_ne!(p.shapes, truth.shapes);
    }

    #[test]
    fn plant_and_recover_small() {
        let routing = RoutingMatrix::identity(6);
        let truth = GammaParams::new(vec![3.0, 4.0, 13.0], 20.0).unwrap();
        let (_, target) = planted_target(&truth, &[2, 2, 2], &routing, Planting::Stratified, 0).unwrap();
        let config = CeConfig {
            k: 20.0,
            n: 2000,
            ..CeConfig::default()
        };
        let out = run_ce(&target, &routing, &[2, 2, 2], &config, 9).unwrap();
        assert!(out.iterations() <= 60);
        assert_eq!(out, run_ce(&target, &routing, &[2, 2, 2], &config, 9).unwrap());
        assert!(out.params.shapes.iter().sum::<f64>() == 20.0);
    }
}
