//! M/M/1 delay, reservation-change penalty and the minimal-reservation
//! map `phi` with its closed-form inverse.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("traffic must be a finite non-negative number, got {0}")]
    NegativeTraffic(f64),
    #[error("bandwidth must be a finite non-negative number, got {0}")]
    NegativeBandwidth(f64),
    #[error("price must be strictly positive and finite, got {0}")]
    InvalidPrice(f64),
    #[error("link saturated: traffic {x} with reserved bandwidth {b}")]
    Saturation { x: f64, b: f64 },
    #[error("discount factor must lie in [0, 1), got {0}")]
    InvalidDiscount(f64),
    #[error("headroom must be finite and non-negative, got {0}")]
    InvalidHeadroom(f64),
    #[error("vector lengths disagree: {now} current entries, {prev} previous, {prices} prices")]
    Dimension { now: usize, prev: usize, prices: usize },
}

/// Which closed form of the minimal reservation is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiForm {
    /// `x + sqrt(2x) / (2p)`.
    #[default]
    Standard,
    /// `x + sqrt(x / p)`, the stationary point of `x/(B-x) + pB`.
    Variational,
}

impl PhiForm {
    /// Coefficient `c` in `phi(x) = x + c * sqrt(x)`.
    fn root_coefficient(self, price: f64) -> f64 {
        match self {
            PhiForm::Standard => std::f64::consts::SQRT_2 / (2.0 * price),
            PhiForm::Variational => 1.0 / price.sqrt(),
        }
    }

    pub fn phi(self, x: f64, price: f64) -> Result<f64, CostError> {
        check_price(price)?;
        if !(x >= 0.0 && x.is_finite()) {
            return Err(CostError::NegativeTraffic(x));
        }
        Ok(x + self.root_coefficient(price) * x.sqrt())
    }

    /// Solves `u^2 + c u = b` for `u = sqrt(x) >= 0`.
    pub fn phi_inverse(self, b: f64, price: f64) -> Result<f64, CostError> {
        check_price(price)?;
        if !(b >= 0.0 && b.is_finite()) {
            return Err(CostError::NegativeBandwidth(b));
        }
        let c = self.root_coefficient(price);
        // rationalized root, stable for small b
        let u = 2.0 * b / (c + (c * c + 4.0 * b).sqrt());
        Ok(u * u)
    }
}

fn check_price(price: f64) -> Result<(), CostError> {
    if price.is_finite() && price > 0.0 {
        Ok(())
    } else {
        Err(CostError::InvalidPrice(price))
    }
}

/// Minimal reservation under the default form.
pub fn phi(x: f64, price: f64) -> Result<f64, CostError> {
    PhiForm::Standard.phi(x, price)
}

pub fn phi_inverse(b: f64, price: f64) -> Result<f64, CostError> {
    PhiForm::Standard.phi_inverse(b, price)
}

/// Mean M/M/1 delay `x / (b - x)`; an idle link costs nothing.
pub fn link_delay(x: f64, b: f64) -> Result<f64, CostError> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(CostError::NegativeTraffic(x));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if b <= x {
        return Err(CostError::Saturation { x, b });
    }
    Ok(x / (b - x))
}

/// Delay at `x_now` plus the price of moving the reservation from
/// `phi(x_prev)` to `phi(x_now)`.
pub fn flow_cost(x_now: f64, x_prev: f64, price: f64, form: PhiForm) -> Result<f64, CostError> {
    let b_now = form.phi(x_now, price)?;
    let b_prev = form.phi(x_prev, price)?;
    Ok(link_delay(x_now, b_now)? + price * (b_now - b_prev))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    /// Per directed flow, in canonical flow order.
    pub flow: Vec<f64>,
    /// Per MPLS link.
    pub link: Vec<f64>,
    pub beta: f64,
    pub lambda_headroom: f64,
    pub phi_form: PhiForm,
}

impl PriceTable {
    pub fn new(
        flow: Vec<f64>,
        link: Vec<f64>,
        beta: f64,
        lambda_headroom: f64,
        phi_form: PhiForm,
    ) -> Result<Self, CostError> {
        for &p in flow.iter().chain(&link) {
            check_price(p)?;
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(CostError::InvalidDiscount(beta));
        }
        if !(lambda_headroom.is_finite() && lambda_headroom >= 0.0) {
            return Err(CostError::InvalidHeadroom(lambda_headroom));
        }
        Ok(PriceTable {
            flow,
            link,
            beta,
            lambda_headroom,
            phi_form,
        })
    }

    /// Uniform prices, no links, no headroom.
    pub fn uniform(n_flows: usize, price: f64, beta: f64) -> Result<Self, CostError> {
        PriceTable::new(vec![price; n_flows], Vec::new(), beta, 0.0, PhiForm::Standard)
    }
}

fn summed_cost(now: &[f64], prev: &[f64], prices: &[f64], form: PhiForm) -> Result<f64, CostError> {
    if now.len() != prev.len() || now.len() != prices.len() {
        return Err(CostError::Dimension {
            now: now.len(),
            prev: prev.len(),
            prices: prices.len(),
        });
    }
    now.iter()
        .zip(prev)
        .zip(prices)
        .map(|((&x, &xp), &p)| flow_cost(x, xp, p, form))
        .sum()
}

/// Stage cost of one VPN. Both vectors list every flow (both hose
/// components of every site) in canonical order.
pub fn vpn_stage_cost(x_now: &[f64], x_prev: &[f64], prices: &PriceTable) -> Result<f64, CostError> {
    summed_cost(x_now, x_prev, &prices.flow, prices.phi_form)
}

/// Stage cost of the MPLS core, over per-link loads.
pub fn link_stage_cost(l_now: &[f64], l_prev: &[f64], prices: &PriceTable) -> Result<f64, CostError> {
    summed_cost(l_now, l_prev, &prices.link, prices.phi_form)
}
