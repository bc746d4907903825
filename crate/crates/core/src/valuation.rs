//! One-period fair values: the cost-of-capital premium, the quadratic hedge
//! plus a capital charge on the residual VaR, and the two-step valuation
//! `theta . y + i eta . y`.

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::hedge::{self, AssetPanel, HedgeStrategy};
use crate::loss::{LossKind, LossSpec};
use crate::risk::{self, Sample};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuationParams {
    pub coc_rate: f64,
    pub alpha: f64,
    #[serde(default)]
    pub tau: Option<f64>,
    pub r: f64,
}

impl ValuationParams {
    pub fn new(coc_rate: f64, alpha: f64, r: f64) -> Self {
        Self {
            coc_rate,
            alpha,
            tau: None,
            r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("valuation.coc_rate", self.coc_rate)?;
        check_probability("valuation.alpha", self.alpha)?;
        if let Some(t) = self.tau {
            check_probability("valuation.tau", t)?;
        }
        crate::error::check_finite("valuation.r", self.r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairValue<T> {
    pub value: T,
    pub hedge_cost: T,
    pub capital_cost: T,
    pub theta: HedgeStrategy<T>,
    pub eta: HedgeStrategy<T>,
}

impl<T: Real> FairValue<T> {
    fn assemble(theta: HedgeStrategy<T>, eta: HedgeStrategy<T>, i: T) -> Self {
        let hedge_cost = theta.cost;
        let capital_cost = i * eta.cost;
        Self {
            value: hedge_cost + capital_cost,
            hedge_cost,
            capital_cost,
            theta,
            eta,
        }
    }
}

/// Cost-of-capital premium `e^{-r} E[S] + e^{-r} i (VaR_alpha(S) - E[S])`.
///
/// Meant for liabilities independent of traded assets.
pub fn coc_premium<T: Real>(liability: &Sample<T>, params: &ValuationParams) -> Result<T> {
    params.validate()?;
    let disc = T::lit((-params.r).exp());
    let mean = liability.mean();
    let v = risk::var(liability, T::lit(params.alpha))?;
    Ok(disc * mean + disc * T::lit(params.coc_rate) * (v - mean))
}

/// Risk-free position worth `amount` at the end of the period.
pub fn riskfree_buffer<T: Real>(panel: &AssetPanel<T>, amount: T) -> Result<HedgeStrategy<T>> {
    let col = panel.payoffs().column(0).to_vec();
    let y0 = col[0];
    if col.iter().any(|v| *v != y0) || y0 <= T::zero() {
        return Err(Error::invalid("panel", "asset 0 must have a constant positive payoff"));
    }
    let mut units = vec![T::zero(); panel.n_assets()];
    units[0] = amount / y0;
    let loss = LossSpec {
        kind: LossKind::KoenkerBassett,
        level: T::lit(0.5),
        smoothing: T::zero(),
    };
    Ok(HedgeStrategy {
        cost: panel.cost(&units),
        units,
        loss,
        objective: T::nan(),
        converged: true,
        unique: true,
    })
}

/// Quadratic hedge plus capital cost on the residual VaR held risk-free.
pub fn phi_valuation<T: Real>(liability: &Sample<T>, panel: &AssetPanel<T>, params: &ValuationParams) -> Result<FairValue<T>> {
    params.validate()?;
    let theta = hedge::ols_hedge(liability, panel)?;
    let resid = panel.residuals(liability, &theta.units)?;
    let alpha = T::lit(params.alpha);
    let mut buffer = riskfree_buffer(panel, risk::var(&resid, alpha)?)?;
    buffer.loss.level = alpha;
    Ok(FairValue::assemble(theta, buffer, T::lit(params.coc_rate)))
}

/// `theta . y + i eta . y` with `eta` hedging the quadratic residual under
/// `second_loss` (Koenker-Bassett or expectile).
pub fn two_step_valuation<T: Real>(
    liability: &Sample<T>,
    panel: &AssetPanel<T>,
    params: &ValuationParams,
    second_loss: LossSpec<T>,
) -> Result<FairValue<T>> {
    params.validate()?;
    if second_loss.kind == LossKind::Quadratic {
        return Err(Error::invalid("second_loss", "must be koenker_bassett or expectile"));
    }
    let theta = hedge::ols_hedge(liability, panel)?;
    let eta = hedge::residual_hedge(liability, panel, &theta, second_loss)?;
    Ok(FairValue::assemble(theta, eta, T::lit(params.coc_rate)))
}

/// Mean-quantile valuation at the params' alpha.
pub fn mean_quantile_valuation<T: Real>(liability: &Sample<T>, panel: &AssetPanel<T>, params: &ValuationParams) -> Result<FairValue<T>> {
    two_step_valuation(liability, panel, params, LossSpec::koenker_bassett(T::lit(params.alpha))?)
}
