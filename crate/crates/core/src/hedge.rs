//! One-period hedges of a liability sample against a panel of traded assets.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::loss::{LossKind, LossSpec};
use crate::risk::Sample;
use crate::scalar::Real;
use crate::solvers::{self, SolverOptions, MAX_CONDITION};

/// Prices today `y` (component 0 is the risk-free asset) and end-of-period
/// values `Y`, one row per scenario.
#[derive(Debug, Clone)]
pub struct AssetPanel<T: Real> {
    prices_now: Vec<T>,
    payoffs: Array2<T>,
}

impl<T: Real> AssetPanel<T> {
    pub fn new(prices_now: Vec<T>, payoffs: Array2<T>) -> Result<Self> {
        let (m, cols) = payoffs.dim();
        if prices_now.len() != cols {
            return Err(Error::DimensionMismatch(format!(
                "{} prices for {cols} payoff columns",
                prices_now.len()
            )));
        }
        if m <= cols {
            return Err(Error::DimensionMismatch(format!(
                "need more scenarios than assets, got {m} for {cols}"
            )));
        }
        if prices_now.iter().chain(payoffs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("payoffs", "must be finite"));
        }
        let zero = Array1::<T>::zeros(m);
        let (g, _) = linalg::weighted_moments(payoffs.view(), zero.view(), None);
        let cond = linalg::gram_condition(&g);
        if !(cond <= MAX_CONDITION) {
            let (_, dep) = linalg::independent_columns(&g, 1.0 / MAX_CONDITION);
            return Err(Error::RankDeficient {
                column: dep.unwrap_or(cols - 1),
                condition: cond,
            });
        }
        Ok(Self { prices_now, payoffs })
    }

    /// Risk-free asset (price 1, payoff `e^r`) followed by risky assets.
    pub fn with_riskfree(r: T, risky_now: &[T], risky_payoffs: ArrayView2<T>) -> Result<Self> {
        let (m, n) = risky_payoffs.dim();
        if risky_now.len() != n {
            return Err(Error::DimensionMismatch(format!("{} prices for {n} risky assets", risky_now.len())));
        }
        let growth = r.exp();
        let payoffs = Array2::from_shape_fn((m, n + 1), |(i, j)| if j == 0 { growth } else { risky_payoffs[[i, j - 1]] });
        let mut prices = vec![T::one()];
        prices.extend_from_slice(risky_now);
        Self::new(prices, payoffs)
    }

    pub fn prices_now(&self) -> &[T] {
        &self.prices_now
    }

    pub fn payoffs(&self) -> ArrayView2<'_, T> {
        self.payoffs.view()
    }

    pub fn n_scenarios(&self) -> usize {
        self.payoffs.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.payoffs.ncols()
    }

    /// Terminal value of a portfolio in every scenario.
    pub fn portfolio_values(&self, units: &[T]) -> Vec<T> {
        linalg::fitted(self.payoffs.view(), units)
    }

    pub fn cost(&self, units: &[T]) -> T {
        crate::scalar::compensated_sum(units.iter().zip(&self.prices_now).map(|(a, b)| *a * *b))
    }

    /// `S - units . Y` per scenario.
    pub fn residuals(&self, liability: &Sample<T>, units: &[T]) -> Result<Sample<T>> {
        self.check_len(liability)?;
        let v = self.portfolio_values(units);
        Sample::new(liability.values().iter().zip(v).map(|(s, h)| *s - h).collect())
    }

    fn check_len(&self, liability: &Sample<T>) -> Result<()> {
        if liability.len() != self.n_scenarios() {
            return Err(Error::DimensionMismatch(format!(
                "liability has {} scenarios, panel has {}",
                liability.len(),
                self.n_scenarios()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeStrategy<T> {
    pub units: Vec<T>,
    pub cost: T,
    pub loss: LossSpec<T>,
    /// Mean (unsmoothed) loss of the residual.
    pub objective: T,
    pub converged: bool,
    /// False when the optimum is not unique; `units` is then the
    /// minimum-norm optimiser.
    pub unique: bool,
}

impl<T: Real> HedgeStrategy<T> {
    fn from_fit(panel: &AssetPanel<T>, fit: solvers::LinearFit<T>, loss: LossSpec<T>) -> Self {
        let cost = panel.cost(&fit.coefficients);
        Self {
            units: fit.coefficients,
            cost,
            loss,
            objective: fit.objective,
            converged: fit.converged,
            unique: fit.unique,
        }
    }

    pub fn zero(panel: &AssetPanel<T>, loss: LossSpec<T>) -> Self {
        Self {
            units: vec![T::zero(); panel.n_assets()],
            cost: T::zero(),
            loss,
            objective: T::zero(),
            converged: true,
            unique: true,
        }
    }

    /// Componentwise sum, priced on `panel`.
    pub fn plus(&self, other: &Self, panel: &AssetPanel<T>) -> Self {
        let units: Vec<T> = self.units.iter().zip(&other.units).map(|(a, b)| *a + *b).collect();
        Self {
            cost: panel.cost(&units),
            units,
            loss: other.loss,
            objective: T::nan(),
            converged: self.converged && other.converged,
            unique: self.unique && other.unique,
        }
    }
}

fn design_target<'a, T: Real>(liability: &'a Sample<T>, panel: &AssetPanel<T>) -> Result<ndarray::ArrayView1<'a, T>> {
    panel.check_len(liability)?;
    if liability.is_weighted() {
        return Err(Error::invalid("liability", "hedges require an unweighted sample"));
    }
    Ok(ndarray::ArrayView1::from(liability.values()))
}

/// Hedge minimising the empirical mean of `loss(S - units . Y)`.
pub fn hedge<T: Real>(liability: &Sample<T>, panel: &AssetPanel<T>, loss: LossSpec<T>) -> Result<HedgeStrategy<T>> {
    hedge_with(liability, panel, loss, &SolverOptions::default())
}

pub fn hedge_with<T: Real>(
    liability: &Sample<T>,
    panel: &AssetPanel<T>,
    loss: LossSpec<T>,
    opts: &SolverOptions,
) -> Result<HedgeStrategy<T>> {
    loss.validate()?;
    let loss = loss.exact();
    let y = design_target(liability, panel)?;
    let fit = solvers::minimise(panel.payoffs(), y, &loss, None, opts)?;
    Ok(HedgeStrategy::from_fit(panel, fit, loss))
}

/// Quadratic hedge: the normal equations on empirical moments.
pub fn ols_hedge<T: Real>(liability: &Sample<T>, panel: &AssetPanel<T>) -> Result<HedgeStrategy<T>> {
    hedge(liability, panel, LossSpec::quadratic())
}

/// Koenker-Bassett hedge at level `alpha`; its residual has zero `VaR_alpha`.
pub fn quantile_hedge<T: Real>(liability: &Sample<T>, panel: &AssetPanel<T>, alpha: T) -> Result<HedgeStrategy<T>> {
    hedge(liability, panel, LossSpec::koenker_bassett(alpha)?)
}

pub fn expectile_hedge<T: Real>(liability: &Sample<T>, panel: &AssetPanel<T>, tau: T) -> Result<HedgeStrategy<T>> {
    hedge(liability, panel, LossSpec::expectile(tau)?)
}

/// Hedge of the residual `S - base . Y` under `loss`.
pub fn residual_hedge<T: Real>(
    liability: &Sample<T>,
    panel: &AssetPanel<T>,
    base: &HedgeStrategy<T>,
    loss: LossSpec<T>,
) -> Result<HedgeStrategy<T>> {
    if base.units.len() != panel.n_assets() {
        return Err(Error::DimensionMismatch(format!(
            "base strategy has {} units for {} assets",
            base.units.len(),
            panel.n_assets()
        )));
    }
    let resid = panel.residuals(liability, &base.units)?;
    if loss.kind == LossKind::Quadratic && base.loss.kind == LossKind::Quadratic {
        return Ok(HedgeStrategy::zero(panel, loss));
    }
    hedge(&resid, panel, loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{CounterRng, StreamKey};
    use crate::risk;

    fn panel(m: usize, seed: u64) -> (AssetPanel<f64>, Vec<f64>) {
        let mut rng = CounterRng::new(StreamKey::new(seed, 0, 0, 0));
        let mut y1 = Array2::zeros((m, 1));
        let mut s = Vec::with_capacity(m);
        for i in 0..m {
            let z = rng.normal();
            let v = (0.05 + 0.2 * z).exp();
            y1[[i, 0]] = v;
            s.push(10.0 * v.max(1.0) + 2.0 * rng.normal());
        }
        (AssetPanel::with_riskfree(0.01, &[1.0], y1.view()).unwrap(), s)
    }

    #[test]
    fn exact_replication_for_every_loss() {
        let (p, _) = panel(500, 1);
        let s = Sample::new(p.payoffs().column(0).mapv(|v| 5.0 * v).to_vec()).unwrap();
        for loss in [
            LossSpec::quadratic(),
            LossSpec::koenker_bassett(0.9).unwrap(),
            LossSpec::expectile(0.99).unwrap(),
        ] {
            let h = hedge(&s, &p, loss).unwrap();
            assert!((h.units[0] - 5.0).abs() < 1e-9, "{:?}", h.units);
            assert!(h.units[1].abs() < 1e-9);
            assert!(h.objective < 1e-12);
        }
    }

    #[test]
    fn ols_residual_has_zero_mean() {
        let (p, s) = panel(2000, 2);
        let s = Sample::new(s).unwrap();
        let h = ols_hedge(&s, &p).unwrap();
        let r = p.residuals(&s, &h.units).unwrap();
        assert!(r.mean().abs() < 1e-10 * 10.0);
        assert!((h.cost - (h.units[0] + h.units[1])).abs() < 1e-12 * h.cost.abs());
    }

    #[test]
    fn quantile_residual_is_var_neutral() {
        let (p, s) = panel(5000, 3);
        let s = Sample::new(s).unwrap();
        let h = quantile_hedge(&s, &p, 0.95).unwrap();
        let r = p.residuals(&s, &h.units).unwrap();
        let cov = r.values().iter().filter(|v| **v <= 1e-9).count() as f64 / 5000.0;
        assert!((cov - 0.95).abs() <= 3.0 / 5000.0 + 1e-12);
        assert!(risk::var(&r, 0.95).unwrap().abs() < 1e-8);
    }

    #[test]
    fn expectile_half_equals_ols() {
        let (p, s) = panel(3000, 4);
        let s = Sample::new(s).unwrap();
        let a = ols_hedge(&s, &p).unwrap();
        let b = expectile_hedge(&s, &p, 0.5).unwrap();
        for (x, y) in a.units.iter().zip(&b.units) {
            assert!((x - y).abs() < 1e-8 * x.abs().max(1.0));
        }
    }

    #[test]
    fn expectile_residual_statistic_is_zero() {
        let (p, s) = panel(3000, 5);
        let s = Sample::new(s).unwrap();
        let h = expectile_hedge(&s, &p, 0.99).unwrap();
        let r = p.residuals(&s, &h.units).unwrap();
        assert!(risk::expectile(&r, 0.99).unwrap().abs() < 1e-6 * 10.0);
    }

    #[test]
    fn quadratic_residual_hedge_is_zero() {
        let (p, s) = panel(1000, 6);
        let s = Sample::new(s).unwrap();
        let theta = ols_hedge(&s, &p).unwrap();
        let eta = residual_hedge(&s, &p, &theta, LossSpec::quadratic()).unwrap();
        assert!(eta.units.iter().all(|u| *u == 0.0));
    }

    #[test]
    fn decomposition_xi_equals_theta_plus_eta() {
        let (p, s) = panel(4000, 7);
        let s = Sample::new(s).unwrap();
        let theta = ols_hedge(&s, &p).unwrap();
        let kb = LossSpec::koenker_bassett(0.99).unwrap();
        let eta = residual_hedge(&s, &p, &theta, kb).unwrap();
        let xi = hedge(&s, &p, kb).unwrap();
        let sum = theta.plus(&eta, &p);
        for (a, b) in xi.units.iter().zip(&sum.units) {
            assert!((a - b).abs() < 1e-4 * 10.0, "{:?} vs {:?}", xi.units, sum.units);
        }
    }

    #[test]
    fn independent_residual_hedges_risk_free() {
        // liability independent of the risky asset
        let (p, _) = panel(20_000, 8);
        let mut rng = CounterRng::new(StreamKey::new(99, 0, 0, 0));
        let s: Vec<f64> = (0..20_000).map(|_| 100.0 + 10.0 * rng.normal()).collect();
        let s = Sample::new(s).unwrap();
        let h = ols_hedge(&s, &p).unwrap();
        let disc = (-0.01f64).exp();
        assert!((h.units[0] - s.mean() * disc).abs() < 0.5, "{:?}", h.units);
        assert!(h.units[1].abs() < 0.5);
    }

    #[test]
    fn redundant_panel_rejected() {
        let y = Array2::from_shape_fn((10, 2), |(i, j)| (i + 1) as f64 * (j + 1) as f64);
        let err = AssetPanel::with_riskfree(0.0, &[1.0, 2.0], y.view()).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { column: 2, .. }), "{err:?}");
    }

    #[test]
    fn f32_panel_hedges() {
        let y = Array2::from_shape_fn((200, 1), |(i, _)| 0.5f32 + (i % 17) as f32 * 0.05);
        let p = AssetPanel::with_riskfree(0.0f32, &[1.0], y.view()).unwrap();
        let s = Sample::new(p.payoffs().column(1).mapv(|v| 3.0 * v + 1.0).to_vec()).unwrap();
        let h = quantile_hedge(&s, &p, 0.9f32).unwrap();
        assert!((h.units[1] - 3.0).abs() < 1e-3);
    }
}
