//! Multi-period valuation by backward recursion.
//!
//! For `t = T-1, ..., 0`, with `rho_T = S`:
//!
//! ```text
//! g = argmin mean (rho_{t+1} - g(Z(t)) . Y(t+1))^2          theta(t+1) = g(Z(t))
//! h = argmin mean loss_alpha(rho_{t+1} - h(Z(t)) . Y(t+1))  xi(t+1)    = h(Z(t))
//! rho_t = theta(t+1) . Y(t) + i (xi(t+1) - theta(t+1)) . Y(t)
//! ```
//!
//! pathwise. Strategies are in units of each asset. At `t = 0` every path
//! shares `Z(0)`, so the fitted strategies are averaged into one vector.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::regressor::{self, FittedRegressor, RegressorSpec, StatePanel};
use crate::risk::{self, Sample};
use crate::scalar::{compensated_sum, scale_of, Real};
use crate::scenario::{GaussianPaths, ScenarioSet};
use crate::valuation::ValuationParams;

/// State and asset prices on the grid `0, ..., T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPanel<T: Real> {
    /// `features[t]`: `Z(t)`, one row per path.
    pub features: Vec<Array2<T>>,
    /// `prices[t]`: `Y(t)`, one row per path.
    pub prices: Vec<Array2<T>>,
}

impl<T: Real> PathPanel<T> {
    pub fn new(features: Vec<Array2<T>>, prices: Vec<Array2<T>>) -> Result<Self> {
        if features.len() < 2 || features.len() != prices.len() {
            return Err(Error::DimensionMismatch(format!(
                "need matching grids of at least two dates, got {} feature and {} price dates",
                features.len(),
                prices.len()
            )));
        }
        let m = features[0].nrows();
        let (nf, na) = (features[0].ncols(), prices[0].ncols());
        for (t, (f, p)) in features.iter().zip(&prices).enumerate() {
            if f.nrows() != m || p.nrows() != m || f.ncols() != nf || p.ncols() != na {
                return Err(Error::DimensionMismatch(format!("date {t} has inconsistent shape")));
            }
        }
        Ok(Self { features, prices })
    }

    /// State `(Y1(t), N(t))`, assets `(e^{rt}, Y1(t))`.
    pub fn from_scenarios(s: &ScenarioSet<T>) -> Result<Self> {
        let m = s.n_paths();
        let mut features = Vec::new();
        let mut prices = Vec::new();
        for t in 0..=s.horizon() {
            features.push(Array2::from_shape_fn((m, 2), |(p, j)| {
                if j == 0 {
                    s.asset_prices[[p, t]]
                } else {
                    T::from_usize_lossy(s.survivors[[p, t]] as usize)
                }
            }));
            prices.push(Array2::from_shape_fn((m, 2), |(p, j)| {
                if j == 0 {
                    s.riskfree_prices[t]
                } else {
                    s.asset_prices[[p, t]]
                }
            }));
        }
        Self::new(features, prices)
    }

    /// State `(Y1(t), s0 + S_1 + ... + S_t)`, assets `(1, Y1(t))`.
    pub fn from_gaussian(g: &GaussianPaths<T>) -> Result<Self> {
        let (m, dates) = g.y1.dim();
        let mut features = Vec::new();
        let mut prices = Vec::new();
        for t in 0..dates {
            features.push(Array2::from_shape_fn((m, 2), |(p, j)| if j == 0 { g.y1[[p, t]] } else { g.cumulative[[p, t]] }));
            prices.push(Array2::from_shape_fn((m, 2), |(p, j)| if j == 0 { T::one() } else { g.y1[[p, t]] }));
        }
        Self::new(features, prices)
    }

    pub fn horizon(&self) -> usize {
        self.features.len() - 1
    }

    pub fn n_paths(&self) -> usize {
        self.features[0].nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.prices[0].ncols()
    }
}

fn dot_rows<T: Real>(units: ArrayView2<T>, prices: ArrayView2<T>) -> Vec<T> {
    units.outer_iter().zip(prices.outer_iter()).map(|(u, p)| u.iter().zip(p.iter()).fold(T::zero(), |a, (x, y)| a + *x * *y)).collect()
}

/// Fits and values for one period `(t, t+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodFit<T> {
    pub t: usize,
    /// `theta(t+1)` per path.
    pub theta: Array2<T>,
    /// `xi(t+1)` per path.
    pub xi: Array2<T>,
    /// `rho_t` per path.
    pub values: Vec<T>,
    /// `rho_{t+1} - xi(t+1) . Y(t+1)` per path.
    pub residuals: Vec<T>,
    pub quadratic: FittedRegressor<T>,
    pub quantile: FittedRegressor<T>,
    /// Largest deviation from the averaged time-0 strategy.
    pub spread: Option<T>,
    pub warnings: Vec<String>,
}

fn period_err(t: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Period {
        period: t,
        source: Box::new(e),
    }
}

/// Loss of the second step: Koenker-Bassett at `alpha`, or the expectile
/// loss when `tau` is set.
pub fn second_loss<T: Real>(params: &ValuationParams) -> Result<LossSpec<T>> {
    match params.tau {
        Some(tau) => LossSpec::expectile(T::lit(tau)),
        None => LossSpec::koenker_bassett(T::lit(params.alpha)),
    }
}

/// One backward step from the targets `rho_{t+1}`.
///
/// Random streams depend only on the spec seed and `t`, so running a period
/// on its own reproduces the same step of a full recursion bit for bit.
pub fn valuate_period<T: Real>(
    panel: &PathPanel<T>,
    t: usize,
    targets: &[T],
    params: &ValuationParams,
    spec: &RegressorSpec,
) -> Result<PeriodFit<T>> {
    params.validate()?;
    if t >= panel.horizon() {
        return Err(Error::invalid("t", format!("must be below the horizon {}", panel.horizon())));
    }
    let m = panel.n_paths();
    let sp = StatePanel::new(panel.features[t].clone(), panel.prices[t + 1].clone(), panel.prices[t].clone(), targets.to_vec())
        .map_err(period_err(t))?;
    let g = regressor::fit(spec, &sp, &LossSpec::quadratic(), 2 * t as u64).map_err(period_err(t))?;
    let h = regressor::fit(spec, &sp, &second_loss(params)?, 2 * t as u64 + 1).map_err(period_err(t))?;
    let mut theta = g.predict_batch(sp.features.view())?;
    let mut xi = h.predict_batch(sp.features.view())?;
    let mut warnings: Vec<String> = g.warnings.iter().chain(&h.warnings).map(|w| format!("period {t}: {w}")).collect();
    let mut spread = None;
    if t == 0 {
        let first = sp.features.row(0);
        if sp.features.outer_iter().all(|r| r == first) {
            let mut worst = T::zero();
            for units in [&mut theta, &mut xi] {
                for j in 0..units.ncols() {
                    let col = units.column(j).to_vec();
                    let avg = compensated_sum(col.iter().copied()) / T::from_usize_lossy(m);
                    let dev = col.iter().fold(T::zero(), |a, v| a.max((*v - avg).abs()));
                    let scale = scale_of(&col).max(T::one());
                    if dev > T::lit(1e-6) * scale {
                        warnings.push(format!("period 0: strategy column {j} spreads by {} across paths", dev.as_f64()));
                    }
                    worst = worst.max(dev);
                    units.column_mut(j).fill(avg);
                }
            }
            spread = Some(worst);
        } else {
            warnings.push("period 0: initial state differs across paths; strategies not collapsed".into());
        }
    }
    let i = T::lit(params.coc_rate);
    let hedge_now = dot_rows(theta.view(), panel.prices[t].view());
    let full_now = dot_rows(xi.view(), panel.prices[t].view());
    let values: Vec<T> = hedge_now.iter().zip(&full_now).map(|(a, b)| *a + i * (*b - *a)).collect();
    let full_next = dot_rows(xi.view(), panel.prices[t + 1].view());
    let residuals = targets.iter().zip(&full_next).map(|(s, h)| *s - *h).collect();
    Ok(PeriodFit {
        t,
        theta,
        xi,
        values,
        residuals,
        quadratic: g,
        quantile: h,
        spread,
        warnings,
    })
}

/// Result of the full recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuationPath<T> {
    /// `M x (T+1)`; column `T` is the liability.
    pub fair_values: Array2<T>,
    /// `periods[t]` covers `(t, t+1]`.
    pub periods: Vec<PeriodFit<T>>,
    pub params: ValuationParams,
}

impl<T: Real> ValuationPath<T> {
    pub fn horizon(&self) -> usize {
        self.periods.len()
    }

    /// Time-0 value (identical on all paths when the initial state is shared).
    pub fn value_at_zero(&self) -> T {
        let col = self.fair_values.column(0).to_vec();
        compensated_sum(col.iter().copied()) / T::from_usize_lossy(col.len())
    }

    pub fn warnings(&self) -> Vec<String> {
        self.periods.iter().flat_map(|p| p.warnings.iter().cloned()).collect()
    }

    /// `xi(t+1) - theta(t+1)` per path.
    pub fn eta(&self, t: usize) -> Array2<T> {
        &self.periods[t].xi - &self.periods[t].theta
    }
}

pub fn backward_valuate<T: Real>(
    panel: &PathPanel<T>,
    liability: &[T],
    params: &ValuationParams,
    spec: &RegressorSpec,
) -> Result<ValuationPath<T>> {
    let m = panel.n_paths();
    if liability.len() != m {
        return Err(Error::DimensionMismatch(format!("{} liability values for {m} paths", liability.len())));
    }
    if liability.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("liability", "values must be finite"));
    }
    let horizon = panel.horizon();
    let mut fair_values = Array2::zeros((m, horizon + 1));
    fair_values.column_mut(horizon).assign(&ndarray::ArrayView1::from(liability));
    let mut periods = Vec::with_capacity(horizon);
    let mut targets = liability.to_vec();
    for t in (0..horizon).rev() {
        let fit = valuate_period(panel, t, &targets, params, spec)?;
        fair_values.column_mut(t).assign(&ndarray::ArrayView1::from(&fit.values[..]));
        targets = fit.values.clone();
        periods.push(fit);
    }
    periods.reverse();
    Ok(ValuationPath {
        fair_values,
        periods,
        params: *params,
    })
}

/// Rebalancing costs `RB(t) = xi(t+1) . Y(t) - xi(t) . Y(t)` for `t = 1..T-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rebalancing<T> {
    /// `M x (T-1)`, column `t-1` holds `RB(t)`.
    pub costs: Array2<T>,
    /// `sum_t e^{-rt} RB(t)` per path.
    pub total: Vec<T>,
    /// Capital cannot be raised: `eta(t+1) . Y(t) (1 - i) < RB(t)`.
    pub breach: Array2<bool>,
    /// Per period, the fraction of paths without breach.
    pub coverage: Vec<f64>,
}

pub fn rebalancing_costs<T: Real>(path: &ValuationPath<T>, panel: &PathPanel<T>, r: f64) -> Rebalancing<T> {
    let m = panel.n_paths();
    let horizon = path.horizon();
    let periods = horizon.saturating_sub(1);
    let mut costs = Array2::zeros((m, periods));
    let mut breach = Array2::from_elem((m, periods), false);
    let mut total = vec![T::zero(); m];
    let mut coverage = Vec::with_capacity(periods);
    let keep = T::one() - T::lit(path.params.coc_rate);
    for t in 1..horizon {
        let y = panel.prices[t].view();
        let new = dot_rows(path.periods[t].xi.view(), y);
        let old = dot_rows(path.periods[t - 1].xi.view(), y);
        let capital = dot_rows(path.eta(t).view(), y);
        let disc = T::lit((-r * t as f64).exp());
        let mut ok = 0usize;
        for p in 0..m {
            let rb = new[p] - old[p];
            costs[[p, t - 1]] = rb;
            total[p] += disc * rb;
            let b = capital[p] * keep < rb;
            breach[[p, t - 1]] = b;
            ok += usize::from(!b);
        }
        coverage.push(ok as f64 / m as f64);
    }
    Rebalancing {
        costs,
        total,
        breach,
        coverage,
    }
}

/// Pooled residual statistics for the period ending at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodDiagnostics<T> {
    pub time: usize,
    pub var: T,
    pub kb_error: T,
    pub dtvar: T,
    pub mean: T,
}

pub fn constraint_report<T: Real>(path: &ValuationPath<T>, alpha: f64) -> Result<Vec<PeriodDiagnostics<T>>> {
    path.periods
        .iter()
        .map(|p| {
            let s = risk::tail_summary(&Sample::new(p.residuals.clone())?, T::lit(alpha))?;
            Ok(PeriodDiagnostics {
                time: p.t + 1,
                var: s.var,
                kb_error: s.kb_error,
                dtvar: s.dtvar,
                mean: s.mean,
            })
        })
        .collect()
}

/// Residual VaR within equal-count buckets of the first state variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketDiagnostics<T> {
    pub time: usize,
    pub bucket: usize,
    pub state_low: T,
    pub state_high: T,
    pub var: T,
    pub coverage: f64,
}

pub fn conditional_report<T: Real>(
    path: &ValuationPath<T>,
    panel: &PathPanel<T>,
    alpha: f64,
    buckets: usize,
) -> Result<Vec<BucketDiagnostics<T>>> {
    if buckets == 0 {
        return Err(Error::invalid("buckets", "must be positive"));
    }
    let m = panel.n_paths();
    let mut out = Vec::new();
    for p in &path.periods {
        let z = panel.features[p.t].column(0).to_vec();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|a, b| z[*a].partial_cmp(&z[*b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(b)));
        for b in 0..buckets {
            let idx = &order[b * m / buckets..(b + 1) * m / buckets];
            if idx.is_empty() {
                continue;
            }
            let res: Vec<T> = idx.iter().map(|&i| p.residuals[i]).collect();
            let covered = res.iter().filter(|r| **r <= T::zero()).count();
            out.push(BucketDiagnostics {
                time: p.t + 1,
                bucket: b,
                state_low: z[idx[0]],
                state_high: z[idx[idx.len() - 1]],
                var: risk::var(&Sample::new(res)?, T::lit(alpha))?,
                coverage: covered as f64 / idx.len() as f64,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hedge::AssetPanel;
    use crate::scenario::{simulate_gaussian, GaussianModel};
    use crate::valuation;

    fn gaussian(m: usize, seed: u64) -> (PathPanel<f64>, Vec<f64>, GaussianModel) {
        let model = GaussianModel {
            s0: 100.0,
            gamma: vec![10.0, 10.0],
            corr: 0.5,
            kappa: 0.1,
            sigma_r: 0.1,
            y1_0: 1.0,
        };
        let g = simulate_gaussian(&model, m, seed).unwrap();
        let liability = g.cumulative.column(model.horizon()).to_vec();
        (PathPanel::from_gaussian(&g).unwrap(), liability, model)
    }

    fn gaussian_basis() -> RegressorSpec {
        RegressorSpec::Linear {
            basis: Some(vec![vec![0, 0], vec![0, 1], vec![-1, 0]]),
        }
    }

    #[test]
    fn single_period_matches_one_period_valuation() {
        let (panel, _, _) = gaussian(3000, 1);
        let short = PathPanel::new(panel.features[..2].to_vec(), panel.prices[..2].to_vec()).unwrap();
        let s: Vec<f64> = (0..3000).map(|p| 100.0 + 40.0 * (short.prices[1][[p, 1]] - 1.0).powi(2) + short.features[1][[p, 1]]).collect();
        let params = ValuationParams::new(0.06, 0.95, 0.0);
        let path = backward_valuate(&short, &s, &params, &RegressorSpec::linear()).unwrap();
        let assets = AssetPanel::new(vec![1.0, 1.0], short.prices[1].clone()).unwrap();
        let one = valuation::mean_quantile_valuation(&Sample::new(s).unwrap(), &assets, &params).unwrap();
        assert!((path.value_at_zero() - one.value).abs() < 1e-8 * one.value);
        assert_eq!(path.periods[0].spread.map(|s| s < 1e-9), Some(true));
    }

    #[test]
    fn fair_values_follow_the_recursion() {
        let (panel, s, _) = gaussian(2000, 2);
        let params = ValuationParams::new(0.06, 0.95, 0.0);
        let path = backward_valuate(&panel, &s, &params, &gaussian_basis()).unwrap();
        for p in &path.periods {
            let y = panel.prices[p.t].view();
            let th = dot_rows(p.theta.view(), y);
            let xi = dot_rows(p.xi.view(), y);
            for i in 0..2000 {
                let expect = th[i] + 0.06 * (xi[i] - th[i]);
                assert!((path.fair_values[[i, p.t]] - expect).abs() <= 1e-10 * expect.abs());
            }
        }
        assert_eq!(path.fair_values.column(2).to_vec(), s);
    }

    #[test]
    fn staged_period_is_bitwise_identical() {
        let (panel, s, _) = gaussian(1500, 3);
        let params = ValuationParams::new(0.06, 0.95, 0.0);
        let spec = gaussian_basis();
        let path = backward_valuate(&panel, &s, &params, &spec).unwrap();
        let targets = path.fair_values.column(1).to_vec();
        let staged = valuate_period(&panel, 0, &targets, &params, &spec).unwrap();
        assert_eq!(staged.values, path.periods[0].values);
        assert_eq!(staged.xi, path.periods[0].xi);
    }

    #[test]
    fn breach_flags_match_positive_residuals() {
        let (panel, s, _) = gaussian(2000, 4);
        let params = ValuationParams::new(0.06, 0.9, 0.0);
        let path = backward_valuate(&panel, &s, &params, &gaussian_basis()).unwrap();
        let rb = rebalancing_costs(&path, &panel, 0.0);
        assert_eq!(rb.costs.ncols(), 1);
        let res = &path.periods[0].residuals;
        let mut disagree = 0;
        for p in 0..2000 {
            if rb.breach[[p, 0]] != (res[p] > 0.0) && res[p].abs() > 1e-9 {
                disagree += 1;
            }
        }
        assert_eq!(disagree, 0);
        assert!((rb.coverage[0] - 0.9).abs() < 0.005, "{}", rb.coverage[0]);
    }

    #[test]
    fn replicable_liability_has_no_rebalancing_or_residual() {
        let (panel, _, _) = gaussian(500, 5);
        // 3 units of the riskless asset and 50 of the risky one, held throughout
        let s: Vec<f64> = (0..500).map(|p| 3.0 + 50.0 * panel.prices[2][[p, 1]]).collect();
        let params = ValuationParams::new(0.06, 0.95, 0.0);
        let path = backward_valuate(&panel, &s, &params, &RegressorSpec::linear()).unwrap();
        assert!((path.value_at_zero() - 53.0).abs() < 1e-8);
        let rb = rebalancing_costs(&path, &panel, 0.0);
        assert!(rb.costs.iter().all(|c| c.abs() < 1e-8));
        for d in constraint_report(&path, 0.95).unwrap() {
            assert!(d.var.abs() < 1e-8 && d.kb_error.abs() < 1e-8 && d.dtvar.abs() < 1e-8);
        }
    }

    #[test]
    fn linear_var_neutral_within_coverage_slack() {
        let (panel, s, _) = gaussian(4000, 6);
        let params = ValuationParams::new(0.06, 0.95, 0.0);
        let path = backward_valuate(&panel, &s, &params, &gaussian_basis()).unwrap();
        for p in &path.periods {
            let below = p.residuals.iter().filter(|r| **r <= 1e-9).count() as f64 / 4000.0;
            // six design columns are interpolated at the optimum
            let slack = 6.0 / 4000.0;
            assert!(below >= 0.95 - 1e-12 && below <= 0.95 + slack, "{below}");
        }
        let buckets = conditional_report(&path, &panel, 0.95, 10).unwrap();
        assert_eq!(buckets.len(), 20);
    }

    #[test]
    fn wrong_liability_length_rejected() {
        let (panel, s, _) = gaussian(100, 7);
        let params = ValuationParams::new(0.06, 0.95, 0.0);
        assert!(backward_valuate(&panel, &s[..50], &params, &RegressorSpec::linear()).is_err());
    }
}
