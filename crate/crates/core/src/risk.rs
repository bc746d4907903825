//! Empirical risk measures on finite samples.
//!
//! Conventions:
//! - `var` is the generalised inverse of the empirical cdf, i.e. the
//!   `ceil(alpha * M)`-th order statistic for a uniform sample. Sorting is
//!   total (ties broken by index).
//! - `tvar` integrates the empirical quantile function over `(alpha, 1]`, so
//!   the boundary atom receives a fractional weight. This makes
//!   `tvar = (1 / (1 - alpha)) * integral of var_u du` exact on the sample.

use std::cmp::Ordering;

use crate::error::{check_probability, Error, Result};
use crate::scalar::{compensated_sum, Real};

/// Finite collection of outcomes with optional probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T: Real> {
    values: Vec<T>,
    weights: Option<Vec<T>>,
}

impl<T: Real> Sample<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "sample",
                format!("value at index {i} is not finite"),
            ));
        }
        Ok(Self {
            values,
            weights: None,
        })
    }

    /// Weights must be nonnegative; they are normalised to sum to one.
    pub fn weighted(values: Vec<T>, weights: Vec<T>) -> Result<Self> {
        let mut s = Self::new(values)?;
        if weights.len() != s.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} values",
                weights.len(),
                s.values.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return Err(Error::invalid("weights", "must be finite and nonnegative"));
        }
        let total = compensated_sum(weights.iter().copied());
        if total <= T::zero() {
            return Err(Error::invalid("weights", "must not all be zero"));
        }
        s.weights = Some(weights.into_iter().map(|w| w / total).collect());
        Ok(s)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    fn weight(&self, i: usize) -> T {
        match &self.weights {
            Some(w) => w[i],
            None => T::one() / T::from_usize_lossy(self.values.len()),
        }
    }

    pub fn mean(&self) -> T {
        match &self.weights {
            None => crate::scalar::mean(&self.values),
            Some(w) => compensated_sum(self.values.iter().zip(w).map(|(&v, &w)| v * w)),
        }
    }

    /// Applies `f` to every value, keeping the weights.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        let values = self.values.iter().map(|&v| f(v)).collect();
        match &self.weights {
            None => Self::new(values),
            Some(w) => Self::weighted(values, w.clone()),
        }
    }

    fn sorted_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| {
            self.values[a]
                .partial_cmp(&self.values[b])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }

    /// Position (in sorted order) of the alpha-quantile and the cumulative
    /// probability mass up to and including it.
    fn quantile_position(&self, order: &[usize], alpha: T) -> (usize, T) {
        let m = order.len();
        match &self.weights {
            None => {
                let k = ceil_count(alpha, m);
                (k - 1, T::from_usize_lossy(k) / T::from_usize_lossy(m))
            }
            Some(w) => {
                let slack = T::tolerance() * T::lit(16.0);
                let mut cum = T::zero();
                for (pos, &i) in order.iter().enumerate() {
                    cum += w[i];
                    if cum >= alpha - slack {
                        return (pos, cum);
                    }
                }
                (m - 1, T::one())
            }
        }
    }
}

/// `ceil(alpha * m)` clamped to `1..=m`, treating products within rounding
/// error of an integer as that integer.
fn ceil_count<T: Real>(alpha: T, m: usize) -> usize {
    let x = alpha.as_f64() * m as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, m)
}

/// Value-at-Risk: `inf { x : P(X <= x) >= alpha }` on the empirical distribution.
pub fn var<T: Real>(sample: &Sample<T>, alpha: T) -> Result<T> {
    check_probability("alpha", alpha.as_f64())?;
    let order = sample.sorted_order();
    let (pos, _) = sample.quantile_position(&order, alpha);
    Ok(sample.values[order[pos]])
}

/// Tail Value-at-Risk with fractional weighting of the boundary atom.
pub fn tvar<T: Real>(sample: &Sample<T>, alpha: T) -> Result<T> {
    Ok(tail_summary(sample, alpha)?.tvar)
}

/// `tvar - mean`.
pub fn dtvar<T: Real>(sample: &Sample<T>, alpha: T) -> Result<T> {
    Ok(tail_summary(sample, alpha)?.dtvar)
}

/// Mean normalised Koenker-Bassett loss `(alpha / (1 - alpha)) x+ + x-`.
pub fn kb_error<T: Real>(sample: &Sample<T>, alpha: T) -> Result<T> {
    check_probability("alpha", alpha.as_f64())?;
    let k = alpha / (T::one() - alpha);
    let terms = (0..sample.len()).map(|i| {
        let x = sample.values[i];
        let l = if x > T::zero() { k * x } else { -x };
        l * sample.weight(i)
    });
    Ok(compensated_sum(terms))
}

/// The statistics reported for quantile-hedge residuals, computed with one sort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailSummary<T> {
    pub var: T,
    pub tvar: T,
    pub mean: T,
    pub dtvar: T,
    pub kb_error: T,
}

pub fn tail_summary<T: Real>(sample: &Sample<T>, alpha: T) -> Result<TailSummary<T>> {
    check_probability("alpha", alpha.as_f64())?;
    let order = sample.sorted_order();
    let (pos, cum) = sample.quantile_position(&order, alpha);
    let var = sample.values[order[pos]];
    let boundary = (cum - alpha).max(T::zero()) * var;
    let upper = compensated_sum(
        order[pos + 1..]
            .iter()
            .map(|&i| sample.values[i] * sample.weight(i)),
    );
    let tvar = (boundary + upper) / (T::one() - alpha);
    let mean = sample.mean();
    Ok(TailSummary {
        var,
        tvar,
        mean,
        dtvar: tvar - mean,
        kb_error: kb_error(sample, alpha)?,
    })
}

/// The tau-expectile: root of `tau E[(X-c)+] = (1-tau) E[(c-X)+]`.
///
/// The first-order condition is piecewise linear in `c` between order
/// statistics, so the root is located on the sorted sample and then solved
/// exactly on its segment.
pub fn expectile<T: Real>(sample: &Sample<T>, tau: T) -> Result<T> {
    check_probability("tau", tau.as_f64())?;
    let order = sample.sorted_order();
    let m = order.len();
    let xs: Vec<T> = order.iter().map(|&i| sample.values[i]).collect();
    let ws: Vec<T> = order.iter().map(|&i| sample.weight(i)).collect();
    if xs[0] == xs[m - 1] {
        return Ok(xs[0]);
    }
    let w_total = compensated_sum(ws.iter().copied());
    let b_total = compensated_sum(xs.iter().zip(&ws).map(|(&x, &w)| x * w));
    let one_m_tau = T::one() - tau;
    // below = points with index <= j
    let solve = |w_below: T, b_below: T| {
        let w_above = w_total - w_below;
        let b_above = b_total - b_below;
        (tau * b_above + one_m_tau * b_below) / (tau * w_above + one_m_tau * w_below)
    };
    let mut w_below = T::zero();
    let mut b_below = T::zero();
    let mut comp_b = T::zero();
    for j in 0..m {
        w_below += ws[j];
        let term = xs[j] * ws[j] - comp_b;
        let t = b_below + term;
        comp_b = (t - b_below) - term;
        b_below = t;
        let c = solve(w_below, b_below);
        let hi = if j + 1 < m { xs[j + 1] } else { xs[m - 1] };
        if c >= xs[j] && c <= hi {
            return Ok(c);
        }
    }
    Err(Error::NonConvergence {
        what: "expectile root search".into(),
        iterations: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(n: usize) -> Sample<f64> {
        Sample::new((1..=n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn var_of_one_to_hundred() {
        assert_eq!(var(&seq(100), 0.95).unwrap(), 95.0);
        assert_eq!(var(&seq(100), 0.951).unwrap(), 96.0);
    }

    #[test]
    fn degenerate_sample() {
        let s = Sample::new(vec![7.0f64; 13]).unwrap();
        for a in [0.01, 0.5, 0.99] {
            assert_eq!(var(&s, a).unwrap(), 7.0);
            assert!((tvar(&s, a).unwrap() - 7.0).abs() < 1e-12);
            assert!(dtvar(&s, a).unwrap().abs() < 1e-12);
        }
        assert_eq!(expectile(&s, 0.8).unwrap(), 7.0);
    }

    #[test]
    fn tvar_and_dtvar_of_one_to_hundred() {
        assert!((tvar(&seq(100), 0.95).unwrap() - 98.0).abs() < 1e-12);
        assert!((dtvar(&seq(100), 0.95).unwrap() - 47.5).abs() < 1e-12);
    }

    #[test]
    fn tvar_fractional_boundary() {
        // alpha * M = 9.5: half of the 10th order statistic enters the tail
        let s = seq(10);
        let want = (0.5 * 10.0 * 0.1) / 0.05;
        assert!((tvar(&s, 0.95).unwrap() - want).abs() < 1e-12);
        let s2 = seq(4);
        // integral over (0.6, 1]: 0.15*3 + 0.25*4 = 1.45, / 0.4
        assert!((tvar(&s2, 0.6).unwrap() - 1.45 / 0.4).abs() < 1e-12);
    }

    #[test]
    fn expectile_examples() {
        let s = Sample::new(vec![0.0f64, 1.0]).unwrap();
        let e = expectile(&s, 0.8).unwrap();
        assert!((e - 0.8).abs() < 1e-12);
        // grid search on the first-order condition
        let foc = |c: f64| 0.8 * 0.5 * (1.0 - c) - 0.2 * 0.5 * c;
        let best = (0..=10_000)
            .map(|i| i as f64 / 10_000.0)
            .min_by(|a, b| foc(*a).abs().partial_cmp(&foc(*b).abs()).unwrap())
            .unwrap();
        assert!((best - e).abs() < 1e-4);
        let xs = Sample::new(vec![3.0f64, -1.0, 4.0, 1.5, 9.0]).unwrap();
        assert!((expectile(&xs, 0.5).unwrap() - xs.mean()).abs() < 1e-12);
    }

    #[test]
    fn kb_error_negative_branch() {
        let s = Sample::new(vec![-1.0f64, -2.0]).unwrap();
        for a in [0.1, 0.9] {
            assert!((kb_error(&s, a).unwrap() - 1.5).abs() < 1e-15);
        }
    }

    #[test]
    fn kb_equals_dtvar_at_exact_zero_quantile() {
        // 0 is the 0.9-quantile of {-9..=0} u {1..} shifted; 10 points, alpha*M = 9
        let vals: Vec<f64> = (-8..=1).map(|i| i as f64 * 1.3).collect();
        let shift = var(&Sample::new(vals.clone()).unwrap(), 0.9).unwrap();
        let s = Sample::new(vals.iter().map(|v| v - shift).collect()).unwrap();
        assert_eq!(var(&s, 0.9).unwrap(), 0.0);
        let kb = kb_error(&s, 0.9).unwrap();
        let d = dtvar(&s, 0.9).unwrap();
        assert!((kb - d).abs() < 1e-12, "kb={kb} dtvar={d}");
    }

    #[test]
    fn errors() {
        assert!(matches!(Sample::<f64>::new(vec![]), Err(Error::EmptySample)));
        assert!(Sample::new(vec![1.0, f64::NAN]).is_err());
        assert!(var(&seq(3), 1.0).is_err());
        assert!(expectile(&seq(3), 0.0).is_err());
    }

    #[test]
    fn weighted_matches_replicated() {
        let w = Sample::weighted(vec![1.0f64, 2.0, 3.0], vec![1.0, 2.0, 1.0]).unwrap();
        let r = Sample::new(vec![1.0, 2.0, 2.0, 3.0]).unwrap();
        for a in [0.3, 0.5, 0.75, 0.9] {
            assert_eq!(var(&w, a).unwrap(), var(&r, a).unwrap());
            assert!((tvar(&w, a).unwrap() - tvar(&r, a).unwrap()).abs() < 1e-12);
            assert!((expectile(&w, a).unwrap() - expectile(&r, a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn f32_sample() {
        let s = Sample::new((1..=100).map(|i| i as f32).collect()).unwrap();
        assert_eq!(var(&s, 0.95f32).unwrap(), 95.0);
        assert!((tvar(&s, 0.95f32).unwrap() - 98.0).abs() < 1e-3);
    }

    fn arb_sample() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, 1..60)
    }

    proptest! {
        #[test]
        fn var_below_tvar(v in arb_sample(), a in 0.01f64..0.99) {
            let s = Sample::new(v).unwrap();
            prop_assert!(var(&s, a).unwrap() <= tvar(&s, a).unwrap() + 1e-9);
        }

        #[test]
        fn translation(v in arb_sample(), a in 0.01f64..0.99, c in -100.0f64..100.0) {
            let s = Sample::new(v).unwrap();
            let t = s.map(|x| x + c).unwrap();
            let tol = 1e-8 * (1.0 + c.abs() + 1e3);
            prop_assert!((var(&t, a).unwrap() - var(&s, a).unwrap() - c).abs() < tol);
            prop_assert!((tvar(&t, a).unwrap() - tvar(&s, a).unwrap() - c).abs() < tol);
            prop_assert!((dtvar(&t, a).unwrap() - dtvar(&s, a).unwrap()).abs() < tol);
            prop_assert!((expectile(&t, a).unwrap() - expectile(&s, a).unwrap() - c).abs() < tol);
        }

        #[test]
        fn homogeneity(v in arb_sample(), a in 0.01f64..0.99, lam in 0.01f64..50.0) {
            let s = Sample::new(v).unwrap();
            let t = s.map(|x| x * lam).unwrap();
            let tol = 1e-8 * lam * 1e3;
            prop_assert!((var(&t, a).unwrap() - lam * var(&s, a).unwrap()).abs() < tol);
            prop_assert!((tvar(&t, a).unwrap() - lam * tvar(&s, a).unwrap()).abs() < tol);
            prop_assert!((dtvar(&t, a).unwrap() - lam * dtvar(&s, a).unwrap()).abs() < tol);
            prop_assert!((expectile(&t, a).unwrap() - lam * expectile(&s, a).unwrap()).abs() < tol);
        }

        #[test]
        fn expectile_half_is_mean(v in arb_sample()) {
            let s = Sample::new(v).unwrap();
            prop_assert!((expectile(&s, 0.5).unwrap() - s.mean()).abs() < 1e-10 * 1e3);
        }

        #[test]
        fn kb_dominates_dtvar_after_centering(v in arb_sample(), a in 0.05f64..0.95) {
            let s = Sample::new(v).unwrap();
            let q = var(&s, a).unwrap();
            let c = s.map(|x| x - q).unwrap();
            let kb = kb_error(&c, a).unwrap();
            let d = dtvar(&c, a).unwrap();
            prop_assert!(kb >= d - 1e-9 * 1e3);
        }
    }
}
