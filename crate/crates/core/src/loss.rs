//! Hedging losses and their subgradients.

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Quadratic,
    KoenkerBassett,
    Expectile,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Quadratic => "quadratic",
            LossKind::KoenkerBassett => "koenker_bassett",
            LossKind::Expectile => "expectile",
        }
    }
}

/// A convex loss with `loss(x) = 0` iff `x = 0` (for zero smoothing).
///
/// `level` is alpha for Koenker-Bassett and tau for the expectile loss; it
/// is ignored for the quadratic loss. `smoothing` replaces the Koenker-Bassett
/// kink on `|x| < smoothing` by the quadratic matching value and slope at both
/// ends of the band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec<T> {
    pub kind: LossKind,
    pub level: T,
    pub smoothing: T,
}

impl<T: Real> LossSpec<T> {
    pub fn quadratic() -> Self {
        Self {
            kind: LossKind::Quadratic,
            level: T::lit(0.5),
            smoothing: T::zero(),
        }
    }

    pub fn koenker_bassett(alpha: T) -> Result<Self> {
        check_probability("alpha", alpha.as_f64())?;
        Ok(Self {
            kind: LossKind::KoenkerBassett,
            level: alpha,
            smoothing: T::zero(),
        })
    }

    pub fn expectile(tau: T) -> Result<Self> {
        check_probability("tau", tau.as_f64())?;
        Ok(Self {
            kind: LossKind::Expectile,
            level: tau,
            smoothing: T::zero(),
        })
    }

    pub fn with_smoothing(mut self, eps: T) -> Result<Self> {
        if !(eps >= T::zero()) || !eps.is_finite() {
            return Err(Error::invalid("smoothing", "must be finite and nonnegative"));
        }
        self.smoothing = eps;
        Ok(self)
    }

    /// Same loss with the kink restored.
    pub fn exact(self) -> Self {
        Self {
            smoothing: T::zero(),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != LossKind::Quadratic {
            check_probability("level", self.level.as_f64())?;
        }
        if !(self.smoothing >= T::zero()) {
            return Err(Error::invalid("smoothing", "must be nonnegative"));
        }
        Ok(())
    }

    /// Slope of the Koenker-Bassett loss on the positive side, `alpha / (1 - alpha)`.
    pub fn kb_slope(&self) -> T {
        self.level / (T::one() - self.level)
    }

    pub fn eval(&self, x: T) -> T {
        match self.kind {
            LossKind::Quadratic => x * x,
            LossKind::Expectile => {
                if x > T::zero() {
                    self.level * x * x
                } else {
                    (T::one() - self.level) * x * x
                }
            }
            LossKind::KoenkerBassett => {
                let k = self.kb_slope();
                let eps = self.smoothing;
                if eps > T::zero() && x.abs() < eps {
                    let (a, b, c) = huber_coefficients(k, eps);
                    a * x * x + b * x + c
                } else if x > T::zero() {
                    k * x
                } else {
                    -x
                }
            }
        }
    }

    /// An element of the subdifferential; zero at the Koenker-Bassett kink.
    pub fn subgradient(&self, x: T) -> T {
        let two = T::lit(2.0);
        match self.kind {
            LossKind::Quadratic => two * x,
            LossKind::Expectile => {
                if x > T::zero() {
                    two * self.level * x
                } else {
                    two * (T::one() - self.level) * x
                }
            }
            LossKind::KoenkerBassett => {
                let k = self.kb_slope();
                let eps = self.smoothing;
                if eps > T::zero() && x.abs() < eps {
                    let (a, b, _) = huber_coefficients(k, eps);
                    two * a * x + b
                } else if x > T::zero() {
                    k
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Second derivative where it exists (used for Newton-type steps).
    pub fn curvature(&self, x: T) -> T {
        let two = T::lit(2.0);
        match self.kind {
            LossKind::Quadratic => two,
            LossKind::Expectile => {
                if x > T::zero() {
                    two * self.level
                } else {
                    two * (T::one() - self.level)
                }
            }
            LossKind::KoenkerBassett => {
                let eps = self.smoothing;
                if eps > T::zero() && x.abs() < eps {
                    two * huber_coefficients(self.kb_slope(), eps).0
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Quadratic `a x^2 + b x + c` joining `-x` and `k x` with matching value and
/// slope at `x = -eps` and `x = eps`.
fn huber_coefficients<T: Real>(k: T, eps: T) -> (T, T, T) {
    let four = T::lit(4.0);
    let a = (k + T::one()) / (four * eps);
    let b = (k - T::one()) / T::lit(2.0);
    let c = eps * (k + T::one()) / four;
    (a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{CounterRng, StreamKey};

    fn specs() -> Vec<LossSpec<f64>> {
        vec![
            LossSpec::quadratic(),
            LossSpec::koenker_bassett(0.8).unwrap(),
            LossSpec::koenker_bassett(0.99).unwrap(),
            LossSpec::koenker_bassett(0.9).unwrap().with_smoothing(0.3).unwrap(),
            LossSpec::expectile(0.9).unwrap(),
            LossSpec::expectile(0.2).unwrap(),
        ]
    }

    #[test]
    fn pointwise_examples() {
        assert_eq!(LossSpec::<f64>::quadratic().eval(3.0), 9.0);
        let kb = LossSpec::koenker_bassett(0.8f64).unwrap();
        assert!((kb.eval(1.0) - 4.0).abs() < 1e-12);
        assert_eq!(kb.eval(-1.0), 1.0);
        let e = LossSpec::expectile(0.5f64).unwrap();
        for x in [-2.0, 0.3, 5.0] {
            assert_eq!(e.eval(x), 0.5 * x * x);
        }
    }

    #[test]
    fn subgradient_examples() {
        assert_eq!(LossSpec::<f64>::quadratic().subgradient(3.0), 6.0);
        assert_eq!(LossSpec::koenker_bassett(0.8).unwrap().subgradient(0.0), 0.0);
        let e = LossSpec::expectile(0.9f64).unwrap();
        let fd = (e.eval(-2.0 + 1e-6) - e.eval(-2.0 - 1e-6)) / 2e-6;
        assert!((e.subgradient(-2.0) + 0.4).abs() < 1e-12);
        assert!((fd + 0.4).abs() < 1e-6);
    }

    #[test]
    fn smoothing_matches_value_and_slope_at_band_edges() {
        let eps = 0.25f64;
        let s = LossSpec::koenker_bassett(0.9).unwrap().with_smoothing(eps).unwrap();
        let raw = s.exact();
        for x in [eps, -eps] {
            assert!((s.eval(x) - raw.eval(x)).abs() < 1e-12);
            let inner = s.subgradient(x * (1.0 - 1e-12));
            assert!((inner - raw.subgradient(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_iff_origin() {
        for s in specs().into_iter().map(|s| s.exact()) {
            assert_eq!(s.eval(0.0), 0.0);
            for x in [-1e-3, 1e-3, -7.0, 7.0] {
                assert!(s.eval(x) > 0.0);
            }
        }
    }

    #[test]
    fn convex_on_random_grid() {
        let mut rng = CounterRng::new(StreamKey::new(11, 0, 0, 0));
        for s in specs() {
            for _ in 0..2000 {
                let a = (rng.uniform() - 0.5) * 20.0;
                let b = (rng.uniform() - 0.5) * 20.0;
                let mid = s.eval(0.5 * (a + b));
                assert!(mid <= 0.5 * (s.eval(a) + s.eval(b)) + 1e-12);
            }
        }
    }

    #[test]
    fn subgradient_matches_central_differences() {
        let mut rng = CounterRng::new(StreamKey::new(12, 0, 0, 0));
        let h = 1e-6;
        for s in specs() {
            let mut checked = 0;
            while checked < 1000 {
                let x = (rng.uniform() - 0.5) * 10.0;
                let eps = s.smoothing;
                let near_kink = x.abs() < 1e-4 || (eps > 0.0 && (x.abs() - eps).abs() < 1e-4);
                if near_kink {
                    continue;
                }
                let fd = (s.eval(x + h) - s.eval(x - h)) / (2.0 * h);
                assert!((fd - s.subgradient(x)).abs() < 1e-6, "{:?} at {x}", s.kind);
                checked += 1;
            }
        }
    }

    #[test]
    fn rejects_bad_levels() {
        assert!(LossSpec::koenker_bassett(1.0).is_err());
        assert!(LossSpec::expectile(0.0f64).is_err());
        assert!(LossSpec::<f64>::quadratic().with_smoothing(-1.0).is_err());
    }
}
