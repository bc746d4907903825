//! Monte Carlo risk drivers: equity (geometric Brownian motion), force of
//! mortality (Ornstein-Uhlenbeck without mean reversion) and survivor counts
//! (nested binomial deaths), plus the one-period samples of the examples.
//!
//! Stream layout: for path `p` and year `t`, driver 0 feeds the mortality
//! shocks, driver 1 the independent equity component and driver 2 the
//! binomial death uniform.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{check_finite, Error, Result};
use crate::rng::{binomial_inverse, CounterRng, StreamKey};
use crate::scalar::Real;

const DRIVER_MORTALITY: u64 = 0;
const DRIVER_EQUITY: u64 = 1;
const DRIVER_DEATHS: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    pub r: f64,
    pub mu: f64,
    pub sigma: f64,
    pub y1_0: f64,
    pub delta: f64,
}

impl MarketParams {
    /// Equity-linked case study.
    pub fn benchmark() -> Self {
        Self {
            r: 0.01,
            mu: 0.02,
            sigma: 0.1,
            y1_0: 1.0,
            delta: -0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("market.r", self.r)?;
        check_finite("market.mu", self.mu)?;
        check_finite("market.sigma", self.sigma)?;
        check_finite("market.y1_0", self.y1_0)?;
        check_finite("market.delta", self.delta)?;
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("market.sigma", "must be positive"));
        }
        if !(-1.0..=1.0).contains(&self.delta) {
            return Err(Error::invalid("market.delta", "must lie in [-1, 1]"));
        }
        if !(self.y1_0 > 0.0) {
            return Err(Error::invalid("market.y1_0", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MortalityParams {
    pub lambda0: f64,
    pub c: f64,
    /// Volatility of the force of mortality.
    pub eta_mort: f64,
    pub age_x: f64,
    pub l_x: u32,
}

impl MortalityParams {
    pub fn benchmark() -> Self {
        Self {
            lambda0: 0.0087,
            c: 0.075,
            eta_mort: 0.000597,
            age_x: 55.0,
            l_x: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("mortality.lambda0", self.lambda0)?;
        check_finite("mortality.c", self.c)?;
        check_finite("mortality.eta_mort", self.eta_mort)?;
        check_finite("mortality.age_x", self.age_x)?;
        if !(self.lambda0 > 0.0) {
            return Err(Error::invalid("mortality.lambda0", "must be positive"));
        }
        if !(self.eta_mort >= 0.0) {
            return Err(Error::invalid("mortality.eta_mort", "must be nonnegative"));
        }
        if self.l_x < 1 {
            return Err(Error::invalid("mortality.l_x", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub horizon_t: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    pub n_paths: usize,
    pub seed: u64,
}

fn default_substeps() -> usize {
    12
}

impl GridSpec {
    pub fn new(horizon_t: usize, n_paths: usize, seed: u64) -> Self {
        Self {
            horizon_t,
            substeps: default_substeps(),
            n_paths,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_t < 1 {
            return Err(Error::invalid("grid.horizon_t", "must be at least 1"));
        }
        if self.substeps < 1 {
            return Err(Error::invalid("grid.substeps", "must be at least 1"));
        }
        if self.n_paths < 2 {
            return Err(Error::invalid("grid.n_paths", "must be at least 2"));
        }
        Ok(())
    }
}

/// Simulated paths on the annual grid `0, 1, ..., T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet<T: Real> {
    pub times: Vec<T>,
    /// Risky asset price, one row per path.
    pub asset_prices: Array2<T>,
    /// `e^{rt}`.
    pub riskfree_prices: Vec<T>,
    pub survivors: Array2<u32>,
    /// Raw (unclamped) force of mortality.
    pub forces: Array2<T>,
    pub market: MarketParams,
    pub mortality: MortalityParams,
    pub grid: GridSpec,
}

struct PathRecord {
    y: Vec<f64>,
    lambda: Vec<f64>,
    n: Vec<u32>,
}

fn simulate_path(market: &MarketParams, mort: &MortalityParams, grid: &GridSpec, path: u64) -> PathRecord {
    let steps = grid.substeps;
    let dt = 1.0 / steps as f64;
    let drift = (market.mu - 0.5 * market.sigma * market.sigma) * dt;
    let vol = market.sigma * dt.sqrt();
    let rho_bar = (1.0 - market.delta * market.delta).max(0.0).sqrt();
    let decay = (mort.c * dt).exp();
    let ou_sd = if mort.c.abs() < 1e-12 {
        mort.eta_mort * dt.sqrt()
    } else {
        mort.eta_mort * (((2.0 * mort.c * dt).exp() - 1.0) / (2.0 * mort.c)).sqrt()
    };
    let t_len = grid.horizon_t + 1;
    let mut rec = PathRecord {
        y: Vec::with_capacity(t_len),
        lambda: Vec::with_capacity(t_len),
        n: Vec::with_capacity(t_len),
    };
    let (mut y, mut lambda, mut n) = (market.y1_0, mort.lambda0, mort.l_x);
    rec.y.push(y);
    rec.lambda.push(lambda);
    rec.n.push(n);
    for t in 0..grid.horizon_t as u64 {
        let mut z_mort = CounterRng::new(StreamKey::new(grid.seed, path, t, DRIVER_MORTALITY));
        let mut z_eq = CounterRng::new(StreamKey::new(grid.seed, path, t, DRIVER_EQUITY));
        let mut integral = 0.0;
        for _ in 0..steps {
            let z2 = z_mort.normal();
            let z1 = market.delta * z2 + rho_bar * z_eq.normal();
            y *= (drift + vol * z1).exp();
            let next = lambda * decay + ou_sd * z2;
            integral += 0.5 * (lambda.max(0.0) + next.max(0.0)) * dt;
            lambda = next;
        }
        let q = (1.0 - (-integral).exp()).clamp(0.0, 1.0);
        let u = CounterRng::new(StreamKey::new(grid.seed, path, t, DRIVER_DEATHS)).uniform();
        n -= binomial_inverse(n, q, u);
        rec.y.push(y);
        rec.lambda.push(lambda);
        rec.n.push(n);
    }
    rec
}

/// Joint simulation of equity, mortality intensity and survivors.
pub fn simulate_joint<T: Real>(market: &MarketParams, mort: &MortalityParams, grid: &GridSpec) -> Result<ScenarioSet<T>> {
    market.validate()?;
    mort.validate()?;
    grid.validate()?;
    let records: Vec<PathRecord> = (0..grid.n_paths as u64)
        .into_par_iter()
        .map(|p| simulate_path(market, mort, grid, p))
        .collect();
    let t_len = grid.horizon_t + 1;
    let m = grid.n_paths;
    let mut asset_prices = Array2::<T>::zeros((m, t_len));
    let mut forces = Array2::<T>::zeros((m, t_len));
    let mut survivors = Array2::<u32>::zeros((m, t_len));
    for (p, rec) in records.iter().enumerate() {
        for t in 0..t_len {
            asset_prices[[p, t]] = T::lit(rec.y[t]);
            forces[[p, t]] = T::lit(rec.lambda[t]);
            survivors[[p, t]] = rec.n[t];
        }
    }
    Ok(ScenarioSet {
        times: (0..t_len).map(T::from_usize_lossy).collect(),
        asset_prices,
        riskfree_prices: (0..t_len).map(|t| T::lit((market.r * t as f64).exp())).collect(),
        survivors,
        forces,
        market: *market,
        mortality: *mort,
        grid: *grid,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioMeta {
    pub format_version: u32,
    pub market: MarketParams,
    pub mortality: MortalityParams,
    pub grid: GridSpec,
    /// SHA-256 of the CSV file, hex encoded.
    pub checksum: String,
}

const FORMAT_VERSION: u32 = 1;
pub const SCENARIO_HEADER: &str = "path,time,y1,lambda,survivors";

impl<T: Real> ScenarioSet<T> {
    pub fn n_paths(&self) -> usize {
        self.asset_prices.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.times.len() - 1
    }

    /// `N(T) * max(Y1(T), K)` per path.
    pub fn guaranteed_benefit(&self, k: T) -> Vec<T> {
        let t = self.horizon();
        (0..self.n_paths())
            .map(|p| T::from_usize_lossy(self.survivors[[p, t]] as usize) * self.asset_prices[[p, t]].max(k))
            .collect()
    }

    /// Writes `scenarios.csv`-style data and returns its checksum.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<String> {
        let mut hasher = Sha256::new();
        let mut w = BufWriter::new(HashingWriter { inner: out, hasher: &mut hasher });
        writeln!(w, "{SCENARIO_HEADER}")?;
        for p in 0..self.n_paths() {
            for t in 0..self.times.len() {
                writeln!(
                    w,
                    "{p},{t},{:e},{:e},{}",
                    self.asset_prices[[p, t]].as_f64(),
                    self.forces[[p, t]].as_f64(),
                    self.survivors[[p, t]]
                )?;
            }
        }
        w.flush()?;
        drop(w);
        Ok(hex_digest(hasher))
    }

    pub fn meta(&self, checksum: String) -> ScenarioMeta {
        ScenarioMeta {
            format_version: FORMAT_VERSION,
            market: self.market,
            mortality: self.mortality,
            grid: self.grid,
            checksum,
        }
    }

    /// Writes `<dir>/scenarios.csv` and `<dir>/scenarios.meta.json`.
    pub fn export(&self, dir: &Path) -> Result<ScenarioMeta> {
        std::fs::create_dir_all(dir)?;
        let checksum = self.write_csv(std::fs::File::create(dir.join("scenarios.csv"))?)?;
        let meta = self.meta(checksum);
        std::fs::write(dir.join("scenarios.meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(meta)
    }

    /// Reads an export written by [`ScenarioSet::export`], verifying the checksum.
    pub fn import(dir: &Path) -> Result<Self> {
        let meta: ScenarioMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("scenarios.meta.json"))?)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported scenario format version {}", meta.format_version)));
        }
        let bytes = std::fs::read(dir.join("scenarios.csv"))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let digest = hex_digest(hasher);
        if digest != meta.checksum {
            return Err(Error::Format(format!("checksum mismatch: file {digest}, sidecar {}", meta.checksum)));
        }
        Self::read_csv(&bytes[..], meta.market, meta.mortality, meta.grid)
    }

    pub fn read_csv<R: Read>(input: R, market: MarketParams, mortality: MortalityParams, grid: GridSpec) -> Result<Self> {
        let t_len = grid.horizon_t + 1;
        let m = grid.n_paths;
        let mut asset_prices = Array2::<T>::zeros((m, t_len));
        let mut forces = Array2::<T>::zeros((m, t_len));
        let mut survivors = Array2::<u32>::zeros((m, t_len));
        let mut seen = 0usize;
        let mut lines = BufReader::new(input).lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == SCENARIO_HEADER => {}
            _ => return Err(Error::Format(format!("expected header `{SCENARIO_HEADER}`"))),
        }
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("line {}: `{line}`", lineno + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let p: usize = f[0].parse().map_err(|_| bad())?;
            let t: usize = f[1].parse().map_err(|_| bad())?;
            if p >= m || t >= t_len {
                return Err(bad());
            }
            asset_prices[[p, t]] = T::lit(f[2].parse().map_err(|_| bad())?);
            forces[[p, t]] = T::lit(f[3].parse().map_err(|_| bad())?);
            survivors[[p, t]] = f[4].parse().map_err(|_| bad())?;
            seen += 1;
        }
        if seen != m * t_len {
            return Err(Error::Format(format!("expected {} rows, found {seen}", m * t_len)));
        }
        Ok(Self {
            times: (0..t_len).map(T::from_usize_lossy).collect(),
            asset_prices,
            riskfree_prices: (0..t_len).map(|t| T::lit((market.r * t as f64).exp())).collect(),
            survivors,
            forces,
            market,
            mortality,
            grid,
        })
    }
}

struct HashingWriter<'a, W> {
    inner: W,
    hasher: &'a mut Sha256,
}

impl<W: Write> Write for HashingWriter<'_, W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Paired one-period draws of survivors and the risky asset.
#[derive(Debug, Clone, PartialEq)]
pub struct OnePeriodSample<T> {
    pub survivors: Vec<u32>,
    pub y1: Vec<T>,
}

impl<T: Real> OnePeriodSample<T> {
    /// `N * max(Y1, K)`.
    pub fn guaranteed_benefit(&self, k: T) -> Vec<T> {
        self.survivors
            .iter()
            .zip(&self.y1)
            .map(|(&n, &y)| T::from_usize_lossy(n as usize) * y.max(k))
            .collect()
    }
}

/// `N ~ Bin(n_pol, p_survive)` independent of `Y1 ~ LN(meanlog, sdlog^2)`.
pub fn one_period_lognormal_binomial<T: Real>(
    meanlog: f64,
    sdlog: f64,
    n_pol: u32,
    p_survive: f64,
    n_paths: usize,
    seed: u64,
) -> Result<OnePeriodSample<T>> {
    check_finite("meanlog", meanlog)?;
    check_finite("sdlog", sdlog)?;
    if !(sdlog > 0.0) {
        return Err(Error::invalid("sdlog", "must be positive"));
    }
    if !(0.0..=1.0).contains(&p_survive) {
        return Err(Error::invalid("p_survive", "must lie in [0, 1]"));
    }
    if n_paths < 2 {
        return Err(Error::invalid("n_paths", "must be at least 2"));
    }
    let draws: Vec<(u32, T)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let y = (meanlog + sdlog * CounterRng::new(StreamKey::new(seed, p, 0, DRIVER_EQUITY)).normal()).exp();
            let u = CounterRng::new(StreamKey::new(seed, p, 0, DRIVER_DEATHS)).uniform();
            // survivors are the complement of deaths with probability 1 - p
            let n = n_pol - binomial_inverse(n_pol, 1.0 - p_survive, u);
            (n, T::lit(y))
        })
        .collect();
    let (survivors, y1) = draws.into_iter().unzip();
    Ok(OnePeriodSample { survivors, y1 })
}

/// Liability and derivative payoff of the regulatory-arbitrage example.
#[derive(Debug, Clone, PartialEq)]
pub struct ArbitrageSample<T> {
    pub liability: Vec<T>,
    pub derivative: Vec<T>,
    pub var_level: T,
}

pub const ARBITRAGE_MEANLOG: f64 = 0.1;
pub const ARBITRAGE_SDLOG: f64 = 0.3;
pub const ARBITRAGE_ALPHA: f64 = 0.9;

/// Analytic `VaR_0.9` of `LN(0.1, 0.3^2)`.
pub fn arbitrage_var() -> f64 {
    let z = Normal::standard().inverse_cdf(ARBITRAGE_ALPHA);
    (ARBITRAGE_MEANLOG + ARBITRAGE_SDLOG * z).exp()
}

/// `S ~ LN(0.1, 0.3^2)` and `Y1 = 1.5 1{S <= VaR} - 3 1{S > VaR}`.
pub fn regulatory_arbitrage_payoffs<T: Real>(n_paths: usize, seed: u64) -> Result<ArbitrageSample<T>> {
    if n_paths < 2 {
        return Err(Error::invalid("n_paths", "must be at least 2"));
    }
    let v = arbitrage_var();
    let (liability, derivative): (Vec<T>, Vec<T>) = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let s = (ARBITRAGE_MEANLOG + ARBITRAGE_SDLOG * CounterRng::new(StreamKey::new(seed, p, 0, 0)).normal()).exp();
            let y = if s <= v { 1.5 } else { -3.0 };
            (T::lit(s), T::lit(y))
        })
        .unzip();
    Ok(ArbitrageSample {
        liability,
        derivative,
        var_level: T::lit(v),
    })
}

/// Multi-period model with i.i.d. normal gross returns `R_t` on the risky
/// asset, a riskless asset worth 1 at all times, and a liability
/// `S = s0 + S_1 + ... + S_T` whose increments are independent, centred and
/// jointly normal with `R_t` (correlation `corr`, sd `gamma[t-1]`).
/// `R_t ~ N(1 + kappa sigma_r, sigma_r^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianModel {
    pub s0: f64,
    pub gamma: Vec<f64>,
    pub corr: f64,
    pub kappa: f64,
    #[serde(default = "default_sigma_r")]
    pub sigma_r: f64,
    #[serde(default = "default_y1_0")]
    pub y1_0: f64,
}

fn default_sigma_r() -> f64 {
    0.1
}

fn default_y1_0() -> f64 {
    1.0
}

impl GaussianModel {
    pub fn validate(&self) -> Result<()> {
        check_finite("gaussian.s0", self.s0)?;
        check_finite("gaussian.kappa", self.kappa)?;
        if self.gamma.is_empty() {
            return Err(Error::invalid("gaussian.gamma", "needs one entry per period"));
        }
        if self.gamma.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(Error::invalid("gaussian.gamma", "entries must be positive"));
        }
        if !(self.corr.abs() <= 1.0) {
            return Err(Error::invalid("gaussian.corr", "must lie in [-1, 1]"));
        }
        if !(self.sigma_r > 0.0) || !self.sigma_r.is_finite() {
            return Err(Error::invalid("gaussian.sigma_r", "must be positive"));
        }
        if !(self.y1_0 > 0.0) || !self.y1_0.is_finite() {
            return Err(Error::invalid("gaussian.y1_0", "must be positive"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.gamma.len()
    }

    /// `s0 - kappa c sum(gamma) + i Phi^{-1}(alpha) sqrt(1 - c^2) sum(gamma)`.
    pub fn closed_form_value(&self, alpha: f64, coc_rate: f64) -> Result<f64> {
        self.validate()?;
        crate::error::check_probability("alpha", alpha)?;
        let lambda = Normal::standard().inverse_cdf(alpha);
        let total: f64 = self.gamma.iter().sum();
        Ok(self.s0 - self.kappa * self.corr * total + coc_rate * lambda * (1.0 - self.corr * self.corr).sqrt() * total)
    }
}

/// Paths of the risky asset and of the cumulated liability `s0 + S_1 + ... + S_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPaths<T> {
    pub y1: Array2<T>,
    pub cumulative: Array2<T>,
}

pub fn simulate_gaussian<T: Real>(model: &GaussianModel, n_paths: usize, seed: u64) -> Result<GaussianPaths<T>> {
    model.validate()?;
    if n_paths < 2 {
        return Err(Error::invalid("n_paths", "must be at least 2"));
    }
    let horizon = model.horizon();
    let rho_bar = (1.0 - model.corr * model.corr).max(0.0).sqrt();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let (mut y, mut c) = (model.y1_0, model.s0);
            let (mut ys, mut cs) = (vec![y], vec![c]);
            for (t, g) in model.gamma.iter().enumerate() {
                let mut rng = CounterRng::new(StreamKey::new(seed, p, t as u64, DRIVER_EQUITY));
                let (u1, u2) = (rng.normal(), rng.normal());
                y *= 1.0 + model.kappa * model.sigma_r + model.sigma_r * u1;
                c += g * (model.corr * u1 + rho_bar * u2);
                ys.push(y);
                cs.push(c);
            }
            (ys, cs)
        })
        .collect();
    let mut y1 = Array2::zeros((n_paths, horizon + 1));
    let mut cumulative = Array2::zeros((n_paths, horizon + 1));
    for (p, (ys, cs)) in rows.iter().enumerate() {
        for t in 0..=horizon {
            y1[[p, t]] = T::lit(ys[t]);
            cumulative[[p, t]] = T::lit(cs[t]);
        }
    }
    Ok(GaussianPaths { y1, cumulative })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid(n: usize) -> GridSpec {
        GridSpec::new(10, n, 42)
    }

    #[test]
    fn zero_noise_mortality_follows_ode() {
        let market = MarketParams { delta: 0.0, ..MarketParams::benchmark() };
        let mort = MortalityParams { eta_mort: 0.0, ..MortalityParams::benchmark() };
        let s: ScenarioSet<f64> = simulate_joint(&market, &mort, &small_grid(50)).unwrap();
        for p in 0..50 {
            for t in 0..=10 {
                let want = 0.0087 * (0.075 * t as f64).exp();
                assert!((s.forces[[p, t]] - want).abs() < 1e-15, "{} vs {want}", s.forces[[p, t]]);
            }
        }
    }

    #[test]
    fn deterministic_equity_when_sigma_vanishes() {
        // sigma must be positive by contract; a tiny sigma gives the drift path
        let market = MarketParams { sigma: 1e-300, ..MarketParams::benchmark() };
        let s: ScenarioSet<f64> = simulate_joint(&market, &MortalityParams::benchmark(), &small_grid(20)).unwrap();
        for p in 0..20 {
            for t in 0..=10 {
                let want = (0.02 * t as f64).exp();
                assert!((s.asset_prices[[p, t]] - want).abs() < 1e-13 * want);
            }
        }
    }

    #[test]
    fn survivors_monotone_and_start_at_lx() {
        let s: ScenarioSet<f64> = simulate_joint(&MarketParams::benchmark(), &MortalityParams::benchmark(), &small_grid(500)).unwrap();
        for p in 0..500 {
            assert_eq!(s.survivors[[p, 0]], 1000);
            for t in 0..10 {
                assert!(s.survivors[[p, t + 1]] <= s.survivors[[p, t]]);
            }
        }
        assert!((s.riskfree_prices[3] - (0.03f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        let bad = MarketParams { sigma: -1.0, ..MarketParams::benchmark() };
        let err = simulate_joint::<f64>(&bad, &MortalityParams::benchmark(), &small_grid(10)).unwrap_err();
        assert!(err.to_string().contains("market.sigma"));
        let nan = MarketParams { mu: f64::NAN, ..MarketParams::benchmark() };
        assert!(simulate_joint::<f64>(&nan, &MortalityParams::benchmark(), &small_grid(10)).is_err());
        assert!(simulate_joint::<f64>(&MarketParams::benchmark(), &MortalityParams::benchmark(), &small_grid(1)).is_err());
    }

    #[test]
    fn csv_roundtrip_preserves_values() {
        let s: ScenarioSet<f64> = simulate_joint(&MarketParams::benchmark(), &MortalityParams::benchmark(), &GridSpec::new(3, 7, 5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let meta = s.export(dir.path()).unwrap();
        assert_eq!(meta.checksum.len(), 64);
        let back = ScenarioSet::<f64>::import(dir.path()).unwrap();
        assert_eq!(back, s);
        let text = std::fs::read_to_string(dir.path().join("scenarios.csv")).unwrap();
        assert!(text.starts_with(SCENARIO_HEADER));
    }

    #[test]
    fn tampered_export_is_rejected() {
        let s: ScenarioSet<f64> = simulate_joint(&MarketParams::benchmark(), &MortalityParams::benchmark(), &GridSpec::new(2, 3, 5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.export(dir.path()).unwrap();
        let path = dir.path().join("scenarios.csv");
        let text = std::fs::read_to_string(&path).unwrap().replace(",1000\n", ",999\n");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(ScenarioSet::<f64>::import(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn one_period_degenerate_survival() {
        let s: OnePeriodSample<f64> = one_period_lognormal_binomial(0.1, 0.2, 1000, 1.0, 100, 3).unwrap();
        let b = s.guaranteed_benefit(0.0);
        for (v, y) in b.iter().zip(&s.y1) {
            assert_eq!(*v, 1000.0 * y);
        }
        let again: OnePeriodSample<f64> = one_period_lognormal_binomial(0.1, 0.2, 1000, 1.0, 100, 3).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn arbitrage_var_level() {
        assert!((arbitrage_var() - 1.623307070020504).abs() < 1e-12);
        let a: ArbitrageSample<f64> = regulatory_arbitrage_payoffs(100_000, 1).unwrap();
        let tail = a.derivative.iter().filter(|v| **v < 0.0).count() as f64 / 1e5;
        assert!((tail - 0.1).abs() < 3.0 * (0.09f64 / 1e5).sqrt());
    }
    #[test]
    fn gaussian_increments_have_requested_moments() {
        let model = GaussianModel {
            s0: 100.0,
            gamma: vec![10.0, 20.0],
            corr: 0.5,
            kappa: 0.1,
            sigma_r: 0.1,
            y1_0: 1.0,
        };
        let p = simulate_gaussian::<f64>(&model, 40_000, 3).unwrap();
        let m = 40_000.0;
        let inc: Vec<f64> = (0..40_000).map(|i| p.cumulative[[i, 2]] - p.cumulative[[i, 1]]).collect();
        let ret: Vec<f64> = (0..40_000).map(|i| p.y1[[i, 2]] / p.y1[[i, 1]]).collect();
        let mi = inc.iter().sum::<f64>() / m;
        let mr = ret.iter().sum::<f64>() / m;
        let sd = (inc.iter().map(|x| (x - mi).powi(2)).sum::<f64>() / m).sqrt();
        let cov = inc.iter().zip(&ret).map(|(a, b)| (a - mi) * (b - mr)).sum::<f64>() / m;
        assert!(mi.abs() < 4.0 * 20.0 / m.sqrt());
        assert!((sd - 20.0).abs() < 0.3);
        assert!((mr - 1.01).abs() < 4.0 * 0.1 / m.sqrt());
        assert!((cov / (sd * 0.1) - 0.5).abs() < 0.02);
        assert!(p.cumulative.column(0).iter().all(|v| *v == 100.0));
    }

    #[test]
    fn gaussian_closed_form_without_risk() {
        let mut model = GaussianModel {
            s0: 100.0,
            gamma: vec![10.0; 3],
            corr: 1.0,
            kappa: 0.1,
            sigma_r: 0.1,
            y1_0: 1.0,
        };
        // fully hedgeable: no margin
        assert!((model.closed_form_value(0.95, 0.06).unwrap() - 97.0).abs() < 1e-12);
        model.corr = 0.5;
        assert!((model.closed_form_value(0.95, 0.06).unwrap() - 101.06407304760451).abs() < 1e-9);
        model.gamma.clear();
        assert!(model.validate().is_err());
    }
}
