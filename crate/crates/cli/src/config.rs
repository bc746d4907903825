//! Run configuration. TOML with strict keys: unknown sections or fields are
//! rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use fairval::regressor::RegressorSpec;
use fairval::scenario::{GaussianModel, GridSpec, MarketParams, MortalityParams};
use fairval::valuation::ValuationParams;
use fairval::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Example {
    /// Regulatory arbitrage with a digital-style derivative.
    Example1,
    /// One-period equity-linked benefit with binomial survivors.
    Example2,
    /// Multi-period Gaussian model with a closed-form value.
    Example3,
    /// Ten-year equity-linked portfolio with stochastic mortality.
    Section5,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Simulation {
    pub n_paths: usize,
    pub seed: u64,
}

/// `N ~ Bin(n_pol, p_survive)` and `Y1 ~ LN(meanlog, sdlog^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnePeriod {
    pub meanlog: f64,
    pub sdlog: f64,
    pub n_pol: u32,
    pub p_survive: f64,
    #[serde(default)]
    pub r: f64,
    /// Price of the risky asset at time 0.
    #[serde(default = "one")]
    pub y1_0: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Valuation {
    pub coc_rate: f64,
    pub alpha: f64,
    /// Expectile level; when set, the second step uses the expectile loss.
    #[serde(default)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Liability {
    pub strike: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Report {
    pub bins: usize,
    pub cdf_points: usize,
    pub grid_points: usize,
    pub buckets: usize,
    /// Write every fitted regressor as JSON under `models/`.
    pub save_models: bool,
}

impl Default for Report {
    fn default() -> Self {
        Self {
            bins: 60,
            cdf_points: 199,
            grid_points: 21,
            buckets: 10,
            save_models: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub example: Example,
    pub market: Option<MarketParams>,
    pub mortality: Option<MortalityParams>,
    pub grid: Option<GridSpec>,
    pub gaussian: Option<GaussianModel>,
    pub one_period: Option<OnePeriod>,
    pub simulation: Option<Simulation>,
    pub valuation: Option<Valuation>,
    pub liability: Option<Liability>,
    pub regressor: Option<RegressorSpec>,
    #[serde(default)]
    pub report: Report,
    pub output: Option<Output>,
}

/// Failure to obtain a usable configuration (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn missing(section: &str, example: Example) -> ConfigError {
    ConfigError(format!("missing section [{section}] required by {example:?}").to_lowercase())
}

fn invalid(e: Error) -> ConfigError {
    ConfigError(e.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    /// Applies `--seed` and `--paths` to whichever section drives the simulation.
    pub fn override_run(&mut self, seed: Option<u64>, paths: Option<usize>) {
        if let Some(g) = self.grid.as_mut() {
            g.seed = seed.unwrap_or(g.seed);
            g.n_paths = paths.unwrap_or(g.n_paths);
        }
        if let Some(s) = self.simulation.as_mut() {
            s.seed = seed.unwrap_or(s.seed);
            s.n_paths = paths.unwrap_or(s.n_paths);
        }
    }

    pub fn require_example(&self, allowed: &[Example], command: &str) -> Result<(), ConfigError> {
        if allowed.contains(&self.example) {
            Ok(())
        } else {
            Err(ConfigError(format!("`example = {:?}` cannot be run by `{command}`", self.example).to_lowercase()))
        }
    }

    pub fn market(&self) -> Result<MarketParams, ConfigError> {
        let m = self.market.ok_or_else(|| missing("market", self.example))?;
        m.validate().map_err(invalid)?;
        Ok(m)
    }

    pub fn mortality(&self) -> Result<MortalityParams, ConfigError> {
        let m = self.mortality.ok_or_else(|| missing("mortality", self.example))?;
        m.validate().map_err(invalid)?;
        Ok(m)
    }

    pub fn grid(&self) -> Result<GridSpec, ConfigError> {
        let g = self.grid.ok_or_else(|| missing("grid", self.example))?;
        g.validate().map_err(invalid)?;
        Ok(g)
    }

    pub fn gaussian(&self) -> Result<GaussianModel, ConfigError> {
        let g = self.gaussian.clone().ok_or_else(|| missing("gaussian", self.example))?;
        g.validate().map_err(invalid)?;
        Ok(g)
    }

    pub fn one_period(&self) -> Result<OnePeriod, ConfigError> {
        self.one_period.ok_or_else(|| missing("one_period", self.example))
    }

    pub fn simulation(&self) -> Result<Simulation, ConfigError> {
        let s = self.simulation.ok_or_else(|| missing("simulation", self.example))?;
        if s.n_paths < 2 {
            return Err(invalid(Error::invalid("simulation.n_paths", "must be at least 2")));
        }
        Ok(s)
    }

    pub fn strike(&self) -> Result<f64, ConfigError> {
        let k = self.liability.ok_or_else(|| missing("liability", self.example))?.strike;
        if !k.is_finite() {
            return Err(invalid(Error::invalid("liability.strike", "must be finite")));
        }
        Ok(k)
    }

    /// Valuation parameters with the risk-free rate `r`.
    pub fn valuation(&self, r: f64) -> Result<ValuationParams, ConfigError> {
        let v = self.valuation.ok_or_else(|| missing("valuation", self.example))?;
        let p = ValuationParams {
            coc_rate: v.coc_rate,
            alpha: v.alpha,
            tau: v.tau,
            r,
        };
        p.validate().map_err(invalid)?;
        Ok(p)
    }

    pub fn regressor(&self) -> Result<RegressorSpec, ConfigError> {
        let spec = self.regressor.clone().unwrap_or_default();
        if let RegressorSpec::Mlp(m) = &spec {
            m.validate().map_err(invalid)?;
        }
        Ok(spec)
    }

    /// `--out` wins over `[output] dir`.
    pub fn out_dir(&self, flag: Option<PathBuf>) -> Result<PathBuf, ConfigError> {
        flag.or_else(|| self.output.as_ref().map(|o| o.dir.clone()))
            .ok_or_else(|| ConfigError("no output directory: pass --out or set [output] dir".into()))
    }
}
