//! Subcommand pipelines.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde_json::{json, Map, Value};

use fairval::dynamic::{self, PathPanel, ValuationPath};
use fairval::hedge::{self, AssetPanel};
use fairval::loss::LossSpec;
use fairval::regressor::RegressorSpec;
use fairval::report;
use fairval::risk::{self, Sample};
use fairval::scalar::{mean, std_dev};
use fairval::scenario::{self, ScenarioSet};
use fairval::valuation;
use fairval::Error;

use crate::config::{ConfigError, Example, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    NonConvergence(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::NonConvergence(m) => write!(f, "numerical nonconvergence: {m}"),
            CliError::Other(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

fn is_invalid_parameter(e: &Error) -> bool {
    match e {
        Error::InvalidParameter { .. } => true,
        Error::Period { source, .. } => is_invalid_parameter(source),
        _ => false,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_nonconvergence() {
            CliError::NonConvergence(e.to_string())
        } else if is_invalid_parameter(&e) {
            CliError::Config(e.to_string())
        } else {
            CliError::Other(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))
}

fn prepare(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("cannot create {}: {e}", dir.display())))
}

fn write_summary(dir: &Path, summary: &Map<String, Value>) -> Result<()> {
    let text = serde_json::to_string_pretty(summary).map_err(Error::from)?;
    std::fs::write(dir.join("summary.json"), text)?;
    Ok(())
}

fn example_name(e: Example) -> &'static str {
    match e {
        Example::Example1 => "example1",
        Example::Example2 => "example2",
        Example::Example3 => "example3",
        Example::Section5 => "section5",
    }
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.require_example(&[Example::Section5], "simulate")?;
    let (market, mortality, grid) = (cfg.market()?, cfg.mortality()?, cfg.grid()?);
    let set = scenario::simulate_joint::<f64>(&market, &mortality, &grid)?;
    prepare(out)?;
    let meta = set.export(out)?;
    println!("paths {}", grid.n_paths);
    println!("seed {}", grid.seed);
    println!("checksum {}", meta.checksum);
    Ok(())
}

fn riskfree_panel(r: f64, y1_0: f64, y1: Vec<f64>) -> Result<AssetPanel<f64>> {
    let m = y1.len();
    let y = Array2::from_shape_vec((m, 1), y1).map_err(|e| CliError::Other(e.to_string()))?;
    Ok(AssetPanel::with_riskfree(r, &[y1_0], y.view())?)
}

pub fn value_one_period(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.require_example(&[Example::Example1, Example::Example2], "value-one-period")?;
    let sim = cfg.simulation()?;
    let mut summary = Map::new();
    summary.insert("example".into(), json!(example_name(cfg.example)));
    summary.insert("n_paths".into(), json!(sim.n_paths));
    summary.insert("seed".into(), json!(sim.seed));
    match cfg.example {
        Example::Example1 => regulatory_arbitrage(cfg, sim.n_paths, sim.seed, out, &mut summary)?,
        _ => equity_linked_one_period(cfg, sim.n_paths, sim.seed, out, &mut summary)?,
    }
    write_summary(out, &summary)?;
    print!("{}", render(out)?);
    Ok(())
}

fn regulatory_arbitrage(cfg: &RunConfig, n: usize, seed: u64, out: &Path, summary: &mut Map<String, Value>) -> Result<()> {
    let params = cfg.valuation(0.0)?;
    let sample = scenario::regulatory_arbitrage_payoffs::<f64>(n, seed)?;
    let panel = riskfree_panel(0.0, 1.0, sample.derivative.clone())?;
    let s = Sample::new(sample.liability.clone())?;
    let xi = hedge::quantile_hedge(&s, &panel, params.alpha)?;
    // strategy A: VaR / 1.5 units of the derivative, no cash
    let a_units = vec![0.0, sample.var_level / 1.5];
    let a_cost = panel.cost(&a_units);
    let res_a = panel.residuals(&s, &a_units)?;
    let res_b = panel.residuals(&s, &xi.units)?;
    prepare(out)?;
    report::write_strategies(create(out, "strategies.csv")?, &[("A", &a_units[..], a_cost), ("B", &xi.units[..], xi.cost)])?;
    report::write_cdfs(create(out, "residual_cdf.csv")?, &[("A", res_a.values()), ("B", res_b.values())], cfg.report.cdf_points)?;
    summary.insert("alpha".into(), json!(params.alpha));
    summary.insert("cost_A".into(), json!(a_cost));
    summary.insert("cost_B".into(), json!(xi.cost));
    summary.insert("residual_var_A".into(), json!(risk::var(&res_a, params.alpha)?));
    summary.insert("residual_var_B".into(), json!(risk::var(&res_b, params.alpha)?));
    Ok(())
}

fn equity_linked_one_period(cfg: &RunConfig, n: usize, seed: u64, out: &Path, summary: &mut Map<String, Value>) -> Result<()> {
    let op = cfg.one_period()?;
    let strike = cfg.strike()?;
    let params = cfg.valuation(op.r)?;
    let draws = scenario::one_period_lognormal_binomial::<f64>(op.meanlog, op.sdlog, op.n_pol, op.p_survive, n, seed)?;
    let panel = riskfree_panel(op.r, op.y1_0, draws.y1.clone())?;
    let s = Sample::new(draws.guaranteed_benefit(strike))?;
    let alpha = params.alpha;

    let phi = valuation::phi_valuation(&s, &panel, &params)?;
    let rho = valuation::mean_quantile_valuation(&s, &panel, &params)?;
    let theta = &phi.theta;
    let xi = hedge::quantile_hedge(&s, &panel, alpha)?;
    let r_theta = panel.residuals(&s, &theta.units)?;
    let buffered = panel.residuals(&s, &theta.plus(&phi.eta, &panel).units)?;
    let r_eta = panel.residuals(&r_theta, &rho.eta.units)?;

    let mut strategies: Vec<(&str, &[f64], f64)> = vec![("theta", &theta.units, theta.cost), ("xi", &xi.units, xi.cost)];
    let mut values = vec![("phi", &phi), ("rho", &rho)];
    let mut residuals: Vec<(&str, &[f64])> = vec![("buffer", buffered.values()), ("quantile", r_eta.values())];

    let expectile = match params.tau {
        Some(tau) => {
            let xi_tau = hedge::expectile_hedge(&s, &panel, tau)?;
            let rho_tau = valuation::two_step_valuation(&s, &panel, &params, LossSpec::expectile(tau)?)?;
            let r_tau = panel.residuals(&r_theta, &rho_tau.eta.units)?;
            Some((xi_tau, rho_tau, r_tau))
        }
        None => None,
    };
    if let Some((xi_tau, _, _)) = &expectile {
        strategies.push(("xi_tau", &xi_tau.units, xi_tau.cost));
    }
    strategies.push(("var_buffer", &phi.eta.units, phi.eta.cost));
    strategies.push(("eta", &rho.eta.units, rho.eta.cost));
    if let Some((_, rho_tau, r_tau)) = &expectile {
        strategies.push(("eta_tau", &rho_tau.eta.units, rho_tau.eta.cost));
        values.push(("rho_tau", rho_tau));
        residuals.push(("expectile", r_tau.values()));
    }

    prepare(out)?;
    report::write_strategies(create(out, "table1.csv")?, &strategies)?;
    report::write_fair_values(create(out, "fair_values.csv")?, &values)?;
    report::write_histograms(create(out, "residual_density.csv")?, &residuals, cfg.report.bins)?;
    let mut stats = Map::new();
    for (name, r) in &residuals {
        let sample = Sample::new(r.to_vec())?;
        stats.insert(
            name.to_string(),
            json!({
                "var": risk::var(&sample, alpha)?,
                "dtvar": risk::dtvar(&sample, alpha)?,
                "sd": std_dev(r),
            }),
        );
    }
    summary.insert("mean_liability".into(), json!(s.mean()));
    summary.insert("alpha".into(), json!(alpha));
    summary.insert("coc_rate".into(), json!(params.coc_rate));
    summary.insert("tau".into(), json!(params.tau));
    summary.insert("residuals".into(), Value::Object(stats));
    Ok(())
}

struct DynamicRun {
    panel: PathPanel<f64>,
    liability: Vec<f64>,
    r: f64,
    closed_form: Option<f64>,
}

fn dynamic_inputs(cfg: &RunConfig, scenarios: Option<&Path>, summary: &mut Map<String, Value>) -> Result<DynamicRun> {
    match cfg.example {
        Example::Example3 => {
            let model = cfg.gaussian()?;
            let sim = cfg.simulation()?;
            let params = cfg.valuation(0.0)?;
            let paths = scenario::simulate_gaussian::<f64>(&model, sim.n_paths, sim.seed)?;
            summary.insert("n_paths".into(), json!(sim.n_paths));
            summary.insert("seed".into(), json!(sim.seed));
            Ok(DynamicRun {
                liability: paths.cumulative.column(model.horizon()).to_vec(),
                panel: PathPanel::from_gaussian(&paths)?,
                r: 0.0,
                closed_form: Some(model.closed_form_value(params.alpha, params.coc_rate)?),
            })
        }
        _ => {
            let strike = cfg.strike()?;
            let set = match scenarios {
                Some(dir) => ScenarioSet::<f64>::import(dir)?,
                None => scenario::simulate_joint::<f64>(&cfg.market()?, &cfg.mortality()?, &cfg.grid()?)?,
            };
            summary.insert("n_paths".into(), json!(set.grid.n_paths));
            summary.insert("seed".into(), json!(set.grid.seed));
            Ok(DynamicRun {
                liability: set.guaranteed_benefit(strike),
                panel: PathPanel::from_scenarios(&set)?,
                r: set.market.r,
                closed_form: None,
            })
        }
    }
}

fn save_models(dir: &Path, path: &ValuationPath<f64>, spec: &RegressorSpec) -> Result<()> {
    let models = dir.join("models");
    prepare(&models)?;
    for p in &path.periods {
        std::fs::write(models.join(format!("period_{}_quadratic.json", p.t)), p.quadratic.to_json(spec)?)?;
        std::fs::write(models.join(format!("period_{}_quantile.json", p.t)), p.quantile.to_json(spec)?)?;
    }
    Ok(())
}

pub fn value_dynamic(cfg: &RunConfig, out: &Path, scenarios: Option<&Path>) -> Result<()> {
    cfg.require_example(&[Example::Example3, Example::Section5], "value-dynamic")?;
    let mut summary = Map::new();
    summary.insert("example".into(), json!(example_name(cfg.example)));
    let run = dynamic_inputs(cfg, scenarios, &mut summary)?;
    let params = cfg.valuation(run.r)?;
    let spec = cfg.regressor()?;
    let path = dynamic::backward_valuate(&run.panel, &run.liability, &params, &spec)?;
    let rb = dynamic::rebalancing_costs(&path, &run.panel, run.r);

    prepare(out)?;
    report::write_fanchart(create(out, "fanchart.csv")?, path.fair_values.view())?;
    report::write_table2(create(out, "table2.csv")?, &dynamic::constraint_report(&path, params.alpha)?)?;
    report::write_rebalancing(create(out, "rebal.csv")?, &rb)?;
    report::write_strategy_grid(create(out, "strategy_grid.csv")?, &path, &run.panel, cfg.report.grid_points)?;
    let final_loss = report::final_loss(&path);
    report::write_histograms(create(out, "final_loss.csv")?, &[("final_loss", &final_loss[..])], cfg.report.bins)?;
    let buckets = dynamic::conditional_report(&path, &run.panel, params.alpha, cfg.report.buckets)?;
    report::write_conditional(create(out, "conditional.csv")?, &buckets)?;
    if cfg.report.save_models {
        save_models(out, &path, &spec)?;
    }

    summary.insert("horizon".into(), json!(path.horizon()));
    summary.insert("alpha".into(), json!(params.alpha));
    summary.insert("coc_rate".into(), json!(params.coc_rate));
    summary.insert("regressor".into(), json!(if matches!(spec, RegressorSpec::Linear { .. }) { "linear" } else { "mlp" }));
    summary.insert("mean_liability".into(), json!(mean(&run.liability)));
    summary.insert("rho0".into(), json!(path.value_at_zero()));
    if let Some(v) = run.closed_form {
        summary.insert("closed_form".into(), json!(v));
    }
    if !rb.total.is_empty() {
        summary.insert("rebalancing_total_q95".into(), json!(risk::var(&Sample::new(rb.total.clone())?, 0.95)?));
    }
    summary.insert("time0_spread".into(), json!(path.periods[0].spread));
    summary.insert("warnings".into(), json!(path.warnings()));
    write_summary(out, &summary)?;
    print!("{}", render(out)?);
    Ok(())
}

fn read_table(dir: &Path, name: &str) -> Result<Option<Vec<Vec<String>>>> {
    let path = dir.join(name);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(report::read_records(&std::fs::read_to_string(path)?)?))
}

fn format_cell(s: &str) -> String {
    match s.parse::<f64>() {
        Ok(v) if s.contains('.') || s.contains('e') => format!("{v:.4}"),
        _ => s.to_string(),
    }
}

fn format_table(title: &str, rows: &[Vec<String>]) -> String {
    let cells: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|c| format_cell(c)).collect()).collect();
    let cols = cells.iter().map(Vec::len).max().unwrap_or(0);
    let width: Vec<usize> = (0..cols).map(|j| cells.iter().filter_map(|r| r.get(j)).map(String::len).max().unwrap_or(0)).collect();
    let mut s = format!("\n{title}\n");
    for r in &cells {
        let line: Vec<String> = r.iter().enumerate().map(|(j, c)| format!("{c:>w$}", w = width[j])).collect();
        s.push_str(&format!("  {}\n", line.join("  ")));
    }
    s
}

fn format_value(v: &Value) -> String {
    match v {
        Value::Number(n) if n.is_f64() => format!("{:.4}", n.as_f64().unwrap_or(f64::NAN)),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Human-readable summary of a result directory.
pub fn render(dir: &Path) -> Result<String> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Other(format!("cannot read {}: {e}", path.display())))?;
    let summary: Map<String, Value> = serde_json::from_str(&text).map_err(Error::from)?;
    let mut s = String::new();
    for (k, v) in &summary {
        match v {
            Value::Object(inner) => {
                s.push_str(&format!("{k}:\n"));
                for (name, stats) in inner {
                    let parts: Vec<String> = stats.as_object().map(|o| o.iter().map(|(a, b)| format!("{a} {}", format_value(b))).collect()).unwrap_or_default();
                    s.push_str(&format!("  {name}: {}\n", parts.join(", ")));
                }
            }
            Value::Array(items) if items.is_empty() => {}
            Value::Array(items) => {
                s.push_str(&format!("{k}:\n"));
                for item in items {
                    s.push_str(&format!("  {}\n", format_value(item)));
                }
            }
            other => s.push_str(&format!("{k}: {}\n", format_value(other))),
        }
    }
    if let (Some(r), Some(c)) = (summary.get("rho0"), summary.get("closed_form")) {
        s.push_str(&format!("rho0 {} vs closed form {}\n", format_value(r), format_value(c)));
    }
    for (file, title) in [
        ("strategies.csv", "Strategies"),
        ("table1.csv", "Hedging strategies"),
        ("fair_values.csv", "Fair values"),
        ("table2.csv", "Pooled residual diagnostics"),
        ("rebal.csv", "Rebalancing costs"),
    ] {
        if let Some(rows) = read_table(dir, file)? {
            s.push_str(&format_table(title, &rows));
        }
    }
    Ok(s)
}

pub fn report(dir: &Path) -> Result<()> {
    print!("{}", render(dir)?);
    Ok(())
}

pub fn out_dir(cfg: Option<&RunConfig>, flag: Option<PathBuf>) -> Result<PathBuf> {
    match cfg {
        Some(c) => Ok(c.out_dir(flag)?),
        None => flag.ok_or_else(|| CliError::Config("pass --out DIR".into())),
    }
}
