//! State-to-strategy regressors for the backward recursion.
//!
//! A regressor maps the state `Z(t)` to a strategy vector `beta` (one unit
//! count per asset) and is fitted by minimising
//! `(1/M) sum loss(target_i - beta(Z_i) . Y_i(t+1))`.
//!
//! Two families are provided:
//! - `Linear`: `beta_j(z) = sum_k B[k, j] phi_k(z)` over monomial terms
//!   `phi_k`. The fit is a linear problem on the expanded design
//!   `phi_k(z_i) Y_ij` and is solved exactly.
//! - `Mlp`: a ReLU network with linear output layer, trained by Adam.
//!
//! # Network training
//!
//! Inputs are standardised per feature. Targets and payoffs are rescaled so
//! the network works on `O(1)` numbers: with `s` the root mean square of the
//! target and `c_j` that of payoff column `j`, the network output `o_j` maps
//! to units `o_j s / c_j`. Every loss used here is positively homogeneous of
//! degree one or two, so the rescaled problem has the same minimiser.
//!
//! Adam update for parameters `w` with gradient `g` at step `k`:
//!
//! ```text
//! m = b1 m + (1 - b1) g
//! v = b2 v + (1 - b2) g^2
//! w -= lr_k * (m / (1 - b1^k)) / (sqrt(v / (1 - b2^k)) + 1e-8)
//! ```
//!
//! with `b1 = 0.9`, `b2 = 0.999` and a cosine schedule
//! `lr_e = lr (1 + cos(pi e / E)) / 2` over epochs `e`. The Koenker-Bassett
//! kink is smoothed with a band width decaying geometrically from
//! `smoothing_start` to `smoothing_end` over the epochs. The epoch objective
//! is the unsmoothed loss on all paths; the best epoch is kept, training stops
//! after `patience` epochs without improvement, and five consecutive
//! increases that leave the objective above its starting value are reported
//! as divergence.
//!
//! After training, the output layer can be refitted exactly: with the hidden
//! layers frozen, the output is linear in its weights, so the same linear
//! solvers as for `Linear` give the optimal last layer.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::loss::{LossKind, LossSpec};
use crate::rng::{CounterRng, StreamKey};
use crate::scalar::{compensated_sum, Real};
use crate::solvers::{self, SolverOptions};

/// Regression data for one period.
#[derive(Debug, Clone)]
pub struct StatePanel<T: Real> {
    /// State `Z(t)`, one row per path.
    pub features: Array2<T>,
    /// `Y(t+1)`.
    pub next_payoffs: Array2<T>,
    /// `Y(t)`.
    pub now_prices: Array2<T>,
    /// `rho_{t+1}`.
    pub targets: Vec<T>,
}

impl<T: Real> StatePanel<T> {
    pub fn new(features: Array2<T>, next_payoffs: Array2<T>, now_prices: Array2<T>, targets: Vec<T>) -> Result<Self> {
        let m = features.nrows();
        if next_payoffs.nrows() != m || now_prices.nrows() != m || targets.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "row counts differ: features {m}, next payoffs {}, prices {}, targets {}",
                next_payoffs.nrows(),
                now_prices.nrows(),
                targets.len()
            )));
        }
        if next_payoffs.ncols() != now_prices.ncols() {
            return Err(Error::DimensionMismatch("payoff and price columns differ".into()));
        }
        let all = features.iter().chain(next_payoffs.iter()).chain(now_prices.iter()).chain(targets.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("state panel", "values must be finite"));
        }
        Ok(Self {
            features,
            next_payoffs,
            now_prices,
            targets,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.targets.len()
    }

    pub fn n_assets(&self) -> usize {
        self.next_payoffs.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub cosine_decay: bool,
    pub patience: usize,
    pub seed: u64,
    pub smoothing_start: f64,
    pub smoothing_end: f64,
    pub refit_output_layer: bool,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            hidden: vec![10, 10, 10],
            epochs: 200,
            batch_size: 1024,
            step_size: 1e-3,
            cosine_decay: true,
            patience: 20,
            seed: 0,
            smoothing_start: 1e-1,
            smoothing_end: 1e-3,
            refit_output_layer: true,
        }
    }
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("regressor.hidden", "needs at least one layer, all sizes at least 1"));
        }
        if self.epochs < 1 {
            return Err(Error::invalid("regressor.epochs", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("regressor.batch_size", "must be at least 1"));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid("regressor.step_size", "must be positive"));
        }
        if !(self.smoothing_start >= self.smoothing_end && self.smoothing_end >= 0.0) {
            return Err(Error::invalid("regressor.smoothing_start", "need smoothing_start >= smoothing_end >= 0"));
        }
        Ok(())
    }
}

/// Monomial `prod_f z_f^{e_f}`; an empty or all-zero exponent list is the intercept.
pub type Term = Vec<i32>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressorSpec {
    Linear {
        /// Defaults to an intercept plus each feature.
        #[serde(default)]
        basis: Option<Vec<Term>>,
    },
    Mlp(MlpSpec),
}

impl Default for RegressorSpec {
    fn default() -> Self {
        RegressorSpec::Mlp(MlpSpec::default())
    }
}

impl RegressorSpec {
    pub fn linear() -> Self {
        RegressorSpec::Linear { basis: None }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RegressorSpec::Linear { basis: Some(b) } if b.is_empty() => {
                Err(Error::invalid("regressor.basis", "must contain at least one term"))
            }
            RegressorSpec::Linear { .. } => Ok(()),
            RegressorSpec::Mlp(s) => s.validate(),
        }
    }
}

fn affine_basis(m: usize) -> Vec<Term> {
    let mut b = vec![vec![0; m]];
    for f in 0..m {
        let mut e = vec![0; m];
        e[f] = 1;
        b.push(e);
    }
    b
}

fn eval_term<T: Real>(term: &[i32], z: &[T]) -> T {
    term.iter().zip(z).fold(T::one(), |acc, (&e, &v)| if e == 0 { acc } else { acc * v.powi(e) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace<T> {
    pub final_objective: T,
    pub epochs_run: usize,
    pub converged: bool,
    /// Unsmoothed objective after each epoch (network models only).
    pub history: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model<T> {
    Linear {
        terms: Vec<Term>,
        /// `terms x assets`, row-major.
        coefficients: Vec<T>,
    },
    Mlp {
        /// Features used as inputs (zero-variance ones are dropped).
        inputs: Vec<usize>,
        mean: Vec<T>,
        sd: Vec<T>,
        /// Layer widths from input to output.
        sizes: Vec<usize>,
        params: Vec<T>,
        /// Multiplier from network output to asset units.
        unit_scale: Vec<T>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRegressor<T> {
    pub n_features: usize,
    pub n_assets: usize,
    pub loss: LossSpec<T>,
    pub model: Model<T>,
    pub trace: TrainingTrace<T>,
    pub warnings: Vec<String>,
}

const MODEL_FORMAT: &str = "fairval-regressor";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile<T> {
    format: String,
    version: u32,
    spec: RegressorSpec,
    fitted: FittedRegressor<T>,
}

impl<T: Real + Serialize + for<'de> Deserialize<'de>> FittedRegressor<T> {
    /// JSON dump with a versioned header and the spec it was fitted with.
    pub fn to_json(&self, spec: &RegressorSpec) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            spec: spec.clone(),
            fitted: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<(RegressorSpec, Self)> {
        let file: ModelFile<T> = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model file {} v{}", file.format, file.version)));
        }
        Ok((file.spec, file.fitted))
    }
}

impl<T: Real> FittedRegressor<T> {
    pub fn predict(&self, state: &[T]) -> Result<Vec<T>> {
        if state.len() != self.n_features {
            return Err(Error::DimensionMismatch(format!(
                "state has {} features, model expects {}",
                state.len(),
                self.n_features
            )));
        }
        Ok(self.predict_unchecked(state))
    }

    fn predict_unchecked(&self, z: &[T]) -> Vec<T> {
        let n = self.n_assets;
        match &self.model {
            Model::Linear { terms, coefficients } => {
                let mut out = vec![T::zero(); n];
                for (k, term) in terms.iter().enumerate() {
                    let phi = eval_term(term, z);
                    for (j, o) in out.iter_mut().enumerate() {
                        *o += coefficients[k * n + j] * phi;
                    }
                }
                out
            }
            Model::Mlp {
                inputs,
                mean,
                sd,
                sizes,
                params,
                unit_scale,
            } => {
                let x: Vec<T> = inputs.iter().enumerate().map(|(a, &f)| (z[f] - mean[a]) / sd[a]).collect();
                let net = Net::new(sizes);
                let mut ws = net.workspace();
                net.forward(params, &x, &mut ws);
                ws.acts.last().unwrap().iter().zip(unit_scale).map(|(o, s)| *o * *s).collect()
            }
        }
    }

    /// Strategies for every row of `features`.
    pub fn predict_batch(&self, features: ArrayView2<T>) -> Result<Array2<T>> {
        if features.ncols() != self.n_features {
            return Err(Error::DimensionMismatch(format!(
                "state has {} features, model expects {}",
                features.ncols(),
                self.n_features
            )));
        }
        let rows: Vec<Vec<T>> = (0..features.nrows())
            .into_par_iter()
            .map(|i| self.predict_unchecked(&features.row(i).to_vec()))
            .collect();
        let mut out = Array2::zeros((features.nrows(), self.n_assets));
        for (i, r) in rows.into_iter().enumerate() {
            for (j, v) in r.into_iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        Ok(out)
    }
}

/// Fits `spec` on `panel` under `loss`. `stream` separates the random
/// streams of different fits sharing one spec seed.
pub fn fit<T: Real>(spec: &RegressorSpec, panel: &StatePanel<T>, loss: &LossSpec<T>, stream: u64) -> Result<FittedRegressor<T>> {
    spec.validate()?;
    loss.validate()?;
    let loss = loss.exact();
    match spec {
        RegressorSpec::Linear { basis } => {
            let terms = basis.clone().unwrap_or_else(|| affine_basis(panel.features.ncols()));
            if let Some(t) = terms.iter().find(|t| !t.is_empty() && t.len() != panel.features.ncols()) {
                return Err(Error::invalid("regressor.basis", format!("term {t:?} does not match {} features", panel.features.ncols())));
            }
            fit_linear(&terms, panel, &loss)
        }
        RegressorSpec::Mlp(mlp) => fit_mlp(mlp, panel, &loss, stream),
    }
}

fn is_intercept(term: &[i32]) -> bool {
    term.iter().all(|&e| e == 0)
}

fn fit_linear<T: Real>(terms: &[Term], panel: &StatePanel<T>, loss: &LossSpec<T>) -> Result<FittedRegressor<T>> {
    let m = panel.n_paths();
    let n = panel.n_assets();
    let mut warnings = Vec::new();
    let mut kept: Vec<Term> = Vec::new();
    let mut columns: Vec<Vec<T>> = Vec::new();
    let mut have_constant = false;
    for term in terms {
        let col: Vec<T> = (0..m).map(|i| eval_term(term, panel.features.row(i).as_slice().unwrap_or(&panel.features.row(i).to_vec()))).collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("regressor.basis", format!("term {term:?} is not finite on the sample")));
        }
        let sd = crate::scalar::std_dev(&col);
        let scale = crate::scalar::scale_of(&col);
        let constant = sd <= scale * T::tolerance();
        if constant {
            if have_constant {
                if !is_intercept(term) {
                    warnings.push(format!("dropped zero-variance basis term {term:?}"));
                }
                continue;
            }
            have_constant = true;
        }
        kept.push(term.clone());
        columns.push(col);
    }
    let p = kept.len() * n;
    let mut x = Array2::<T>::zeros((m, p));
    for i in 0..m {
        for (k, col) in columns.iter().enumerate() {
            for j in 0..n {
                x[[i, k * n + j]] = col[i] * panel.next_payoffs[[i, j]];
            }
        }
    }
    let y = ArrayView1::from(&panel.targets[..]);
    let fit = solvers::minimise(x.view(), y, loss, None, &SolverOptions::default())?;
    Ok(FittedRegressor {
        n_features: panel.features.ncols(),
        n_assets: n,
        loss: *loss,
        model: Model::Linear {
            terms: kept,
            coefficients: fit.coefficients,
        },
        trace: TrainingTrace {
            final_objective: fit.objective,
            epochs_run: 1,
            converged: fit.converged,
            history: Vec::new(),
        },
        warnings,
    })
}

/// Layer geometry of a fully connected network stored as one flat
/// parameter vector: for each layer the `out x in` weights (row-major)
/// followed by `out` biases.
#[derive(Debug, Clone)]
pub struct Net {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

pub struct Workspace<T> {
    pub acts: Vec<Vec<T>>,
    deltas: Vec<Vec<T>>,
}

impl Net {
    pub fn new(sizes: &[usize]) -> Self {
        let mut offsets = vec![0];
        for w in sizes.windows(2) {
            let last = *offsets.last().unwrap();
            offsets.push(last + w[0] * w[1] + w[1]);
        }
        Self {
            sizes: sizes.to_vec(),
            offsets,
        }
    }

    pub fn n_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn workspace<T: Real>(&self) -> Workspace<T> {
        Workspace {
            acts: self.sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
            deltas: self.sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
        }
    }

    /// Forward pass; `ws.acts[l]` holds post-activation values (the output
    /// layer is linear). Hidden pre-activations are recoverable from the
    /// sign of the activations, which is all backpropagation needs for ReLU.
    pub fn forward<T: Real>(&self, params: &[T], x: &[T], ws: &mut Workspace<T>) {
        ws.acts[0].copy_from_slice(x);
        let last = self.layers() - 1;
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &params[self.offsets[l]..self.offsets[l] + n_in * n_out];
            let b = &params[self.offsets[l] + n_in * n_out..self.offsets[l + 1]];
            let (prev, next) = ws.acts.split_at_mut(l + 1);
            let input = &prev[l];
            for (o, out) in next[0].iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut z = b[o];
                for (a, v) in row.iter().zip(input) {
                    z += *a * *v;
                }
                *out = if l < last { z.max(T::zero()) } else { z };
            }
        }
    }

    /// Adds `d(output . upstream)/d params` to `grad` for the input of the
    /// last forward pass.
    pub fn backward<T: Real>(&self, params: &[T], upstream: &[T], ws: &mut Workspace<T>, grad: &mut [T]) {
        let layers = self.layers();
        ws.deltas[layers].copy_from_slice(upstream);
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let (dprev, dnext) = ws.deltas.split_at_mut(l + 1);
            let delta = &dnext[0];
            let input = &ws.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == T::zero() {
                    continue;
                }
                let g = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (gv, a) in g.iter_mut().zip(input) {
                    *gv += d * *a;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &params[off..off + n_in * n_out];
                let back = &mut dprev[l];
                for (i, bv) in back.iter_mut().enumerate() {
                    if input[i] > T::zero() {
                        let mut s = T::zero();
                        for o in 0..n_out {
                            s += w[o * n_in + i] * delta[o];
                        }
                        *bv = s;
                    } else {
                        *bv = T::zero();
                    }
                }
            }
        }
    }
}

/// Rescaled training problem for a network: standardised inputs `x`,
/// payoffs `y` and targets `t`, minimising `mean loss(t_i - N(x_i) . y_i)`.
pub struct MlpProblem<T: Real> {
    pub net: Net,
    pub x: Array2<T>,
    pub y: Array2<T>,
    pub t: Vec<T>,
}

const GRAD_CHUNK: usize = 256;

impl<T: Real> MlpProblem<T> {
    fn sample_residual(&self, params: &[T], i: usize, ws: &mut Workspace<T>) -> T {
        self.net.forward(params, self.x.row(i).as_slice().unwrap(), ws);
        let out = ws.acts.last().unwrap();
        let mut fit = T::zero();
        for (j, o) in out.iter().enumerate() {
            fit += *o * self.y[[i, j]];
        }
        self.t[i] - fit
    }

    /// Mean loss over `rows` (all rows when `None`).
    pub fn objective(&self, params: &[T], loss: &LossSpec<T>, rows: Option<&[usize]>) -> T {
        let idx: Vec<usize> = match rows {
            Some(r) => r.to_vec(),
            None => (0..self.t.len()).collect(),
        };
        let partial: Vec<T> = idx
            .par_chunks(linalg::REDUCE_CHUNK)
            .map(|chunk| {
                let mut ws = self.net.workspace();
                compensated_sum(chunk.iter().map(|&i| loss.eval(self.sample_residual(params, i, &mut ws))))
            })
            .collect();
        compensated_sum(partial) / T::from_usize_lossy(idx.len())
    }

    /// Mean loss and its gradient over `rows`.
    pub fn objective_and_gradient(&self, params: &[T], loss: &LossSpec<T>, rows: &[usize]) -> (T, Vec<T>) {
        let np = self.net.n_params();
        let n_out = self.y.ncols();
        let partial: Vec<(T, Vec<T>)> = rows
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut ws = self.net.workspace();
                let mut grad = vec![T::zero(); np];
                let mut up = vec![T::zero(); n_out];
                let mut f = T::zero();
                for &i in chunk {
                    let r = self.sample_residual(params, i, &mut ws);
                    f += loss.eval(r);
                    let d = loss.subgradient(r);
                    for (j, u) in up.iter_mut().enumerate() {
                        *u = -d * self.y[[i, j]];
                    }
                    self.net.backward(params, &up, &mut ws, &mut grad);
                }
                (f, grad)
            })
            .collect();
        let inv = T::one() / T::from_usize_lossy(rows.len());
        let mut grad = vec![T::zero(); np];
        let mut f = T::zero();
        for (pf, pg) in partial {
            f += pf;
            for (g, v) in grad.iter_mut().zip(pg) {
                *g += v;
            }
        }
        (f * inv, grad.into_iter().map(|g| g * inv).collect())
    }

    /// Last hidden layer activations for every row.
    fn hidden_features(&self, params: &[T]) -> Array2<T> {
        let h = self.net.sizes[self.net.sizes.len() - 2];
        let rows: Vec<Vec<T>> = (0..self.t.len())
            .into_par_iter()
            .map_init(
                || self.net.workspace(),
                |ws, i| {
                    self.net.forward(params, self.x.row(i).as_slice().unwrap(), ws);
                    ws.acts[ws.acts.len() - 2].clone()
                },
            )
            .collect();
        Array2::from_shape_fn((self.t.len(), h), |(i, k)| rows[i][k])
    }
}

fn rms<T: Real>(v: impl Iterator<Item = T>) -> T {
    let mut n = 0usize;
    let s = compensated_sum(v.map(|x| {
        n += 1;
        x * x
    }));
    (s / T::from_usize_lossy(n.max(1))).sqrt()
}

fn fit_mlp<T: Real>(spec: &MlpSpec, panel: &StatePanel<T>, loss: &LossSpec<T>, stream: u64) -> Result<FittedRegressor<T>> {
    let m = panel.n_paths();
    let n = panel.n_assets();
    let n_features = panel.features.ncols();
    let mut warnings = Vec::new();
    let mut inputs = Vec::new();
    let (mut means, mut sds) = (Vec::new(), Vec::new());
    for f in 0..n_features {
        let col = panel.features.column(f).to_vec();
        let mu = crate::scalar::mean(&col);
        let sd = crate::scalar::std_dev(&col);
        if sd <= crate::scalar::scale_of(&col) * T::tolerance() {
            warnings.push(format!("dropped zero-variance feature {f}"));
            continue;
        }
        inputs.push(f);
        means.push(mu);
        sds.push(sd);
    }
    if inputs.is_empty() {
        // constant state: the strategy is a constant vector
        let mut fitted = fit_linear(&[vec![0; n_features]], panel, loss)?;
        fitted.warnings.splice(0..0, warnings);
        return Ok(fitted);
    }

    let s = rms(panel.targets.iter().copied()).max(T::min_positive_value());
    let col_scale: Vec<T> = (0..n)
        .map(|j| rms(panel.next_payoffs.column(j).iter().copied()).max(T::min_positive_value()))
        .collect();
    let x = Array2::from_shape_fn((m, inputs.len()), |(i, a)| (panel.features[[i, inputs[a]]] - means[a]) / sds[a]);
    let y = Array2::from_shape_fn((m, n), |(i, j)| panel.next_payoffs[[i, j]] / col_scale[j]);
    let t: Vec<T> = panel.targets.iter().map(|v| *v / s).collect();
    let mut sizes = vec![inputs.len()];
    sizes.extend_from_slice(&spec.hidden);
    sizes.push(n);
    let problem = MlpProblem {
        net: Net::new(&sizes),
        x,
        y,
        t,
    };

    let mut params = init_params(&problem, spec.seed, stream, loss)?;
    let (best, trace) = train(&problem, spec, loss, &mut params, stream)?;
    params = best;
    let mut trace = trace;

    if spec.refit_output_layer {
        match refit_output_layer(&problem, &params, loss) {
            Ok(Some((p, obj))) if obj <= trace.final_objective => {
                params = p;
                trace.final_objective = obj;
            }
            Ok(_) => {}
            Err(e) => warnings.push(format!("output layer refit skipped: {e}")),
        }
    }
    // report the objective in the original units
    let factor = if loss.kind == LossKind::KoenkerBassett { s } else { s * s };
    trace.final_objective *= factor;
    trace.history.iter_mut().for_each(|h| *h *= factor);

    Ok(FittedRegressor {
        n_features,
        n_assets: n,
        loss: *loss,
        model: Model::Mlp {
            inputs,
            mean: means,
            sd: sds,
            sizes,
            params,
            unit_scale: col_scale.iter().map(|c| s / *c).collect(),
        },
        trace,
        warnings,
    })
}

/// He-normal hidden weights, small output weights, zero hidden biases and
/// output biases at the best constant strategy.
fn init_params<T: Real>(problem: &MlpProblem<T>, seed: u64, stream: u64, loss: &LossSpec<T>) -> Result<Vec<T>> {
    let net = &problem.net;
    let mut rng = CounterRng::new(StreamKey::new(seed, u64::MAX, stream, 0));
    let mut params = vec![T::zero(); net.n_params()];
    let layers = net.layers();
    for l in 0..layers {
        let (n_in, n_out) = (net.sizes[l], net.sizes[l + 1]);
        let sd = if l + 1 < layers {
            (2.0 / n_in as f64).sqrt()
        } else {
            0.1 / (n_in as f64).sqrt()
        };
        for w in &mut params[net.offsets[l]..net.offsets[l] + n_in * n_out] {
            *w = T::lit(sd * rng.normal());
        }
    }
    let constant = solvers::minimise(
        problem.y.view(),
        ArrayView1::from(&problem.t[..]),
        loss,
        None,
        &SolverOptions::default(),
    )?;
    let l = layers - 1;
    let bias_off = net.offsets[l] + net.sizes[l] * net.sizes[l + 1];
    params[bias_off..bias_off + constant.coefficients.len()].copy_from_slice(&constant.coefficients);
    Ok(params)
}

fn train<T: Real>(
    problem: &MlpProblem<T>,
    spec: &MlpSpec,
    loss: &LossSpec<T>,
    params: &mut [T],
    stream: u64,
) -> Result<(Vec<T>, TrainingTrace<T>)> {
    let m = problem.t.len();
    let np = params.len();
    let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
    let mut m1 = vec![T::zero(); np];
    let mut m2 = vec![T::zero(); np];
    let mut step = 0i32;
    let start = problem.objective(params, loss, None);
    let mut best = params.to_vec();
    let mut best_obj = start;
    let mut prev = start;
    let mut rising = 0;
    let mut since_best = 0;
    let mut history = Vec::with_capacity(spec.epochs);
    let mut order: Vec<usize> = (0..m).collect();
    let smoothing = |e: usize| -> T {
        if loss.kind != LossKind::KoenkerBassett || spec.smoothing_start == 0.0 {
            return T::zero();
        }
        let frac = if spec.epochs > 1 { e as f64 / (spec.epochs - 1) as f64 } else { 1.0 };
        let end = spec.smoothing_end.max(1e-300);
        T::lit(spec.smoothing_start * (end / spec.smoothing_start).powf(frac))
    };
    let mut converged = true;
    let mut epochs_run = 0;
    for epoch in 0..spec.epochs {
        epochs_run = epoch + 1;
        let lr = if spec.cosine_decay {
            spec.step_size * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / spec.epochs as f64).cos())
        } else {
            spec.step_size
        };
        let lr = T::lit(lr);
        let smooth_loss = loss.with_smoothing(smoothing(epoch))?;
        let mut shuffle = CounterRng::new(StreamKey::new(spec.seed, u64::MAX - 1, stream, epoch as u64));
        shuffle.shuffle(&mut order);
        for batch in order.chunks(spec.batch_size) {
            let (_, g) = problem.objective_and_gradient(params, &smooth_loss, batch);
            step += 1;
            let c1 = T::one() - b1.powi(step);
            let c2 = T::one() - b2.powi(step);
            for k in 0..np {
                m1[k] = b1 * m1[k] + (T::one() - b1) * g[k];
                m2[k] = b2 * m2[k] + (T::one() - b2) * g[k] * g[k];
                params[k] -= lr * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
            }
        }
        let obj = problem.objective(params, loss, None);
        if !obj.is_finite() {
            return Err(Error::NonConvergence {
                what: "network training (objective not finite)".into(),
                iterations: epoch + 1,
            });
        }
        history.push(obj);
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(params);
            since_best = 0;
        } else {
            since_best += 1;
        }
        rising = if obj > prev { rising + 1 } else { 0 };
        prev = obj;
        if rising >= 5 && obj > start {
            return Err(Error::NonConvergence {
                what: "network training (objective diverging)".into(),
                iterations: epoch + 1,
            });
        }
        if since_best >= spec.patience {
            break;
        }
    }
    if best_obj > start {
        converged = false;
    }
    Ok((
        best,
        TrainingTrace {
            final_objective: best_obj,
            epochs_run,
            converged,
            history,
        },
    ))
}

/// Optimal output layer for frozen hidden layers, or `None` when the
/// hidden features are degenerate.
fn refit_output_layer<T: Real>(problem: &MlpProblem<T>, params: &[T], loss: &LossSpec<T>) -> Result<Option<(Vec<T>, T)>> {
    let net = &problem.net;
    let hidden = problem.hidden_features(params);
    let (m, h) = hidden.dim();
    let n = problem.y.ncols();
    // columns: (hidden unit k or bias) x asset j
    let terms = h + 1;
    let full = Array2::from_shape_fn((m, terms * n), |(i, c)| {
        let (k, j) = (c / n, c % n);
        let f = if k < h { hidden[[i, k]] } else { T::one() };
        f * problem.y[[i, j]]
    });
    let zero = ndarray::Array1::<T>::zeros(m);
    let (g, _) = linalg::weighted_moments(full.view(), zero.view(), None);
    let (keep, _) = linalg::independent_columns(&g, 1e-9);
    if keep.is_empty() {
        return Ok(None);
    }
    let x = full.select(ndarray::Axis(1), &keep);
    let l = net.layers() - 1;
    let off = net.offsets[l];
    let current: Vec<T> = keep
        .iter()
        .map(|&c| {
            let (k, j) = (c / n, c % n);
            if k < h {
                params[off + j * h + k]
            } else {
                params[off + h * n + j]
            }
        })
        .collect();
    let fit = solvers::minimise(x.view(), ArrayView1::from(&problem.t[..]), loss, Some(&current), &SolverOptions::default())?;
    let mut out = params.to_vec();
    out[off..].iter_mut().for_each(|v| *v = T::zero());
    for (&c, &beta) in keep.iter().zip(&fit.coefficients) {
        let (k, j) = (c / n, c % n);
        if k < h {
            out[off + j * h + k] = beta;
        } else {
            out[off + h * n + j] = beta;
        }
    }
    let obj = problem.objective(&out, loss, None);
    Ok(Some((out, obj)))
}

/// Network problem over a raw panel, exposed for gradient checks.
pub fn mlp_problem<T: Real>(sizes_hidden: &[usize], panel: &StatePanel<T>) -> MlpProblem<T> {
    let m = panel.n_paths();
    let mut sizes = vec![panel.features.ncols()];
    sizes.extend_from_slice(sizes_hidden);
    sizes.push(panel.n_assets());
    MlpProblem {
        net: Net::new(&sizes),
        x: panel.features.clone(),
        y: panel.next_payoffs.clone(),
        t: panel.targets[..m].to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(m: usize, seed: u64) -> StatePanel<f64> {
        let mut rng = CounterRng::new(StreamKey::new(seed, 0, 0, 0));
        let mut feats = Array2::zeros((m, 2));
        let mut next = Array2::zeros((m, 2));
        let mut now = Array2::zeros((m, 2));
        let mut targets = Vec::with_capacity(m);
        for i in 0..m {
            let z0 = 1.0 + 0.2 * rng.normal();
            let z1 = 900.0 + 10.0 * rng.normal();
            feats[[i, 0]] = z0;
            feats[[i, 1]] = z1;
            now[[i, 0]] = 1.0;
            now[[i, 1]] = z0;
            next[[i, 0]] = 1.01;
            next[[i, 1]] = z0 * (0.01 + 0.1 * rng.normal()).exp();
            // affine strategy in the state
            let b0 = 100.0 + 0.5 * z1 - 50.0 * z0;
            let b1 = 300.0 + 200.0 * z0;
            targets.push(b0 * next[[i, 0]] + b1 * next[[i, 1]]);
        }
        StatePanel::new(feats, next, now, targets).unwrap()
    }

    #[test]
    fn linear_quadratic_orthogonality() {
        let p = synthetic(2000, 1);
        let mut noisy = p.clone();
        let mut rng = CounterRng::new(StreamKey::new(7, 0, 0, 0));
        noisy.targets.iter_mut().for_each(|t| *t += 20.0 * rng.normal());
        let f = fit(&RegressorSpec::linear(), &noisy, &LossSpec::quadratic(), 0).unwrap();
        let units = f.predict_batch(noisy.features.view()).unwrap();
        let resid: Vec<f64> = (0..2000)
            .map(|i| noisy.targets[i] - (units[[i, 0]] * noisy.next_payoffs[[i, 0]] + units[[i, 1]] * noisy.next_payoffs[[i, 1]]))
            .collect();
        // every design column: phi_k(z) * Y_j
        let basis = affine_basis(2);
        for term in &basis {
            for j in 0..2 {
                let col: Vec<f64> = (0..2000).map(|i| eval_term(term, &[noisy.features[[i, 0]], noisy.features[[i, 1]]]) * noisy.next_payoffs[[i, j]]).collect();
                let dot: f64 = col.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() / 2000.0;
                let scale = crate::scalar::scale_of(&col) * crate::scalar::scale_of(&resid);
                assert!(dot.abs() <= 1e-8 * scale, "term {term:?} asset {j}: {dot}");
            }
        }
    }

    #[test]
    fn linear_recovers_affine_strategy_exactly() {
        let p = synthetic(500, 2);
        for loss in [LossSpec::quadratic(), LossSpec::koenker_bassett(0.95).unwrap()] {
            let f = fit(&RegressorSpec::linear(), &p, &loss, 0).unwrap();
            let b = f.predict(&[1.1, 905.0]).unwrap();
            assert!((b[0] - (100.0 + 0.5 * 905.0 - 55.0)).abs() < 1e-6, "{b:?}");
            assert!((b[1] - 520.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_features_reduce_to_one_period_hedge() {
        let mut p = synthetic(800, 3);
        p.features.fill(1.0);
        let f = fit(&RegressorSpec::linear(), &p, &LossSpec::quadratic(), 0).unwrap();
        let panel = crate::hedge::AssetPanel::new(vec![1.0, 1.0], p.next_payoffs.clone()).unwrap();
        let s = crate::risk::Sample::new(p.targets.clone()).unwrap();
        let h = crate::hedge::ols_hedge(&s, &panel).unwrap();
        let b = f.predict(&[1.0, 1.0]).unwrap();
        for (a, c) in b.iter().zip(&h.units) {
            assert!((a - c).abs() < 1e-9 * c.abs().max(1.0));
        }
        let m = fit(&RegressorSpec::Mlp(MlpSpec::default()), &p, &LossSpec::quadratic(), 0).unwrap();
        assert!(matches!(m.model, Model::Linear { .. }));
        assert!(m.warnings.len() == 2);
    }

    #[test]
    fn zero_hidden_weights_give_output_bias() {
        let net = Net::new(&[2, 4, 3]);
        let mut params = vec![0.0; net.n_params()];
        let bias_off = net.offsets[1] + 4 * 3;
        params[bias_off..].copy_from_slice(&[1.0, -2.0, 3.5]);
        let mut ws = net.workspace();
        for x in [[0.3, -9.0], [100.0, 2.0]] {
            net.forward(&params, &x, &mut ws);
            assert_eq!(ws.acts[2], vec![1.0, -2.0, 3.5]);
        }
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let p = synthetic(600, 4);
        let spec = RegressorSpec::Mlp(MlpSpec {
            epochs: 5,
            batch_size: 64,
            ..MlpSpec::default()
        });
        let a = fit(&spec, &p, &LossSpec::koenker_bassett(0.9).unwrap(), 3).unwrap();
        let b = fit(&spec, &p, &LossSpec::koenker_bassett(0.9).unwrap(), 3).unwrap();
        assert_eq!(a, b);
        let c = fit(&spec, &p, &LossSpec::koenker_bassett(0.9).unwrap(), 4).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn best_snapshot_is_no_worse_than_history() {
        let p = synthetic(600, 5);
        let spec = RegressorSpec::Mlp(MlpSpec {
            epochs: 15,
            batch_size: 64,
            refit_output_layer: false,
            ..MlpSpec::default()
        });
        let f = fit(&spec, &p, &LossSpec::quadratic(), 0).unwrap();
        let min = f.trace.history.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(f.trace.final_objective <= min * (1.0 + 1e-12));
    }

    #[test]
    fn json_roundtrip() {
        let p = synthetic(300, 6);
        let spec = RegressorSpec::Mlp(MlpSpec {
            epochs: 3,
            ..MlpSpec::default()
        });
        let f = fit(&spec, &p, &LossSpec::quadratic(), 0).unwrap();
        let text = f.to_json(&spec).unwrap();
        let (spec2, g) = FittedRegressor::<f64>::from_json(&text).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(g, f);
        assert!(FittedRegressor::<f64>::from_json(&text.replace("fairval-regressor", "other")).is_err());
    }

    #[test]
    fn predict_checks_dimension() {
        let p = synthetic(100, 7);
        let f = fit(&RegressorSpec::linear(), &p, &LossSpec::quadratic(), 0).unwrap();
        assert!(matches!(f.predict(&[1.0]), Err(Error::DimensionMismatch(_))));
    }
}
