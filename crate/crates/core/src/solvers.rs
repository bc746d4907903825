//! Linear-in-parameters minimisers of `mean loss(y - X beta)`.
//!
//! These operate on a raw design `X` (rows are scenarios) and are shared by
//! the one-period hedges and the linear regressor.
//!
//! The quantile solver runs in two stages. A damped Newton method minimises
//! the Huber-smoothed Koenker-Bassett objective for a decreasing sequence of
//! band widths, warm-started from least squares. The result is then polished
//! into an exact optimum of the piecewise-linear objective by descending
//! along the edges of the polyhedron: at a vertex `p` residuals are zero
//! (the basis), each edge frees one of them, and an exact line search along
//! the edge is a weighted median of the residual breakpoints.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, REDUCE_CHUNK};
use crate::loss::{LossKind, LossSpec};
use crate::scalar::{compensated_sum, mean, Real};

/// Redundancy threshold on the equilibrated Gram matrix.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_condition: f64,
    /// Band widths (relative to the residual scale) for the smoothed stage.
    pub smoothing_schedule: Vec<f64>,
    pub newton_iterations: usize,
    pub max_pivots: usize,
    pub irls_iterations: usize,
    pub irls_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_condition: MAX_CONDITION,
            smoothing_schedule: vec![1e-1, 1e-2, 1e-3],
            newton_iterations: 60,
            max_pivots: 50_000,
            irls_iterations: 500,
            irls_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit<T> {
    pub coefficients: Vec<T>,
    /// Mean loss at the solution (unsmoothed).
    pub objective: T,
    pub iterations: usize,
    pub converged: bool,
    /// False when a flat optimal edge was detected; the coefficients are then
    /// the minimum-norm point on that edge.
    pub unique: bool,
}

fn check_dims<T: Real>(x: &ArrayView2<T>, y: &ArrayView1<T>) -> Result<()> {
    let (m, p) = x.dim();
    if y.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for a design with {m} rows",
            y.len()
        )));
    }
    if p == 0 || m <= p {
        return Err(Error::DimensionMismatch(format!(
            "need more rows than columns, got {m} x {p}"
        )));
    }
    Ok(())
}

fn check_rank<T: Real>(x: ArrayView2<T>, max_condition: f64) -> Result<()> {
    let y0 = Array1::<T>::zeros(x.nrows());
    let (g, _) = linalg::weighted_moments(x, y0.view(), None);
    let cond = linalg::gram_condition(&g);
    if cond <= max_condition {
        Ok(())
    } else {
        let (_, dep) = linalg::independent_columns(&g, 1.0 / max_condition);
        Err(Error::RankDeficient {
            column: dep.unwrap_or(g.nrows() - 1),
            condition: cond,
        })
    }
}

pub fn residuals<T: Real>(x: ArrayView2<T>, y: ArrayView1<T>, beta: &[T]) -> Vec<T> {
    let fit = linalg::fitted(x, beta);
    y.iter().zip(fit).map(|(&a, f)| a - f).collect()
}

pub fn objective<T: Real>(x: ArrayView2<T>, y: ArrayView1<T>, beta: &[T], loss: &LossSpec<T>) -> T {
    let r = residuals(x, y, beta);
    mean(&r.iter().map(|&v| loss.eval(v)).collect::<Vec<_>>())
}

/// `X^T v / M` with a fixed-order chunked reduction.
fn xt_times<T: Real>(x: ArrayView2<T>, v: &[T]) -> Vec<T> {
    let (m, p) = x.dim();
    let partials: Vec<Vec<T>> = (0..m.div_ceil(REDUCE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * REDUCE_CHUNK;
            let hi = (lo + REDUCE_CHUNK).min(m);
            let mut acc = vec![T::zero(); p];
            for i in lo..hi {
                if v[i] != T::zero() {
                    for (a, &xv) in acc.iter_mut().zip(x.row(i)) {
                        *a += xv * v[i];
                    }
                }
            }
            acc
        })
        .collect();
    let mf = T::from_usize_lossy(m);
    (0..p)
        .map(|j| compensated_sum(partials.iter().map(|pa| pa[j])) / mf)
        .collect()
}

pub fn least_squares<T: Real>(x: ArrayView2<T>, y: ArrayView1<T>, opts: &SolverOptions) -> Result<LinearFit<T>> {
    check_dims(&x, &y)?;
    let beta = linalg::least_squares(x, y, None, opts.max_condition)?;
    let obj = objective(x, y, &beta, &LossSpec::quadratic());
    Ok(LinearFit {
        coefficients: beta,
        objective: obj,
        iterations: 1,
        converged: true,
        unique: true,
    })
}

/// Dispatches on the loss kind.
pub fn minimise<T: Real>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    loss: &LossSpec<T>,
    start: Option<&[T]>,
    opts: &SolverOptions,
) -> Result<LinearFit<T>> {
    match loss.kind {
        LossKind::Quadratic => least_squares(x, y, opts),
        LossKind::KoenkerBassett => quantile(x, y, loss.level, start, opts),
        LossKind::Expectile => expectile(x, y, loss.level, start, opts),
    }
}

/// Exact minimiser of the mean Koenker-Bassett loss at level `alpha`.
pub fn quantile<T: Real>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    alpha: T,
    start: Option<&[T]>,
    opts: &SolverOptions,
) -> Result<LinearFit<T>> {
    check_dims(&x, &y)?;
    check_rank(x, opts.max_condition)?;
    let loss = LossSpec::koenker_bassett(alpha)?;
    let mut beta = match start {
        Some(b) if b.len() == x.ncols() => b.to_vec(),
        _ => linalg::least_squares(x, y, None, opts.max_condition)?,
    };
    let r0 = residuals(x, y, &beta);
    let scale = crate::scalar::std_dev(&r0).max(T::tolerance() * crate::scalar::scale_of(y.as_slice().unwrap_or(&r0)));
    let mut newton_iters = 0;
    if scale > T::zero() {
        for &rel in &opts.smoothing_schedule {
            let smoothed = loss.with_smoothing(T::lit(rel) * scale)?;
            newton_iters += smoothed_newton(x, y, &smoothed, &mut beta, opts.newton_iterations);
        }
    }
    let polished = polish_vertex(x, y, loss.kb_slope(), &beta, opts.max_pivots)?;
    let obj = objective(x, y, &polished.beta, &loss);
    if !polished.converged {
        return Err(Error::NonConvergence {
            what: "quantile regression vertex descent".into(),
            iterations: polished.pivots,
        });
    }
    Ok(LinearFit {
        coefficients: polished.beta,
        objective: obj,
        iterations: newton_iters + polished.pivots,
        converged: true,
        unique: polished.unique,
    })
}

/// Damped Newton with Levenberg regularisation on a smoothed loss.
fn smoothed_newton<T: Real>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    loss: &LossSpec<T>,
    beta: &mut [T],
    max_iter: usize,
) -> usize {
    let p = beta.len();
    let mut f = objective(x, y, beta, loss);
    for it in 0..max_iter {
        let r = residuals(x, y, beta);
        let psi: Vec<T> = r.iter().map(|&v| -loss.subgradient(v)).collect();
        let grad = xt_times(x, &psi);
        let curv: Vec<T> = r.iter().map(|&v| loss.curvature(v)).collect();
        let (mut h, _) = linalg::weighted_moments(x, y, Some(&curv));
        let (g0, _) = linalg::weighted_moments(x, y, None);
        let mut lambda = T::lit(1e-8);
        let gnorm = grad.iter().fold(T::zero(), |a, v| a.max(v.abs()));
        if gnorm == T::zero() {
            return it;
        }
        let step = loop {
            let mut hd = h.clone();
            for j in 0..p {
                hd[[j, j]] += lambda * (g0[[j, j]] + h[[j, j]]);
            }
            if let Some(l) = linalg::cholesky(&hd) {
                let rhs = Array1::from_iter(grad.iter().map(|&g| -g));
                break linalg::cholesky_solve(&l, &rhs);
            }
            lambda *= T::lit(100.0);
            if lambda > T::lit(1e12) {
                return it;
            }
        };
        // backtracking on the smoothed objective
        let mut t = T::one();
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<T> = beta.iter().zip(step.iter()).map(|(&b, &s)| b + t * s).collect();
            let ft = objective(x, y, &trial, loss);
            if ft < f {
                let rel = (f - ft) / f.abs().max(T::min_positive_value());
                beta.copy_from_slice(&trial);
                f = ft;
                improved = true;
                if rel < T::lit(1e-12) {
                    return it + 1;
                }
                break;
            }
            t *= T::lit(0.5);
        }
        if !improved {
            return it + 1;
        }
        h.fill(T::zero());
    }
    max_iter
}

struct Vertex<T> {
    beta: Vec<T>,
    pivots: usize,
    converged: bool,
    unique: bool,
}

/// Picks `p` rows with small residuals that form a nonsingular basis.
fn initial_basis<T: Real>(x: ArrayView2<T>, r: &[T]) -> Option<Vec<usize>> {
    let p = x.ncols();
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r[a].abs().partial_cmp(&r[b].abs()).unwrap().then(a.cmp(&b)));
    let mut basis = Vec::with_capacity(p);
    let mut ortho: Vec<Vec<T>> = Vec::with_capacity(p);
    for &i in &order {
        let row: Vec<T> = x.row(i).to_vec();
        let norm = row.iter().map(|v| *v * *v).sum::<T>().sqrt();
        if norm == T::zero() {
            continue;
        }
        let mut v = row.clone();
        for q in &ortho {
            let d: T = v.iter().zip(q).map(|(a, b)| *a * *b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= d * *qi;
            }
        }
        let vn = v.iter().map(|a| *a * *a).sum::<T>().sqrt();
        if vn > norm * T::lit(1e-6) {
            ortho.push(v.into_iter().map(|a| a / vn).collect());
            basis.push(i);
            if basis.len() == p {
                return Some(basis);
            }
        }
    }
    None
}

fn basis_solution<T: Real>(x: ArrayView2<T>, y: ArrayView1<T>, basis: &[usize]) -> Option<(Array2<T>, Vec<T>)> {
    let xb = x.select(Axis(0), basis);
    let inv = linalg::invert(&xb)?;
    let yb = Array1::from_iter(basis.iter().map(|&i| y[i]));
    Some((inv.clone(), inv.dot(&yb).to_vec()))
}

/// Vertex descent to an exact minimiser of `sum rho(y - X beta)` where
/// `rho(u) = k u+ + u-`.
fn polish_vertex<T: Real>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    k: T,
    start: &[T],
    max_pivots: usize,
) -> Result<Vertex<T>> {
    let (m, p) = x.dim();
    let one = T::one();
    let rho = |u: T| if u > T::zero() { k * u } else { -u };
    let r_start = residuals(x, y, start);
    let mut basis = initial_basis(x, &r_start).ok_or(Error::RankDeficient {
        column: p - 1,
        condition: f64::INFINITY,
    })?;
    let (mut inv, mut beta) = basis_solution(x, y, &basis).ok_or(Error::RankDeficient {
        column: p - 1,
        condition: f64::INFINITY,
    })?;
    let y_scale = y.iter().fold(T::zero(), |a, v| a.max(v.abs())).max(T::min_positive_value());
    let zero_tol = y_scale * T::tolerance() * T::lit(10.0);
    let mut in_basis = vec![false; m];
    for &b in &basis {
        in_basis[b] = true;
    }

    for pivot in 0..=max_pivots {
        let r = residuals(x, y, &beta);
        // gradient of the non-degenerate part: g = sum psi(r_i) x_i
        let mut g = vec![T::zero(); p];
        let mut degenerate = Vec::new();
        for i in 0..m {
            if in_basis[i] {
                continue;
            }
            if r[i].abs() <= zero_tol {
                degenerate.push(i);
                continue;
            }
            let psi = if r[i] > T::zero() { k } else { -one };
            for (gj, &xv) in g.iter_mut().zip(x.row(i)) {
                *gj += psi * xv;
            }
        }
        // directional derivatives along +/- columns of the basis inverse
        let mut best: Option<(usize, T, T)> = None; // (basis slot, sign, derivative)
        let mut flat: Option<(usize, T)> = None;
        for j in 0..p {
            let d: Vec<T> = (0..p).map(|a| inv[[a, j]]).collect();
            let gd: T = g.iter().zip(&d).map(|(a, b)| *a * *b).sum();
            for sign in [one, -one] {
                let mut deriv = -sign * gd + if sign > T::zero() { one } else { k };
                for &i in &degenerate {
                    let a: T = x.row(i).iter().zip(&d).map(|(u, v)| *u * *v).sum::<T>() * sign;
                    deriv += rho(-a);
                }
                let mass: T = (one + k) * T::from_usize_lossy(m).sqrt();
                let tol = mass * T::tolerance() * T::lit(100.0);
                if deriv < -tol {
                    if best.is_none_or(|b| deriv < b.2) {
                        best = Some((j, sign, deriv));
                    }
                } else if deriv.abs() <= tol && flat.is_none() {
                    flat = Some((j, sign));
                }
            }
        }
        let Some((slot, sign, deriv)) = best else {
            let mut unique = true;
            if let Some((slot, sign)) = flat {
                unique = false;
                beta = min_norm_on_flat_edge(x, &r, &inv, slot, sign, &beta, &in_basis, zero_tol);
            }
            return Ok(Vertex {
                beta,
                pivots: pivot,
                converged: true,
                unique,
            });
        };
        if pivot == max_pivots {
            break;
        }
        let d: Vec<T> = (0..p).map(|a| sign * inv[[a, slot]]).collect();
        let a = linalg::fitted(x, &d);
        // breakpoints s_i = r_i / a_i > 0, slope increases by |a_i| (1 + k)
        let mut bps: Vec<(T, usize)> = (0..m)
            .filter(|&i| !in_basis[i] && a[i] != T::zero())
            .filter_map(|i| {
                let s = r[i] / a[i];
                (s > T::zero() && r[i].abs() > zero_tol).then_some((s, i))
            })
            .collect();
        bps.sort_by(|u, v| u.0.partial_cmp(&v.0).unwrap().then(u.1.cmp(&v.1)));
        let mut slope = deriv;
        let mut entering = None;
        for &(s, i) in &bps {
            slope += a[i].abs() * (one + k);
            if slope >= T::zero() {
                entering = Some((s, i));
                break;
            }
        }
        let Some((step, enter)) = entering else {
            return Err(Error::NonConvergence {
                what: "quantile regression line search (unbounded edge)".into(),
                iterations: pivot,
            });
        };
        let leave = basis[slot];
        in_basis[leave] = false;
        in_basis[enter] = true;
        basis[slot] = enter;
        match basis_solution(x, y, &basis) {
            Some((new_inv, new_beta)) => {
                inv = new_inv;
                beta = new_beta;
            }
            None => {
                // numerically singular basis: take the step directly and rebuild
                let moved: Vec<T> = beta.iter().zip(&d).map(|(b, dd)| *b + step * *dd).collect();
                let r = residuals(x, y, &moved);
                basis = initial_basis(x, &r).ok_or(Error::RankDeficient {
                    column: p - 1,
                    condition: f64::INFINITY,
                })?;
                in_basis.iter_mut().for_each(|v| *v = false);
                for &b in &basis {
                    in_basis[b] = true;
                }
                let (ni, nb) = basis_solution(x, y, &basis).ok_or(Error::RankDeficient {
                    column: p - 1,
                    condition: f64::INFINITY,
                })?;
                inv = ni;
                beta = nb;
            }
        }
    }
    Ok(Vertex {
        beta,
        pivots: max_pivots,
        converged: false,
        unique: true,
    })
}

/// Moves along a zero-derivative edge to the point of smallest Euclidean norm
/// before the first residual changes sign.
#[allow(clippy::too_many_arguments)]
fn min_norm_on_flat_edge<T: Real>(
    x: ArrayView2<T>,
    r: &[T],
    inv: &Array2<T>,
    slot: usize,
    sign: T,
    beta: &[T],
    in_basis: &[bool],
    zero_tol: T,
) -> Vec<T> {
    let p = beta.len();
    let d: Vec<T> = (0..p).map(|a| sign * inv[[a, slot]]).collect();
    let a = linalg::fitted(x, &d);
    let s_max = (0..r.len())
        .filter(|&i| !in_basis[i] && a[i] != T::zero() && r[i].abs() > zero_tol)
        .map(|i| r[i] / a[i])
        .filter(|s| *s > T::zero())
        .fold(T::infinity(), |acc, s| acc.min(s));
    let dd: T = d.iter().map(|v| *v * *v).sum();
    let bd: T = beta.iter().zip(&d).map(|(u, v)| *u * *v).sum();
    let s = (-bd / dd).max(T::zero()).min(s_max);
    if !s.is_finite() || s <= T::zero() {
        return beta.to_vec();
    }
    beta.iter().zip(&d).map(|(b, v)| *b + s * *v).collect()
}

fn sign_pattern_hash<T: Real>(r: &[T]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for chunk in r.chunks(64) {
        let mut bits = 0u64;
        for (b, v) in chunk.iter().enumerate() {
            if *v > T::zero() {
                bits |= 1 << b;
            }
        }
        bits.hash(&mut h);
    }
    h.finish()
}

/// Expectile regression by iteratively reweighted least squares: weight
/// `tau` on positive residuals and `1 - tau` on the rest.
pub fn expectile<T: Real>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    tau: T,
    start: Option<&[T]>,
    opts: &SolverOptions,
) -> Result<LinearFit<T>> {
    check_dims(&x, &y)?;
    check_rank(x, opts.max_condition)?;
    let loss = LossSpec::expectile(tau)?;
    let mut beta = match start {
        Some(b) if b.len() == x.ncols() => b.to_vec(),
        _ => linalg::least_squares(x, y, None, opts.max_condition)?,
    };
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let one_m_tau = T::one() - tau;
    for it in 0..opts.irls_iterations {
        let r = residuals(x, y, &beta);
        let key = sign_pattern_hash(&r);
        if let Some(&prev) = seen.get(&key) {
            if prev + 1 < it {
                return Err(Error::NonConvergence {
                    what: format!("expectile IRLS (sign pattern cycle of length {})", it - prev),
                    iterations: it,
                });
            }
        }
        seen.insert(key, it);
        let w: Vec<T> = r.iter().map(|&v| if v > T::zero() { tau } else { one_m_tau }).collect();
        let next = linalg::least_squares(x, y, Some(&w), f64::INFINITY)?;
        let diff = next.iter().zip(&beta).map(|(a, b)| (*a - *b).abs()).fold(T::zero(), T::max);
        let size = next.iter().fold(T::zero(), |a, v| a.max(v.abs())).max(T::min_positive_value());
        beta = next;
        if diff <= T::lit(opts.irls_tolerance) * size {
            let obj = objective(x, y, &beta, &loss);
            return Ok(LinearFit {
                coefficients: beta,
                objective: obj,
                iterations: it + 1,
                converged: true,
                unique: true,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "expectile IRLS".into(),
        iterations: opts.irls_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{CounterRng, StreamKey};

    fn design(m: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut rng = CounterRng::new(StreamKey::new(seed, 0, 0, 0));
        let mut x = Array2::zeros((m, 2));
        let mut y = Array1::zeros(m);
        for i in 0..m {
            let z = rng.normal();
            x[[i, 0]] = 1.0;
            x[[i, 1]] = 1.0 + 0.3 * z;
            y[i] = 2.0 + 3.0 * x[[i, 1]] + (0.5 + 0.5 * z.abs()) * rng.normal();
        }
        (x, y)
    }

    /// Exhaustive search over exact-fit pairs: the LP optimum lies at a vertex.
    fn brute_force(x: &Array2<f64>, y: &Array1<f64>, alpha: f64) -> (Vec<f64>, f64) {
        let loss = LossSpec::koenker_bassett(alpha).unwrap();
        let m = x.nrows();
        let mut best = (vec![0.0; 2], f64::INFINITY);
        for i in 0..m {
            for j in i + 1..m {
                let det = x[[i, 0]] * x[[j, 1]] - x[[i, 1]] * x[[j, 0]];
                if det.abs() < 1e-12 {
                    continue;
                }
                let b0 = (y[i] * x[[j, 1]] - x[[i, 1]] * y[j]) / det;
                let b1 = (x[[i, 0]] * y[j] - y[i] * x[[j, 0]]) / det;
                let f = objective(x.view(), y.view(), &[b0, b1], &loss);
                if f < best.1 {
                    best = (vec![b0, b1], f);
                }
            }
        }
        best
    }

    #[test]
    fn quantile_matches_exhaustive_vertex_search() {
        for (seed, alpha) in [(1, 0.5), (2, 0.9), (3, 0.99), (4, 0.25)] {
            let (x, y) = design(120, seed);
            let fit = quantile(x.view(), y.view(), alpha, None, &SolverOptions::default()).unwrap();
            let (_, best) = brute_force(&x, &y, alpha);
            assert!((fit.objective - best).abs() <= 1e-9 * best.max(1.0), "seed {seed}: {} vs {best}", fit.objective);
        }
    }

    #[test]
    fn quantile_coverage() {
        let (x, y) = design(4000, 9);
        let alpha = 0.9;
        let fit = quantile(x.view(), y.view(), alpha, None, &SolverOptions::default()).unwrap();
        let r = residuals(x.view(), y.view(), &fit.coefficients);
        let covered = r.iter().filter(|v| **v <= 1e-9).count() as f64 / r.len() as f64;
        assert!((covered - alpha).abs() <= 4.0 / 4000.0 + 1e-12, "coverage {covered}");
    }

    #[test]
    fn perfect_fit_is_recovered() {
        let (x, _) = design(300, 5);
        let y = x.column(0).mapv(|v| 5.0 * v);
        for alpha in [0.1, 0.9] {
            let fit = quantile(x.view(), y.view(), alpha, None, &SolverOptions::default()).unwrap();
            assert!((fit.coefficients[0] - 5.0).abs() < 1e-9);
            assert!(fit.coefficients[1].abs() < 1e-9);
            assert!(fit.objective < 1e-9);
        }
    }

    #[test]
    fn expectile_half_is_least_squares() {
        let (x, y) = design(2000, 6);
        let opts = SolverOptions::default();
        let ols = least_squares(x.view(), y.view(), &opts).unwrap();
        let e = expectile(x.view(), y.view(), 0.5, None, &opts).unwrap();
        for (a, b) in ols.coefficients.iter().zip(&e.coefficients) {
            assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
        }
    }

    #[test]
    fn expectile_first_order_condition() {
        let (x, y) = design(3000, 7);
        let tau = 0.95;
        let fit = expectile(x.view(), y.view(), tau, None, &SolverOptions::default()).unwrap();
        let loss = LossSpec::expectile(tau).unwrap();
        let r = residuals(x.view(), y.view(), &fit.coefficients);
        let psi: Vec<f64> = r.iter().map(|v| loss.subgradient(*v)).collect();
        let g = xt_times(x.view(), &psi);
        assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
    }

    #[test]
    fn redundant_design_rejected() {
        let mut x = Array2::zeros((50, 3));
        for i in 0..50 {
            x[[i, 0]] = 1.0;
            x[[i, 1]] = i as f64;
            x[[i, 2]] = 3.0 * i as f64;
        }
        let y = Array1::from_shape_fn(50, |i| i as f64);
        let err = quantile(x.view(), y.view(), 0.5, None, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { column: 2, .. }), "{err:?}");
    }

    #[test]
    fn flat_optimum_is_flagged() {
        // median of two points is any value between them
        let x = Array2::from_shape_vec((4, 1), vec![1.0f64; 4]).unwrap();
        let y = Array1::from(vec![-1.0, -1.0, 3.0, 3.0]);
        let fit = quantile(x.view(), y.view(), 0.5, None, &SolverOptions::default()).unwrap();
        assert!(!fit.unique);
        assert!((fit.objective - 2.0).abs() < 1e-12);
        // minimum-norm optimum is zero
        assert!(fit.coefficients[0].abs() < 1e-12, "{:?}", fit.coefficients);
    }
}
