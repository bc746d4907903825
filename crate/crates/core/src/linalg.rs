//! Small dense linear algebra for design matrices with a handful of columns.
//!
//! Designs are tall (`M` rows, `p` columns with `p` at most a few dozen), so
//! everything here works on the `p x p` Gram matrix or on `p x p` bases.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Real};

/// Rows per chunk for parallel reductions. Fixed so that results do not depend
/// on the number of worker threads.
pub(crate) const REDUCE_CHUNK: usize = 4096;

/// Weighted second-moment matrices `X^T W X / M` and `X^T W y / M`.
pub fn weighted_moments<T: Real>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    weights: Option<&[T]>,
) -> (Array2<T>, Array1<T>) {
    let (m, p) = x.dim();
    let partials: Vec<(Array2<T>, Array1<T>)> = (0..m.div_ceil(REDUCE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * REDUCE_CHUNK;
            let hi = (lo + REDUCE_CHUNK).min(m);
            let mut g = Array2::<T>::zeros((p, p));
            let mut b = Array1::<T>::zeros(p);
            for i in lo..hi {
                let w = weights.map_or(T::one(), |w| w[i]);
                if w == T::zero() {
                    continue;
                }
                let row = x.row(i);
                for a in 0..p {
                    let wa = w * row[a];
                    b[a] += wa * y[i];
                    for bcol in a..p {
                        g[[a, bcol]] += wa * row[bcol];
                    }
                }
            }
            (g, b)
        })
        .collect();
    let mut g = Array2::<T>::zeros((p, p));
    let mut b = Array1::<T>::zeros(p);
    for (pg, pb) in partials {
        g += &pg;
        b += &pb;
    }
    let mf = T::from_usize_lossy(m.max(1));
    for a in 0..p {
        for c in 0..a {
            g[[a, c]] = g[[c, a]];
        }
    }
    (g / mf, b / mf)
}

/// Cholesky factor `L` with `A = L L^T`, or `None` if `A` is not positive definite.
pub fn cholesky<T: Real>(a: &Array2<T>) -> Option<Array2<T>> {
    let n = a.nrows();
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= T::zero() || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

pub fn cholesky_solve<T: Real>(l: &Array2<T>, b: &Array1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut z = b.clone();
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= l[[i, k]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= l[[k, i]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    z
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues<T: Real>(a: &Array2<T>) -> Vec<T> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in i + 1..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        let diag: T = (0..n).map(|i| m[[i, i]] * m[[i, i]]).sum();
        if off <= T::epsilon() * T::epsilon() * diag || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[[i, i]]).collect()
}

/// Gram matrix rescaled to unit diagonal, so that the condition number does
/// not depend on the units of each column.
fn equilibrate<T: Real>(g: &Array2<T>) -> Array2<T> {
    let n = g.nrows();
    let d: Vec<T> = (0..n)
        .map(|i| {
            let v = g[[i, i]];
            if v > T::zero() {
                T::one() / v.sqrt()
            } else {
                T::zero()
            }
        })
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| g[[i, j]] * d[i] * d[j])
}

/// Condition number of the equilibrated Gram matrix.
pub fn gram_condition<T: Real>(g: &Array2<T>) -> f64 {
    let eig = symmetric_eigenvalues(&equilibrate(g));
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.as_f64()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.as_f64()));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Columns kept by an in-order Cholesky of the equilibrated Gram matrix
/// (a column is dropped when its residual pivot falls below `rel_tol`), and
/// the first dropped column.
pub fn independent_columns<T: Real>(g: &Array2<T>, rel_tol: f64) -> (Vec<usize>, Option<usize>) {
    let n = g.nrows();
    let mut work = equilibrate(g);
    let mut keep = Vec::new();
    let mut first_dependent = None;
    for j in 0..n {
        let piv = work[[j, j]];
        if g[[j, j]] <= T::zero() || piv.as_f64() <= rel_tol {
            first_dependent.get_or_insert(j);
            continue;
        }
        let root = piv.sqrt();
        let col: Vec<T> = (0..n).map(|i| if i > j { work[[i, j]] / root } else { T::zero() }).collect();
        for i in j + 1..n {
            for k in j + 1..n {
                work[[i, k]] -= col[i] * col[k];
            }
        }
        keep.push(j);
    }
    (keep, first_dependent)
}

/// Inverse of a small square matrix by Gauss-Jordan with partial pivoting.
pub fn invert<T: Real>(a: &Array2<T>) -> Option<Array2<T>> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Array2::<T>::eye(n);
    let scale = a.iter().fold(T::zero(), |s, v| s.max(v.abs()));
    if scale == T::zero() {
        return None;
    }
    for col in 0..n {
        let (piv, pval) = (col..n)
            .map(|r| (r, m[[r, col]].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if pval <= scale * T::epsilon() * T::lit(16.0) {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap([piv, k], [col, k]);
                inv.swap([piv, k], [col, k]);
            }
        }
        let d = m[[col, col]];
        for k in 0..n {
            m[[col, k]] /= d;
            inv[[col, k]] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[[r, col]];
                if f != T::zero() {
                    for k in 0..n {
                        let mv = m[[col, k]];
                        let iv = inv[[col, k]];
                        m[[r, k]] -= f * mv;
                        inv[[r, k]] -= f * iv;
                    }
                }
            }
        }
    }
    Some(inv)
}

/// `X beta` for every row.
pub fn fitted<T: Real>(x: ArrayView2<T>, beta: &[T]) -> Vec<T> {
    (0..x.nrows())
        .into_par_iter()
        .map(|i| compensated_sum(x.row(i).iter().zip(beta).map(|(&a, &b)| a * b)))
        .collect()
}

/// Ordinary least squares through the normal equations with a redundancy check.
pub fn least_squares<T: Real>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    weights: Option<&[T]>,
    max_condition: f64,
) -> Result<Vec<T>> {
    let (g, b) = weighted_moments(x, y, weights);
    let cond = gram_condition(&g);
    if !(cond <= max_condition) {
        let (_, dep) = independent_columns(&g, 1.0 / max_condition);
        return Err(Error::RankDeficient {
            column: dep.unwrap_or(g.nrows().saturating_sub(1)),
            condition: cond,
        });
    }
    let l = cholesky(&g).ok_or(Error::RankDeficient {
        column: g.nrows().saturating_sub(1),
        condition: cond,
    })?;
    Ok(cholesky_solve(&l, &b).to_vec())
}
