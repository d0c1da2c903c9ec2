//! Householder QR and one-sided Jacobi SVD.
//!
//! The SVD is the Hestenes one-sided Jacobi method: columns of the working
//! matrix are rotated pairwise until every pair is numerically orthogonal, at
//! which point the column norms are the singular values. It is slower than
//! bidiagonalization but attains high relative accuracy on the small
//! singular values, which is what the rank statements in this crate test.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{dot, norm2, Matrix};

const MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `A = U diag(σ) Vᵀ`.
///
/// For an `m × n` input, `k = min(m, n)` singular values are returned in
/// descending order; `u` is `m × k` and `v` is `n × k`, both with orthonormal
/// columns.
#[derive(Debug, Clone)]
pub struct Svd {
    pub singular_values: Vec<f64>,
    pub u: Option<Matrix>,
    pub v: Option<Matrix>,
}

/// Computes the thin SVD of `a`.
pub fn svd(a: &Matrix, want_vectors: bool) -> Result<Svd> {
    if a.rows() < a.cols() {
        let t = svd(&a.transpose(), want_vectors)?;
        return Ok(Svd { singular_values: t.singular_values, u: t.v, v: t.u });
    }
    jacobi_tall(a, want_vectors)
}

/// Column-major scratch: column `j` occupies `data[j * len..(j + 1) * len]`.
struct Columns {
    len: usize,
    data: Vec<f64>,
}

impl Columns {
    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.len..(j + 1) * self.len]
    }

    fn pair_mut(&mut self, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
        debug_assert!(p < q);
        let len = self.len;
        let (head, tail) = self.data.split_at_mut(q * len);
        (&mut head[p * len..(p + 1) * len], &mut tail[..len])
    }
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let (a, b) = (*xi, *yi);
        *xi = c * a - s * b;
        *yi = s * a + c * b;
    }
}

fn jacobi_tall(a: &Matrix, want_vectors: bool) -> Result<Svd> {
    let (m, n) = a.shape();
    let mut work = Columns { len: m, data: a.transpose().into_vec() };
    let mut right = want_vectors.then(|| Columns { len: n, data: Matrix::identity(n).into_vec() });

    let fro = norm2(a.as_slice());
    let tol = f64::EPSILON * libm::sqrt(m as f64);
    // Columns below this norm carry only rounding noise; rotating two of them
    // against each other cannot change any singular value above it.
    let noise = m as f64 * f64::EPSILON * fro;

    let mut norms = vec![0.0; n];
    let mut converged = n < 2 || fro == 0.0;
    let mut sweep = 0;
    while !converged {
        if sweep == MAX_SWEEPS {
            return Err(Error::SvdNoConvergence { sweeps: MAX_SWEEPS });
        }
        sweep += 1;
        for (j, nj) in norms.iter_mut().enumerate() {
            *nj = dot(work.col(j), work.col(j));
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                let (sa, sb) = (libm::sqrt(alpha), libm::sqrt(beta));
                if sa <= noise && sb <= noise {
                    continue;
                }
                let gamma = dot(work.col(p), work.col(q));
                if gamma.abs() <= tol * sa * sb {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (zeta.abs() + libm::hypot(1.0, zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                let (x, y) = work.pair_mut(p, q);
                rotate(x, y, c, s);
                norms[p] = (alpha - t * gamma).max(0.0);
                norms[q] = (beta + t * gamma).max(0.0);
                if let Some(v) = right.as_mut() {
                    let (x, y) = v.pair_mut(p, q);
                    rotate(x, y, c, s);
                }
            }
        }
        converged = !rotated;
    }

    let raw: Vec<f64> = (0..n).map(|j| norm2(work.col(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]).then(i.cmp(&j)));
    let singular_values: Vec<f64> = order.iter().map(|&j| raw[j]).collect();

    if !want_vectors {
        return Ok(Svd { singular_values, u: None, v: None });
    }

    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let floor = m as f64 * f64::EPSILON * sigma_max;
    let mut u_cols: Vec<Option<Vec<f64>>> = order
        .iter()
        .map(|&j| {
            let s = raw[j];
            (s > floor && s > 0.0).then(|| work.col(j).iter().map(|x| x / s).collect())
        })
        .collect();
    complete_orthonormal(&mut u_cols, m);

    let right = right.expect("allocated when vectors requested");
    let u = Matrix::from_fn(m, n, |i, k| u_cols[k].as_ref().expect("completed")[i]);
    let v = Matrix::from_fn(n, n, |i, k| right.col(order[k])[i]);
    Ok(Svd { singular_values, u: Some(u), v: Some(v) })
}

/// Fills the `None` slots with unit vectors orthogonal to every other slot.
///
/// Used for left singular vectors whose singular value is at the rounding
/// floor, where `A v / σ` is not meaningful.
fn complete_orthonormal(cols: &mut [Option<Vec<f64>>], len: usize) {
    let accept = 0.5 / libm::sqrt(len as f64);
    let mut candidate = 0;
    for slot in 0..cols.len() {
        if cols[slot].is_some() {
            continue;
        }
        loop {
            assert!(candidate < len, "orthonormal completion ran out of basis vectors");
            let mut e = vec![0.0; len];
            e[candidate] = 1.0;
            candidate += 1;
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for other in cols.iter().flatten() {
                    let proj = dot(&e, other);
                    e.iter_mut().zip(other).for_each(|(x, o)| *x -= proj * o);
                }
            }
            let norm = norm2(&e);
            if norm > accept {
                e.iter_mut().for_each(|x| *x /= norm);
                cols[slot] = Some(e);
                break;
            }
        }
    }
}

/// Householder reflectors of a thin QR factorization.
struct Householder {
    rows: usize,
    /// Column-major reduced matrix; the upper triangle holds `R`.
    reduced: Columns,
    /// Reflector `j` acts on entries `j..rows`; `None` means identity.
    reflectors: Vec<Option<Vec<f64>>>,
}

fn householder(columns: Columns, ncols: usize) -> Householder {
    let rows = columns.len;
    let mut reduced = columns;
    let mut reflectors = Vec::with_capacity(ncols);
    for j in 0..ncols.min(rows) {
        let x = &reduced.col(j)[j..];
        let xnorm = norm2(x);
        if xnorm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let alpha = -libm::copysign(xnorm, x[0]);
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm2 = dot(&v, &v);
        if vnorm2 == 0.0 {
            reflectors.push(None);
            continue;
        }
        for c in j..ncols {
            let col = &mut reduced.data[c * rows + j..(c + 1) * rows];
            let f = 2.0 * dot(&v, col) / vnorm2;
            col.iter_mut().zip(&v).for_each(|(x, vi)| *x -= f * vi);
        }
        reflectors.push(Some(v));
    }
    Householder { rows, reduced, reflectors }
}

impl Householder {
    fn r(&self, ncols: usize) -> Matrix {
        let k = ncols.min(self.rows);
        Matrix::from_fn(k, ncols, |i, j| if i <= j { self.reduced.col(j)[i] } else { 0.0 })
    }

    fn q(&self, ncols: usize) -> Matrix {
        let k = ncols.min(self.rows);
        let mut q = Columns { len: self.rows, data: vec![0.0; self.rows * k] };
        for j in 0..k {
            q.data[j * self.rows + j] = 1.0;
        }
        for (j, v) in self.reflectors.iter().enumerate().rev() {
            let Some(v) = v else { continue };
            let vnorm2 = dot(v, v);
            for c in 0..k {
                let col = &mut q.data[c * self.rows + j..(c + 1) * self.rows];
                let f = 2.0 * dot(v, col) / vnorm2;
                col.iter_mut().zip(v).for_each(|(x, vi)| *x -= f * vi);
            }
        }
        Matrix::from_fn(self.rows, k, |i, j| q.col(j)[i])
    }
}

/// Thin QR factorization `A = Q R` of an `m × n` matrix with `m ≥ n`.
pub fn thin_qr(a: &Matrix) -> (Matrix, Matrix) {
    let n = a.cols();
    let h = householder(Columns { len: a.rows(), data: a.transpose().into_vec() }, n);
    (h.q(n), h.r(n))
}

/// The `R` factor of the thin QR of `wᵀ`, for `w` of shape `k × n`, `k ≤ n`.
///
/// The rows of `w` are the columns of `wᵀ`, so no transpose is formed.
pub fn r_of_transpose(w: &Matrix) -> Matrix {
    let (k, n) = w.shape();
    let h = householder(Columns { len: n, data: w.as_slice().to_vec() }, k);
    h.r(k)
}
