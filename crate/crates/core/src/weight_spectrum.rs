//! Singular values of the interaction matrix `M = W_Qᵀ W_K`.
//!
//! `M` is `d_model × d_model` but factors through `d_h` dimensions. With thin
//! QR factorizations `W_Qᵀ = Q₁R₁` and `W_Kᵀ = Q₂R₂`,
//! `M = Q₁ (R₁R₂ᵀ) Q₂ᵀ`, so the singular values of `M` are those of the
//! `d_h × d_h` core `R₁R₂ᵀ`.

use crate::error::{Error, Result};
use crate::linalg;
use crate::logit_field::Spectrum;
use crate::matrix::Matrix;

/// Largest `d_model` for which [`full_interaction_svd`] will materialize `M`.
pub const MATERIALIZE_LIMIT: usize = 1024;

/// Identifies one attention head. `kv_head` equals `query_head` without GQA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HeadId {
    pub layer: u32,
    pub query_head: u32,
    pub kv_head: u32,
}

/// Per-head query and key projection slices, each `d_h × d_model`.
///
/// Under GQA the key slice is the one of the query head's KV group.
#[derive(Debug, Clone)]
pub struct WeightPair {
    w_q: Matrix,
    w_k: Matrix,
    pub head: HeadId,
}

impl WeightPair {
    pub fn new(w_q: Matrix, w_k: Matrix, head: HeadId) -> Result<Self> {
        if w_q.shape() != w_k.shape() {
            return Err(Error::ShapeMismatch { op: "WeightPair", expected: w_q.shape(), found: w_k.shape() });
        }
        let (d_h, d_model) = w_q.shape();
        if d_h == 0 || d_h >= d_model {
            return Err(Error::ShapeMismatch {
                op: "WeightPair (need 0 < d_h < d_model)",
                expected: (d_h, d_h + 1),
                found: w_q.shape(),
            });
        }
        Ok(Self { w_q, w_k, head })
    }

    pub fn w_q(&self) -> &Matrix {
        &self.w_q
    }

    pub fn w_k(&self) -> &Matrix {
        &self.w_k
    }

    pub fn head_dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn model_dim(&self) -> usize {
        self.w_q.cols()
    }
}

/// The `d_h` singular values of `W_Qᵀ W_K` via the QR route.
pub fn interaction_singular_values(pair: &WeightPair) -> Result<Spectrum> {
    let r_q = linalg::r_of_transpose(pair.w_q());
    let r_k = linalg::r_of_transpose(pair.w_k());
    let core = r_q.matmul_transpose(&r_k)?;
    linalg::svd(&core, false).map(Spectrum::from_svd)
}

/// The leading `d_h` singular values of the explicitly formed `W_Qᵀ W_K`.
///
/// Cross-check for [`interaction_singular_values`]; refuses
/// `d_model > MATERIALIZE_LIMIT`.
pub fn full_interaction_svd(pair: &WeightPair) -> Result<Spectrum> {
    Ok(full_interaction_spectrum(pair)?.truncated(pair.head_dim()))
}

/// Every singular value of the materialized `W_Qᵀ W_K` (`d_model` of them).
pub fn full_interaction_spectrum(pair: &WeightPair) -> Result<Spectrum> {
    let d_model = pair.model_dim();
    if d_model > MATERIALIZE_LIMIT {
        return Err(Error::GuardExceeded { d_model, limit: MATERIALIZE_LIMIT });
    }
    let m = pair.w_q().transpose_matmul(pair.w_k())?;
    linalg::svd(&m, false).map(Spectrum::from_svd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    const HEAD: HeadId = HeadId { layer: 0, query_head: 0, kv_head: 0 };

    fn padded_identity(d_h: usize, d_model: usize) -> Matrix {
        Matrix::from_fn(d_h, d_model, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[test]
    fn padded_identity_is_flat() {
        let pair = WeightPair::new(padded_identity(4, 10), padded_identity(4, 10), HEAD).unwrap();
        for s in [interaction_singular_values(&pair).unwrap(), full_interaction_svd(&pair).unwrap()] {
            assert_eq!(s.len(), 4);
            assert!(s.singular_values().iter().all(|v| (v - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn zero_query_weights() {
        let pair = WeightPair::new(Matrix::zeros(3, 8), padded_identity(3, 8), HEAD).unwrap();
        let s = interaction_singular_values(&pair).unwrap();
        assert_eq!(s.singular_values(), &[0.0; 3]);
        assert_eq!(s.numerical_rank(), 0);
    }

    #[test]
    fn rank_one_pair() {
        let a: Vec<f64> = (0..6).map(|j| j as f64 - 2.0).collect();
        let b: Vec<f64> = (0..6).map(|j| 1.0 + 0.5 * j as f64).collect();
        let row = |v: &Vec<f64>| Matrix::from_fn(3, 6, |i, j| if i == 0 { v[j] } else { 0.0 });
        let pair = WeightPair::new(row(&a), row(&b), HEAD).unwrap();
        let expected =
            libm::sqrt(a.iter().map(|x| x * x).sum::<f64>()) * libm::sqrt(b.iter().map(|x| x * x).sum::<f64>());
        for s in [interaction_singular_values(&pair).unwrap(), full_interaction_svd(&pair).unwrap()] {
            assert!((s.singular_values()[0] - expected).abs() < 1e-12 * expected);
            assert_eq!(s.numerical_rank(), 1);
        }
    }

    #[test]
    fn shape_violations() {
        assert!(WeightPair::new(Matrix::zeros(4, 4), Matrix::zeros(4, 4), HEAD).is_err());
        assert!(WeightPair::new(Matrix::zeros(2, 5), Matrix::zeros(3, 5), HEAD).is_err());
        let big = WeightPair::new(Matrix::zeros(2, 1025), Matrix::zeros(2, 1025), HEAD).unwrap();
        assert_eq!(full_interaction_svd(&big).unwrap_err(), Error::GuardExceeded { d_model: 1025, limit: 1024 });
    }
}
