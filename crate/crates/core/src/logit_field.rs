//! Attention logits, the row-centered logit field and its spectrum.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::Matrix;

/// Singular values at or below `RANK_EPSILON × σ₁` do not count toward the
/// numerical rank.
pub const RANK_EPSILON: f64 = 1e-12;

/// `Z = Q Kᵀ / √d_h` for `L × d_h` queries and keys. No causal mask.
pub fn compute_logits(queries: &Matrix, keys: &Matrix, head_dim: usize) -> Result<Matrix> {
    if queries.shape() != keys.shape() {
        return Err(Error::ShapeMismatch { op: "compute_logits", expected: queries.shape(), found: keys.shape() });
    }
    if queries.cols() != head_dim {
        return Err(Error::ShapeMismatch {
            op: "compute_logits",
            expected: (queries.rows(), head_dim),
            found: queries.shape(),
        });
    }
    let mut z = queries.matmul_transpose(keys)?;
    z.scale(1.0 / libm::sqrt(head_dim as f64));
    Ok(z)
}

/// Logits together with their row-centered field `Ẽ = Z − Z̄ 1ᵀ`.
#[derive(Debug, Clone)]
pub struct LogitField {
    pub logits: Matrix,
    pub centered: Matrix,
    pub row_means: Vec<f64>,
}

impl LogitField {
    /// Largest absolute row sum of the centered field.
    pub fn max_row_sum(&self) -> f64 {
        self.centered.row_iter().map(|row| row.iter().sum::<f64>().abs()).fold(0.0, f64::max)
    }

    /// Tolerance on row sums: `1e-9 × L × max|Z|`.
    pub fn row_sum_tolerance(&self) -> f64 {
        1e-9 * self.logits.rows() as f64 * self.logits.max_abs()
    }
}

/// Subtracts each row's mean from a square logit matrix.
pub fn row_center(logits: Matrix) -> Result<LogitField> {
    let (rows, cols) = logits.shape();
    if rows != cols {
        return Err(Error::NotSquare { op: "row_center", rows, cols });
    }
    let mut centered = logits.clone();
    let mut row_means = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = centered.row_mut(i);
        let mean = row.iter().sum::<f64>() / cols as f64;
        row.iter_mut().for_each(|x| *x -= mean);
        row_means.push(mean);
    }
    Ok(LogitField { logits, centered, row_means })
}

/// Singular values in descending order, optionally with singular vectors.
///
/// `left_vectors` and `right_vectors` hold `u_k` and `v_k` as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    singular_values: Vec<f64>,
    left_vectors: Option<Matrix>,
    right_vectors: Option<Matrix>,
    numerical_rank: usize,
}

impl Spectrum {
    /// Wraps a list of singular values; they are sorted descending and
    /// must be finite and nonnegative.
    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite { index });
        }
        values.sort_by(|a, b| b.total_cmp(a));
        let numerical_rank = numerical_rank(&values);
        Ok(Self { singular_values: values, left_vectors: None, right_vectors: None, numerical_rank })
    }

    pub(crate) fn from_svd(svd: linalg::Svd) -> Self {
        let numerical_rank = numerical_rank(&svd.singular_values);
        Self { singular_values: svd.singular_values, left_vectors: svd.u, right_vectors: svd.v, numerical_rank }
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn len(&self) -> usize {
        self.singular_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.singular_values.is_empty()
    }

    pub fn numerical_rank(&self) -> usize {
        self.numerical_rank
    }

    pub fn left_vectors(&self) -> Option<&Matrix> {
        self.left_vectors.as_ref()
    }

    pub fn right_vectors(&self) -> Option<&Matrix> {
        self.right_vectors.as_ref()
    }

    pub fn has_vectors(&self) -> bool {
        self.left_vectors.is_some() && self.right_vectors.is_some()
    }

    /// Drops the singular vectors, keeping only the values.
    pub fn into_values_only(self) -> Self {
        Self { left_vectors: None, right_vectors: None, ..self }
    }

    /// Keeps the leading `k` values (and vector columns).
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.len());
        let cut = |m: &Matrix| Matrix::from_fn(m.rows(), k, |i, j| m[(i, j)]);
        let singular_values = self.singular_values[..k].to_vec();
        let numerical_rank = numerical_rank(&singular_values);
        Self {
            singular_values,
            left_vectors: self.left_vectors.as_ref().map(cut),
            right_vectors: self.right_vectors.as_ref().map(cut),
            numerical_rank,
        }
    }
}

fn numerical_rank(values: &[f64]) -> usize {
    let Some(&top) = values.first() else { return 0 };
    if top == 0.0 {
        return 0;
    }
    values.iter().take_while(|&&s| s > RANK_EPSILON * top).count()
}

/// Full f64 SVD of the centered field.
pub fn svd_field(centered: &Matrix, want_vectors: bool) -> Result<Spectrum> {
    linalg::svd(centered, want_vectors).map(Spectrum::from_svd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identity_logits() {
        let i2 = Matrix::identity(2);
        let z = compute_logits(&i2, &i2, 2).unwrap();
        let h = 1.0 / libm::sqrt(2.0);
        assert_eq!(z.as_slice(), &[h, 0.0, 0.0, h]);
    }

    #[test]
    fn zero_queries() {
        let q = Matrix::zeros(3, 2);
        let k = Matrix::from_fn(3, 2, |i, j| (i + j) as f64);
        assert_eq!(compute_logits(&q, &k, 2).unwrap(), Matrix::zeros(3, 3));
    }

    #[test]
    fn logits_reject_bad_shapes() {
        let q = Matrix::zeros(3, 2);
        assert!(matches!(compute_logits(&q, &Matrix::zeros(3, 3), 2), Err(Error::ShapeMismatch { .. })));
        assert!(compute_logits(&q, &q, 4).is_err());
    }

    #[test]
    fn hand_centering() {
        let z = Matrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 0.0]]).unwrap();
        let f = row_center(z).unwrap();
        assert_eq!(f.centered.as_slice(), &[-1.0, 1.0, 1.0, -1.0]);
        assert_eq!(f.row_means, [2.0, 1.0]);
    }

    #[test]
    fn constant_field_centers_to_zero() {
        let f = row_center(Matrix::from_fn(4, 4, |_, _| 2.5)).unwrap();
        assert_eq!(f.centered, Matrix::zeros(4, 4));
        assert_eq!(svd_field(&f.centered, false).unwrap().numerical_rank(), 0);
    }

    #[test]
    fn non_square_rejected() {
        assert_eq!(
            row_center(Matrix::zeros(2, 3)).unwrap_err(),
            Error::NotSquare { op: "row_center", rows: 2, cols: 3 }
        );
    }

    #[test]
    fn rank_one_field() {
        // a bᵀ with b ⊥ 1 is already row-centered
        let a = [1.0, -2.0, 0.5, 3.0];
        let b = [1.0, -1.0, 2.0, -2.0];
        let e = Matrix::from_fn(4, 4, |i, j| a[i] * b[j]);
        let field = row_center(e.clone()).unwrap();
        assert_eq!(field.centered, e);
        let s = svd_field(&field.centered, true).unwrap();
        assert_eq!(s.numerical_rank(), 1);
    }

    #[test]
    fn spectrum_from_values_sorts_and_ranks() {
        let s = Spectrum::from_values(vec![1.0, 3.0, 0.0, 1e-13]).unwrap();
        assert_eq!(s.singular_values(), &[3.0, 1.0, 1e-13, 0.0]);
        assert_eq!(s.numerical_rank(), 2);
        assert!(Spectrum::from_values(vec![-1.0]).is_err());
        assert_eq!(Spectrum::from_values(vec![]).unwrap().numerical_rank(), 0);
    }
}
