//! Softmax of truncated logit fields and the bounds that control it.
//!
//! For a rank-`r` truncation `Ẽ_r` of the centered field, the row-wise ℓ1
//! change of the attention distribution obeys
//!
//! ```text
//! ‖p_i − p_i^(r)‖₁ ≤ ‖Ẽ_i − (Ẽ_r)_i‖∞ ≤ (β/√L) Σ_{k>r} σ_k
//! ```
//!
//! where the first step is the ℓ1/ℓ∞ Lipschitz property of softmax and `β`
//! bounds `√L · max_j (u_k)_j²` and `√L · max_j (v_k)_j²` over the discarded
//! singular vectors.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::logit_field::Spectrum;
use crate::matrix::{axpy, Matrix};
use crate::spectrum_stats::pooled_median;

/// Truncation ranks used when none are given.
pub const DEFAULT_TRUNCATION_RANKS: [usize; 3] = [10, 20, 40];

/// Max-subtracted softmax of one row.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| libm::exp(v - max)).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Row-wise softmax.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        out.row_mut(i).copy_from_slice(&softmax(m.row(i)));
    }
    out
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn max_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Rank-`r` reconstruction `Σ_{k<r} σ_k u_k v_kᵀ`, `0 ≤ r ≤ numerical_rank`.
pub fn truncate_field(spectrum: &Spectrum, r: usize) -> Result<Matrix> {
    let (Some(u), Some(v)) = (spectrum.left_vectors(), spectrum.right_vectors()) else {
        return Err(Error::VectorsAbsent { op: "truncate_field" });
    };
    let rank = spectrum.numerical_rank();
    if r > rank {
        return Err(Error::RankOutOfRange { r, rank });
    }
    let mut out = Matrix::zeros(u.rows(), v.rows());
    for (k, &sigma) in spectrum.singular_values()[..r].iter().enumerate() {
        let vk = v.column(k);
        for i in 0..u.rows() {
            axpy(sigma * u[(i, k)], &vk, out.row_mut(i));
        }
    }
    Ok(out)
}

/// Row-wise ℓ1 distances between two softmax-attention matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Error {
    pub per_row: Vec<f64>,
    pub mean: f64,
    pub max: f64,
}

/// ℓ1 distance between `softmax_rows(field)` and `softmax_rows(truncated)`
/// per row.
pub fn l1_attention_error(field: &Matrix, truncated: &Matrix) -> Result<L1Error> {
    if field.shape() != truncated.shape() {
        return Err(Error::ShapeMismatch {
            op: "l1_attention_error",
            expected: field.shape(),
            found: truncated.shape(),
        });
    }
    let per_row: Vec<f64> =
        (0..field.rows()).map(|i| l1_distance(&softmax(field.row(i)), &softmax(truncated.row(i)))).collect();
    let mean = if per_row.is_empty() { 0.0 } else { per_row.iter().sum::<f64>() / per_row.len() as f64 };
    let max = per_row.iter().copied().fold(0.0, f64::max);
    Ok(L1Error { per_row, mean, max })
}

#[derive(Debug, Clone)]
pub struct TruncationResult {
    pub r: usize,
    pub truncated: Matrix,
    pub l1: L1Error,
}

/// Truncates the spectrum of `field` to rank `r` and measures the attention
/// change.
pub fn truncation_error(field: &Matrix, spectrum: &Spectrum, r: usize) -> Result<TruncationResult> {
    let truncated = truncate_field(spectrum, r)?;
    let l1 = l1_attention_error(field, &truncated)?;
    Ok(TruncationResult { r, truncated, l1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VectorBeta {
    /// Zero-based singular index.
    pub k: usize,
    pub side: Side,
    pub beta: f64,
}

/// Delocalization `β = √L · max_j x_j²` of the singular vectors with
/// `σ_k` above the rank cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct DelocalizationReport {
    pub per_vector_beta: Vec<VectorBeta>,
    pub median_beta: f64,
    pub max_beta: f64,
    /// `tail[r]` is the largest β over both sides for zero-based indices
    /// `r..numerical_rank`; `tail[numerical_rank] = 0`.
    tail: Vec<f64>,
}

impl DelocalizationReport {
    /// Largest β among the vectors discarded by a rank-`r` truncation.
    pub fn tail_beta(&self, r: usize) -> f64 {
        self.tail.get(r).copied().unwrap_or(0.0)
    }

    pub fn tail(&self) -> &[f64] {
        &self.tail
    }
}

pub fn beta_of(vector: &[f64], context_length: usize) -> f64 {
    let peak = vector.iter().map(|x| x * x).fold(0.0, f64::max);
    libm::sqrt(context_length as f64) * peak
}

pub fn delocalization_beta(spectrum: &Spectrum, context_length: usize) -> Result<DelocalizationReport> {
    let (Some(u), Some(v)) = (spectrum.left_vectors(), spectrum.right_vectors()) else {
        return Err(Error::VectorsAbsent { op: "delocalization_beta" });
    };
    for m in [u, v] {
        if m.rows() != context_length {
            return Err(Error::ShapeMismatch {
                op: "delocalization_beta",
                expected: (context_length, m.cols()),
                found: m.shape(),
            });
        }
    }
    let rank = spectrum.numerical_rank();
    let mut per_vector_beta = Vec::with_capacity(2 * rank);
    for k in 0..rank {
        per_vector_beta.push(VectorBeta { k, side: Side::Left, beta: beta_of(&u.column(k), context_length) });
        per_vector_beta.push(VectorBeta { k, side: Side::Right, beta: beta_of(&v.column(k), context_length) });
    }
    let mut tail = alloc::vec![0.0f64; rank + 1];
    for k in (0..rank).rev() {
        let here = per_vector_beta[2 * k].beta.max(per_vector_beta[2 * k + 1].beta);
        tail[k] = tail[k + 1].max(here);
    }
    let betas: Vec<f64> = per_vector_beta.iter().map(|b| b.beta).collect();
    let median_beta = if betas.is_empty() { 0.0 } else { pooled_median(&betas)? };
    let max_beta = betas.iter().copied().fold(0.0, f64::max);
    Ok(DelocalizationReport { per_vector_beta, median_beta, max_beta, tail })
}

/// `(β/√L) Σ_{k>r} σ_k` over the singular values above the rank cutoff.
///
/// Zero when `r` equals the numerical rank; an error beyond it.
pub fn truncation_bound(tail_beta: f64, spectrum: &Spectrum, r: usize, context_length: usize) -> Result<f64> {
    let rank = spectrum.numerical_rank();
    if r > rank {
        return Err(Error::RankOutOfRange { r, rank });
    }
    let tail_sum: f64 = spectrum.singular_values()[r..rank].iter().sum();
    if tail_sum == 0.0 {
        return Ok(0.0);
    }
    Ok(tail_beta / libm::sqrt(context_length as f64) * tail_sum)
}

/// Both sides of `‖softmax(a) − softmax(b)‖₁ ≤ ‖a − b‖∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub const LIPSCHITZ_TOLERANCE: f64 = 1e-12;

pub fn verify_lipschitz(a: &[f64], b: &[f64]) -> Result<LipschitzCheck> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if let Some(index) = a.iter().chain(b).position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let lhs = l1_distance(&softmax(a), &softmax(b));
    let rhs = max_norm_diff(a, b);
    Ok(LipschitzCheck { lhs, rhs, holds: lhs <= rhs + LIPSCHITZ_TOLERANCE })
}

/// One point `t` on the path `a + t (b − a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainStep {
    pub t: f64,
    /// `E_q |c − E_q c|` with `q = softmax(a + t c)`.
    pub mad: f64,
    pub variance: f64,
    /// `(max c − min c)² / 4`.
    pub popoviciu_bound: f64,
    pub jensen_ok: bool,
    pub popoviciu_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainReport {
    pub steps: Vec<ChainStep>,
    /// Trapezoidal `∫₀¹ MAD dt`.
    pub mad_integral: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub integral_ok: bool,
}

impl ChainReport {
    pub fn all_steps_hold(&self) -> bool {
        self.steps.iter().all(|s| s.jensen_ok && s.popoviciu_ok)
    }
}

pub const DEFAULT_CHAIN_STEPS: usize = 64;
const CHAIN_TOLERANCE: f64 = 1e-10;

/// Evaluates the intermediate inequalities of the Lipschitz argument on a
/// grid of `steps` intervals over `t ∈ [0, 1]`.
pub fn verify_lipschitz_chain(a: &[f64], b: &[f64], steps: usize) -> Result<ChainReport> {
    if steps < 2 {
        return Err(Error::TooFewSteps(steps));
    }
    let check = verify_lipschitz(a, b)?;
    let c: Vec<f64> = b.iter().zip(a).map(|(y, x)| y - x).collect();
    let (lo, hi) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let range = if c.is_empty() { 0.0 } else { hi - lo };
    let popoviciu_bound = range * range / 4.0;

    let steps: Vec<ChainStep> = (0..=steps)
        .map(|s| {
            let t = s as f64 / steps as f64;
            let point: Vec<f64> = a.iter().zip(&c).map(|(x, ci)| x + t * ci).collect();
            let q = softmax(&point);
            let mean: f64 = q.iter().zip(&c).map(|(qi, ci)| qi * ci).sum();
            let mad: f64 = q.iter().zip(&c).map(|(qi, ci)| qi * (ci - mean).abs()).sum();
            let variance: f64 = q.iter().zip(&c).map(|(qi, ci)| qi * (ci - mean) * (ci - mean)).sum();
            ChainStep {
                t,
                mad,
                variance,
                popoviciu_bound,
                jensen_ok: mad * mad <= variance + CHAIN_TOLERANCE * (1.0 + variance),
                popoviciu_ok: variance <= popoviciu_bound + CHAIN_TOLERANCE * (1.0 + popoviciu_bound),
            }
        })
        .collect();
    let mad_integral = steps.windows(2).map(|w| 0.5 * (w[0].mad + w[1].mad) * (w[1].t - w[0].t)).sum();
    let slack = 1e-3 * check.rhs;
    Ok(ChainReport {
        integral_ok: mad_integral >= check.lhs - slack,
        steps,
        mad_integral,
        lhs: check.lhs,
        rhs: check.rhs,
        slack,
    })
}
