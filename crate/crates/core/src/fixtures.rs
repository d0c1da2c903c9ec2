//! Seeded synthetic queries, keys and weight slices.
//!
//! Every fixture is a pure function of its [`FixtureSpec`]. Randomness comes
//! from ChaCha8 keyed by `seed_from_u64(seed)` with the stream number set to
//! `stream` (activations) or `stream | WEIGHT_STREAM_BIT` (weights). Uniforms
//! are `(next_u64 >> 11) · 2⁻⁵³`; each standard normal consumes two
//! uniforms through the cosine branch of Box–Muller. Matrices are filled in
//! row-major order, in the order the draws are documented below.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::Matrix;
use crate::weight_spectrum::{HeadId, WeightPair};

/// Stream bit separating weight draws from activation draws.
pub const WEIGHT_STREAM_BIT: u64 = 1 << 63;

/// Spectral profile of synthetic weight slices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightProfile {
    /// Independent `N(0, 1/d_model)` entries in both slices.
    Gaussian,
    /// `W_Q` with orthonormal rows and `W_K = O · W_Q` for a random
    /// orthogonal `O`; every singular value of `M` equals 1.
    OrthogonalRows,
    /// `W_Q = diag(decay^k) · A`, `W_K = A` with `A` orthonormal rows;
    /// singular values of `M` are exactly `decay^k`.
    Geometric(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub seed: u64,
    /// Distinguishes units (heads, texts) that share a seed.
    pub stream: u64,
    pub context_length: usize,
    pub head_dim: usize,
    pub model_dim: usize,
    /// When set, queries and keys factor through a shared space of this
    /// dimension.
    pub planted_rank: Option<usize>,
    pub noise_level: f64,
    pub weight_profile: WeightProfile,
}

impl FixtureSpec {
    pub fn new(seed: u64, context_length: usize, head_dim: usize, model_dim: usize) -> Self {
        Self {
            seed,
            stream: 0,
            context_length,
            head_dim,
            model_dim,
            planted_rank: None,
            noise_level: 0.0,
            weight_profile: WeightProfile::Gaussian,
        }
    }

    pub fn with_planted_rank(mut self, rank: usize, noise_level: f64) -> Self {
        self.planted_rank = Some(rank);
        self.noise_level = noise_level;
        self
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_weight_profile(mut self, profile: WeightProfile) -> Self {
        self.weight_profile = profile;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_length == 0 || self.head_dim == 0 {
            return Err(Error::InvalidFixture("context_length and head_dim must be positive"));
        }
        if let Some(rank) = self.planted_rank {
            if rank == 0 || rank > self.head_dim {
                return Err(Error::InvalidFixture("planted_rank must be in 1..=head_dim"));
            }
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return Err(Error::InvalidFixture("noise_level must be finite and nonnegative"));
        }
        if let WeightProfile::Geometric(decay) = self.weight_profile {
            if !(decay.is_finite() && decay > 0.0) {
                return Err(Error::InvalidFixture("geometric decay must be positive"));
            }
        }
        Ok(())
    }
}

/// Portable normal sampler over a ChaCha8 stream.
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        // 1 − u lies in (0, 1], keeping the logarithm finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.normal())
    }

    /// `rows × cols` matrix with orthonormal rows (`rows ≤ cols`).
    pub fn orthonormal_rows(&mut self, rows: usize, cols: usize) -> Matrix {
        let g = self.matrix(rows, cols);
        let (q, _) = linalg::thin_qr(&g.transpose());
        q.transpose()
    }
}

fn add_scaled(target: &mut Matrix, noise: &Matrix, scale: f64) {
    let data: Vec<f64> = target.as_slice().iter().zip(noise.as_slice()).map(|(t, n)| t + scale * n).collect();
    *target = Matrix::new(target.rows(), target.cols(), data).expect("finite");
}

/// Seeded `L × d_h` queries and keys.
///
/// Without a planted rank both are standard normal (Q drawn first). With
/// planted rank `ρ` the draws are, in order: `X` (`L × ρ`), `P` (`ρ × d_h`,
/// orthonormal rows), `R` (`ρ × ρ` orthogonal), then the two noise matrices;
/// `Q = X P + ν N₁` and `K = X R P + ν N₂`, so that without noise
/// `Q Kᵀ = X Rᵀ Xᵀ` has rank `ρ` and a well-conditioned spectrum.
pub fn synth_qk(spec: &FixtureSpec) -> Result<(Matrix, Matrix)> {
    spec.validate()?;
    let (l, d) = (spec.context_length, spec.head_dim);
    let mut rng = NormalStream::new(spec.seed, spec.stream);
    let Some(rho) = spec.planted_rank else {
        let q = rng.matrix(l, d);
        let k = rng.matrix(l, d);
        return Ok((q, k));
    };
    let x = rng.matrix(l, rho);
    let p = rng.orthonormal_rows(rho, d);
    let r = rng.orthonormal_rows(rho, rho);
    let mut q = x.matmul(&p)?;
    let mut k = x.matmul(&r)?.matmul(&p)?;
    let n1 = rng.matrix(l, d);
    let n2 = rng.matrix(l, d);
    if spec.noise_level > 0.0 {
        add_scaled(&mut q, &n1, spec.noise_level);
        add_scaled(&mut k, &n2, spec.noise_level);
    }
    Ok((q, k))
}

/// Seeded `d_h × d_model` weight pair following `spec.weight_profile`.
pub fn synth_weights(spec: &FixtureSpec, head: HeadId) -> Result<WeightPair> {
    spec.validate()?;
    let (d, n) = (spec.head_dim, spec.model_dim);
    if d >= n {
        return Err(Error::InvalidFixture("weights need head_dim < model_dim"));
    }
    let mut rng = NormalStream::new(spec.seed, spec.stream | WEIGHT_STREAM_BIT);
    let (w_q, w_k) = match spec.weight_profile {
        WeightProfile::Gaussian => {
            let scale = 1.0 / libm::sqrt(n as f64);
            let mut w_q = rng.matrix(d, n);
            let mut w_k = rng.matrix(d, n);
            w_q.scale(scale);
            w_k.scale(scale);
            (w_q, w_k)
        }
        WeightProfile::OrthogonalRows => {
            let w_q = rng.orthonormal_rows(d, n);
            let o = rng.orthonormal_rows(d, d);
            let w_k = o.matmul(&w_q)?;
            (w_q, w_k)
        }
        WeightProfile::Geometric(decay) => {
            let a = rng.orthonormal_rows(d, n);
            let mut w_q = a.clone();
            let mut factor = 1.0;
            for i in 0..d {
                w_q.row_mut(i).iter_mut().for_each(|x| *x *= factor);
                factor *= decay;
            }
            (w_q, a)
        }
    };
    WeightPair::new(w_q, w_k, head)
}
