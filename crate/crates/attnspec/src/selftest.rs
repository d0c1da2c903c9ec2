//! Seeded theorem checks that need no model: the softmax Lipschitz bound,
//! truncation-bound soundness, rank bounds, orthogonality to the ones vector,
//! and the QR route against the materialized interaction matrix.

use std::fmt;

use attnspec_core::fixtures::{synth_qk, synth_weights, FixtureSpec, NormalStream, WeightProfile};
use attnspec_core::softmax_bounds::{
    delocalization_beta, l1_attention_error, truncation_bound, verify_lipschitz, verify_lipschitz_chain,
    DEFAULT_CHAIN_STEPS, LIPSCHITZ_TOLERANCE,
};
use attnspec_core::spectrum_stats::{effective_rank, Threshold};
use attnspec_core::{
    compute_logits, full_interaction_svd, interaction_singular_values, row_center, svd_field, HeadId, Matrix, Spectrum,
};
use rayon::prelude::*;

use crate::analyze::{BOUND_SLACK, ORTHOGONALITY_TOLERANCE, RANK_BOUND_TOLERANCE};

pub const DEFAULT_SEED: u64 = 20_240_601;
pub const QR_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Lifts the singular value just past the rank bound of every field.
    SigmaTail,
}

#[derive(Debug, Clone)]
pub struct SelftestConfig {
    pub seed: u64,
    pub lipschitz_pairs: usize,
    pub chain_pairs: usize,
    pub fields: usize,
    pub qr_pairs: usize,
    pub fault: Option<Fault>,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self { seed: DEFAULT_SEED, lipschitz_pairs: 10_000, chain_pairs: 1_000, fields: 100, qr_pairs: 50, fault: None }
    }
}

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    pub violations: usize,
    /// Largest normalized margin seen; below 1 means within tolerance.
    pub worst: f64,
    /// First violating case, with what is needed to reproduce it.
    pub first_failure: Option<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{status} {:<14} cases={:<6} violations={:<4} worst={:.3e}",
            self.name, self.cases, self.violations, self.worst
        )?;
        if let Some(first) = &self.first_failure {
            write!(f, " first={first}")?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Tally {
    cases: usize,
    violations: usize,
    worst: f64,
    first_failure: Option<String>,
}

impl Tally {
    /// Records a case whose `ratio` must not exceed 1.
    fn record(&mut self, ratio: f64, describe: impl FnOnce() -> String) {
        self.cases += 1;
        self.worst = self.worst.max(ratio);
        if ratio.is_nan() || ratio > 1.0 {
            self.violations += 1;
            self.first_failure.get_or_insert_with(describe);
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.cases += other.cases;
        self.violations += other.violations;
        self.worst = self.worst.max(other.worst);
        if self.first_failure.is_none() {
            self.first_failure = other.first_failure;
        }
        self
    }

    fn finish(self, name: &'static str) -> CheckResult {
        CheckResult {
            name,
            cases: self.cases,
            violations: self.violations,
            worst: self.worst,
            first_failure: self.first_failure,
        }
    }
}

/// Dimension and magnitude used for Lipschitz pair `i`.
fn lipschitz_pair(seed: u64, i: usize) -> (Vec<f64>, Vec<f64>) {
    const DIMS: [usize; 3] = [2, 16, 256];
    let mut rng = NormalStream::new(seed, i as u64);
    let n = DIMS[i % DIMS.len()];
    let magnitude = 50.0 * rng.uniform();
    let mut draw = || (0..n).map(|_| magnitude * (2.0 * rng.uniform() - 1.0)).collect::<Vec<_>>();
    let a = draw();
    let b = draw();
    (a, b)
}

pub fn check_lipschitz(config: &SelftestConfig) -> CheckResult {
    let mut tally = Tally::default();
    for i in 0..config.lipschitz_pairs {
        let (a, b) = lipschitz_pair(config.seed, i);
        let c = verify_lipschitz(&a, &b).expect("equal lengths");
        let ratio = c.lhs / (c.rhs + LIPSCHITZ_TOLERANCE);
        tally.record(ratio, || format!("pair {i} seed {} lhs {:.17e} rhs {:.17e}", config.seed, c.lhs, c.rhs));
    }
    tally.finish("lipschitz")
}

/// Per-step Jensen and Popoviciu inequalities along the segment between two
/// logit vectors.
pub fn check_chain(config: &SelftestConfig) -> CheckResult {
    let mut tally = Tally::default();
    for i in 0..config.chain_pairs {
        let (a, b) = lipschitz_pair(config.seed, i);
        let chain = verify_lipschitz_chain(&a, &b, DEFAULT_CHAIN_STEPS).expect("equal lengths");
        let ok = chain.all_steps_hold();
        tally.record(if ok { 0.0 } else { 2.0 }, || format!("pair {i} seed {}", config.seed));
    }
    tally.finish("lipschitz-chain")
}

/// Shapes cycled through by the fixture-field checks.
const FIELD_SHAPES: [(usize, usize); 4] = [(64, 16), (64, 64), (256, 16), (256, 64)];

fn field_spec(seed: u64, i: usize) -> FixtureSpec {
    let (l, d_h) = FIELD_SHAPES[i % FIELD_SHAPES.len()];
    FixtureSpec::new(seed, l, d_h, 2 * d_h).with_stream(i as u64)
}

struct FieldTallies {
    bound: Tally,
    rank: Tally,
    orthogonality: Tally,
}

fn check_field(seed: u64, i: usize, fault: Option<Fault>) -> FieldTallies {
    let spec = field_spec(seed, i);
    let (l, d_h) = (spec.context_length, spec.head_dim);
    let where_ = || format!("field {i} seed {seed} stream {i} L={l} d_h={d_h}");
    let (q, k) = synth_qk(&spec).expect("valid fixture");
    let field = row_center(compute_logits(&q, &k, d_h).expect("shapes")).expect("square");
    let spectrum = svd_field(&field.centered, true).expect("svd converges");
    let sv = spectrum.singular_values();
    let rank = spectrum.numerical_rank();
    let u = spectrum.left_vectors().expect("vectors");
    let v = spectrum.right_vectors().expect("vectors");

    let mut rank_tally = Tally::default();
    if l > d_h + 1 {
        let mut tail = sv[d_h + 1];
        if fault == Some(Fault::SigmaTail) {
            tail += 1e-6 * sv[0];
        }
        rank_tally
            .record(tail / (RANK_BOUND_TOLERANCE * sv[0]), || format!("{} sigma ratio {:.3e}", where_(), tail / sv[0]));
    }

    let mut orth = Tally::default();
    let limit = ORTHOGONALITY_TOLERANCE * (l as f64).sqrt();
    for kk in 0..rank {
        let s: f64 = (0..l).map(|j| v[(j, kk)]).sum();
        orth.record(s.abs() / limit, || format!("{} vector {kk} sum {s:.3e}", where_()));
    }

    // rank-r reconstructions built up one component at a time
    let beta = delocalization_beta(&spectrum, l).expect("vectors");
    let mut bound_tally = Tally::default();
    let mut truncated = Matrix::zeros(l, l);
    for r in 0..rank {
        if r > 0 {
            let kk = r - 1;
            for a in 0..l {
                let coef = sv[kk] * u[(a, kk)];
                for (dst, b) in truncated.row_mut(a).iter_mut().zip(0..l) {
                    *dst += coef * v[(b, kk)];
                }
            }
        }
        let err = l1_attention_error(&field.centered, &truncated).expect("shapes");
        let bound = truncation_bound(beta.tail_beta(r), &spectrum, r, l).expect("r below rank");
        bound_tally.record(err.max / (bound + BOUND_SLACK), || {
            format!("{} r={r} l1={:.6e} bound={:.6e}", where_(), err.max, bound)
        });
    }
    FieldTallies { bound: bound_tally, rank: rank_tally, orthogonality: orth }
}

pub fn check_fields(config: &SelftestConfig) -> [CheckResult; 3] {
    let per_field: Vec<FieldTallies> =
        (0..config.fields).into_par_iter().map(|i| check_field(config.seed, i, config.fault)).collect();
    let mut bound = Tally::default();
    let mut rank = Tally::default();
    let mut orth = Tally::default();
    for t in per_field {
        bound = bound.merge(t.bound);
        rank = rank.merge(t.rank);
        orth = orth.merge(t.orthogonality);
    }
    [bound.finish("truncation-bound"), rank.finish("rank-bound"), orth.finish("orthogonality")]
}

fn weight_spec(seed: u64, i: usize) -> FixtureSpec {
    const SHAPES: [(usize, usize); 4] = [(8, 32), (16, 64), (32, 96), (64, 128)];
    let (d_h, d_model) = SHAPES[i % SHAPES.len()];
    let profile = match i % 3 {
        0 => WeightProfile::Gaussian,
        1 => WeightProfile::OrthogonalRows,
        _ => WeightProfile::Geometric(0.8),
    };
    FixtureSpec::new(seed, 1, d_h, d_model).with_stream(i as u64).with_weight_profile(profile)
}

fn relative_deviation(a: &Spectrum, b: &Spectrum) -> f64 {
    let scale = a.singular_values().first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let diff = a.singular_values().iter().zip(b.singular_values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    diff / scale
}

/// QR route against the materialized product, plus the rank of the latter.
pub fn check_weights(config: &SelftestConfig) -> [CheckResult; 2] {
    let mut qr = Tally::default();
    let mut rank = Tally::default();
    for i in 0..config.qr_pairs {
        let spec = weight_spec(config.seed, i);
        let head = HeadId { layer: 0, query_head: i as u32, kv_head: i as u32 };
        let pair = synth_weights(&spec, head).expect("valid fixture");
        let fast = interaction_singular_values(&pair).expect("svd converges");
        let full = attnspec_core::weight_spectrum::full_interaction_spectrum(&pair).expect("below guard");
        let leading = full_interaction_svd(&pair).expect("below guard");
        let dev = relative_deviation(&leading, &fast);
        qr.record(dev / QR_TOLERANCE, || format!("pair {i} seed {} deviation {dev:.3e}", config.seed));
        let nonzero = full.numerical_rank();
        rank.record(nonzero as f64 / spec.head_dim as f64, || {
            format!("pair {i} seed {} rank {nonzero} > d_h {}", config.seed, spec.head_dim)
        });
    }
    [qr.finish("qr-oracle"), rank.finish("weight-rank")]
}

/// Noiseless planted rank `ρ` must come back as the 99% effective rank, up to
/// one component for the centering term.
pub fn check_planted(config: &SelftestConfig) -> CheckResult {
    let mut tally = Tally::default();
    let threshold = Threshold::new(0.99).expect("valid");
    for (i, rho) in [1usize, 3, 8].into_iter().enumerate() {
        let spec = FixtureSpec::new(config.seed, 128, 16, 32).with_planted_rank(rho, 0.0).with_stream(i as u64);
        let (q, k) = synth_qk(&spec).expect("valid fixture");
        let field = row_center(compute_logits(&q, &k, spec.head_dim).expect("shapes")).expect("square");
        let s = svd_field(&field.centered, false).expect("svd converges");
        let got = effective_rank(&s, threshold);
        let off = got.abs_diff(rho) as f64;
        tally.record(off, || format!("rho {rho} seed {} effective rank {got}", config.seed));
    }
    tally.finish("planted-rank")
}

pub fn run(config: &SelftestConfig) -> Vec<CheckResult> {
    let mut out = vec![check_lipschitz(config), check_chain(config)];
    out.extend(check_fields(config));
    out.extend(check_weights(config));
    out.push(check_planted(config));
    out
}
