//! Cross-checks of each operation against an independent computation.

use attnspec_core::fixtures::{synth_qk, synth_weights, FixtureSpec, NormalStream, WeightProfile};
use attnspec_core::linalg::{svd, thin_qr};
use attnspec_core::softmax_bounds::{softmax, softmax_rows};
use attnspec_core::spectrum_stats::{cumulative_variance, effective_rank, pooled_median, Threshold};
use attnspec_core::weight_spectrum::{full_interaction_spectrum, MATERIALIZE_LIMIT};
use attnspec_core::{
    compute_logits, full_interaction_svd, interaction_singular_values, row_center, svd_field, HeadId, Matrix, Spectrum,
    WeightPair,
};

const HEAD: HeadId = HeadId { layer: 0, query_head: 0, kv_head: 0 };

fn max_rel_dev(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

#[test]
fn logits_match_triple_loop() {
    let mut rng = NormalStream::new(42, 0);
    let q = rng.matrix(3, 2);
    let k = rng.matrix(3, 2);
    let z = compute_logits(&q, &k, 2).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for d in 0..2 {
                acc += q[(i, d)] * k[(j, d)];
            }
            assert!((z[(i, j)] - acc / 2f64.sqrt()).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_matches_naive_on_bounded_inputs() {
    let mut rng = NormalStream::new(9, 0);
    let m = Matrix::from_fn(20, 17, |_, _| 5.0 * (2.0 * rng.uniform() - 1.0));
    let p = softmax_rows(&m);
    for i in 0..m.rows() {
        let denom: f64 = m.row(i).iter().map(|x| x.exp()).sum();
        for j in 0..m.cols() {
            assert!((p[(i, j)] - m[(i, j)].exp() / denom).abs() < 1e-13);
        }
        assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn centering_preserves_attention() {
    let mut rng = NormalStream::new(123, 0);
    let z = Matrix::from_fn(32, 32, |_, _| 4.0 * rng.normal());
    let field = row_center(z.clone()).unwrap();
    assert!(field.max_row_sum() <= field.row_sum_tolerance());
    for i in 0..32 {
        let p = softmax(z.row(i));
        let q = softmax(field.centered.row(i));
        let l1: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 < 1e-12);
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax(&p), argmax(&q));
    }
}

#[test]
fn jacobi_values_match_nalgebra() {
    for (rows, cols, seed) in [(12, 12, 1u64), (30, 7, 2), (7, 30, 3), (64, 64, 4)] {
        let a = NormalStream::new(seed, 0).matrix(rows, cols);
        let ours = svd(&a, false).unwrap().singular_values;
        let na = nalgebra::DMatrix::from_row_slice(rows, cols, a.as_slice());
        let mut theirs: Vec<f64> = na.singular_values().iter().copied().collect();
        theirs.sort_by(|x, y| y.total_cmp(x));
        assert!(max_rel_dev(&ours, &theirs) < 1e-12, "{rows}x{cols}");
    }
}

#[test]
fn gaussian_field_spectrum_properties() {
    let spec = FixtureSpec::new(2024, 256, 64, 768);
    let (q, k) = synth_qk(&spec).unwrap();
    let field = row_center(compute_logits(&q, &k, 64).unwrap()).unwrap();
    let s = svd_field(&field.centered, true).unwrap();
    let sv = s.singular_values();
    assert!(sv[65] / sv[0] < 1e-10, "σ66/σ1 = {}", sv[65] / sv[0]);
    assert!(s.numerical_rank() <= 65);

    let u = s.left_vectors().unwrap();
    let v = s.right_vectors().unwrap();
    let mut recon = Matrix::zeros(256, 256);
    for kk in 0..sv.len() {
        for i in 0..256 {
            for j in 0..256 {
                recon[(i, j)] += sv[kk] * u[(i, kk)] * v[(j, kk)];
            }
        }
    }
    let rel = recon.sub(&field.centered).unwrap().frobenius_norm() / field.centered.frobenius_norm();
    assert!(rel < 1e-10, "reconstruction {rel}");

    let sqrt_l = 16.0;
    for kk in 0..s.numerical_rank() {
        let col = v.column(kk);
        let along_ones: f64 = col.iter().sum();
        assert!(along_ones.abs() <= 1e-8 * sqrt_l, "v_{kk}ᵀ1 = {along_ones}");
        let norm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-10);
        let unorm: f64 = u.column(kk).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((unorm - 1.0).abs() < 1e-10);
    }
}

#[test]
fn qr_route_matches_materialized_small() {
    let spec = FixtureSpec::new(77, 8, 4, 12);
    let pair = synth_weights(&spec, HEAD).unwrap();
    let fast = interaction_singular_values(&pair).unwrap();
    let slow = full_interaction_svd(&pair).unwrap();
    assert_eq!(fast.len(), 4);
    assert!(max_rel_dev(fast.singular_values(), slow.singular_values()) < 1e-10);
}

#[test]
fn qr_route_matches_materialized_gpt2_shape() {
    let spec = FixtureSpec::new(1, 8, 64, 768);
    let pair = synth_weights(&spec, HEAD).unwrap();
    let fast = interaction_singular_values(&pair).unwrap();
    let all = full_interaction_spectrum(&pair).unwrap();
    assert_eq!(all.len(), 768);
    let slow = all.truncated(64);
    assert!(max_rel_dev(fast.singular_values(), slow.singular_values()) < 1e-10);
    // rank(M) ≤ d_h
    assert!(all.singular_values()[64] <= 1e-10 * all.singular_values()[0]);
    const { assert!(768 <= MATERIALIZE_LIMIT) };
}

#[test]
fn weight_spectrum_orthogonal_invariance() {
    let spec = FixtureSpec::new(31, 8, 6, 40);
    let pair = synth_weights(&spec, HEAD).unwrap();
    let (u, _) = thin_qr(&NormalStream::new(5, 0).matrix(6, 6));
    let rotated = WeightPair::new(u.matmul(pair.w_q()).unwrap(), u.matmul(pair.w_k()).unwrap(), HEAD).unwrap();
    let a = interaction_singular_values(&pair).unwrap();
    let b = interaction_singular_values(&rotated).unwrap();
    assert!(max_rel_dev(a.singular_values(), b.singular_values()) < 1e-10);
}

#[test]
fn flat_weights_from_orthogonal_rows() {
    let spec = FixtureSpec::new(8, 8, 64, 768).with_weight_profile(WeightProfile::OrthogonalRows);
    let s = interaction_singular_values(&synth_weights(&spec, HEAD).unwrap()).unwrap();
    assert!(s.singular_values().iter().all(|v| (v - 1.0).abs() < 1e-10));
}

#[test]
fn cumvar_matches_prefix_sum_oracle() {
    let mut rng = NormalStream::new(55, 0);
    let values: Vec<f64> = (0..50).map(|_| rng.uniform() * 10.0).collect();
    let s = Spectrum::from_values(values).unwrap();
    let sv = s.singular_values();
    let total: f64 = sv.iter().map(|x| x * x).sum();
    let mut prefix = 0.0;
    for r in 1..=sv.len() {
        prefix += sv[r - 1] * sv[r - 1];
        assert!((cumulative_variance(&s, r) - prefix / total).abs() < 1e-14);
    }
}

#[test]
fn effective_rank_matches_linear_scan() {
    let s = Spectrum::from_values((0..5).map(|k| 0.5f64.powi(k)).collect()).unwrap();
    let squares: Vec<f64> = s.singular_values().iter().map(|x| x * x).collect();
    let total: f64 = squares.iter().sum();
    for t in [0.8, 0.9, 0.95, 0.99] {
        let mut r = 0;
        let mut acc = 0.0;
        while r < squares.len() && acc / total < t {
            acc += squares[r];
            r += 1;
        }
        assert_eq!(effective_rank(&s, Threshold::new(t).unwrap()), r, "threshold {t}");
    }
    // fractions are 0.75, 0.9375, 0.984, 0.996, 1
    assert_eq!(effective_rank(&s, Threshold::new(0.9).unwrap()), 2);
}

#[test]
fn median_matches_sort_oracle() {
    let mut rng = NormalStream::new(1000, 0);
    let values: Vec<f64> = (0..1000).map(|_| rng.uniform()).collect();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(pooled_median(&values).unwrap(), (sorted[499] + sorted[500]) / 2.0);
    assert_eq!(pooled_median(&values[..999]).unwrap(), {
        let mut s = values[..999].to_vec();
        s.sort_by(f64::total_cmp);
        s[499]
    });
}

#[test]
fn planted_rank_with_noise() {
    let spec = FixtureSpec::new(3, 128, 32, 64).with_planted_rank(3, 1e-3);
    let (q, k) = synth_qk(&spec).unwrap();
    let field = row_center(compute_logits(&q, &k, 32).unwrap()).unwrap();
    let s = svd_field(&field.centered, false).unwrap();
    let r = effective_rank(&s, Threshold::new(0.9).unwrap());
    assert!((1..=4).contains(&r), "effective rank {r}");
}
