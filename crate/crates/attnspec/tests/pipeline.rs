use attnspec::analyze::{analyze, RunConfig};
use attnspec::fixture_io::{unit_stream, write_fixture_manifest, FixtureLayout};
use attnspec_core::fixtures::{synth_qk, synth_weights, FixtureSpec};
use attnspec_core::HeadId;
use nalgebra::DMatrix;

fn na(m: &attnspec_core::Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn sorted_sv(m: DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn eff_rank(sv: &[f64], t: f64) -> usize {
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    for (i, s) in sv.iter().enumerate() {
        acc += s * s;
        if acc >= t * total {
            return i + 1;
        }
    }
    sv.len()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn pooling_matches_independent_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = FixtureSpec::new(21, 40, 6, 18);
    let layout = FixtureLayout { heads: 2, texts: 2, layers: 2, ..Default::default() };
    write_fixture_manifest(&spec, &layout, tmp.path()).unwrap();
    let report = analyze(&RunConfig::new(vec![tmp.path().to_path_buf()])).unwrap();
    let m = &report.models[0];
    assert_eq!(m.generated.count, 8);
    assert_eq!(m.learned.count, 4);
    assert_eq!(m.checks.total(), 0);

    let (l, d_h) = (spec.context_length, spec.head_dim);
    for t in [0.8, 0.9, 0.95, 0.99] {
        let mut generated = Vec::new();
        let mut learned = Vec::new();
        let mut per_head = Vec::new();
        for layer in 0..2 {
            for head in 0..2 {
                let mut texts = Vec::new();
                for text in 0..2 {
                    let (q, k) = synth_qk(&spec.clone().with_stream(unit_stream(layer, head, text))).unwrap();
                    let z = na(&q) * na(&k).transpose() / (d_h as f64).sqrt();
                    let centering = DMatrix::<f64>::identity(l, l) - DMatrix::from_element(l, l, 1.0 / l as f64);
                    let sv = sorted_sv(z * centering);
                    let r = eff_rank(&sv, t) as f64;
                    generated.push(r);
                    texts.push(r);
                }
                let mean = texts.iter().sum::<f64>() / 2.0;
                per_head.push((texts.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 2.0).sqrt());
                let pair = synth_weights(
                    &spec.clone().with_stream(unit_stream(layer, head, 0)),
                    HeadId { layer, query_head: head, kv_head: head },
                )
                .unwrap();
                let sv = sorted_sv(na(pair.w_q()).transpose() * na(pair.w_k()));
                learned.push(eff_rank(&sv[..d_h], t) as f64);
            }
        }
        let pick = |s: &attnspec::report::SourceReport| {
            s.median_effective_rank.iter().find(|v| v.threshold == t).unwrap().value
        };
        assert_eq!(pick(&m.generated), median(generated), "generated at {t}");
        assert_eq!(pick(&m.learned), median(learned), "learned at {t}");
        for (rec, want) in m.text_variability.iter().zip(&per_head) {
            let got = rec.effective_rank_std.iter().find(|v| v.threshold == t).unwrap().value;
            assert!((got - want).abs() < 1e-12);
        }
    }
    assert_eq!(m.text_variability.len(), 4);
    for tr in &m.truncation {
        assert_eq!(tr.per_text_max_l1.len(), 2);
        let worst = tr.per_text_max_l1.iter().map(|v| v.value).fold(0.0, f64::max);
        assert_eq!(worst, tr.max_max_l1);
    }
}

#[test]
fn grouped_query_heads_keep_their_kv_head() {
    let tmp = tempfile::tempdir().unwrap();
    let layout = FixtureLayout { heads: 4, texts: 1, kv_group_size: 2, ..Default::default() };
    write_fixture_manifest(&FixtureSpec::new(4, 20, 4, 12), &layout, tmp.path()).unwrap();
    let report = analyze(&RunConfig::new(vec![tmp.path().to_path_buf()])).unwrap();
    let heads = &report.models[0].generated.heads;
    assert_eq!(heads.len(), 4);
    for h in heads {
        assert_eq!(h.kv_head, h.query_head / 2);
    }
}

#[test]
fn truncation_ranks_beyond_the_spectrum_are_clamped() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture_manifest(&FixtureSpec::new(8, 16, 3, 9), &FixtureLayout::default(), tmp.path()).unwrap();
    let report = analyze(&RunConfig::new(vec![tmp.path().to_path_buf()])).unwrap();
    for h in &report.models[0].generated.heads {
        for t in &h.truncation {
            assert_eq!(t.r_used, h.numerical_rank.min(t.r));
            assert_eq!(t.bound, 0.0);
            assert!(t.max_l1 < 1e-9);
        }
    }
}
