//! Cumulative variance, effective rank and pooled medians over spectra.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::logit_field::Spectrum;
use crate::weight_spectrum::HeadId;

/// Ranks at which cumulative variance is tabulated by default.
pub const DEFAULT_RANKS: [usize; 6] = [1, 2, 5, 10, 20, 40];
/// Variance thresholds at which effective rank is tabulated by default.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.80, 0.90, 0.95, 0.99];

/// A variance fraction in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value <= 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::InvalidThreshold(value))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Fraction of `Σ σ_k²` captured by the leading `r` values.
///
/// Exactly 1 once `r` covers the whole spectrum, and 0 for an all-zero one.
pub fn cumulative_variance(spectrum: &Spectrum, r: usize) -> f64 {
    let values = spectrum.singular_values();
    let total: f64 = values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0.0;
    }
    if r >= values.len() {
        return 1.0;
    }
    values[..r].iter().map(|s| s * s).sum::<f64>() / total
}

/// Smallest `r` with `cumulative_variance(spectrum, r) ≥ threshold`.
pub fn effective_rank(spectrum: &Spectrum, threshold: Threshold) -> usize {
    let values = spectrum.singular_values();
    let total: f64 = values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0;
    }
    let mut prefix = 0.0;
    for (k, s) in values.iter().enumerate() {
        prefix += s * s;
        let r = k + 1;
        let fraction = if r == values.len() { 1.0 } else { prefix / total };
        if fraction >= threshold.get() {
            return r;
        }
    }
    values.len()
}

/// Median of a non-empty list of finite values; mean of the central pair for
/// even counts.
pub fn pooled_median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty { what: "median input" });
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 })
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

/// Which matrix a spectrum came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    /// The row-centered logit field of one text.
    Generated,
    /// The weight interaction matrix.
    Learned,
}

/// A spectrum tagged with the head (and, for generated spectra, the text) it
/// belongs to.
#[derive(Debug, Clone)]
pub struct LabeledSpectrum {
    pub source: Source,
    pub head: HeadId,
    pub text_id: Option<String>,
    pub spectrum: Spectrum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSummary {
    pub source: Source,
    pub head: HeadId,
    pub text_id: Option<String>,
    pub numerical_rank: usize,
    /// `(r, fraction)` per requested rank.
    pub cumvar: Vec<(usize, f64)>,
    /// `(threshold, rank)` per requested threshold.
    pub effective_rank: Vec<(f64, usize)>,
}

impl SpectrumSummary {
    pub fn of(item: &LabeledSpectrum, ranks: &[usize], thresholds: &[Threshold]) -> Self {
        Self {
            source: item.source,
            head: item.head,
            text_id: item.text_id.clone(),
            numerical_rank: item.spectrum.numerical_rank(),
            cumvar: ranks.iter().map(|&r| (r, cumulative_variance(&item.spectrum, r))).collect(),
            effective_rank: thresholds.iter().map(|&t| (t.get(), effective_rank(&item.spectrum, t))).collect(),
        }
    }

    fn sort_key(&self) -> (Source, HeadId, Option<&str>) {
        (self.source, self.head, self.text_id.as_deref())
    }
}

/// Medians over every summary of one source.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledMedians {
    pub source: Source,
    pub count: usize,
    pub cumvar: Vec<(usize, f64)>,
    pub effective_rank: Vec<(f64, f64)>,
}

/// Spread of a head's effective rank across texts.
#[derive(Debug, Clone, PartialEq)]
pub struct TextVariability {
    pub head: HeadId,
    pub texts: usize,
    /// `(threshold, population std of effective rank)`.
    pub effective_rank_std: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub summaries: Vec<SpectrumSummary>,
    pub medians: Vec<PooledMedians>,
    pub text_variability: Vec<TextVariability>,
}

/// Per-spectrum summaries plus pooled medians per source.
///
/// Generated spectra are pooled over every (head, text) pair and learned
/// spectra over heads. Output order is `(source, layer, query_head,
/// text_id)` regardless of input order.
pub fn summarize(items: &[LabeledSpectrum], ranks: &[usize], thresholds: &[Threshold]) -> Result<Summary> {
    if items.is_empty() {
        return Err(Error::Empty { what: "spectrum list" });
    }
    let summaries: Vec<SpectrumSummary> =
        items.iter().map(|item| SpectrumSummary::of(item, ranks, thresholds)).collect();
    summarize_summaries(summaries, items.iter().map(|i| (i.source, i.spectrum.len())))
}

/// Pools already-computed summaries. `lengths` lists `(source, spectrum
/// length)` for the pool-consistency check.
pub fn summarize_summaries(
    mut summaries: Vec<SpectrumSummary>,
    lengths: impl IntoIterator<Item = (Source, usize)>,
) -> Result<Summary> {
    if summaries.is_empty() {
        return Err(Error::Empty { what: "spectrum list" });
    }
    let mut expected: [Option<usize>; 2] = [None, None];
    for (source, len) in lengths {
        let slot = &mut expected[source as usize];
        match *slot {
            None => *slot = Some(len),
            Some(e) if e != len => return Err(Error::InconsistentPool { expected: e, found: len }),
            Some(_) => {}
        }
    }
    summaries.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

    let mut medians = Vec::new();
    for source in [Source::Generated, Source::Learned] {
        let pool: Vec<&SpectrumSummary> = summaries.iter().filter(|s| s.source == source).collect();
        if pool.is_empty() {
            continue;
        }
        let first = pool[0];
        let cumvar = first
            .cumvar
            .iter()
            .enumerate()
            .map(|(idx, &(r, _))| {
                let column: Vec<f64> = pool.iter().map(|s| s.cumvar[idx].1).collect();
                pooled_median(&column).map(|m| (r, m))
            })
            .collect::<Result<Vec<_>>>()?;
        let effective_rank = first
            .effective_rank
            .iter()
            .enumerate()
            .map(|(idx, &(t, _))| {
                let column: Vec<f64> = pool.iter().map(|s| s.effective_rank[idx].1 as f64).collect();
                pooled_median(&column).map(|m| (t, m))
            })
            .collect::<Result<Vec<_>>>()?;
        medians.push(PooledMedians { source, count: pool.len(), cumvar, effective_rank });
    }

    let text_variability = text_variability(&summaries);
    Ok(Summary { summaries, medians, text_variability })
}

fn text_variability(sorted: &[SpectrumSummary]) -> Vec<TextVariability> {
    let generated: Vec<&SpectrumSummary> = sorted.iter().filter(|s| s.source == Source::Generated).collect();
    generated
        .chunk_by(|a, b| a.head == b.head)
        .map(|group| TextVariability {
            head: group[0].head,
            texts: group.len(),
            effective_rank_std: group[0]
                .effective_rank
                .iter()
                .enumerate()
                .map(|(idx, &(t, _))| {
                    let ranks: Vec<f64> = group.iter().map(|s| s.effective_rank[idx].1 as f64).collect();
                    (t, population_std(&ranks))
                })
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spectrum(values: &[f64]) -> Spectrum {
        Spectrum::from_values(values.to_vec()).unwrap()
    }

    fn t(v: f64) -> Threshold {
        Threshold::new(v).unwrap()
    }

    #[test]
    fn cumvar_hand_values() {
        let s = spectrum(&[2.0, 1.0, 1.0]);
        assert!((cumulative_variance(&s, 1) - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(cumulative_variance(&s, 3), 1.0);
        assert_eq!(cumulative_variance(&s, 10), 1.0);
        assert_eq!(cumulative_variance(&spectrum(&[1.0, 0.0, 0.0]), 1), 1.0);
        assert_eq!(cumulative_variance(&spectrum(&[0.0, 0.0]), 1), 0.0);
    }

    #[test]
    fn effective_rank_hand_values() {
        assert_eq!(effective_rank(&spectrum(&[2.0, 1.0, 1.0]), t(0.8)), 2);
        assert_eq!(effective_rank(&spectrum(&[1.0]), t(0.99)), 1);
        assert_eq!(effective_rank(&spectrum(&[0.0, 0.0]), t(0.9)), 0);
        assert_eq!(effective_rank(&spectrum(&[3.0, 1.0]), t(1.0)), 2);
    }

    #[test]
    fn threshold_range() {
        assert!(Threshold::new(0.0).is_err());
        assert!(Threshold::new(1.01).is_err());
        assert!(Threshold::new(f64::NAN).is_err());
        assert!(Threshold::new(1.0).is_ok());
    }

    #[test]
    fn medians() {
        assert_eq!(pooled_median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(pooled_median(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        assert_eq!(pooled_median(&[]).unwrap_err(), Error::Empty { what: "median input" });
        assert_eq!(pooled_median(&[1.0, f64::NAN]).unwrap_err(), Error::NonFinite { index: 1 });
    }

    fn labeled(source: Source, layer: u32, text: Option<&str>, values: &[f64]) -> LabeledSpectrum {
        LabeledSpectrum {
            source,
            head: HeadId { layer, query_head: 0, kv_head: 0 },
            text_id: text.map(String::from),
            spectrum: spectrum(values),
        }
    }

    #[test]
    fn single_and_duplicate_spectra() {
        let one = labeled(Source::Generated, 0, Some("a"), &[2.0, 1.0, 1.0]);
        let ranks = [1, 2];
        let ths = [t(0.8), t(0.9)];
        let s1 = summarize(std::slice::from_ref(&one), &ranks, &ths).unwrap();
        let own = &s1.summaries[0];
        assert_eq!(s1.medians[0].cumvar, own.cumvar);
        assert_eq!(s1.medians[0].effective_rank, vec![(0.8, 2.0), (0.9, 3.0)]);
        let s2 = summarize(&[one.clone(), one], &ranks, &ths).unwrap();
        assert_eq!(s2.medians[0].cumvar, s1.medians[0].cumvar);
        assert_eq!(s2.medians[0].effective_rank, s1.medians[0].effective_rank);
        assert_eq!(s2.medians[0].count, 2);
    }

    #[test]
    fn ordering_and_pools() {
        let items = [
            labeled(Source::Learned, 1, None, &[1.0, 1.0]),
            labeled(Source::Generated, 1, Some("b"), &[1.0, 0.0, 0.0]),
            labeled(Source::Generated, 0, Some("b"), &[1.0, 1.0, 0.0]),
            labeled(Source::Generated, 0, Some("a"), &[1.0, 1.0, 1.0]),
            labeled(Source::Learned, 0, None, &[2.0, 1.0]),
        ];
        let s = summarize(&items, &[1], &[t(0.9)]).unwrap();
        let keys: Vec<_> = s.summaries.iter().map(|x| (x.source, x.head.layer, x.text_id.clone())).collect();
        assert_eq!(
            keys,
            vec![
                (Source::Generated, 0, Some("a".into())),
                (Source::Generated, 0, Some("b".into())),
                (Source::Generated, 1, Some("b".into())),
                (Source::Learned, 0, None),
                (Source::Learned, 1, None),
            ]
        );
        assert_eq!(s.medians.len(), 2);
        assert_eq!(s.medians[0].count, 3);
        assert_eq!(s.medians[1].count, 2);
        // layer 0 has effective ranks 3 and 2 at 90%
        assert_eq!(s.text_variability[0].texts, 2);
        assert_eq!(s.text_variability[0].effective_rank_std, vec![(0.9, 0.5)]);
    }

    #[test]
    fn inconsistent_pool_rejected() {
        let items = [
            labeled(Source::Generated, 0, Some("a"), &[1.0, 1.0, 1.0]),
            labeled(Source::Generated, 1, Some("a"), &[1.0, 1.0]),
        ];
        assert_eq!(summarize(&items, &[1], &[t(0.9)]).unwrap_err(), Error::InconsistentPool { expected: 3, found: 2 });
        assert!(summarize(&[], &[1], &[t(0.9)]).is_err());
    }
}
