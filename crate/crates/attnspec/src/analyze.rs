//! The `analyze` pipeline: interchange directories in, one report out.
//!
//! Work is split into independent units, one per (head, text) logit field and
//! one per head weight pair, and mapped over a rayon pool. Units are sorted by
//! identifier before any reduction, so the report does not depend on the
//! number of workers or their schedule.

use std::collections::BTreeMap;
use std::path::PathBuf;

use attnspec_core::softmax_bounds::DEFAULT_TRUNCATION_RANKS;
use attnspec_core::softmax_bounds::{delocalization_beta, truncation_bound, truncation_error, Side};
use attnspec_core::spectrum_stats::{
    pooled_median, summarize_summaries, LabeledSpectrum, PooledMedians, Source, SpectrumSummary, Threshold,
    DEFAULT_RANKS, DEFAULT_THRESHOLDS,
};
use attnspec_core::{compute_logits, interaction_singular_values, row_center, svd_field, HeadId, WeightPair};
use rayon::prelude::*;
use thiserror::Error;

use crate::report::{
    DelocalizationSummary, HeadBeta, HeadRecord, InvariantChecks, ModelReport, RankValue, Report, ReportConfig,
    SourceReport, TextValue, TextVariabilityRecord, ThresholdValue, TruncationRecord, TruncationSummary,
    REPORT_VERSION,
};
use crate::tensor_io::{read_manifest, read_matrix, Kind, Manifest, ManifestEntry, TensorIoError};

/// `σ_{d_h+2} / σ₁` above this breaks the rank bound of the centered field.
pub const RANK_BOUND_TOLERANCE: f64 = 1e-10;
/// Allowed `|v_kᵀ 1|` in units of `√L`.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-8;
/// Slack added to the truncation bound before a row counts as a violation.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{dir}: {source}")]
    Input {
        dir: PathBuf,
        #[source]
        source: TensorIoError,
    },

    #[error("{model}: {reason}")]
    Unpaired { model: String, reason: String },

    #[error("{model}: no analyzable heads")]
    EmptyHeadSet { model: String },

    #[error("numerical failure: {0}")]
    Numerical(#[from] attnspec_core::Error),

    #[error("worker pool: {0}")]
    Pool(String),
}

impl PipelineError {
    /// 2 for bad input or configuration, 3 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Input { .. } | Self::Unpaired { .. } | Self::EmptyHeadSet { .. } => 2,
            Self::Numerical(_) | Self::Pool(_) => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input_dirs: Vec<PathBuf>,
    pub ranks: Vec<usize>,
    pub thresholds: Vec<Threshold>,
    pub trunc_ranks: Vec<usize>,
    /// Worker threads; `None` lets rayon decide.
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn new(input_dirs: Vec<PathBuf>) -> Self {
        Self {
            input_dirs,
            ranks: DEFAULT_RANKS.to_vec(),
            thresholds: DEFAULT_THRESHOLDS.iter().map(|&t| Threshold::new(t).expect("valid default")).collect(),
            trunc_ranks: DEFAULT_TRUNCATION_RANKS.to_vec(),
            jobs: None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |msg: &str| Err(PipelineError::Config(msg.into()));
        if self.input_dirs.is_empty() {
            return fail("at least one --input directory is required");
        }
        if self.ranks.is_empty() || self.thresholds.is_empty() || self.trunc_ranks.is_empty() {
            return fail("rank, threshold and truncation grids must be non-empty");
        }
        if self.ranks.contains(&0) {
            return fail("ranks must be positive");
        }
        let ascending_usize = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if !ascending_usize(&self.ranks) || !ascending_usize(&self.trunc_ranks) {
            return fail("rank grids must be strictly ascending");
        }
        if !self.thresholds.windows(2).all(|w| w[0].get() < w[1].get()) {
            return fail("thresholds must be strictly ascending");
        }
        if self.jobs == Some(0) {
            return fail("--jobs must be positive");
        }
        Ok(())
    }

    fn report_config(&self) -> ReportConfig {
        ReportConfig {
            ranks: self.ranks.clone(),
            thresholds: self.thresholds.iter().map(|t| t.get()).collect(),
            trunc_ranks: self.trunc_ranks.clone(),
        }
    }
}

struct FieldUnit<'a> {
    head: HeadId,
    text_id: String,
    query: &'a ManifestEntry,
    key: &'a ManifestEntry,
}

struct WeightUnit<'a> {
    head: HeadId,
    w_q: &'a ManifestEntry,
    w_k: &'a ManifestEntry,
}

struct FieldOutcome {
    summary: SpectrumSummary,
    spectrum_len: usize,
    betas: Vec<(Side, f64)>,
    head_beta: HeadBeta,
    truncation: Vec<TruncationRecord>,
    row_sum_ok: bool,
    rank_bound_ok: bool,
    orthogonality_ok: bool,
    monotone: bool,
}

struct WeightOutcome {
    summary: SpectrumSummary,
    spectrum_len: usize,
    rank_ok: bool,
}

fn pair_units(manifest: &Manifest) -> Result<(Vec<FieldUnit<'_>>, Vec<WeightUnit<'_>>), PipelineError> {
    type Slot<'a> = (Option<&'a ManifestEntry>, Option<&'a ManifestEntry>);
    let mut fields: BTreeMap<(u32, u32, &str), Slot<'_>> = BTreeMap::new();
    let mut weights: BTreeMap<(u32, u32), Slot<'_>> = BTreeMap::new();
    for e in &manifest.entries {
        match (e.kind, e.text_id.as_deref()) {
            (Kind::Query, Some(t)) => fields.entry((e.layer, e.query_head, t)).or_default().0 = Some(e),
            (Kind::Key, Some(t)) => fields.entry((e.layer, e.query_head, t)).or_default().1 = Some(e),
            (Kind::WeightQ, _) => weights.entry((e.layer, e.query_head)).or_default().0 = Some(e),
            (Kind::WeightK, _) => weights.entry((e.layer, e.query_head)).or_default().1 = Some(e),
            _ => unreachable!("validated manifest"),
        }
    }
    let unpaired = |reason: String| PipelineError::Unpaired { model: manifest.model_name.clone(), reason };
    let head_of = |a: &ManifestEntry, b: &ManifestEntry| {
        if a.kv_head != b.kv_head {
            return Err(unpaired(format!("{} and {} disagree on kv_head", a.label(), b.label())));
        }
        Ok(HeadId { layer: a.layer, query_head: a.query_head, kv_head: a.kv_head })
    };

    let mut field_units = Vec::with_capacity(fields.len());
    for ((layer, head, text), slot) in fields {
        let (Some(query), Some(key)) = slot else {
            return Err(unpaired(format!("layer {layer} head {head} text {text}: query/key entry missing")));
        };
        field_units.push(FieldUnit { head: head_of(query, key)?, text_id: text.to_string(), query, key });
    }
    let mut weight_units = Vec::with_capacity(weights.len());
    for ((layer, head), slot) in weights {
        let (Some(w_q), Some(w_k)) = slot else {
            return Err(unpaired(format!("layer {layer} head {head}: weight_q/weight_k entry missing")));
        };
        weight_units.push(WeightUnit { head: head_of(w_q, w_k)?, w_q, w_k });
    }
    Ok((field_units, weight_units))
}

fn analyze_field(manifest: &Manifest, unit: &FieldUnit<'_>, config: &RunConfig) -> Result<FieldOutcome, PipelineError> {
    let input = |source| PipelineError::Input { dir: manifest.root().to_path_buf(), source };
    let queries = read_matrix(manifest, unit.query).map_err(input)?;
    let keys = read_matrix(manifest, unit.key).map_err(input)?;
    let (l, d_h) = (manifest.context_length, manifest.head_dim);

    let field = row_center(compute_logits(&queries, &keys, d_h)?)?;
    let row_sum_ok = field.max_row_sum() <= field.row_sum_tolerance();
    let spectrum = svd_field(&field.centered, true)?;
    let sv = spectrum.singular_values();
    let rank = spectrum.numerical_rank();

    let rank_bound_ok = l <= d_h + 1 || sv[0] == 0.0 || sv[d_h + 1] <= RANK_BOUND_TOLERANCE * sv[0];
    let v = spectrum.right_vectors().expect("requested vectors");
    let sqrt_l = (l as f64).sqrt();
    let orthogonality_ok =
        (0..rank).all(|k| (0..l).map(|j| v[(j, k)]).sum::<f64>().abs() <= ORTHOGONALITY_TOLERANCE * sqrt_l);

    let beta = delocalization_beta(&spectrum, l)?;
    let mut truncation = Vec::with_capacity(config.trunc_ranks.len());
    for &r in &config.trunc_ranks {
        let r_used = r.min(rank);
        let t = truncation_error(&field.centered, &spectrum, r_used)?;
        let tail_beta = beta.tail_beta(r_used);
        let bound = truncation_bound(tail_beta, &spectrum, r_used, l)?;
        truncation.push(TruncationRecord {
            r,
            r_used,
            mean_l1: t.l1.mean,
            max_l1: t.l1.max,
            tail_beta,
            bound,
            bound_holds: t.l1.max <= bound + BOUND_SLACK,
        });
    }
    let monotone = truncation.windows(2).all(|w| w[1].mean_l1 <= w[0].mean_l1);

    let labeled = LabeledSpectrum {
        source: Source::Generated,
        head: unit.head,
        text_id: Some(unit.text_id.clone()),
        spectrum: spectrum.into_values_only(),
    };
    Ok(FieldOutcome {
        summary: SpectrumSummary::of(&labeled, &config.ranks, &config.thresholds),
        spectrum_len: labeled.spectrum.len(),
        betas: beta.per_vector_beta.iter().map(|b| (b.side, b.beta)).collect(),
        head_beta: HeadBeta { median: beta.median_beta, max: beta.max_beta },
        truncation,
        row_sum_ok,
        rank_bound_ok,
        orthogonality_ok,
        monotone,
    })
}

fn analyze_weights(
    manifest: &Manifest,
    unit: &WeightUnit<'_>,
    config: &RunConfig,
) -> Result<WeightOutcome, PipelineError> {
    let input = |source| PipelineError::Input { dir: manifest.root().to_path_buf(), source };
    let w_q = read_matrix(manifest, unit.w_q).map_err(input)?;
    let w_k = read_matrix(manifest, unit.w_k).map_err(input)?;
    let pair = WeightPair::new(w_q, w_k, unit.head)?;
    let spectrum = interaction_singular_values(&pair)?;
    let labeled = LabeledSpectrum { source: Source::Learned, head: unit.head, text_id: None, spectrum };
    Ok(WeightOutcome {
        summary: SpectrumSummary::of(&labeled, &config.ranks, &config.thresholds),
        spectrum_len: labeled.spectrum.len(),
        rank_ok: labeled.spectrum.len() == manifest.head_dim,
    })
}

fn rank_values(pairs: &[(usize, f64)]) -> Vec<RankValue> {
    pairs.iter().map(|&(r, value)| RankValue { r, value }).collect()
}

fn head_record(summary: &SpectrumSummary) -> HeadRecord {
    HeadRecord {
        layer: summary.head.layer,
        query_head: summary.head.query_head,
        kv_head: summary.head.kv_head,
        text_id: summary.text_id.clone(),
        numerical_rank: summary.numerical_rank,
        cumvar: rank_values(&summary.cumvar),
        effective_rank: summary
            .effective_rank
            .iter()
            .map(|&(threshold, r)| ThresholdValue { threshold, value: r as f64 })
            .collect(),
        beta: None,
        truncation: Vec::new(),
    }
}

fn source_report(medians: Option<&PooledMedians>, heads: Vec<HeadRecord>) -> SourceReport {
    let Some(m) = medians else { return SourceReport::default() };
    SourceReport {
        count: m.count,
        median_cumvar: rank_values(&m.cumvar),
        median_effective_rank: m
            .effective_rank
            .iter()
            .map(|&(threshold, value)| ThresholdValue { threshold, value })
            .collect(),
        heads,
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        pooled_median(values).expect("finite statistics")
    }
}

fn analyze_model(manifest: &Manifest, config: &RunConfig) -> Result<ModelReport, PipelineError> {
    let (field_units, weight_units) = pair_units(manifest)?;
    if field_units.is_empty() && weight_units.is_empty() {
        return Err(PipelineError::EmptyHeadSet { model: manifest.model_name.clone() });
    }
    let fields: Vec<FieldOutcome> =
        field_units.par_iter().map(|u| analyze_field(manifest, u, config)).collect::<Result<_, _>>()?;
    let weights: Vec<WeightOutcome> =
        weight_units.par_iter().map(|u| analyze_weights(manifest, u, config)).collect::<Result<_, _>>()?;

    let lengths: Vec<(Source, usize)> = fields
        .iter()
        .map(|f| (Source::Generated, f.spectrum_len))
        .chain(weights.iter().map(|w| (Source::Learned, w.spectrum_len)))
        .collect();
    let all: Vec<SpectrumSummary> =
        fields.iter().map(|f| f.summary.clone()).chain(weights.iter().map(|w| w.summary.clone())).collect();
    let pooled = summarize_summaries(all, lengths)?;
    let medians_of = |s: Source| pooled.medians.iter().find(|m| m.source == s);

    // units come out of BTreeMaps, so outcomes are already in identifier order
    let generated_heads = fields
        .iter()
        .map(|f| HeadRecord {
            beta: Some(f.head_beta.clone()),
            truncation: f.truncation.clone(),
            ..head_record(&f.summary)
        })
        .collect();
    let learned_heads = weights.iter().map(|w| head_record(&w.summary)).collect();

    let text_variability = pooled
        .text_variability
        .iter()
        .map(|tv| TextVariabilityRecord {
            layer: tv.head.layer,
            query_head: tv.head.query_head,
            kv_head: tv.head.kv_head,
            texts: tv.texts,
            effective_rank_std: tv
                .effective_rank_std
                .iter()
                .map(|&(threshold, value)| ThresholdValue { threshold, value })
                .collect(),
        })
        .collect();

    let all_betas: Vec<f64> = fields.iter().flat_map(|f| f.betas.iter().map(|b| b.1)).collect();
    let right_betas: Vec<f64> =
        fields.iter().flat_map(|f| f.betas.iter().filter(|b| b.0 == Side::Right).map(|b| b.1)).collect();
    let delocalization = DelocalizationSummary {
        vectors: all_betas.len(),
        median_beta: median(&all_betas),
        max_beta: all_betas.iter().copied().fold(0.0, f64::max),
        median_beta_right: median(&right_betas),
        max_beta_right: right_betas.iter().copied().fold(0.0, f64::max),
    };

    let truncation = config
        .trunc_ranks
        .iter()
        .enumerate()
        .map(|(idx, &r)| {
            let records: Vec<(&str, &TruncationRecord)> =
                fields.iter().map(|f| (f.summary.text_id.as_deref().unwrap_or_default(), &f.truncation[idx])).collect();
            let means: Vec<f64> = records.iter().map(|(_, t)| t.mean_l1).collect();
            let maxes: Vec<f64> = records.iter().map(|(_, t)| t.max_l1).collect();
            let mut per_text: BTreeMap<&str, f64> = BTreeMap::new();
            for (text, t) in &records {
                let slot = per_text.entry(text).or_insert(0.0);
                *slot = slot.max(t.max_l1);
            }
            TruncationSummary {
                r,
                median_mean_l1: median(&means),
                median_max_l1: median(&maxes),
                max_max_l1: maxes.iter().copied().fold(0.0, f64::max),
                per_text_max_l1: per_text
                    .into_iter()
                    .map(|(text_id, value)| TextValue { text_id: text_id.to_string(), value })
                    .collect(),
                bound_violations: records.iter().filter(|(_, t)| !t.bound_holds).count(),
            }
        })
        .collect::<Vec<_>>();

    let checks = InvariantChecks {
        fields: fields.len(),
        row_sum_violations: fields.iter().filter(|f| !f.row_sum_ok).count(),
        rank_bound_violations: fields.iter().filter(|f| !f.rank_bound_ok).count(),
        orthogonality_violations: fields.iter().filter(|f| !f.orthogonality_ok).count(),
        bound_violations: truncation.iter().map(|t| t.bound_violations).sum(),
        learned_rank_violations: weights.iter().filter(|w| !w.rank_ok).count(),
        non_monotone_fields: fields.iter().filter(|f| !f.monotone).count(),
    };

    Ok(ModelReport {
        model_name: manifest.model_name.clone(),
        model_dim: manifest.model_dim,
        head_dim: manifest.head_dim,
        context_length: manifest.context_length,
        texts: manifest.texts.iter().map(|t| t.text_id.clone()).collect(),
        learned: source_report(medians_of(Source::Learned), learned_heads),
        generated: source_report(medians_of(Source::Generated), generated_heads),
        text_variability,
        delocalization,
        truncation,
        checks,
    })
}

/// Runs the full analysis over every input directory.
pub fn analyze(config: &RunConfig) -> Result<Report, PipelineError> {
    config.validate()?;
    let manifests = config
        .input_dirs
        .iter()
        .map(|dir| read_manifest(dir).map_err(|source| PipelineError::Input { dir: dir.clone(), source }))
        .collect::<Result<Vec<_>, _>>()?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = config.jobs {
        builder = builder.num_threads(jobs);
    }
    let pool = builder.build().map_err(|e| PipelineError::Pool(e.to_string()))?;

    let mut models =
        pool.install(|| manifests.iter().map(|m| analyze_model(m, config)).collect::<Result<Vec<_>, _>>())?;
    models.sort_by(|a, b| a.model_name.cmp(&b.model_name));
    Ok(Report { report_version: REPORT_VERSION.into(), config: config.report_config(), models })
}
