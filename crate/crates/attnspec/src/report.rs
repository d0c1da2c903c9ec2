//! JSON report schema (`report_version` "1").

use serde::{Deserialize, Serialize};

pub const REPORT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_version: String,
    pub config: ReportConfig,
    pub models: Vec<ModelReport>,
}

impl Report {
    pub fn empty(config: ReportConfig) -> Self {
        Self { report_version: REPORT_VERSION.into(), config, models: Vec::new() }
    }

    pub fn violations(&self) -> usize {
        self.models.iter().map(|m| m.checks.total()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub ranks: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub trunc_ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankValue {
    pub r: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdValue {
    pub threshold: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextValue {
    pub text_id: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model_name: String,
    pub model_dim: usize,
    pub head_dim: usize,
    pub context_length: usize,
    pub texts: Vec<String>,
    pub learned: SourceReport,
    pub generated: SourceReport,
    /// Spread of each head's generated effective rank across texts.
    pub text_variability: Vec<TextVariabilityRecord>,
    pub delocalization: DelocalizationSummary,
    pub truncation: Vec<TruncationSummary>,
    pub checks: InvariantChecks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SourceReport {
    pub count: usize,
    pub median_cumvar: Vec<RankValue>,
    pub median_effective_rank: Vec<ThresholdValue>,
    pub heads: Vec<HeadRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRecord {
    pub layer: u32,
    pub query_head: u32,
    pub kv_head: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_id: Option<String>,
    pub numerical_rank: usize,
    pub cumvar: Vec<RankValue>,
    pub effective_rank: Vec<ThresholdValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<HeadBeta>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub truncation: Vec<TruncationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadBeta {
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationRecord {
    /// Requested rank.
    pub r: usize,
    /// Rank actually used, `min(r, numerical_rank)`.
    pub r_used: usize,
    pub mean_l1: f64,
    pub max_l1: f64,
    pub tail_beta: f64,
    pub bound: f64,
    pub bound_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextVariabilityRecord {
    pub layer: u32,
    pub query_head: u32,
    pub kv_head: u32,
    pub texts: usize,
    pub effective_rank_std: Vec<ThresholdValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DelocalizationSummary {
    /// Number of singular vectors pooled (both sides).
    pub vectors: usize,
    pub median_beta: f64,
    pub max_beta: f64,
    /// Same statistics over right singular vectors only.
    pub median_beta_right: f64,
    pub max_beta_right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationSummary {
    pub r: usize,
    /// Median over (head, text) of the per-field mean row ℓ1.
    pub median_mean_l1: f64,
    /// Median over (head, text) of the per-field worst row ℓ1.
    pub median_max_l1: f64,
    /// Worst row over every field.
    pub max_max_l1: f64,
    pub per_text_max_l1: Vec<TextValue>,
    pub bound_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct InvariantChecks {
    pub fields: usize,
    pub row_sum_violations: usize,
    pub rank_bound_violations: usize,
    pub orthogonality_violations: usize,
    pub bound_violations: usize,
    pub learned_rank_violations: usize,
    /// Fields whose mean ℓ1 increases along the truncation grid. Reported,
    /// not counted as a failure: the trend is empirical.
    pub non_monotone_fields: usize,
}

impl InvariantChecks {
    pub fn total(&self) -> usize {
        self.row_sum_violations
            + self.rank_bound_violations
            + self.orthogonality_violations
            + self.bound_violations
            + self.learned_rank_violations
    }
}
