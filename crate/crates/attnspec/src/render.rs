//! Tables from a report: models as (M, Ẽ) column groups, ranks or
//! thresholds as rows.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::report::{ModelReport, Report, SourceReport, REPORT_VERSION};
use crate::tensor_io::canonical_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed report: {source}")]
    Malformed {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: unsupported report_version {found:?}")]
    Version { path: PathBuf, found: String },
}

pub fn read_report(path: &Path) -> Result<Report, RenderError> {
    let bytes = std::fs::read(path).map_err(|source| RenderError::Io { path: path.into(), source })?;
    let report: Report =
        serde_json::from_slice(&bytes).map_err(|source| RenderError::Malformed { path: path.into(), source })?;
    if report.report_version != REPORT_VERSION {
        return Err(RenderError::Version { path: path.into(), found: report.report_version });
    }
    Ok(report)
}

/// Rounds half away from zero, as the tables print integers.
fn round_int(x: f64) -> i64 {
    x.round() as i64
}

fn percent(x: f64) -> String {
    format!("{}%", round_int(100.0 * x))
}

fn sorted_models(report: &Report) -> Vec<&ModelReport> {
    let mut models: Vec<_> = report.models.iter().collect();
    models.sort_by(|a, b| a.model_name.cmp(&b.model_name));
    models
}

fn cumvar_cell(source: &SourceReport, r: usize) -> String {
    source.median_cumvar.iter().find(|v| v.r == r).map_or_else(|| "-".into(), |v| percent(v.value))
}

fn rank_cell(source: &SourceReport, threshold: f64) -> String {
    source
        .median_effective_rank
        .iter()
        .find(|v| v.threshold == threshold)
        .map_or_else(|| "-".into(), |v| round_int(v.value).to_string())
}

struct Grid {
    title: String,
    corner: String,
    groups: Vec<String>,
    rows: Vec<(String, Vec<String>)>,
}

impl Grid {
    fn paired(title: &str, corner: &str, report: &Report) -> Self {
        Self {
            title: title.into(),
            corner: corner.into(),
            groups: sorted_models(report).iter().map(|m| m.model_name.clone()).collect(),
            rows: Vec::new(),
        }
    }

    fn to_text(&self, sub: &[&str]) -> String {
        const CELL: usize = 7;
        let span = CELL * sub.len() + sub.len() - 1;
        let corner_w = self.corner.chars().count().max(self.rows.iter().map(|r| r.0.len()).max().unwrap_or(0));
        let group_w = self.groups.iter().map(|g| g.chars().count()).max().unwrap_or(0).max(span);
        let mut out = String::new();
        writeln!(out, "{}", self.title).unwrap();
        let mut line = format!("{:corner_w$}", "");
        for g in &self.groups {
            write!(line, " | {g:^group_w$}").unwrap();
        }
        writeln!(out, "{}", line.trim_end()).unwrap();
        let mut line = format!("{:>corner_w$}", self.corner);
        for _ in &self.groups {
            let cells: Vec<String> = sub.iter().map(|s| format!("{s:>CELL$}")).collect();
            write!(line, " | {:>group_w$}", cells.join(" ")).unwrap();
        }
        writeln!(out, "{line}").unwrap();
        for (label, cells) in &self.rows {
            let mut line = format!("{label:>corner_w$}");
            for chunk in cells.chunks(sub.len()) {
                let cells: Vec<String> = chunk.iter().map(|s| format!("{s:>CELL$}")).collect();
                write!(line, " | {:>group_w$}", cells.join(" ")).unwrap();
            }
            writeln!(out, "{line}").unwrap();
        }
        out
    }
}

fn table1(report: &Report) -> Grid {
    let mut g = Grid::paired("Cumulative variance captured by the top r singular components", "r", report);
    if !report.models.is_empty() {
        for &r in &report.config.ranks {
            let cells = sorted_models(report)
                .iter()
                .flat_map(|m| [cumvar_cell(&m.learned, r), cumvar_cell(&m.generated, r)])
                .collect();
            g.rows.push((r.to_string(), cells));
        }
    }
    g
}

fn table2(report: &Report) -> Grid {
    let mut g = Grid::paired("Singular components needed for the stated variance threshold", "threshold", report);
    if !report.models.is_empty() {
        for &t in &report.config.thresholds {
            let cells = sorted_models(report)
                .iter()
                .flat_map(|m| [rank_cell(&m.learned, t), rank_cell(&m.generated, t)])
                .collect();
            g.rows.push((percent(t), cells));
        }
    }
    g
}

fn beta_rows(report: &Report) -> Vec<[String; 6]> {
    sorted_models(report)
        .iter()
        .map(|m| {
            let d = &m.delocalization;
            [
                m.model_name.clone(),
                d.vectors.to_string(),
                format!("{:.3}", d.median_beta),
                format!("{:.3}", d.max_beta),
                format!("{:.3}", d.median_beta_right),
                format!("{:.3}", d.max_beta_right),
            ]
        })
        .collect()
}

const BETA_HEADER: [&str; 6] = ["model", "vectors", "median β", "max β", "median β (V)", "max β (V)"];
const L1_HEADER: [&str; 6] = ["model", "r", "median mean ℓ1", "median max ℓ1", "max ℓ1", "bound violations"];

fn l1_rows(report: &Report) -> Vec<[String; 6]> {
    sorted_models(report)
        .iter()
        .flat_map(|m| {
            m.truncation.iter().map(|t| {
                [
                    m.model_name.clone(),
                    t.r.to_string(),
                    format!("{:.4}", t.median_mean_l1),
                    format!("{:.4}", t.median_max_l1),
                    format!("{:.4}", t.max_max_l1),
                    t.bound_violations.to_string(),
                ]
            })
        })
        .collect()
}

fn plain_table(title: &str, header: &[&str; 6], rows: &[[String; 6]]) -> String {
    let mut widths = header.map(|h| h.chars().count());
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: [&str; 6]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join(" | ")
    };
    let mut out = format!("{title}\n{}\n", line(*header));
    for row in rows {
        out.push_str(&line(std::array::from_fn(|i| row[i].as_str())));
        out.push('\n');
    }
    out
}

fn render_text(report: &Report) -> String {
    let sub = ["M", "Ẽ"];
    [
        table1(report).to_text(&sub),
        table2(report).to_text(&sub),
        plain_table("Delocalization of singular vectors", &BETA_HEADER, &beta_rows(report)),
        plain_table("Row-wise ℓ1 attention error after rank-r truncation", &L1_HEADER, &l1_rows(report)),
    ]
    .join("\n")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Long format: one row per printed cell.
fn render_csv(report: &Report) -> String {
    let mut out = String::from("table,model,column,row,value\n");
    let mut push = |table: &str, model: &str, column: &str, row: &str, value: &str| {
        let fields = [table, model, column, row, value].map(csv_field);
        out.push_str(&fields.join(","));
        out.push('\n');
    };
    let sources = |m: &ModelReport| [("M", m.learned.clone()), ("Ẽ", m.generated.clone())];
    for m in sorted_models(report) {
        for &r in &report.config.ranks {
            for (col, s) in sources(m) {
                push("cumvar", &m.model_name, col, &r.to_string(), &cumvar_cell(&s, r));
            }
        }
        for &t in &report.config.thresholds {
            for (col, s) in sources(m) {
                push("effective_rank", &m.model_name, col, &percent(t), &rank_cell(&s, t));
            }
        }
    }
    for row in beta_rows(report) {
        for (col, value) in BETA_HEADER.iter().zip(&row).skip(1) {
            push("beta", &row[0], col, "", value);
        }
    }
    for row in l1_rows(report) {
        for (col, value) in L1_HEADER.iter().zip(&row).skip(2) {
            push("l1", &row[0], col, &row[1], value);
        }
    }
    out
}

pub fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Text => render_text(report),
        Format::Csv => render_csv(report),
        Format::Json => canonical_json(report).expect("report serializes"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{ReportConfig, ThresholdValue};

    fn config() -> ReportConfig {
        ReportConfig { ranks: vec![1, 2], thresholds: vec![0.9], trunc_ranks: vec![10] }
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round_int(2.5), 3);
        assert_eq!(round_int(3.5), 4);
        assert_eq!(round_int(2.4999), 2);
        assert_eq!(percent(0.725), "73%");
    }

    #[test]
    fn empty_report_has_headers_only() {
        let text = render(&Report::empty(config()), Format::Text);
        assert!(text.starts_with("Cumulative variance"));
        assert!(!text.contains('%'));
        let csv = render(&Report::empty(config()), Format::Csv);
        assert_eq!(csv, "table,model,column,row,value\n");
    }

    #[test]
    fn rank_cell_rounds_exact_median() {
        let s = SourceReport {
            count: 2,
            median_effective_rank: vec![ThresholdValue { threshold: 0.9, value: 2.5 }],
            ..Default::default()
        };
        assert_eq!(rank_cell(&s, 0.9), "3");
        assert_eq!(rank_cell(&s, 0.8), "-");
    }

    #[test]
    fn csv_quotes_when_needed() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
