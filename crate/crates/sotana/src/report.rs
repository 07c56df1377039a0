//! Renders metric, pass@k and human-evaluation report files as
//! fixed-width text and CSV.
//!
//! Each input file is one JSON document. Its kind is detected from its
//! top-level keys, then it is decoded strictly; any mismatch is reported
//! with the file and the offending field.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sotana_core::evalmetrics::{MetricReport, PassReport};
use sotana_core::study::{AggregateTable, AgreementReport, Dimension, MeanStd};

use crate::evaluate::CodegenReport;

/// What `study report` writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub aggregate: AggregateTable,
    pub agreement: AgreementReport,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReportError {
    #[error("no input files given")]
    NoInputs,
    #[error("{path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("{path}: field `{field}`: {message}")]
    Schema { path: PathBuf, field: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Metrics { label: String, report: MetricReport },
    Pass { label: String, report: PassReport },
    Study { label: String, report: StudyReport },
}

/// Rendered tables: one text block and one CSV document per table kind.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rendered {
    pub text: String,
    pub csv: Vec<(String, String)>,
}

/// `2.52 (±0.74)`.
pub fn mean_std_cell(m: &MeanStd) -> String {
    format!("{:.2} (±{:.2})", m.mean, m.std)
}

fn schema_err(path: &Path, field: &str, message: impl Into<String>) -> ReportError {
    ReportError::Schema { path: path.to_path_buf(), field: field.to_string(), message: message.into() }
}

/// Pulls the field name out of serde's "missing field `x`" / "unknown
/// field `x`" messages; falls back to the JSON path walked so far.
fn decode<T: DeserializeOwned>(path: &Path, root: &str, value: serde_json::Value) -> Result<T, ReportError> {
    serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.contains("field `"))
            .map_or_else(|| root.to_string(), |f| format!("{root}.{f}"));
        schema_err(path, &field, msg)
    })
}

pub fn load(path: &Path) -> Result<Input, ReportError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ReportError::Unreadable { path: path.to_path_buf(), message: e.to_string() })?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| ReportError::Unreadable { path: path.to_path_buf(), message: format!("not JSON: {e}") })?;
    let obj = value.as_object().ok_or_else(|| schema_err(path, "$", "top level must be an object"))?;
    let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    if obj.contains_key("corpus") || obj.contains_key("per_example") {
        Ok(Input::Metrics { label, report: decode(path, "$", value)? })
    } else if obj.contains_key("executions") {
        let r: CodegenReport = decode(path, "$", value)?;
        Ok(Input::Pass { label, report: r.pass })
    } else if obj.contains_key("per_task") {
        Ok(Input::Pass { label, report: decode(path, "$", value)? })
    } else if obj.contains_key("aggregate") || obj.contains_key("agreement") {
        Ok(Input::Study { label, report: decode(path, "$", value)? })
    } else {
        let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        Err(schema_err(
            path,
            "$",
            format!("unrecognised report (expected `corpus`, `per_task`, `executions` or `aggregate`; found {keys:?})"),
        ))
    }
}

pub fn render_files(paths: &[PathBuf]) -> Result<Rendered, ReportError> {
    if paths.is_empty() {
        return Err(ReportError::NoInputs);
    }
    let inputs = paths.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
    Ok(render(&inputs))
}

/// Left-aligned first column, right-aligned others, widths from content.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = w - c.chars().count();
            if i == 0 {
                s.push_str(c);
                s.extend(std::iter::repeat_n(' ', pad));
            } else {
                s.extend(std::iter::repeat_n(' ', pad));
                s.push_str(c);
            }
        }
        s.truncate(s.trim_end().len());
        s.push('\n');
        s
    };
    let mut out = line(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(&rule));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

fn csv_doc(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    // Writing to memory cannot fail.
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv of UTF-8 cells")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

fn emit(out: &mut Rendered, name: &str, title: &str, header: &[&str], rows: &[Vec<String>]) {
    if rows.is_empty() {
        return;
    }
    if !out.text.is_empty() {
        out.text.push('\n');
    }
    let _ = writeln!(out.text, "{title}");
    out.text.push_str(&table(header, rows));
    out.csv.push((name.to_string(), csv_doc(header, rows)));
}

pub fn render(inputs: &[Input]) -> Rendered {
    let mut out = Rendered::default();
    let mut metric_rows = Vec::new();
    let mut pass_rows = Vec::new();
    let mut human_rows = Vec::new();
    let mut alpha_rows = Vec::new();
    let mut tau_rows = Vec::new();
    let mut scale = None;
    for input in inputs {
        match input {
            Input::Metrics { label, report } => {
                let c = &report.corpus;
                scale.get_or_insert_with(|| report.scale.clone());
                metric_rows.push(vec![
                    label.clone(),
                    format!("{:.2}", c.bleu_mean),
                    format!("{:.2}", c.meteor_mean),
                    format!("{:.2}", c.rouge_l_mean),
                    format!("{:.2}", c.cider),
                ]);
            }
            Input::Pass { label, report } => {
                pass_rows.push(vec![
                    label.clone(),
                    report.k.to_string(),
                    report.per_task.len().to_string(),
                    format!("{:.2}", report.pass_at_k),
                ]);
            }
            Input::Study { label, report } => {
                for (model, s) in &report.aggregate.models {
                    human_rows.push(vec![
                        model.clone(),
                        s.pairs.to_string(),
                        mean_std_cell(&s.alignment),
                        mean_std_cell(&s.accuracy),
                        mean_std_cell(&s.readability),
                    ]);
                }
                let alpha = &report.agreement.alpha_per_dimension;
                let mut row = vec![label.clone()];
                row.extend(Dimension::ALL.iter().map(|d| opt(alpha.get(d).copied().flatten())));
                alpha_rows.push(row);
                for t in &report.agreement.pairwise_tau {
                    let mut row = vec![format!("{} / {}", t.rater_a, t.rater_b), t.co_rated.to_string()];
                    row.extend(Dimension::ALL.iter().map(|d| opt(t.per_dimension.get(d).copied().flatten())));
                    row.push(opt(t.pooled));
                    tau_rows.push(row);
                }
            }
        }
    }
    emit(&mut out, "metrics", "Automatic metrics", &["Run", "BLEU", "Meteor", "Rouge-L", "Cider"], &metric_rows);
    if let Some(s) = scale {
        let _ = writeln!(out.text, "BLEU: {}\nMeteor: {}\nRouge-L: {}\nCider: {}", s.bleu, s.meteor, s.rouge_l, s.cider);
    }
    emit(&mut out, "pass", "Code generation", &["Run", "k", "Tasks", "Pass@k"], &pass_rows);
    emit(&mut out, "human", "Human evaluation", &["Model", "Pairs", "Alignment", "Accuracy", "Readability"], &human_rows);
    emit(&mut out, "alpha", "Krippendorff's alpha (ordinal)", &["Study", "Alignment", "Accuracy", "Readability"], &alpha_rows);
    emit(
        &mut out,
        "tau",
        "Kendall's tau-b per rater pair",
        &["Raters", "Co-rated", "Alignment", "Accuracy", "Readability", "Pooled"],
        &tau_rows,
    );
    out
}
