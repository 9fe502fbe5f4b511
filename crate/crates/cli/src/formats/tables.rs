//! CSV files exchanged between pipeline stages.

use std::path::Path;

use hetloss_core::{Decision, EpochLog, EvalResult, ModelConfidences, Rule};

use crate::error::{CliError, Result};

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    CliError::format(path, line, e.to_string())
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Failed(e.to_string()))?;
    super::write_file(path, &bytes)
}

/// A record's 1-based file line and its cells.
type Record = (usize, Vec<String>);

/// Header plus records, each as strings.
fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Record>)> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().from_reader(file);
    let header = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok((header, rows))
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, row: &[String], i: usize, name: &str) -> Result<T> {
    let raw = row
        .get(i)
        .ok_or_else(|| CliError::format(path, line, format!("missing column `{name}`")))?;
    raw.parse()
        .map_err(|_| CliError::format(path, line, format!("bad `{name}` value `{raw}`")))
}

/// Per-sample confidence vectors of every model, in sample order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceTable {
    pub sample_ids: Vec<usize>,
    pub n_classes: usize,
    pub n_models: usize,
    /// `probs[sample][model]` is one probability vector.
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl ConfidenceTable {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut header = vec!["sample_id".to_owned(), "model_id".to_owned()];
        header.extend((0..self.n_classes).map(|c| format!("p_class{c}")));
        let mut rows = Vec::new();
        for (i, &id) in self.sample_ids.iter().enumerate() {
            for (m, p) in self.probs[i].iter().enumerate() {
                let mut row = vec![id.to_string(), m.to_string()];
                row.extend(p.iter().map(f64::to_string));
                rows.push(row);
            }
        }
        write_rows(path, &header, &rows)
    }

    /// Rows must be grouped by sample with model ids `0..K` in order.
    pub fn read(path: &Path) -> Result<Self> {
        let (header, rows) = read_rows(path)?;
        if header.len() < 3 || header[0] != "sample_id" || header[1] != "model_id" {
            return Err(CliError::format(path, 1, "expected `sample_id,model_id,p_class0,...`"));
        }
        let n_classes = header.len() - 2;
        let mut sample_ids: Vec<usize> = Vec::new();
        let mut probs: Vec<Vec<Vec<f64>>> = Vec::new();
        for (line, row) in rows {
            let id: usize = field(path, line, &row, 0, "sample_id")?;
            let model: usize = field(path, line, &row, 1, "model_id")?;
            let p: Vec<f64> = (0..n_classes)
                .map(|c| field(path, line, &row, c + 2, "p_class"))
                .collect::<Result<_>>()?;
            if model == 0 {
                sample_ids.push(id);
                probs.push(Vec::new());
            }
            match (sample_ids.last(), probs.last_mut()) {
                (Some(&last), Some(models)) if last == id && models.len() == model => models.push(p),
                _ => {
                    return Err(CliError::format(
                        path,
                        line,
                        format!("sample {id} model {model} out of order"),
                    ))
                }
            }
        }
        let n_models = probs.first().map_or(0, Vec::len);
        if let Some(i) = probs.iter().position(|p| p.len() != n_models) {
            return Err(CliError::format(
                path,
                0,
                format!("sample {} has {} models, expected {n_models}", sample_ids[i], probs[i].len()),
            ));
        }
        if sample_ids.is_empty() {
            return Err(CliError::format(path, 1, "no rows"));
        }
        Ok(ConfidenceTable {
            sample_ids,
            n_classes,
            n_models,
            probs,
        })
    }

    pub fn model_confidences(&self) -> Result<Vec<ModelConfidences>> {
        self.probs
            .iter()
            .map(|p| ModelConfidences::new(p.clone()).map_err(Into::into))
            .collect()
    }
}

pub fn write_decisions(path: &Path, sample_ids: &[usize], decisions: &[Decision]) -> Result<()> {
    let header = ["sample_id", "decided_class", "confidence", "rule"].map(str::to_owned);
    let rows: Vec<Vec<String>> = sample_ids
        .iter()
        .zip(decisions)
        .map(|(id, d)| {
            vec![
                id.to_string(),
                d.class.to_string(),
                d.confidence.to_string(),
                d.rule.as_str().to_owned(),
            ]
        })
        .collect();
    write_rows(path, &header, &rows)
}

pub fn read_decisions(path: &Path) -> Result<Vec<(usize, Decision)>> {
    let (header, rows) = read_rows(path)?;
    if header != ["sample_id", "decided_class", "confidence", "rule"] {
        return Err(CliError::format(path, 1, "expected `sample_id,decided_class,confidence,rule`"));
    }
    rows.into_iter()
        .map(|(line, row)| {
            let rule = match row.get(3).map(String::as_str) {
                Some("max-vote") => Rule::MaxVote,
                Some("harmonic") => Rule::Harmonic,
                other => return Err(CliError::format(path, line, format!("unknown rule {other:?}"))),
            };
            Ok((
                field(path, line, &row, 0, "sample_id")?,
                Decision {
                    class: field(path, line, &row, 1, "decided_class")?,
                    confidence: field(path, line, &row, 2, "confidence")?,
                    rule,
                },
            ))
        })
        .collect()
}

/// One row of a metrics report; `result` is `None` for an empty subset.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub split: String,
    pub result: Option<EvalResult>,
    pub support: usize,
    pub fraction: f64,
}

fn metrics_header(n_classes: usize) -> Vec<String> {
    let mut h = vec!["split".to_owned(), "accuracy".to_owned(), "weighted_f1".to_owned()];
    h.extend((0..n_classes).map(|c| format!("f1_class_{c}")));
    h.push("support".to_owned());
    h.push("fraction".to_owned());
    h
}

fn metrics_cells(row: &MetricsRow, n_classes: usize) -> Vec<String> {
    let mut cells = vec![row.split.clone()];
    match &row.result {
        Some(r) => {
            cells.push(r.accuracy.to_string());
            cells.push(r.weighted_f1.to_string());
            cells.extend(r.per_class_f1.iter().map(f64::to_string));
        }
        None => cells.extend(std::iter::repeat_n(String::new(), 2 + n_classes)),
    }
    cells.push(row.support.to_string());
    cells.push(row.fraction.to_string());
    cells
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow], n_classes: usize) -> Result<()> {
    let body: Vec<Vec<String>> = rows.iter().map(|r| metrics_cells(r, n_classes)).collect();
    write_rows(path, &metrics_header(n_classes), &body)
}

/// Fixed-width table with four decimals; empty subsets show `-`.
pub fn metrics_table(rows: &[MetricsRow], n_classes: usize) -> String {
    let header = metrics_header(n_classes);
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut c = vec![r.split.clone()];
            match &r.result {
                Some(e) => {
                    c.push(format!("{:.4}", e.accuracy));
                    c.push(format!("{:.4}", e.weighted_f1));
                    c.extend(e.per_class_f1.iter().map(|v| format!("{v:.4}")));
                }
                None => c.extend(std::iter::repeat_n("-".to_owned(), 2 + n_classes)),
            }
            c.push(r.support.to_string());
            c.push(format!("{:.4}", r.fraction));
            c
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| cells.iter().map(|c| c[i].len()).chain([header[i].len()]).max().unwrap())
        .collect();
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&cells) {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (v, &w))| if i == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn write_train_log(path: &Path, history: &[EpochLog]) -> Result<()> {
    let header = ["step", "ce", "class", "subject", "subject_class", "total"].map(str::to_owned);
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|h| {
            vec![
                h.step.to_string(),
                h.ce.to_string(),
                h.class_center.to_string(),
                h.subject_center.to_string(),
                h.subject_class.to_string(),
                h.total.to_string(),
            ]
        })
        .collect();
    write_rows(path, &header, &rows)
}

pub fn write_val_log(path: &Path, history: &[EpochLog]) -> Result<()> {
    let header = ["step", "stage", "epoch", "val_accuracy", "val_weighted_f1"].map(str::to_owned);
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|h| {
            vec![
                h.step.to_string(),
                h.stage.to_string(),
                h.epoch.to_string(),
                h.val_accuracy.to_string(),
                h.val_weighted_f1.to_string(),
            ]
        })
        .collect();
    write_rows(path, &header, &rows)
}
