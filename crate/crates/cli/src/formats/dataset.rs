//! Plain-text dataset files.
//!
//! ```text
//! #hetloss-dataset v1
//! d=2 n_c=2 n_s=3
//! subject_class=0,0,1
//! subject,class,f0,f1
//! 0,0,0.25,-1.5
//! ...
//! ```
//!
//! Floats are written in their shortest round-trip form, so a file read and
//! written again is byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use hetloss_core::{validate_dataset, Dataset, Sample};

use crate::error::{CliError, Result};

pub const DATASET_MAGIC: &str = "#hetloss-dataset v1";

pub fn dataset_to_string(ds: &Dataset) -> String {
    let mut out = String::new();
    writeln!(out, "{DATASET_MAGIC}").unwrap();
    writeln!(out, "d={} n_c={} n_s={}", ds.dim(), ds.n_classes(), ds.n_subjects()).unwrap();
    out.push_str("subject_class=");
    push_joined(&mut out, ds.subject_class().iter());
    out.push('\n');
    out.push_str("subject,class");
    for k in 0..ds.dim() {
        write!(out, ",f{k}").unwrap();
    }
    out.push('\n');
    for s in ds.samples() {
        write!(out, "{},{}", s.subject, s.class).unwrap();
        for v in &s.features {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn push_joined<T: std::fmt::Display>(out: &mut String, items: impl Iterator<Item = T>) {
    for (i, v) in items.enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v}").unwrap();
    }
}

/// Parses and validates a dataset; `path` is only used in error messages.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let err = |line: usize, msg: String| CliError::format(path, line, msg);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    match lines.next() {
        Some((_, l)) if l == DATASET_MAGIC => {}
        Some((n, l)) => return Err(err(n, format!("expected `{DATASET_MAGIC}`, found `{l}`"))),
        None => return Err(err(1, "empty file".into())),
    }

    let (n, header) = lines.next().ok_or_else(|| err(2, "missing size header".into()))?;
    let mut dims = [None; 3];
    for part in header.split_whitespace() {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| err(n, format!("malformed header entry `{part}`")))?;
        let slot = match key {
            "d" => 0,
            "n_c" => 1,
            "n_s" => 2,
            _ => return Err(err(n, format!("unknown header key `{key}`"))),
        };
        dims[slot] = Some(parse_num::<usize>(value).map_err(|m| err(n, m))?);
    }
    let [Some(d), Some(n_c), Some(n_s)] = dims else {
        return Err(err(n, "header needs d, n_c and n_s".into()));
    };

    let (n, line) = lines.next().ok_or_else(|| err(3, "missing subject_class line".into()))?;
    let list = line
        .strip_prefix("subject_class=")
        .ok_or_else(|| err(n, "expected `subject_class=`".into()))?;
    let subject_class: Vec<usize> = if list.is_empty() {
        Vec::new()
    } else {
        list.split(',').map(parse_num).collect::<Result<_, _>>().map_err(|m| err(n, m))?
    };
    if subject_class.len() != n_s {
        return Err(err(n, format!("expected {n_s} subject classes, found {}", subject_class.len())));
    }

    let (n, columns) = lines.next().ok_or_else(|| err(4, "missing column header".into()))?;
    if columns.split(',').count() != d + 2 {
        return Err(err(n, format!("expected {} columns", d + 2)));
    }

    let mut samples = Vec::new();
    for (n, line) in lines {
        let mut fields = line.split(',');
        let mut next = |what: &str| fields.next().ok_or_else(|| err(n, format!("missing {what}")));
        let subject = parse_num(next("subject")?).map_err(|m| err(n, m))?;
        let class = parse_num(next("class")?).map_err(|m| err(n, m))?;
        let features: Vec<f64> = fields.map(parse_num).collect::<Result<_, _>>().map_err(|m| err(n, m))?;
        if features.len() != d {
            return Err(err(n, format!("expected {d} features, found {}", features.len())));
        }
        samples.push(Sample::new(features, subject, class));
    }

    let ds = Dataset::new(d, n_c, subject_class, samples);
    let violations = validate_dataset(&ds);
    if violations.is_empty() {
        Ok(ds)
    } else {
        Err(hetloss_core::Error::InvalidDataset(violations).into())
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("cannot parse `{s}`"))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_dataset(&text, path)
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    super::write_file(path, dataset_to_string(ds).as_bytes())
}
