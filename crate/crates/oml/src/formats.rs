//! On-disk dataset formats.
//!
//! Sparse multi-label lines, one example per line:
//!
//! ```text
//! #dims 3 3
//! 0,2 1:1.0 3:0.5
//!  2:1
//! ```
//!
//! The first field lists 0-based label ids separated by commas and may be
//! empty (the line then starts with whitespace). The remaining fields are
//! `index:value` pairs with 1-based feature indices; unlisted features are 0.
//! An optional `#dims p q` first line fixes the dimensions, otherwise they are
//! the largest index and label id seen. Other lines starting with `#` are
//! comments and blank lines are skipped.
//!
//! Dense CSV has a header row, real feature columns, and the last `q` columns
//! holding 0/1 labels.

use std::fmt::Write as _;

use oml_core::{Example, StreamDataset};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Dimension { line: usize, msg: String },
    #[error("{0}")]
    Empty(String),
    #[error(transparent)]
    Dataset(#[from] oml_core::Error),
}

fn parse_err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        msg: msg.into(),
    }
}

fn dim_err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Dimension {
        line,
        msg: msg.into(),
    }
}

struct SparseLine {
    line: usize,
    labels: Vec<usize>,
    features: Vec<(usize, f64)>,
}

fn parse_dims(rest: &str, line: usize) -> Result<(usize, usize), FormatError> {
    let nums: Vec<&str> = rest.split_whitespace().collect();
    if nums.len() != 2 {
        return Err(parse_err(line, "expected \"#dims p q\""));
    }
    let p = nums[0]
        .parse::<usize>()
        .map_err(|_| parse_err(line, format!("bad p {:?} in #dims", nums[0])))?;
    let q = nums[1]
        .parse::<usize>()
        .map_err(|_| parse_err(line, format!("bad q {:?} in #dims", nums[1])))?;
    if p == 0 || q == 0 {
        return Err(dim_err(line, "#dims p and q must be positive"));
    }
    Ok((p, q))
}

fn parse_label_field(field: &str, line: usize) -> Result<Vec<usize>, FormatError> {
    let mut labels = Vec::new();
    for tok in field.split(',') {
        let id = tok
            .parse::<usize>()
            .map_err(|_| parse_err(line, format!("bad label id {tok:?}")))?;
        if labels.contains(&id) {
            return Err(parse_err(line, format!("duplicate label id {id}")));
        }
        labels.push(id);
    }
    Ok(labels)
}

fn parse_feature(tok: &str, line: usize) -> Result<(usize, f64), FormatError> {
    let (idx, val) = tok
        .split_once(':')
        .ok_or_else(|| parse_err(line, format!("expected index:value, got {tok:?}")))?;
    let idx = idx
        .parse::<usize>()
        .map_err(|_| parse_err(line, format!("bad feature index {idx:?}")))?;
    if idx == 0 {
        return Err(parse_err(line, "feature indices are 1-based"));
    }
    let val = val
        .parse::<f64>()
        .map_err(|_| parse_err(line, format!("bad feature value {val:?}")))?;
    if !val.is_finite() {
        return Err(parse_err(line, format!("non-finite feature value {val}")));
    }
    Ok((idx, val))
}

fn parse_sparse_line(raw: &str, line: usize) -> Result<SparseLine, FormatError> {
    let mut labels = Vec::new();
    let mut rest = raw;
    if !raw.starts_with(char::is_whitespace) {
        let (field, tail) = raw.split_once(char::is_whitespace).unwrap_or((raw, ""));
        if field.contains(':') {
            // no label field at all, first token is already a feature
            rest = raw;
        } else {
            labels = parse_label_field(field, line)?;
            rest = tail;
        }
    }
    let mut features: Vec<(usize, f64)> = Vec::new();
    for tok in rest.split_whitespace() {
        let (idx, val) = parse_feature(tok, line)?;
        if features.iter().any(|&(i, _)| i == idx) {
            return Err(parse_err(line, format!("duplicate feature index {idx}")));
        }
        features.push((idx, val));
    }
    Ok(SparseLine {
        line,
        labels,
        features,
    })
}

/// Parses the sparse multi-label format into a dataset called `name`.
pub fn parse_sparse_multilabel(text: &str, name: &str) -> Result<StreamDataset, FormatError> {
    let mut dims: Option<(usize, usize)> = None;
    let mut rows = Vec::new();
    let mut seen_content = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            continue;
        }
        if let Some(rest) = raw.strip_prefix("#dims") {
            if seen_content {
                return Err(parse_err(line, "#dims must be the first line"));
            }
            dims = Some(parse_dims(rest, line)?);
            seen_content = true;
            continue;
        }
        seen_content = true;
        if raw.starts_with('#') {
            continue;
        }
        let row = parse_sparse_line(raw, line)?;
        if let Some((p, q)) = dims {
            if let Some(&(idx, _)) = row.features.iter().find(|&&(i, _)| i > p) {
                return Err(dim_err(line, format!("feature index {idx} exceeds p={p}")));
            }
            if let Some(&id) = row.labels.iter().find(|&&l| l >= q) {
                return Err(dim_err(
                    line,
                    format!("label id {id} out of range for q={q}"),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(FormatError::Empty(format!("{name}: no examples")));
    }
    let (p, q) = dims.unwrap_or_else(|| {
        let p = rows
            .iter()
            .flat_map(|r| r.features.iter().map(|&(i, _)| i))
            .max()
            .unwrap_or(0);
        let q = rows
            .iter()
            .flat_map(|r| r.labels.iter().map(|&l| l + 1))
            .max()
            .unwrap_or(0);
        (p, q)
    });
    if p == 0 || q == 0 {
        return Err(dim_err(
            rows[0].line,
            format!("cannot infer dimensions (p={p}, q={q}); add a #dims header"),
        ));
    }
    let examples = rows
        .into_iter()
        .map(|r| {
            let mut features = vec![0.0; p];
            for (idx, val) in r.features {
                features[idx - 1] = val;
            }
            let mut labels = vec![0u8; q];
            for l in r.labels {
                labels[l] = 1;
            }
            Example { features, labels }
        })
        .collect();
    Ok(StreamDataset::new(name, p, q, examples)?)
}

/// Writes the sparse format, always with a `#dims` header. Zero features are omitted.
pub fn write_sparse(ds: &StreamDataset) -> String {
    let mut out = String::new();
    writeln!(out, "#dims {} {}", ds.p(), ds.q()).unwrap();
    for e in ds.examples() {
        let ids: Vec<String> = e
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 1)
            .map(|(j, _)| j.to_string())
            .collect();
        out.push_str(&ids.join(","));
        let mut wrote = !ids.is_empty();
        for (i, &x) in e.features.iter().enumerate() {
            if x != 0.0 {
                write!(out, " {}:{}", i + 1, x).unwrap();
                wrote = true;
            }
        }
        if !wrote {
            // a blank line would be skipped on reading
            out.push_str(" 1:0");
        }
        out.push('\n');
    }
    out
}

/// Number of trailing header columns named `l<digits>`.
pub fn infer_label_columns(text: &str) -> Option<usize> {
    let header = text.lines().find(|l| !l.trim().is_empty())?;
    let n = header
        .split(',')
        .rev()
        .take_while(|c| {
            let c = c.trim();
            c.len() > 1 && c.starts_with('l') && c[1..].bytes().all(|b| b.is_ascii_digit())
        })
        .count();
    (n > 0).then_some(n)
}

/// Parses a dense CSV whose last `q` columns are labels.
pub fn parse_dense_csv(text: &str, q: usize, name: &str) -> Result<StreamDataset, FormatError> {
    if q == 0 {
        return Err(FormatError::Empty(
            "label column count must be positive".into(),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let width = match reader.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => h.len(),
        Ok(_) => return Err(FormatError::Empty(format!("{name}: missing header row"))),
        Err(e) => return Err(parse_err(1, e.to_string())),
    };
    if width <= q {
        return Err(dim_err(
            1,
            format!("{width} columns leave no features for q={q}"),
        ));
    }
    let p = width - q;
    let mut examples = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != width {
            return Err(parse_err(
                line,
                format!("ragged row: {} columns, header has {width}", rec.len()),
            ));
        }
        let features = rec
            .iter()
            .take(p)
            .map(|c| match c.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(line, format!("bad feature value {c:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let labels = rec
            .iter()
            .skip(p)
            .map(|c| match c.parse::<f64>() {
                Ok(0.0) => Ok(0u8),
                Ok(1.0) => Ok(1u8),
                _ => Err(parse_err(line, format!("non-binary label {c:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        examples.push(Example { features, labels });
    }
    if examples.is_empty() {
        return Err(FormatError::Empty(format!("{name}: no data rows")));
    }
    Ok(StreamDataset::new(name, p, q, examples)?)
}

/// Writes a dense CSV with header `f1..fp,l1..lq`.
pub fn write_dense_csv(ds: &StreamDataset) -> String {
    let mut out = String::new();
    let header: Vec<String> = (1..=ds.p())
        .map(|i| format!("f{i}"))
        .chain((1..=ds.q()).map(|j| format!("l{j}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for e in ds.examples() {
        let cells: Vec<String> = e
            .features
            .iter()
            .map(|x| x.to_string())
            .chain(e.labels.iter().map(|l| l.to_string()))
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
