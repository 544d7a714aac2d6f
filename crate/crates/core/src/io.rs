//! Text formats for models and scans, and atomic file output.
//!
//! A model file is line oriented. `#` starts a comment. Sections are
//! introduced by `[windows]`, `[materials]`, `[priors]` and `[loss]`; rows
//! before any header are materials.
//!
//! ```text
//! [windows]
//! Window 1, Window 2, Window 3
//! [materials]
//! HEU, dangerous, 17700, 616, 247
//! Background, nondangerous, 1354, 519, 207
//! [priors]
//! uniform
//! [loss]
//! 0, 1
//! 10, 0
//! ```
//!
//! Priors are `uniform`, `rare-man-made`, or one `label, probability` row per
//! class. Loss rows are indexed `[assigned][true]` in material order.
//!
//! A scan file is CSV with one row per time step and one column per window,
//! preceded by an optional `# seed=...;stream=...;profile=...;source=...`
//! provenance line and a header of window labels.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::benchmark::{CatalogEntry, ClassCatalog};
use crate::classifier::{ClassifierModel, LossMatrix, ModelClass, Priors};
use crate::error::{Error, ParseError, Result};
use crate::simulation::{default_window_labels, ScanMatrix, ScanMetadata};
use crate::spectra::{normalize, MaterialClass};

/// Parsed contents of a model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub window_labels: Vec<String>,
    pub materials: Vec<MaterialClass>,
    pub priors: Priors,
    pub loss: Option<LossMatrix>,
}

impl ModelFile {
    pub fn model(&self) -> Result<ClassifierModel> {
        ClassifierModel::from_materials(&self.materials, &self.priors)
    }

    pub fn catalog(&self) -> Result<ClassCatalog> {
        ClassCatalog::new(
            self.materials
                .iter()
                .map(|m| CatalogEntry {
                    label: m.label().to_string(),
                    spectrum: m.spectrum(),
                    dangerous: m.dangerous(),
                })
                .collect(),
        )
    }

    pub fn material(&self, label: &str) -> Option<&MaterialClass> {
        self.materials.iter().find(|m| m.label() == label)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Windows,
    Materials,
    Priors,
    Loss,
}

/// Splits a line into trimmed fields, each with its 1-based column.
fn fields(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    for piece in line.split(',') {
        let lead = piece.len() - piece.trim_start().len();
        let column = line[..start + lead].chars().count() + 1;
        out.push((column, piece.trim()));
        start += piece.len() + 1;
    }
    out
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_number(line: usize, column: usize, text: &str, what: &str) -> Result<f64, ParseError> {
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ParseError::new(line, column, format!("{what} '{text}' is not a number")))
}

/// Parses and fully validates a model file.
pub fn parse_model_file(text: &str) -> Result<ModelFile> {
    let mut section = Section::Materials;
    let mut window_labels: Option<(usize, Vec<String>)> = None;
    let mut rows: Vec<(usize, MaterialClass)> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut prior_preset: Option<(usize, Priors)> = None;
    let mut prior_rows: Vec<(usize, usize, String, f64)> = Vec::new();
    let mut priors_header = 0;
    let mut loss_rows: Vec<Vec<f64>> = Vec::new();
    let mut loss_header = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw);
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = line.len() - line.trim_start().len();
        let first_col = line[..indent].chars().count() + 1;
        if trimmed.starts_with('[') {
            let name = trimmed
                .strip_prefix('[')
                .and_then(|s| s.strip_suffix(']'))
                .map(str::trim)
                .ok_or_else(|| ParseError::new(line_no, first_col, "unterminated section header"))?;
            section = match name {
                "windows" => Section::Windows,
                "materials" => Section::Materials,
                "priors" => {
                    priors_header = line_no;
                    Section::Priors
                }
                "loss" => {
                    loss_header = line_no;
                    Section::Loss
                }
                other => {
                    return Err(ParseError::new(
                        line_no,
                        first_col,
                        format!("unknown section '[{other}]'"),
                    )
                    .into())
                }
            };
            continue;
        }
        let cells = fields(line);
        match section {
            Section::Windows => {
                if window_labels.is_some() {
                    return Err(ParseError::new(line_no, first_col, "window labels given twice").into());
                }
                if let Some((c, _)) = cells.iter().find(|(_, f)| f.is_empty()) {
                    return Err(ParseError::new(line_no, *c, "empty window label").into());
                }
                window_labels = Some((line_no, cells.iter().map(|(_, f)| f.to_string()).collect()));
            }
            Section::Materials => {
                let (label_col, label) = cells[0];
                if label.is_empty() {
                    return Err(ParseError::new(line_no, label_col, "empty material label").into());
                }
                if let Some(&first) = seen.get(label) {
                    return Err(ParseError::new(
                        line_no,
                        label_col,
                        format!("duplicate label '{label}' (lines {first} and {line_no})"),
                    )
                    .into());
                }
                let Some(&(flag_col, flag)) = cells.get(1) else {
                    return Err(ParseError::new(
                        line_no,
                        line.trim_end().chars().count() + 1,
                        "expected 'dangerous' or 'nondangerous' after the label",
                    )
                    .into());
                };
                let dangerous = match flag {
                    "dangerous" => true,
                    "nondangerous" => false,
                    other => {
                        return Err(ParseError::new(
                            line_no,
                            flag_col,
                            format!("flag '{other}' must be 'dangerous' or 'nondangerous'"),
                        )
                        .into())
                    }
                };
                let mut rates = Vec::with_capacity(cells.len() - 2);
                for &(col, cell) in &cells[2..] {
                    let rate = parse_number(line_no, col, cell, "rate")?;
                    if rate <= 0.0 {
                        return Err(ParseError::new(
                            line_no,
                            col,
                            format!("rate {cell} must be positive"),
                        )
                        .into());
                    }
                    rates.push(rate);
                }
                let expected = match (&window_labels, rows.first()) {
                    (Some((_, w)), _) => Some(w.len()),
                    (None, Some((_, m))) => Some(m.windows()),
                    (None, None) => None,
                };
                if let Some(b) = expected {
                    if rates.len() != b {
                        return Err(ParseError::new(
                            line_no,
                            label_col,
                            format!("'{label}' has {} rates, expected {b}", rates.len()),
                        )
                        .into());
                    }
                }
                let material = MaterialClass::new(label, rates, dangerous)
                    .map_err(|e| ParseError::new(line_no, label_col, e.to_string()))?;
                seen.insert(label.to_string(), line_no);
                rows.push((line_no, material));
            }
            Section::Priors => {
                if cells.len() == 1 {
                    if prior_preset.is_some() || !prior_rows.is_empty() {
                        return Err(ParseError::new(line_no, first_col, "priors given twice").into());
                    }
                    let preset = cells[0]
                        .1
                        .parse::<Priors>()
                        .map_err(|e| ParseError::new(line_no, first_col, e.to_string()))?;
                    prior_preset = Some((line_no, preset));
                } else {
                    if prior_preset.is_some() {
                        return Err(ParseError::new(
                            line_no,
                            first_col,
                            "explicit prior rows cannot follow a preset",
                        )
                        .into());
                    }
                    if cells.len() != 2 {
                        return Err(ParseError::new(
                            line_no,
                            cells[2].0,
                            "prior rows have the form 'label, probability'",
                        )
                        .into());
                    }
                    let value = parse_number(line_no, cells[1].0, cells[1].1, "prior")?;
                    prior_rows.push((line_no, cells[0].0, cells[0].1.to_string(), value));
                }
            }
            Section::Loss => {
                let row = cells
                    .iter()
                    .map(|&(c, f)| parse_number(line_no, c, f, "loss"))
                    .collect::<Result<Vec<_>, _>>()?;
                loss_rows.push(row);
            }
        }
    }

    if rows.is_empty() {
        return Err(ParseError::new(text.lines().count().max(1), 1, "no material rows").into());
    }
    let windows = rows[0].1.windows();
    let window_labels = match window_labels {
        Some((line, labels)) => {
            if labels.len() != windows {
                return Err(ParseError::new(
                    line,
                    1,
                    format!("{} window labels for {windows} windows", labels.len()),
                )
                .into());
            }
            labels
        }
        None => default_window_labels(windows),
    };

    let priors = if let Some((_, p)) = prior_preset {
        p
    } else if !prior_rows.is_empty() {
        let mut values = vec![None; rows.len()];
        for (line, col, label, value) in &prior_rows {
            let Some(i) = rows.iter().position(|(_, m)| m.label() == label) else {
                return Err(ParseError::new(*line, *col, format!("prior for unknown class '{label}'")).into());
            };
            if values[i].is_some() {
                return Err(ParseError::new(*line, *col, format!("prior for '{label}' given twice")).into());
            }
            values[i] = Some(*value);
        }
        if let Some(i) = values.iter().position(Option::is_none) {
            return Err(ParseError::new(
                priors_header,
                1,
                format!("no prior for class '{}'", rows[i].1.label()),
            )
            .into());
        }
        Priors::Explicit(values.into_iter().map(Option::unwrap).collect())
    } else {
        Priors::Uniform
    };

    let loss = if loss_rows.is_empty() {
        None
    } else {
        let matrix = LossMatrix::new(loss_rows)
            .map_err(|e| ParseError::new(loss_header, 1, e.to_string()))?;
        if matrix.size() != rows.len() {
            return Err(ParseError::new(
                loss_header,
                1,
                format!("loss matrix is {0}x{0} for {1} classes", matrix.size(), rows.len()),
            )
            .into());
        }
        Some(matrix)
    };

    // Model-level checks, reported against the offending row.
    let flags: Vec<bool> = rows.iter().map(|(_, m)| m.dangerous()).collect();
    let resolved = priors.resolve(&flags).map_err(|e| {
        ParseError::new(priors_header.max(1), 1, e.to_string())
    })?;
    let mut classes = Vec::with_capacity(rows.len());
    for (i, (line, m)) in rows.iter().enumerate() {
        let spectrum = normalize(m.rates()).map_err(|e| ParseError::new(*line, 1, e.to_string()))?;
        if let Some((other_line, other)) = rows[..i]
            .iter()
            .find(|(_, o)| o.spectrum() == spectrum)
        {
            return Err(ParseError::new(
                *line,
                1,
                format!(
                    "'{}' has the same spectrum as '{}' on line {other_line}",
                    m.label(),
                    other.label()
                ),
            )
            .into());
        }
        classes.push(ModelClass {
            label: m.label().to_string(),
            spectrum,
            prior: resolved[i],
            dangerous: m.dangerous(),
        });
    }
    ClassifierModel::new(classes).map_err(|e| ParseError::new(priors_header.max(1), 1, e.to_string()))?;

    Ok(ModelFile {
        window_labels,
        materials: rows.into_iter().map(|(_, m)| m).collect(),
        priors,
        loss,
    })
}

/// Parses a model file straight into a classifier.
pub fn parse_model(text: &str) -> Result<ClassifierModel> {
    parse_model_file(text)?.model()
}

fn format_number(v: f64) -> String {
    format!("{v}")
}

pub fn write_model_file(file: &ModelFile) -> String {
    let mut out = String::new();
    out.push_str("[windows]\n");
    out.push_str(&file.window_labels.join(", "));
    out.push_str("\n\n[materials]\n");
    for m in &file.materials {
        let flag = if m.dangerous() { "dangerous" } else { "nondangerous" };
        let rates: Vec<String> = m.rates().iter().map(|&r| format_number(r)).collect();
        out.push_str(&format!("{}, {flag}, {}\n", m.label(), rates.join(", ")));
    }
    out.push_str("\n[priors]\n");
    match &file.priors {
        Priors::Explicit(values) => {
            for (m, p) in file.materials.iter().zip(values) {
                out.push_str(&format!("{}, {}\n", m.label(), format_number(*p)));
            }
        }
        preset => {
            out.push_str(preset.name());
            out.push('\n');
        }
    }
    if let Some(loss) = &file.loss {
        out.push_str("\n[loss]\n");
        for row in loss.rows() {
            let cells: Vec<String> = row.iter().map(|&w| format_number(w)).collect();
            out.push_str(&cells.join(", "));
            out.push('\n');
        }
    }
    out
}

/// Percent-escapes separators, line breaks, and whitespace at either end
/// (the reader trims entries).
fn escape_meta(value: &str) -> String {
    let core_start = value.len() - value.trim_start().len();
    let core_end = value.trim_end().len().max(core_start);
    let mut out = String::with_capacity(value.len());
    for (i, c) in value.char_indices() {
        let edge = (i < core_start || i >= core_end) && c.is_ascii_whitespace();
        match c {
            '%' | ';' | '=' | '\n' | '\r' => out.push_str(&format!("%{:02X}", c as u32)),
            c if edge => out.push_str(&format!("%{:02X}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

fn unescape_meta(value: &str, line: usize, column: usize) -> Result<String, ParseError> {
    let mut out = String::with_capacity(value.len());
    let mut chars = value.char_indices();
    while let Some((i, c)) = chars.next() {
        if c != '%' {
            out.push(c);
            continue;
        }
        let hex: String = chars.by_ref().take(2).map(|(_, h)| h).collect();
        let byte = u8::from_str_radix(&hex, 16)
            .ok()
            .filter(|_| hex.len() == 2)
            .ok_or_else(|| ParseError::new(line, column + i, format!("bad escape '%{hex}'")))?;
        out.push(byte as char);
    }
    Ok(out)
}

pub fn write_scan_file(scan: &ScanMatrix) -> String {
    let mut out = String::new();
    let m = &scan.metadata;
    let mut meta = Vec::new();
    if let Some(s) = m.seed {
        meta.push(format!("seed={s}"));
    }
    if let Some(s) = m.stream {
        meta.push(format!("stream={s}"));
    }
    if let Some(p) = &m.profile {
        meta.push(format!("profile={}", escape_meta(p)));
    }
    if let Some(s) = &m.source {
        meta.push(format!("source={}", escape_meta(s)));
    }
    if !meta.is_empty() {
        out.push_str("# ");
        out.push_str(&meta.join(";"));
        out.push('\n');
    }
    let header: Vec<String> = scan
        .window_labels()
        .iter()
        .map(|l| l.replace(',', " "))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for t in 0..scan.steps() {
        let row: Vec<String> = (0..scan.windows()).map(|b| scan.count(b, t).to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn parse_metadata(line: usize, body: &str, offset: usize) -> Result<ScanMetadata, ParseError> {
    let mut meta = ScanMetadata::default();
    let mut pos = offset;
    for pair in body.split(';') {
        let column = pos + 1;
        pos += pair.chars().count() + 1;
        let pair_trimmed = pair.trim();
        if pair_trimmed.is_empty() {
            continue;
        }
        let (key, value) = pair_trimmed
            .split_once('=')
            .ok_or_else(|| ParseError::new(line, column, format!("metadata entry '{pair_trimmed}' has no '='")))?;
        let value = unescape_meta(value, line, column + key.len() + 1)?;
        let parse_u64 = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| ParseError::new(line, column, format!("{key} '{v}' is not an unsigned integer")))
        };
        match key.trim() {
            "seed" => meta.seed = Some(parse_u64(&value)?),
            "stream" => meta.stream = Some(parse_u64(&value)?),
            "profile" => meta.profile = Some(value),
            "source" => meta.source = Some(value),
            other => {
                return Err(ParseError::new(line, column, format!("unknown metadata key '{other}'")))
            }
        }
    }
    Ok(meta)
}

pub fn parse_scan_file(text: &str) -> Result<ScanMatrix> {
    let mut metadata = ScanMetadata::default();
    let mut labels: Option<Vec<String>> = None;
    let mut columns: Vec<Vec<u64>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if labels.is_none() && columns.is_empty() && rest.contains('=') {
                let offset = raw.len() - rest.len();
                metadata = parse_metadata(line_no, rest, offset)?;
            }
            continue;
        }
        let cells = fields(raw);
        match &labels {
            None => {
                let all_numeric = cells.iter().all(|(_, c)| c.parse::<i128>().is_ok());
                if all_numeric {
                    labels = Some(default_window_labels(cells.len()));
                } else {
                    labels = Some(cells.iter().map(|(_, c)| c.to_string()).collect());
                    continue;
                }
            }
            Some(_) => {}
        }
        let width = labels.as_ref().map_or(0, Vec::len);
        if cells.len() != width {
            return Err(ParseError::new(
                line_no,
                1,
                format!("row has {} counts, expected {width}", cells.len()),
            )
            .into());
        }
        let mut row = Vec::with_capacity(width);
        for &(col, cell) in &cells {
            let value = cell.parse::<i128>().map_err(|_| {
                ParseError::new(line_no, col, format!("count '{cell}' is not an integer"))
            })?;
            if value < 0 {
                return Err(ParseError::new(line_no, col, format!("count {value} is negative")).into());
            }
            let value = u64::try_from(value)
                .map_err(|_| ParseError::new(line_no, col, format!("count {value} is too large")))?;
            row.push(value);
        }
        columns.push(row);
    }
    let Some(labels) = labels else {
        return Err(ParseError::new(1, 1, "scan file has no header or rows").into());
    };
    if columns.is_empty() {
        return Err(ParseError::new(text.lines().count().max(1), 1, "scan file has no count rows").into());
    }
    let mut scan = ScanMatrix::from_time_columns(labels, &columns)?;
    scan.metadata = metadata;
    Ok(scan)
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename, so a
/// failure never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::domain(format!("'{}' is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}
