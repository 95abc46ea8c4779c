//! CSV datasets in and out.

use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Schema {
    /// Attribute columns by header name; `None` takes every column except
    /// the label.
    pub attributes: Option<Vec<String>>,
    pub label: Option<String>,
    /// Label cell text meaning "unknown"; the empty cell always does.
    pub missing: String,
    /// Parse attributes as categories `0..K_d`.
    pub categorical: bool,
    /// Alphabet sizes for categorical attributes; inferred when empty.
    pub alphabet_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub x: Array2<f64>,
    pub labels: Option<Vec<Option<usize>>>,
    /// Set for categorical data.
    pub alphabet_sizes: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

fn at(row: usize, col: &str, msg: impl std::fmt::Display) -> CliError {
    // Row numbers count the header as line 1.
    CliError::Data(format!("row {row}, column {col:?}: {msg}"))
}

pub fn ingest_csv(path: &Path, schema: &Schema) -> CliResult<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_csv(&text, schema)
}

pub fn parse_csv(text: &str, schema: &Schema) -> CliResult<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::Data("missing header row".into()));
    }
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| CliError::Data(format!("no column named {name:?}")))
    };
    let label_col = schema.label.as_deref().map(find).transpose()?;
    let attr_cols: Vec<usize> = match &schema.attributes {
        Some(names) => names.iter().map(|n| find(n)).collect::<CliResult<_>>()?,
        None => (0..header.len()).filter(|&c| Some(c) != label_col).collect(),
    };
    if attr_cols.is_empty() {
        return Err(CliError::Data("no attribute columns".into()));
    }
    if schema.categorical && !schema.alphabet_sizes.is_empty() && schema.alphabet_sizes.len() != attr_cols.len() {
        return Err(CliError::Data(format!(
            "{} alphabet sizes for {} attribute columns",
            schema.alphabet_sizes.len(),
            attr_cols.len()
        )));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| CliError::Data(format!("row {row}: {e}")))?;
        if record.len() != header.len() {
            return Err(CliError::Data(format!("row {row}: {} fields, header has {}", record.len(), header.len())));
        }
        for (j, &c) in attr_cols.iter().enumerate() {
            let cell = record[c].trim();
            let v = if schema.categorical {
                let k: usize = cell.parse().map_err(|_| at(row, &header[c], format!("{cell:?} is not a category")))?;
                if let Some(&size) = schema.alphabet_sizes.get(j) {
                    if k >= size {
                        return Err(at(row, &header[c], format!("unknown category {k} (alphabet size {size})")));
                    }
                }
                k as f64
            } else {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| at(row, &header[c], format!("{cell:?} is not a finite number")))?
            };
            values.push(v);
        }
        if let Some(c) = label_col {
            let cell = record[c].trim();
            if cell.is_empty() || cell == schema.missing {
                labels.push(None);
            } else {
                let k = cell.parse().map_err(|_| at(row, &header[c], format!("{cell:?} is not a class index")))?;
                labels.push(Some(k));
            }
        }
        rows += 1;
    }
    let x = Array2::from_shape_vec((rows, attr_cols.len()), values).expect("one value per attribute per row");
    let alphabet_sizes = if !schema.categorical {
        Vec::new()
    } else if !schema.alphabet_sizes.is_empty() {
        schema.alphabet_sizes.clone()
    } else {
        x.columns().into_iter().map(|c| c.iter().fold(0.0f64, |a, &b| a.max(b)) as usize + 1).collect()
    };
    Ok(Dataset {
        names: attr_cols.iter().map(|&c| header[c].clone()).collect(),
        x,
        labels: label_col.map(|_| labels),
        alphabet_sizes,
    })
}

/// Shortest decimal that parses back to the same double.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Header row then data rows, with an optional trailing label column
/// (missing labels as empty cells).
pub fn dataset_csv(names: &[String], x: ArrayView2<f64>, labels: Option<&[Option<usize>]>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    if labels.is_some() {
        header.push("label");
    }
    w.write_record(&header).expect("in-memory write");
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        if let Some(l) = labels {
            cells.push(l[i].map(|c| c.to_string()).unwrap_or_default());
        }
        w.write_record(&cells).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

/// Writes through a sibling temporary file and a rename, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let name = path.file_name().ok_or_else(|| CliError::Config(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}
