//! Labeled datasets, CSV ingestion, preprocessing and stratified splitting.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FemdaError, Result};
use crate::kv::KeyValues;
use crate::linalg::Observation;

/// Points with dense class ids `0..K` and their display names.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    points: Vec<Observation>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    feature_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(
        points: Vec<Observation>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(FemdaError::DimensionMismatch {
                expected: points.len(),
                found: labels.len(),
            });
        }
        let m = feature_names.len();
        if let Some(p) = points.iter().find(|p| p.len() != m) {
            return Err(FemdaError::DimensionMismatch {
                expected: m,
                found: p.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(FemdaError::ConfigInvalid(format!(
                "label {l} has no class name ({} classes)",
                class_names.len()
            )));
        }
        Ok(Self {
            points,
            labels,
            class_names,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn points(&self) -> &[Observation] {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Points of one class, in dataset order.
    pub fn class_points(&self, class: usize) -> Vec<Observation> {
        self.points
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == class)
            .map(|(p, _)| p.clone())
            .collect()
    }

    /// Indices of the points of each class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Per-class sample means (`None` for classes without points).
    pub fn class_means(&self) -> Vec<Option<Observation>> {
        let mut sums = vec![DVector::zeros(self.dim()); self.num_classes()];
        let counts = self.class_counts();
        for (p, &l) in self.points.iter().zip(&self.labels) {
            sums[l] += p;
        }
        sums.into_iter()
            .zip(counts)
            .map(|(s, c)| (c > 0).then(|| s / c as f64))
            .collect()
    }

    /// Subset in the given index order, keeping the class list.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Same labels and names with replaced points.
    pub fn with_points(&self, points: Vec<Observation>) -> Result<Self> {
        Self::new(
            points,
            self.labels.clone(),
            self.class_names.clone(),
            self.feature_names.clone(),
        )
    }
}

/// Which column holds the class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
    Last,
}

/// How to read a delimited text file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: LabelColumn,
    pub delimiter: u8,
    pub missing_token: String,
    pub has_header: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_column: LabelColumn::Last,
            delimiter: b',',
            missing_token: "?".into(),
            has_header: true,
        }
    }
}

/// Cleaning steps applied after loading.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PreprocessPolicy {
    pub drop_missing_rows: bool,
    pub drop_zero_variance_cols: bool,
    pub min_class_size: usize,
    pub drop_columns: Vec<String>,
}

/// Schema file contents: reading options, cleaning policy and a display name.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSchema {
    pub name: String,
    pub file: Option<String>,
    pub csv: CsvSchema,
    pub policy: PreprocessPolicy,
}

impl DatasetSchema {
    /// Reads a flat `key = value` schema file.
    ///
    /// Recognized keys: `name`, `file`, `label_column` (name, 0-based index, or `last`),
    /// `delimiter`, `missing_token`, `has_header`, `drop_columns` (comma list),
    /// `drop_missing_rows`, `drop_zero_variance_cols`, `min_class_size`.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&[
            "name",
            "file",
            "label_column",
            "delimiter",
            "missing_token",
            "has_header",
            "drop_columns",
            "drop_missing_rows",
            "drop_zero_variance_cols",
            "min_class_size",
        ])?;
        let label_column = match kv.get("label_column") {
            None | Some("last") => LabelColumn::Last,
            Some(s) => match s.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(s.to_string()),
            },
        };
        let delimiter = match kv.get("delimiter") {
            None => b',',
            Some("tab") | Some("\\t") => b'\t',
            Some("space") => b' ',
            Some(s) if s.len() == 1 => s.as_bytes()[0],
            Some(s) => {
                return Err(FemdaError::ConfigInvalid(format!("bad delimiter '{s}'")));
            }
        };
        Ok(Self {
            name: kv.get("name").unwrap_or("dataset").to_string(),
            file: kv.get("file").map(str::to_string),
            csv: CsvSchema {
                label_column,
                delimiter,
                missing_token: kv.get("missing_token").unwrap_or("?").to_string(),
                has_header: kv.parse_or("has_header", true)?,
            },
            policy: PreprocessPolicy {
                drop_missing_rows: kv.parse_or("drop_missing_rows", true)?,
                drop_zero_variance_cols: kv.parse_or("drop_zero_variance_cols", true)?,
                min_class_size: kv.parse_or("min_class_size", 0)?,
                drop_columns: kv.list("drop_columns"),
            },
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::from_file(path)?)
    }

    /// Data file path resolved relative to the schema file's directory.
    pub fn resolve_data_path(&self, schema_path: &Path) -> Option<std::path::PathBuf> {
        self.file.as_ref().map(|f| {
            let p = Path::new(f);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                schema_path.parent().unwrap_or(Path::new(".")).join(p)
            }
        })
    }
}

/// A loaded file before preprocessing. Missing cells are NaN.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub data: LabeledDataset,
    /// Rows that contained the missing token.
    pub missing_rows: Vec<bool>,
}

/// Parses a delimited file with a header row (or generated `c0, c1, …` names).
///
/// Labels are mapped to dense ids in order of first appearance.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<RawDataset> {
    let file = std::fs::File::open(path)?;
    load_csv_from_reader(file, schema)
}

pub fn load_csv_from_reader<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<RawDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let records = rdr.records();
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    let mut line = 0usize;
    for rec in records {
        line += 1;
        let rec = rec.map_err(|e| FemdaError::Parse {
            line,
            column: 0,
            message: e.to_string(),
        })?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if schema.has_header && header.is_none() {
            header = Some(rec.iter().map(str::to_string).collect());
            continue;
        }
        rows.push((line, rec));
    }
    let Some((_, first)) = rows.first() else {
        return Err(FemdaError::EmptyFile);
    };
    let width = first.len();
    let header = header.unwrap_or_else(|| (0..width).map(|j| format!("c{j}")).collect());
    if header.len() != width {
        return Err(FemdaError::Parse {
            line: rows[0].0,
            column: width,
            message: format!("expected {} fields, found {width}", header.len()),
        });
    }
    let label_idx = match &schema.label_column {
        LabelColumn::Last => width - 1,
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => {
            return Err(FemdaError::ConfigInvalid(format!(
                "label column {i} out of range ({width} columns)"
            )))
        }
        LabelColumn::Name(name) => header.iter().position(|h| h == name).ok_or_else(|| {
            FemdaError::ConfigInvalid(format!("label column '{name}' not in header"))
        })?,
    };
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let mut class_ids: HashMap<String, usize> = HashMap::new();
    let mut class_names = Vec::new();
    let mut points = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut missing_rows = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        if rec.len() != width {
            return Err(FemdaError::Parse {
                line: *line,
                column: rec.len().min(width) + 1,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let mut missing = false;
        let mut coords = Vec::with_capacity(width - 1);
        for (j, field) in rec.iter().enumerate() {
            if j == label_idx {
                continue;
            }
            if field == schema.missing_token || field.is_empty() {
                missing = true;
                coords.push(f64::NAN);
                continue;
            }
            let v: f64 = field.parse().map_err(|_| FemdaError::Parse {
                line: *line,
                column: j + 1,
                message: format!("'{field}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(FemdaError::Parse {
                    line: *line,
                    column: j + 1,
                    message: format!("'{field}' is not finite"),
                });
            }
            coords.push(v);
        }
        let label = &rec[label_idx];
        if label == schema.missing_token || label.is_empty() {
            return Err(FemdaError::Parse {
                line: *line,
                column: label_idx + 1,
                message: "missing class label".into(),
            });
        }
        let id = *class_ids.entry(label.to_string()).or_insert_with(|| {
            class_names.push(label.to_string());
            class_names.len() - 1
        });
        points.push(DVector::from_vec(coords));
        labels.push(id);
        missing_rows.push(missing);
    }
    Ok(RawDataset {
        data: LabeledDataset::new(points, labels, class_names, feature_names)?,
        missing_rows,
    })
}

/// Record of everything [`preprocess`] removed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub input_rows: usize,
    pub input_columns: usize,
    pub dropped_columns: Vec<DroppedColumn>,
    pub dropped_rows: Vec<DroppedRow>,
    pub dropped_classes: Vec<DroppedClass>,
    pub kept_rows: usize,
    pub kept_columns: usize,
    pub kept_classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRow {
    /// 0-based index into the loaded rows.
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedClass {
    pub name: String,
    pub count: usize,
}

impl PreprocessReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Applies, in order: column drops, missing-row drops, zero-variance column drops and
/// small-class drops. Surviving classes are renumbered densely in their original order.
pub fn preprocess(raw: &RawDataset, policy: &PreprocessPolicy) -> Result<(LabeledDataset, PreprocessReport)> {
    let data = &raw.data;
    let mut report = PreprocessReport {
        input_rows: data.len(),
        input_columns: data.dim(),
        ..Default::default()
    };
    let mut keep_cols: Vec<usize> = Vec::new();
    for (j, name) in data.feature_names().iter().enumerate() {
        if policy.drop_columns.iter().any(|d| d == name) {
            report.dropped_columns.push(DroppedColumn {
                name: name.clone(),
                reason: "requested".into(),
            });
        } else {
            keep_cols.push(j);
        }
    }
    for name in &policy.drop_columns {
        if !data.feature_names().contains(name) {
            return Err(FemdaError::ConfigInvalid(format!("cannot drop unknown column '{name}'")));
        }
    }

    let mut keep_rows: Vec<usize> = Vec::new();
    for i in 0..data.len() {
        let has_missing = keep_cols.iter().any(|&j| data.points()[i][j].is_nan());
        if has_missing && policy.drop_missing_rows {
            report.dropped_rows.push(DroppedRow {
                index: i,
                reason: "missing value".into(),
            });
        } else {
            keep_rows.push(i);
        }
    }
    if keep_rows.is_empty() {
        return Err(FemdaError::AllRowsDropped);
    }
    if !policy.drop_missing_rows {
        if let Some(&i) = keep_rows
            .iter()
            .find(|&&i| keep_cols.iter().any(|&j| data.points()[i][j].is_nan()))
        {
            return Err(FemdaError::ConfigInvalid(format!(
                "row {i} has missing values and drop_missing_rows is off"
            )));
        }
    }

    if policy.drop_zero_variance_cols {
        keep_cols.retain(|&j| {
            let first = data.points()[keep_rows[0]][j];
            let constant = keep_rows.iter().all(|&i| data.points()[i][j] == first);
            if constant {
                report.dropped_columns.push(DroppedColumn {
                    name: data.feature_names()[j].clone(),
                    reason: "zero variance".into(),
                });
            }
            !constant
        });
    }

    let mut counts = vec![0usize; data.num_classes()];
    for &i in &keep_rows {
        counts[data.labels()[i]] += 1;
    }
    let mut remap = vec![None; data.num_classes()];
    let mut class_names = Vec::new();
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        if count < policy.min_class_size {
            report.dropped_classes.push(DroppedClass {
                name: data.class_names()[c].clone(),
                count,
            });
        } else {
            remap[c] = Some(class_names.len());
            class_names.push(data.class_names()[c].clone());
        }
    }
    if class_names.is_empty() {
        return Err(FemdaError::AllClassesDropped);
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for &i in &keep_rows {
        match remap[data.labels()[i]] {
            Some(l) => {
                points.push(DVector::from_iterator(
                    keep_cols.len(),
                    keep_cols.iter().map(|&j| data.points()[i][j]),
                ));
                labels.push(l);
            }
            None => report.dropped_rows.push(DroppedRow {
                index: i,
                reason: format!("class '{}' too small", data.class_names()[data.labels()[i]]),
            }),
        }
    }
    report.dropped_rows.sort_by_key(|r| r.index);
    let feature_names: Vec<String> = keep_cols.iter().map(|&j| data.feature_names()[j].clone()).collect();
    report.kept_rows = points.len();
    report.kept_columns = feature_names.len();
    report.kept_classes = class_names.clone();
    Ok((
        LabeledDataset::new(points, labels, class_names, feature_names)?,
        report,
    ))
}

/// Loads and preprocesses a dataset described by a schema file.
pub fn load_with_schema(data_path: &Path, schema: &DatasetSchema) -> Result<(LabeledDataset, PreprocessReport)> {
    let raw = load_csv(data_path, &schema.csv)?;
    preprocess(&raw, &schema.policy)
}

/// Per-class split putting `round(train_fraction · n_k)` points of every class in train
/// (clamped so that both sides keep at least one point).
pub fn stratified_split<R: Rng + ?Sized>(
    data: &LabeledDataset,
    train_fraction: f64,
    rng: &mut R,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(FemdaError::ConfigInvalid(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (c, mut idx) in data.class_indices().into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(FemdaError::ClassTooSmall {
                label: data.class_names()[c].clone(),
                count: idx.len(),
                needed: 2,
            });
        }
        idx.shuffle(rng);
        let n_train = ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        test_idx.extend_from_slice(&idx[n_train..]);
        idx.truncate(n_train);
        train_idx.extend(idx);
    }
    Ok((data.subset(&train_idx), data.subset(&test_idx)))
}
