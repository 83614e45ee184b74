//! CSV ingestion, schema typing, train/test splitting, and feature binding.
//!
//! A [`Schema`] declares, for every CSV column, its kind (numeric or
//! categorical) and role (feature, target, group-only, ignore). Group-only
//! columns can define subpopulations without ever being visible to a model,
//! so protected attributes need not be predictive features.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnKind::Numeric => write!(f, "numeric"),
            ColumnKind::Categorical => write!(f, "categorical"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "feature")]
    Feature,
    #[serde(rename = "target")]
    Target,
    #[serde(rename = "group-only")]
    GroupOnly,
    #[serde(rename = "ignore")]
    Ignore,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: Role,
}

/// Ordered column declarations for a CSV file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn from_json_str(json: &str) -> Result<Schema> {
        let schema: Schema = serde_json::from_str(json)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Schema> {
        let text = std::fs::read_to_string(path)?;
        Schema::from_json_str(&text)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for (idx, col) in self.columns.iter().enumerate() {
            if let Some(prev) = seen.insert(col.name.clone(), idx) {
                return Err(Error::Schema(format!(
                    "column '{}' declared twice (positions {} and {})",
                    col.name, prev, idx
                )));
            }
            if col.role == Role::Target && col.kind != ColumnKind::Numeric {
                return Err(Error::Schema(format!(
                    "target column '{}' must be numeric",
                    col.name
                )));
            }
        }
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Index of the single target column; supervised runs require exactly one.
    pub fn target_index(&self) -> Result<usize> {
        let targets: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == Role::Target)
            .map(|(i, _)| i)
            .collect();
        match targets.as_slice() {
            [single] => Ok(*single),
            [] => Err(Error::Schema("schema declares no target column".into())),
            _ => Err(Error::Schema(format!(
                "schema declares {} target columns, expected exactly one",
                targets.len()
            ))),
        }
    }

    pub fn feature_indices(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == Role::Feature)
            .map(|(i, _)| i)
            .collect()
    }
}

/// An immutable, fully decoded table. Numeric cells hold their parsed value;
/// categorical cells hold a dense integer code whose string is recoverable
/// through the per-column dictionary. `None` marks a missing cell.
#[derive(Clone, Debug)]
pub struct Dataset {
    schema: Schema,
    n_rows: usize,
    /// Row-major cells, `n_rows * schema.columns.len()` long.
    cells: Vec<Option<f64>>,
    /// Per-column dictionaries; empty for numeric columns. Code = index.
    dicts: Vec<Vec<String>>,
}

impl Dataset {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.schema.columns.len()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row * self.n_cols() + col]
    }

    /// Dictionary string for a categorical code.
    pub fn decode(&self, col: usize, code: usize) -> Option<&str> {
        self.dicts[col].get(code).map(|s| s.as_str())
    }

    /// Code for a categorical string, if it occurred in this dataset.
    pub fn code_for(&self, col: usize, value: &str) -> Option<usize> {
        self.dicts[col].iter().position(|s| s == value)
    }

    pub fn dictionary(&self, col: usize) -> &[String] {
        &self.dicts[col]
    }

    /// Target column values. Missing or non-finite targets are an error.
    pub fn targets(&self) -> Result<Vec<f64>> {
        let target = self.schema.target_index()?;
        let name = &self.schema.columns[target].name;
        (0..self.n_rows)
            .map(|row| {
                self.get(row, target).ok_or_else(|| {
                    Error::Data(format!("missing target '{}' in row {}", name, row))
                })
            })
            .collect()
    }

    /// Deterministic shuffled partition into (train, test). The test side
    /// receives `round(n * test_fraction)` rows; both sides keep the original
    /// row order internally.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::InvalidArgument(format!(
                "test_fraction must lie in [0, 1], got {test_fraction}"
            )));
        }
        let mut order: Vec<usize> = (0..self.n_rows).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);

        let n_test = ((self.n_rows as f64) * test_fraction).round() as usize;
        let mut test_rows = order[..n_test].to_vec();
        let mut train_rows = order[n_test..].to_vec();
        test_rows.sort_unstable();
        train_rows.sort_unstable();

        Ok((self.subset(&train_rows), self.subset(&test_rows)))
    }

    /// New dataset containing the given rows (sharing schema and dictionaries).
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let n_cols = self.n_cols();
        let mut cells = Vec::with_capacity(rows.len() * n_cols);
        for &row in rows {
            cells.extend_from_slice(&self.cells[row * n_cols..(row + 1) * n_cols]);
        }
        Dataset {
            schema: self.schema.clone(),
            n_rows: rows.len(),
            cells,
            dicts: self.dicts.clone(),
        }
    }

    /// Construction hook for in-memory datasets (synthetic generators, tests).
    pub fn from_parts(
        schema: Schema,
        cells: Vec<Option<f64>>,
        dicts: Vec<Vec<String>>,
    ) -> Result<Dataset> {
        schema.validate()?;
        let n_cols = schema.columns.len();
        if n_cols == 0 || cells.len() % n_cols != 0 {
            return Err(Error::DimensionMismatch(format!(
                "cell count {} is not a multiple of column count {}",
                cells.len(),
                n_cols
            )));
        }
        if dicts.len() != n_cols {
            return Err(Error::DimensionMismatch(
                "one dictionary per column is required".into(),
            ));
        }
        Ok(Dataset {
            n_rows: cells.len() / n_cols,
            schema,
            cells,
            dicts,
        })
    }
}

/// Loads an RFC-4180 CSV with a header row. Every header must be declared in
/// the schema and vice versa; empty cells are recorded as missing. Categorical
/// codes are assigned in first-appearance order, so loading is deterministic.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path.as_ref())?;

    let headers = reader
        .headers()?
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();

    for header in &headers {
        if schema.column_index(header).is_none() {
            return Err(Error::UnknownColumn(header.clone()));
        }
    }
    // header position per schema column
    let mut positions = Vec::with_capacity(schema.columns.len());
    for col in &schema.columns {
        match headers.iter().position(|h| h == &col.name) {
            Some(p) => positions.push(p),
            None => {
                return Err(Error::Schema(format!(
                    "schema column '{}' not present in csv header",
                    col.name
                )))
            }
        }
    }

    let n_cols = schema.columns.len();
    let mut cells: Vec<Option<f64>> = Vec::new();
    let mut dicts: Vec<Vec<String>> = vec![Vec::new(); n_cols];
    let mut encoders: Vec<HashMap<String, usize>> = vec![HashMap::new(); n_cols];

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        for (col_idx, col) in schema.columns.iter().enumerate() {
            let raw = record.get(positions[col_idx]).unwrap_or("");
            if raw.is_empty() {
                cells.push(None);
                continue;
            }
            match col.kind {
                ColumnKind::Numeric => {
                    let value: f64 = raw.trim().parse().map_err(|_| Error::Csv {
                        line,
                        message: format!("cannot parse '{}' as numeric for column '{}'", raw, col.name),
                    })?;
                    if !value.is_finite() {
                        return Err(Error::Csv {
                            line,
                            message: format!("non-finite value '{}' in column '{}'", raw, col.name),
                        });
                    }
                    cells.push(Some(value));
                }
                ColumnKind::Categorical => {
                    let next = dicts[col_idx].len();
                    let code = *encoders[col_idx].entry(raw.to_string()).or_insert_with(|| {
                        dicts[col_idx].push(raw.to_string());
                        next
                    });
                    cells.push(Some(code as f64));
                }
            }
        }
    }

    Dataset::from_parts(schema.clone(), cells, dicts)
}

/// Root mean squared error between predictions and targets.
pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("rmse of empty input".into()));
    }
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / predictions.len() as f64;
    Ok(mse.sqrt())
}

/// One model input column: name, kind, and (for categoricals) the code book.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

/// Dense row-major feature matrix bound to a concrete dataset. Missing values
/// are carried as NaN and surface as routing errors downstream.
#[derive(Clone, Debug)]
pub struct FeatureFrame {
    specs: Vec<FeatureSpec>,
    n_rows: usize,
    values: Vec<f64>,
}

impl FeatureFrame {
    /// Extracts the `role = feature` columns of a dataset, in schema order.
    pub fn from_dataset(dataset: &Dataset) -> Result<FeatureFrame> {
        let indices = dataset.schema().feature_indices();
        if indices.is_empty() {
            return Err(Error::Schema("schema declares no feature columns".into()));
        }
        let specs = indices
            .iter()
            .map(|&idx| {
                let col = &dataset.schema().columns[idx];
                FeatureSpec {
                    name: col.name.clone(),
                    kind: col.kind,
                    categories: match col.kind {
                        ColumnKind::Numeric => None,
                        ColumnKind::Categorical => Some(dataset.dictionary(idx).to_vec()),
                    },
                }
            })
            .collect::<Vec<_>>();

        let mut values = Vec::with_capacity(dataset.n_rows() * indices.len());
        for row in 0..dataset.n_rows() {
            for &idx in &indices {
                values.push(dataset.get(row, idx).unwrap_or(f64::NAN));
            }
        }
        Ok(FeatureFrame {
            specs,
            n_rows: dataset.n_rows(),
            values,
        })
    }

    /// Binds a model's feature schema to a dataset, translating categorical
    /// codes through the model's own code book. Categories the model never
    /// saw are a data error rather than a silent mismatch.
    pub fn bind(specs: &[FeatureSpec], dataset: &Dataset) -> Result<FeatureFrame> {
        let mut columns = Vec::with_capacity(specs.len());
        for spec in specs {
            let idx = dataset
                .schema()
                .column_index(&spec.name)
                .ok_or_else(|| Error::UnknownColumn(spec.name.clone()))?;
            let col = &dataset.schema().columns[idx];
            if col.kind != spec.kind {
                return Err(Error::Schema(format!(
                    "column '{}' is {} in the dataset but {} in the model",
                    spec.name, col.kind, spec.kind
                )));
            }
            columns.push(idx);
        }

        let mut values = Vec::with_capacity(dataset.n_rows() * specs.len());
        for row in 0..dataset.n_rows() {
            for (spec, &idx) in specs.iter().zip(&columns) {
                let cell = dataset.get(row, idx);
                let value = match (cell, &spec.categories) {
                    (None, _) => f64::NAN,
                    (Some(v), None) => v,
                    (Some(code), Some(categories)) => {
                        let label = dataset.decode(idx, code as usize).ok_or_else(|| {
                            Error::Data(format!(
                                "row {}: categorical code {} out of range for column '{}'",
                                row, code, spec.name
                            ))
                        })?;
                        match categories.iter().position(|c| c == label) {
                            Some(model_code) => model_code as f64,
                            None => {
                                return Err(Error::Data(format!(
                                    "row {}: category '{}' in column '{}' was not seen by the model",
                                    row, label, spec.name
                                )))
                            }
                        }
                    }
                };
                values.push(value);
            }
        }
        Ok(FeatureFrame {
            specs: specs.to_vec(),
            n_rows: dataset.n_rows(),
            values,
        })
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.specs.len()
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let w = self.specs.len();
        &self.values[row * w..(row + 1) * w]
    }

    /// Errors if any cell is missing; trainers require complete features.
    pub fn ensure_complete(&self) -> Result<()> {
        for row in 0..self.n_rows {
            for (j, v) in self.row(row).iter().enumerate() {
                if v.is_nan() {
                    return Err(Error::Data(format!(
                        "missing value in feature '{}' at row {}",
                        self.specs[j].name, row
                    )));
                }
            }
        }
        Ok(())
    }
}
