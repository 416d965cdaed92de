//! CSV ingestion, survey-index construction and interaction expansion.

mod expand;
mod indices;

pub use expand::{expand_interactions, ExpansionMap, ProductTerm};
pub use indices::{build_bdus, build_incidence, BDUS_QUESTIONS};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::Dataset;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    /// Any missing cell in a used column is an error.
    #[default]
    Reject,
    /// Drop rows with missing cells and report the count.
    Listwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivedKind {
    /// Count of "yes" answers over exactly ten questions.
    Bdus,
    /// 1 if any listed question is "yes".
    Incidence,
}

/// A regressor built from several binary question columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedColumn {
    pub name: String,
    pub kind: DerivedKind,
    pub columns: Vec<String>,
}

/// Column mapping, usually read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub outcome_column: String,
    /// Absent: every weight is 1.
    #[serde(default)]
    pub weight_column: Option<String>,
    /// Regressor names in design order. Each is a CSV column, a categorical
    /// column (see `reference_levels`) or the name of a derived column.
    pub regressor_columns: Vec<String>,
    /// Categorical column -> reference level; other levels become dummies.
    #[serde(default)]
    pub reference_levels: BTreeMap<String, String>,
    #[serde(default)]
    pub derived: Vec<DerivedColumn>,
    /// Dummy regressors to report marginal effects for.
    #[serde(default)]
    pub ame_columns: Vec<String>,
    #[serde(default)]
    pub missing: MissingPolicy,
    /// Parentage of product columns when the file is an expanded design.
    #[serde(default)]
    pub expansion: Option<ExpansionMap>,
}

impl ColumnSpec {
    pub fn new(outcome: impl Into<String>, weight: Option<String>, regressors: Vec<String>) -> Self {
        Self {
            outcome_column: outcome.into(),
            weight_column: weight,
            regressor_columns: regressors,
            reference_levels: BTreeMap::new(),
            derived: Vec::new(),
            ame_columns: Vec::new(),
            missing: MissingPolicy::Reject,
            expansion: None,
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.regressor_columns {
            if !seen.insert(r.as_str()) {
                return Err(Error::InvalidInput(format!("regressor '{r}' listed twice")));
            }
        }
        if seen.contains(self.outcome_column.as_str()) {
            return Err(Error::InvalidInput("outcome column is also a regressor".into()));
        }
        if let Some(w) = &self.weight_column {
            if seen.contains(w.as_str()) || *w == self.outcome_column {
                return Err(Error::InvalidInput("weight column is also a regressor or the outcome".into()));
            }
        }
        for d in &self.derived {
            if d.kind == DerivedKind::Bdus && d.columns.len() != BDUS_QUESTIONS {
                return Err(Error::InvalidInput(format!(
                    "derived column '{}' needs exactly {BDUS_QUESTIONS} questions, got {}",
                    d.name,
                    d.columns.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadSummary {
    pub rows_read: usize,
    pub rows_dropped: usize,
}

/// Maps a cell to a number: case-insensitive yes/no and true/false, else a
/// decimal literal. `Ok(None)` means the cell is missing.
fn parse_cell(raw: &str) -> std::result::Result<Option<f64>, ()> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    match s.to_ascii_lowercase().as_str() {
        "yes" | "y" | "true" => return Ok(Some(1.0)),
        "no" | "n" | "false" => return Ok(Some(0.0)),
        _ => {}
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some).ok_or(())
}

fn is_missing(raw: &str) -> bool {
    let s = raw.trim();
    s.is_empty() || s.eq_ignore_ascii_case("na")
}

pub fn load_csv(path: impl AsRef<Path>, spec: &ColumnSpec) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    load_csv_reader(file, spec).map(|(d, _)| d)
}

/// Reads a header-first RFC 4180 CSV. Lines starting with `#` are skipped.
pub fn load_csv_reader<R: Read>(reader: R, spec: &ColumnSpec) -> Result<(Dataset, LoadSummary)> {
    spec.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| index.get(name).copied().ok_or_else(|| Error::MissingColumn(name.to_string()));

    let derived: HashMap<&str, &DerivedColumn> = spec.derived.iter().map(|d| (d.name.as_str(), d)).collect();

    // every raw column this spec reads
    let mut used: Vec<(String, usize)> = vec![(spec.outcome_column.clone(), col(&spec.outcome_column)?)];
    if let Some(w) = &spec.weight_column {
        used.push((w.clone(), col(w)?));
    }
    for r in &spec.regressor_columns {
        if let Some(d) = derived.get(r.as_str()) {
            for q in &d.columns {
                used.push((q.clone(), col(q)?));
            }
        } else {
            used.push((r.clone(), col(r)?));
        }
    }

    let mut records = Vec::new();
    let mut summary = LoadSummary::default();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        summary.rows_read += 1;
        if let Some((name, _)) = used.iter().find(|(_, c)| rec.get(*c).is_none_or(is_missing)) {
            match spec.missing {
                MissingPolicy::Reject => {
                    return Err(Error::Csv {
                        row,
                        column: name.clone(),
                        message: "missing value".into(),
                    })
                }
                MissingPolicy::Listwise => {
                    summary.rows_dropped += 1;
                    continue;
                }
            }
        }
        records.push((row, rec));
    }
    if records.is_empty() {
        return Err(Error::InvalidInput("no usable rows in csv".into()));
    }

    let numeric = |row: usize, name: &str, raw: &str| -> Result<f64> {
        parse_cell(raw).ok().flatten().ok_or_else(|| Error::Csv {
            row,
            column: name.to_string(),
            message: format!("unparseable numeric cell '{raw}'"),
        })
    };

    let oc = col(&spec.outcome_column)?;
    let mut y = Vec::with_capacity(records.len());
    for (row, rec) in &records {
        let v = numeric(*row, &spec.outcome_column, &rec[oc])?;
        if v != 0.0 && v != 1.0 {
            return Err(Error::Csv {
                row: *row,
                column: spec.outcome_column.clone(),
                message: format!("non-binary outcome {v}"),
            });
        }
        y.push(v);
    }

    let mut w = vec![1.0; records.len()];
    if let Some(wname) = &spec.weight_column {
        let wc = col(wname)?;
        for (k, (row, rec)) in records.iter().enumerate() {
            let v = numeric(*row, wname, &rec[wc])?;
            if !(v > 0.0) {
                return Err(Error::Csv {
                    row: *row,
                    column: wname.clone(),
                    message: format!("nonpositive weight {v}"),
                });
            }
            w[k] = v;
        }
    }

    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for r in &spec.regressor_columns {
        if let Some(d) = derived.get(r.as_str()) {
            let mut m = DMatrix::zeros(records.len(), d.columns.len());
            for (qj, q) in d.columns.iter().enumerate() {
                let c = col(q)?;
                for (k, (row, rec)) in records.iter().enumerate() {
                    let v = numeric(*row, q, &rec[c])?;
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::Csv {
                            row: *row,
                            column: q.clone(),
                            message: format!("question answer must be yes/no or 0/1, got '{}'", &rec[c]),
                        });
                    }
                    m[(k, qj)] = v;
                }
            }
            let values: Vec<f64> = match d.kind {
                DerivedKind::Bdus => build_bdus(&m)?.into_iter().map(f64::from).collect(),
                DerivedKind::Incidence => build_incidence(&m)?.into_iter().map(f64::from).collect(),
            };
            names.push(r.clone());
            columns.push(values);
        } else if let Some(reference) = spec.reference_levels.get(r) {
            let c = col(r)?;
            let levels: BTreeSet<&str> = records.iter().map(|(_, rec)| rec[c].trim()).collect();
            if !levels.contains(reference.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "reference level '{reference}' not observed in column '{r}'"
                )));
            }
            for level in levels.iter().filter(|l| **l != reference) {
                names.push(format!("{r}:{level}"));
                columns.push(
                    records
                        .iter()
                        .map(|(_, rec)| (rec[c].trim() == *level) as u8 as f64)
                        .collect(),
                );
            }
        } else {
            let c = col(r)?;
            let mut values = Vec::with_capacity(records.len());
            for (row, rec) in &records {
                values.push(numeric(*row, r, &rec[c])?);
            }
            names.push(r.clone());
            columns.push(values);
        }
    }

    let mut data = Dataset::from_regressors(y, &columns, w, names)?
        .with_names(spec.outcome_column.clone(), spec.weight_column.clone());
    if let Some(map) = &spec.expansion {
        if map.output_columns != data.column_names() {
            return Err(Error::InvalidInput(
                "expansion map columns do not match the loaded regressors".into(),
            ));
        }
        data = data.with_expansion(map.clone());
    }
    Ok((data, summary))
}

/// Writes the dataset as CSV: outcome, weight (when named), then regressors.
/// Numbers use Rust's shortest round-trip formatting.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![data.outcome_name().to_string()];
    if let Some(w) = data.weight_name() {
        header.push(w.to_string());
    }
    header.extend(data.column_names().iter().cloned());
    wtr.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..data.n() {
        rec.clear();
        rec.push(data.y()[i].to_string());
        if data.weight_name().is_some() {
            rec.push(data.w()[i].to_string());
        }
        for j in 1..=data.p() {
            rec.push(data.x()[(i, j)].to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Mapping that reads back a file produced by [`write_csv`].
pub fn spec_for(data: &Dataset) -> ColumnSpec {
    let mut spec = ColumnSpec::new(
        data.outcome_name(),
        data.weight_name().map(String::from),
        data.column_names().to_vec(),
    );
    spec.expansion = data.expansion().cloned();
    spec
}
