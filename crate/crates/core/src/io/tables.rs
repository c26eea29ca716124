//! CSV tables: clinical records, feature matrices, labels and predictions.
//!
//! Error rows count data rows from 1; row 0 is the header.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::clinical::{ClinicalRecord, HrHer2Status, TumorGrade};
use crate::evaluation::AblationRow;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::io::atomic_write;

pub const CLINICAL_COLUMNS: [&str; 7] = [
    "patient_id",
    "age",
    "race",
    "lesion_type",
    "hr_her2",
    "grade",
    "diameter_cm",
];
pub const ID_COLUMN: &str = "patient_id";
pub const LABEL_COLUMN: &str = "pcr";
pub const PROBABILITY_COLUMN: &str = "probability";

fn table_err(path: &Path, row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Table {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => table_err(path, 0, "", format!("{other:?}")),
        })?;
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| table_err(path, 0, "", e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        rows.push(rec.map_err(|e| table_err(path, i + 1, "", e.to_string()))?);
    }
    Ok(Table { header, rows })
}

impl Table {
    fn column(&self, path: &Path, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| table_err(path, 0, name, "missing required column"))
    }
}

fn parse_f64(path: &Path, row: usize, column: &str, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| table_err(path, row, column, format!("cannot parse {cell:?} as a number")))?;
    if !v.is_finite() {
        return Err(table_err(path, row, column, format!("non-finite value {cell:?}")));
    }
    Ok(v)
}

fn parse_label(path: &Path, row: usize, cell: &str) -> Result<bool> {
    match cell.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        _ => Err(table_err(path, row, LABEL_COLUMN, format!("label {cell:?} is not 0/1"))),
    }
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv buffer: {e}")))
}

fn check_unique_ids<'a>(path: &Path, ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = BTreeMap::new();
    for (i, id) in ids.enumerate() {
        if id.is_empty() {
            return Err(table_err(path, i + 1, ID_COLUMN, "empty patient id"));
        }
        if let Some(first) = seen.insert(id, i + 1) {
            return Err(table_err(path, i + 1, ID_COLUMN, format!("duplicate id {id:?} (first at row {first})")));
        }
    }
    Ok(())
}

pub fn read_clinical_csv(path: impl AsRef<Path>) -> Result<Vec<ClinicalRecord>> {
    let path = path.as_ref();
    let t = read_table(path)?;
    let cols: Vec<usize> = CLINICAL_COLUMNS
        .iter()
        .map(|c| t.column(path, c))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (i, rec) in t.rows.iter().enumerate() {
        let row = i + 1;
        let cell = |k: usize| rec.get(cols[k]).unwrap_or("");
        let age = parse_f64(path, row, "age", cell(1))?;
        let hr_her2: HrHer2Status = cell(4)
            .parse()
            .map_err(|e: Error| table_err(path, row, "hr_her2", e.to_string()))?;
        let grade = match cell(5) {
            "" => None,
            g => Some(
                g.parse::<TumorGrade>()
                    .map_err(|e| table_err(path, row, "grade", e.to_string()))?,
            ),
        };
        let diameter_cm = match cell(6) {
            "" => None,
            d => {
                let v = parse_f64(path, row, "diameter_cm", d)?;
                if v <= 0.0 {
                    return Err(table_err(path, row, "diameter_cm", format!("diameter {v} must be > 0")));
                }
                Some(v)
            }
        };
        for (k, name) in [(2, "race"), (3, "lesion_type")] {
            if cell(k).is_empty() {
                return Err(table_err(path, row, name, "empty category"));
            }
        }
        out.push(ClinicalRecord {
            patient_id: cell(0).to_string(),
            age,
            race: cell(2).to_string(),
            lesion_type: cell(3).to_string(),
            hr_her2,
            grade,
            diameter_cm,
        });
    }
    check_unique_ids(path, out.iter().map(|r| r.patient_id.as_str()))?;
    Ok(out)
}

pub fn write_clinical_csv(path: impl AsRef<Path>, records: &[ClinicalRecord]) -> Result<()> {
    let header: Vec<String> = CLINICAL_COLUMNS.iter().map(|s| s.to_string()).collect();
    let bytes = csv_bytes(
        &header,
        records.iter().map(|r| {
            vec![
                r.patient_id.clone(),
                r.age.to_string(),
                r.race.clone(),
                r.lesion_type.clone(),
                r.hr_her2.to_string(),
                r.grade.map(|g| g.to_string()).unwrap_or_default(),
                r.diameter_cm.map(|d| d.to_string()).unwrap_or_default(),
            ]
        }),
    )?;
    atomic_write(path.as_ref(), &bytes)
}

/// Header `patient_id, <columns...>[, pcr]`. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_features_csv(path: impl AsRef<Path>, x: &FeatureMatrix) -> Result<()> {
    let mut header = vec![ID_COLUMN.to_string()];
    header.extend(x.columns.iter().cloned());
    if x.labels.is_some() {
        header.push(LABEL_COLUMN.to_string());
    }
    let bytes = csv_bytes(
        &header,
        x.values.outer_iter().enumerate().map(|(r, row)| {
            let mut v = vec![x.ids[r].clone()];
            v.extend(row.iter().map(|f| f.to_string()));
            if let Some(l) = &x.labels {
                v.push((l[r] as u8).to_string());
            }
            v
        }),
    )?;
    atomic_write(path.as_ref(), &bytes)
}

pub fn read_features_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let t = read_table(path)?;
    if t.header.first().map(String::as_str) != Some(ID_COLUMN) {
        return Err(table_err(path, 0, ID_COLUMN, "first column must be patient_id"));
    }
    let has_label = t.header.last().map(String::as_str) == Some(LABEL_COLUMN);
    let end = if has_label { t.header.len() - 1 } else { t.header.len() };
    let columns: Vec<String> = t.header[1..end].to_vec();
    let mut values = Array2::zeros((t.rows.len(), columns.len()));
    let mut ids = Vec::with_capacity(t.rows.len());
    let mut labels = Vec::new();
    for (i, rec) in t.rows.iter().enumerate() {
        let row = i + 1;
        if rec.len() != t.header.len() {
            return Err(table_err(
                path,
                row,
                "",
                format!("{} cells, header has {}", rec.len(), t.header.len()),
            ));
        }
        ids.push(rec[0].to_string());
        for (c, name) in columns.iter().enumerate() {
            values[[i, c]] = parse_f64(path, row, name, &rec[c + 1])?;
        }
        if has_label {
            labels.push(parse_label(path, row, &rec[end])?);
        }
    }
    check_unique_ids(path, ids.iter().map(String::as_str))?;
    FeatureMatrix::new(columns, ids, values, has_label.then_some(labels))
}

pub fn write_labels_csv(path: impl AsRef<Path>, ids: &[String], labels: &[bool]) -> Result<()> {
    let header = vec![ID_COLUMN.to_string(), LABEL_COLUMN.to_string()];
    let bytes = csv_bytes(
        &header,
        ids.iter()
            .zip(labels)
            .map(|(id, &l)| vec![id.clone(), (l as u8).to_string()]),
    )?;
    atomic_write(path.as_ref(), &bytes)
}

/// `(patient_id, pcr)` pairs in file order.
pub fn read_labels_csv(path: impl AsRef<Path>) -> Result<Vec<(String, bool)>> {
    let path = path.as_ref();
    let t = read_table(path)?;
    let id = t.column(path, ID_COLUMN)?;
    let lab = t.column(path, LABEL_COLUMN)?;
    let out = t
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| Ok((r.get(id).unwrap_or("").to_string(), parse_label(path, i + 1, r.get(lab).unwrap_or(""))?)))
        .collect::<Result<Vec<_>>>()?;
    check_unique_ids(path, out.iter().map(|r| r.0.as_str()))?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub patient_id: String,
    pub probability: f64,
}

pub fn write_predictions_csv(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<()> {
    let header = vec![ID_COLUMN.to_string(), PROBABILITY_COLUMN.to_string()];
    let bytes = csv_bytes(
        &header,
        preds
            .iter()
            .map(|p| vec![p.patient_id.clone(), p.probability.to_string()]),
    )?;
    atomic_write(path.as_ref(), &bytes)
}

pub fn read_predictions_csv(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let t = read_table(path)?;
    let id = t.column(path, ID_COLUMN)?;
    let p = t.column(path, PROBABILITY_COLUMN)?;
    let out = t
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let probability = parse_f64(path, i + 1, PROBABILITY_COLUMN, r.get(p).unwrap_or(""))?;
            if !(0.0..=1.0).contains(&probability) {
                return Err(table_err(path, i + 1, PROBABILITY_COLUMN, format!("{probability} outside [0, 1]")));
            }
            Ok(Prediction {
                patient_id: r.get(id).unwrap_or("").to_string(),
                probability,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    check_unique_ids(path, out.iter().map(|r| r.patient_id.as_str()))?;
    Ok(out)
}

pub const ABLATION_COLUMNS: [&str; 6] = ["config", "timepoints", "auc", "f1", "kappa", "n"];

pub fn write_ablation_csv(path: impl AsRef<Path>, rows: &[AblationRow]) -> Result<()> {
    let header: Vec<String> = ABLATION_COLUMNS.iter().map(|s| s.to_string()).collect();
    let bytes = csv_bytes(
        &header,
        rows.iter().map(|r| {
            vec![
                r.config.clone(),
                r.timepoints.clone(),
                r.auc.to_string(),
                r.f1.to_string(),
                r.kappa.to_string(),
                r.n.to_string(),
            ]
        }),
    )?;
    atomic_write(path.as_ref(), &bytes)
}

pub fn read_ablation_csv(path: impl AsRef<Path>) -> Result<Vec<AblationRow>> {
    let path = path.as_ref();
    let t = read_table(path)?;
    let cols: Vec<usize> = ABLATION_COLUMNS
        .iter()
        .map(|c| t.column(path, c))
        .collect::<Result<_>>()?;
    t.rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let row = i + 1;
            let cell = |k: usize| r.get(cols[k]).unwrap_or("");
            Ok(AblationRow {
                config: cell(0).to_string(),
                timepoints: cell(1).to_string(),
                auc: parse_f64(path, row, "auc", cell(2))?,
                f1: parse_f64(path, row, "f1", cell(3))?,
                kappa: parse_f64(path, row, "kappa", cell(4))?,
                n: cell(5)
                    .parse()
                    .map_err(|_| table_err(path, row, "n", format!("cannot parse {:?} as a count", cell(5))))?,
            })
        })
        .collect()
}
