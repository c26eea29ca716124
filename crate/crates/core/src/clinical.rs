//! Numeric encoding of clinical variables.
//!
//! Receptor status becomes two binary columns, tumour grade an ordinal
//! 1/2/3 with most-frequent imputation, and race and lesion type are
//! one-hot encoded over the vocabularies seen at fit time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radiomics::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HrHer2Status {
    #[serde(rename = "HR+/HER2+")]
    HrPosHer2Pos,
    #[serde(rename = "HR+/HER2-")]
    HrPosHer2Neg,
    #[serde(rename = "HR-/HER2+")]
    HrNegHer2Pos,
    #[serde(rename = "HR-/HER2-")]
    HrNegHer2Neg,
}

impl HrHer2Status {
    pub const ALL: [HrHer2Status; 4] = [
        HrHer2Status::HrPosHer2Pos,
        HrHer2Status::HrPosHer2Neg,
        HrHer2Status::HrNegHer2Pos,
        HrHer2Status::HrNegHer2Neg,
    ];

    /// `(hr, her2)` as binary flags.
    pub fn flags(self) -> (bool, bool) {
        match self {
            HrHer2Status::HrPosHer2Pos => (true, true),
            HrHer2Status::HrPosHer2Neg => (true, false),
            HrHer2Status::HrNegHer2Pos => (false, true),
            HrHer2Status::HrNegHer2Neg => (false, false),
        }
    }
}

impl fmt::Display for HrHer2Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (hr, her2) = self.flags();
        let sign = |b: bool| if b { '+' } else { '-' };
        write!(f, "HR{}/HER2{}", sign(hr), sign(her2))
    }
}

impl FromStr for HrHer2Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .to_ascii_uppercase()
            .replace('\u{2212}', "-")
            .replace("POS", "+")
            .replace("NEG", "-")
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        let parts: Vec<&str> = norm.split('/').collect();
        let parse = |p: &str, prefix: &str| -> Option<bool> {
            match p.strip_prefix(prefix)? {
                "+" => Some(true),
                "-" => Some(false),
                _ => None,
            }
        };
        let flags = match parts.as_slice() {
            [hr, her2] => parse(hr, "HR").zip(parse(her2, "HER2")),
            _ => None,
        };
        match flags {
            Some((true, true)) => Ok(HrHer2Status::HrPosHer2Pos),
            Some((true, false)) => Ok(HrHer2Status::HrPosHer2Neg),
            Some((false, true)) => Ok(HrHer2Status::HrNegHer2Pos),
            Some((false, false)) => Ok(HrHer2Status::HrNegHer2Neg),
            None => Err(Error::InvalidArgument(format!("unknown HR/HER2 status {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TumorGrade {
    Low = 1,
    Intermediate = 2,
    High = 3,
}

impl TumorGrade {
    pub fn ordinal(self) -> f64 {
        self as u8 as f64
    }
}

impl fmt::Display for TumorGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TumorGrade::Low => "Low",
            TumorGrade::Intermediate => "Intermediate",
            TumorGrade::High => "High",
        })
    }
}

impl FromStr for TumorGrade {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" | "1" => Ok(TumorGrade::Low),
            "intermediate" | "2" => Ok(TumorGrade::Intermediate),
            "high" | "3" => Ok(TumorGrade::High),
            other => Err(Error::InvalidArgument(format!("unknown tumor grade {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub patient_id: String,
    pub age: f64,
    pub race: String,
    pub lesion_type: String,
    pub hr_her2: HrHer2Status,
    pub grade: Option<TumorGrade>,
    /// Longest MRI diameter at T0, cm.
    pub diameter_cm: Option<f64>,
}

/// Vocabularies and imputation values learned from a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalEncoder {
    pub races: Vec<String>,
    pub lesion_types: Vec<String>,
    pub modal_grade: TumorGrade,
    pub median_diameter_cm: f64,
}

fn category_key(s: &str) -> String {
    s.trim()
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

impl ClinicalEncoder {
    /// Fit vocabularies and imputation values. Grade ties are broken
    /// towards the more severe grade.
    pub fn fit(records: &[ClinicalRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidArgument(
                "clinical encoder needs at least one training record".into(),
            ));
        }
        let races: BTreeSet<String> = records.iter().map(|r| category_key(&r.race)).collect();
        let lesions: BTreeSet<String> =
            records.iter().map(|r| category_key(&r.lesion_type)).collect();

        let mut counts: BTreeMap<TumorGrade, usize> = BTreeMap::new();
        for g in records.iter().filter_map(|r| r.grade) {
            *counts.entry(g).or_default() += 1;
        }
        // BTreeMap iterates Low..High; max_by_key keeps the last maximum,
        // which is the highest grade among ties.
        let modal_grade = counts
            .iter()
            .max_by_key(|(_, &c)| c)
            .map(|(&g, _)| g)
            .unwrap_or(TumorGrade::High);

        let mut diam: Vec<f64> = records.iter().filter_map(|r| r.diameter_cm).collect();
        diam.sort_by(f64::total_cmp);
        let median_diameter_cm = match diam.len() {
            0 => 0.0,
            n if n % 2 == 1 => diam[n / 2],
            n => 0.5 * (diam[n / 2 - 1] + diam[n / 2]),
        };

        Ok(ClinicalEncoder {
            races: races.into_iter().collect(),
            lesion_types: lesions.into_iter().collect(),
            modal_grade,
            median_diameter_cm,
        })
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["age", "diameter_cm", "grade", "her2", "hr"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend(self.lesion_types.iter().map(|v| format!("lesion_{v}")));
        names.extend(self.races.iter().map(|v| format!("race_{v}")));
        names
    }

    /// Encode one record. Categories outside the fitted vocabulary produce
    /// an all-zero one-hot block and a logged warning.
    pub fn transform(&self, record: &ClinicalRecord) -> FeatureVector {
        let (hr, her2) = record.hr_her2.flags();
        let grade = record.grade.unwrap_or(self.modal_grade);
        let diameter = record.diameter_cm.unwrap_or(self.median_diameter_cm);
        let mut fv = FeatureVector::default();
        fv.push("age", record.age);
        fv.push("diameter_cm", diameter);
        fv.push("grade", grade.ordinal());
        fv.push("her2", her2 as u8 as f64);
        fv.push("hr", hr as u8 as f64);
        self.one_hot(&mut fv, "lesion", &self.lesion_types, &record.lesion_type, &record.patient_id);
        self.one_hot(&mut fv, "race", &self.races, &record.race, &record.patient_id);
        fv
    }

    fn one_hot(&self, fv: &mut FeatureVector, prefix: &str, vocab: &[String], value: &str, patient: &str) {
        let key = category_key(value);
        if !vocab.contains(&key) {
            log::warn!("patient {patient}: unseen {prefix} category {value:?}, encoding as all zeros");
        }
        for v in vocab {
            fv.push(format!("{prefix}_{v}"), (*v == key) as u8 as f64);
        }
    }
}
