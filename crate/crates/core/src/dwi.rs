//! Volumetric data types shared across the pipeline.
//!
//! Arrays are indexed `(z, y, x)` for 3D volumes and `(b, z, y, x)` for DWI
//! signal, so that C-order flattening matches the NIfTI on-disk order with
//! `x` fastest.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// b-value threshold separating the pseudo-diffusion regime from the
/// diffusion regime, s/mm².
pub const LOW_HIGH_SPLIT: f64 = 100.0;

pub const ADC_0_100: &str = "ADC_0_100";
pub const ADC_100_800: &str = "ADC_100_800";
pub const ADC_0_800: &str = "ADC_0_800";
pub const F_MAP: &str = "F";

/// Names of the maps produced by decomposition, in canonical order.
pub const DECOMPOSED_MAPS: [&str; 4] = [ADC_0_100, ADC_100_800, ADC_0_800, F_MAP];

/// Strictly increasing, non-negative diffusion weightings in s/mm².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BValueSet(Vec<f64>);

impl BValueSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "b-value set needs at least 2 entries, got {}",
                values.len()
            )));
        }
        if values.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "b-values must be finite and >= 0: {values:?}"
            )));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "b-values must be strictly increasing: {values:?}"
            )));
        }
        Ok(BValueSet(values))
    }

    /// The clinical acquisition set {0, 100, 600, 800}.
    pub fn canonical() -> Self {
        BValueSet(vec![0.0, 100.0, 600.0, 800.0])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, b: f64) -> Option<usize> {
        self.0.iter().position(|&v| v == b)
    }

    /// Channel indices with `b <= LOW_HIGH_SPLIT`.
    pub fn low_indices(&self) -> Vec<usize> {
        (0..self.0.len())
            .filter(|&i| self.0[i] <= LOW_HIGH_SPLIT)
            .collect()
    }

    /// Channel indices with `b >= LOW_HIGH_SPLIT`.
    pub fn high_indices(&self) -> Vec<usize> {
        (0..self.0.len())
            .filter(|&i| self.0[i] >= LOW_HIGH_SPLIT)
            .collect()
    }
}

impl TryFrom<Vec<f64>> for BValueSet {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        BValueSet::new(v)
    }
}

impl From<BValueSet> for Vec<f64> {
    fn from(b: BValueSet) -> Self {
        b.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TimePoint {
    T0,
    T1,
    T2,
}

impl TimePoint {
    pub const ALL: [TimePoint; 3] = [TimePoint::T0, TimePoint::T1, TimePoint::T2];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TimePoint::T0 => "T0",
            TimePoint::T1 => "T1",
            TimePoint::T2 => "T2",
        };
        f.write_str(s)
    }
}

impl FromStr for TimePoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "T0" | "t0" => Ok(TimePoint::T0),
            "T1" | "t1" => Ok(TimePoint::T1),
            "T2" | "t2" => Ok(TimePoint::T2),
            other => Err(Error::InvalidArgument(format!("unknown time point {other:?}"))),
        }
    }
}

/// Voxel spacing in millimetres, `(dz, dy, dx)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub dz: f64,
    pub dy: f64,
    pub dx: f64,
}

impl Spacing {
    pub fn new(dz: f64, dy: f64, dx: f64) -> Self {
        Spacing { dz, dy, dx }
    }

    pub fn isotropic(d: f64) -> Self {
        Spacing { dz: d, dy: d, dx: d }
    }

    pub fn voxel_volume(&self) -> f64 {
        self.dz * self.dy * self.dx
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.dz, self.dy, self.dx]
    }

    pub fn is_positive(&self) -> bool {
        self.as_array().iter().all(|d| d.is_finite() && *d > 0.0)
    }
}

/// One patient at one time point: multi-b signal, tumour mask and geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct DwiStudy {
    pub patient_id: String,
    pub time_point: TimePoint,
    pub bvalues: BValueSet,
    /// Signal indexed `(b, z, y, x)`.
    pub signal: Array4<f64>,
    pub mask: Array3<bool>,
    pub spacing: Spacing,
}

impl DwiStudy {
    pub fn spatial_dims(&self) -> (usize, usize, usize) {
        let s = self.signal.shape();
        (s[1], s[2], s[3])
    }

    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Mean signal per b-value over the mask.
    pub fn roi_mean_signal(&self) -> Vec<f64> {
        let n = self.mask_count().max(1) as f64;
        self.signal
            .outer_iter()
            .map(|channel| {
                channel
                    .iter()
                    .zip(self.mask.iter())
                    .filter(|(_, &m)| m)
                    .map(|(v, _)| *v)
                    .sum::<f64>()
                    / n
            })
            .collect()
    }
}

/// Named scalar map with a per-voxel validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMap {
    pub name: String,
    pub data: Array3<f64>,
    pub valid: Array3<bool>,
    pub spacing: Spacing,
}

impl ParameterMap {
    /// Map where every finite voxel is valid (used for externally supplied maps).
    pub fn from_data(name: impl Into<String>, data: Array3<f64>, spacing: Spacing) -> Self {
        let valid = data.mapv(f64::is_finite);
        ParameterMap {
            name: name.into(),
            data,
            valid,
            spacing,
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    DimMismatch,
    ChannelCount,
    EmptyMask,
    NonPositiveSpacing,
    BValueSet,
    InvalidSignal,
}

/// One broken study invariant: the field involved and the rule it breaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{:?}]: {}", self.field, self.rule, self.detail)
    }
}

fn violation(field: &str, rule: Rule, detail: String) -> Violation {
    Violation {
        field: field.to_string(),
        rule,
        detail,
    }
}

/// Check every study invariant, including the b-value coverage that
/// decomposition needs. Returns an empty list for a usable study.
pub fn validate_study(study: &DwiStudy) -> Vec<Violation> {
    let mut out = Vec::new();
    let sig = study.signal.shape();
    let mask = study.mask.shape();

    if sig[1..] != *mask {
        out.push(violation(
            "mask",
            Rule::DimMismatch,
            format!("signal spatial dims {:?} != mask dims {:?}", &sig[1..], mask),
        ));
    }
    if sig[0] != study.bvalues.len() {
        out.push(violation(
            "signal",
            Rule::ChannelCount,
            format!("{} channels for {} b-values", sig[0], study.bvalues.len()),
        ));
    }
    if study.mask_count() == 0 {
        out.push(violation("mask", Rule::EmptyMask, "no voxel set".into()));
    }
    if !study.spacing.is_positive() {
        out.push(violation(
            "spacing",
            Rule::NonPositiveSpacing,
            format!("{:?}", study.spacing),
        ));
    }

    let b = study.bvalues.values();
    if study.bvalues.index_of(0.0).is_none() {
        out.push(violation("bvalues", Rule::BValueSet, format!("b=0 missing from {b:?}")));
    }
    let low = study.bvalues.low_indices().len();
    if low < 2 {
        out.push(violation(
            "bvalues",
            Rule::BValueSet,
            format!("need >=2 b-values <= {LOW_HIGH_SPLIT}, have {low} in {b:?}"),
        ));
    }
    let high = study.bvalues.high_indices().len();
    if high < 2 {
        out.push(violation(
            "bvalues",
            Rule::BValueSet,
            format!("need >=2 b-values >= {LOW_HIGH_SPLIT}, have {high} in {b:?}"),
        ));
    }

    let bad = study
        .signal
        .iter()
        .filter(|v| !v.is_finite() || **v < 0.0)
        .count();
    if bad > 0 {
        out.push(violation(
            "signal",
            Rule::InvalidSignal,
            format!("{bad} negative or non-finite samples"),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn study(bvalues: Vec<f64>, mask_dims: (usize, usize, usize)) -> DwiStudy {
        let nb = bvalues.len();
        DwiStudy {
            patient_id: "P1".into(),
            time_point: TimePoint::T0,
            bvalues: BValueSet::new(bvalues).unwrap(),
            signal: Array4::from_elem((nb, 2, 3, 4), 100.0),
            mask: Array3::from_elem(mask_dims, true),
            spacing: Spacing::new(4.0, 2.0, 2.0),
        }
    }

    #[test]
    fn well_formed_study_has_no_violations() {
        assert!(validate_study(&study(vec![0.0, 100.0, 600.0, 800.0], (2, 3, 4))).is_empty());
    }

    #[test]
    fn mask_dim_mismatch_is_reported() {
        let v = validate_study(&study(vec![0.0, 100.0, 600.0, 800.0], (2, 3, 5)));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::DimMismatch);
        assert_eq!(v[0].field, "mask");
    }

    #[test]
    fn missing_b100_is_a_bvalue_violation() {
        let v = validate_study(&study(vec![0.0, 600.0, 800.0], (2, 3, 4)));
        assert!(!v.is_empty());
        assert!(v.iter().all(|x| x.rule == Rule::BValueSet));
    }

    #[test]
    fn empty_mask_and_spacing() {
        let mut s = study(vec![0.0, 100.0, 600.0, 800.0], (2, 3, 4));
        s.mask.fill(false);
        s.spacing.dx = 0.0;
        s.signal[[0, 0, 0, 0]] = -1.0;
        let rules: Vec<Rule> = validate_study(&s).into_iter().map(|v| v.rule).collect();
        assert_eq!(
            rules,
            vec![Rule::EmptyMask, Rule::NonPositiveSpacing, Rule::InvalidSignal]
        );
    }

    #[test]
    fn validation_is_pure() {
        let s = study(vec![0.0, 600.0, 800.0], (2, 3, 5));
        assert_eq!(validate_study(&s), validate_study(&s));
    }

    #[test]
    fn bvalue_set_rules() {
        assert!(BValueSet::new(vec![0.0]).is_err());
        assert!(BValueSet::new(vec![0.0, 0.0]).is_err());
        assert!(BValueSet::new(vec![-1.0, 10.0]).is_err());
        assert!(BValueSet::new(vec![100.0, 0.0]).is_err());
        let c = BValueSet::canonical();
        assert_eq!(c.low_indices(), vec![0, 1]);
        assert_eq!(c.high_indices(), vec![1, 2, 3]);
    }

    #[test]
    fn bvalues_deserialize_with_validation() {
        let ok: BValueSet = serde_json::from_str("[0, 100, 600, 800]").unwrap();
        assert_eq!(ok, BValueSet::canonical());
        assert!(serde_json::from_str::<BValueSet>("[800, 100]").is_err());
    }
}
