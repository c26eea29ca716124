//! From studies and clinical records to per-patient feature sets.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::clinical::{ClinicalEncoder, ClinicalRecord};
use crate::decomposition::decompose_study;
use crate::dwi::{DwiStudy, ParameterMap, TimePoint};
use crate::error::{Error, Result};
use crate::features::PatientFeatures;
use crate::phantom::SyntheticPatient;
use crate::radiomics::{extract_all, DiscretizationConfig};

/// Imaging and clinical inputs for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientInput {
    pub id: String,
    pub label: Option<bool>,
    pub studies: Vec<DwiStudy>,
    /// Precomputed maps such as SER, keyed by time point and name.
    pub extra_maps: BTreeMap<(TimePoint, String), ParameterMap>,
    pub clinical: ClinicalRecord,
}

impl From<&SyntheticPatient> for PatientInput {
    fn from(p: &SyntheticPatient) -> Self {
        PatientInput {
            id: p.id.clone(),
            label: Some(p.label),
            studies: p.studies.clone(),
            extra_maps: BTreeMap::new(),
            clinical: p.clinical.clone(),
        }
    }
}

/// Decompose every study and extract radiomics from every derived and
/// extra map within the tumour mask of that time point.
pub fn extract_patient(
    input: &PatientInput,
    encoder: &ClinicalEncoder,
    cfg: &DiscretizationConfig,
) -> Result<PatientFeatures> {
    let mut imaging = BTreeMap::new();
    for study in &input.studies {
        if study.patient_id != input.id {
            return Err(Error::InvalidArgument(format!(
                "study for {} listed under patient {}",
                study.patient_id, input.id
            )));
        }
        let tp = study.time_point;
        if imaging.keys().any(|(t, _): &(TimePoint, String)| *t == tp) {
            return Err(Error::InvalidArgument(format!(
                "patient {} has two studies at {tp}",
                input.id
            )));
        }
        for (name, map) in decompose_study(study)? {
            imaging.insert((tp, name), extract_all(&map, &study.mask, cfg)?);
        }
        for ((t, name), map) in &input.extra_maps {
            if *t != tp {
                continue;
            }
            if map.data.dim() != study.mask.dim() {
                return Err(Error::InvalidArgument(format!(
                    "patient {} map {name} at {tp} has dims {:?}, mask has {:?}",
                    input.id,
                    map.data.dim(),
                    study.mask.dim()
                )));
            }
            imaging.insert((tp, name.clone()), extract_all(map, &study.mask, cfg)?);
        }
    }
    Ok(PatientFeatures {
        patient_id: input.id.clone(),
        label: input.label,
        imaging,
        clinical: encoder.transform(&input.clinical),
    })
}

/// Fit the clinical encoder on the cohort and extract every patient in
/// parallel. Output order follows input order.
pub fn extract_cohort(
    inputs: &[PatientInput],
    cfg: &DiscretizationConfig,
) -> Result<(ClinicalEncoder, Vec<PatientFeatures>)> {
    cfg.check()?;
    let mut ids: Vec<&str> = inputs.iter().map(|p| p.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!("duplicate patient id {}", w[0])));
    }
    let records: Vec<ClinicalRecord> = inputs.iter().map(|p| p.clinical.clone()).collect();
    let encoder = ClinicalEncoder::fit(&records)?;
    let patients = inputs
        .par_iter()
        .map(|p| extract_patient(p, &encoder, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((encoder, patients))
}
