//! Cohort manifests: which volumes and clinical rows make up each patient.
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dwi::{BValueSet, DwiStudy, ParameterMap, TimePoint};
use crate::error::{Error, Result};
use crate::io::nifti::{read_3d, read_volume};
use crate::io::tables::read_clinical_csv;
use crate::io::{read_json, write_json};
use crate::pipeline::PatientInput;

/// One 4D file with b as the fourth axis, or one 3D file per b-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DwiSource {
    Single(PathBuf),
    PerB(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePointFiles {
    pub dwi: DwiSource,
    pub mask: PathBuf,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra_maps: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPatient {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
    pub timepoints: BTreeMap<TimePoint, TimePointFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub bvalues: BValueSet,
    pub clinical: PathBuf,
    pub patients: Vec<ManifestPatient>,
    /// Set on load; not serialised.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn manifest_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: message.into(),
    }
}

impl CohortManifest {
    /// Load and check that ids are unique and every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut m: CohortManifest = read_json(path)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut ids = BTreeSet::new();
        for p in &m.patients {
            if !ids.insert(p.id.as_str()) {
                return Err(manifest_err(path, format!("duplicate patient id {}", p.id)));
            }
            if p.timepoints.is_empty() {
                return Err(manifest_err(path, format!("patient {} lists no time points", p.id)));
            }
        }
        for f in m.referenced_files() {
            if !f.is_file() {
                return Err(manifest_err(path, format!("referenced file {} does not exist", f.display())));
            }
        }
        for p in &m.patients {
            for (tp, files) in &p.timepoints {
                if let DwiSource::PerB(list) = &files.dwi {
                    if list.len() != m.bvalues.len() {
                        return Err(manifest_err(
                            path,
                            format!(
                                "patient {} {tp}: {} DWI files for {} b-values",
                                p.id,
                                list.len(),
                                m.bvalues.len()
                            ),
                        ));
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn referenced_files(&self) -> Vec<PathBuf> {
        let mut out = vec![self.resolve(&self.clinical)];
        for p in &self.patients {
            for files in p.timepoints.values() {
                match &files.dwi {
                    DwiSource::Single(f) => out.push(self.resolve(f)),
                    DwiSource::PerB(list) => out.extend(list.iter().map(|f| self.resolve(f))),
                }
                out.push(self.resolve(&files.mask));
                out.extend(files.extra_maps.values().map(|f| self.resolve(f)));
            }
        }
        out
    }

    pub fn patient(&self, id: &str) -> Result<&ManifestPatient> {
        self.patients
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("patient {id} is not in the manifest")))
    }

    /// Read the DWI signal and mask for one patient and time point.
    pub fn load_study(&self, patient: &ManifestPatient, tp: TimePoint) -> Result<DwiStudy> {
        let files = patient.timepoints.get(&tp).ok_or_else(|| {
            Error::InvalidArgument(format!("patient {} has no {tp} study", patient.id))
        })?;
        let (signal, spacing) = match &files.dwi {
            DwiSource::Single(f) => {
                let path = self.resolve(f);
                let v = read_volume(&path)?;
                let spacing = v.spacing;
                (v.into_4d(&path)?, spacing)
            }
            DwiSource::PerB(list) => {
                let mut channels = Vec::with_capacity(list.len());
                let mut spacing = None;
                for f in list {
                    let (a, s) = read_3d(self.resolve(f))?;
                    spacing.get_or_insert(s);
                    channels.push(a);
                }
                let views: Vec<_> = channels.iter().map(|c| c.view()).collect();
                let stacked: Array4<f64> = ndarray::stack(Axis(0), &views).map_err(|e| {
                    Error::InvalidArgument(format!(
                        "patient {} {tp}: per-b DWI files differ in shape ({e})",
                        patient.id
                    ))
                })?;
                (stacked, spacing.expect("at least two files"))
            }
        };
        let (mask, _) = read_3d(self.resolve(&files.mask))?;
        Ok(DwiStudy {
            patient_id: patient.id.clone(),
            time_point: tp,
            bvalues: self.bvalues.clone(),
            signal,
            mask: mask_from(&mask),
            spacing,
        })
    }
}

fn mask_from(a: &Array3<f64>) -> Array3<bool> {
    a.mapv(|v| v != 0.0 && !v.is_nan())
}

/// Read every patient in the manifest, joined to its clinical row.
pub fn load_inputs(m: &CohortManifest) -> Result<Vec<PatientInput>> {
    let clinical_path = m.resolve(&m.clinical);
    let mut clinical: BTreeMap<String, _> = read_clinical_csv(&clinical_path)?
        .into_iter()
        .map(|r| (r.patient_id.clone(), r))
        .collect();
    let records = m
        .patients
        .iter()
        .map(|p| {
            clinical.remove(&p.id).ok_or_else(|| Error::Table {
                path: clinical_path.clone(),
                row: 0,
                column: "patient_id".into(),
                message: format!("no clinical row for patient {}", p.id),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    m.patients
        .par_iter()
        .zip(records)
        .map(|(p, clinical)| {
            let mut studies = Vec::new();
            let mut extra_maps = BTreeMap::new();
            for (&tp, files) in &p.timepoints {
                studies.push(m.load_study(p, tp)?);
                for (name, f) in &files.extra_maps {
                    let (data, spacing) = read_3d(m.resolve(f))?;
                    extra_maps.insert((tp, name.clone()), ParameterMap::from_data(name.clone(), data, spacing));
                }
            }
            Ok(PatientInput {
                id: p.id.clone(),
                label: p.label,
                studies,
                extra_maps,
                clinical,
            })
        })
        .collect()
}

fn rel(id: &str, tp: TimePoint, what: &str) -> PathBuf {
    PathBuf::from(id).join(format!("{tp}_{what}.nii"))
}

/// Write each study as a float32 4D DWI file plus a uint8 mask, the
/// clinical table, and a manifest referencing them, all under `dir`.
pub fn write_cohort(
    dir: &Path,
    patients: &[(Option<bool>, Vec<DwiStudy>, crate::clinical::ClinicalRecord)],
) -> Result<CohortManifest> {
    use crate::io::nifti::{write_volume, DataType, WriteOptions};
    use crate::io::tables::write_clinical_csv;

    let bvalues = patients
        .first()
        .and_then(|p| p.1.first())
        .map(|s| s.bvalues.clone())
        .ok_or_else(|| Error::InvalidArgument("cohort has no studies".into()))?;
    let entries = patients
        .par_iter()
        .map(|(label, studies, clinical)| {
            let id = clinical.patient_id.clone();
            let mut timepoints = BTreeMap::new();
            for s in studies {
                if s.bvalues != bvalues {
                    return Err(Error::InvalidArgument(format!(
                        "patient {id} {} uses different b-values",
                        s.time_point
                    )));
                }
                let dwi = rel(&id, s.time_point, "dwi");
                let mask = rel(&id, s.time_point, "mask");
                write_volume(dir.join(&dwi), s.signal.view().into_dyn(), s.spacing, &WriteOptions::default())?;
                let m = s.mask.mapv(|v| v as u8 as f64);
                write_volume(
                    dir.join(&mask),
                    m.view().into_dyn(),
                    s.spacing,
                    &WriteOptions { datatype: DataType::Uint8, ..Default::default() },
                )?;
                timepoints.insert(
                    s.time_point,
                    TimePointFiles {
                        dwi: DwiSource::Single(dwi),
                        mask,
                        extra_maps: BTreeMap::new(),
                    },
                );
            }
            Ok(ManifestPatient { id, label: *label, timepoints })
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<_> = patients.iter().map(|p| p.2.clone()).collect();
    write_clinical_csv(dir.join("clinical.csv"), &records)?;
    let m = CohortManifest {
        bvalues,
        clinical: PathBuf::from("clinical.csv"),
        patients: entries,
        base_dir: dir.to_path_buf(),
    };
    m.save(dir.join("manifest.json"))?;
    Ok(m)
}

/// Write parameter maps as float32 volumes with NaN at invalid voxels;
/// returns the relative paths written.
pub fn write_maps(
    dir: &Path,
    patient: &str,
    tp: TimePoint,
    maps: &BTreeMap<String, ParameterMap>,
) -> Result<Vec<PathBuf>> {
    use crate::io::nifti::{write_volume, WriteOptions};

    let mut out = Vec::new();
    for (name, map) in maps {
        let rel = rel(patient, tp, name);
        let data = ndarray::Zip::from(&map.data)
            .and(&map.valid)
            .map_collect(|&v, &ok| if ok { v } else { f64::NAN });
        write_volume(dir.join(&rel), data.view().into_dyn(), map.spacing, &WriteOptions::default())?;
        out.push(rel);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_cohort, CohortSpec, Noise, Range};
    use std::fs;

    fn cohort() -> Vec<(Option<bool>, Vec<DwiStudy>, crate::clinical::ClinicalRecord)> {
        let spec = CohortSpec {
            n_patients: 4,
            prevalence: 0.5,
            dims: [3, 5, 5],
            radius: Range::new(1.5, 2.0),
            noise: Noise::None,
            ..CohortSpec::default()
        };
        generate_cohort(&spec)
            .unwrap()
            .into_iter()
            .map(|p| (Some(p.label), p.studies, p.clinical))
            .collect()
    }

    #[test]
    fn written_cohort_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let c = cohort();
        let m = write_cohort(dir.path(), &c).unwrap();
        let loaded = CohortManifest::load(dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.patients, m.patients);
        let inputs = load_inputs(&loaded).unwrap();
        assert_eq!(inputs.len(), 4);
        for (inp, (label, studies, clinical)) in inputs.iter().zip(&c) {
            assert_eq!(inp.label, *label);
            assert_eq!(&inp.clinical, clinical);
            for (a, b) in inp.studies.iter().zip(studies) {
                assert_eq!(a.mask, b.mask);
                assert_eq!(a.spacing, b.spacing);
                for (x, y) in a.signal.iter().zip(b.signal.iter()) {
                    assert_eq!(*x, *y as f32 as f64);
                }
            }
        }
    }

    #[test]
    fn per_b_files_and_missing_references() {
        let dir = tempfile::tempdir().unwrap();
        let c = cohort();
        let mut m = write_cohort(dir.path(), &c).unwrap();
        let s = &c[0].1[0];
        let mut list = Vec::new();
        for b in 0..s.bvalues.len() {
            let rel = PathBuf::from(format!("b{b}.nii"));
            let ch = s.signal.index_axis(Axis(0), b).to_owned();
            crate::io::write_volume(dir.path().join(&rel), ch.view().into_dyn(), s.spacing, &Default::default()).unwrap();
            list.push(rel);
        }
        let tp0 = m.patients[0].timepoints.get_mut(&TimePoint::T0).unwrap();
        tp0.dwi = DwiSource::PerB(list);
        m.save(dir.path().join("perb.json")).unwrap();
        let loaded = CohortManifest::load(dir.path().join("perb.json")).unwrap();
        let study = loaded.load_study(&loaded.patients[0], TimePoint::T0).unwrap();
        let single = loaded.load_study(&loaded.patients[1], TimePoint::T0).unwrap();
        assert_eq!(study.signal.dim(), single.signal.dim());

        fs::remove_file(dir.path().join("b0.nii")).unwrap();
        assert!(matches!(
            CohortManifest::load(dir.path().join("perb.json")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = write_cohort(dir.path(), &cohort()).unwrap();
        m.patients[1].id = m.patients[0].id.clone();
        m.save(dir.path().join("dup.json")).unwrap();
        assert!(CohortManifest::load(dir.path().join("dup.json")).is_err());
    }
}
