//! File formats: NIfTI-1 volumes, CSV tables, JSON manifests and configs.
//! Every writer goes through [`atomic_write`].

pub mod config;
pub mod manifest;
pub mod nifti;
pub mod tables;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use config::{GridChoice, RunConfig};
pub use manifest::{load_inputs, write_cohort, write_maps, CohortManifest, DwiSource, ManifestPatient, TimePointFiles};
pub use nifti::{read_volume, write_volume, DataType, Endian, Volume, WriteOptions};
pub use tables::{
    read_ablation_csv, write_ablation_csv, read_clinical_csv, read_features_csv, read_labels_csv, read_predictions_csv, write_clinical_csv,
    write_features_csv, write_labels_csv, write_predictions_csv, Prediction,
};

/// Write to a temporary file in the target directory, then rename over
/// `path`, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: format!("invalid JSON: {e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn json_round_trip_and_invalid_json() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        write_json(&p, &vec![1.5, 2.0]).unwrap();
        assert_eq!(read_json::<Vec<f64>>(&p).unwrap(), vec![1.5, 2.0]);
        fs::write(&p, b"{").unwrap();
        assert!(matches!(read_json::<Vec<f64>>(&p), Err(Error::Format { .. })));
    }
}
