//! Radiomic features of a parameter map inside a tumour mask.
//!
//! Three classes are computed, always in this order: first-order intensity
//! statistics (18), shape descriptors (5) and GLCM texture (10). Within a
//! class, names are sorted lexicographically.

mod firstorder;
mod glcm;
mod shape;

pub use firstorder::firstorder_features;
pub use glcm::{cooccurrence_matrices, glcm_features, Glcm, OFFSETS};
pub use shape::shape_features;

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::dwi::ParameterMap;
use crate::error::{Error, Result};

pub const FIRSTORDER_COUNT: usize = 18;
pub const SHAPE_COUNT: usize = 5;
pub const GLCM_COUNT: usize = 10;
pub const FEATURE_COUNT: usize = FIRSTORDER_COUNT + SHAPE_COUNT + GLCM_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscretizationConfig {
    pub bin_count: usize,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        DiscretizationConfig { bin_count: 32 }
    }
}

impl DiscretizationConfig {
    pub fn new(bin_count: usize) -> Result<Self> {
        let cfg = DiscretizationConfig { bin_count };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.bin_count < 2 {
            return Err(Error::Config(format!(
                "bin_count must be >= 2, got {}",
                self.bin_count
            )));
        }
        Ok(())
    }
}

/// Ordered `(name, value)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    entries: Vec<(String, f64)>,
}

impl FeatureVector {
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.entries.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(_, v)| *v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn sorted(mut self) -> Self {
        self.entries.sort_by(|a, b| a.0.cmp(&b.0));
        self
    }

    fn extend_prefixed(&mut self, prefix: &str, other: FeatureVector) {
        for (n, v) in other.entries {
            self.entries.push((format!("{prefix}_{n}"), v));
        }
    }
}

/// `mask ∧ map.valid`.
pub fn effective_region(map: &ParameterMap, mask: &Array3<bool>) -> Result<Array3<bool>> {
    if map.data.shape() != mask.shape() {
        return Err(Error::InvalidArgument(format!(
            "map {} dims {:?} != mask dims {:?}",
            map.name,
            map.data.shape(),
            mask.shape()
        )));
    }
    let mut region = mask.clone();
    Zip::from(&mut region).and(&map.valid).for_each(|r, &v| *r &= v);
    Ok(region)
}

fn region_values(map: &ParameterMap, region: &Array3<bool>) -> Vec<f64> {
    map.data
        .iter()
        .zip(region.iter())
        .filter(|(_, &r)| r)
        .map(|(v, _)| *v)
        .collect()
}

/// Equal-width level for `v` in `[min, max]`; bins are right-closed and the
/// first bin also holds `min`.
pub(crate) fn bin_level(v: f64, min: f64, max: f64, bins: usize) -> u32 {
    if max <= min {
        return 1;
    }
    let x = (v - min) / (max - min) * bins as f64;
    (x.ceil() as i64).clamp(1, bins as i64) as u32
}

/// Discretise valid voxels inside `mask` into levels `1..=bin_count`;
/// voxels outside the region get level 0.
pub fn discretize(
    map: &ParameterMap,
    mask: &Array3<bool>,
    cfg: &DiscretizationConfig,
) -> Result<Array3<u32>> {
    cfg.check()?;
    let region = effective_region(map, mask)?;
    let values = region_values(map, &region);
    if values.is_empty() {
        return Err(Error::EmptyRegion(format!("map {} has no valid voxel in mask", map.name)));
    }
    let (min, max) = min_max(&values);
    let mut out = Array3::zeros(map.data.raw_dim());
    Zip::from(&mut out)
        .and(&map.data)
        .and(&region)
        .for_each(|o, &v, &r| {
            if r {
                *o = bin_level(v, min, max, cfg.bin_count);
            }
        });
    Ok(out)
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// All 33 features with class prefixes `firstorder_`, `shape_`, `glcm_`.
pub fn extract_all(
    map: &ParameterMap,
    mask: &Array3<bool>,
    cfg: &DiscretizationConfig,
) -> Result<FeatureVector> {
    let region = effective_region(map, mask)?;
    let levels = discretize(map, &region, cfg)?;
    let mut out = FeatureVector::default();
    out.extend_prefixed("firstorder", firstorder_features(map, &region, cfg)?);
    out.extend_prefixed("shape", shape_features(&region, &map.spacing)?);
    out.extend_prefixed("glcm", glcm_features(&levels, &region)?);
    if let Some((name, v)) = out.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric(format!("feature {name} is not finite: {v}")));
    }
    Ok(out)
}
