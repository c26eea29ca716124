//! Mono-exponential ADC fitting over b-value subsets and the segmented
//! estimate of the pseudo-diffusion fraction.
//!
//! All fits are unweighted least squares of `ln(s)` against `b`. The fraction
//! map extrapolates the high-b fit back to `b = 0` and attributes the excess
//! of the measured `s(0)` over that intercept to pseudo-diffusion.

use std::collections::BTreeMap;

use ndarray::{Array3, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dwi::{
    validate_study, BValueSet, DwiStudy, ParameterMap, ADC_0_100, ADC_0_800, ADC_100_800, F_MAP,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonoExpFit {
    /// mm²/s
    pub adc: f64,
    /// Natural log of the extrapolated `b = 0` signal.
    pub log_s0: f64,
    /// Sum of squared log-domain residuals.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FitError {
    #[error("need at least 2 points")]
    TooFewPoints,
    #[error("duplicate b-value")]
    DuplicateB,
    #[error("non-positive signal")]
    NonPositiveSignal,
}

/// Least-squares fit of `ln s = log_s0 - b * adc`.
///
/// Two-point fits use the closed form `ln(s_a / s_b) / (b_b - b_a)`.
pub fn fit_monoexp(points: &[(f64, f64)]) -> std::result::Result<MonoExpFit, FitError> {
    if points.len() < 2 {
        return Err(FitError::TooFewPoints);
    }
    for (i, (bi, _)) in points.iter().enumerate() {
        if points[..i].iter().any(|(bj, _)| bj == bi) {
            return Err(FitError::DuplicateB);
        }
    }
    if points.iter().any(|&(_, s)| !(s > 0.0) || !s.is_finite()) {
        return Err(FitError::NonPositiveSignal);
    }

    if let [(ba, sa), (bb, sb)] = *points {
        let adc = (sa / sb).ln() / (bb - ba);
        return Ok(MonoExpFit {
            adc,
            log_s0: sa.ln() + adc * ba,
            residual: 0.0,
        });
    }

    let n = points.len() as f64;
    let logs: Vec<f64> = points.iter().map(|&(_, s)| s.ln()).collect();
    let b_mean = points.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = logs.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (&(b, _), &y) in points.iter().zip(&logs) {
        sxy += (b - b_mean) * (y - y_mean);
        sxx += (b - b_mean) * (b - b_mean);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * b_mean;
    let residual = points
        .iter()
        .zip(&logs)
        .map(|(&(b, _), &y)| {
            let r = y - (intercept + slope * b);
            r * r
        })
        .sum();
    Ok(MonoExpFit {
        adc: -slope,
        log_s0: intercept,
        residual,
    })
}

/// Bi-exponential IVIM parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvimParams {
    pub s0: f64,
    /// Pure diffusion coefficient, mm²/s.
    pub d: f64,
    /// Pseudo-diffusion coefficient, mm²/s.
    pub d_star: f64,
    /// Pseudo-diffusion fraction.
    pub f: f64,
}

impl IvimParams {
    pub fn new(s0: f64, d: f64, d_star: f64, f: f64) -> Result<Self> {
        let p = IvimParams { s0, d, d_star, f };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        let finite = [self.s0, self.d, self.d_star, self.f]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.s0 <= 0.0 || self.d < 0.0 || self.d_star < self.d || !(0.0..=1.0).contains(&self.f) {
            return Err(Error::InvalidArgument(format!(
                "IVIM parameters violate s0>0, d>=0, d*>=d, 0<=f<=1: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn signal_at(&self, b: f64) -> f64 {
        self.s0 * (self.f * (-b * (self.d_star + self.d)).exp() + (1.0 - self.f) * (-b * self.d).exp())
    }
}

/// Evaluate the bi-exponential model at every b-value.
pub fn ivim_forward(params: &IvimParams, bvalues: &BValueSet) -> Vec<f64> {
    bvalues.values().iter().map(|&b| params.signal_at(b)).collect()
}

/// Per-voxel outputs of the decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelDecomposition {
    pub adc_low: Option<f64>,
    pub adc_high: Option<f64>,
    pub adc_all: Option<f64>,
    pub f: Option<f64>,
}

/// Channel subsets used by the decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetPlan {
    pub low: Vec<usize>,
    pub high: Vec<usize>,
    pub all: Vec<usize>,
    pub b0: usize,
}

impl SubsetPlan {
    pub fn new(bvalues: &BValueSet) -> Result<Self> {
        let low = bvalues.low_indices();
        let high = bvalues.high_indices();
        if low.len() < 2 {
            return Err(Error::Config(format!(
                "subset {ADC_0_100} needs >=2 b-values <= 100, got {:?}",
                bvalues.values()
            )));
        }
        if high.len() < 2 {
            return Err(Error::Config(format!(
                "subset {ADC_100_800} needs >=2 b-values >= 100, got {:?}",
                bvalues.values()
            )));
        }
        let b0 = bvalues.index_of(0.0).ok_or_else(|| {
            Error::Config(format!(
                "subset {F_MAP} needs b=0, got {:?}",
                bvalues.values()
            ))
        })?;
        Ok(SubsetPlan {
            low,
            high,
            all: (0..bvalues.len()).collect(),
            b0,
        })
    }

    /// Decompose one voxel's signal vector (one entry per b-value).
    pub fn voxel(&self, bvalues: &[f64], signal: &[f64]) -> VoxelDecomposition {
        let pick = |idx: &[usize]| -> Vec<(f64, f64)> {
            idx.iter().map(|&i| (bvalues[i], signal[i])).collect()
        };
        let adc = |idx: &[usize]| fit_monoexp(&pick(idx)).ok().map(|f| f.adc);
        let high_fit = fit_monoexp(&pick(&self.high)).ok();
        VoxelDecomposition {
            adc_low: adc(&self.low),
            adc_high: high_fit.map(|f| f.adc),
            adc_all: adc(&self.all),
            f: high_fit.and_then(|fit| fraction_from_fit(signal[self.b0], &fit)),
        }
    }
}

fn fraction_from_fit(s_b0: f64, high_fit: &MonoExpFit) -> Option<f64> {
    if !(s_b0 > 0.0) || !s_b0.is_finite() {
        return None;
    }
    let intercept = high_fit.log_s0.exp();
    let f = (s_b0 - intercept) / s_b0;
    f.is_finite().then(|| f.clamp(0.0, 1.0))
}

fn check_study(study: &DwiStudy) -> Result<SubsetPlan> {
    let plan = SubsetPlan::new(&study.bvalues)?;
    let violations = validate_study(study);
    if !violations.is_empty() {
        return Err(Error::InvalidStudy(violations));
    }
    Ok(plan)
}

fn decompose_voxels(study: &DwiStudy, plan: &SubsetPlan) -> Vec<VoxelDecomposition> {
    let (nz, ny, nx) = study.spatial_dims();
    let nb = study.bvalues.len();
    let b = study.bvalues.values();
    let signal = study.signal.as_standard_layout();
    let flat = signal.as_slice().expect("standard layout");
    let nvox = nz * ny * nx;
    (0..nvox)
        .into_par_iter()
        .map(|v| {
            let s: Vec<f64> = (0..nb).map(|c| flat[c * nvox + v]).collect();
            plan.voxel(b, &s)
        })
        .collect()
}

fn to_map(
    study: &DwiStudy,
    name: &str,
    voxels: &[VoxelDecomposition],
    get: impl Fn(&VoxelDecomposition) -> Option<f64>,
) -> ParameterMap {
    let dims = study.mask.raw_dim();
    let values: Vec<Option<f64>> = voxels.iter().map(get).collect();
    let data = Array3::from_shape_vec(dims, values.iter().map(|v| v.unwrap_or(0.0)).collect())
        .expect("voxel count matches mask");
    let mut valid =
        Array3::from_shape_vec(dims, values.iter().map(|v| v.is_some()).collect()).expect("voxel count matches mask");
    Zip::from(&mut valid).and(&study.mask).for_each(|v, &m| *v &= m);
    ParameterMap {
        name: name.to_string(),
        data,
        valid,
        spacing: study.spacing,
    }
}

/// Fit every voxel of the volume and return the four decomposed maps keyed
/// by name. Validity is restricted to the tumour mask.
pub fn decompose_study(study: &DwiStudy) -> Result<BTreeMap<String, ParameterMap>> {
    let plan = check_study(study)?;
    let voxels = decompose_voxels(study, &plan);
    let mut out = BTreeMap::new();
    out.insert(ADC_0_100.to_string(), to_map(study, ADC_0_100, &voxels, |v| v.adc_low));
    out.insert(ADC_100_800.to_string(), to_map(study, ADC_100_800, &voxels, |v| v.adc_high));
    out.insert(ADC_0_800.to_string(), to_map(study, ADC_0_800, &voxels, |v| v.adc_all));
    out.insert(F_MAP.to_string(), to_map(study, F_MAP, &voxels, |v| v.f));
    Ok(out)
}

/// Pseudo-diffusion fraction map alone.
pub fn compute_f(study: &DwiStudy) -> Result<ParameterMap> {
    let plan = check_study(study)?;
    let voxels = decompose_voxels(study, &plan);
    Ok(to_map(study, F_MAP, &voxels, |v| v.f))
}
