//! Synthetic DWI phantoms and labelled cohorts from the IVIM forward model.
//!
//! All randomness is counter based: every voxel and every patient draws from
//! its own ChaCha stream keyed by the spec seed, so output does not depend on
//! thread count or generation order.

use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clinical::{ClinicalRecord, HrHer2Status, TumorGrade};
use crate::decomposition::IvimParams;
use crate::dwi::{BValueSet, DwiStudy, Spacing, TimePoint};
use crate::error::{Error, Result};
use crate::seed;

const SALT_NOISE: u64 = 0x6e6f_6973_65;
const SALT_HETEROGENEITY: u64 = 0x6865_7465_72;
const SALT_LABELS: u64 = 0x6c61_6265_6c;
const SALT_PATIENT: u64 = 0x7061_7469_656e;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Noise {
    None,
    /// Magnitude of a complex Gaussian perturbation with
    /// `sigma = background.s0 / snr`.
    Rician { snr: f64 },
}

/// Ellipsoid in voxel coordinates `(z, y, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub params: IvimParams,
    /// Log-normal per-voxel jitter on `d`, `d_star` and `f`; 0 for uniform.
    #[serde(default)]
    pub heterogeneity: f64,
}

impl Region {
    fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        let p = [z as f64, y as f64, x as f64];
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

fn default_patient() -> String {
    "phantom".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    /// Grid dimensions `(z, y, x)`.
    pub dims: [usize; 3],
    pub spacing: Spacing,
    #[serde(default = "BValueSet::canonical")]
    pub bvalues: BValueSet,
    pub background: IvimParams,
    /// Later regions override earlier ones; their union is the mask.
    pub regions: Vec<Region>,
    pub noise: Noise,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_patient")]
    pub patient_id: String,
    #[serde(default = "default_time_point")]
    pub time_point: TimePoint,
}

fn default_time_point() -> TimePoint {
    TimePoint::T0
}

impl PhantomSpec {
    pub fn check(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Config(format!("phantom dims must be positive, got {:?}", self.dims)));
        }
        if !self.spacing.is_positive() {
            return Err(Error::Config(format!("spacing must be positive, got {:?}", self.spacing)));
        }
        self.background.check()?;
        if self.regions.is_empty() {
            return Err(Error::Config("phantom needs at least one region".into()));
        }
        for (i, r) in self.regions.iter().enumerate() {
            r.params.check()?;
            let inside = (0..3).all(|a| r.center[a] >= 0.0 && r.center[a] <= (self.dims[a] - 1) as f64);
            if !inside || r.radii.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Config(format!(
                    "region {i} must have a centre inside the grid and positive radii"
                )));
            }
            if !(r.heterogeneity >= 0.0) {
                return Err(Error::Config(format!("region {i} heterogeneity must be >= 0")));
            }
        }
        if let Noise::Rician { snr } = self.noise {
            if !(snr > 0.0) {
                return Err(Error::Config(format!("snr must be > 0, got {snr}")));
            }
        }
        Ok(())
    }
}

/// Voxelwise parameters the signal was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub s0: Array3<f64>,
    pub d: Array3<f64>,
    pub d_star: Array3<f64>,
    pub f: Array3<f64>,
}

fn jitter(p: IvimParams, h: f64, rng: &mut impl Rng) -> IvimParams {
    if h == 0.0 {
        return p;
    }
    let mut n = || -> f64 { (h * rng.sample::<f64, _>(StandardNormal)).exp() };
    let d = p.d * n();
    let d_star = (p.d_star * n()).max(d);
    let f = (p.f * n()).clamp(0.0, 1.0);
    IvimParams { d, d_star, f, ..p }
}

/// Forward-simulate a phantom study and return it with its ground truth.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(DwiStudy, GroundTruth)> {
    spec.check()?;
    let [nz, ny, nx] = spec.dims;
    let nb = spec.bvalues.len();
    let sigma = match spec.noise {
        Noise::None => 0.0,
        Noise::Rician { snr } => spec.background.s0 / snr,
    };
    let het_seed = seed::mix(spec.seed, SALT_HETEROGENEITY);
    let noise_seed = seed::mix(spec.seed, SALT_NOISE);

    let voxels: Vec<(bool, IvimParams, Vec<f64>)> = (0..nz * ny * nx)
        .into_par_iter()
        .map(|i| {
            let (z, y, x) = (i / (ny * nx), (i / nx) % ny, i % nx);
            let region = spec.regions.iter().rev().find(|r| r.contains(z, y, x));
            let params = match region {
                Some(r) => jitter(r.params, r.heterogeneity, &mut seed::stream_rng(het_seed, i as u64)),
                None => spec.background,
            };
            let mut signal: Vec<f64> = spec.bvalues.values().iter().map(|&b| params.signal_at(b)).collect();
            if sigma > 0.0 {
                let mut rng = seed::stream_rng(noise_seed, i as u64);
                for s in &mut signal {
                    let g1: f64 = rng.sample(StandardNormal);
                    let g2: f64 = rng.sample(StandardNormal);
                    *s = (*s + sigma * g1).hypot(sigma * g2);
                }
            }
            (region.is_some(), params, signal)
        })
        .collect();

    let mut signal = Array4::zeros((nb, nz, ny, nx));
    let mut mask = Array3::from_elem((nz, ny, nx), false);
    let mut truth = GroundTruth {
        s0: Array3::zeros((nz, ny, nx)),
        d: Array3::zeros((nz, ny, nx)),
        d_star: Array3::zeros((nz, ny, nx)),
        f: Array3::zeros((nz, ny, nx)),
    };
    for (i, (inside, p, s)) in voxels.into_iter().enumerate() {
        let ix = (i / (ny * nx), (i / nx) % ny, i % nx);
        let ix = [ix.0, ix.1, ix.2];
        mask[ix] = inside;
        truth.s0[ix] = p.s0;
        truth.d[ix] = p.d;
        truth.d_star[ix] = p.d_star;
        truth.f[ix] = p.f;
        for (b, v) in s.into_iter().enumerate() {
            signal[[b, ix[0], ix[1], ix[2]]] = v;
        }
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Config("phantom regions cover no voxel centre".into()));
    }
    let study = DwiStudy {
        patient_id: spec.patient_id.clone(),
        time_point: spec.time_point,
        bvalues: spec.bvalues.clone(),
        signal,
        mask,
        spacing: spec.spacing,
    };
    Ok((study, truth))
}

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    fn check(&self, what: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::Config(format!("{what} range must satisfy min <= max, got {self:?}")));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

/// Relative parameter change against T0: `new = old * (1 + shift)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamShift {
    pub f: f64,
    pub d: f64,
    pub d_star: f64,
}

impl ParamShift {
    fn apply(&self, p: IvimParams) -> IvimParams {
        let d = p.d * (1.0 + self.d);
        IvimParams {
            s0: p.s0,
            d,
            d_star: (p.d_star * (1.0 + self.d_star)).max(d),
            f: (p.f * (1.0 + self.f)).clamp(0.0, 1.0),
        }
    }

    fn check(&self, what: &str) -> Result<()> {
        if [self.f, self.d, self.d_star].iter().any(|v| !(*v > -1.0) || !v.is_finite()) {
            return Err(Error::Config(format!("{what} shifts must be finite and > -1, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeShifts {
    pub t1: ParamShift,
    pub t2: ParamShift,
}

impl TimeShifts {
    pub fn at(&self, tp: TimePoint) -> ParamShift {
        match tp {
            TimePoint::T0 => ParamShift::default(),
            TimePoint::T1 => self.t1,
            TimePoint::T2 => self.t2,
        }
    }

    /// F falls and D rises over treatment, half the effect by T1.
    pub fn response(f_drop: f64, d_rise: f64) -> Self {
        TimeShifts {
            t1: ParamShift { f: -0.5 * f_drop, d: 0.5 * d_rise, d_star: 0.0 },
            t2: ParamShift { f: -f_drop, d: d_rise, d_star: 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_patients: usize,
    /// Fraction of pCR patients; the cohort has exactly
    /// `round(n_patients * prevalence)` of them.
    pub prevalence: f64,
    pub dims: [usize; 3],
    pub spacing: Spacing,
    pub bvalues: BValueSet,
    pub background: IvimParams,
    pub s0: Range,
    pub d: Range,
    pub d_star: Range,
    pub f: Range,
    /// Tumour semi-axes in voxels, sampled per patient and axis.
    pub radius: Range,
    pub heterogeneity: f64,
    pub responders: TimeShifts,
    pub non_responders: TimeShifts,
    pub noise: Noise,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_patients: 150,
            prevalence: 0.3,
            dims: [8, 16, 16],
            spacing: Spacing::new(4.0, 2.0, 2.0),
            bvalues: BValueSet::canonical(),
            background: IvimParams { s0: 1000.0, d: 2.0e-3, d_star: 20e-3, f: 0.05 },
            s0: Range::new(800.0, 1200.0),
            d: Range::new(0.5e-3, 2.5e-3),
            d_star: Range::new(10e-3, 100e-3),
            f: Range::new(0.05, 0.35),
            radius: Range::new(2.0, 5.0),
            heterogeneity: 0.1,
            responders: TimeShifts::response(0.5, 0.15),
            non_responders: TimeShifts::default(),
            noise: Noise::Rician { snr: 50.0 },
            seed: 0,
        }
    }
}

impl CohortSpec {
    /// Same cohort with no parameter change for either class.
    pub fn null(mut self) -> Self {
        self.responders = TimeShifts::default();
        self.non_responders = TimeShifts::default();
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.n_patients < 2 {
            return Err(Error::Config("cohort needs at least 2 patients".into()));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::Config(format!("prevalence must be in (0, 1), got {}", self.prevalence)));
        }
        let pos = self.positives();
        if pos == 0 || pos == self.n_patients {
            return Err(Error::Config(format!(
                "prevalence {} on {} patients leaves a single class",
                self.prevalence, self.n_patients
            )));
        }
        self.background.check()?;
        for (r, what) in [
            (self.s0, "s0"),
            (self.d, "d"),
            (self.d_star, "d_star"),
            (self.f, "f"),
            (self.radius, "radius"),
        ] {
            r.check(what)?;
        }
        if self.s0.min <= 0.0 || self.d.min < 0.0 || self.f.min < 0.0 || self.f.max > 1.0 {
            return Err(Error::Config(
                "parameter ranges must give s0>0, d>=0 and f in [0,1]".into(),
            ));
        }
        if !(self.radius.min > 0.0) || !(self.heterogeneity >= 0.0) {
            return Err(Error::Config("radius must be > 0 and heterogeneity >= 0".into()));
        }
        for (s, what) in [
            (self.responders.t1, "responder T1"),
            (self.responders.t2, "responder T2"),
            (self.non_responders.t1, "non-responder T1"),
            (self.non_responders.t2, "non-responder T2"),
        ] {
            s.check(what)?;
        }
        Ok(())
    }

    pub fn positives(&self) -> usize {
        (self.n_patients as f64 * self.prevalence).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPatient {
    pub id: String,
    pub label: bool,
    /// T0, T1, T2 in order.
    pub studies: Vec<DwiStudy>,
    pub clinical: ClinicalRecord,
    /// Tumour parameters at T0 before voxel jitter.
    pub baseline: IvimParams,
}

pub const RACES: [(&str, f64); 4] = [("white", 0.6), ("black", 0.15), ("asian", 0.15), ("other", 0.1)];
pub const LESION_TYPES: [(&str, f64); 4] = [
    ("single_mass", 0.5),
    ("multiple_masses", 0.2),
    ("non_mass", 0.2),
    ("mixed", 0.1),
];
const HR_HER2_WEIGHTS: [f64; 4] = [0.2, 0.4, 0.15, 0.25];
const GRADE_WEIGHTS: [(TumorGrade, f64); 3] = [
    (TumorGrade::Low, 0.1),
    (TumorGrade::Intermediate, 0.35),
    (TumorGrade::High, 0.55),
];
const GRADE_MISSING: f64 = 0.05;

fn pick<T: Copy>(items: &[(T, f64)], rng: &mut impl Rng) -> T {
    let total: f64 = items.iter().map(|i| i.1).sum();
    let mut u = rng.random::<f64>() * total;
    for &(v, w) in items {
        if u < w {
            return v;
        }
        u -= w;
    }
    items[items.len() - 1].0
}

/// Clinical fields drawn independently of the label.
fn sample_clinical(id: &str, rng: &mut impl Rng) -> ClinicalRecord {
    let age = (48.0 + 10.0 * rng.sample::<f64, _>(StandardNormal)).clamp(25.0, 80.0);
    let hr_her2 = pick(
        &HrHer2Status::ALL
            .iter()
            .copied()
            .zip(HR_HER2_WEIGHTS)
            .collect::<Vec<_>>(),
        rng,
    );
    let grade = if rng.random::<f64>() < GRADE_MISSING {
        None
    } else {
        Some(pick(&GRADE_WEIGHTS, rng))
    };
    let diameter = (1.2_f64.ln() + 0.4 * rng.sample::<f64, _>(StandardNormal)).exp() * 3.0;
    ClinicalRecord {
        patient_id: id.to_string(),
        age: (age * 10.0).round() / 10.0,
        race: pick(&RACES, rng).to_string(),
        lesion_type: pick(&LESION_TYPES, rng).to_string(),
        hr_her2,
        grade,
        diameter_cm: Some((diameter * 10.0).round() / 10.0),
    }
}

/// Patient ids `P001`, `P002`, … padded to the cohort size.
pub fn patient_id(index: usize, n: usize) -> String {
    let width = n.to_string().len().max(3);
    format!("P{:0width$}", index + 1)
}

/// Labelled cohort with T0/T1/T2 studies per patient.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<SyntheticPatient>> {
    spec.check()?;
    let n = spec.n_patients;
    let mut labels = vec![false; n];
    labels[..spec.positives()].fill(true);
    labels.shuffle(&mut seed::rng(seed::mix(spec.seed, SALT_LABELS)));

    let patient_seed = seed::mix(spec.seed, SALT_PATIENT);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let id = patient_id(i, n);
            let label = labels[i];
            let mut rng = seed::stream_rng(patient_seed, i as u64);
            let d = spec.d.sample(&mut rng);
            let baseline = IvimParams {
                s0: spec.s0.sample(&mut rng),
                d,
                d_star: spec.d_star.sample(&mut rng).max(d),
                f: spec.f.sample(&mut rng),
            };
            let radii = [
                spec.radius.sample(&mut rng).min(spec.dims[0] as f64 / 2.0),
                spec.radius.sample(&mut rng).min(spec.dims[1] as f64 / 2.0),
                spec.radius.sample(&mut rng).min(spec.dims[2] as f64 / 2.0),
            ];
            let center = spec.dims.map(|d| (d as f64 - 1.0) / 2.0);
            let clinical = sample_clinical(&id, &mut rng);
            let shifts = if label { spec.responders } else { spec.non_responders };
            let voxel_seed = rng.random::<u64>();

            let studies = TimePoint::ALL
                .iter()
                .map(|&tp| {
                    let ps = PhantomSpec {
                        dims: spec.dims,
                        spacing: spec.spacing,
                        bvalues: spec.bvalues.clone(),
                        background: spec.background,
                        regions: vec![Region {
                            center,
                            radii,
                            params: shifts.at(tp).apply(baseline),
                            heterogeneity: spec.heterogeneity,
                        }],
                        noise: spec.noise,
                        seed: seed::mix(voxel_seed, tp.index() as u64),
                        patient_id: id.clone(),
                        time_point: tp,
                    };
                    generate_phantom(&ps).map(|(s, _)| s)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SyntheticPatient {
                id,
                label,
                studies,
                clinical,
                baseline,
            })
        })
        .collect()
}
