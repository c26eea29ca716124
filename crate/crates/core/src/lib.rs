//! Physiologically decomposed diffusion-weighted MRI.
//!
//! The crate turns multi-b-value DWI studies into parameter maps
//! (`ADC_0_100`, `ADC_100_800`, `ADC_0_800`, `F`), extracts radiomic and
//! clinical features from them, and trains a class-weighted second-order
//! gradient-boosted tree classifier for pathological-complete-response
//! prediction.
//!
//! Module map:
//!
//! * [`dwi`]: volume types, b-value bookkeeping and study validation
//! * [`decomposition`]: mono-exponential ADC fits and the pseudo-diffusion fraction map
//! * [`phantom`]: IVIM forward-model phantoms and labelled synthetic cohorts
//! * [`radiomics`]: first-order, shape and GLCM features inside a mask
//! * [`clinical`]: clinical variable encoding
//! * [`features`]: feature matrix assembly and ANOVA top-k selection
//! * [`model`]: boosted trees and stratified cross-validation
//! * [`evaluation`]: AUC, F1, Cohen's kappa, permutation test, ablation
//! * [`io`]: NIfTI-1, CSV, manifests and run configuration
//! * [`pipeline`]: glue from studies to feature matrices

pub mod clinical;
pub mod decomposition;
pub mod dwi;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod io;
pub mod model;
pub mod phantom;
pub mod pipeline;
pub mod radiomics;
mod seed;
mod serde_float;

pub use error::{Error, Result};
