use ndarray::Array3;

use super::{bin_level, effective_region, min_max, region_values, DiscretizationConfig, FeatureVector};
use crate::dwi::ParameterMap;
use crate::error::{Error, Result};

/// Linear-interpolated percentile of sorted data, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Intensity statistics over `mask ∧ valid`. Entropy and uniformity use the
/// discretised histogram; skewness and kurtosis are 0 for a flat region.
pub fn firstorder_features(
    map: &ParameterMap,
    mask: &Array3<bool>,
    cfg: &DiscretizationConfig,
) -> Result<FeatureVector> {
    cfg.check()?;
    let region = effective_region(map, mask)?;
    let mut x = region_values(map, &region);
    if x.is_empty() {
        return Err(Error::EmptyRegion(format!("map {} has no valid voxel in mask", map.name)));
    }
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let (min, max) = min_max(&x);
    let mu = mean(&x);

    let m2 = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - mu).powi(3)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mu).powi(4)).sum::<f64>() / n;
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (0.0, 0.0)
    };

    let energy: f64 = x.iter().map(|v| v * v).sum();
    let p10 = percentile(&x, 0.10);
    let p90 = percentile(&x, 0.90);

    let mad = x.iter().map(|v| (v - mu).abs()).sum::<f64>() / n;
    let robust: Vec<f64> = x.iter().copied().filter(|&v| v >= p10 && v <= p90).collect();
    let robust_mad = if robust.is_empty() {
        0.0
    } else {
        let rm = mean(&robust);
        robust.iter().map(|v| (v - rm).abs()).sum::<f64>() / robust.len() as f64
    };

    let mut hist = vec![0usize; cfg.bin_count + 1];
    for &v in &x {
        hist[bin_level(v, min, max, cfg.bin_count) as usize] += 1;
    }
    let mut entropy = 0.0;
    let mut uniformity = 0.0;
    for &c in hist.iter().filter(|&&c| c > 0) {
        let p = c as f64 / n;
        entropy -= p * p.log2();
        uniformity += p * p;
    }

    let mut fv = FeatureVector::default();
    fv.push("10Percentile", p10);
    fv.push("90Percentile", p90);
    fv.push("Energy", energy);
    fv.push("Entropy", entropy);
    fv.push("InterquartileRange", percentile(&x, 0.75) - percentile(&x, 0.25));
    fv.push("Kurtosis", kurtosis);
    fv.push("Maximum", max);
    fv.push("Mean", mu);
    fv.push("MeanAbsoluteDeviation", mad);
    fv.push("Median", percentile(&x, 0.5));
    fv.push("Minimum", min);
    fv.push("Range", max - min);
    fv.push("RobustMeanAbsoluteDeviation", robust_mad);
    fv.push("RootMeanSquared", (energy / n).sqrt());
    fv.push("Skewness", skewness);
    fv.push("TotalEnergy", energy * map.spacing.voxel_volume());
    fv.push("Uniformity", uniformity);
    fv.push("Variance", m2);
    Ok(fv.sorted())
}

#[cfg(test)]
mod tests {
    use super::super::tests::line_map;
    use super::*;
    use crate::radiomics::FIRSTORDER_COUNT;

    fn run(values: &[f64]) -> FeatureVector {
        let mask = Array3::from_elem((1, 1, values.len()), true);
        firstorder_features(&line_map(values), &mask, &DiscretizationConfig::default()).unwrap()
    }

    #[test]
    fn constant_region() {
        let fv = run(&[2.5; 7]);
        assert_eq!(fv.len(), FIRSTORDER_COUNT);
        assert_eq!(fv.get("Mean"), Some(2.5));
        assert_eq!(fv.get("Variance"), Some(0.0));
        assert_eq!(fv.get("Entropy"), Some(0.0));
        assert_eq!(fv.get("Uniformity"), Some(1.0));
        assert_eq!(fv.get("Skewness"), Some(0.0));
    }

    #[test]
    fn one_to_four() {
        let fv = run(&[3.0, 1.0, 4.0, 2.0]);
        assert_eq!(fv.get("Mean"), Some(2.5));
        assert_eq!(fv.get("Variance"), Some(1.25));
        assert_eq!(fv.get("Median"), Some(2.5));
        assert_eq!(fv.get("Range"), Some(3.0));
        assert_eq!(fv.get("Energy"), Some(30.0));
        assert_eq!(fv.get("MeanAbsoluteDeviation"), Some(1.0));
        // numpy.percentile([1,2,3,4], [10, 90, 25, 75])
        assert!((fv.get("10Percentile").unwrap() - 1.3).abs() < 1e-12);
        assert!((fv.get("90Percentile").unwrap() - 3.7).abs() < 1e-12);
        assert!((fv.get("InterquartileRange").unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(fv.get("Skewness"), Some(0.0));
        // m4 / m2^2 = (2*(1.5^4 + 0.5^4)/4) / 1.5625
        assert!((fv.get("Kurtosis").unwrap() - 1.64).abs() < 1e-12);
        // four distinct bins out of 32
        assert!((fv.get("Entropy").unwrap() - 2.0).abs() < 1e-12);
        assert!((fv.get("Uniformity").unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_voxel() {
        let fv = run(&[0.42]);
        assert_eq!(fv.get("Minimum"), Some(0.42));
        assert_eq!(fv.get("Maximum"), Some(0.42));
        assert_eq!(fv.get("Mean"), Some(0.42));
        assert_eq!(fv.get("Range"), Some(0.0));
        assert!(fv.values().all(f64::is_finite));
    }
}
