//! Classification metrics, a paired permutation test on ΔAUC, and the
//! map-subset × time-point ablation table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dwi::{TimePoint, ADC_0_100, ADC_0_800, ADC_100_800, F_MAP};
use crate::error::{Error, Result};
use crate::features::{assemble, class_counts, PatientFeatures};
use crate::model::{cross_val_predict, stratified_folds, PipelineConfig};
use crate::seed;

use rand::Rng;

fn check_classes(labels: &[bool]) -> Result<()> {
    let (neg, pos) = class_counts(labels);
    if neg == 0 || pos == 0 {
        return Err(Error::SingleClass {
            negatives: neg,
            positives: pos,
        });
    }
    Ok(())
}

fn check_len(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Area under the ROC curve as the Mann–Whitney U statistic; tied scores
/// count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_len(scores, labels)?;
    check_classes(labels)?;
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("score {s} is NaN")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the rank sum of the positives keeps every quantity integral.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, average (i + j + 2) / 2
        let twice_avg = (i + j + 2) as u64;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        rank_sum2 += twice_avg * pos_in_group;
        i = j + 1;
    }
    let (neg, pos) = class_counts(labels);
    let (neg, pos) = (neg as u64, pos as u64);
    let u2 = rank_sum2 - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Counts at a decision threshold; `score >= threshold` predicts positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub r#fn: u64,
}

impl Confusion {
    pub fn from_scores(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Self> {
        check_len(scores, labels)?;
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= threshold, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.r#fn += 1,
            }
        }
        Ok(c)
    }

    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.tn + self.r#fn
    }

    /// `2TP / (2TP + FP + FN)`, 0 when the denominator is 0.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.r#fn;
        if d == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / d as f64
        }
    }

    /// `(p_o - p_e) / (1 - p_e)`, 0 when `p_e = 1`. Evaluated as
    /// `(n·agree − S) / (n² − S)` with `S` the integer marginal product sum.
    pub fn kappa(&self) -> f64 {
        let n = self.n();
        let agree = self.tp + self.tn;
        let s = (self.tp + self.fp) * (self.tp + self.r#fn) + (self.tn + self.r#fn) * (self.tn + self.fp);
        let denom = n * n - s;
        if denom == 0 {
            return 0.0;
        }
        (n as f64 * agree as f64 - s as f64) / denom as f64
    }
}

pub fn f1(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_classes(labels)?;
    Ok(Confusion::from_scores(scores, labels, threshold)?.f1())
}

pub fn cohen_kappa(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_classes(labels)?;
    Ok(Confusion::from_scores(scores, labels, threshold)?.kappa())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub f1: f64,
    pub kappa: f64,
    pub n: usize,
    pub threshold: f64,
}

impl MetricsReport {
    pub fn compute(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Self> {
        Ok(MetricsReport {
            auc: auc(scores, labels)?,
            f1: f1(scores, labels, threshold)?,
            kappa: cohen_kappa(scores, labels, threshold)?,
            n: labels.len(),
            threshold,
        })
    }
}

/// Two-sided p-value for `AUC(a) - AUC(b)`: each replicate swaps the two
/// models' scores on every sample with probability one half.
pub fn paired_permutation_test(
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[bool],
    n_perm: usize,
    seed: u64,
) -> Result<f64> {
    if scores_a.len() != scores_b.len() || scores_a.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "misaligned inputs: {} / {} scores, {} labels",
            scores_a.len(),
            scores_b.len(),
            labels.len()
        )));
    }
    if n_perm < 100 {
        return Err(Error::Config(format!("n_perm must be >= 100, got {n_perm}")));
    }
    let observed = (auc(scores_a, labels)? - auc(scores_b, labels)?).abs();
    let tol = 1e-12;
    let extreme: usize = (0..n_perm)
        .into_par_iter()
        .map(|rep| {
            let mut rng = seed::stream_rng(seed, rep as u64);
            let mut a = scores_a.to_vec();
            let mut b = scores_b.to_vec();
            for i in 0..a.len() {
                if rng.random::<bool>() {
                    std::mem::swap(&mut a[i], &mut b[i]);
                }
            }
            let d = (auc(&a, labels)? - auc(&b, labels)?).abs();
            Ok((d >= observed - tol) as usize)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok((1 + extreme) as f64 / (1 + n_perm) as f64)
}

/// Named map subset for the ablation table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub name: String,
    pub maps: Vec<String>,
}

impl AblationConfig {
    pub fn new(name: &str, maps: &[&str]) -> Self {
        AblationConfig {
            name: name.to_string(),
            maps: maps.iter().map(|m| m.to_string()).collect(),
        }
    }
}

/// The row set of the comparison: three ADC-only models, F-only, PD-DWI and,
/// when a SER map is available, the ADC_0_800 + SER baseline.
pub fn default_configurations(with_ser: bool) -> Vec<AblationConfig> {
    let mut out = Vec::new();
    if with_ser {
        out.push(AblationConfig::new("Baseline", &[ADC_0_800, "SER"]));
    }
    out.extend([
        AblationConfig::new("ADC_0_100", &[ADC_0_100]),
        AblationConfig::new("ADC_100_800", &[ADC_100_800]),
        AblationConfig::new("ADC_0_800", &[ADC_0_800]),
        AblationConfig::new("F", &[F_MAP]),
        AblationConfig::new("PD-DWI", &[ADC_0_100, F_MAP]),
    ]);
    out
}

/// {T0}, {T0,T1}, {T0,T1,T2}.
pub fn timepoint_prefixes() -> Vec<Vec<TimePoint>> {
    (1..=3).map(|n| TimePoint::ALL[..n].to_vec()).collect()
}

pub fn timepoints_label(tps: &[TimePoint]) -> String {
    tps.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("+")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub timepoints: String,
    /// Mean validation-fold AUC.
    pub auc: f64,
    /// F1 of pooled out-of-fold predictions.
    pub f1: f64,
    /// Kappa of pooled out-of-fold predictions.
    pub kappa: f64,
    pub n: usize,
}

/// Cross-validated metrics for every configuration at every time-point
/// prefix. Folds are shared by all cells.
pub fn ablation_report(
    patients: &[PatientFeatures],
    configurations: &[AblationConfig],
    pipeline: &PipelineConfig,
    k_folds: usize,
    seed: u64,
    threshold: f64,
) -> Result<Vec<AblationRow>> {
    let cells: Vec<(&AblationConfig, Vec<TimePoint>)> = configurations
        .iter()
        .flat_map(|c| timepoint_prefixes().into_iter().map(move |t| (c, t)))
        .collect();
    cells
        .par_iter()
        .map(|(cfg, tps)| {
            let x = assemble(patients, &cfg.maps, tps)?;
            let labels = x.labels()?;
            let folds = stratified_folds(labels, k_folds, seed)?;
            let (oof, aucs) = cross_val_predict(&x, pipeline, &folds)?;
            let c = Confusion::from_scores(&oof, labels, threshold)?;
            Ok(AblationRow {
                config: cfg.name.clone(),
                timepoints: timepoints_label(tps),
                auc: aucs.iter().sum::<f64>() / aucs.len() as f64,
                f1: c.f1(),
                kappa: c.kappa(),
                n: labels.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(s: &[f64], y: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] && !y[j] {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(auc(&[0.3; 5], &[false, true, false, true, true]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1(&[0.9, 0.1], &[true, false], 0.5).unwrap(), 1.0);
        // TP=2, FP=1, FN=1
        let s = [0.9, 0.8, 0.7, 0.2, 0.1];
        let y = [true, true, false, true, false];
        assert!((f1(&s, &y, 0.5).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(f1(&[0.1, 0.2], &[true, false], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn kappa_examples() {
        let c = Confusion { tp: 20, tn: 50, fp: 10, r#fn: 20 };
        // p_o = 0.70, p_e = 0.54
        assert!((c.kappa() - 0.16 / 0.46).abs() < 1e-12);
        assert!((c.kappa() - 0.3478).abs() < 1e-4);
        assert_eq!(cohen_kappa(&[0.9, 0.1, 0.7], &[true, false, true], 0.5).unwrap(), 1.0);
        // independent at matched marginals: 25/25/25/25
        let c = Confusion { tp: 25, tn: 25, fp: 25, r#fn: 25 };
        assert_eq!(c.kappa(), 0.0);
        // all predictions and labels one class: p_e = 1
        let c = Confusion { tp: 0, tn: 10, fp: 0, r#fn: 0 };
        assert_eq!(c.kappa(), 0.0);
    }

    #[test]
    fn permutation_test_examples() {
        let s: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        assert_eq!(paired_permutation_test(&s, &s, &y, 200, 1).unwrap(), 1.0);
        assert!(paired_permutation_test(&s, &s[1..], &y, 200, 1).is_err());
        assert!(paired_permutation_test(&s, &s, &y, 10, 1).is_err());

        let n = 200;
        let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let good: Vec<f64> = (0..n).map(|i| y[i] as u8 as f64 + ((i * 7) % 10) as f64 * 0.05).collect();
        let noise: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let p = paired_permutation_test(&good, &noise, &y, 500, 3).unwrap();
        assert!(p < 0.05, "{p}");
        assert_eq!(p, paired_permutation_test(&good, &noise, &y, 500, 3).unwrap());
    }

    #[test]
    fn prefixes_and_configs() {
        assert_eq!(timepoint_prefixes().len(), 3);
        assert_eq!(timepoints_label(&TimePoint::ALL), "T0+T1+T2");
        assert_eq!(default_configurations(true).len(), 6);
        assert_eq!(default_configurations(false).len(), 5);
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(
            raw in proptest::collection::vec((0u8..20, any::<bool>()), 2..60)
        ) {
            let s: Vec<f64> = raw.iter().map(|r| r.0 as f64 / 4.0).collect();
            let y: Vec<bool> = raw.iter().map(|r| r.1).collect();
            prop_assume!(y.iter().any(|&v| v) && y.iter().any(|&v| !v));
            let a = auc(&s, &y).unwrap();
            prop_assert_eq!(a, brute_auc(&s, &y));
            // monotone transform
            let t: Vec<f64> = s.iter().map(|v| (v * 3.0).exp() - 7.0).collect();
            prop_assert_eq!(auc(&t, &y).unwrap(), a);
            // order permutation
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.reverse();
            let sr: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
            let yr: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
            prop_assert_eq!(auc(&sr, &yr).unwrap(), a);
        }

        #[test]
        fn auc_complement_for_distinct_scores(
            y in proptest::collection::vec(any::<bool>(), 2..40)
        ) {
            prop_assume!(y.iter().any(|&v| v) && y.iter().any(|&v| !v));
            let s: Vec<f64> = (0..y.len()).map(|i| ((i * 7919) % 1009) as f64).collect();
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert!((auc(&s, &y).unwrap() + auc(&neg, &y).unwrap() - 1.0).abs() < 1e-15);
        }

        #[test]
        fn kappa_bounded_by_observed_agreement(tp in 0u64..50, fp in 0u64..50, tn in 0u64..50, fn_ in 0u64..50) {
            let c = Confusion { tp, fp, tn, r#fn: fn_ };
            prop_assume!(c.n() > 0);
            let po = (tp + tn) as f64 / c.n() as f64;
            let k = c.kappa();
            prop_assert!(k <= po + 1e-12);
            prop_assert!((-1.0..=1.0).contains(&k));
            if k == 1.0 { prop_assert_eq!(po, 1.0); }
        }
    }
}
