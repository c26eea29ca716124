use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gbt::{predict_proba, train, GbtEnsemble, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::auc;
use crate::features::{class_counts, fit_selection, FeatureMatrix, SelectionReport};
use crate::seed;

/// One grid point: booster settings plus the number of ANOVA-selected
/// features fed to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub k_features: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            k_features: 100,
        }
    }
}

/// min_child_weight {1,3,5} × max_depth {2,3,4} × subsample {0.6,0.8,1.0}
/// × k {50,100,150}, other settings taken from `base`.
pub fn default_grid(base: &TrainConfig) -> Vec<PipelineConfig> {
    let mut grid = Vec::new();
    for &k in &[50, 100, 150] {
        for &mcw in &[1.0, 3.0, 5.0] {
            for &depth in &[2, 3, 4] {
                for &sub in &[0.6, 0.8, 1.0] {
                    grid.push(PipelineConfig {
                        train: TrainConfig {
                            min_child_weight: mcw,
                            max_depth: depth,
                            subsample: sub,
                            ..base.clone()
                        },
                        k_features: k,
                    });
                }
            }
        }
    }
    grid
}

/// Selection and model fitted together on one training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub selection: SelectionReport,
    pub model: GbtEnsemble,
}

impl FittedPipeline {
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        predict_proba(&self.model, x)
    }
}

pub fn fit_pipeline(x: &FeatureMatrix, cfg: &PipelineConfig) -> Result<FittedPipeline> {
    let selection = fit_selection(x, cfg.k_features)?;
    let model = train(&x.apply_selection(&selection)?, &cfg.train)?;
    Ok(FittedPipeline { selection, model })
}

/// Validation row indices for each of `k` stratified folds. Each class is
/// shuffled with the seed and dealt round-robin.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("k_folds must be >= 2, got {k}")));
    }
    let (neg, pos) = class_counts(labels);
    if neg < k || pos < k {
        return Err(Error::SingleClass {
            negatives: neg,
            positives: pos,
        });
    }
    let mut rng = seed::rng(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut member = vec![false; n];
    for &i in fold {
        member[i] = true;
    }
    (0..n).filter(|&i| !member[i]).collect()
}

/// Out-of-fold probabilities and per-fold validation AUC. Selection is
/// refitted inside every training fold.
pub fn cross_val_predict(
    x: &FeatureMatrix,
    cfg: &PipelineConfig,
    folds: &[Vec<usize>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let labels = x.labels()?;
    let mut oof = vec![f64::NAN; x.n_rows()];
    let mut aucs = Vec::with_capacity(folds.len());
    for fold in folds {
        let train_rows = complement(x.n_rows(), fold);
        let fitted = fit_pipeline(&x.rows(&train_rows), cfg)?;
        let val = x.rows(fold);
        let p = fitted.predict(&val)?;
        let val_labels: Vec<bool> = fold.iter().map(|&i| labels[i]).collect();
        aucs.push(auc(&p, &val_labels)?);
        for (&i, v) in fold.iter().zip(p) {
            oof[i] = v;
        }
    }
    Ok((oof, aucs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigScore {
    pub config: PipelineConfig,
    pub mean_auc: f64,
    pub fold_aucs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best_index: usize,
    pub best: PipelineConfig,
    pub k_folds: usize,
    pub seed: u64,
    pub scores: Vec<ConfigScore>,
}

/// Grid search by mean validation AUC over stratified folds. Ties go to the
/// earliest grid entry.
pub fn cross_validate(
    x: &FeatureMatrix,
    grid: &[PipelineConfig],
    k_folds: usize,
    seed: u64,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::Config("hyper-parameter grid is empty".into()));
    }
    let folds = stratified_folds(x.labels()?, k_folds, seed)?;
    let scores: Vec<ConfigScore> = grid
        .par_iter()
        .map(|cfg| {
            let (_, fold_aucs) = cross_val_predict(x, cfg, &folds)?;
            let mean_auc = fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64;
            Ok(ConfigScore {
                config: cfg.clone(),
                mean_auc,
                fold_aucs,
            })
        })
        .collect::<Result<_>>()?;
    let mut best_index = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.mean_auc > scores[best_index].mean_auc {
            best_index = i;
        }
    }
    Ok(CvResult {
        best_index,
        best: scores[best_index].config.clone(),
        k_folds,
        seed,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy(n: usize) -> FeatureMatrix {
        let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let values: Vec<f64> = (0..n)
            .flat_map(|i| {
                let y = labels[i] as u8 as f64;
                [y + ((i * 13) % 7) as f64 * 0.2, ((i * 29) % 11) as f64]
            })
            .collect();
        FeatureMatrix::new(
            vec!["a".into(), "b".into()],
            (0..n).map(|i| format!("P{i}")).collect(),
            Array2::from_shape_vec((n, 2), values).unwrap(),
            Some(labels),
        )
        .unwrap()
    }

    #[test]
    fn folds_are_stratified_partition() {
        let labels: Vec<bool> = (0..50).map(|i| i % 10 < 3).collect();
        let folds = stratified_folds(&labels, 5, 1).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.len(), 10);
            assert_eq!(f.iter().filter(|&&i| labels[i]).count(), 3);
        }
        assert_eq!(folds, stratified_folds(&labels, 5, 1).unwrap());
        assert!(stratified_folds(&labels, 1, 1).is_err());
        assert!(stratified_folds(&labels[..8], 5, 1).is_err());
    }

    #[test]
    fn single_and_duplicate_grid() {
        let x = toy(30);
        let cfg = PipelineConfig {
            train: TrainConfig { n_rounds: 10, ..Default::default() },
            k_features: 2,
        };
        let r = cross_validate(&x, std::slice::from_ref(&cfg), 3, 4).unwrap();
        assert_eq!(r.best, cfg);
        let r = cross_validate(&x, &[cfg.clone(), cfg.clone()], 3, 4).unwrap();
        assert_eq!(r.best_index, 0);
        assert_eq!(r.scores[0].mean_auc, r.scores[1].mean_auc);
    }

    #[test]
    fn default_grid_shape() {
        let g = default_grid(&TrainConfig::default());
        assert_eq!(g.len(), 81);
        assert!(g.iter().all(|c| c.train.n_rounds == 200 && c.train.learning_rate == 0.1));
    }

    #[test]
    fn oof_predictions_cover_every_row() {
        let x = toy(30);
        let folds = stratified_folds(x.labels().unwrap(), 3, 0).unwrap();
        let cfg = PipelineConfig {
            train: TrainConfig { n_rounds: 5, ..Default::default() },
            k_features: 1,
        };
        let (oof, aucs) = cross_val_predict(&x, &cfg, &folds).unwrap();
        assert!(oof.iter().all(|p| p.is_finite()));
        assert_eq!(aucs.len(), 3);
    }
}
