//! Run configuration shared by the `extract`, `train` and `ablate` commands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dwi::{TimePoint, ADC_0_100, F_MAP};
use crate::error::{Error, Result};
use crate::evaluation::AblationConfig;
use crate::io::read_json;
use crate::model::{default_grid, PipelineConfig, TrainConfig};
use crate::radiomics::DiscretizationConfig;

/// `"default"` for the built-in 81-point grid, or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridChoice {
    Named(String),
    List(Vec<PipelineConfig>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub maps: Vec<String>,
    pub timepoints: Vec<TimePoint>,
    pub bin_count: usize,
    pub train: TrainConfig,
    pub k_features: usize,
    pub grid: Option<GridChoice>,
    pub folds: usize,
    /// Single source of randomness: overrides `train.seed` and seeds folds.
    pub seed: u64,
    pub threshold: f64,
    /// Ablation rows; the built-in set when absent.
    pub configurations: Option<Vec<AblationConfig>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            maps: vec![ADC_0_100.to_string(), F_MAP.to_string()],
            timepoints: TimePoint::ALL.to_vec(),
            bin_count: DiscretizationConfig::default().bin_count,
            train: TrainConfig::default(),
            k_features: 100,
            grid: None,
            folds: 5,
            seed: 0,
            threshold: 0.5,
            configurations: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: RunConfig = read_json(path.as_ref())?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.maps.is_empty() {
            return Err(Error::Config("maps must list at least one map".into()));
        }
        if self.timepoints.is_empty() {
            return Err(Error::Config("timepoints must list at least one time point".into()));
        }
        self.discretization().check()?;
        self.train.check()?;
        if self.k_features == 0 {
            return Err(Error::Config("k_features must be >= 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be >= 2, got {}", self.folds)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must be in [0, 1], got {}", self.threshold)));
        }
        if let Some(grid) = self.grid()? {
            for g in &grid {
                g.train.check()?;
                if g.k_features == 0 {
                    return Err(Error::Config("grid k_features must be >= 1".into()));
                }
            }
        }
        if let Some(c) = &self.configurations {
            if c.is_empty() || c.iter().any(|a| a.maps.is_empty()) {
                return Err(Error::Config("ablation configurations must each list maps".into()));
            }
        }
        Ok(())
    }

    pub fn discretization(&self) -> DiscretizationConfig {
        DiscretizationConfig { bin_count: self.bin_count }
    }

    /// The single pipeline used when no grid is given.
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            train: TrainConfig { seed: self.seed, ..self.train.clone() },
            k_features: self.k_features,
        }
    }

    /// Grid with every entry reseeded from the run seed.
    pub fn grid(&self) -> Result<Option<Vec<PipelineConfig>>> {
        let grid = match &self.grid {
            None => return Ok(None),
            Some(GridChoice::Named(n)) if n == "default" => default_grid(&self.train),
            Some(GridChoice::Named(n)) => {
                return Err(Error::Config(format!("unknown grid {n:?}; use \"default\" or a list")))
            }
            Some(GridChoice::List(l)) if l.is_empty() => {
                return Err(Error::Config("grid list is empty".into()))
            }
            Some(GridChoice::List(l)) => l.clone(),
        };
        Ok(Some(
            grid.into_iter()
                .map(|mut g| {
                    g.train.seed = self.seed;
                    g
                })
                .collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_json() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 9, "grid": "default"}"#).unwrap();
        c.check().unwrap();
        assert_eq!(c.maps, vec!["ADC_0_100", "F"]);
        assert_eq!(c.folds, 5);
        let g = c.grid().unwrap().unwrap();
        assert_eq!(g.len(), 81);
        assert!(g.iter().all(|p| p.train.seed == 9));
        assert_eq!(c.pipeline().train.seed, 9);
    }

    #[test]
    fn invalid_configs_rejected() {
        for body in [
            r#"{"maps": []}"#,
            r#"{"folds": 1}"#,
            r#"{"bin_count": 1}"#,
            r#"{"grid": "nope"}"#,
            r#"{"grid": []}"#,
            r#"{"train": {"learning_rate": 0}}"#,
            r#"{"threshold": 2}"#,
        ] {
            let c: RunConfig = serde_json::from_str(body).unwrap();
            assert!(c.check().is_err(), "{body}");
        }
        assert!(serde_json::from_str::<RunConfig>(r#"{"mapz": []}"#).is_err());
    }

    #[test]
    fn explicit_grid_list() {
        let c: RunConfig =
            serde_json::from_str(r#"{"grid": [{"k_features": 5, "train": {"max_depth": 2}}]}"#).unwrap();
        c.check().unwrap();
        let g = c.grid().unwrap().unwrap();
        assert_eq!(g[0].k_features, 5);
        assert_eq!(g[0].train.max_depth, 2);
        assert_eq!(g[0].train.n_rounds, 200);
    }
}
