//! Second-order gradient-boosted trees with logistic loss and
//! class-imbalance instance weights, plus stratified K-fold tuning.

mod cv;
mod gbt;

pub use cv::{
    cross_val_predict, cross_validate, default_grid, fit_pipeline, stratified_folds, ConfigScore,
    CvResult, FittedPipeline, PipelineConfig,
};
pub use gbt::{
    compute_scale_pos_weight, logistic_grad_hess, predict_proba, sigmoid, train,
    training_loss_curve, weighted_logloss, GbtEnsemble, Node, TrainConfig, Tree, MODEL_FORMAT,
};
