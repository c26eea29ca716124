use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use pddwi_core::clinical::ClinicalEncoder;
use pddwi_core::decomposition::decompose_study;
use pddwi_core::dwi::TimePoint;
use pddwi_core::evaluation::{ablation_report, default_configurations, AblationRow, MetricsReport};
use pddwi_core::features::assemble;
use pddwi_core::io::{
    self, load_inputs, read_features_csv, read_json, read_labels_csv, read_predictions_csv, write_ablation_csv, write_cohort,
    write_features_csv, write_json, write_labels_csv, write_maps, write_predictions_csv, CohortManifest, Prediction,
    RunConfig,
};
use pddwi_core::model::{cross_validate, fit_pipeline, predict_proba, GbtEnsemble};
use pddwi_core::phantom::{generate_cohort, CohortSpec};
use pddwi_core::pipeline::{extract_cohort, extract_patient};
use pddwi_core::{Error, Result};
use serde::Serialize;

use crate::svg;
use crate::Command;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Phantom { spec, out } => phantom(&spec, &out),
        Command::Decompose { manifest, out } => decompose(&manifest, &out),
        Command::Extract {
            manifest,
            config,
            out,
            encoder,
            save_encoder,
        } => extract(&manifest, &config, &out, encoder.as_deref(), save_encoder.as_deref()),
        Command::Train { features, config, out } => train(&features, &config, &out),
        Command::Predict { model, features, out } => predict(&model, &features, &out),
        Command::Evaluate {
            preds,
            labels,
            out,
            threshold,
        } => evaluate(&preds, &labels, &out, threshold),
        Command::Ablate { manifest, config, out } => ablate(&manifest, &config, &out),
        Command::PlotDecay {
            manifest,
            patient,
            timepoint,
            out,
        } => plot_decay(&manifest, &patient, timepoint, &out),
    }
}

/// `dir/model.json` → `dir/model.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn phantom(spec: &Path, out: &Path) -> Result<()> {
    let spec: CohortSpec = read_json(spec)?;
    let cohort = generate_cohort(&spec)?;
    let rows: Vec<_> = cohort
        .iter()
        .map(|p| (Some(p.label), p.studies.clone(), p.clinical.clone()))
        .collect();
    write_cohort(out, &rows)?;
    let ids: Vec<String> = cohort.iter().map(|p| p.id.clone()).collect();
    let labels: Vec<bool> = cohort.iter().map(|p| p.label).collect();
    write_labels_csv(out.join("labels.csv"), &ids, &labels)?;
    info!("wrote {} patients to {}", cohort.len(), out.display());
    Ok(())
}

fn decompose(manifest: &Path, out: &Path) -> Result<()> {
    let m = CohortManifest::load(manifest)?;
    let mut index: BTreeMap<String, BTreeMap<TimePoint, BTreeMap<String, PathBuf>>> = BTreeMap::new();
    for p in &m.patients {
        for &tp in p.timepoints.keys() {
            let study = m.load_study(p, tp)?;
            let maps = decompose_study(&study)?;
            let written = write_maps(out, &p.id, tp, &maps)?;
            let entry = index.entry(p.id.clone()).or_default().entry(tp).or_default();
            for (name, path) in maps.keys().zip(written) {
                entry.insert(name.clone(), path);
            }
        }
    }
    write_json(&out.join("maps.json"), &index)
}

fn extract(
    manifest: &Path,
    config: &Path,
    out: &Path,
    encoder: Option<&Path>,
    save_encoder: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let m = CohortManifest::load(manifest)?;
    let inputs = load_inputs(&m)?;
    let disc = cfg.discretization();
    let (enc, patients) = match encoder {
        Some(path) => {
            let enc: ClinicalEncoder = read_json(path)?;
            let patients = inputs
                .iter()
                .map(|p| extract_patient(p, &enc, &disc))
                .collect::<Result<Vec<_>>>()?;
            (enc, patients)
        }
        None => extract_cohort(&inputs, &disc)?,
    };
    let x = assemble(&patients, &cfg.maps, &cfg.timepoints)?;
    write_features_csv(out, &x)?;
    if let Some(path) = save_encoder {
        write_json(path, &enc)?;
    }
    Ok(())
}

fn train(features: &Path, config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let x = read_features_csv(features)?;
    if x.labels.is_none() {
        return Err(Error::Table {
            path: features.to_path_buf(),
            row: 0,
            column: "pcr".into(),
            message: "training needs a label column".into(),
        });
    }
    let chosen = match cfg.grid()? {
        Some(grid) => {
            let cv = cross_validate(&x, &grid, cfg.folds, cfg.seed)?;
            write_json(&sibling(out, "cv.json"), &cv)?;
            cv.best
        }
        None => cfg.pipeline(),
    };
    let fitted = fit_pipeline(&x, &chosen)?;
    write_json(&sibling(out, "selection.json"), &fitted.selection)?;
    write_json(out, &fitted.model)
}

fn predict(model: &Path, features: &Path, out: &Path) -> Result<()> {
    let model: GbtEnsemble = read_json(model)?;
    model.check()?;
    let x = read_features_csv(features)?;
    let p = predict_proba(&model, &x)?;
    let preds: Vec<Prediction> = x
        .ids
        .iter()
        .zip(p)
        .map(|(id, probability)| Prediction {
            patient_id: id.clone(),
            probability,
        })
        .collect();
    write_predictions_csv(out, &preds)
}

fn evaluate(preds: &Path, labels: &Path, out: &Path, threshold: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold must be in [0, 1], got {threshold}")));
    }
    let preds = read_predictions_csv(preds)?;
    let labels: BTreeMap<String, bool> = read_labels_csv(labels)?.into_iter().collect();
    let mut scores = Vec::with_capacity(preds.len());
    let mut y = Vec::with_capacity(preds.len());
    for p in &preds {
        let l = labels.get(&p.patient_id).ok_or_else(|| {
            Error::InvalidArgument(format!("no label for patient {}", p.patient_id))
        })?;
        scores.push(p.probability);
        y.push(*l);
    }
    let report = MetricsReport::compute(&scores, &y, threshold)?;
    write_json(out, &report)
}

#[derive(Serialize)]
struct AblationOutput<'a> {
    folds: usize,
    seed: u64,
    threshold: f64,
    rows: &'a [AblationRow],
}

fn ablate(manifest: &Path, config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let m = CohortManifest::load(manifest)?;
    let inputs = load_inputs(&m)?;
    let with_ser = inputs
        .iter()
        .all(|p| p.studies.iter().all(|s| p.extra_maps.contains_key(&(s.time_point, "SER".to_string()))));
    let configurations = cfg
        .configurations
        .clone()
        .unwrap_or_else(|| default_configurations(with_ser));
    let (_, patients) = extract_cohort(&inputs, &cfg.discretization())?;
    let rows = ablation_report(&patients, &configurations, &cfg.pipeline(), cfg.folds, cfg.seed, cfg.threshold)?;

    write_ablation_csv(out, &rows)?;
    write_json(
        &sibling(out, "json"),
        &AblationOutput {
            folds: cfg.folds,
            seed: cfg.seed,
            threshold: cfg.threshold,
            rows: &rows,
        },
    )
}

fn plot_decay(manifest: &Path, patient: &str, tp: TimePoint, out: &Path) -> Result<()> {
    let m = CohortManifest::load(manifest)?;
    let p = m.patient(patient)?;
    let study = m.load_study(p, tp)?;
    let doc = svg::decay_plot(&study)?;
    io::atomic_write(out, doc.as_bytes())
}
