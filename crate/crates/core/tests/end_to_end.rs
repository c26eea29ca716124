use pddwi_core::dwi::{TimePoint, ADC_0_100, ADC_0_800, F_MAP};
use pddwi_core::evaluation::{auc, MetricsReport};
use pddwi_core::features::assemble;
use pddwi_core::io::{load_inputs, read_features_csv, write_cohort, write_features_csv, CohortManifest};
use pddwi_core::model::{fit_pipeline, predict_proba, GbtEnsemble, PipelineConfig, TrainConfig};
use pddwi_core::phantom::{generate_cohort, CohortSpec, Range};
use pddwi_core::pipeline::{extract_cohort, PatientInput};
use pddwi_core::radiomics::DiscretizationConfig;

fn small_spec(n: usize, seed: u64) -> CohortSpec {
    CohortSpec {
        n_patients: n,
        dims: [5, 10, 10],
        radius: Range::new(2.0, 4.0),
        seed,
        ..CohortSpec::default()
    }
}

fn quick() -> PipelineConfig {
    PipelineConfig {
        train: TrainConfig {
            n_rounds: 40,
            ..TrainConfig::default()
        },
        k_features: 40,
    }
}

#[test]
fn disk_round_trip_preserves_features() {
    let cohort = generate_cohort(&small_spec(12, 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<_> = cohort
        .iter()
        .map(|p| (Some(p.label), p.studies.clone(), p.clinical.clone()))
        .collect();
    write_cohort(dir.path(), &rows).unwrap();
    let manifest = CohortManifest::load(dir.path().join("manifest.json")).unwrap();
    let from_disk = load_inputs(&manifest).unwrap();
    let in_memory: Vec<PatientInput> = cohort.iter().map(PatientInput::from).collect();

    let cfg = DiscretizationConfig::default();
    let maps = vec![ADC_0_100.to_string(), F_MAP.to_string()];
    let (_, a) = extract_cohort(&from_disk, &cfg).unwrap();
    let (_, b) = extract_cohort(&in_memory, &cfg).unwrap();
    let xa = assemble(&a, &maps, &TimePoint::ALL).unwrap();
    let xb = assemble(&b, &maps, &TimePoint::ALL).unwrap();
    assert_eq!(xa.columns, xb.columns);
    assert_eq!(xa.labels, xb.labels);
    // signals pass through float32 on disk
    for (u, v) in xa.values.iter().zip(xb.values.iter()) {
        assert!((u - v).abs() <= 1e-3 * v.abs().max(1e-6), "{u} vs {v}");
    }

    let csv = dir.path().join("features.csv");
    write_features_csv(&csv, &xa).unwrap();
    let back = read_features_csv(&csv).unwrap();
    assert_eq!(back, xa);
}

#[test]
fn model_generalises_to_a_fresh_cohort() {
    let maps = vec![ADC_0_100.to_string(), F_MAP.to_string()];
    let cfg = DiscretizationConfig::default();
    let build = |seed| {
        let inputs: Vec<PatientInput> = generate_cohort(&small_spec(60, seed)).unwrap().iter().map(PatientInput::from).collect();
        let (_, pf) = extract_cohort(&inputs, &cfg).unwrap();
        assemble(&pf, &maps, &TimePoint::ALL).unwrap()
    };
    let train_x = build(1);
    let test_x = build(2);
    let fitted = fit_pipeline(&train_x, &quick()).unwrap();

    let json = serde_json::to_string(&fitted.model).unwrap();
    let model: GbtEnsemble = serde_json::from_str(&json).unwrap();
    assert_eq!(model, fitted.model);

    let p = predict_proba(&model, &test_x).unwrap();
    assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    let report = MetricsReport::compute(&p, test_x.labels().unwrap(), 0.5).unwrap();
    assert!(report.auc > 0.8, "held-out AUC {}", report.auc);
}

#[test]
fn aggregate_adc_alone_is_weaker_than_decomposed_maps() {
    let cfg = DiscretizationConfig::default();
    let inputs: Vec<PatientInput> = generate_cohort(&small_spec(60, 4)).unwrap().iter().map(PatientInput::from).collect();
    let (_, pf) = extract_cohort(&inputs, &cfg).unwrap();
    let test_inputs: Vec<PatientInput> = generate_cohort(&small_spec(60, 8)).unwrap().iter().map(PatientInput::from).collect();
    let (_, test_pf) = extract_cohort(&test_inputs, &cfg).unwrap();

    let score = |maps: &[&str]| {
        let maps: Vec<String> = maps.iter().map(|s| s.to_string()).collect();
        let x = assemble(&pf, &maps, &TimePoint::ALL).unwrap();
        let t = assemble(&test_pf, &maps, &TimePoint::ALL).unwrap();
        let fitted = fit_pipeline(&x, &quick()).unwrap();
        auc(&fitted.predict(&t).unwrap(), t.labels().unwrap()).unwrap()
    };
    let pd = score(&[ADC_0_100, F_MAP]);
    let aggregate = score(&[ADC_0_800]);
    assert!(pd > aggregate, "PD-DWI {pd} vs ADC_0_800 {aggregate}");
}
