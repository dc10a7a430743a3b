use nostill::data::{export_csv, ingest_csv, ColumnMap};
use nostill::model::{load_model, model_to_toml};
use nostill::optimize::TrainConfig;
use nostill::pipeline::{run_pipeline, PipelineConfig};
use nostill::selection::{SelectionMethod, SelectionPlan};
use nostill::synthetic::{generate, SyntheticConfig};
use nostill::{Error, KernelFamily};

fn columns() -> ColumnMap {
    ColumnMap {
        station: Some("station".into()),
        ..ColumnMap::default()
    }
}

#[test]
fn csv_pipeline_and_model_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&SyntheticConfig::toy(5)).unwrap();
    let train_path = dir.path().join("train.csv");
    let test_path = dir.path().join("test.csv");
    export_csv(&data.train, &columns(), &train_path).unwrap();
    export_csv(&data.test, &columns(), &test_path).unwrap();
    let train = ingest_csv(&train_path, &columns()).unwrap();
    let test = ingest_csv(&test_path, &columns()).unwrap();
    assert_eq!(train.fingerprint(), data.train.fingerprint());
    assert_eq!(test.fingerprint(), data.test.fingerprint());

    let mut cfg = TrainConfig::new(11);
    cfg.restarts = 1;
    cfg.max_iters = 30;
    let config = PipelineConfig::new(
        KernelFamily::Ch2,
        SelectionPlan::total(SelectionMethod::GreedyEntropy, 3),
        cfg,
        1,
    );
    let out = run_pipeline(&train, &test, &config).unwrap();
    assert!(out.trace.mean_rms.is_finite() && out.stationary_trace.mean_rms.is_finite());

    let model_path = dir.path().join("model.toml");
    std::fs::write(&model_path, model_to_toml(&out.model).unwrap()).unwrap();
    let loaded = load_model(&model_path, &train).unwrap();
    assert_eq!(loaded.params, out.model.params);
    assert_eq!(loaded.log_marginal_likelihood(), out.model.log_marginal_likelihood());
    let points = test.points();
    let a = out.model.predict(&points).unwrap();
    let b = loaded.predict(&points).unwrap();
    assert_eq!(a.mean, b.mean);
    assert_eq!(a.cov, b.cov);

    assert!(matches!(load_model(&model_path, &test), Err(Error::Format(_))));
    assert!(matches!(
        load_model(dir.path().join("absent.toml"), &train),
        Err(Error::Io { .. })
    ));
}

#[test]
fn same_seed_reproduces_the_pipeline() {
    let data = generate(&SyntheticConfig::toy(2)).unwrap();
    let mut cfg = TrainConfig::new(4);
    cfg.restarts = 2;
    cfg.max_iters = 20;
    let config = PipelineConfig::new(
        KernelFamily::Ch1,
        SelectionPlan::total(SelectionMethod::Uniform, 2),
        cfg,
        1,
    );
    let a = run_pipeline(&data.train, &data.test, &config).unwrap();
    let b = run_pipeline(&data.train, &data.test, &config).unwrap();
    assert_eq!(a.latents, b.latents);
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.trace.mean_rms.to_bits(), b.trace.mean_rms.to_bits());
}
