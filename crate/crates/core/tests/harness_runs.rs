use replab_core::harness::{
    best_of_set, characteristics_csv, run_on, sweep, sweep_csv, trials_csv, write_run, DataSource, DatasetSpec,
    ExperimentConfig, MeanStd, Method, Preset, RegularizerChoice, RunReport, SweepAxis, SweepSpec,
};
use replab_core::data::PcaMode;
use replab_core::{Error, RegKind, SplitSpec};
use serde_json::json;

fn tiny_config() -> ExperimentConfig {
    let mut cfg = Preset::Desk.config();
    cfg.name = "tiny".into();
    cfg.dataset = DatasetSpec {
        source: DataSource::Synthetic {
            d: 4,
            classes: 3,
            samples: 300,
            ambient_dim: 20,
            seed: 7,
        },
        pca_k: None,
        pca_mode: PcaMode::Reconstruct,
        split: SplitSpec {
            train_n: 200,
            val_n: 50,
            test_n: 0,
            seed: 1,
        },
        merge_validation: false,
    };
    cfg.architecture.hidden = vec![16, 16];
    cfg.optimizer = replab_core::OptimizerConfig::adam(1e-3);
    cfg.epochs = 3;
    cfg.batch = 50;
    cfg.trials = 2;
    cfg.capture_layers = vec![1, 2];
    cfg
}

fn report(method: Method, val: f64, std: f64) -> RunReport {
    RunReport {
        name: method.to_string(),
        method,
        loss_weight: 0.0,
        trials: Vec::new(),
        val_error: MeanStd { mean: val, std },
        test_error: MeanStd { mean: val, std },
    }
}

#[test]
fn identical_config_gives_identical_bytes() {
    let cfg = tiny_config();
    let splits = cfg.dataset.load(std::path::Path::new(".")).unwrap();
    let a = run_on(&cfg, &splits).unwrap();
    let b = run_on(&cfg, &splits).unwrap();
    assert_eq!(characteristics_csv(&a.report), characteristics_csv(&b.report));
    assert_eq!(trials_csv(&a.report), trials_csv(&b.report));
    assert_eq!(a.report.trials.len(), 2);
    assert_ne!(a.report.trials[0].seed, a.report.trials[1].seed);

    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let mut cfg = cfg;
    cfg.checkpoints = true;
    write_run(&a, &cfg, d1.path()).unwrap();
    // A different pool size must not change any byte.
    let c = replab_core::harness::with_workers(1, || run_on(&cfg, &splits)).unwrap().unwrap();
    write_run(&c, &cfg, d2.path()).unwrap();
    for f in ["config.json", "trials.csv", "characteristics.csv", "history.csv", "summary.txt", "checkpoints/trial_1.rlnn"] {
        assert_eq!(
            std::fs::read(d1.path().join(f)).unwrap(),
            std::fs::read(d2.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn untrained_network_is_near_chance() {
    let mut cfg = tiny_config();
    cfg.epochs = 0;
    cfg.trials = 1;
    cfg.dataset.source = DataSource::Synthetic {
        d: 4,
        classes: 10,
        samples: 2000,
        ambient_dim: 20,
        seed: 3,
    };
    cfg.dataset.split = SplitSpec {
        train_n: 1000,
        val_n: 0,
        test_n: 0,
        seed: 0,
    };
    let splits = cfg.dataset.load(std::path::Path::new(".")).unwrap();
    let out = run_on(&cfg, &splits).unwrap();
    let err = out.report.test_error.mean;
    assert!((75.0..=100.0).contains(&err), "untrained error {err}");
    assert!(out.report.trials[0].history.is_empty());
}

#[test]
fn best_of_set_rules() {
    let only = best_of_set(&[report(Method::Baseline, 2.85, 0.1)]).unwrap();
    assert_eq!(only.method, Method::Baseline);
    assert_eq!(only.improvement, Some(0.0));

    let s = best_of_set(&[report(Method::Baseline, 2.85, 0.1), report(Method::Penalty(RegKind::L1R), 2.35, 0.1)]).unwrap();
    assert_eq!(s.method, Method::Penalty(RegKind::L1R));
    assert!((s.improvement.unwrap() - 0.50).abs() < 1e-12);

    let s = best_of_set(&[
        report(Method::Baseline, 3.0, 0.1),
        report(Method::Penalty(RegKind::CR), 2.5, 0.3),
        report(Method::Penalty(RegKind::VR), 2.5, 0.2),
    ])
    .unwrap();
    assert_eq!(s.method, Method::Penalty(RegKind::VR));

    let s = best_of_set(&[report(Method::Penalty(RegKind::VR), 2.5, 0.2), report(Method::Penalty(RegKind::CR), 2.5, 0.2)]).unwrap();
    assert_eq!(s.method, Method::Penalty(RegKind::CR));
    assert_eq!(s.improvement, None);
    assert!(best_of_set(&[]).is_none());
}

#[test]
fn single_value_sweep_matches_run() {
    let mut base = tiny_config();
    base.trials = 1;
    base.regularizer = RegularizerChoice::new(Method::Penalty(RegKind::L1R), 0.01);
    base.regularizer.target_layer = 2;
    let spec = SweepSpec {
        base: base.clone(),
        axis: SweepAxis::LossWeight,
        values: vec![json!(0.01)],
        d_values: vec![],
        regularizers: vec![],
    };
    let rows = sweep(&spec, std::path::Path::new(".")).unwrap();
    assert_eq!(rows.len(), 1);
    let swept = rows[0].outcome.as_ref().unwrap();
    let splits = base.dataset.load(std::path::Path::new(".")).unwrap();
    let direct = run_on(&base, &splits).unwrap().report;
    assert_eq!(swept.trials, direct.trials);
    assert_eq!(swept.test_error, direct.test_error);
}

#[test]
fn sweep_records_failures_and_continues() {
    let mut base = tiny_config();
    base.trials = 1;
    base.epochs = 2;
    base.regularizer = RegularizerChoice::new(Method::Penalty(RegKind::VR), 0.0);
    base.regularizer.target_layer = 2;
    base.optimizer = replab_core::OptimizerConfig::momentum(1e-3, 0.9);
    let spec = SweepSpec {
        base,
        axis: SweepAxis::LossWeight,
        values: vec![json!(0.0), json!(1e300)],
        d_values: vec![3, 4],
        regularizers: vec![],
    };
    let rows = sweep(&spec, std::path::Path::new(".")).unwrap();
    assert_eq!(rows.len(), 4);
    let csv = sweep_csv(SweepAxis::LossWeight, &rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    let ncols = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == ncols));
    assert!(rows[0].outcome.is_ok() && rows[2].outcome.is_ok());
    assert!(rows[1].outcome.is_err(), "huge weight should diverge");
    assert!(lines[2].contains(",true,") && lines[2].contains("diverged"));
    assert_eq!(rows[0].point.d, Some(3));
    assert_eq!(rows[2].point.d, Some(4));
}

#[test]
fn bad_sweeps_are_config_errors() {
    let base = tiny_config();
    let mk = |axis, values| SweepSpec {
        base: base.clone(),
        axis,
        values,
        d_values: vec![],
        regularizers: vec![],
    };
    assert!(matches!(mk(SweepAxis::LossWeight, vec![]).points(), Err(Error::Config(_))));
    assert!(matches!(mk(SweepAxis::LayerWidth, vec![json!("wide")]).points(), Err(Error::Config(_))));
    assert!(matches!(mk(SweepAxis::Optimizer, vec![json!("sgd")]).points(), Err(Error::Config(_))));
    let pts = mk(SweepAxis::Optimizer, vec![json!("rmsprop"), json!("momentum")]).points().unwrap();
    assert_eq!(pts[0].value, "rmsprop");
    let pts = mk(SweepAxis::PcaK, vec![json!(2)]).points().unwrap();
    assert_eq!(pts[0].config.dataset.pca_k, Some(2));
    let spec_json = serde_json::to_string(&mk(SweepAxis::DataSize, vec![json!(100)])).unwrap();
    let back = SweepSpec::from_json(&spec_json).unwrap();
    assert_eq!(back.points().unwrap()[0].config.dataset.split.train_n, 100);
}
