mod common;

use std::fs;
use std::path::Path;

use automr_core::tune::{
    apply_config, default_space, drive, export_best, incumbent, read_store, run_manual_grid,
    run_study, suggest, Config, DimKind, Dimension, Observation, ParamSpace, ParamValue,
    RunConfig, StudyOptions, SuggestOptions, SuggestionKind, TrialResult, TrialStatus, TuneError,
};
use common::{tiny_dataset, tiny_model_config, tiny_train_config};
use proptest::prelude::*;

fn lr_space() -> ParamSpace {
    ParamSpace::new(vec![Dimension::new(
        "learning_rate",
        DimKind::ContinuousLog { low: 1e-5, high: 1e-1 },
    )])
    .unwrap()
}

fn log_quadratic(c: &Config) -> f64 {
    let lr = c["learning_rate"].as_f64().unwrap();
    -(lr.log10() + 3.0).powi(2)
}

fn analytic_study(
    store: &Path,
    n_trials: usize,
    seed: u64,
) -> Result<automr_core::tune::StudyOutcome, TuneError> {
    let space = lr_space();
    let opts = StudyOptions::new(store, n_trials, 1, seed);
    let so = SuggestOptions::default();
    drive(
        &space,
        &opts,
        |_, h| suggest(h, &space, seed, &so).0,
        |_, c| {
            let (model, train) =
                apply_config(c, &tiny_model_config(), &tiny_train_config(2, seed)).unwrap();
            TrialResult {
                model: Some(model),
                train: Some(train),
                ..TrialResult::ok(log_quadratic(c), 1)
            }
        },
    )
}

fn dimension_strategy(i: usize) -> impl Strategy<Value = Dimension> {
    let name = format!("d{i}");
    prop_oneof![
        (1e-6f64..1.0, 1.0f64..1e3).prop_map(|(low, high)| DimKind::ContinuousLog { low, high }),
        (-10.0f64..0.0, 0.0f64..10.0)
            .prop_map(|(low, high)| DimKind::ContinuousLinear { low, high }),
        (-5i64..5, 0i64..10).prop_map(|(low, span)| DimKind::Integer { low, high: low + span }),
        prop::collection::vec(0i64..1000, 1..5).prop_map(|mut v| {
            v.sort_unstable();
            v.dedup();
            DimKind::Categorical { choices: v.into_iter().map(ParamValue::Int).collect() }
        }),
    ]
    .prop_map(move |kind| Dimension::new(&name, kind))
}

fn space_strategy() -> impl Strategy<Value = ParamSpace> {
    (1usize..5)
        .prop_flat_map(|n| (0..n).map(dimension_strategy).collect::<Vec<_>>())
        .prop_map(|dims| ParamSpace::new(dims).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_configs_round_trip_through_the_codec(
        u in prop::collection::vec(0.0f64..=1.0, 8),
    ) {
        let space = default_space();
        let config = space.from_unit(&u);
        prop_assert!(space.contains(&config));
        prop_assert_eq!(space.decode(&space.encode(&config)), config);
    }

    #[test]
    fn suggestions_stay_in_space(
        space in space_strategy(),
        n in 0usize..14,
        seed in any::<u64>(),
    ) {
        let opts = SuggestOptions { candidates: 40, ..Default::default() };
        let mut history = Vec::new();
        for i in 0..n {
            let (config, _) = suggest(&history, &space, seed, &opts);
            prop_assert!(space.contains(&config), "suggestion {i} out of space: {config:?}");
            history.push(Observation { config, objective: ((i * 7) % 5) as f64 });
        }
        let (config, _) = suggest(&history, &space, seed, &opts);
        prop_assert!(space.contains(&config));
    }
}

#[test]
fn suggestions_are_deterministic() {
    let space = default_space();
    let opts = SuggestOptions::default();
    let mut history = Vec::new();
    for i in 0..12 {
        let (a, ka) = suggest(&history, &space, 42, &opts);
        let (b, kb) = suggest(&history, &space, 42, &opts);
        assert_eq!(a, b);
        assert_eq!(ka, kb);
        history.push(Observation { config: a, objective: (i as f64).sin() });
    }
    let (other, _) = suggest(&history, &space, 43, &opts);
    assert_ne!(other, suggest(&history, &space, 42, &opts).0);
}

#[test]
fn suggestion_schedule_follows_the_initial_design_then_interleaves_random() {
    let space = lr_space();
    let opts = SuggestOptions::default();
    let mut history = Vec::new();
    let mut kinds = Vec::new();
    for _ in 0..20 {
        let (config, kind) = suggest(&history, &space, 0, &opts);
        kinds.push(kind);
        let objective = log_quadratic(&config);
        history.push(Observation { config, objective });
    }
    assert!(kinds[..8].iter().all(|k| *k == SuggestionKind::Initial));
    let after: Vec<_> = kinds[8..].to_vec();
    assert!(after[..5].iter().all(|k| *k == SuggestionKind::Model));
    assert_eq!(after[5], SuggestionKind::Random);
    assert!(after[6..11].iter().all(|k| *k == SuggestionKind::Model));
    assert_eq!(after[11], SuggestionKind::Random);
}

#[test]
fn single_point_space_returns_its_point() {
    let space = ParamSpace::new(vec![
        Dimension::new("a", DimKind::Integer { low: 3, high: 3 }),
        Dimension::new("b", DimKind::Categorical { choices: vec![ParamValue::Text("x".into())] }),
    ])
    .unwrap();
    let (config, kind) = suggest(&[], &space, 0, &SuggestOptions::default());
    assert_eq!(kind, SuggestionKind::SinglePoint);
    assert_eq!(config["a"], ParamValue::Int(3));
    assert_eq!(config["b"], ParamValue::Text("x".into()));
}

#[test]
fn one_trial_study_has_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("study.ndjson");
    let out = analytic_study(&store, 1, 0).unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.best, out.records[0]);
    assert_eq!(read_store(&store, None).unwrap(), out.records);
}

#[test]
fn resumed_study_continues_without_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("study.ndjson");
    let partial = analytic_study(&store, 4, 9).unwrap();
    let resumed = analytic_study(&store, 10, 9).unwrap();
    let indices: Vec<usize> = resumed.records.iter().map(|r| r.trial).collect();
    assert_eq!(indices, (0..10).collect::<Vec<_>>());
    assert_eq!(resumed.records[..4], partial.records[..]);

    let straight_store = dir.path().join("straight.ndjson");
    let straight = analytic_study(&straight_store, 10, 9).unwrap();
    let configs = |o: &automr_core::tune::StudyOutcome| {
        o.records.iter().map(|r| r.config.clone()).collect::<Vec<_>>()
    };
    assert_eq!(configs(&resumed), configs(&straight));
}

#[test]
fn corrupt_store_is_refused_until_fresh() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("study.ndjson");
    analytic_study(&store, 3, 1).unwrap();
    let mut text = fs::read_to_string(&store).unwrap();
    text.push_str("{\"trial\": 3, \"conf");
    fs::write(&store, &text).unwrap();
    let err = analytic_study(&store, 5, 1).unwrap_err();
    assert!(matches!(err, TuneError::CorruptStore { .. }), "{err}");
    assert!(err.to_string().contains("--fresh"));

    let space = lr_space();
    let mut opts = StudyOptions::new(&store, 2, 1, 1);
    opts.fresh = true;
    let out = drive(&space, &opts, |_, h| suggest(h, &space, 1, &opts.suggest).0, |_, c| {
        TrialResult::ok(log_quadratic(c), 1)
    })
    .unwrap();
    assert_eq!(out.records.len(), 2);
}

#[test]
fn duplicated_trial_indices_are_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("study.ndjson");
    analytic_study(&store, 2, 1).unwrap();
    let text = fs::read_to_string(&store).unwrap();
    let first = text.lines().next().unwrap();
    fs::write(&store, format!("{text}{first}\n")).unwrap();
    assert!(matches!(read_store(&store, None), Err(TuneError::CorruptStore { line: 3, .. })));
}

#[test]
fn incumbent_is_monotone_and_export_matches_the_maximum() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("study.ndjson");
    let out = analytic_study(&store, 15, 4).unwrap();
    let mut best_so_far = f64::NEG_INFINITY;
    for k in 1..=out.records.len() {
        let b = incumbent(&out.records[..k]).unwrap().objective.unwrap();
        assert!(b >= best_so_far);
        best_so_far = b;
    }
    let max = out.records.iter().filter_map(|r| r.objective).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best_so_far, max);

    let path = dir.path().join("best.json");
    let exported = export_best(&store, &path, Some(Path::new("data.awd"))).unwrap();
    let provenance = exported.provenance.as_ref().unwrap();
    assert_eq!(provenance.objective, max);
    assert_eq!(provenance.study_seed, 4);
    let reread: RunConfig = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(reread, exported);
    reread.validate().unwrap();
    assert_eq!(reread.train.learning_rate, provenance.config["learning_rate"].as_f64().unwrap());
}

#[test]
fn export_without_successful_trials_fails() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("study.ndjson");
    let space = lr_space();
    let opts = StudyOptions::new(&store, 2, 1, 0);
    let err = drive(&space, &opts, |_, h| suggest(h, &space, 0, &opts.suggest).0, |_, _| {
        TrialResult {
            status: TrialStatus::Failed,
            objective: None,
            budget: 0,
            error: Some("boom".into()),
            model: None,
            train: None,
        }
    })
    .unwrap_err();
    assert!(matches!(err, TuneError::NoSuccessfulTrials));
    let records = read_store(&store, None).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].observation().objective, 0.0);
    assert!(matches!(
        export_best(&store, &dir.path().join("x.json"), None),
        Err(TuneError::NoSuccessfulTrials)
    ));
}

#[test]
fn apply_config_rebuilds_the_architecture() {
    let mut config = default_space().default_config();
    config.insert("num_blocks".into(), ParamValue::Int(4));
    config.insert("kernel_base".into(), ParamValue::Int(3));
    config.insert("base_channels".into(), ParamValue::Int(32));
    config.insert("batch_size".into(), ParamValue::Int(128));
    let (model, train) = apply_config(&config, &tiny_model_config(), &tiny_train_config(5, 0)).unwrap();
    let kernels: Vec<usize> = model.blocks.iter().map(|b| b.kernel).collect();
    let channels: Vec<usize> = model.blocks.iter().map(|b| b.channels).collect();
    assert_eq!(kernels, vec![3, 5, 7, 9]);
    assert_eq!(channels, vec![32, 32, 32, 64]);
    assert_eq!(train.batch_size, 128);
    assert_eq!(train.epochs, 5);

    config.insert("momentum".into(), ParamValue::Float(0.9));
    assert!(apply_config(&config, &tiny_model_config(), &tiny_train_config(5, 0)).is_err());
}

fn small_space() -> ParamSpace {
    ParamSpace::new(vec![
        Dimension::new("learning_rate", DimKind::ContinuousLog { low: 1e-3, high: 1e-2 })
            .with_default(ParamValue::Float(3e-3)),
        Dimension::new("dropout", DimKind::ContinuousLinear { low: 0.0, high: 0.3 })
            .with_default(ParamValue::Float(0.1)),
    ])
    .unwrap()
}

#[test]
fn study_and_manual_grid_run_on_synthetic_data() {
    let data = tiny_dataset(3);
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("auto.ndjson");
    let opts = StudyOptions::new(&store, 3, 1, 5);
    let out = run_study(&data, &small_space(), &tiny_model_config(), &tiny_train_config(4, 0), &opts)
        .unwrap();
    assert_eq!(out.records.len(), 3);
    assert_eq!(out.records[0].config, small_space().default_config());
    let defaults = out.records[0].objective.unwrap();
    assert!(out.best.objective.unwrap() >= defaults);
    assert!(out.records.iter().all(|r| r.status == TrialStatus::Ok && r.budget == 1));

    let grid_store = dir.path().join("grid.ndjson");
    let grid_opts = StudyOptions::new(&grid_store, 0, 1, 5);
    let grid = run_manual_grid(&data, &[8, 16], &tiny_model_config(), &tiny_train_config(4, 0), &grid_opts)
        .unwrap();
    let sizes: Vec<usize> = grid.records.iter().map(|r| r.train.as_ref().unwrap().batch_size).collect();
    assert_eq!(sizes, vec![8, 16]);
}
