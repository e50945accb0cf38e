use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use automr_core::data::synthetic::{write_synthetic_corpus, SyntheticConfig};
use automr_core::data::{prepare, read_awd, write_awd, Split, WindowedDataset};
use automr_core::model::{ModelInstance, QuartzConfig};
use automr_core::train::{
    evaluate, load_checkpoint, read_events, MetricsReport, TrainConfig, TrainState, Trainer,
    BEST_CHECKPOINT, EVENT_LOG, LAST_CHECKPOINT,
};
use automr_core::tune::{
    default_space, export_best, run_manual_grid, run_study, ParamSpace, RunConfig, StudyOptions,
    StudyOutcome, TrialStatus,
};
use serde_json::json;

use crate::config::{read_config_file, read_json, read_schema, ConfigFile, ModelSpec};
use crate::manifest::{manifest_path_for, write_atomic, ManifestHandle, MANIFEST_FILE};
use crate::report::{metrics_table, write_report, RunArtifacts, RunMetrics, METRICS_FILE};
use crate::{
    CliError, Command, EvaluateArgs, ExportArgs, PrepareArgs, ReportArgs, SplitArg, SynthArgs,
    TrainArgs, TuneArgs,
};

pub(crate) fn dispatch(command: Command, argv: &[String]) -> Result<(), CliError> {
    match command {
        Command::Prepare(a) => prepare_cmd(a, argv),
        Command::Train(a) => train_cmd(a, argv),
        Command::Evaluate(a) => evaluate_cmd(a, argv),
        Command::Tune(a) => tune_cmd(a, argv),
        Command::Export(a) => export_cmd(a, argv),
        Command::Report(a) => report_cmd(a, argv),
        Command::Synth(a) => synth_cmd(a, argv),
    }
}

fn seeds(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create_parent(file: &Path) -> Result<(), CliError> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn load_dataset(path: &Path) -> Result<WindowedDataset, CliError> {
    if !path.is_file() {
        return Err(CliError::Runtime(format!("{}: no such dataset file", path.display())));
    }
    Ok(read_awd(path)?)
}

fn prepare_cmd(a: PrepareArgs, argv: &[String]) -> Result<(), CliError> {
    let seed = a.seed.unwrap_or(0);
    let schema = read_schema(&a.schema)?;
    if !a.input.is_dir() {
        return Err(CliError::Runtime(format!("{}: not a directory", a.input.display())));
    }
    create_parent(&a.output)?;
    let config = json!({ "schema": schema, "input": a.input, "output": a.output });
    let mut manifest = ManifestHandle::start(
        manifest_path_for(&a.output, false),
        "prepare",
        argv,
        config,
        seeds(&[("seed", seed)]),
    )?;
    let outcome = (|| {
        let (ds, summary) = prepare(&a.input, &schema, seed)?;
        write_awd(&ds, &a.output)?;
        manifest.artifact("dataset", &a.output);
        println!(
            "{} recordings -> {} windows ({} train / {} test, ratio {:.3}); wrote {}",
            summary.segmentation.recordings,
            ds.len(),
            summary.split.train,
            summary.split.test,
            summary.split.achieved_ratio,
            a.output.display()
        );
        for (id, len) in &summary.segmentation.skipped {
            println!("skipped {id}: {len} samples is shorter than the window");
        }
        if let Some(w) = &summary.split.warning {
            println!("warning: {w}");
        }
        Ok(())
    })();
    manifest.finish(outcome)
}

fn default_run_dir() -> PathBuf {
    PathBuf::from("runs").join(chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string())
}

/// Merges `--config`, `--model` and the override flags into one run config.
fn resolve_run(a: &TrainArgs, data: &WindowedDataset) -> Result<RunConfig, CliError> {
    let (model_spec, mut train, mut provenance) = match a.config.as_deref().map(read_config_file) {
        None => (ModelSpec::default(), TrainConfig::default(), None),
        Some(file) => match file? {
            ConfigFile::Run(r) => (ModelSpec::Config(r.model), r.train, r.provenance),
            ConfigFile::Bundle(b) => (b.model, b.train, None),
        },
    };
    let model_spec = match &a.model {
        Some(arg) => {
            provenance = None;
            ModelSpec::from_arg(arg)?
        }
        None => model_spec,
    };
    let model = model_spec.resolve(data.num_channels(), data.num_classes())?;
    check_shape(&model, data)?;
    if let Some(e) = a.epochs {
        train.epochs = e;
    }
    if let Some(lr) = a.lr {
        train.learning_rate = lr;
    }
    if let Some(b) = a.batch {
        train.batch_size = b;
    }
    if let Some(s) = a.seed {
        train.seed = s;
    }
    let run = RunConfig {
        model,
        train,
        data: None,
        provenance,
    };
    run.validate()?;
    Ok(run)
}

fn check_shape(model: &QuartzConfig, data: &WindowedDataset) -> Result<(), CliError> {
    if model.in_channels != data.num_channels() || model.num_classes != data.num_classes() {
        return Err(CliError::Invalid(format!(
            "model expects {} channels and {} classes but the dataset has {} and {}",
            model.in_channels,
            model.num_classes,
            data.num_channels(),
            data.num_classes()
        )));
    }
    Ok(())
}

fn data_path(a: &TrainArgs) -> Result<PathBuf, CliError> {
    if let Some(d) = &a.data {
        return Ok(d.clone());
    }
    if let Some(path) = &a.config {
        if let ConfigFile::Run(RunConfig { data: Some(d), .. }) = read_config_file(path)? {
            return Ok(d);
        }
    }
    Err(CliError::Usage(
        "missing required --data <FILE> (the dataset to train on; it may also come from a --config written by `automr export --data`)".into(),
    ))
}

/// Metrics of `model` on both splits.
fn final_metrics(
    model: &ModelInstance<f32>,
    data: &WindowedDataset,
    best_epoch: Option<usize>,
) -> Result<RunMetrics, CliError> {
    Ok(RunMetrics {
        class_names: data.schema().label_names.clone(),
        best_epoch,
        train: evaluate(model, data, Split::Train)?,
        test: evaluate(model, data, Split::Test)?,
    })
}

/// Drops event records past `epoch`, so a resumed run does not log an epoch twice.
fn trim_events(path: &Path, epoch: usize) -> Result<(), CliError> {
    if !path.exists() {
        return Ok(());
    }
    let events = read_events(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let mut text = String::new();
    for e in events.iter().filter(|e| e.epoch <= epoch) {
        text.push_str(&serde_json::to_string(e).expect("event serializes"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

fn train_cmd(a: TrainArgs, argv: &[String]) -> Result<(), CliError> {
    let data_file = data_path(&a)?;
    let out = a.out.clone().unwrap_or_else(default_run_dir);
    let data = load_dataset(&data_file)?;
    let mut run = resolve_run(&a, &data)?;
    run.data = Some(data_file.clone());
    let last = out.join(LAST_CHECKPOINT);
    let resume_from = if a.resume {
        if !last.is_file() {
            return Err(CliError::Invalid(format!(
                "--resume: {} does not exist",
                last.display()
            )));
        }
        let ck = load_checkpoint(&last)?;
        if ck.state.model.config() != &run.model {
            return Err(CliError::Invalid(format!(
                "--resume: {} holds a different model than the requested config",
                last.display()
            )));
        }
        Some(ck)
    } else {
        if out.join(MANIFEST_FILE).exists() {
            return Err(CliError::Invalid(format!(
                "{} already holds a run; choose another --out or pass --resume",
                out.display()
            )));
        }
        None
    };
    create_dir(&out)?;
    let mut manifest = ManifestHandle::start(
        out.join(MANIFEST_FILE),
        "train",
        argv,
        to_value(&run),
        seeds(&[("train", run.train.seed)]),
    )?;
    let outcome = (|| {
        let config_path = out.join("config.json");
        write_atomic(
            &config_path,
            (serde_json::to_string_pretty(&run).expect("run config serializes") + "\n").as_bytes(),
        )?;
        manifest.artifact("config", &config_path);
        let trainer = match resume_from {
            Some(ck) => {
                log::info!("resuming {} after epoch {}", out.display(), ck.state.epoch);
                trim_events(&out.join(EVENT_LOG), ck.state.epoch)?;
                Trainer::resume(ck.state, &data, run.train.clone())?
            }
            None => {
                let model = ModelInstance::build(run.model.clone(), run.train.seed)?;
                Trainer::new(model, &data, run.train.clone())?
            }
        };
        let outcome = trainer
            .with_event_log(&out.join(EVENT_LOG))
            .with_checkpoint_dir(&out)
            .run()?;
        for (name, file) in [("events", EVENT_LOG), ("best", BEST_CHECKPOINT), ("last", LAST_CHECKPOINT)] {
            manifest.artifact(name, &out.join(file));
        }
        let best: &TrainState = &outcome.best;
        let metrics = final_metrics(&best.model, &data, best.best.map(|b| b.epoch))?;
        let metrics_path = out.join(METRICS_FILE);
        write_atomic(
            &metrics_path,
            (serde_json::to_string_pretty(&metrics).expect("metrics serialize") + "\n").as_bytes(),
        )?;
        manifest.artifact("metrics", &metrics_path);
        match best.best {
            Some(b) => println!(
                "best test accuracy {:.4} at epoch {} of {}; run in {}",
                b.accuracy,
                b.epoch,
                outcome.last.epoch,
                out.display()
            ),
            None => println!("no epochs run; run in {}", out.display()),
        }
        print!("{}", metrics_table(&metrics));
        Ok(())
    })();
    manifest.finish(outcome)
}

fn evaluate_cmd(a: EvaluateArgs, argv: &[String]) -> Result<(), CliError> {
    let data = load_dataset(&a.data)?;
    if !a.checkpoint.is_file() {
        return Err(CliError::Runtime(format!("{}: no such checkpoint", a.checkpoint.display())));
    }
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = &ck.state.model;
    let splits: &[Split] = match a.split {
        SplitArg::Train => &[Split::Train],
        SplitArg::Test => &[Split::Test],
        SplitArg::Both => &[Split::Train, Split::Test],
    };
    let run = || -> Result<BTreeMap<&'static str, MetricsReport>, CliError> {
        let mut out = BTreeMap::new();
        for &s in splits {
            let name = if s == Split::Train { "train" } else { "test" };
            out.insert(name, evaluate(model, &data, s)?);
        }
        Ok(out)
    };
    let print = |reports: &BTreeMap<&str, MetricsReport>| {
        println!("| Split | Loss | Accuracy | Precision | Recall | F1 |\n|---|---|---|---|---|---|");
        for name in ["train", "test"] {
            let Some(m) = reports.get(name) else { continue };
            println!(
                "| {name} | {} | {} | {} | {} | {} |",
                m.loss, m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1
            );
        }
    };
    let Some(out) = a.out else {
        let reports = run()?;
        print(&reports);
        return Ok(());
    };
    create_parent(&out)?;
    let config = json!({ "checkpoint": a.checkpoint, "data": a.data, "split": format!("{:?}", a.split).to_lowercase() });
    let mut manifest = ManifestHandle::start(
        manifest_path_for(&out, false),
        "evaluate",
        argv,
        config,
        seeds(&[("train", ck.config.seed)]),
    )?;
    let outcome = (|| {
        let reports = run()?;
        print(&reports);
        write_atomic(
            &out,
            (serde_json::to_string_pretty(&reports).expect("metrics serialize") + "\n").as_bytes(),
        )?;
        manifest.artifact("metrics", &out);
        Ok(())
    })();
    manifest.finish(outcome)
}

fn print_study(outcome: &StudyOutcome) {
    for r in &outcome.records {
        let status = match r.status {
            TrialStatus::Ok => format!("{:.4}", r.objective.unwrap_or(0.0)),
            TrialStatus::Failed => "failed".into(),
            TrialStatus::Anomaly => "diverged".into(),
        };
        let config: Vec<String> = r.config.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("trial {:>3}  {status:>8}  {}", r.trial, config.join(" "));
    }
    println!(
        "best: trial {} with validation accuracy {:.4}",
        outcome.best.trial,
        outcome.best.objective.unwrap_or(0.0)
    );
}

fn tune_cmd(a: TuneArgs, argv: &[String]) -> Result<(), CliError> {
    let seed = a.seed.unwrap_or(0);
    if a.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    if !(a.validation_fraction > 0.0 && a.validation_fraction < 1.0) {
        return Err(CliError::Usage("--validation-fraction must lie in (0, 1)".into()));
    }
    let data = load_dataset(&a.data)?;
    let space = match &a.space {
        Some(p) => {
            let space: ParamSpace = read_json(p)?;
            space.validate()?;
            space
        }
        None => default_space(),
    };
    let (model_spec, mut base_train) = match a.config.as_deref().map(read_config_file) {
        None => (ModelSpec::from_arg(&a.model)?, TrainConfig::default()),
        Some(file) => match file? {
            ConfigFile::Run(r) => (ModelSpec::Config(r.model), r.train),
            ConfigFile::Bundle(b) => (b.model, b.train),
        },
    };
    base_train.seed = seed;
    let base_model = model_spec.resolve(data.num_channels(), data.num_classes())?;
    check_shape(&base_model, &data)?;
    let mut opts = StudyOptions::new(&a.store, a.trials, a.epochs_per_trial, seed);
    opts.fresh = a.fresh;
    opts.validation_fraction = a.validation_fraction;
    create_parent(&a.store)?;
    let mode = if a.manual_grid.is_some() { "manual-grid" } else { "smbo" };
    let config = json!({
        "data": a.data,
        "mode": mode,
        "trials": a.trials,
        "epochs_per_trial": a.epochs_per_trial,
        "store": a.store,
        "fresh": a.fresh,
        "validation_fraction": a.validation_fraction,
        "batch_sizes": a.batch_sizes,
        "space": space,
        "base_model": base_model,
        "base_train": base_train,
    });
    let mut manifest = ManifestHandle::start(
        manifest_path_for(&a.store, false),
        "tune",
        argv,
        config,
        seeds(&[("study", seed)]),
    )?;
    let outcome = (|| {
        let outcome = match a.manual_grid {
            Some(_) => {
                if a.batch_sizes.is_empty() {
                    return Err(CliError::Usage("--batch-sizes must not be empty".into()));
                }
                run_manual_grid(&data, &a.batch_sizes, &base_model, &base_train, &opts)?
            }
            None => run_study(&data, &space, &base_model, &base_train, &opts)?,
        };
        manifest.artifact("store", &a.store);
        print_study(&outcome);
        Ok(())
    })();
    manifest.finish(outcome)
}

fn export_cmd(a: ExportArgs, argv: &[String]) -> Result<(), CliError> {
    if !a.store.is_file() {
        return Err(CliError::Runtime(format!("{}: no such trial store", a.store.display())));
    }
    create_parent(&a.out)?;
    let config = json!({ "store": a.store, "out": a.out, "data": a.data });
    let mut manifest = ManifestHandle::start(
        manifest_path_for(&a.out, false),
        "export",
        argv,
        config,
        BTreeMap::new(),
    )?;
    let outcome = (|| {
        let run = export_best(&a.store, &a.out, a.data.as_deref()).map_err(|e| match e {
            automr_core::tune::TuneError::NoSuccessfulTrials => CliError::Invalid(format!(
                "{}: no successful trials to export",
                a.store.display()
            )),
            other => other.into(),
        })?;
        manifest.artifact("config", &a.out);
        let p = run.provenance.as_ref().expect("export records provenance");
        println!(
            "exported trial {} (objective {:.4}, study seed {}) to {}",
            p.trial,
            p.objective,
            p.study_seed,
            a.out.display()
        );
        Ok(())
    })();
    manifest.finish(outcome)
}

fn report_cmd(a: ReportArgs, argv: &[String]) -> Result<(), CliError> {
    if !a.names.is_empty() && a.names.len() != a.runs.len() {
        return Err(CliError::Usage(format!(
            "got {} --name values for {} --run directories",
            a.names.len(),
            a.runs.len()
        )));
    }
    let runs = a
        .runs
        .iter()
        .enumerate()
        .map(|(i, dir)| RunArtifacts::load(dir, a.names.get(i).map(String::as_str)))
        .collect::<Result<Vec<_>, _>>()?;
    let out = a.out.clone().unwrap_or_else(|| match runs.as_slice() {
        [one] => one.dir.join("report"),
        _ => PathBuf::from("report"),
    });
    create_dir(&out)?;
    let config = json!({
        "runs": a.runs,
        "names": runs.iter().map(|r| r.name.clone()).collect::<Vec<_>>(),
        "out": out,
    });
    let mut manifest =
        ManifestHandle::start(out.join(MANIFEST_FILE), "report", argv, config, BTreeMap::new())?;
    let outcome = (|| {
        let (md, files) = write_report(&runs, &out)?;
        manifest.artifact("markdown", &files.markdown);
        for p in &files.plots {
            let key = p.file_name().unwrap().to_string_lossy().into_owned();
            manifest.artifact(&key, p);
        }
        print!("{md}");
        Ok(())
    })();
    manifest.finish(outcome)
}

fn synth_cmd(a: SynthArgs, argv: &[String]) -> Result<(), CliError> {
    let seed = a.seed.unwrap_or(0);
    if a.window == 0 || a.length < a.window {
        return Err(CliError::Usage(format!(
            "--length ({}) must be at least --window ({}), which must be positive",
            a.length, a.window
        )));
    }
    let cfg = SyntheticConfig {
        window_length: a.window,
        noise: a.noise,
        seed,
        ..SyntheticConfig::default()
    };
    create_dir(&a.out)?;
    let config = json!({
        "out": a.out,
        "recordings_per_class": a.recordings_per_class,
        "length": a.length,
        "window": a.window,
        "noise": a.noise,
    });
    let mut manifest = ManifestHandle::start(
        a.out.join(MANIFEST_FILE),
        "synth",
        argv,
        config,
        seeds(&[("seed", seed)]),
    )?;
    let outcome = (|| {
        let schema = write_synthetic_corpus(&a.out, &cfg, a.recordings_per_class, a.length)?;
        manifest.artifact("schema", &a.out.join("schema.json"));
        println!(
            "wrote {} recordings of {} samples ({} classes, {} channels) to {}",
            a.recordings_per_class * schema.num_classes(),
            a.length,
            schema.num_classes(),
            schema.num_channels(),
            a.out.display()
        );
        Ok(())
    })();
    manifest.finish(outcome)
}
