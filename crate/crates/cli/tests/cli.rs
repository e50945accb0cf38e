use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use automr_cli::manifest::{read_manifest, RunStatus};
use automr_cli::report::RunMetrics;
use automr_cli::{EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};
use automr_core::train::read_events;
use proptest::prelude::*;
use tempfile::TempDir;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bundle() -> PathBuf {
    root().join("configs/synthetic.json")
}

fn corpus() -> PathBuf {
    root().join("data/synthetic")
}

fn automr(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_automr"))
        .arg("-q")
        .args(args.iter().map(|a| a.as_ref()))
        .env_remove("AUTOMR_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output) {
    assert_eq!(code(out), EXIT_OK, "stderr: {}", stderr(out));
}

/// A prepared copy of the bundled corpus, shared by tests that only read it.
fn shared_dataset() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    let dir = DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = automr(&[&"prepare", &"--schema", &bundle(), &"--input", &corpus(), &"--output", &dir.path().join("ds.awd"), &"--seed", &"1"]);
        assert_ok(&out);
        dir
    });
    Box::leak(dir.path().join("ds.awd").into_boxed_path())
}

fn snapshot(paths: &[&Path]) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for p in paths {
        if p.is_dir() {
            for e in fs::read_dir(p).unwrap() {
                let e = e.unwrap().path();
                if e.is_file() {
                    out.insert(e.clone(), fs::read(&e).unwrap());
                }
            }
        } else {
            out.insert(p.to_path_buf(), fs::read(p).unwrap());
        }
    }
    out
}

fn metrics(run: &Path) -> RunMetrics {
    serde_json::from_str(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn version_prints_the_crate_version() {
    let out = automr(&[&"--version"]);
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&automr(&[])), EXIT_USAGE);
    assert_eq!(code(&automr(&[&"frobnicate"])), EXIT_USAGE);
    assert_eq!(code(&automr(&[&"tune"])), EXIT_USAGE);
    assert_eq!(code(&automr(&[&"--help"])), EXIT_OK);
}

#[test]
fn train_without_data_names_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = automr(&[&"train", &"--out", &tmp.path().join("run")]);
    assert_eq!(code(&out), EXIT_USAGE);
    assert!(stderr(&out).contains("--data"), "{}", stderr(&out));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn missing_files_are_runtime_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = automr(&[&"train", &"--data", &tmp.path().join("nope.awd"), &"--out", &tmp.path().join("run")]);
    assert_eq!(code(&out), EXIT_RUNTIME);
    assert!(stderr(&out).contains("nope.awd"));
}

#[test]
fn report_without_event_log_names_the_expected_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = automr(&[&"report", &"--run", &tmp.path()]);
    assert_eq!(code(&out), EXIT_INVALID);
    assert!(stderr(&out).contains("events.ndjson"), "{}", stderr(&out));
}

#[test]
fn seed_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let prepare = |out: &Path, env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_automr"));
        cmd.args(["-q", "prepare", "--schema"]).arg(bundle()).arg("--input").arg(corpus());
        cmd.arg("--output").arg(out).env_remove("AUTOMR_SEED");
        if let Some(s) = env {
            cmd.env("AUTOMR_SEED", s);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        assert!(cmd.status().unwrap().success());
        fs::read(out).unwrap()
    };
    let from_env = prepare(&tmp.path().join("a.awd"), Some("42"), None);
    let from_flag = prepare(&tmp.path().join("b.awd"), None, Some("42"));
    let flag_wins = prepare(&tmp.path().join("c.awd"), Some("5"), Some("42"));
    let other = prepare(&tmp.path().join("d.awd"), Some("43"), None);
    assert_eq!(from_env, from_flag);
    assert_eq!(flag_wins, from_flag);
    assert_ne!(other, from_flag);
}

#[test]
fn smoke_chain_writes_finalized_manifests_and_leaves_inputs_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let t = |n: &str| tmp.path().join(n);
    let (ds, store, best, run, eval) = (t("ds.awd"), t("study.ndjson"), t("best.json"), t("run"), t("eval.json"));
    let fixed_inputs = snapshot(&[&corpus(), &bundle()]);

    assert_ok(&automr(&[&"prepare", &"--schema", &bundle(), &"--input", &corpus(), &"--output", &ds, &"--seed", &"3"]));
    assert_ok(&automr(&[&"tune", &"--data", &ds, &"--trials", &"2", &"--epochs-per-trial", &"2", &"--store", &store, &"--seed", &"3"]));
    let before_export = snapshot(&[&ds, &store]);
    assert_ok(&automr(&[&"export", &"--store", &store, &"--out", &best, &"--data", &ds]));
    assert_eq!(snapshot(&[&ds, &store]), before_export);
    let before_train = snapshot(&[&ds, &best]);
    assert_ok(&automr(&[&"train", &"--config", &best, &"--epochs", &"3", &"--out", &run]));
    assert_eq!(snapshot(&[&ds, &best]), before_train);
    let before_eval = snapshot(&[&ds, &run]);
    assert_ok(&automr(&[&"evaluate", &"--checkpoint", &run.join("best.amck"), &"--data", &ds, &"--out", &eval]));
    assert_ok(&automr(&[&"report", &"--run", &run]));
    assert_eq!(snapshot(&[&ds, &run]), before_eval);
    assert_eq!(snapshot(&[&corpus(), &bundle()]), fixed_inputs);

    let manifests = [
        (ds.with_extension("awd.manifest.json"), "prepare"),
        (store.with_extension("ndjson.manifest.json"), "tune"),
        (best.with_extension("json.manifest.json"), "export"),
        (run.join("manifest.json"), "train"),
        (eval.with_extension("json.manifest.json"), "evaluate"),
        (run.join("report/manifest.json"), "report"),
    ];
    for (path, command) in manifests {
        let m = read_manifest(&path).unwrap();
        assert_eq!(m.command, command);
        assert_eq!(m.status, RunStatus::Succeeded, "{command}");
        assert_eq!(m.exit_code, Some(0));
        assert!(m.finished_at.is_some());
        assert!(m.argv.iter().any(|a| a == command));
        for artifact in m.artifacts.values() {
            assert!(artifact.exists(), "{command}: {}", artifact.display());
        }
    }
    let train = read_manifest(&run.join("manifest.json")).unwrap();
    assert_eq!(train.seeds["train"], 3);
    assert_eq!(train.config["train"]["epochs"], 3);
}

#[test]
fn report_tables_equal_evaluate_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let ds = shared_dataset();
    assert_ok(&automr(&[&"train", &"--data", &ds, &"--epochs", &"1", &"--out", &run, &"--seed", &"2"]));
    let eval = tmp.path().join("eval.json");
    assert_ok(&automr(&[&"evaluate", &"--checkpoint", &run.join("best.amck"), &"--data", &ds, &"--out", &eval]));
    let evaluated: BTreeMap<String, automr_core::train::MetricsReport> =
        serde_json::from_str(&fs::read_to_string(&eval).unwrap()).unwrap();
    let m = metrics(&run);
    assert_eq!(evaluated["train"], m.train);
    assert_eq!(evaluated["test"], m.test);

    let out = automr(&[&"report", &"--run", &run]);
    assert_ok(&out);
    let md = fs::read_to_string(run.join("report/report.md")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), md);
    for (split, r) in [("train", &m.train), ("test", &m.test)] {
        let row = format!("| {split} | {} | {} | {} | {} |", r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1);
        assert!(md.contains(&row), "{row}");
    }
    let history: Vec<&str> = md
        .lines()
        .skip_while(|l| !l.starts_with("| Epoch"))
        .skip(2)
        .take_while(|l| l.starts_with('|'))
        .collect();
    assert_eq!(history.len(), 2, "one row per split for one epoch");
    assert!(history[0].contains("| train |") && history[1].contains("| test |"));
}

#[test]
fn manifest_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ds = shared_dataset();
    assert_ok(&automr(&[&"train", &"--data", &ds, &"--epochs", &"2", &"--lr", &"0.003", &"--batch", &"16", &"--seed", &"9", &"--out", &a]));
    let snapshot = read_manifest(&a.join("manifest.json")).unwrap().config;
    let replay = tmp.path().join("replay.json");
    fs::write(&replay, serde_json::to_string(&snapshot).unwrap()).unwrap();
    assert_ok(&automr(&[&"train", &"--config", &replay, &"--out", &b]));
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(b.join("metrics.json")).unwrap());
    assert_eq!(fs::read(a.join("last.amck")).unwrap(), fs::read(b.join("last.amck")).unwrap());
}

#[test]
fn existing_run_needs_resume_and_resume_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let ds = shared_dataset();
    assert_ok(&automr(&[&"train", &"--data", &ds, &"--epochs", &"2", &"--out", &run]));
    let again = automr(&[&"train", &"--data", &ds, &"--epochs", &"2", &"--out", &run]);
    assert_eq!(code(&again), EXIT_INVALID);
    assert!(stderr(&again).contains("--resume"));

    assert_ok(&automr(&[&"train", &"--data", &ds, &"--epochs", &"3", &"--out", &run, &"--resume"]));
    let epochs: Vec<usize> = read_events(&run.join("events.ndjson")).unwrap().iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, vec![1, 1, 2, 2, 3, 3]);
    let m = read_manifest(&run.join("manifest.json")).unwrap();
    assert_eq!(m.status, RunStatus::Succeeded);
    assert!(m.argv.iter().any(|a| a == "--resume"));
}

#[test]
fn failed_runs_finalize_their_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("csv");
    fs::create_dir(&input).unwrap();
    fs::write(input.join("bad.csv"), "ch0,ch1,ch2,label\n1,2,oops,class0\n").unwrap();
    let out_file = tmp.path().join("ds.awd");
    let out = automr(&[&"prepare", &"--schema", &bundle(), &"--input", &input, &"--output", &out_file]);
    assert_eq!(code(&out), EXIT_INVALID, "{}", stderr(&out));
    assert!(!out_file.exists());
    let m = read_manifest(&tmp.path().join("ds.awd.manifest.json")).unwrap();
    assert_eq!(m.status, RunStatus::Failed);
    assert_eq!(m.exit_code, Some(EXIT_INVALID));
    assert!(m.error.unwrap().contains("bad"));
}

#[test]
fn export_of_a_study_without_successes_is_invalid() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("study.ndjson");
    let record = serde_json::json!({
        "trial": 0, "config": {"learning_rate": 0.01}, "objective": null, "budget": 1,
        "seed": 0, "status": "failed", "wall_ms": 1, "error": "boom"
    });
    fs::write(&store, format!("{record}\n")).unwrap();
    let out = automr(&[&"export", &"--store", &store, &"--out", &tmp.path().join("best.json")]);
    assert_eq!(code(&out), EXIT_INVALID, "{}", stderr(&out));
    assert!(stderr(&out).contains("no successful trials"));
}

fn malformed_json() -> impl Strategy<Value = String> {
    prop_oneof![
        "[^{}]{0,40}",
        Just("{".to_string()),
        Just("[]".to_string()),
        Just(r#"{"model": 3, "train": {}}"#.to_string()),
        Just(r#"{"model": "base", "train": {"epochs": -1}}"#.to_string()),
        (0usize..5).prop_map(|b| format!(r#"{{"model": "base", "train": {{"epochs": 1, "batch_size": {b}, "learning_rate": 0.0}}}}"#)),
        "[a-z]{1,8}".prop_map(|k| format!(r#"{{"model": "base", "train": {{"epochs": 1, "batch_size": 8, "learning_rate": 0.001, "{k}x": 1}}}}"#)),
        "[a-z]{1,8}".prop_map(|k| format!(r#"{{"schema": {{"name": "{k}"}}}}"#)),
        (1usize..4).prop_map(|c| format!(r#"{{"model": {{"in_channels": {c}, "num_classes": 3, "blocks": [], "head_channels": 4, "dropout": 0.0, "stem_kernel": 3}}, "train": {{"epochs": 1, "batch_size": 8, "learning_rate": 0.001}}}}"#)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn malformed_configs_and_schemas_exit_with_two(text in malformed_json()) {
        let tmp = tempfile::tempdir().unwrap();
        let file = tmp.path().join("input.json");
        fs::write(&file, &text).unwrap();
        let train = automr(&[&"train", &"--data", &shared_dataset(), &"--config", &file, &"--out", &tmp.path().join("run")]);
        prop_assert_eq!(code(&train), EXIT_INVALID, "{}", stderr(&train));
        prop_assert!(!tmp.path().join("run").exists());
        let prep = automr(&[&"prepare", &"--schema", &file, &"--input", &corpus(), &"--output", &tmp.path().join("ds.awd")]);
        prop_assert_eq!(code(&prep), EXIT_INVALID, "{}", stderr(&prep));
        let space = automr(&[&"tune", &"--data", &shared_dataset(), &"--space", &file, &"--store", &tmp.path().join("s.ndjson")]);
        prop_assert_eq!(code(&space), EXIT_INVALID, "{}", stderr(&space));
    }
}
