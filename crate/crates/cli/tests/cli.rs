use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ifspref_core::aggregation::{aggregate_dataset, AggregateOptions};
use ifspref_core::{AggregationMethod, DynamicWeightConfig, Execution, Store};
use serde_json::Value;

fn ifspref(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifspref"))
        .env_remove("IFS_DATA_DIR")
        .arg("--data")
        .arg(data)
        .args(args)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn simulate(dir: &Path, tasks: &str, annotators: &str, seed: &str) -> Output {
    let out = dir.to_str().unwrap();
    ifspref(dir, &["simulate", "--tasks", tasks, "--annotators", annotators, "--seed", seed, "--out", out])
}

fn seeded_store(root: &Path) -> std::path::PathBuf {
    let corpus = root.join("corpus");
    assert!(simulate(&corpus, "20", "4", "3").status.success());
    let data = root.join("data");
    let tasks = corpus.join("tasks.jsonl");
    let annotations = corpus.join("annotations.jsonl");
    let out = ifspref(
        &data,
        &["import", "--tasks", tasks.to_str().unwrap(), "--annotations", annotations.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

#[test]
fn simulate_is_deterministic() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    assert!(simulate(&a, "50", "5", "42").status.success());
    assert!(simulate(&b, "50", "5", "42").status.success());
    for f in ["tasks.jsonl", "annotations.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_to_string(a.join("annotations.jsonl")).unwrap().lines().count(), 250);
    let c = root.path().join("c");
    assert!(simulate(&c, "50", "5", "43").status.success());
    assert_ne!(fs::read(a.join("annotations.jsonl")).unwrap(), fs::read(c.join("annotations.jsonl")).unwrap());
}

#[test]
fn simulate_from_config() {
    let root = tempfile::tempdir().unwrap();
    let config = root.path().join("sim.json");
    fs::write(
        &config,
        r#"{"annotators":[{"annotator_id":"x","noise_sigma":0.3,"base_hesitancy":0.2,"ambiguity_sensitivity":0.1},{"annotator_id":"y","noise_sigma":0.05,"base_hesitancy":0.1,"ambiguity_sensitivity":0.3}],"gold_fraction":0.5}"#,
    )
    .unwrap();
    let out_dir = root.path().join("o");
    let args = ["--json", "simulate", "--tasks", "10", "--seed", "1", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
    let out = ifspref(root.path(), &args);
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["annotations"], 20);
    let tasks = fs::read_to_string(out_dir.join("tasks.jsonl")).unwrap();
    assert_eq!(tasks.lines().filter(|l| l.contains("gold_preference")).count(), 5);

    let bad = ifspref(root.path(), &["simulate", "--tasks", "10", "--seed", "1", "--annotators", "3", "--config", config.to_str().unwrap(), "--out", "x"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn aggregate_matches_library() {
    let root = tempfile::tempdir().unwrap();
    let data = seeded_store(root.path());
    let out = ifspref(&data, &["--json", "aggregate", "--method", "dynamic", "--alpha", "0.4", "--beta", "0.3", "--gamma", "0.3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cli: Value = stdout_json(&out);

    let store = Store::open(&data).unwrap();
    let snap = store.snapshot();
    let options = AggregateOptions { dynamic: DynamicWeightConfig::new(0.4, 0.3, 0.3).unwrap(), ..Default::default() };
    let expected = aggregate_dataset(&snap.dataset(), AggregationMethod::DynamicWeighting, &options, Execution::Sequential).unwrap();
    assert_eq!(cli, serde_json::to_value(&expected).unwrap());
    assert_eq!(snap.aggregates().len(), 20);

    let human = ifspref(&data, &["aggregate", "--method", "simple"]);
    assert!(String::from_utf8_lossy(&human.stdout).contains("aggregated 20 tasks with simple"));
}

#[test]
fn validation_exits_one() {
    let root = tempfile::tempdir().unwrap();
    let empty = root.path().join("empty");
    let out = ifspref(&empty, &["--json", "quality"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_json(&out)["reason"], "empty dataset");
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty dataset"));

    let out = ifspref(&empty, &["aggregate", "--method", "simple"]);
    assert_eq!(out.status.code(), Some(1));

    let data = seeded_store(root.path());
    let out = ifspref(&data, &["aggregate", "--method", "dynamic", "--alpha", "0.5", "--beta", "0.5", "--gamma", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(Store::open(&data).unwrap().snapshot().aggregates().is_empty());
    assert_eq!(ifspref(&data, &["aggregate", "--method", "median"]).status.code(), Some(1));
    assert_eq!(ifspref(&data, &["aggregate", "--alpha", "0.5"]).status.code(), Some(1));
    assert_eq!(ifspref(&data, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(ifspref(&data, &["--help"]).status.code(), Some(0));
}

#[test]
fn io_errors_exit_two() {
    let root = tempfile::tempdir().unwrap();
    let missing = root.path().join("nope.jsonl");
    let out = ifspref(&root.path().join("d"), &["--json", "import", "--tasks", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stdout_json(&out)["error"], "io_error");

    let file = root.path().join("plain");
    fs::write(&file, "x").unwrap();
    let out = ifspref(&file, &["quality"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn strict_import_leaves_store_untouched() {
    let root = tempfile::tempdir().unwrap();
    let tasks = root.path().join("tasks.jsonl");
    fs::write(
        &tasks,
        concat!(
            r#"{"task_id":"t1","prompt":"p","responses":[{"response_id":"a","text":"x"},{"response_id":"b","text":"y"}]}"#,
            "\n",
            r#"{"task_id":"t2","prompt":"p","responses":[{"response_id":"a","text":"x"}]}"#,
            "\n",
        ),
    )
    .unwrap();
    let data = root.path().join("data");
    let out = ifspref(&data, &["--json", "import", "--tasks", tasks.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(Store::open(&data).unwrap().snapshot().task_count(), 0);

    let out = ifspref(&data, &["--json", "import", "--tasks", tasks.to_str().unwrap(), "--allow-partial"]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    assert_eq!(report["tasks"]["imported"], 1);
    assert_eq!(report["tasks"]["errors"][0]["line"], 2);
    assert_eq!(report["tasks"]["errors"][0]["reason"], "responses length < 2");
    assert_eq!(Store::open(&data).unwrap().snapshot().task_count(), 1);
}

#[test]
fn export_writes_jsonl() {
    let root = tempfile::tempdir().unwrap();
    let data = seeded_store(root.path());
    assert!(ifspref(&data, &["aggregate", "--method", "weighted"]).status.success());
    let out_file = root.path().join("exports/pairs.jsonl");
    let out = ifspref(&data, &["--json", "export", "--kind", "pairwise", "--out", out_file.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["records"], 20);
    let first: Value = serde_json::from_str(fs::read_to_string(&out_file).unwrap().lines().next().unwrap()).unwrap();
    let p = first["p_a"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));

    // Re-importing an export into a fresh store reproduces it byte for byte.
    let tasks = root.path().join("t.jsonl");
    let anns = root.path().join("a.jsonl");
    assert!(ifspref(&data, &["export", "--kind", "tasks", "--out", tasks.to_str().unwrap()]).status.success());
    assert!(ifspref(&data, &["export", "--kind", "annotations", "--out", anns.to_str().unwrap()]).status.success());
    let fresh = root.path().join("fresh");
    let imported = ifspref(&fresh, &["import", "--tasks", tasks.to_str().unwrap(), "--annotations", anns.to_str().unwrap()]);
    assert!(imported.status.success());
    let again = root.path().join("a2.jsonl");
    assert!(ifspref(&fresh, &["export", "--kind", "annotations", "--out", again.to_str().unwrap()]).status.success());
    assert_eq!(fs::read(&anns).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn data_dir_from_env_and_flag_precedence() {
    let root = tempfile::tempdir().unwrap();
    let data = seeded_store(root.path());
    let out = Command::new(env!("CARGO_BIN_EXE_ifspref"))
        .env("IFS_DATA_DIR", &data)
        .args(["--json", "quality", "--agreement-mode", "literal"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["agreement_mode"], "literal");

    let out = Command::new(env!("CARGO_BIN_EXE_ifspref"))
        .env("IFS_DATA_DIR", &data)
        .arg("--data")
        .arg(root.path().join("elsewhere"))
        .arg("quality")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn quality_out_file_matches_stdout() {
    let root = tempfile::tempdir().unwrap();
    let data = seeded_store(root.path());
    let file = root.path().join("report.json");
    let out = ifspref(&data, &["--json", "quality", "--alpha", "0.5", "--beta", "0.25", "--gamma", "0.25", "--out", file.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(fs::read(&file).unwrap(), out.stdout);
    assert_eq!(stdout_json(&out)["score_config"]["alpha"].as_f64(), Some(0.5));
}

#[test]
fn serve_rejects_bad_config() {
    let root = tempfile::tempdir().unwrap();
    let out = ifspref(&root.path().join("missing"), &["serve", "--port", "0"]);
    assert_eq!(out.status.code(), Some(1));
}
