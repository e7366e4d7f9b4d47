//! The `dca` binary end to end: outputs, schemas, determinism, exit codes
//! and multi-process socket training.

use std::path::Path;
use std::process::{Command, Output};

use dist_dca::model::{build_model, export_first_layer_filters, read_filters_csv, ModelConfig};
use dist_dca::ps::write_model;

const SMALL: &str = r#"{
  "model": {
    "encoder": [{"feature_maps": 4, "kernel_len": 9}, {"feature_maps": 4, "kernel_len": 9}],
    "decoder": [{"feature_maps": 4, "kernel_len": 9}, {"feature_maps": 1, "kernel_len": 9}]
  },
  "data": {"train": {"n_signals": 64}, "eval": {"n_signals": 60}},
  "run": {"epochs": 2, "warmup_steps": 2, "batch_size": 16},
  "validation": {"odl": {"atoms": 8, "passes": 2}},
  "bench": {"worker_counts": [1, 2], "step_budget": 6}
}"#;

fn dca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dca")).args(args).output().expect("run dca")
}

fn ok(args: &[&str]) -> Output {
    let out = dca(args);
    assert!(
        out.status.success(),
        "dca {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let out = tmp.path().join("run");
    let o = out.to_str().unwrap();

    ok(&["gen-data", "--config", &cfg, "--out", o, "--seed", "3"]);
    for f in ["train.fmts", "eval.fmts", "designs.csv", "truth.csv", "gen-data.config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(rows(&out.join("designs.csv")), 6);
    let designs = std::fs::read_to_string(out.join("designs.csv")).unwrap();
    assert_eq!(designs.lines().nth(1).unwrap().split(',').count(), 1 + 284);
    let train_before = std::fs::read(out.join("train.fmts")).unwrap();

    ok(&["train", "--config", &cfg, "--out", o, "--seed", "3"]);
    assert_eq!(header(&out.join("loss.csv")), "step,samples_seen,wall_ms,loss");
    assert_eq!(header(&out.join("staleness.csv")), "step,staleness");
    assert_eq!(header(&out.join("throughput.csv")), "worker_count,mean_batch_ms");
    assert_eq!(rows(&out.join("loss.csv")), 8);
    assert!(out.join("model.dpsg").exists());
    assert_eq!(std::fs::read(out.join("train.fmts")).unwrap(), train_before, "input mutated");

    ok(&["validate", "--config", &cfg, "--out", o, "--seed", "3"]);
    assert_eq!(header(&out.join("validation.csv")), "event_id,setup,atom_id,pcc");
    assert_eq!(rows(&out.join("validation.csv")), 12);
    for f in ["atoms_setup1_hidden.csv", "atoms_setup1_projected.csv", "atoms_setup2.csv", "spatial_maps.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }

    ok(&["export-filters", "--config", &cfg, "--out", o]);
    let filters = read_filters_csv(std::fs::File::open(out.join("filters.csv")).unwrap()).unwrap();
    assert_eq!((filters.len(), filters[0].len()), (4, 9));

    ok(&["bench", "--config", &cfg, "--out", o, "--worker-counts", "1,2"]);
    let bench = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    let mut lines = bench.lines();
    assert_eq!(lines.next().unwrap(), "worker_count,mean_batch_ms,speedup_vs_1");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!((first[0], first[2]), ("1", "1"));
    assert_eq!(lines.count(), 1);
}

#[test]
fn gen_data_is_byte_reproducible_and_allows_empty_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"data": {"train": {"n_signals": 30}, "eval": {"n_signals": 0}}}"#,
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["gen-data", "--config", &cfg, "--out", a.to_str().unwrap(), "--seed", "9"]);
    ok(&["gen-data", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "9"]);
    for f in ["train.fmts", "eval.fmts", "designs.csv", "truth.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (h, eval) = dist_dca::datagen::read_dataset::<f32>(a.join("eval.fmts")).unwrap();
    assert_eq!((h.n_signals, h.length, eval.len()), (0, 284, 0));
}

#[test]
fn single_worker_f64_training_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replacen('{', r#"{"precision": "f64","#, 1);
    let cfg = write_config(tmp.path(), "c.json", &text);
    let data = tmp.path().join("data");
    ok(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap()]);
    let mut models = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let with_data = write_config(
            tmp.path(),
            &format!("{run}.json"),
            &text.replacen('{', &format!(r#"{{"data_dir": {:?},"#, data.to_str().unwrap()), 1),
        );
        ok(&["train", "--config", &with_data, "--out", out.to_str().unwrap(), "--workers", "1"]);
        models.push(std::fs::read(out.join("model.dpsg")).unwrap());
    }
    assert_eq!(models[0], models[1]);
    assert_eq!(dist_dca::ps::model_precision(&models[0]).unwrap(), dist_dca::Precision::F64);
}

#[test]
fn socket_training_runs_worker_processes() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace(r#""batch_size": 16"#, r#""batch_size": 8, "transport": "socket""#);
    let cfg = write_config(tmp.path(), "c.json", &text);
    let o = tmp.path().join("run");
    ok(&["gen-data", "--config", &cfg, "--out", o.to_str().unwrap()]);
    ok(&["train", "--config", &cfg, "--out", o.to_str().unwrap(), "--workers", "3"]);
    // 64 signals over 3 workers in batches of 8, two epochs.
    assert_eq!(rows(&o.join("loss.csv")), 2 * (3 + 3 + 3));
    let resolved = dist_dca::cli::RunConfig::read_resolved(&o.join("train.config.json")).unwrap();
    assert_eq!(resolved.run.worker_count, 3);
}

#[test]
fn export_of_a_fresh_default_model_gives_its_initial_filters() {
    let tmp = tempfile::tempdir().unwrap();
    let model = build_model::<f32>(&ModelConfig::default(), 12).unwrap();
    let path = tmp.path().join("fresh.dpsg");
    write_model(&path, &model).unwrap();
    let cfg = write_config(tmp.path(), "c.json", &format!(r#"{{"model_path": {:?}}}"#, path.to_str().unwrap()));
    let o = tmp.path().join("out");
    ok(&["export-filters", "--config", &cfg, "--out", o.to_str().unwrap()]);
    let back = read_filters_csv(std::fs::File::open(o.join("filters.csv")).unwrap()).unwrap();
    let init = export_first_layer_filters(&model);
    assert_eq!((back.len(), back[0].len()), (32, 21));
    for (a, b) in back.iter().zip(&init) {
        assert!(a.iter().zip(b).all(|(x, y)| *x as f32 == *y));
    }
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("out");
    let o = o.to_str().unwrap();

    let bad_key = write_config(tmp.path(), "bad.json", r#"{"run": {"epochz": 1}}"#);
    assert_eq!(dca(&["train", "--config", &bad_key, "--out", o]).status.code(), Some(2));
    assert_eq!(dca(&["train", "--bogus-flag"]).status.code(), Some(2));

    let missing = dca(&["validate", "--out", o]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("model.dpsg"));
    assert_eq!(dca(&["train", "--config", "/nonexistent/c.json"]).status.code(), Some(3));

    let huge = SMALL.replacen('{', r#"{"server": {"gamma": 1e300},"#, 1);
    let cfg = write_config(tmp.path(), "huge.json", &huge);
    ok(&["gen-data", "--config", &cfg, "--out", o]);
    let diverged = dca(&["train", "--config", &cfg, "--out", o]);
    assert_eq!(diverged.status.code(), Some(5), "{}", String::from_utf8_lossy(&diverged.stderr));
    assert!(Path::new(o).join("loss.csv").exists(), "partial report written");
}
