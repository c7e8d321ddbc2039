use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tagtune::config::Settings;
use tagtune::formats::{load_graph, ModelCheckpoint};

const SMALL: &str = "\
nodes = 45
pretrain-steps = 30
d-model = 16
d-ff = 24
n-layers = 1
gnn-dims = 8
projector-hidden = 12
epochs = 4
lr = 0.01
threshold = 0.3
max-rounds = 2
ratio = 0.2
";

fn tagtune(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_tagtune")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.conf"), SMALL).unwrap();
    dir
}

#[test]
fn show_config_round_trips() {
    let dir = setup();
    let out = tagtune(dir.path(), &["show-config", "-c", "small.conf", "--seed", "4", "--threshold", "-inf"]);
    let mut s = Settings::default();
    s.apply_text(&String::from_utf8(out.stdout).unwrap(), Path::new("stdout")).unwrap();
    assert_eq!(s.seed, 4);
    assert_eq!(s.synthetic.nodes, 45);
    assert_eq!(s.selftrain.threshold, f64::NEG_INFINITY);
}

#[test]
fn bad_settings_fail_cleanly() {
    let dir = setup();
    let run = |args: &[&str]| Command::new(env!("CARGO_BIN_EXE_tagtune")).current_dir(dir.path()).args(args).output().unwrap();
    let out = run(&["show-config", "--epochs", "many"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));
    fs::write(dir.path().join("bad.conf"), "nodes = 10\nwat = 1\n").unwrap();
    let out = run(&["show-config", "-c", "bad.conf"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.conf:2"));
}

#[test]
fn end_to_end_workflow() {
    let dir = setup();
    let d = dir.path();
    tagtune(d, &["gen-data", "-c", "small.conf", "-o", "graph.json"]);
    assert_eq!(load_graph(&d.join("graph.json")).unwrap().node_count(), 45);
    tagtune(d, &["pretrain-decoder", "-c", "small.conf", "--graph", "graph.json", "-o", "dec.json"]);

    let common = ["-c", "small.conf", "--graph", "graph.json", "--decoder", "dec.json"];
    let with = |extra: &[&'static str]| -> Vec<&str> { common.iter().copied().chain(extra.iter().copied()).collect() };

    tagtune(d, &[&["selftrain"][..], &with(&["-o", "st"])].concat());
    for f in ["results.csv", "rounds.csv", "scores.csv", "losses.csv", "checkpoint.json", "manifest.json"] {
        assert!(d.join("st").join(f).is_file(), "{f}");
    }

    // two runs of 2 epochs continue into the same state as one run of 4
    tagtune(d, &[&["train"][..], &with(&["--epochs", "4", "-o", "m4.json"])].concat());
    tagtune(d, &[&["train"][..], &with(&["--epochs", "2", "-o", "m2.json"])].concat());
    tagtune(d, &[&["train"][..], &with(&["--epochs", "2", "--resume", "m2.json", "-o", "m2b.json"])].concat());
    let a = ModelCheckpoint::load(&d.join("m4.json")).unwrap();
    let b = ModelCheckpoint::load(&d.join("m2b.json")).unwrap();
    assert_eq!(a.params_digest, b.params_digest);
    assert_eq!(b.round, 2);

    let out = tagtune(d, &[&["eval"][..], &with(&["--model", "m4.json", "--predictions", "pred.csv"])].concat());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let acc = report["accuracy"].as_f64().unwrap();
    let pred = fs::read_to_string(d.join("pred.csv")).unwrap();
    let rows: Vec<&str> = pred.lines().skip(1).collect();
    let correct = rows
        .iter()
        .filter(|l| {
            let f: Vec<&str> = l.split(',').collect();
            !f[2].is_empty() && f[1] == f[2]
        })
        .count();
    assert_eq!(rows.len() as u64, report["n_eval"].as_u64().unwrap());
    assert_eq!(acc, correct as f64 / rows.len() as f64);

    tagtune(d, &[&["sweep"][..], &with(&["--seeds", "0,1", "--ratios", "0.2,0.5", "-o", "sweep"])].concat());
    tagtune(d, &[&["ablate"][..], &with(&["-o", "ablate"])].concat());
    let results = fs::read_to_string(d.join("ablate/results.csv")).unwrap();
    for v in ["full", "supervised-only", "wo-gnn", "wo-ap", "wo-cf"] {
        assert!(results.lines().any(|l| l.split(',').nth(2) == Some(v)), "{v}");
    }
}

#[test]
fn convert_cora_writes_graph() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("cora.content"), "10\t1\t0\tA\n20\t0\t1\tB\n30\t1\t1\tA\n").unwrap();
    fs::write(d.join("cora.cites"), "10\t20\n20\t30\n30\t30\n").unwrap();
    let out = tagtune(d, &["convert-cora", "--content", "cora.content", "--cites", "cora.cites", "-o", "cora.json"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["edges"], 2);
    assert_eq!(report["dropped_self_citations"], 1);
    let g = load_graph(&d.join("cora.json")).unwrap();
    assert_eq!(g.node_count(), 3);
    assert_eq!(g.text(2), "w0 w1");
}
