use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use mmen::autodiff::ParamStore;

fn mmen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mmen(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen_tiny(dir: &Path) {
    ok(&[
        "gen",
        "--out",
        dir.to_str().unwrap(),
        "--graphs",
        "10",
        "--min-nodes",
        "30",
        "--max-nodes",
        "60",
        "--seed",
        "3",
    ]);
}

#[test]
fn gen_writes_graphs_and_splits() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    gen_tiny(&a);
    gen_tiny(&b);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let len = |k: &str| manifest[k].as_array().unwrap().len();
    assert_eq!(len("graphs"), 10);
    assert_eq!(len("train") + len("val") + len("test"), 10);
    for name in manifest["graphs"].as_array().unwrap() {
        let name = name.as_str().unwrap();
        assert!(a.join(name).join("edges.tsv").exists());
        assert_eq!(
            fs::read(a.join(name).join("edges.tsv")).unwrap(),
            fs::read(b.join(name).join("edges.tsv")).unwrap()
        );
    }
}

#[test]
fn train_score_compare_round() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let model = tmp.path().join("model");
    gen_tiny(&data);

    let start = Instant::now();
    let stdout = ok(&["train", "--data", data.to_str().unwrap(), "--out", model.to_str().unwrap()]);
    assert!(start.elapsed() < Duration::from_secs(60));
    assert!(stdout.contains("final val loss"), "{stdout}");
    let history = fs::read_to_string(model.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss\n"));

    let ck = model.join("best.ckpt");
    let graph = data.join("g009");
    let scores = tmp.path().join("scores.csv");
    let score_args = [
        "score",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--graph",
        graph.to_str().unwrap(),
        "--out",
        scores.to_str().unwrap(),
    ];
    ok(&score_args);
    let first = fs::read(&scores).unwrap();
    ok(&score_args);
    assert_eq!(first, fs::read(&scores).unwrap());

    let mut rd = csv::Reader::from_path(&scores).unwrap();
    assert_eq!(
        rd.headers().unwrap().iter().collect::<Vec<_>>(),
        ["node", "score", "s_user", "s_struct", "w_user", "w_stru", "is_seed"]
    );
    let mut n = 0;
    let mut seeds = 0;
    for rec in rd.records() {
        let rec = rec.unwrap();
        let wu: f64 = rec[4].parse().unwrap();
        let ws: f64 = rec[5].parse().unwrap();
        assert!((wu + ws - 1.0).abs() < 1e-12);
        seeds += usize::from(&rec[6] == "1");
        n += 1;
    }
    assert_eq!(seeds, (0.05 * n as f64).ceil() as usize);

    let out = tmp.path().join("cmp");
    ok(&[
        "compare",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "--methods",
        "mmen,degree,random",
        "--runs",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    let mut rd = csv::Reader::from_path(out.join("report.csv")).unwrap();
    assert_eq!(
        rd.headers().unwrap().iter().collect::<Vec<_>>(),
        ["graph", "method", "st_mean", "st_stderr", "r", "mu", "runs", "fraction"]
    );
    let methods: Vec<String> = rd.records().map(|r| r.unwrap()[1].to_string()).collect();
    assert_eq!(methods, ["mmen", "degree", "random"]);
    assert!(fs::read_to_string(out.join("report.txt")).unwrap().contains("random"));
}

#[test]
fn ablation_epochs_and_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let model = tmp.path().join("model");
    gen_tiny(&data);
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "epochs = 5\nablate = no-memory\nheads = 2\nhead_dim = 4\n").unwrap();
    ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--epochs",
        "1",
        "--dump-features",
    ]);
    let history = fs::read_to_string(model.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
    let params = ParamStore::load(model.join("best.ckpt")).unwrap();
    assert!(params.names().iter().all(|n| !n.contains(".mem")));
    assert!(params.contains("user.gat0.head1.w") && !params.contains("user.gat0.head2.w"));
    assert!(model.join("features").join("g000.csv").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_tiny(&data);
    let out = tmp.path().join("cmp");
    let bad_method = mmen(&[
        "compare",
        "--data",
        data.to_str().unwrap(),
        "--methods",
        "degree,pagerank",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(bad_method.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_method.stderr).contains("leaderrank"));

    assert_eq!(mmen(&["train", "--bogus"]).status.code(), Some(1));
    let missing = mmen(&[
        "train",
        "--data",
        tmp.path().join("nope").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("manifest.json"));
    assert_eq!(mmen(&["--help"]).status.code(), Some(0));
}

#[test]
fn score_rejects_mismatched_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_tiny(&data);
    let mut p = ParamStore::new();
    p.insert("struct.in.w", ndarray::Array2::zeros((3, 4))).unwrap();
    let ck = tmp.path().join("bad.ckpt");
    p.save(&ck).unwrap();
    let out = mmen(&[
        "score",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--graph",
        data.join("g000").to_str().unwrap(),
        "--out",
        tmp.path().join("s.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("struct."), "{err}");
}
