use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dagcn::model::Checkpoint;
use serde_json::Value;
use tempfile::TempDir;

const RUNNING: &str = "U1\tA:A1 B:B1 A:A2 B:B2 B:B3 A:A3 B:B4\n";

fn dagcn(args: &[&str]) -> Output {
    dagcn_env(args, &[])
}

fn dagcn_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dagcn"));
    cmd.args(args).env_remove("DAGCN_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn small_corpus(dir: &TempDir) -> PathBuf {
    let spec = write(
        dir,
        "spec.txt",
        "n_accounts = 24\nitems_per_domain = 16\nclusters_per_domain = 2\nseq_len = 10\nrng_seed = 5\n",
    );
    let log = dir.path().join("synth.log");
    let o = dagcn(&["gen-synth", "--spec", s(&spec), "--out", s(&log)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    log
}

fn quick_config(dir: &TempDir) -> PathBuf {
    write(
        dir,
        "quick.cfg",
        "# tiny run\nd = 4\nmax_epochs = 2\nbatch_size = 8\n",
    )
}

fn load(path: &Path) -> Checkpoint {
    Checkpoint::read_from(&std::fs::read(path).unwrap()[..]).unwrap()
}

#[test]
fn build_graph_exports_running_example() {
    let dir = TempDir::new().unwrap();
    let log = write(&dir, "run.log", RUNNING);
    let out = dir.path().join("g");
    let o = dagcn(&["build-graph", "--input", s(&log), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let read = |n: &str| std::fs::read_to_string(out.join(n)).unwrap();
    assert_eq!(read("gc.tsv"), "A1\tA2\t1\nA2\tA3\t1\n");
    assert_eq!(read("gd.tsv"), "B1\tB2\t1\nB2\tB3\t1\nB3\tB4\t1\n");
    assert_eq!(read("ga.tsv").lines().count(), 3);
    assert_eq!(read("gb.tsv").lines().count(), 4);
    let stats: Value = serde_json::from_str(&read("stats.json")).unwrap();
    assert_eq!(stats["edges_gc"], 2);
    let manifest: Value = serde_json::from_str(&read("manifest.json")).unwrap();
    assert_eq!(manifest["command"], "build-graph");
    assert_eq!(
        manifest["config"]["graph"]["include_sequential_edges"],
        true
    );
}

#[test]
fn build_graph_without_sequential_edges() {
    let dir = TempDir::new().unwrap();
    let log = write(&dir, "run.log", RUNNING);
    let out = dir.path().join("g");
    let o = dagcn(&[
        "build-graph",
        "--input",
        s(&log),
        "--out",
        s(&out),
        "--no-sequential",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(out.join("gc.tsv")).unwrap(), "");
    assert_eq!(std::fs::read_to_string(out.join("gd.tsv")).unwrap(), "");
    assert_ne!(std::fs::read_to_string(out.join("ga.tsv")).unwrap(), "");
}

#[test]
fn build_graph_min_count_drops_rare_transitions() {
    let dir = TempDir::new().unwrap();
    let log = write(&dir, "run.log", "U1\tA:x A:y A:z\nU2\tA:x A:y\n");
    let out = dir.path().join("g");
    let o = dagcn(&[
        "build-graph",
        "--input",
        s(&log),
        "--out",
        s(&out),
        "--min-count",
        "2",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read_to_string(out.join("gc.tsv")).unwrap(),
        "x\ty\t2\n"
    );
}

#[test]
fn missing_input_is_an_io_failure() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere.log");
    let o = dagcn(&[
        "build-graph",
        "--input",
        s(&missing),
        "--out",
        s(&dir.path().join("g")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("nowhere.log"), "{}", stderr(&o));
}

#[test]
fn unparseable_log_is_a_user_error() {
    let dir = TempDir::new().unwrap();
    let log = write(&dir, "bad.log", "no tab here\nU1\tC:x A:y\nU2\tA:x\n");
    let o = dagcn(&[
        "build-graph",
        "--input",
        s(&log),
        "--out",
        s(&dir.path().join("g")),
    ]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(
        err.contains(":1:") && err.contains(":2:") && err.contains(":3:"),
        "{err}"
    );
}

#[test]
fn train_records_h_and_variants() {
    let dir = TempDir::new().unwrap();
    let log = small_corpus(&dir);
    let cfg = quick_config(&dir);
    let cases: [(&[&str], usize, &str); 5] = [
        (&["--h", "1"], 1, "full"),
        (&["--h", "2"], 2, "full"),
        (&["--no-sequential"], 2, "GCN_OS"),
        (&["--no-attention"], 2, "GCN_OA"),
        (&["--no-attention", "--no-sequential"], 2, "GCN_OSA"),
    ];
    for (i, (flags, h, variant)) in cases.iter().enumerate() {
        let out = dir.path().join(format!("m{i}.ckpt"));
        let mut args = vec![
            "train",
            "--input",
            s(&log),
            "--config",
            s(&cfg),
            "--out",
            s(&out),
        ];
        args.extend_from_slice(flags);
        let o = dagcn(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let ck = load(&out);
        assert_eq!(ck.meta.config.h, *h);
        assert_eq!(ck.meta.manifest["variant"], *variant);
        assert_eq!(ck.meta.manifest["config"]["model"]["d"], 4);
        assert_eq!(ck.meta.config.d_prime, 4);
        let log_lines =
            std::fs::read_to_string(dir.path().join(format!("m{i}.ckpt.log.jsonl"))).unwrap();
        assert_eq!(log_lines.lines().count(), 2);
        let first: Value = serde_json::from_str(log_lines.lines().next().unwrap()).unwrap();
        assert_eq!(first["epoch"], 1);
    }
}

#[test]
fn train_rejects_h_out_of_range() {
    let dir = TempDir::new().unwrap();
    let log = small_corpus(&dir);
    let out = dir.path().join("m.ckpt");
    let o = dagcn(&["train", "--input", s(&log), "--out", s(&out), "--h", "6"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("[1, 5]"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn config_errors_are_user_errors() {
    let dir = TempDir::new().unwrap();
    let log = small_corpus(&dir);
    let out = s(&dir.path().join("m.ckpt")).to_owned();
    let bad_key = write(&dir, "k.cfg", "colour = blue\n");
    let o = dagcn(&[
        "train",
        "--input",
        s(&log),
        "--config",
        s(&bad_key),
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("colour"));
    let bad_val = write(&dir, "v.cfg", "lr = fast\n");
    assert_eq!(
        code(&dagcn(&[
            "train",
            "--input",
            s(&log),
            "--config",
            s(&bad_val),
            "--out",
            &out
        ])),
        2
    );
    let missing = dir.path().join("none.cfg");
    assert_eq!(
        code(&dagcn(&[
            "train",
            "--input",
            s(&log),
            "--config",
            s(&missing),
            "--out",
            &out
        ])),
        1
    );
    assert_eq!(
        code(&dagcn(&[
            "--threads",
            "0",
            "train",
            "--input",
            s(&log),
            "--out",
            &out
        ])),
        2
    );
    assert_eq!(
        code(&dagcn_env(
            &["train", "--input", s(&log), "--out", &out],
            &[("DAGCN_SEED", "abc")]
        )),
        2
    );
}

#[test]
fn flags_win_over_config_and_env_seed_wins_over_both() {
    let dir = TempDir::new().unwrap();
    let log = small_corpus(&dir);
    let cfg = write(&dir, "c.cfg", "d = 4\nmax_epochs = 1\nh = 1\nseed = 3\n");
    let out = dir.path().join("m.ckpt");
    let args = [
        "train",
        "--input",
        s(&log),
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--h",
        "3",
    ];
    assert_eq!(code(&dagcn(&args)), 0);
    let ck = load(&out);
    assert_eq!(ck.meta.config.h, 3);
    assert_eq!(ck.meta.seed, 3);
    let o = dagcn_env(&args, &[("DAGCN_SEED", "11")]);
    assert_eq!(code(&o), 0);
    let ck = load(&out);
    assert_eq!(ck.meta.seed, 11);
    assert_eq!(ck.meta.manifest["seed"], 11);
    assert_eq!(ck.meta.manifest["config"]["train"]["seed"], 11);
}

fn assert_metrics_schema(v: &Value) {
    let obj = v.as_object().unwrap();
    assert_eq!(obj.len(), 3);
    for d in ["domain_A", "domain_B"] {
        let m = v[d].as_object().unwrap();
        assert_eq!(m.len(), 5);
        for k in ["mrr5", "mrr20", "recall5", "recall20"] {
            let x = m[k].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&x));
        }
        assert!(m["n"].is_u64());
        assert!(m["recall5"].as_f64() <= m["recall20"].as_f64());
        assert!(m["mrr5"].as_f64() <= m["mrr20"].as_f64());
    }
    let meta = v["meta"].as_object().unwrap();
    assert_eq!(meta.len(), 3);
    let hex = |s: &str, n: usize| s.len() == n && s.bytes().all(|b| b.is_ascii_hexdigit());
    assert!(hex(meta["checkpoint"].as_str().unwrap(), 64));
    assert!(hex(meta["config_hash"].as_str().unwrap(), 12));
    assert!(meta["seed"].is_u64());
}

#[test]
fn evaluate_prints_schema_conformant_json() {
    let dir = TempDir::new().unwrap();
    let log = small_corpus(&dir);
    let cfg = quick_config(&dir);
    let ckpt = dir.path().join("m.ckpt");
    assert_eq!(
        code(&dagcn(&[
            "train",
            "--input",
            s(&log),
            "--config",
            s(&cfg),
            "--out",
            s(&ckpt)
        ])),
        0
    );
    for split in ["test", "valid", "train"] {
        let o = dagcn(&[
            "evaluate",
            "--ckpt",
            s(&ckpt),
            "--input",
            s(&log),
            "--split",
            split,
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_metrics_schema(&v);
        assert!(dir
            .path()
            .join(format!("m.ckpt.{split}.manifest.json"))
            .exists());
    }
}

#[test]
fn single_item_domains_give_perfect_metrics() {
    // one candidate per domain: every target ranks first
    let dir = TempDir::new().unwrap();
    let log = write(
        &dir,
        "one.log",
        &(0..12)
            .map(|k| format!("u{k}\tA:x B:y A:x B:y A:x B:y\n"))
            .collect::<String>(),
    );
    let cfg = quick_config(&dir);
    let ckpt = dir.path().join("m.ckpt");
    assert_eq!(
        code(&dagcn(&[
            "train",
            "--input",
            s(&log),
            "--config",
            s(&cfg),
            "--out",
            s(&ckpt)
        ])),
        0
    );
    let o = dagcn(&["evaluate", "--ckpt", s(&ckpt), "--input", s(&log)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    for d in ["domain_A", "domain_B"] {
        for k in ["mrr5", "mrr20", "recall5", "recall20"] {
            assert_eq!(v[d][k], 1.0, "{d} {k}");
        }
    }
}

#[test]
fn mismatched_vocabulary_is_rejected() {
    let dir = TempDir::new().unwrap();
    let log = small_corpus(&dir);
    let cfg = quick_config(&dir);
    let ckpt = dir.path().join("m.ckpt");
    assert_eq!(
        code(&dagcn(&[
            "train",
            "--input",
            s(&log),
            "--config",
            s(&cfg),
            "--out",
            s(&ckpt)
        ])),
        0
    );
    let mut other = std::fs::read_to_string(&log).unwrap();
    other.push_str("stranger\tA:new1 B:new2 A:new3\n");
    let other = write(&dir, "other.log", &other);
    let o = dagcn(&["evaluate", "--ckpt", s(&ckpt), "--input", s(&other)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = TempDir::new().unwrap();
    let log = small_corpus(&dir);
    let ckpt = write(&dir, "m.ckpt", "not a checkpoint\n");
    assert_eq!(
        code(&dagcn(&[
            "evaluate",
            "--ckpt",
            s(&ckpt),
            "--input",
            s(&log)
        ])),
        2
    );
}

#[test]
fn train_and_evaluate_are_byte_identical() {
    let src = TempDir::new().unwrap();
    let log = std::fs::read(small_corpus(&src)).unwrap();
    let cfg = std::fs::read(quick_config(&src)).unwrap();
    let run = || {
        let dir = TempDir::new().unwrap();
        std::fs::write(dir.path().join("in.log"), &log).unwrap();
        std::fs::write(dir.path().join("run.cfg"), &cfg).unwrap();
        let go = |args: &[&str]| {
            let o = Command::new(env!("CARGO_BIN_EXE_dagcn"))
                .args(args)
                .current_dir(dir.path())
                .env_remove("DAGCN_SEED")
                .output()
                .unwrap();
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            o.stdout
        };
        go(&[
            "--threads",
            "1",
            "train",
            "--input",
            "in.log",
            "--config",
            "run.cfg",
            "--out",
            "m.ckpt",
        ]);
        let metrics = go(&[
            "--threads",
            "1",
            "evaluate",
            "--ckpt",
            "m.ckpt",
            "--input",
            "in.log",
        ]);
        (std::fs::read(dir.path().join("m.ckpt")).unwrap(), metrics)
    };
    let (c1, m1) = run();
    let (c2, m2) = run();
    assert!(c1 == c2, "checkpoints differ");
    assert_eq!(m1, m2);
}

#[test]
fn grad_check_passes_and_detects_fault() {
    let o = dagcn(&["grad-check"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert!(v["report"]["max_rel_error"].as_f64().unwrap() < 1e-4);
    assert!(stderr(&o).contains("PASS"));

    let o = dagcn(&["grad-check", "--inject-fault"]);
    assert_eq!(code(&o), 1);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["passed"], false);
    assert!(v["report"]["max_rel_error"].as_f64().unwrap() > 0.4);
}

#[test]
fn grad_check_literal_mode_from_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "g.cfg", "attention_mode = literal\nh = 3\n");
    let o = dagcn(&["grad-check", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(
        v["manifest"]["config"]["model"]["attention_mode"],
        "literal"
    );
}

#[test]
fn gen_synth_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let spec = write(
        &dir,
        "spec.txt",
        "n_accounts = 10\nitems_per_domain = 12\nseq_len = 8\n",
    );
    let a = dir.path().join("a.log");
    let b = dir.path().join("b.log");
    assert_eq!(
        code(&dagcn(&["gen-synth", "--spec", s(&spec), "--out", s(&a)])),
        0
    );
    assert_eq!(
        code(&dagcn(&["gen-synth", "--spec", s(&spec), "--out", s(&b)])),
        0
    );
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    let la = dir.path().join("a.log.labels");
    assert_eq!(read(&la), read(&dir.path().join("b.log.labels")));
    let text = String::from_utf8(read(&a)).unwrap();
    let labels = String::from_utf8(read(&la)).unwrap();
    assert_eq!(text.lines().count(), 10);
    for (line, lab) in text.lines().zip(labels.lines()) {
        let events = line.split('\t').nth(1).unwrap().split(' ').count();
        assert_eq!(lab.split('\t').nth(1).unwrap().split(' ').count(), events);
    }

    let c = dir.path().join("c.log");
    let o = dagcn_env(
        &["gen-synth", "--spec", s(&spec), "--out", s(&c)],
        &[("DAGCN_SEED", "9")],
    );
    assert_eq!(code(&o), 0);
    assert_ne!(read(&a), read(&c));
    let manifest: Value =
        serde_json::from_slice(&read(&dir.path().join("c.log.manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 9);
}

#[test]
fn gen_synth_rejects_bad_spec() {
    let dir = TempDir::new().unwrap();
    let spec = write(
        &dir,
        "spec.txt",
        "personas_per_account = 5\nclusters_per_domain = 2\n",
    );
    let o = dagcn(&[
        "gen-synth",
        "--spec",
        s(&spec),
        "--out",
        s(&dir.path().join("x.log")),
    ]);
    assert_eq!(code(&o), 2);
}
