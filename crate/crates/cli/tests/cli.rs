//! End-to-end checks of the focus binary: artifacts, exit codes, and
//! determinism across the five subcommands.

use std::path::Path;
use std::process::{Command, Output};

use focus_core::checkpoint::save_checkpoint;
use focus_core::layer::FocusConfig;
use focus_core::model::init_model;
use focus_core::optim::{AdamConfig, AdamW};

fn focus() -> Command {
    Command::new(env!("CARGO_BIN_EXE_focus"))
}

const TINY: &[&str] = &[
    "--task", "recall", "--L", "6", "--d", "8", "--n-layers", "1", "--set", "o=1", "--set",
    "vocab=6", "--n-samples", "30", "--max-epochs", "3", "--batch", "8",
];

fn train_tiny(out: &Path, extra: &[&str]) -> Output {
    let o = focus()
        .arg("train")
        .args(TINY)
        .args(["--seed", "11", "--out"])
        .arg(out)
        .args(extra)
        .output()
        .unwrap();
    assert!(
        o.status.success(),
        "tiny train failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn stdout_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stdout);
    let line = text
        .lines()
        .find(|l| l.starts_with('{'))
        .unwrap_or_else(|| panic!("no JSON line in stdout: {text}"));
    serde_json::from_str(line).unwrap()
}

#[test]
fn train_writes_artifacts_and_eval_reproduces_the_metric() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    train_tiny(&out, &[]);
    for name in ["checkpoint.bin", "train_log.csv", "metrics.json"] {
        assert!(out.join(name).exists(), "missing artifact {name}");
    }
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,step,lr,loss,metric\n"), "log header: {log}");
    assert_eq!(log.lines().count(), 4, "3 epochs + header, got: {log}");

    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let trained_metric = metrics["final_metric"].as_f64().unwrap();

    let o = focus()
        .arg("eval")
        .args(TINY)
        .args(["--seed", "11", "--checkpoint"])
        .arg(out.join("checkpoint.bin"))
        .output()
        .unwrap();
    assert!(o.status.success(), "eval failed: {}", String::from_utf8_lossy(&o.stderr));
    let evaluated = stdout_json(&o);
    assert_eq!(
        evaluated["metric"].as_f64().unwrap(),
        trained_metric,
        "eval after train must reproduce the final train-time metric exactly"
    );
    assert_eq!(evaluated["metric_name"], "accuracy");
}

#[test]
fn seed_env_var_is_a_fallback_and_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = focus()
            .arg("train")
            .args(TINY)
            .arg("--out")
            .arg(out)
            .env("FOCUS_SEED", "11")
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ck_a = std::fs::read(a.join("checkpoint.bin")).unwrap();
    let ck_b = std::fs::read(b.join("checkpoint.bin")).unwrap();
    assert_eq!(ck_a, ck_b, "same env seed must give identical checkpoints");

    let c = dir.path().join("c");
    train_tiny(&c, &[]);
    let ck_c = std::fs::read(c.join("checkpoint.bin")).unwrap();
    assert_eq!(ck_a, ck_c, "--seed 11 and FOCUS_SEED=11 must agree");
}

#[test]
fn gen_data_cache_feeds_train_identically() {
    let dir = tempfile::tempdir().unwrap();
    let o = focus()
        .arg("gen-data")
        .args(TINY)
        .args(["--seed", "11", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cache = dir.path().join("data.bin");
    assert!(cache.exists());

    let from_cache = dir.path().join("cached");
    let o = focus()
        .arg("train")
        .args(TINY)
        .args(["--seed", "11", "--out"])
        .arg(&from_cache)
        .arg("--data")
        .arg(&cache)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let direct = dir.path().join("direct");
    train_tiny(&direct, &[]);
    assert_eq!(
        std::fs::read(from_cache.join("checkpoint.bin")).unwrap(),
        std::fs::read(direct.join("checkpoint.bin")).unwrap(),
        "training from the cache must match training from generated data"
    );
}

#[test]
fn char_task_trains_on_a_byte_corpus_and_reports_bpc() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.txt");
    std::fs::write(&corpus, "the quick onyx goblin jumps over the lazy dwarf. ".repeat(8)).unwrap();
    let out = dir.path().join("run");
    let o = focus()
        .arg("train")
        .args(["--task", "char", "--L", "8", "--d", "8", "--n-layers", "1"])
        .args(["--set", "o=1", "--set", "vocab=256", "--max-epochs", "2"])
        .args(["--batch", "8", "--seed", "11", "--corpus"])
        .arg(&corpus)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "char train failed: {}", String::from_utf8_lossy(&o.stderr));
    let metrics = stdout_json(&o);
    assert_eq!(metrics["task"], "char");
    let bpc = metrics["final_metric"].as_f64().unwrap();
    assert!(bpc.is_finite() && bpc > 0.0, "bpc {bpc} should be a positive number of bits");

    let o = focus()
        .arg("eval")
        .args(["--task", "char", "--seed", "11", "--corpus"])
        .arg(&corpus)
        .args(["--checkpoint"])
        .arg(out.join("checkpoint.bin"))
        .output()
        .unwrap();
    assert!(o.status.success(), "char eval failed: {}", String::from_utf8_lossy(&o.stderr));
    let evaluated = stdout_json(&o);
    assert_eq!(evaluated["metric_name"], "bpc");
    assert_eq!(
        evaluated["metric"].as_f64().unwrap(),
        bpc,
        "char eval must reproduce the train-time bpc"
    );
}

#[test]
fn missing_config_file_exits_2_and_names_the_path() {
    let o = focus()
        .args(["train", "--config", "/no/such/focus.conf"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("/no/such/focus.conf"), "stderr: {err}");
}

#[test]
fn unknown_config_key_exits_2_and_names_the_key() {
    let o = focus().args(["train", "--set", "bogus=1"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bogus"), "stderr: {err}");
}

#[test]
fn shape_mismatch_on_eval_exits_3_and_names_the_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    train_tiny(&out, &[]);
    let o = focus()
        .arg("eval")
        .args(["--seed", "11", "--set", "d=16", "--checkpoint"])
        .arg(out.join("checkpoint.bin"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("param."), "must name a tensor, stderr: {err}");
}

#[test]
fn corrupted_checkpoint_magic_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    train_tiny(&out, &[]);
    let path = out.join("checkpoint.bin");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    let o = focus()
        .arg("eval")
        .args(TINY)
        .args(["--seed", "11", "--checkpoint"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn divergent_learning_rate_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = focus()
        .arg("train")
        .args(TINY)
        .args(["--seed", "11", "--lr", "1e200", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("diverged"), "stderr: {err}");
}

#[test]
fn untrained_model_evaluates_at_chance_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = FocusConfig::new(30, 8);
    let store = init_model(&cfg, 123).unwrap();
    let opt = AdamW::new(AdamConfig::default(), &store);
    let path = dir.path().join("blank.bin");
    save_checkpoint(&path, &cfg, &store, &opt).unwrap();

    let o = focus()
        .arg("eval")
        .args(["--seed", "77", "--n-samples", "1000", "--checkpoint"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let acc = stdout_json(&o)["metric"].as_f64().unwrap();
    assert!(
        (0.0..=0.15).contains(&acc),
        "untrained recall accuracy {acc} should sit at chance level"
    );
}

#[test]
fn inspect_filters_writes_the_response_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    train_tiny(&out, &[]);
    let o = focus()
        .arg("inspect-filters")
        .args(["--seed", "11", "--checkpoint"])
        .arg(out.join("checkpoint.bin"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = std::fs::read_to_string(out.join("filters.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert_eq!(header, "freq,bin0,bin1,bin2", "L=6 with nfft=2 gives 3 bins");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2, "one row per frequency, nfft=2");
    for row in rows {
        assert_eq!(row.split(',').count(), 4);
        for cell in row.split(',').skip(1) {
            let v: f64 = cell.parse().unwrap();
            assert!(v.is_finite() && v >= 0.0, "magnitudes are non-negative, got {v}");
        }
    }
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("(query)"), "stdout marks the query bin: {text}");
}

#[test]
fn untrained_filters_have_small_spread_across_bins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = FocusConfig::new(30, 8);
    let store = init_model(&cfg, 9).unwrap();
    let opt = AdamW::new(AdamConfig::default(), &store);
    let path = dir.path().join("blank.bin");
    save_checkpoint(&path, &cfg, &store, &opt).unwrap();

    let o = focus()
        .arg("inspect-filters")
        .args(["--seed", "9", "--checkpoint"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = std::fs::read_to_string(dir.path().join("filters.csv")).unwrap();
    let mut peaks = vec![0.0f64; cfg.nbins()];
    for line in csv.lines().skip(1) {
        for (b, cell) in line.split(',').skip(1).enumerate() {
            peaks[b] = peaks[b].max(cell.parse().unwrap());
        }
    }
    let hi = peaks.iter().fold(0.0f64, |a, &b| a.max(b));
    let lo = peaks.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    assert!(
        hi / lo < 10.0,
        "untrained per-bin responses should be near-identical, spread {}",
        hi / lo
    );
}

#[test]
fn inspect_filters_without_checkpoint_fails() {
    let o = focus()
        .args(["inspect-filters", "--checkpoint", "/no/such/ck.bin"])
        .output()
        .unwrap();
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn bench_emits_csv_and_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let o = focus()
        .args(["bench", "--ls", "64,128", "--d", "8", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "impl,l,seconds,flops");
    assert_eq!(lines.len(), 5, "two impls x two lengths + header: {csv}");
    assert_eq!(csv.matches("focus,").count(), 2);
    assert_eq!(csv.matches("attention,").count(), 2);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("focus slope"), "stdout: {text}");
    assert!(text.contains("attention slope"), "stdout: {text}");
}
