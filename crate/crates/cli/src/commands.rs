//! The five subcommands: data generation, training, evaluation, filter
//! inspection, and forward-pass benchmarking.

use std::io::Write;
use std::path::Path;

use focus_core::bench::{bench_focus, bench_full_attention, slope_of};
use focus_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use focus_core::data::{byte_windows, gen_recall, load_recall, save_recall, RecallSample};
use focus_core::layer::FocusConfig;
use focus_core::model::{bind_model, init_model, layer_theta};
use focus_core::optim::AdamW;
use focus_core::spectral::response_matrix;
use focus_core::tensor::Tape;
use focus_core::train::{
    eval_char_bpc, eval_recall, train_char_observed, train_recall_observed, write_log_csv,
    LogRow, TrainReport,
};
use focus_core::{FocusError, Result};

use crate::config::{resolve, resolve_with_model, seed_fallback, Resolved, Task};
use crate::CfgArgs;

type CharWindows = Vec<(Vec<usize>, Vec<usize>)>;

fn recall_data(r: &Resolved, cache: Option<&Path>) -> Result<(Vec<RecallSample>, Vec<RecallSample>)> {
    let samples = match cache {
        Some(path) => load_recall(path)?,
        None => gen_recall(r.model.vocab, r.model.l, r.n_samples, r.seed)?,
    };
    let (train, test) = focus_core::data::split_recall(samples, r.test_frac)?;
    if train.is_empty() || test.is_empty() {
        return Err(FocusError::Config(format!(
            "split left {} train / {} test samples; raise n_samples or adjust test_frac",
            train.len(),
            test.len()
        )));
    }
    Ok((train, test))
}

fn char_data(r: &Resolved) -> Result<(CharWindows, CharWindows)> {
    let corpus = r.corpus.as_ref().ok_or_else(|| {
        FocusError::Config("the char task needs corpus=<path to a byte corpus>".into())
    })?;
    let bytes = std::fs::read(corpus).map_err(|e| {
        FocusError::Config(format!("cannot read corpus {}: {e}", corpus.display()))
    })?;
    let mut windows = byte_windows(&bytes, r.model.l)?;
    if windows.len() < 2 {
        return Err(FocusError::Config(format!(
            "corpus {} yields {} window(s) of length {}; it is too short to split",
            corpus.display(),
            windows.len(),
            r.model.l
        )));
    }
    let n_test = (((windows.len() as f64) * r.test_frac).round() as usize)
        .clamp(1, windows.len() - 1);
    let test = windows.split_off(windows.len() - n_test);
    Ok((windows, test))
}

fn metrics_json(task: Task, report: &TrainReport) -> String {
    serde_json::json!({
        "task": match task { Task::Recall => "recall", Task::Char => "char" },
        "final_loss": report.final_loss,
        "final_metric": report.final_metric,
        "epochs_run": report.epochs_run,
        "steps_run": report.steps_run,
        "early_stopped": report.early_stopped,
    })
    .to_string()
}

pub fn cmd_gen_data(args: &CfgArgs, out: &Path) -> Result<()> {
    let r = resolve(args)?;
    if r.task != Task::Recall {
        return Err(FocusError::Config(
            "gen-data only caches recall samples; the char task reads a corpus directly".into(),
        ));
    }
    std::fs::create_dir_all(out)?;
    let samples = gen_recall(r.model.vocab, r.model.l, r.n_samples, r.seed)?;
    let path = out.join("data.bin");
    save_recall(&path, &samples)?;
    println!("wrote {} samples to {}", samples.len(), path.display());
    Ok(())
}

pub fn cmd_train(args: &CfgArgs, out: &Path, data: Option<&Path>) -> Result<()> {
    let r = resolve(args)?;
    std::fs::create_dir_all(out)?;
    let mut store = init_model(&r.model, r.seed.wrapping_add(1))?;
    let mut opt = AdamW::new(r.train.adam(), &store);

    let progress = |row: &LogRow| {
        eprintln!(
            "epoch {} step {} lr {:e} loss {:.6} metric {:.6}",
            row.epoch, row.step, row.lr, row.loss, row.metric
        );
    };
    let report = match r.task {
        Task::Recall => {
            let (train, test) = recall_data(&r, data)?;
            eprintln!(
                "training recall: {} train / {} test samples, L={}, d={}, {} layer(s)",
                train.len(),
                test.len(),
                r.model.l,
                r.model.d,
                r.model.n_layers
            );
            train_recall_observed(&mut store, &mut opt, &r.model, &r.train, &train, &test, progress)?
        }
        Task::Char => {
            let (train, test) = char_data(&r)?;
            eprintln!(
                "training char: {} train / {} test windows of length {}",
                train.len(),
                test.len(),
                r.model.l
            );
            train_char_observed(&mut store, &mut opt, &r.model, &r.train, &train, &test, progress)?
        }
    };

    save_checkpoint(out.join("checkpoint.bin"), &r.model, &store, &opt)?;
    write_log_csv(out.join("train_log.csv"), &report.rows)?;
    let line = metrics_json(r.task, &report);
    std::fs::write(out.join("metrics.json"), format!("{line}\n"))?;
    println!("{line}");
    Ok(())
}

fn first_tensor_mismatch(ck: &Checkpoint, want: &FocusConfig) -> Result<()> {
    let skeleton = init_model(want, 0)?;
    for p in skeleton.iter() {
        match ck.store.iter().find(|q| q.name == p.name) {
            None => {
                return Err(FocusError::Format(format!(
                    "checkpoint is missing tensor param.{}",
                    p.name
                )))
            }
            Some(q) if q.shape != p.shape => {
                return Err(FocusError::Format(format!(
                    "checkpoint tensor param.{} has shape {:?}, but the requested config needs {:?}",
                    p.name, q.shape, p.shape
                )))
            }
            _ => {}
        }
    }
    for q in ck.store.iter() {
        if skeleton.iter().all(|p| p.name != q.name) {
            return Err(FocusError::Format(format!(
                "checkpoint has unexpected tensor param.{}",
                q.name
            )));
        }
    }
    let a = &ck.cfg;
    let b = want;
    let mut diffs = Vec::new();
    let mut field = |name: &str, x: String, y: String| {
        if x != y {
            diffs.push(format!("{name} {x} vs {y}"));
        }
    };
    field("l", a.l.to_string(), b.l.to_string());
    field("d", a.d.to_string(), b.d.to_string());
    field("d_att", a.d_att.to_string(), b.d_att.to_string());
    field("nfft", a.nfft.to_string(), b.nfft.to_string());
    field("bank", a.bank.to_string(), b.bank.to_string());
    field("m", a.m.to_string(), b.m.to_string());
    field("o", a.o.to_string(), b.o.to_string());
    field("hidden", a.hidden.to_string(), b.hidden.to_string());
    field("n_layers", a.n_layers.to_string(), b.n_layers.to_string());
    field("vocab", a.vocab.to_string(), b.vocab.to_string());
    field("l_max", a.l_max.to_string(), b.l_max.to_string());
    field("squash_lambda", a.squash_lambda.to_string(), b.squash_lambda.to_string());
    field("ablation", a.ablation.to_string(), b.ablation.to_string());
    field(
        "share_hyper_embedding",
        a.share_hyper_embedding.to_string(),
        b.share_hyper_embedding.to_string(),
    );
    Err(FocusError::Format(format!(
        "checkpoint config disagrees with the requested config: {}",
        diffs.join(", ")
    )))
}

pub fn cmd_eval(args: &CfgArgs, checkpoint: &Path, data: Option<&Path>) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let r = resolve_with_model(args, &ck.cfg)?;
    if r.model != ck.cfg {
        first_tensor_mismatch(&ck, &r.model)?;
    }
    let (metric_name, metric, n_test) = match r.task {
        Task::Recall => {
            let (_, test) = recall_data(&r, data)?;
            (
                "accuracy",
                eval_recall(&ck.store, &ck.cfg, &test)?,
                test.len(),
            )
        }
        Task::Char => {
            let (_, test) = char_data(&r)?;
            (
                "bpc",
                eval_char_bpc(&ck.store, &ck.cfg, &test)?,
                test.len(),
            )
        }
    };
    let line = serde_json::json!({
        "task": match r.task { Task::Recall => "recall", Task::Char => "char" },
        "metric_name": metric_name,
        "metric": metric,
        "n_test": n_test,
    })
    .to_string();
    println!("{line}");
    Ok(())
}

pub fn cmd_inspect(
    checkpoint: &Path,
    data: Option<&Path>,
    sample: usize,
    layer: usize,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let cfg = &ck.cfg;
    let s = match data {
        Some(path) => {
            let samples = load_recall(path)?;
            samples.into_iter().nth(sample).ok_or_else(|| {
                FocusError::Config(format!("sample {sample} is out of range for the cache"))
            })?
        }
        None => {
            let seed = seed_fallback(seed)?;
            let mut samples = gen_recall(cfg.vocab, cfg.l, sample + 1, seed)?;
            samples.swap_remove(sample)
        }
    };

    let tape = Tape::new();
    let mp = bind_model(&ck.store, &tape, cfg)?;
    let theta = layer_theta(&s.tokens, &mp, cfg, layer)?;
    let coeffs = theta.values_real()?;
    let nbins = cfg.nbins();
    let resp = response_matrix(&coeffs, nbins, cfg.d, cfg.bank, cfg.nfft)?;

    std::fs::create_dir_all(out)?;
    let path = out.join("filters.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
    write!(f, "freq")?;
    for b in 0..nbins {
        write!(f, ",bin{b}")?;
    }
    writeln!(f)?;
    for k in 0..cfg.nfft {
        write!(f, "{k}")?;
        for b in 0..nbins {
            write!(f, ",{}", resp[k * nbins + b])?;
        }
        writeln!(f)?;
    }
    f.flush()?;

    let peaks: Vec<f64> = (0..nbins)
        .map(|b| (0..cfg.nfft).map(|k| resp[k * nbins + b]).fold(0.0, f64::max))
        .collect();
    let query_bin = s.query_pos / cfg.nfft;
    for (b, peak) in peaks.iter().enumerate() {
        let mark = if b == query_bin { "  (query)" } else { "" };
        println!("bin {b}: peak {peak:e}{mark}");
    }
    let mut sorted = peaks.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let spread = sorted[sorted.len() - 1] / sorted[0];
    println!("peak spread across bins: {spread:.3}");
    println!(
        "query bin {query_bin} peak over median bin peak: {:.3}",
        peaks[query_bin] / median
    );
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_bench(ls: &[usize], d: usize, reps: usize, out: &Path) -> Result<()> {
    if ls.is_empty() {
        return Err(FocusError::Config("bench needs at least one sequence length".into()));
    }
    let focus = bench_focus(ls, d, reps)?;
    let attention = bench_full_attention(ls, d, reps);

    std::fs::create_dir_all(out)?;
    let path = out.join("bench.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(f, "impl,l,seconds,flops")?;
    for p in &focus {
        writeln!(f, "focus,{},{},{}", p.l, p.seconds, p.flops)?;
    }
    for p in &attention {
        writeln!(f, "attention,{},{},{}", p.l, p.seconds, p.flops)?;
    }
    f.flush()?;

    if ls.len() >= 2 {
        println!("focus slope {:.3}", slope_of(&focus));
        println!("attention slope {:.3}", slope_of(&attention));
    }
    println!("wrote {}", path.display());
    Ok(())
}
