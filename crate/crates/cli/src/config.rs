//! Key=value run configuration: defaults, config-file parsing, and CLI
//! override merging.

use std::collections::BTreeMap;
use std::path::PathBuf;

use focus_core::layer::{default_nfft, FocusConfig};
use focus_core::train::TrainConfig;
use focus_core::{FocusError, Result};

use crate::CfgArgs;

/// Every accepted key. Anything else is rejected by name.
pub const KNOWN_KEYS: &[&str] = &[
    "task",
    "l",
    "d",
    "d_att",
    "nfft",
    "bank",
    "m",
    "o",
    "hidden",
    "n_layers",
    "vocab",
    "l_max",
    "squash_lambda",
    "ablation",
    "share_hyper_embedding",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "batch",
    "warmup_epochs",
    "max_epochs",
    "n_samples",
    "test_frac",
    "corpus",
    "seed",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Recall,
    Char,
}

#[derive(Debug)]
pub struct Resolved {
    pub task: Task,
    pub model: FocusConfig,
    pub train: TrainConfig,
    pub n_samples: usize,
    pub test_frac: f64,
    pub corpus: Option<PathBuf>,
    pub seed: u64,
}

/// Seed precedence for commands without a full config: explicit flag, then
/// the FOCUS_SEED environment variable, then zero.
pub fn seed_fallback(flag: Option<u64>) -> Result<u64> {
    match flag {
        Some(s) => Ok(s),
        None => match std::env::var("FOCUS_SEED") {
            Ok(raw) => raw.parse().map_err(|_| {
                FocusError::Config(format!("FOCUS_SEED has unparseable value `{raw}`"))
            }),
            Err(_) => Ok(0),
        },
    }
}

fn known(key: &str) -> Result<()> {
    if KNOWN_KEYS.contains(&key) {
        Ok(())
    } else {
        Err(FocusError::Config(format!("unknown config key `{key}`")))
    }
}

fn parse_file(text: &str, map: &mut BTreeMap<String, String>) -> Result<()> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            FocusError::Config(format!("config line {} is not key=value: {raw}", lineno + 1))
        })?;
        let key = key.trim();
        known(key)?;
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(())
}

fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(raw) => raw.parse().map_err(|_| {
            FocusError::Config(format!("config key `{key}` has unparseable value `{raw}`"))
        }),
    }
}

/// Merge defaults, the config file, and CLI overrides (file < --set < named
/// flags) into one validated run configuration.
pub fn resolve(args: &CfgArgs) -> Result<Resolved> {
    resolve_inner(args, None)
}

/// Like [`resolve`], but model fields default to `base` (a checkpoint's
/// config) instead of the built-in defaults, so only explicit overrides can
/// disagree with the checkpoint.
pub fn resolve_with_model(args: &CfgArgs, base: &FocusConfig) -> Result<Resolved> {
    resolve_inner(args, Some(base))
}

fn resolve_inner(args: &CfgArgs, base: Option<&FocusConfig>) -> Result<Resolved> {
    let mut map = BTreeMap::new();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| {
            FocusError::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        parse_file(&text, &mut map)?;
    }
    for kv in &args.set {
        let (key, value) = kv.split_once('=').ok_or_else(|| {
            FocusError::Config(format!("--set expects KEY=VALUE, got `{kv}`"))
        })?;
        known(key)?;
        map.insert(key.to_string(), value.to_string());
    }
    let mut flag = |key: &str, v: Option<String>| {
        if let Some(v) = v {
            map.insert(key.to_string(), v);
        }
    };
    flag("task", args.task.clone());
    flag("l", args.l.map(|v| v.to_string()));
    flag("d", args.d.map(|v| v.to_string()));
    flag("n_layers", args.n_layers.map(|v| v.to_string()));
    flag("lr", args.lr.map(|v| v.to_string()));
    flag("batch", args.batch.map(|v| v.to_string()));
    flag("max_epochs", args.max_epochs.map(|v| v.to_string()));
    flag("n_samples", args.n_samples.map(|v| v.to_string()));
    flag("corpus", args.corpus.as_ref().map(|p| p.display().to_string()));
    flag("ablation", args.ablation.then(|| "true".to_string()));
    flag("seed", args.seed.map(|v| v.to_string()));
    drop(flag);

    let seed = match map.get("seed") {
        Some(raw) => raw.parse().map_err(|_| {
            FocusError::Config(format!("config key `seed` has unparseable value `{raw}`"))
        })?,
        None => match std::env::var("FOCUS_SEED") {
            Ok(raw) => raw.parse().map_err(|_| {
                FocusError::Config(format!("FOCUS_SEED has unparseable value `{raw}`"))
            })?,
            Err(_) => 0,
        },
    };

    let task = match get(&map, "task", "recall".to_string())?.as_str() {
        "recall" => Task::Recall,
        "char" => Task::Char,
        other => {
            return Err(FocusError::Config(format!(
                "task must be `recall` or `char`, got `{other}`"
            )))
        }
    };

    let l = get(&map, "l", base.map_or(30, |b| b.l))?;
    let d = get(&map, "d", base.map_or(64, |b| b.d))?;
    let default_m = match base {
        Some(b) => b.m,
        None => (1..=l.min(32)).rev().find(|m| l % m == 0).unwrap_or(1),
    };
    let model = FocusConfig {
        l,
        d,
        d_att: get(&map, "d_att", d)?,
        nfft: get(&map, "nfft", base.map_or_else(|| default_nfft(l), |b| b.nfft))?,
        bank: get(&map, "bank", base.map_or(1, |b| b.bank))?,
        m: get(&map, "m", default_m)?,
        o: get(&map, "o", base.map_or(4, |b| b.o))?,
        hidden: get(&map, "hidden", base.map_or(8, |b| b.hidden))?,
        n_layers: get(&map, "n_layers", base.map_or(2, |b| b.n_layers))?,
        vocab: get(&map, "vocab", base.map_or(30, |b| b.vocab))?,
        l_max: get(&map, "l_max", base.map_or(l, |b| b.l_max))?,
        squash_lambda: get(&map, "squash_lambda", base.map_or(1e-3, |b| b.squash_lambda))?,
        ablation: get(&map, "ablation", base.map_or(false, |b| b.ablation))?,
        share_hyper_embedding: get(
            &map,
            "share_hyper_embedding",
            base.map_or(true, |b| b.share_hyper_embedding),
        )?,
    };
    model.validate()?;
    if task == Task::Char && model.vocab != 256 {
        return Err(FocusError::Config(format!(
            "the char task models raw bytes and needs vocab = 256, got {}",
            model.vocab
        )));
    }

    let train = TrainConfig {
        lr: get(&map, "lr", 1e-4)?,
        beta1: get(&map, "beta1", 0.9)?,
        beta2: get(&map, "beta2", 0.98)?,
        eps: get(&map, "eps", 1e-8)?,
        weight_decay: get(&map, "weight_decay", 0.01)?,
        batch: get(&map, "batch", 32)?,
        warmup_epochs: get(&map, "warmup_epochs", 10)?,
        max_epochs: get(&map, "max_epochs", 200)?,
        seed,
    };

    let test_frac = get(&map, "test_frac", 0.1)?;
    if !(0.0..1.0).contains(&test_frac) {
        return Err(FocusError::Config(format!(
            "test_frac {test_frac} must lie in [0, 1)"
        )));
    }

    Ok(Resolved {
        task,
        model,
        train,
        n_samples: get(&map, "n_samples", 2000)?,
        test_frac,
        corpus: map.get("corpus").map(PathBuf::from),
        seed,
    })
}
