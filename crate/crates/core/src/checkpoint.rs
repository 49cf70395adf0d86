//! Checkpoint files: model config, parameters, and optimizer moments in one
//! container.

use std::path::Path;

use crate::error::{FocusError, Result};
use crate::layer::FocusConfig;
use crate::model::init_model;
use crate::optim::AdamW;
use crate::params::ParamStore;
use crate::tensor::container::{Container, Entry};

const CONFIG_INTS: usize = 13;

fn config_to_ints(cfg: &FocusConfig) -> Vec<i64> {
    vec![
        cfg.l as i64,
        cfg.d as i64,
        cfg.d_att as i64,
        cfg.nfft as i64,
        cfg.bank as i64,
        cfg.m as i64,
        cfg.o as i64,
        cfg.hidden as i64,
        cfg.n_layers as i64,
        cfg.vocab as i64,
        cfg.l_max as i64,
        cfg.ablation as i64,
        cfg.share_hyper_embedding as i64,
    ]
}

fn config_from_parts(ints: &[i64], reals: &[f64]) -> Result<FocusConfig> {
    if ints.len() != CONFIG_INTS || reals.len() != 1 {
        return Err(FocusError::Format(format!(
            "checkpoint config has {} ints and {} reals, expected {CONFIG_INTS} and 1",
            ints.len(),
            reals.len()
        )));
    }
    let as_usize = |v: i64, what: &str| -> Result<usize> {
        usize::try_from(v)
            .map_err(|_| FocusError::Format(format!("checkpoint config: negative {what} {v}")))
    };
    let flag = |v: i64, what: &str| -> Result<bool> {
        match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(FocusError::Format(format!(
                "checkpoint config: flag {what} must be 0 or 1, got {v}"
            ))),
        }
    };
    let cfg = FocusConfig {
        l: as_usize(ints[0], "l")?,
        d: as_usize(ints[1], "d")?,
        d_att: as_usize(ints[2], "d_att")?,
        nfft: as_usize(ints[3], "nfft")?,
        bank: as_usize(ints[4], "bank")?,
        m: as_usize(ints[5], "m")?,
        o: as_usize(ints[6], "o")?,
        hidden: as_usize(ints[7], "hidden")?,
        n_layers: as_usize(ints[8], "n_layers")?,
        vocab: as_usize(ints[9], "vocab")?,
        l_max: as_usize(ints[10], "l_max")?,
        squash_lambda: reals[0],
        ablation: flag(ints[11], "ablation")?,
        share_hyper_embedding: flag(ints[12], "share_hyper_embedding")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Writes config, every parameter, and the optimizer moments to `path`.
pub fn save_checkpoint<P: AsRef<Path>>(
    path: P,
    cfg: &FocusConfig,
    store: &ParamStore,
    opt: &AdamW,
) -> Result<()> {
    let mut c = Container::new();
    c.push(
        "config.ints",
        Entry::I64 {
            shape: vec![CONFIG_INTS],
            data: config_to_ints(cfg),
        },
    )?;
    c.push(
        "config.reals",
        Entry::F64 {
            shape: vec![1],
            data: vec![cfg.squash_lambda],
        },
    )?;
    for p in store.iter() {
        c.push(
            &format!("param.{}", p.name),
            Entry::F64 {
                shape: p.shape.clone(),
                data: p.data.clone(),
            },
        )?;
    }
    let (m, v, t) = opt.state();
    for (p, (mm, vv)) in store.iter().zip(m.iter().zip(v)) {
        c.push(
            &format!("optim.m.{}", p.name),
            Entry::F64 {
                shape: p.shape.clone(),
                data: mm.clone(),
            },
        )?;
        c.push(
            &format!("optim.v.{}", p.name),
            Entry::F64 {
                shape: p.shape.clone(),
                data: vv.clone(),
            },
        )?;
    }
    c.push(
        "optim.step",
        Entry::I64 {
            shape: vec![1],
            data: vec![t as i64],
        },
    )?;
    c.to_file(path)
}

#[derive(Debug)]
pub struct Checkpoint {
    pub cfg: FocusConfig,
    pub store: ParamStore,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

/// Reads a checkpoint back, validating every tensor against the layout the
/// stored config implies.
pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Checkpoint> {
    let c = Container::from_file(path)?;
    let (ishape, ints) = c.require_i64("config.ints")?;
    let (rshape, reals) = c.require_f64("config.reals")?;
    if ishape.len() != 1 || rshape.len() != 1 {
        return Err(FocusError::Format("checkpoint config entries must be rank 1".into()));
    }
    let cfg = config_from_parts(ints, reals)?;

    let mut store = init_model(&cfg, 0)?;
    for p in store.iter_mut() {
        let key = format!("param.{}", p.name);
        let (shape, data) = c
            .require_f64(&key)
            .map_err(|_| FocusError::Format(format!("checkpoint is missing tensor {key}")))?;
        if shape != p.shape.as_slice() {
            return Err(FocusError::Format(format!(
                "checkpoint tensor {key} has shape {shape:?}, expected {:?}",
                p.shape
            )));
        }
        p.data.copy_from_slice(data);
    }
    let expected: std::collections::HashSet<String> =
        store.iter().map(|p| format!("param.{}", p.name)).collect();
    for name in c.names() {
        if name.starts_with("param.") && !expected.contains(name) {
            return Err(FocusError::Format(format!(
                "checkpoint carries unexpected tensor {name}"
            )));
        }
    }

    let (mut m, mut v) = (Vec::new(), Vec::new());
    let step = if let Some(entry) = c.get("optim.step") {
        let (_, data) = entry
            .as_i64()
            .ok_or_else(|| FocusError::Format("optim.step must be an integer".into()))?;
        let step = u64::try_from(data[0])
            .map_err(|_| FocusError::Format("optim.step must be nonnegative".into()))?;
        for p in store.iter() {
            for (prefix, out) in [("optim.m.", &mut m), ("optim.v.", &mut v)] {
                let key = format!("{prefix}{}", p.name);
                let (shape, data) = c
                    .require_f64(&key)
                    .map_err(|_| FocusError::Format(format!("checkpoint is missing tensor {key}")))?;
                if shape != p.shape.as_slice() {
                    return Err(FocusError::Format(format!(
                        "checkpoint tensor {key} has shape {shape:?}, expected {:?}",
                        p.shape
                    )));
                }
                out.push(data.to_vec());
            }
        }
        step
    } else {
        m = store.iter().map(|p| vec![0.0; p.data.len()]).collect();
        v = store.iter().map(|p| vec![0.0; p.data.len()]).collect();
        0
    };

    Ok(Checkpoint { cfg, store, m, v, step })
}
