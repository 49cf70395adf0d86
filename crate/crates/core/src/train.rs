//! Batched AdamW training over recall sequences and byte corpora.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::RecallSample;
use crate::error::{FocusError, Result};
use crate::layer::FocusConfig;
use crate::metrics;
use crate::model::{bind_model, model_forward};
use crate::optim::{warmup_scale, AdamConfig, AdamW};
use crate::params::ParamStore;
use crate::tensor::Tape;

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
            batch: 32,
            warmup_epochs: 10,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    fn validate(&self, n_train: usize) -> Result<()> {
        if self.batch == 0 {
            return Err(FocusError::Config("batch size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(FocusError::Config("max_epochs must be positive".into()));
        }
        if n_train == 0 {
            return Err(FocusError::Config("no training samples".into()));
        }
        Ok(())
    }
}

/// One log line per epoch: global step count, effective LR, mean train loss,
/// and the held-out metric (accuracy for recall, BPC for byte LM).
#[derive(Clone, Copy, Debug)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub metric: f64,
}

#[derive(Debug)]
pub struct TrainReport {
    pub rows: Vec<LogRow>,
    pub final_loss: f64,
    pub final_metric: f64,
    pub epochs_run: usize,
    pub steps_run: usize,
    pub early_stopped: bool,
}

fn finite_or_diverged(loss: f64, epoch: usize, step: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(FocusError::Diverged { epoch, step })
    }
}

/// Trains on recall sequences. The loss is cross-entropy at the final
/// position only; training stops early once an epoch scores 100% train
/// accuracy. Returns the per-epoch log; the store ends up trained in place.
pub fn train_recall(
    store: &mut ParamStore,
    opt: &mut AdamW,
    mcfg: &FocusConfig,
    tc: &TrainConfig,
    train: &[RecallSample],
    test: &[RecallSample],
) -> Result<TrainReport> {
    train_recall_observed(store, opt, mcfg, tc, train, test, |_| {})
}

/// [`train_recall`] with a per-epoch observer, so long runs can stream
/// progress as each row lands.
pub fn train_recall_observed(
    store: &mut ParamStore,
    opt: &mut AdamW,
    mcfg: &FocusConfig,
    tc: &TrainConfig,
    train: &[RecallSample],
    test: &[RecallSample],
    mut on_epoch: impl FnMut(&LogRow),
) -> Result<TrainReport> {
    tc.validate(train.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(0x51de_c4a5));
    let mut indices: Vec<usize> = (0..train.len()).collect();
    let mut rows = Vec::new();
    let mut gstep = 0usize;
    let mut early = false;

    for epoch in 1..=tc.max_epochs {
        let scale = warmup_scale(epoch, tc.warmup_epochs);
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;

        for chunk in indices.chunks(tc.batch) {
            store.zero_grads();
            for &i in chunk {
                let s = &train[i];
                let tape = Tape::new();
                let mp = bind_model(store, &tape, mcfg)?;
                let logits = model_forward(&s.tokens, &mp, mcfg)?;
                hits += (metrics::final_argmax(&logits)? == s.target) as usize;
                let last = logits.narrow(0, mcfg.l - 1, 1)?;
                let loss = last.cross_entropy_mean(&[s.target])?;
                let lv = finite_or_diverged(loss.values_real()?[0], epoch, gstep + 1)?;
                loss_sum += lv;
                tape.backward(&loss)?;
                store.accumulate_grads(&mp.binding)?;
            }
            store.scale_grads(1.0 / chunk.len() as f64);
            opt.step(store, scale)?;
            gstep += 1;
        }

        let train_loss = loss_sum / train.len() as f64;
        let eval_acc = eval_recall(store, mcfg, test)?;
        let row = LogRow {
            epoch,
            step: gstep,
            lr: tc.lr * scale,
            loss: train_loss,
            metric: eval_acc,
        };
        on_epoch(&row);
        rows.push(row);
        if hits == train.len() {
            early = true;
            break;
        }
    }

    let last = rows.last().expect("at least one epoch ran");
    Ok(TrainReport {
        final_loss: last.loss,
        final_metric: last.metric,
        epochs_run: rows.len(),
        steps_run: gstep,
        early_stopped: early,
        rows,
    })
}

/// Accuracy of final-position argmax predictions over `samples`.
pub fn eval_recall(store: &ParamStore, mcfg: &FocusConfig, samples: &[RecallSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(FocusError::Config("no samples to evaluate".into()));
    }
    let mut hits = 0usize;
    for s in samples {
        let tape = Tape::new();
        let mp = bind_model(store, &tape, mcfg)?;
        let logits = model_forward(&s.tokens, &mp, mcfg)?;
        hits += (metrics::final_argmax(&logits)? == s.target) as usize;
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Trains next-byte prediction over windows of (tokens, shifted targets).
/// The loss covers every position; the held-out metric is bits per character.
pub fn train_char(
    store: &mut ParamStore,
    opt: &mut AdamW,
    mcfg: &FocusConfig,
    tc: &TrainConfig,
    train: &[(Vec<usize>, Vec<usize>)],
    test: &[(Vec<usize>, Vec<usize>)],
) -> Result<TrainReport> {
    train_char_observed(store, opt, mcfg, tc, train, test, |_| {})
}

/// [`train_char`] with a per-epoch observer.
pub fn train_char_observed(
    store: &mut ParamStore,
    opt: &mut AdamW,
    mcfg: &FocusConfig,
    tc: &TrainConfig,
    train: &[(Vec<usize>, Vec<usize>)],
    test: &[(Vec<usize>, Vec<usize>)],
    mut on_epoch: impl FnMut(&LogRow),
) -> Result<TrainReport> {
    tc.validate(train.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(0x51de_c4a5));
    let mut indices: Vec<usize> = (0..train.len()).collect();
    let mut rows = Vec::new();
    let mut gstep = 0usize;

    for epoch in 1..=tc.max_epochs {
        let scale = warmup_scale(epoch, tc.warmup_epochs);
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;

        for chunk in indices.chunks(tc.batch) {
            store.zero_grads();
            for &i in chunk {
                let (tokens, targets) = &train[i];
                let tape = Tape::new();
                let mp = bind_model(store, &tape, mcfg)?;
                let logits = model_forward(tokens, &mp, mcfg)?;
                let loss = logits.cross_entropy_mean(targets)?;
                let lv = finite_or_diverged(loss.values_real()?[0], epoch, gstep + 1)?;
                loss_sum += lv;
                tape.backward(&loss)?;
                store.accumulate_grads(&mp.binding)?;
            }
            store.scale_grads(1.0 / chunk.len() as f64);
            opt.step(store, scale)?;
            gstep += 1;
        }

        let train_loss = loss_sum / train.len() as f64;
        let eval_bpc = eval_char_bpc(store, mcfg, test)?;
        let row = LogRow {
            epoch,
            step: gstep,
            lr: tc.lr * scale,
            loss: train_loss,
            metric: eval_bpc,
        };
        on_epoch(&row);
        rows.push(row);
    }

    let last = rows.last().expect("at least one epoch ran");
    Ok(TrainReport {
        final_loss: last.loss,
        final_metric: last.metric,
        epochs_run: rows.len(),
        steps_run: gstep,
        early_stopped: false,
        rows,
    })
}

/// Mean bits per character over held-out windows.
pub fn eval_char_bpc(
    store: &ParamStore,
    mcfg: &FocusConfig,
    windows: &[(Vec<usize>, Vec<usize>)],
) -> Result<f64> {
    if windows.is_empty() {
        return Err(FocusError::Config("no windows to evaluate".into()));
    }
    let mut total = 0.0;
    for (tokens, targets) in windows {
        let tape = Tape::new();
        let mp = bind_model(store, &tape, mcfg)?;
        let logits = model_forward(tokens, &mp, mcfg)?;
        total += metrics::bpc(&logits, targets)?;
    }
    Ok(total / windows.len() as f64)
}

/// Writes rows as `epoch,step,lr,loss,metric` CSV.
pub fn write_log_csv<P: AsRef<Path>>(path: P, rows: &[LogRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,step,lr,loss,metric")?;
    for r in rows {
        writeln!(f, "{},{},{},{},{}", r.epoch, r.step, r.lr, r.loss, r.metric)?;
    }
    Ok(())
}
