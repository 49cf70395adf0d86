//! Synthetic associative-recall data, byte-corpus windows, and dataset caches.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FocusError, Result};
use crate::tensor::container::{Container, Entry};

/// One recall sequence. `tokens` ends with the query key; `query_pos` is the
/// position of that key's most recent earlier occurrence and `target` the
/// value written immediately after it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecallSample {
    pub tokens: Vec<usize>,
    pub target: usize,
    pub query_pos: usize,
}

/// Generates `n` recall sequences of length `l`. Keys come from the lower
/// half of the vocabulary, values (and any filler) from the upper half, so
/// the two alphabets never collide. `(l - 1) / 2` pairs are laid out
/// back-to-back, and the final token repeats the key of one of them.
pub fn gen_recall(vocab: usize, l: usize, n: usize, seed: u64) -> Result<Vec<RecallSample>> {
    if vocab < 4 {
        return Err(FocusError::Config(format!(
            "recall vocab {vocab} is too small: need at least 2 keys and 2 values"
        )));
    }
    if l < 3 {
        return Err(FocusError::Config(format!(
            "recall length {l} is too small: need room for one pair plus a query"
        )));
    }
    let n_keys = vocab / 2;
    let pairs = (l - 1) / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut tokens = Vec::with_capacity(l);
        for _ in 0..pairs {
            tokens.push(rng.gen_range(0..n_keys));
            tokens.push(rng.gen_range(n_keys..vocab));
        }
        while tokens.len() < l - 1 {
            tokens.push(rng.gen_range(n_keys..vocab));
        }
        let query_slot = rng.gen_range(0..pairs);
        let key = tokens[2 * query_slot];
        let (query_pos, target) = (0..pairs)
            .rev()
            .find(|&s| tokens[2 * s] == key)
            .map(|s| (2 * s, tokens[2 * s + 1]))
            .expect("query key was drawn from the pairs present");
        tokens.push(key);
        out.push(RecallSample {
            tokens,
            target,
            query_pos,
        });
    }
    Ok(out)
}

/// Splits `samples` into a leading train part and trailing test part, and
/// rejects the split if any test sequence also occurs in training.
pub fn split_recall(
    samples: Vec<RecallSample>,
    test_frac: f64,
) -> Result<(Vec<RecallSample>, Vec<RecallSample>)> {
    if !(0.0..1.0).contains(&test_frac) {
        return Err(FocusError::Config(format!(
            "test fraction {test_frac} must lie in [0, 1)"
        )));
    }
    let n_test = ((samples.len() as f64) * test_frac).round() as usize;
    let n_train = samples.len() - n_test;
    let mut train = samples;
    let test = train.split_off(n_train);
    let seen: HashSet<&[usize]> = train.iter().map(|s| s.tokens.as_slice()).collect();
    for s in &test {
        if seen.contains(s.tokens.as_slice()) {
            return Err(FocusError::Config(
                "train/test split overlaps: a held-out sequence also appears in training; \
                 regenerate with a different seed"
                    .into(),
            ));
        }
    }
    Ok((train, test))
}

/// Cuts a byte corpus into non-overlapping next-byte prediction windows:
/// window `w` maps `data[w*l .. w*l+l]` onto the same span shifted by one.
pub fn byte_windows(data: &[u8], l: usize) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if l == 0 {
        return Err(FocusError::Config("window length must be positive".into()));
    }
    if data.len() < l + 1 {
        return Err(FocusError::Config(format!(
            "corpus of {} bytes is shorter than one window of {} plus a target",
            data.len(),
            l
        )));
    }
    let count = (data.len() - 1) / l;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let at = w * l;
        let tokens = data[at..at + l].iter().map(|&b| b as usize).collect();
        let targets = data[at + 1..at + l + 1].iter().map(|&b| b as usize).collect();
        out.push((tokens, targets));
    }
    Ok(out)
}

/// Writes recall samples to a container cache: `tokens` (n, l) and
/// `targets` (n) as integer tensors, plus `query_pos` (n) so samples
/// round-trip exactly.
pub fn save_recall<P: AsRef<Path>>(path: P, samples: &[RecallSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(FocusError::Config("refusing to cache an empty dataset".into()));
    }
    let l = samples[0].tokens.len();
    if samples.iter().any(|s| s.tokens.len() != l) {
        return Err(FocusError::Config("cannot cache samples of mixed lengths".into()));
    }
    let mut c = Container::new();
    let tokens: Vec<i64> = samples
        .iter()
        .flat_map(|s| s.tokens.iter().map(|&t| t as i64))
        .collect();
    let targets: Vec<i64> = samples.iter().map(|s| s.target as i64).collect();
    let query_pos: Vec<i64> = samples.iter().map(|s| s.query_pos as i64).collect();
    c.push(
        "tokens",
        Entry::I64 {
            shape: vec![samples.len(), l],
            data: tokens,
        },
    )?;
    c.push(
        "targets",
        Entry::I64 {
            shape: vec![samples.len()],
            data: targets,
        },
    )?;
    c.push(
        "query_pos",
        Entry::I64 {
            shape: vec![samples.len()],
            data: query_pos,
        },
    )?;
    c.to_file(path)
}

/// Reads a recall cache written by [`save_recall`].
pub fn load_recall<P: AsRef<Path>>(path: P) -> Result<Vec<RecallSample>> {
    let c = Container::from_file(path)?;
    let (tshape, tokens) = c.require_i64("tokens")?;
    if tshape.len() != 2 {
        return Err(FocusError::Format(format!(
            "dataset cache: tokens must be rank 2, got rank {}",
            tshape.len()
        )));
    }
    let (n, l) = (tshape[0], tshape[1]);
    let (gshape, targets) = c.require_i64("targets")?;
    let (qshape, query_pos) = c.require_i64("query_pos")?;
    if gshape != [n] || qshape != [n] {
        return Err(FocusError::Format(format!(
            "dataset cache: targets {gshape:?} and query_pos {qshape:?} must both be ({n})"
        )));
    }
    let as_pos = |v: i64, what: &str| -> Result<usize> {
        usize::try_from(v)
            .map_err(|_| FocusError::Format(format!("dataset cache: negative {what} {v}")))
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut toks = Vec::with_capacity(l);
        for &t in &tokens[i * l..(i + 1) * l] {
            toks.push(as_pos(t, "token")?);
        }
        let qp = as_pos(query_pos[i], "query position")?;
        if qp >= l {
            return Err(FocusError::Format(format!(
                "dataset cache: query position {qp} out of range for length {l}"
            )));
        }
        out.push(RecallSample {
            tokens: toks,
            target: as_pos(targets[i], "target")?,
            query_pos: qp,
        });
    }
    Ok(out)
}
