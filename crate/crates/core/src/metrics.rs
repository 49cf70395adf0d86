//! Evaluation metrics: argmax accuracy and bits per character.

use crate::error::{FocusError, Result};
use crate::tensor::Tensor;

fn logits_rows(logits: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(FocusError::Config(format!(
            "metrics expect (positions, vocab) logits, got shape {shape:?}"
        )));
    }
    let vals = logits.values_real()?;
    Ok((shape[0], shape[1], vals))
}

/// Index of the largest logit in the final row of an (L, V) tensor.
pub fn final_argmax(logits: &Tensor) -> Result<usize> {
    let (rows, vocab, vals) = logits_rows(logits)?;
    if rows == 0 {
        return Err(FocusError::Config("no positions to read a prediction from".into()));
    }
    let last = &vals[(rows - 1) * vocab..rows * vocab];
    let mut best = 0;
    for (i, &v) in last.iter().enumerate() {
        if v > last[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Fraction of predictions matching their targets.
pub fn accuracy(preds: &[usize], targets: &[usize]) -> f64 {
    assert_eq!(preds.len(), targets.len(), "prediction/target count mismatch");
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(targets).filter(|(p, t)| p == t).count();
    hits as f64 / preds.len() as f64
}

/// Mean negative log base-2 probability of the targets under (L, V) logits.
pub fn bpc(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let (rows, vocab, vals) = logits_rows(logits)?;
    if targets.len() != rows {
        return Err(FocusError::Config(format!(
            "bpc: {} targets for {rows} positions",
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= vocab {
            return Err(FocusError::Config(format!(
                "bpc: target {t} out of vocab {vocab}"
            )));
        }
        let row = &vals[r * vocab..(r + 1) * vocab];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        total += (lse - row[t]) / std::f64::consts::LN_2;
    }
    Ok(total / rows as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn logits_from(tape: &Tape, rows: usize, vocab: usize, vals: Vec<f64>) -> Tensor {
        tape.constant(&[rows, vocab], vals).unwrap()
    }

    #[test]
    fn accuracy_counts_exact_matches() {
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 4]), 1.0);
        assert_eq!(accuracy(&[1, 2, 3, 0], &[1, 2, 3, 4]), 0.75);
        assert_eq!(accuracy(&[], &[]), 0.0);
    }

    #[test]
    fn final_argmax_reads_the_last_row() {
        let tape = Tape::new();
        let logits = logits_from(&tape, 2, 3, vec![9.0, 0.0, 0.0, 0.5, 2.0, 1.0]);
        assert_eq!(final_argmax(&logits).unwrap(), 1, "only the final row matters");
    }

    #[test]
    fn random_predictions_sit_near_chance_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let vocab = 30;
        let trials = 3000;
        let mut hits = 0;
        for _ in 0..trials {
            let pred = rng.gen_range(0..vocab);
            let target = rng.gen_range(0..vocab);
            hits += (pred == target) as usize;
        }
        let acc = hits as f64 / trials as f64;
        assert!(
            (0.015..0.06).contains(&acc),
            "chance accuracy for vocab 30 should be near 1/30, got {acc}"
        );
    }

    #[test]
    fn uniform_logits_over_256_symbols_cost_eight_bits() {
        let tape = Tape::new();
        let logits = logits_from(&tape, 4, 256, vec![0.7; 4 * 256]);
        let got = bpc(&logits, &[0, 10, 128, 255]).unwrap();
        assert!((got - 8.0).abs() < 1e-12, "uniform over 256 must cost 8 bits, got {got}");
    }

    #[test]
    fn an_even_coin_costs_one_bit() {
        let tape = Tape::new();
        let logits = logits_from(&tape, 1, 2, vec![3.25, 3.25]);
        let got = bpc(&logits, &[1]).unwrap();
        assert!((got - 1.0).abs() < 1e-12, "p = 1/2 must cost one bit, got {got}");
    }

    #[test]
    fn confident_correct_logits_cost_almost_nothing() {
        let tape = Tape::new();
        let logits = logits_from(&tape, 2, 3, vec![50.0, 0.0, 0.0, 0.0, 50.0, 0.0]);
        let got = bpc(&logits, &[0, 1]).unwrap();
        assert!(got >= 0.0 && got < 1e-12, "near-one-hot logits should cost ~0 bits, got {got}");
    }

    #[test]
    fn bpc_matches_a_hand_computed_two_row_case() {
        let tape = Tape::new();
        let logits = logits_from(&tape, 2, 2, vec![1.0, 0.0, 0.0, 2.0]);
        let p0 = 1.0f64 / (1.0 + (-1.0f64).exp());
        let p1 = 1.0f64 / (1.0 + (-2.0f64).exp());
        let want = (-(p0.log2()) - p1.log2()) / 2.0;
        let got = bpc(&logits, &[0, 1]).unwrap();
        assert!((got - want).abs() < 1e-12, "want {want}, got {got}");
    }

    #[test]
    fn bpc_rejects_mismatched_targets() {
        let tape = Tape::new();
        let logits = logits_from(&tape, 2, 3, vec![0.0; 6]);
        assert!(bpc(&logits, &[0]).is_err(), "one target for two rows");
        assert!(bpc(&logits, &[0, 3]).is_err(), "target outside the vocab");
    }
}
