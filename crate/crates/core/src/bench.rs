//! Wall-clock scaling probes: the focus forward pass against a plain
//! quadratic attention baseline, plus log-log slope fitting.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layer::FocusConfig;
use crate::model::{bind_model, init_model, model_forward};
use crate::tensor::Tape;

#[derive(Clone, Copy, Debug)]
pub struct BenchPoint {
    pub l: usize,
    pub seconds: f64,
    pub flops: f64,
}

/// Single-layer benchmark config at sequence length `l` and width `d`.
pub fn bench_config(l: usize, d: usize) -> FocusConfig {
    let mut cfg = FocusConfig::new(l, d);
    cfg.n_layers = 1;
    cfg.vocab = 32;
    cfg.hidden = 8;
    if cfg.o * cfg.nbins() > l {
        cfg.o = 1;
    }
    cfg
}

fn fft_flops(n: usize) -> f64 {
    5.0 * n as f64 * (n as f64).log2().max(1.0)
}

/// Rough forward-pass FLOP count for one token sequence under `cfg`.
pub fn flops_estimate(cfg: &FocusConfig) -> f64 {
    let (l, d, m) = (cfg.l as f64, cfg.d as f64, cfg.m as f64);
    let nbins = cfg.nbins() as f64;
    let nfft = cfg.nfft as f64;
    let bank = cfg.bank as f64;
    let n2 = (2 * cfg.l).next_power_of_two();

    let conv = d * (3.0 * fft_flops(n2) + 8.0 * n2 as f64);
    let mlp = nbins * (2.0 * cfg.o as f64 * d * cfg.hidden as f64
        + 2.0 * cfg.hidden as f64 * 2.0 * bank);
    let spectral = d * nbins * 2.0 * fft_flops(cfg.nfft) + nbins * nfft * d * bank * 8.0;
    let attention = (l / m) * (4.0 * m * m * cfg.d_att as f64 + 5.0 * m * m);
    let projections = 7.0 * l * d * d * 2.0;
    let gates = 12.0 * l * d;
    let norms = 8.0 * l * d;
    let per_layer = norms + spectral + attention + projections + gates;
    let head = l * d * cfg.vocab as f64 * 2.0;

    conv + mlp + cfg.n_layers as f64 * per_layer + norms + head
}

/// Times `model_forward` at each length; reports the fastest of `reps` runs.
pub fn bench_focus(ls: &[usize], d: usize, reps: usize) -> Result<Vec<BenchPoint>> {
    let mut out = Vec::with_capacity(ls.len());
    for &l in ls {
        let cfg = bench_config(l, d);
        cfg.validate()?;
        let store = init_model(&cfg, 0x8e_c4)?;
        let mut rng = ChaCha8Rng::seed_from_u64(l as u64);
        let tokens: Vec<usize> = (0..l).map(|_| rng.gen_range(0..cfg.vocab)).collect();
        let mut best = f64::INFINITY;
        for _ in 0..reps.max(1) {
            let t0 = Instant::now();
            let tape = Tape::new();
            let mp = bind_model(&store, &tape, &cfg)?;
            let logits = model_forward(&tokens, &mp, &cfg)?;
            black_box(logits.values_real()?[0]);
            best = best.min(t0.elapsed().as_secs_f64());
        }
        out.push(BenchPoint {
            l,
            seconds: best,
            flops: flops_estimate(&cfg),
        });
    }
    Ok(out)
}

/// Times a straight causal-attention forward over the same lengths, scalar
/// loops and O(l·d) memory: per query, score every prior key, softmax, and
/// mix the values.
pub fn bench_full_attention(ls: &[usize], d: usize, reps: usize) -> Vec<BenchPoint> {
    let mut out = Vec::with_capacity(ls.len());
    for &l in ls {
        let mut rng = ChaCha8Rng::seed_from_u64(l as u64 ^ 0xa77e);
        let mk = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..l * d).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let (q, k, v) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let scale = 1.0 / (d as f64).sqrt();
        let mut best = f64::INFINITY;
        for _ in 0..reps.max(1) {
            let t0 = Instant::now();
            let mut scores = vec![0.0; l];
            let mut row = vec![0.0; d];
            let mut sink = 0.0;
            for i in 0..l {
                let qi = &q[i * d..(i + 1) * d];
                let mut hi = f64::NEG_INFINITY;
                for j in 0..=i {
                    let kj = &k[j * d..(j + 1) * d];
                    let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    scores[j] = s;
                    hi = hi.max(s);
                }
                let mut z = 0.0;
                for s in scores[..=i].iter_mut() {
                    *s = (*s - hi).exp();
                    z += *s;
                }
                row.iter_mut().for_each(|r| *r = 0.0);
                for j in 0..=i {
                    let w = scores[j] / z;
                    let vj = &v[j * d..(j + 1) * d];
                    row.iter_mut().zip(vj).for_each(|(r, x)| *r += w * x);
                }
                sink += row[0];
            }
            black_box(sink);
            best = best.min(t0.elapsed().as_secs_f64());
        }
        let lf = l as f64;
        out.push(BenchPoint {
            l,
            seconds: best,
            flops: 2.0 * lf * (lf + 1.0) * d as f64,
        });
    }
    out
}

/// Least-squares slope of ln(y) against ln(x).
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    assert!(points.len() >= 2, "need at least two points to fit a slope");
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

pub fn slope_of(points: &[BenchPoint]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|p| (p.l as f64, p.seconds)).collect();
    loglog_slope(&pts)
}
