//! Input-conditioned generation of filter coefficients.
//!
//! A causal global convolution with a soft-thresholded kernel summarizes
//! the whole signal, adaptive max pooling compresses it to a small latent
//! per time bin, and a 2-layer sigmoid MLP maps each (bin, channel) latent
//! to the coefficient pairs of that bin's filter bank. The sigmoid output
//! keeps every coefficient in (0, 1), which pins both filter poles inside
//! the unit circle. A one-bin shift delays the coefficients so bin r is
//! always filtered with parameters computed from bins before r.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{FocusError, Result};
use crate::tensor::{Tape, Tensor};

/// Learned kernel for the global summary convolution plus its shrinkage
/// threshold. The kernel is stored unsquashed; `global_conv` applies the
/// soft threshold on every forward pass so the regularization is part of
/// the graph.
pub struct GlobalConvParams {
    pub kernel: Tensor,
    pub squash_lambda: f64,
}

/// Weights of the per-(bin, channel) coefficient MLP. `w2` has 2·bank
/// output columns, one coefficient pair per filter in the bank.
pub struct HyperMLPParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Sizes fixing the coefficient generator: max sequence length, channel
/// count, pooled latent width per bin, MLP hidden width, filters per bank.
pub struct HyperDims {
    pub l_max: usize,
    pub d: usize,
    pub o: usize,
    pub hidden: usize,
    pub bank: usize,
}

/// Soft threshold: sign(k) * max(|k| - lambda, 0).
pub fn squash(k: &Tensor, lambda: f64) -> Result<Tensor> {
    debug_assert!(lambda >= 0.0, "shrinkage threshold must be non-negative");
    Ok(k.squash(lambda)?)
}

/// Causal linear convolution of every channel with its squashed kernel
/// column, computed by transforming at twice the signal length so nothing
/// wraps around. Output sample t only sees x[0..=t].
pub fn global_conv(x: &Tensor, p: &GlobalConvParams) -> Result<Tensor> {
    let xs = x.shape();
    let ks = p.kernel.shape();
    if xs.len() != 2 || ks.len() != 2 || xs[1] != ks[1] {
        return Err(FocusError::Config(format!(
            "global_conv expects (time, channels) against a matching kernel, got {xs:?} and {ks:?}"
        )));
    }
    let (l, d) = (xs[0], xs[1]);
    if l == 0 || l > ks[0] {
        return Err(FocusError::Config(format!(
            "sequence length {l} must be in 1..={} (kernel taps)",
            ks[0]
        )));
    }
    let k = squash(&p.kernel, p.squash_lambda)?;
    let k = if ks[0] > l { k.narrow(0, 0, l)? } else { k };
    let n = (2 * l).next_power_of_two();
    let spectrum = |t: &Tensor, len: usize| -> Result<Tensor> {
        Ok(t.pad_axis(0, 0, n - len)?
            .permute(&[1, 0])?
            .to_complex()?
            .fft_lastdim()?)
    };
    let y = spectrum(x, l)?
        .mul(&spectrum(&k, l.min(ks[0]))?)?
        .ifft_lastdim()?
        .real_part()?
        .permute(&[1, 0])?
        .narrow(0, 0, l)?;
    debug_assert_eq!(y.shape(), vec![l, d]);
    Ok(y)
}

/// Summarize the signal into one latent vector of width `o` per time bin:
/// global convolution, adaptive max pooling to o*nbins values per channel,
/// then regrouping so consecutive pooled values form a bin's features.
/// Returns (nbins, channels, o).
pub fn make_embedding(x: &Tensor, p: &GlobalConvParams, o: usize, nbins: usize) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 2 {
        return Err(FocusError::Config(format!(
            "make_embedding expects a (time, channels) tensor, got {xs:?}"
        )));
    }
    if o == 0 || nbins == 0 || xs[0] < o * nbins {
        return Err(FocusError::Config(format!(
            "pooling to {o}x{nbins} values needs at least {} samples, got {}",
            o * nbins,
            xs[0]
        )));
    }
    let pooled = global_conv(x, p)?.adaptive_maxpool_time(o * nbins)?;
    Ok(pooled.reshape(&[nbins, o, xs[1]])?.permute(&[0, 2, 1])?)
}

/// Map each (bin, channel) latent through the two sigmoid layers to its
/// coefficient pairs. Returns (nbins, channels, bank, 2) with every entry
/// strictly inside (0, 1).
pub fn generate_theta(e: &Tensor, p: &HyperMLPParams) -> Result<Tensor> {
    let es = e.shape();
    let w2s = p.w2.shape();
    if es.len() != 3 {
        return Err(FocusError::Config(format!(
            "latents must be (nbins, channels, o), got {es:?}"
        )));
    }
    if w2s.len() != 2 || w2s[1] % 2 != 0 || w2s[1] == 0 {
        return Err(FocusError::Config(format!(
            "coefficient head must emit an even number of outputs, got {w2s:?}"
        )));
    }
    let hidden = e.matmul(&p.w1)?.add(&p.b1)?.sigmoid()?;
    let out = hidden.matmul(&p.w2)?.add(&p.b2)?.sigmoid()?;
    Ok(out.reshape(&[es[0], es[1], w2s[1] / 2, 2])?)
}

/// Delay the coefficients one bin so bin r is filtered with the pair
/// computed from bin r-1. Bin 0 gets the neutral pair (0, 0), the
/// pass-through filter, and the last input bin is dropped.
pub fn causal_shift(theta: &Tensor) -> Result<Tensor> {
    let ts = theta.shape();
    if ts.len() != 4 || ts[3] != 2 {
        return Err(FocusError::Config(format!(
            "coefficients must be (nbins, channels, bank, 2), got {ts:?}"
        )));
    }
    Ok(theta.shift_blocks()?)
}

/// Xavier-uniform draw for a (fan_in, fan_out) matrix, with an extra
/// multiplier on the bound.
pub fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, scale: f64) -> Vec<f64> {
    let bound = scale * (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Kernel draw behind `init_gconv`: normal with variance 1/l_max.
pub fn draw_kernel(rng: &mut ChaCha8Rng, l_max: usize, d: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, (1.0 / l_max as f64).sqrt()).expect("positive std");
    (0..l_max * d).map(|_| normal.sample(rng)).collect()
}

/// MLP draws behind `init_mlp`: (w1, b1, w2, b2) raw buffers.
pub fn draw_mlp(
    rng: &mut ChaCha8Rng,
    o: usize,
    hidden: usize,
    bank: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let w1 = xavier(rng, o, hidden, 1.0);
    let w2 = xavier(rng, hidden, 2 * bank, 0.1);
    (w1, vec![0.0; hidden], w2, vec![0.0; 2 * bank])
}

/// Draw the summary-convolution kernel, normal with variance 1/l_max.
pub fn init_gconv(
    tape: &Tape,
    rng: &mut ChaCha8Rng,
    l_max: usize,
    d: usize,
    squash_lambda: f64,
) -> Result<GlobalConvParams> {
    Ok(GlobalConvParams {
        kernel: tape.leaf(&[l_max, d], draw_kernel(rng, l_max, d))?,
        squash_lambda,
    })
}

/// Draw coefficient-MLP weights: w1 Xavier-uniform, the output layer
/// Xavier shrunk by 0.1 with zero bias so the first coefficients sit near
/// sigmoid(0) = 0.5 regardless of the input.
pub fn init_mlp(
    tape: &Tape,
    rng: &mut ChaCha8Rng,
    o: usize,
    hidden: usize,
    bank: usize,
) -> Result<HyperMLPParams> {
    let (w1, b1, w2, b2) = draw_mlp(rng, o, hidden, bank);
    Ok(HyperMLPParams {
        w1: tape.leaf(&[o, hidden], w1)?,
        b1: tape.leaf(&[hidden], b1)?,
        w2: tape.leaf(&[hidden, 2 * bank], w2)?,
        b2: tape.leaf(&[2 * bank], b2)?,
    })
}

/// Draw a full generator (kernel then MLP) from one seed.
pub fn init_hypernet(
    tape: &Tape,
    seed: u64,
    dims: &HyperDims,
    squash_lambda: f64,
) -> Result<(GlobalConvParams, HyperMLPParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gconv = init_gconv(tape, &mut rng, dims.l_max, dims.d, squash_lambda)?;
    let mlp = init_mlp(tape, &mut rng, dims.o, dims.hidden, dims.bank)?;
    Ok((gconv, mlp))
}
