//! The focus layer: adaptive per-bin filtering, chunked causal attention,
//! and gated residual combination.
//!
//! One layer filters its input with coefficients generated from the
//! signal itself (or from static learned logits under the ablation),
//! lets each fixed-length chunk attend causally over its own filtered
//! samples, and merges the result back into the input stream through a
//! sigmoid update gate. Queries come from the unfiltered stream; keys and
//! values from the filtered one.

use rand_chacha::ChaCha8Rng;

use crate::error::{FocusError, Result};
use crate::hypernet::{
    causal_shift, generate_theta, init_mlp, make_embedding, xavier, GlobalConvParams,
    HyperMLPParams,
};
use crate::spectral::{apply_filters, chunk_fft};
use crate::tensor::{Tape, Tensor};

/// Model-level sizes and switches. `d_att` must equal `d`: the gate path
/// feeds attention output straight into a (d, d) projection with no
/// widening projection back.
#[derive(Clone, Debug, PartialEq)]
pub struct FocusConfig {
    pub l: usize,
    pub d: usize,
    pub d_att: usize,
    pub nfft: usize,
    pub bank: usize,
    pub m: usize,
    pub o: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub vocab: usize,
    pub l_max: usize,
    pub squash_lambda: f64,
    pub ablation: bool,
    pub share_hyper_embedding: bool,
}

/// Largest power of two not above the rounded quarter of the length.
pub fn default_nfft(l: usize) -> usize {
    let target = (l as f64 / 4.0).round().max(2.0) as usize;
    let up = target.next_power_of_two();
    if up as f64 / target as f64 <= target as f64 / (up / 2) as f64 {
        up
    } else {
        up / 2
    }
}

impl FocusConfig {
    /// Defaults sized for the recall experiments at length `l`.
    pub fn new(l: usize, d: usize) -> Self {
        FocusConfig {
            l,
            d,
            d_att: d,
            nfft: default_nfft(l),
            bank: 1,
            m: l.min(32),
            o: 4,
            hidden: 8,
            n_layers: 2,
            vocab: 30,
            l_max: l,
            squash_lambda: 1e-3,
            ablation: false,
            share_hyper_embedding: true,
        }
    }

    /// Time bins covered by the filter generator, counting a padded tail
    /// bin when the length does not divide evenly.
    pub fn nbins(&self) -> usize {
        (self.l + self.nfft - 1) / self.nfft
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(FocusError::Config(msg));
        if self.l == 0 || self.d == 0 {
            return fail(format!("degenerate sizes l={} d={}", self.l, self.d));
        }
        if !self.nfft.is_power_of_two() || self.nfft < 2 {
            return fail(format!("nfft must be a power of two >= 2, got {}", self.nfft));
        }
        if self.m == 0 || self.m > self.l || self.l % self.m != 0 {
            return fail(format!("chunk length {} must divide the sequence length {}", self.m, self.l));
        }
        if self.bank == 0 {
            return fail("filter bank must hold at least one filter".into());
        }
        if self.d_att != self.d {
            return fail(format!(
                "attention width {} must equal the model width {}",
                self.d_att, self.d
            ));
        }
        if self.o == 0 || self.hidden == 0 || self.o * self.nbins() > self.l {
            return fail(format!(
                "pooling {}x{} latents needs a sequence of at least {} samples, got {}",
                self.o,
                self.nbins(),
                self.o * self.nbins(),
                self.l
            ));
        }
        if self.vocab < 2 {
            return fail(format!("vocab must be at least 2, got {}", self.vocab));
        }
        if self.l_max < self.l {
            return fail(format!(
                "summary kernel covers {} taps but the sequence is {} long",
                self.l_max, self.l
            ));
        }
        if self.squash_lambda < 0.0 {
            return fail(format!("squash threshold must be non-negative, got {}", self.squash_lambda));
        }
        Ok(())
    }
}

/// Everything one layer owns: attention projections, gate projections,
/// and exactly one source of filter coefficients: the MLP, or under the
/// ablation the static logits that replace it.
pub struct FocusLayerParams {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    pub w_gamma: Tensor,
    pub w_phi: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_gamma: Tensor,
    pub b_phi: Tensor,
    pub b_h: Tensor,
    pub mlp: Option<HyperMLPParams>,
    pub static_logits: Option<Tensor>,
}

/// Split (l, d) into l/m contiguous chunks, shaped (c, m, d).
pub fn chunk(x: &Tensor, m: usize) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 2 || m == 0 || xs[0] % m != 0 {
        return Err(FocusError::Config(format!(
            "cannot cut a {xs:?} tensor into chunks of {m}"
        )));
    }
    Ok(x.reshape(&[xs[0] / m, m, xs[1]])?)
}

/// Undo `chunk`: (c, m, d) back to (c*m, d).
pub fn dechunk(x: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(FocusError::Config(format!("dechunk expects (c, m, d), got {xs:?}")));
    }
    Ok(x.reshape(&[xs[0] * xs[1], xs[2]])?)
}

/// Additive causal mask: 0 at or below the diagonal, -inf above.
fn causal_mask(tape: &Tape, m: usize) -> Result<Tensor> {
    let mut vals = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            vals[i * m + j] = f64::NEG_INFINITY;
        }
    }
    Ok(tape.constant(&[m, m], vals)?)
}

/// Causal attention run independently inside every chunk: queries from
/// the raw chunks, keys and values from the filtered ones, logits scaled
/// by 1/sqrt(d_att). Returns (c, m, d_att).
pub fn chunked_causal_attention(
    x_chunks: &Tensor,
    xf_chunks: &Tensor,
    p: &FocusLayerParams,
) -> Result<Tensor> {
    let (xs, fs) = (x_chunks.shape(), xf_chunks.shape());
    if xs.len() != 3 || xs != fs {
        return Err(FocusError::Config(format!(
            "attention inputs must be matching (c, m, d) tensors, got {xs:?} and {fs:?}"
        )));
    }
    let d_att = p.q.shape()[1];
    let q = x_chunks.matmul(&p.q)?;
    let k = xf_chunks.matmul(&p.k)?;
    let v = xf_chunks.matmul(&p.v)?;
    let logits = q
        .matmul(&k.permute(&[0, 2, 1])?)?
        .scale(1.0 / (d_att as f64).sqrt())?;
    let mask = causal_mask(&x_chunks.tape(), xs[1])?;
    let attn = logits.softmax_lastdim(Some(&mask))?;
    Ok(attn.matmul(&v)?)
}

/// Gated combination of the filtered stream, the attention output, and
/// the skip source: gamma = silu(x_f W_gamma + b_gamma) rescales y,
/// phi = sigmoid(x_f W_phi + b_phi) interpolates the candidate
/// z = silu(x_f W_h + (gamma o y) U_h + b_h) against `x`.
pub fn gates(x: &Tensor, x_f: &Tensor, y: &Tensor, p: &FocusLayerParams) -> Result<Tensor> {
    let gamma = x_f.matmul(&p.w_gamma)?.add(&p.b_gamma)?.silu()?;
    let phi = x_f.matmul(&p.w_phi)?.add(&p.b_phi)?.sigmoid()?;
    let z = x_f
        .matmul(&p.w_h)?
        .add(&gamma.mul(y)?.matmul(&p.u_h)?)?
        .add(&p.b_h)?
        .silu()?;
    let keep = phi.neg()?.add_scalar(1.0)?;
    Ok(phi.mul(&z)?.add(&keep.mul(x)?)?)
}

/// Pool the signal into the per-bin latents the coefficient MLP reads.
pub fn hyper_embedding(x: &Tensor, gconv: &GlobalConvParams, cfg: &FocusConfig) -> Result<Tensor> {
    make_embedding(x, gconv, cfg.o, cfg.nbins())
}

/// Unshifted coefficients for every bin: the MLP read of `embedding`, or
/// under the ablation the sigmoid of the static logits broadcast over all
/// bins.
pub fn generated_theta(
    embedding: Option<&Tensor>,
    p: &FocusLayerParams,
    cfg: &FocusConfig,
) -> Result<Tensor> {
    if cfg.ablation {
        let logits = p.static_logits.as_ref().ok_or_else(|| {
            FocusError::Config("ablation layer is missing its static coefficient logits".into())
        })?;
        let theta = logits.sigmoid()?;
        let fill = theta.tape().zeros(&[cfg.nbins(), 1, 1, 1]);
        Ok(theta.add(&fill)?)
    } else {
        let e = embedding.ok_or_else(|| {
            FocusError::Config("coefficient generation needs the pooled embedding".into())
        })?;
        let mlp = p.mlp.as_ref().ok_or_else(|| {
            FocusError::Config("non-ablation layer is missing its coefficient MLP".into())
        })?;
        generate_theta(e, mlp)
    }
}

/// Filtering, attention, and gating given already-shifted coefficients.
/// `x_skip` is what the closed update gate passes through; the standalone
/// layer uses `x` itself, the pre-norm model the unnormalized stream.
pub fn apply_focus(
    x: &Tensor,
    x_skip: &Tensor,
    theta_shifted: &Tensor,
    p: &FocusLayerParams,
    cfg: &FocusConfig,
) -> Result<Tensor> {
    let spectrum = chunk_fft(x, cfg.nfft, true)?;
    let x_f = apply_filters(&spectrum, theta_shifted)?;
    let y = dechunk(&chunked_causal_attention(&chunk(x, cfg.m)?, &chunk(&x_f, cfg.m)?, p)?)?;
    gates(x_skip, &x_f, &y, p)
}

/// One full layer pass over an (l, d) signal.
pub fn focus_forward(
    x: &Tensor,
    gconv: &GlobalConvParams,
    p: &FocusLayerParams,
    cfg: &FocusConfig,
) -> Result<Tensor> {
    let xs = x.shape();
    if xs != [cfg.l, cfg.d] {
        return Err(FocusError::Config(format!(
            "layer input {xs:?} does not match the configured ({}, {})",
            cfg.l, cfg.d
        )));
    }
    let embedding = if cfg.ablation {
        None
    } else {
        Some(hyper_embedding(x, gconv, cfg)?)
    };
    let theta = causal_shift(&generated_theta(embedding.as_ref(), p, cfg)?)?;
    apply_focus(x, x, &theta, p, cfg)
}

/// Normalize the last axis to zero mean and unit variance, then rescale
/// with the learned gain and bias.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = *x.shape().last().ok_or_else(|| {
        FocusError::Config("layer_norm needs at least one axis".into())
    })?;
    let mu = x.sum_last_keepdim()?.scale(1.0 / d as f64)?;
    let centered = x.sub(&mu)?;
    let var = centered.mul(&centered)?.sum_last_keepdim()?.scale(1.0 / d as f64)?;
    let normed = centered.div(&var.add_scalar(1e-5)?.sqrt()?)?;
    Ok(normed.mul(gain)?.add(bias)?)
}

/// Draw one layer's parameters: Xavier projections, zero biases, a fresh
/// coefficient MLP, and zero static logits when the ablation is on.
pub fn init_layer_params(
    tape: &Tape,
    rng: &mut ChaCha8Rng,
    cfg: &FocusConfig,
) -> Result<FocusLayerParams> {
    let (d, da) = (cfg.d, cfg.d_att);
    let proj = |rng: &mut ChaCha8Rng, tape: &Tape, rows: usize, cols: usize| -> Result<Tensor> {
        Ok(tape.leaf(&[rows, cols], xavier(rng, rows, cols, 1.0))?)
    };
    let q = proj(rng, tape, d, da)?;
    let k = proj(rng, tape, d, da)?;
    let v = proj(rng, tape, d, da)?;
    let w_gamma = proj(rng, tape, d, d)?;
    let w_phi = proj(rng, tape, d, d)?;
    let w_h = proj(rng, tape, d, d)?;
    let u_h = proj(rng, tape, d, d)?;
    let zero = |tape: &Tape| -> Result<Tensor> { Ok(tape.leaf(&[d], vec![0.0; d])?) };
    let (mlp, static_logits) = if cfg.ablation {
        let logits = tape.leaf(&[1, d, cfg.bank, 2], vec![0.0; d * cfg.bank * 2])?;
        (None, Some(logits))
    } else {
        (Some(init_mlp(tape, rng, cfg.o, cfg.hidden, cfg.bank)?), None)
    };
    Ok(FocusLayerParams {
        q,
        k,
        v,
        w_gamma,
        w_phi,
        w_h,
        u_h,
        b_gamma: zero(tape)?,
        b_phi: zero(tape)?,
        b_h: zero(tape)?,
        mlp,
        static_logits,
    })
}
