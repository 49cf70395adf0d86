//! Chunked spectral analysis and frequency-domain filtering.
//!
//! A (L, D) signal is split into non-overlapping time bins of `nfft`
//! samples, transformed per bin and channel, multiplied by the conjugated
//! response of a per-bin filter bank, collapsed over the bank, and
//! synthesized back. Bins never mix: the filter only sees its own chunk.
//! Everything is recorded on the tape, so gradients flow to both the
//! signal and the filter coefficients.

use num_complex::Complex64;

use std::f64::consts::TAU;

use crate::error::{FocusError, Result};
use crate::tensor::Tensor;

/// Per-bin spectra of a chunked signal, laid out (nbins, nfft, channels).
/// `len` keeps the pre-padding time length so synthesis can undo the pad.
#[derive(Debug)]
pub struct ChunkSpectrum {
    pub data: Tensor,
    pub nbins: usize,
    pub nfft: usize,
    pub len: usize,
}

/// Split a real (L, D) signal into bins of `nfft` samples and transform
/// each bin per channel. With `pad_partial`, a trailing partial bin is
/// zero-filled on the right and remembered for truncation at synthesis;
/// otherwise an indivisible length is a configuration error.
pub fn chunk_fft(x: &Tensor, nfft: usize, pad_partial: bool) -> Result<ChunkSpectrum> {
    let shape = x.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(FocusError::Config(format!(
            "chunk_fft expects a non-empty (time, channels) tensor, got {shape:?}"
        )));
    }
    let (l, d) = (shape[0], shape[1]);
    let rem = l % nfft;
    if rem != 0 && !pad_partial {
        return Err(FocusError::Config(format!(
            "sequence length {l} is not divisible by the bin length {nfft}"
        )));
    }
    let padded = if rem != 0 {
        x.pad_axis(0, 0, nfft - rem)?
    } else {
        x.clone()
    };
    let nbins = padded.shape()[0] / nfft;
    let data = padded
        .reshape(&[nbins, nfft, d])?
        .permute(&[0, 2, 1])?
        .to_complex()?
        .fft_lastdim()?
        .permute(&[0, 2, 1])?;
    Ok(ChunkSpectrum { data, nbins, nfft, len: l })
}

/// Filter every bin with its own coefficient bank and synthesize back to
/// the time domain. `theta` has shape (nbins, channels, bank, 2) holding
/// the two feedback coefficients per filter; each spectrum row is
/// multiplied by the conjugated response sampled at k/nfft, the bank is
/// collapsed by summation, and each bin is inverse-transformed. Output is
/// the real (len, channels) signal.
pub fn apply_filters(spec: &ChunkSpectrum, theta: &Tensor) -> Result<Tensor> {
    let (out, residual) = apply_filters_traced(spec, theta)?;
    debug_assert!(
        residual.0 < 1e-9 * (1.0 + residual.1),
        "synthesis of a real signal left an imaginary residual of {}",
        residual.0
    );
    Ok(out)
}

/// `apply_filters` plus the synthesis diagnostics (max |imaginary part|
/// before real projection, max |real part|).
pub fn apply_filters_traced(spec: &ChunkSpectrum, theta: &Tensor) -> Result<(Tensor, (f64, f64))> {
    let ts = theta.shape();
    let d = spec.data.shape()[2];
    if ts.len() != 4 || ts[3] != 2 {
        return Err(FocusError::Config(format!(
            "filter coefficients must have shape (nbins, channels, bank, 2), got {ts:?}"
        )));
    }
    if ts[0] != spec.nbins || ts[1] != d {
        return Err(FocusError::Config(format!(
            "filter bank ({}, {}) does not match the spectrum ({}, {})",
            ts[0], ts[1], spec.nbins, d
        )));
    }
    let (nbins, nfft, bank) = (spec.nbins, spec.nfft, ts[2]);
    let tape = spec.data.tape();

    let t0 = theta.narrow(3, 0, 1)?.reshape(&[nbins, 1, d, bank])?.to_complex()?;
    let t1 = theta.narrow(3, 1, 1)?.reshape(&[nbins, 1, d, bank])?.to_complex()?;
    let phase = |mult: f64| -> Vec<Complex64> {
        (0..nfft)
            .map(|k| Complex64::from_polar(1.0, -mult * TAU * k as f64 / nfft as f64))
            .collect()
    };
    let w1 = tape.constant_complex(&[nfft, 1, 1], phase(1.0))?;
    let w2 = tape.constant_complex(&[nfft, 1, 1], phase(2.0))?;
    let one = tape.constant_complex(&[1], vec![Complex64::new(1.0, 0.0)])?;

    let denom = one.add(&t0.mul(&w1)?)?.add(&t1.mul(&w2)?)?;
    let response_conj = one.div(&denom)?.conj()?;
    let filtered = spec.data.reshape(&[nbins, nfft, d, 1])?.mul(&response_conj)?;
    let collapsed = filtered.sum_last_keepdim()?.reshape(&[nbins, nfft, d])?;
    let time = collapsed.permute(&[0, 2, 1])?.ifft_lastdim()?;

    let (mut imag_peak, mut real_peak) = (0.0f64, 0.0f64);
    for z in time.values_complex()? {
        imag_peak = imag_peak.max(z.im.abs());
        real_peak = real_peak.max(z.re.abs());
    }

    let flat = time.real_part()?.permute(&[0, 2, 1])?.reshape(&[nbins * nfft, d])?;
    let out = if spec.len != nbins * nfft {
        flat.narrow(0, 0, spec.len)?
    } else {
        flat
    };
    Ok((out, (imag_peak, real_peak)))
}

/// Magnitude response of each bin's filter at the `nfft` grid frequencies,
/// averaged over channels: row-major (nfft, nbins), entry (k, b) is the mean
/// over channels of |sum over the bank of H(k / nfft)| for bin `b`'s
/// coefficients. `theta` is the flattened (nbins, d, bank, 2) tensor.
pub fn response_matrix(
    theta: &[f64],
    nbins: usize,
    d: usize,
    bank: usize,
    nfft: usize,
) -> Result<Vec<f64>> {
    if theta.len() != nbins * d * bank * 2 {
        return Err(FocusError::Config(format!(
            "response_matrix: {} coefficients cannot fill ({nbins}, {d}, {bank}, 2)",
            theta.len()
        )));
    }
    let mut out = vec![0.0; nfft * nbins];
    for b in 0..nbins {
        for k in 0..nfft {
            let f = k as f64 / nfft as f64;
            let mut acc = 0.0;
            for c in 0..d {
                let mut h = Complex64::new(0.0, 0.0);
                for v in 0..bank {
                    let at = ((b * d + c) * bank + v) * 2;
                    h += crate::iir::freq_response(theta[at], theta[at + 1], f);
                }
                acc += h.norm();
            }
            out[k * nbins + b] = acc / d as f64;
        }
    }
    Ok(out)
}
