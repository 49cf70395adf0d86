//! Adaptive spectral filtering sequence models.
//!
//! The layer at the center of this crate runs a hypernetwork over its input
//! to generate per-time-bin second-order IIR filters, applies them in the
//! frequency domain, and feeds the filtered stream into chunked causal
//! attention with gated residual mixing. Everything runs on a small dense
//! f64/complex128 autodiff engine built for exactly these shapes.

pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod hypernet;
pub mod iir;
pub mod layer;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{FocusError, Result};
