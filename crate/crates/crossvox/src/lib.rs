//! crossvox: a desk-scale speech-enhancement toolkit for comparing
//! time-domain, TF-domain and cross-domain training losses.
//!
//! The crate is organized around six areas:
//!
//! - [`signal`]: waveforms, the dynamic-resolution STFT/ISTFT pair that embeds
//!   any supported track into a 256x256 TF grid, and magnitude compression.
//! - [`tape`]: a small reverse-mode autodiff engine (f64, define-by-run) with
//!   the conv/DFT operators the model families and loss bridges need.
//! - [`models`]: the four generator families (1-D U-net, gated dilated stack,
//!   2-D U-net, CasNet) and the two conditional discriminators.
//! - [`losses`]: adversarial, time-L1, TF-L1 and feature losses, plus the two
//!   cross-domain compositions bridged through STFT / ISTFT-with-noisy-phase.
//! - [`data`]: manifests, SNR-controlled mixing, segmentation/batching, and a
//!   deterministic synthetic corpus generator.
//! - [`metrics`]: SSNR, STOI, composite MOS predictors, WER with a pluggable
//!   ASR client, a PESQ plug-in interface, and the Wiener baseline.
//! - [`harness`]: training loops, enhancement, evaluation, reporting, and the
//!   run-directory persistence behind the `crossvox` CLI.

pub mod error;
pub mod signal;

pub use error::{Error, Result};
