//! Time-domain tracks and the dynamic-resolution STFT/ISTFT pair.
//!
//! Every supported track length maps onto a fixed 256x256 time-frequency grid:
//! the FFT size is pinned at 510 samples (256 one-sided bins) and the hop is
//! chosen per track so the padded signal is covered by exactly 256 frames.
//! Inversion is least-squares overlap-add (division by the summed squared
//! analysis windows), which reconstructs exactly for any hop <= window length.

mod tfrecord;
mod wav;

pub use tfrecord::{read_tf_record, write_tf_record};
pub use wav::{read_wav, wav_bytes, write_wav};

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All tracks are 16 kHz mono.
pub const SAMPLE_RATE: u32 = 16_000;

/// A mono time-domain track. Samples are dimensionless amplitudes with a
/// nominal range of [-1, 1]; the invariant enforced here is finiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(idx) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        Ok(Self { samples })
    }

    pub fn zeros(n: usize) -> Self {
        Self { samples: vec![0.0; n] }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Mean power over the full track.
    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic Hamming. Default: nonzero at the frame edges, so least-squares
    /// inversion stays well-posed even when the padding degenerates to zero.
    Hamming,
    /// Periodic Hann. Zero-valued at sample 0; exact-fit track lengths lose
    /// their first sample, so this is opt-in.
    Hann,
    Rect,
}

impl WindowKind {
    pub fn taper(&self, len: usize) -> Vec<f64> {
        let n = len as f64;
        (0..len)
            .map(|k| {
                let c = (2.0 * std::f64::consts::PI * k as f64 / n).cos();
                match self {
                    WindowKind::Hamming => 0.54 - 0.46 * c,
                    WindowKind::Hann => 0.5 * (1.0 - c),
                    WindowKind::Rect => 1.0,
                }
            })
            .collect()
    }
}

/// Global STFT configuration. `fft_size` and `n_frames` fix the embedding
/// grid; `mag_ceiling` is the corpus-level constant used by magnitude
/// compression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub n_frames: usize,
    pub window: WindowKind,
    pub min_len: usize,
    pub max_len: usize,
    pub mag_ceiling: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        // 0.5 s .. 8.0 s. 8 s is close to the hard invertibility limit of a
        // 256x256 embedding (131072 stored reals), and keeps hop <= 500.
        Self {
            fft_size: 510,
            n_frames: 256,
            window: WindowKind::Hamming,
            min_len: 8_000,
            max_len: 128_000,
            mag_ceiling: 128.0,
        }
    }
}

/// Per-track STFT geometry. A pure function of (original_length, config).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftPlan {
    pub fft_size: usize,
    pub window_length: usize,
    pub hop: usize,
    pub window_kind: WindowKind,
    pub n_frames: usize,
    pub n_bins: usize,
    pub original_length: usize,
}

impl StftPlan {
    pub fn padded_length(&self) -> usize {
        (self.n_frames - 1) * self.hop + self.window_length
    }

    pub fn pad_left(&self) -> usize {
        (self.padded_length() - self.original_length) / 2
    }

    /// Symmetrically zero-padded copy of `samples`.
    pub fn pad(&self, samples: &[f64]) -> Vec<f64> {
        let mut padded = vec![0.0; self.padded_length()];
        let l = self.pad_left();
        padded[l..l + samples.len()].copy_from_slice(samples);
        padded
    }

    /// Summed squared analysis windows at every padded position.
    pub fn window_norm(&self) -> Vec<f64> {
        let window = self.window_kind.taper(self.window_length);
        let mut wsum = vec![0.0; self.padded_length()];
        for f in 0..self.n_frames {
            let off = f * self.hop;
            for (t, w) in window.iter().enumerate() {
                wsum[off + t] += w * w;
            }
        }
        wsum
    }
}

/// Choose the per-track hop so that exactly `n_frames` frames cover the
/// padded track: hop = ceil((n - window) / (n_frames - 1)), with symmetric
/// zero-padding up to (n_frames - 1) * hop + window.
pub fn plan_stft(n: usize, cfg: &StftConfig) -> Result<StftPlan> {
    if n < cfg.min_len || n > cfg.max_len {
        return Err(Error::LengthOutOfRange { n, min: cfg.min_len, max: cfg.max_len });
    }
    let window_length = cfg.fft_size;
    let slots = cfg.n_frames - 1;
    let hop = if n <= window_length { 1 } else { (n - window_length).div_ceil(slots) };
    if hop > window_length {
        // Frames would leave gaps and inversion would be ill-posed.
        return Err(Error::LengthOutOfRange { n, min: cfg.min_len, max: slots * window_length + window_length });
    }
    Ok(StftPlan {
        fft_size: cfg.fft_size,
        window_length,
        hop,
        window_kind: cfg.window,
        n_frames: cfg.n_frames,
        n_bins: cfg.fft_size / 2 + 1,
        original_length: n,
    })
}

/// Paired magnitude/phase arrays on the fixed grid, plus the plan that
/// produced them. Magnitude is linear here; compression is a separate step.
#[derive(Debug, Clone)]
pub struct TfRepresentation {
    pub magnitude: Array2<f64>,
    pub phase: Array2<f64>,
    pub plan: StftPlan,
}

impl TfRepresentation {
    pub fn new(magnitude: Array2<f64>, phase: Array2<f64>, plan: StftPlan) -> Result<Self> {
        let want = (plan.n_bins, plan.n_frames);
        if magnitude.dim() != want || phase.dim() != want {
            return Err(Error::ShapeMismatch(
                vec![magnitude.dim().0, magnitude.dim().1],
                vec![want.0, want.1],
            ));
        }
        for ((r, c), &m) in magnitude.indexed_iter() {
            if !m.is_finite() || m < 0.0 {
                return Err(Error::NegativeMagnitude { value: m, row: r, col: c });
            }
        }
        Ok(Self { magnitude, phase, plan })
    }
}

/// Precomputed one-sided DFT bases for a given FFT size, shared by the plain
/// transforms here and the differentiable ops in `tape`.
pub struct DftBasis {
    pub fft_size: usize,
    pub n_bins: usize,
    /// [bins, N]: cos(2*pi*b*t/N)
    pub fwd_cos: Array2<f64>,
    /// [bins, N]: -sin(2*pi*b*t/N)  (so Im = fwd_sin . frame)
    pub fwd_sin: Array2<f64>,
    /// [N, bins]: coef_b * cos(2*pi*b*t/N) / N
    pub inv_cos: Array2<f64>,
    /// [N, bins]: -coef_b * sin(2*pi*b*t/N) / N
    pub inv_sin: Array2<f64>,
}

impl DftBasis {
    pub fn get(fft_size: usize) -> Arc<DftBasis> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<DftBasis>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap();
        guard.entry(fft_size).or_insert_with(|| Arc::new(DftBasis::build(fft_size))).clone()
    }

    fn build(fft_size: usize) -> DftBasis {
        let n = fft_size;
        let bins = n / 2 + 1;
        let nf = n as f64;
        let mut fwd_cos = Array2::zeros((bins, n));
        let mut fwd_sin = Array2::zeros((bins, n));
        let mut inv_cos = Array2::zeros((n, bins));
        let mut inv_sin = Array2::zeros((n, bins));
        for b in 0..bins {
            // Bins 0 and Nyquist appear once in the Hermitian expansion.
            let coef = if b == 0 || 2 * b == n { 1.0 } else { 2.0 };
            for t in 0..n {
                let ang = 2.0 * std::f64::consts::PI * b as f64 * t as f64 / nf;
                fwd_cos[[b, t]] = ang.cos();
                fwd_sin[[b, t]] = -ang.sin();
                inv_cos[[t, b]] = coef * ang.cos() / nf;
                inv_sin[[t, b]] = -coef * ang.sin() / nf;
            }
        }
        DftBasis { fft_size, n_bins: bins, fwd_cos, fwd_sin, inv_cos, inv_sin }
    }
}

/// Windowed frames as a [window_length, n_frames] matrix.
pub(crate) fn windowed_frames(padded: &[f64], plan: &StftPlan) -> Array2<f64> {
    let window = plan.window_kind.taper(plan.window_length);
    let mut frames = Array2::zeros((plan.window_length, plan.n_frames));
    for f in 0..plan.n_frames {
        let off = f * plan.hop;
        for t in 0..plan.window_length {
            frames[[t, f]] = padded[off + t] * window[t];
        }
    }
    frames
}

pub(crate) fn normalize_phase(p: f64) -> f64 {
    // atan2 returns [-pi, pi]; fold -pi onto +pi so phase sits in (-pi, pi].
    if p <= -std::f64::consts::PI {
        p + 2.0 * std::f64::consts::PI
    } else {
        p
    }
}

/// Forward STFT per the plan. Zero-magnitude cells get phase 0 by convention.
pub fn stft(w: &Waveform, plan: &StftPlan) -> Result<TfRepresentation> {
    if w.len() != plan.original_length {
        return Err(Error::PlanMismatch { n: w.len(), expected: plan.original_length });
    }
    let basis = DftBasis::get(plan.fft_size);
    let frames = windowed_frames(&plan.pad(w.samples()), plan);
    let re = basis.fwd_cos.dot(&frames);
    let im = basis.fwd_sin.dot(&frames);
    let mut magnitude = Array2::zeros((plan.n_bins, plan.n_frames));
    let mut phase = Array2::zeros((plan.n_bins, plan.n_frames));
    for ((idx, m), (&r, &i)) in magnitude.indexed_iter_mut().zip(re.iter().zip(im.iter())) {
        *m = (r * r + i * i).sqrt();
        phase[idx] = if *m == 0.0 { 0.0 } else { normalize_phase(i.atan2(r)) };
    }
    Ok(TfRepresentation { magnitude, phase, plan: plan.clone() })
}

/// Least-squares overlap-add inversion. Exact for any plan produced by
/// `plan_stft`, and linear in the magnitude for fixed phase.
pub fn istft(tf: &TfRepresentation) -> Result<Waveform> {
    let plan = &tf.plan;
    let want = (plan.n_bins, plan.n_frames);
    if tf.magnitude.dim() != want || tf.phase.dim() != want {
        return Err(Error::ShapeMismatch(
            vec![tf.magnitude.dim().0, tf.magnitude.dim().1],
            vec![want.0, want.1],
        ));
    }
    let basis = DftBasis::get(plan.fft_size);
    let re = ndarray::Zip::from(&tf.magnitude).and(&tf.phase).map_collect(|&m, &p| m * p.cos());
    let im = ndarray::Zip::from(&tf.magnitude).and(&tf.phase).map_collect(|&m, &p| m * p.sin());
    let segs = basis.inv_cos.dot(&re) + basis.inv_sin.dot(&im);
    let window = plan.window_kind.taper(plan.window_length);
    let mut acc = vec![0.0; plan.padded_length()];
    for f in 0..plan.n_frames {
        let off = f * plan.hop;
        for t in 0..plan.window_length {
            acc[off + t] += segs[[t, f]] * window[t];
        }
    }
    let wsum = plan.window_norm();
    let l = plan.pad_left();
    let out: Vec<f64> = (0..plan.original_length).map(|i| acc[l + i] / wsum[l + i]).collect();
    Waveform::new(out)
}

/// Monotone invertible magnitude compression: log1p scaled by the corpus
/// ceiling, mapping [0, ceiling] onto [0, 1].
pub fn magnitude_compress(m: &Array2<f64>, ceiling: f64) -> Result<Array2<f64>> {
    for ((r, c), &v) in m.indexed_iter() {
        if v < 0.0 {
            return Err(Error::NegativeMagnitude { value: v, row: r, col: c });
        }
    }
    let scale = 1.0 / ceiling.ln_1p();
    Ok(m.mapv(|v| v.ln_1p() * scale))
}

/// Inverse of [`magnitude_compress`].
pub fn magnitude_decompress(c: &Array2<f64>, ceiling: f64) -> Array2<f64> {
    let scale = ceiling.ln_1p();
    c.mapv(|v| (v * scale).exp_m1())
}

/// Relative L2 distance between two equal-length sample slices.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = a.iter().map(|x| x * x).sum();
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}
