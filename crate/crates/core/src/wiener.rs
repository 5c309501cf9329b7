//! Short-time Fourier analysis/synthesis and the decision-directed Wiener
//! filter used as the classical baseline.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio_io::Waveform;
use crate::error::{Error, Result};

pub const FRAME: usize = 512;
pub const HOP: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Hamming,
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let (a0, a1) = match self {
            WindowKind::Hamming => (0.54, 0.46),
            WindowKind::Hann => (0.5, 0.5),
            WindowKind::Rectangular => (1.0, 0.0),
        };
        (0..n).map(|i| a0 - a1 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
    }
}

/// One-sided spectra of overlapping windowed frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// `n_frames × (frame_len/2 + 1)` bins.
    pub frames: Vec<Vec<Complex<f64>>>,
    pub frame_len: usize,
    pub hop: usize,
    pub window: WindowKind,
    /// Length of the analysed signal before tail padding.
    pub signal_len: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

/// Windowed FFT every `hop` samples; the tail is zero-padded so every sample
/// lies in at least one frame.
pub fn stft(w: &Waveform, frame: usize, hop: usize, window: WindowKind) -> Result<Spectrogram> {
    if frame < 2 || hop == 0 || hop > frame {
        return Err(Error::InvalidWindow { window: frame, hop });
    }
    if w.len() < frame {
        return Err(Error::TooShort { needed: frame, actual: w.len() });
    }
    let n_frames = 1 + (w.len() - frame).div_ceil(hop);
    let win = window.coefficients(frame);
    let fft = FftPlanner::new().plan_fft_forward(frame);
    let n_bins = frame / 2 + 1;
    let frames = (0..n_frames)
        .map(|t| {
            let start = t * hop;
            let mut buf: Vec<Complex<f64>> = (0..frame)
                .map(|i| Complex::new(w.samples.get(start + i).copied().unwrap_or(0.0) * win[i], 0.0))
                .collect();
            fft.process(&mut buf);
            buf.truncate(n_bins);
            buf
        })
        .collect();
    Ok(Spectrogram { frames, frame_len: frame, hop, window, signal_len: w.len(), sample_rate: w.sample_rate })
}

/// Weighted overlap-add with least-squares normalization `Σ w·x_t / Σ w²`,
/// which inverts [`stft`] wherever the window sum is nonzero.
pub fn istft(s: &Spectrogram) -> Result<Waveform> {
    let (frame, hop, n_bins) = (s.frame_len, s.hop, s.n_bins());
    if frame < 2 || hop == 0 || hop > frame {
        return Err(Error::InconsistentShape(format!("frame {frame}, hop {hop}")));
    }
    if let Some((t, f)) = s.frames.iter().enumerate().find(|(_, f)| f.len() != n_bins) {
        return Err(Error::InconsistentShape(format!("frame {t} has {} bins, expected {n_bins}", f.len())));
    }
    if s.frames.is_empty() {
        return Err(Error::InconsistentShape("no frames".into()));
    }
    let covered = (s.n_frames() - 1) * hop + frame;
    if covered < s.signal_len {
        return Err(Error::InconsistentShape(format!("{} frames cover {covered} samples, signal has {}", s.n_frames(), s.signal_len)));
    }
    let win = s.window.coefficients(frame);
    let ifft = FftPlanner::new().plan_fft_inverse(frame);
    let mut acc = vec![0.0; covered];
    let mut norm = vec![0.0; covered];
    let mut buf = vec![Complex::new(0.0, 0.0); frame];
    for (t, spec) in s.frames.iter().enumerate() {
        buf[..n_bins].copy_from_slice(spec);
        for k in n_bins..frame {
            buf[k] = spec[frame - k].conj();
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for i in 0..frame {
            acc[start + i] += buf[i].re / frame as f64 * win[i];
            norm[start + i] += win[i] * win[i];
        }
    }
    let samples = acc
        .into_iter()
        .zip(norm)
        .take(s.signal_len)
        .map(|(a, n)| if n > 1e-12 { a / n } else { 0.0 })
        .collect();
    Ok(Waveform::new(samples, s.sample_rate))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WienerConfig {
    /// Decision-directed smoothing constant.
    pub alpha: f64,
    /// Leading frames used for the noise estimate.
    pub noise_frames: usize,
    pub gain_floor_db: f64,
    pub frame: usize,
    pub hop: usize,
}

impl Default for WienerConfig {
    fn default() -> Self {
        Self { alpha: 0.98, noise_frames: 6, gain_floor_db: -25.0, frame: FRAME, hop: HOP }
    }
}

impl WienerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if self.noise_frames == 0 {
            return Err(Error::Config("noise_frames must be positive".into()));
        }
        if !(self.gain_floor_db <= 0.0) {
            return Err(Error::Config(format!("gain floor must be ≤ 0 dB, got {}", self.gain_floor_db)));
        }
        Ok(())
    }

    pub fn gain_floor(&self) -> f64 {
        10f64.powf(self.gain_floor_db / 20.0)
    }
}

/// Noise power below which a bin is treated as noise-free.
const NOISE_FLOOR: f64 = 1e-20;

/// Per-frame, per-bin gains `H = max(ξ/(1+ξ), floor)`, with `ξ` tracked by the
/// decision-directed rule. The recursion starts as if the previous frame's
/// estimate had `H²γ = 1`.
pub fn wiener_gains(spec: &Spectrogram, cfg: &WienerConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if spec.n_frames() <= cfg.noise_frames {
        return Err(Error::TooShort { needed: (cfg.noise_frames + 1) * spec.hop + spec.frame_len, actual: spec.signal_len });
    }
    let n_bins = spec.n_bins();
    let noise: Vec<f64> = (0..n_bins)
        .map(|k| {
            let p = spec.frames[..cfg.noise_frames].iter().map(|f| f[k].norm_sqr()).sum::<f64>() / cfg.noise_frames as f64;
            p.max(NOISE_FLOOR)
        })
        .collect();
    let floor = cfg.gain_floor();
    let mut prev_clean_snr = vec![1.0; n_bins];
    let mut gains = Vec::with_capacity(spec.n_frames());
    for f in &spec.frames {
        let mut h = vec![0.0; n_bins];
        for k in 0..n_bins {
            let gamma = f[k].norm_sqr() / noise[k];
            let xi = cfg.alpha * prev_clean_snr[k] + (1.0 - cfg.alpha) * (gamma - 1.0).max(0.0);
            h[k] = (xi / (1.0 + xi)).max(floor).min(1.0);
            prev_clean_snr[k] = h[k] * h[k] * gamma;
        }
        gains.push(h);
    }
    Ok(gains)
}

/// Filters `noisy` with [`wiener_gains`]; the output has the input's length.
pub fn enhance_wiener(noisy: &Waveform, cfg: &WienerConfig) -> Result<Waveform> {
    let mut spec = stft(noisy, cfg.frame, cfg.hop, WindowKind::Hamming)?;
    let gains = wiener_gains(&spec, cfg)?;
    for (f, h) in spec.frames.iter_mut().zip(&gains) {
        for (bin, g) in f.iter_mut().zip(h) {
            *bin *= *g;
        }
    }
    istft(&spec)
}
