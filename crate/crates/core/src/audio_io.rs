//! WAV I/O, 48 kHz → 16 kHz decimation, pre/deemphasis and fixed-window chunking.

use std::f64::consts::PI;
use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use crate::error::{Error, Result};

/// Sample rate every model and metric in this crate works at.
pub const MODEL_RATE: u32 = 16_000;
/// Preemphasis coefficient applied to every model input.
pub const PREEMPHASIS: f64 = 0.95;

/// Mono floating-point signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(sample_rate > 0);
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean square over the whole signal.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }
}

const PCM_SCALE_IN: f64 = 32768.0;

fn chunk_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn chunk_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Decodes a RIFF/WAVE byte buffer holding 16-bit mono PCM.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::UnsupportedFormat("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = chunk_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(Error::UnsupportedFormat("truncated fmt chunk".into()));
                }
                let mut tag = chunk_u16(bytes, body);
                let channels = chunk_u16(bytes, body + 2);
                let rate = chunk_u32(bytes, body + 4);
                let bits = chunk_u16(bytes, body + 14);
                // WAVE_FORMAT_EXTENSIBLE carries the real format tag in its sub-format GUID.
                if tag == 0xFFFE && size >= 26 && body + 26 <= bytes.len() {
                    tag = chunk_u16(bytes, body + 24);
                }
                format = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, channels, rate, bits) = format
                    .ok_or_else(|| Error::UnsupportedFormat("data chunk before fmt chunk".into()))?;
                if tag != 1 {
                    return Err(Error::UnsupportedFormat(format!("format tag {tag} is not PCM")));
                }
                if channels != 1 {
                    return Err(Error::UnsupportedFormat(format!(
                        "{channels} channels; only mono is supported"
                    )));
                }
                if bits != 16 {
                    return Err(Error::UnsupportedFormat(format!(
                        "{bits}-bit samples; only 16-bit is supported"
                    )));
                }
                if rate == 0 {
                    return Err(Error::UnsupportedFormat("sample rate 0".into()));
                }
                let end = (body + size).min(bytes.len());
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / PCM_SCALE_IN)
                    .collect();
                return Ok(Waveform::new(samples, rate));
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body + size + (size & 1);
    }
    Err(Error::UnsupportedFormat("missing fmt or data chunk".into()))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_wav(&bytes)
}

/// Quantizes one sample to 16-bit PCM, clipping out-of-range values.
pub fn quantize(sample: f64) -> i16 {
    (sample * PCM_SCALE_IN).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let data_len = (w.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_wav(w))?;
    Ok(())
}

/// Reads a WAV and brings it to the model rate, decimating 48 kHz input.
pub fn read_wav_16k(path: impl AsRef<Path>) -> Result<Waveform> {
    let w = read_wav(path)?;
    match w.sample_rate {
        MODEL_RATE => Ok(w),
        48_000 => resample_48k_to_16k(&w),
        other => Err(Error::UnsupportedFormat(format!(
            "sample rate {other} Hz; expected 16000 or 48000"
        ))),
    }
}

const DECIMATION: usize = 3;
const RESAMPLER_TAPS: usize = 127;
/// Cutoff as a fraction of the output rate.
const RESAMPLER_CUTOFF: f64 = 0.45;

/// Hamming-windowed sinc low-pass, normalized to unit DC gain.
fn decimation_filter() -> Vec<f64> {
    let fc = RESAMPLER_CUTOFF / DECIMATION as f64; // cycles per input sample
    let mid = (RESAMPLER_TAPS / 2) as f64;
    let mut h: Vec<f64> = (0..RESAMPLER_TAPS)
        .map(|n| {
            let t = n as f64 - mid;
            let sinc = if t == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * t).sin() / (PI * t) };
            let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / (RESAMPLER_TAPS - 1) as f64).cos();
            sinc * window
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Anti-aliased 3:1 decimation. Only the retained output phases are computed.
pub fn resample_48k_to_16k(w: &Waveform) -> Result<Waveform> {
    if w.sample_rate != 48_000 {
        return Err(Error::WrongRate { expected: 48_000, actual: w.sample_rate });
    }
    let h = decimation_filter();
    let half = (RESAMPLER_TAPS / 2) as isize;
    let x = &w.samples;
    let out_len = x.len().div_ceil(DECIMATION);
    let samples = (0..out_len)
        .map(|m| {
            let centre = (m * DECIMATION) as isize;
            h.iter()
                .enumerate()
                .filter_map(|(k, hk)| {
                    let idx = centre + k as isize - half;
                    (idx >= 0 && (idx as usize) < x.len()).then(|| hk * x[idx as usize])
                })
                .sum()
        })
        .collect();
    Ok(Waveform::new(samples, MODEL_RATE))
}

pub fn preemphasis(w: &Waveform, coef: f64) -> Waveform {
    let x = &w.samples;
    let mut y = Vec::with_capacity(x.len());
    if let Some(&first) = x.first() {
        y.push(first);
        y.extend(x.windows(2).map(|p| p[1] - coef * p[0]));
    }
    Waveform { samples: y, sample_rate: w.sample_rate }
}

pub fn deemphasis(w: &Waveform, coef: f64) -> Waveform {
    let mut prev = 0.0;
    let samples = w
        .samples
        .iter()
        .enumerate()
        .map(|(n, &x)| {
            prev = if n == 0 { x } else { x + coef * prev };
            prev
        })
        .collect();
    Waveform { samples, sample_rate: w.sample_rate }
}

/// Fixed-length windows cut from a signal plus the zero padding appended to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunks {
    pub chunks: Vec<Vec<f64>>,
    pub window: usize,
    pub hop: usize,
    pub pad_len: usize,
}

/// Cuts `ceil(len / hop)` windows starting every `hop` samples, zero-padding the
/// tail so that the last window is full.
pub fn chunk(samples: &[f64], window: usize, hop: usize) -> Result<Chunks> {
    if window == 0 || hop == 0 || hop > window {
        return Err(Error::InvalidWindow { window, hop });
    }
    let count = samples.len().div_ceil(hop);
    let padded_len = if count == 0 { 0 } else { (count - 1) * hop + window };
    let pad_len = padded_len.saturating_sub(samples.len());
    let chunks = (0..count)
        .map(|i| {
            let start = i * hop;
            let mut c = vec![0.0; window];
            let end = (start + window).min(samples.len());
            c[..end - start].copy_from_slice(&samples[start..end]);
            c
        })
        .collect();
    Ok(Chunks { chunks, window, hop, pad_len })
}

/// Concatenates non-overlapping windows and trims the trailing padding.
pub fn reassemble(chunks: &[Vec<f64>], hop: usize, pad_len: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(chunks.len() * hop);
    for c in chunks {
        if c.len() != hop {
            return Err(Error::OverlapUnsupported { window: c.len(), hop });
        }
        out.extend_from_slice(c);
    }
    if pad_len > out.len() {
        return Err(Error::InvalidWindow { window: out.len(), hop: pad_len });
    }
    out.truncate(out.len() - pad_len);
    Ok(out)
}
