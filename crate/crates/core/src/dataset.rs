//! Synthetic speech-like and noise signals, SNR-controlled mixing and the
//! (noisy, clean) training pairs.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio_io::{self, chunk, preemphasis, Waveform, MODEL_RATE, PREEMPHASIS};
use crate::error::{Error, Result};

/// Peak bound of every synthesized clean signal.
pub const CLEAN_PEAK: f64 = 0.8;
/// The desk-scale SNR grid, in dB.
pub const DEFAULT_SNRS_DB: [f64; 4] = [0.0, 5.0, 10.0, 15.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    White,
    Pink,
    TonalHum,
    ModulatedBurst,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [NoiseKind::White, NoiseKind::Pink, NoiseKind::TonalHum, NoiseKind::ModulatedBurst];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::TonalHum => "tonal_hum",
            NoiseKind::ModulatedBurst => "modulated_burst",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown noise kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCondition {
    pub noise_kind: NoiseKind,
    pub snr_db: f64,
}

/// Kinds of synthetic voiced signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CleanKind {
    /// Steady fundamental.
    Vowel,
    /// Fundamental with a slow ±2% vibrato.
    Vibrato,
}

impl CleanKind {
    pub const ALL: [CleanKind; 2] = [CleanKind::Vowel, CleanKind::Vibrato];

    pub fn as_str(self) -> &'static str {
        match self {
            CleanKind::Vowel => "vowel",
            CleanKind::Vibrato => "vibrato",
        }
    }
}

impl FromStr for CleanKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CleanKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown clean kind '{s}'")))
    }
}

/// Everything random about one synthetic voiced utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicParams {
    pub f0: f64,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
    /// Syllable-rate envelope frequency in Hz.
    pub envelope_rate: f64,
    pub envelope_phase: f64,
    pub vibrato_depth: f64,
    pub peak: f64,
}

impl HarmonicParams {
    pub fn draw(kind: CleanKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f0 = rng.random_range(80.0..300.0);
        let harmonics = rng.random_range(3..=8);
        // the fundamental always dominates
        let amplitudes = (1..=harmonics)
            .map(|h| if h == 1 { 1.0 } else { rng.random_range(0.5..1.0) / h as f64 })
            .collect();
        let phases = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Self {
            f0,
            amplitudes,
            phases,
            envelope_rate: rng.random_range(1.5..4.0),
            envelope_phase: rng.random_range(0.0..2.0 * PI),
            vibrato_depth: match kind {
                CleanKind::Vowel => 0.0,
                CleanKind::Vibrato => 0.02,
            },
            peak: CLEAN_PEAK * rng.random_range(0.6..1.0),
        }
    }

    pub fn harmonics(&self) -> usize {
        self.amplitudes.len()
    }
}

const VIBRATO_RATE: f64 = 5.0;

fn sample_count(duration_s: f64, rate: u32) -> Result<usize> {
    if !(duration_s > 0.0) || !duration_s.is_finite() || rate == 0 {
        return Err(Error::Config(format!("duration {duration_s} s at {rate} Hz")));
    }
    Ok((duration_s * rate as f64).round() as usize)
}

/// Harmonic complex (3–8 harmonics, f0 in 80–300 Hz) under a slow amplitude
/// envelope, normalized to a peak of at most [`CLEAN_PEAK`].
pub fn synth_clean(kind: CleanKind, seed: u64, duration_s: f64, rate: u32) -> Result<Waveform> {
    let n = sample_count(duration_s, rate)?;
    let p = HarmonicParams::draw(kind, seed);
    let dt = 1.0 / rate as f64;
    let mut phase = 0.0;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let f = p.f0 * (1.0 + p.vibrato_depth * (2.0 * PI * VIBRATO_RATE * t).sin());
        let env = 0.55 - 0.45 * (2.0 * PI * p.envelope_rate * t + p.envelope_phase).cos();
        let s: f64 = p
            .amplitudes
            .iter()
            .zip(&p.phases)
            .enumerate()
            .map(|(h, (a, ph))| a * ((h + 1) as f64 * phase + ph).sin())
            .sum();
        samples.push(env * s);
        phase += 2.0 * PI * f * dt;
    }
    let max = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        let k = p.peak / max;
        samples.iter_mut().for_each(|v| *v *= k);
    }
    Ok(Waveform::new(samples, rate))
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize_rms(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
}

/// 1/f power spectrum by shaping white noise in the frequency domain.
fn pink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = white(rng, n).into_iter().map(|v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        *v = if bin == 0 { Complex::new(0.0, 0.0) } else { *v / (bin as f64).sqrt() };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

fn tonal_hum(rng: &mut ChaCha8Rng, n: usize, rate: u32) -> Vec<f64> {
    let partials: Vec<(f64, f64)> = (1..=6).map(|h| (1.0 / h as f64, rng.random_range(0.0..2.0 * PI))).collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            partials
                .iter()
                .enumerate()
                .map(|(h, (a, ph))| a * (2.0 * PI * 50.0 * (h + 1) as f64 * t + ph).sin())
                .sum()
        })
        .collect()
}

/// White noise switched on and off in random 50–250 ms segments, with 5 ms ramps.
fn modulated_burst(rng: &mut ChaCha8Rng, n: usize, rate: u32) -> Vec<f64> {
    let mut gate = Vec::with_capacity(n);
    let mut on = true;
    while gate.len() < n {
        let len = (rng.random_range(0.05..0.25) * rate as f64) as usize;
        gate.extend(std::iter::repeat_n(if on { 1.0 } else { 0.0 }, len.max(1)));
        on = !on;
    }
    gate.truncate(n);
    let ramp = (0.005 * rate as f64) as usize;
    let smoothed: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(ramp);
            let hi = (i + ramp + 1).min(n);
            gate[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    white(rng, n).into_iter().zip(smoothed).map(|(w, g)| w * g).collect()
}

/// Unit-RMS noise of the given kind, reproducible from `seed`.
pub fn synth_noise(kind: NoiseKind, seed: u64, duration_s: f64, rate: u32) -> Result<Waveform> {
    let n = sample_count(duration_s, rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = match kind {
        NoiseKind::White => white(&mut rng, n),
        NoiseKind::Pink => pink(&mut rng, n),
        NoiseKind::TonalHum => tonal_hum(&mut rng, n, rate),
        NoiseKind::ModulatedBurst => modulated_burst(&mut rng, n, rate),
    };
    normalize_rms(&mut x);
    Ok(Waveform::new(x, rate))
}

/// Noise gain that puts `noise` at `snr_db` below `clean`, powers measured over
/// the clean duration.
pub fn snr_gain(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<f64> {
    if noise.len() < clean.len() {
        return Err(Error::LengthMismatch(clean.len(), noise.len()));
    }
    let p_clean = clean.power();
    let n = clean.len().max(1);
    let p_noise = noise.samples[..clean.len()].iter().map(|v| v * v).sum::<f64>() / n as f64;
    if p_clean <= 0.0 {
        return Err(Error::ZeroPower("clean"));
    }
    if p_noise <= 0.0 {
        return Err(Error::ZeroPower("noise"));
    }
    Ok((p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// `clean + g·noise`, with `noise` truncated to the clean length.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::Config(format!(
            "sample rates differ: {} vs {}",
            clean.sample_rate, noise.sample_rate
        )));
    }
    let g = snr_gain(clean, noise, snr_db)?;
    let samples = clean.samples.iter().zip(&noise.samples).map(|(c, n)| c + g * n).collect();
    Ok(Waveform::new(samples, clean.sample_rate))
}

/// Preemphasized windows of a noisy signal and its clean reference, cut at the
/// same offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub noisy: Vec<f32>,
    pub clean: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSource {
    File(PathBuf),
    Synth(NoiseKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub clean_path: PathBuf,
    pub noise: NoiseSource,
    pub snr_db: f64,
    pub split: Split,
}

/// Tab-separated corpus listing: `clean_path  noise_path|SYNTH:kind  snr_db  split`.
/// Relative paths resolve against the manifest's directory; `#` starts a comment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let bad = |reason: String| Error::Manifest { line: i + 1, reason };
            let fields: Vec<&str> = line.split('\t').collect();
            let [clean, noise, snr, split] = fields[..] else {
                return Err(bad(format!("expected 4 tab-separated fields, got {}", fields.len())));
            };
            let resolve = |p: &str| {
                let p = Path::new(p);
                if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) }
            };
            let noise = match noise.strip_prefix("SYNTH:") {
                Some(kind) => NoiseSource::Synth(kind.parse().map_err(|e: Error| bad(e.to_string()))?),
                None => NoiseSource::File(resolve(noise)),
            };
            let snr_db: f64 = snr.trim().parse().map_err(|_| bad(format!("bad snr '{snr}'")))?;
            if !snr_db.is_finite() {
                return Err(bad(format!("snr must be finite, got {snr}")));
            }
            let split = split.trim().parse().map_err(|e: Error| bad(e.to_string()))?;
            entries.push(ManifestEntry { clean_path: resolve(clean), noise, snr_db, split });
        }
        Ok(Self { entries })
    }

    /// Reads and parses a manifest, checking that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let m = Self::parse(&text, path.parent().unwrap_or(Path::new(".")))?;
        for (i, e) in m.entries.iter().enumerate() {
            let mut paths = vec![&e.clean_path];
            if let NoiseSource::File(p) = &e.noise {
                paths.push(p);
            }
            if let Some(missing) = paths.into_iter().find(|p| !p.exists()) {
                return Err(Error::Manifest { line: i + 1, reason: format!("missing file {}", missing.display()) });
            }
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let noise = match &e.noise {
                NoiseSource::File(p) => p.display().to_string(),
                NoiseSource::Synth(k) => format!("SYNTH:{k}"),
            };
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.clean_path.display(), noise, e.snr_db, e.split));
        }
        out
    }
}

/// Derives independent stream seeds from one base seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A fully synthetic corpus: utterance `i` uses clean kind `i mod |clean_kinds|`,
/// noise kind `i mod |noise_kinds|` and SNR `(i / |noise_kinds|) mod |snrs|`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub utterances: usize,
    pub duration_s: f64,
    pub rate: u32,
    pub clean_kinds: Vec<CleanKind>,
    pub noise_kinds: Vec<NoiseKind>,
    pub snrs_db: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            utterances: 16,
            duration_s: 1.0,
            rate: MODEL_RATE,
            clean_kinds: CleanKind::ALL.to_vec(),
            noise_kinds: NoiseKind::ALL.to_vec(),
            snrs_db: DEFAULT_SNRS_DB.to_vec(),
            seed: 0,
        }
    }
}

/// One synthetic utterance and how it was made.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub clean_kind: CleanKind,
    pub clean_seed: u64,
    pub condition: NoiseCondition,
    pub noise_seed: u64,
}

impl SynthSpec {
    pub fn utterance(&self, i: usize) -> SynthUtterance {
        let nk = self.noise_kinds.len().max(1);
        SynthUtterance {
            clean_kind: self.clean_kinds[i % self.clean_kinds.len().max(1)],
            clean_seed: derive_seed(self.seed, 1, i as u64),
            condition: NoiseCondition {
                noise_kind: self.noise_kinds[i % nk],
                snr_db: self.snrs_db[(i / nk) % self.snrs_db.len().max(1)],
            },
            noise_seed: derive_seed(self.seed, 2, i as u64),
        }
    }

    /// `(clean, noisy)` for utterance `i`.
    pub fn render(&self, i: usize) -> Result<(Waveform, Waveform)> {
        if self.clean_kinds.is_empty() || self.noise_kinds.is_empty() || self.snrs_db.is_empty() {
            return Err(Error::Config("synthetic corpus needs clean kinds, noise kinds and SNRs".into()));
        }
        let u = self.utterance(i);
        let clean = synth_clean(u.clean_kind, u.clean_seed, self.duration_s, self.rate)?;
        let noise = synth_noise(u.condition.noise_kind, u.noise_seed, self.duration_s, self.rate)?;
        let noisy = mix_at_snr(&clean, &noise, u.condition.snr_db)?;
        Ok((clean, noisy))
    }
}

pub enum PairSource<'a> {
    Synth(&'a SynthSpec),
    Manifest { manifest: &'a Manifest, split: Split, seed: u64 },
}

impl PairSource<'_> {
    fn utterance_count(&self) -> usize {
        match self {
            PairSource::Synth(s) => s.utterances,
            PairSource::Manifest { manifest, .. } => manifest.entries.len(),
        }
    }

    /// `(clean, noisy)` at 16 kHz for the `i`-th entry, or `None` when the entry
    /// belongs to another split.
    fn render(&self, i: usize) -> Result<Option<(Waveform, Waveform)>> {
        match self {
            PairSource::Synth(s) => s.render(i).map(Some),
            PairSource::Manifest { manifest, split, seed } => {
                let e = &manifest.entries[i];
                if e.split != *split {
                    return Ok(None);
                }
                let clean = audio_io::read_wav_16k(&e.clean_path)?;
                let noise = match &e.noise {
                    NoiseSource::File(p) => {
                        let mut n = audio_io::read_wav_16k(p)?;
                        // loop short noise files to cover the utterance
                        if n.len() < clean.len() && !n.is_empty() {
                            let reps = clean.len().div_ceil(n.len());
                            n.samples = n.samples.repeat(reps);
                        }
                        n
                    }
                    NoiseSource::Synth(kind) => synth_noise(*kind, derive_seed(*seed, 3, i as u64), clean.duration_s(), clean.sample_rate)?,
                };
                mix_at_snr(&clean, &noise, e.snr_db).map(|noisy| Some((clean, noisy)))
            }
        }
    }
}

/// Lazily renders utterances and yields their training windows.
pub struct PairStream<'a> {
    source: PairSource<'a>,
    window: usize,
    hop: usize,
    next_utterance: usize,
    pending: std::vec::IntoIter<TrainingPair>,
}

impl Iterator for PairStream<'_> {
    type Item = Result<TrainingPair>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(p) = self.pending.next() {
                return Some(Ok(p));
            }
            if self.next_utterance >= self.source.utterance_count() {
                return None;
            }
            let i = self.next_utterance;
            self.next_utterance += 1;
            match self.source.render(i).and_then(|u| u.map(|(c, n)| windows(&c, &n, self.window, self.hop)).transpose()) {
                Ok(Some(pairs)) => self.pending = pairs.into_iter(),
                Ok(None) => {}
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

/// Preemphasizes both signals and cuts them into aligned windows.
pub fn windows(clean: &Waveform, noisy: &Waveform, window: usize, hop: usize) -> Result<Vec<TrainingPair>> {
    if clean.len() != noisy.len() {
        return Err(Error::LengthMismatch(clean.len(), noisy.len()));
    }
    let c = chunk(&preemphasis(clean, PREEMPHASIS).samples, window, hop)?;
    let n = chunk(&preemphasis(noisy, PREEMPHASIS).samples, window, hop)?;
    let to32 = |v: Vec<f64>| v.into_iter().map(|s| s as f32).collect();
    Ok(n.chunks.into_iter().zip(c.chunks).map(|(noisy, clean)| TrainingPair { noisy: to32(noisy), clean: to32(clean) }).collect())
}

pub fn pair_stream(source: PairSource<'_>, window: usize, hop: usize) -> Result<PairStream<'_>> {
    if window == 0 || hop == 0 || hop > window {
        return Err(Error::InvalidWindow { window, hop });
    }
    Ok(PairStream { source, window, hop, next_utterance: 0, pending: Vec::new().into_iter() })
}

/// Collects every training window of a source at 50% overlap.
pub fn build_pairs(source: PairSource<'_>, window: usize) -> Result<Vec<TrainingPair>> {
    pair_stream(source, window, (window / 2).max(1))?.collect()
}
