//! Objective measures (segmental SNR, LPC log-likelihood ratio) and
//! listening-test score aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::audio_io::{Waveform, MODEL_RATE};
use crate::error::{Error, Result};

pub const SSNR_FRAME: usize = 512;
pub const SSNR_MIN_DB: f64 = -10.0;
pub const SSNR_MAX_DB: f64 = 35.0;
/// Frames whose clean energy is below this are left out of the average.
pub const SILENCE_ENERGY: f64 = 1e-8;
const ERROR_FLOOR: f64 = 1e-12;

pub const LLR_ORDER: usize = 16;
pub const LLR_FRAME: usize = 480;
pub const LLR_HOP: usize = 120;
/// Fraction of the best frames kept in the LLR average.
pub const LLR_KEEP: f64 = 0.95;
/// Relative white-noise correction added to the zero-lag autocorrelation, so
/// that frames made of a few pure sinusoids stay positive definite.
pub const LPC_NOISE_FLOOR: f64 = 1e-9;

fn same_length(a: &[f64], b: &[f64], frame: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < frame {
        return Err(Error::TooShort { needed: frame, actual: a.len() });
    }
    Ok(())
}

fn same_rate(clean: &Waveform, test: &Waveform) -> Result<()> {
    if clean.sample_rate != test.sample_rate {
        return Err(Error::WrongRate { expected: clean.sample_rate, actual: test.sample_rate });
    }
    Ok(())
}

/// Segmental SNR with the default 512-sample frames.
pub fn ssnr(clean: &Waveform, test: &Waveform) -> Result<f64> {
    same_rate(clean, test)?;
    ssnr_frames(&clean.samples, &test.samples, SSNR_FRAME)
}

/// Per non-overlapping frame `10·log10(Σx² / Σ(x−x̂)²)`, clamped to
/// [−10, 35] dB and averaged over non-silent frames. A trailing partial
/// frame is ignored.
pub fn ssnr_frames(clean: &[f64], test: &[f64], frame: usize) -> Result<f64> {
    same_length(clean, test, frame.max(1))?;
    let mut total = 0.0;
    let mut kept = 0usize;
    for (c, t) in clean.chunks_exact(frame).zip(test.chunks_exact(frame)) {
        let signal: f64 = c.iter().map(|v| v * v).sum();
        if signal < SILENCE_ENERGY {
            continue;
        }
        let error: f64 = c.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        let db = 10.0 * (signal / error.max(ERROR_FLOOR)).log10();
        total += db.clamp(SSNR_MIN_DB, SSNR_MAX_DB);
        kept += 1;
    }
    if kept == 0 {
        return Err(Error::AllFramesSilent);
    }
    Ok(total / kept as f64)
}

/// Solves the order-`p` normal equations for autocorrelation `r[0..=p]`.
/// Returns `a` with `a[0] = 1` (prediction filter `1 + Σ a_k z^-k`) and the
/// final prediction error.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<(Vec<f64>, f64)> {
    if r.len() <= order {
        return Err(Error::Numerical(format!("need {} autocorrelation lags, got {}", order + 1, r.len())));
    }
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut err = r[0];
    if !(err > 0.0) {
        return Err(Error::Numerical(format!("nonpositive frame energy {err}")));
    }
    for i in 1..=order {
        let acc: f64 = (0..i).map(|j| a[j] * r[i - j]).sum();
        let k = -acc / err;
        let prev = a.clone();
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        if !(err > 0.0) {
            return Err(Error::Numerical(format!("prediction error {err} at order {i}")));
        }
    }
    Ok((a, err))
}

pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag).map(|k| x.iter().zip(&x[k.min(x.len())..]).map(|(a, b)| a * b).sum()).collect()
}

fn hanning(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()).collect()
}

/// `a R aᵀ` with `R` the symmetric Toeplitz matrix built from `r`.
fn toeplitz_quadratic(a: &[f64], r: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, ai) in a.iter().enumerate() {
        for (j, aj) in a.iter().enumerate() {
            s += ai * aj * r[i.abs_diff(j)];
        }
    }
    s
}

/// LPC log-likelihood ratio (order 16, 30 ms Hanning frames, 7.5 ms hop) at 16 kHz.
pub fn llr(clean: &Waveform, test: &Waveform) -> Result<f64> {
    same_rate(clean, test)?;
    if clean.sample_rate != MODEL_RATE {
        return Err(Error::WrongRate { expected: MODEL_RATE, actual: clean.sample_rate });
    }
    llr_frames(&clean.samples, &test.samples, LLR_ORDER, LLR_FRAME, LLR_HOP)
}

/// Mean over the smallest 95% of per-frame `log(a_t R_c a_tᵀ / a_c R_c a_cᵀ)`.
pub fn llr_frames(clean: &[f64], test: &[f64], order: usize, frame: usize, hop: usize) -> Result<f64> {
    same_length(clean, test, frame)?;
    if hop == 0 {
        return Err(Error::InvalidWindow { window: frame, hop });
    }
    let win = hanning(frame);
    let mut values = Vec::new();
    let mut start = 0;
    while start + frame <= clean.len() {
        let wc: Vec<f64> = clean[start..start + frame].iter().zip(&win).map(|(x, w)| x * w).collect();
        let wt: Vec<f64> = test[start..start + frame].iter().zip(&win).map(|(x, w)| x * w).collect();
        let mut rc = autocorrelation(&wc, order);
        let mut rt = autocorrelation(&wt, order);
        rc[0] *= 1.0 + LPC_NOISE_FLOOR;
        rt[0] *= 1.0 + LPC_NOISE_FLOOR;
        let (ac, _) = levinson_durbin(&rc, order)?;
        let (at, _) = levinson_durbin(&rt, order)?;
        let ratio = toeplitz_quadratic(&at, &rc) / toeplitz_quadratic(&ac, &rc);
        values.push(ratio.ln());
        start += hop;
    }
    values.sort_by(f64::total_cmp);
    let keep = ((values.len() as f64 * LLR_KEEP).floor() as usize).max(1);
    Ok(values[..keep].iter().sum::<f64>() / keep as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum System {
    Noisy,
    Wiener,
    Segan,
}

impl System {
    pub const ALL: [System; 3] = [System::Noisy, System::Wiener, System::Segan];
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            System::Noisy => "noisy",
            System::Wiener => "wiener",
            System::Segan => "segan",
        })
    }
}

impl FromStr for System {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        System::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown system '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rating {
    pub listener: String,
    pub sentence: String,
    pub system: System,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RatingsTable {
    pub rows: Vec<Rating>,
}

impl RatingsTable {
    /// Parses `listener,sentence,system,score` lines; a header line is optional.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("listener,")) {
                continue;
            }
            let bad = |reason: String| Error::Ratings { line: i + 1, reason };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [listener, sentence, system, score] = fields[..] else {
                return Err(bad(format!("expected 4 fields, got {}", fields.len())));
            };
            let system = system.parse().map_err(|e: Error| bad(e.to_string()))?;
            let score: u8 = score.parse().map_err(|_| bad(format!("score '{score}' is not an integer")))?;
            if !(1..=5).contains(&score) {
                return Err(bad(format!("score {score} outside 1..5")));
            }
            rows.push(Rating { listener: listener.into(), sentence: sentence.into(), system, score });
        }
        Ok(Self { rows })
    }
}

/// Comparison of system `a` against `b` over all (listener, sentence) items.
#[derive(Debug, Clone, PartialEq)]
pub struct Cmos {
    pub a: System,
    pub b: System,
    /// Mean of `score_a − score_b`.
    pub mean: f64,
    pub prefer_a: f64,
    pub prefer_b: f64,
    pub no_preference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosSummary {
    pub mos: BTreeMap<System, f64>,
    pub cmos: Vec<Cmos>,
    pub items: usize,
}

pub const CMOS_PAIRS: [(System, System); 3] =
    [(System::Segan, System::Noisy), (System::Segan, System::Wiener), (System::Wiener, System::Noisy)];

pub fn aggregate_mos(table: &RatingsTable) -> Result<MosSummary> {
    let mut items: BTreeMap<(&str, &str), BTreeMap<System, u8>> = BTreeMap::new();
    for r in &table.rows {
        let slot = items.entry((&r.listener, &r.sentence)).or_default();
        if slot.insert(r.system, r.score).is_some() {
            return Err(Error::Ratings {
                line: 0,
                reason: format!("duplicate rating of {} by {} for {}", r.system, r.listener, r.sentence),
            });
        }
    }
    if items.is_empty() {
        return Err(Error::Ratings { line: 0, reason: "no ratings".into() });
    }
    for ((listener, sentence), scores) in &items {
        if scores.len() != System::ALL.len() {
            return Err(Error::IncompleteTriplet { listener: listener.to_string(), sentence: sentence.to_string() });
        }
    }
    let n = items.len() as f64;
    let mos = System::ALL
        .into_iter()
        .map(|s| (s, items.values().map(|m| m[&s] as f64).sum::<f64>() / n))
        .collect();
    let cmos = CMOS_PAIRS
        .into_iter()
        .map(|(a, b)| {
            let diffs: Vec<i32> = items.values().map(|m| m[&a] as i32 - m[&b] as i32).collect();
            let frac = |f: fn(&i32) -> bool| diffs.iter().filter(|d| f(d)).count() as f64 / n;
            Cmos {
                a,
                b,
                mean: diffs.iter().sum::<i32>() as f64 / n,
                prefer_a: frac(|d| *d > 0),
                prefer_b: frac(|d| *d < 0),
                no_preference: frac(|d| *d == 0),
            }
        })
        .collect();
    Ok(MosSummary { mos, cmos, items: items.len() })
}

/// Per-file metric values with aggregate means.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<(String, String, f64)>,
}

impl MetricReport {
    pub fn push(&mut self, file: impl Into<String>, metric: impl Into<String>, value: f64) {
        self.rows.push((file.into(), metric.into(), value));
    }

    pub fn means(&self) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (_, m, v) in &self.rows {
            let e = acc.entry(m.clone()).or_default();
            e.0 += v;
            e.1 += 1;
        }
        acc.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect()
    }

    /// `file,metric,value` rows followed by one `MEAN` row per metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("file,metric,value\n");
        for (f, m, v) in &self.rows {
            out.push_str(&format!("{f},{m},{v}\n"));
        }
        for (m, v) in self.means() {
            out.push_str(&format!("MEAN,{m},{v}\n"));
        }
        out
    }
}
