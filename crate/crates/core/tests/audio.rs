use std::f64::consts::PI;

use proptest::prelude::*;

use segan::audio_io::{chunk, deemphasis, preemphasis, read_wav, read_wav_16k, reassemble, resample_48k_to_16k, write_wav, Waveform};

fn sine(freq: f64, rate: u32, n: usize) -> Waveform {
    Waveform::new((0..n).map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin()).collect(), rate)
}

fn interior_rms(w: &Waveform) -> f64 {
    let s = &w.samples[200..w.len() - 200];
    (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt()
}

#[test]
fn passband_tone_keeps_its_amplitude() {
    let out = resample_48k_to_16k(&sine(1000.0, 48_000, 48_000)).unwrap();
    assert_eq!((out.len(), out.sample_rate), (16_000, 16_000));
    let ratio = interior_rms(&out) / 0.5f64.sqrt();
    assert!((ratio - 1.0).abs() < 0.005, "{ratio}");
    // still a 1 kHz tone: compare against the ideal 16 kHz sine
    let ideal = sine(1000.0, 16_000, 16_000);
    let err = out.samples[200..15_800].iter().zip(&ideal.samples[200..15_800]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 0.01, "{err}");
}

#[test]
fn tone_above_the_new_nyquist_is_removed() {
    let out = resample_48k_to_16k(&sine(20_000.0, 48_000, 48_000)).unwrap();
    assert!(interior_rms(&out) < 0.01 * 0.5f64.sqrt());
}

#[test]
fn wav_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<f64> = (-50..50).map(|k| k as f64 * 321.0 / 32768.0).collect();
    let w = Waveform::new(values, 16_000);
    let path = dir.path().join("a.wav");
    write_wav(&w, &path).unwrap();
    assert_eq!(read_wav(&path).unwrap(), w);
    assert_eq!(read_wav_16k(&path).unwrap(), w);

    let hi = Waveform::new(vec![0.25; 4800], 48_000);
    write_wav(&hi, &path).unwrap();
    let down = read_wav_16k(&path).unwrap();
    assert_eq!((down.len(), down.sample_rate), (1600, 16_000));
    let w8k = Waveform::new(vec![0.0; 10], 8000);
    write_wav(&w8k, &path).unwrap();
    assert!(read_wav_16k(&path).is_err());
}

proptest! {
    #[test]
    fn emphasis_inverts(x in proptest::collection::vec(-1.0f64..1.0, 0..400)) {
        let w = Waveform::new(x.clone(), 16_000);
        for back in [deemphasis(&preemphasis(&w, 0.95), 0.95), preemphasis(&deemphasis(&w, 0.95), 0.95)] {
            for (a, b) in back.samples.iter().zip(&x) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            prop_assert_eq!(back.len(), x.len());
        }
    }

    #[test]
    fn chunking_is_lossless(x in proptest::collection::vec(-1.0f64..1.0, 1..3000), window in 1usize..700) {
        let c = chunk(&x, window, window).unwrap();
        prop_assert_eq!(c.chunks.len(), x.len().div_ceil(window));
        prop_assert_eq!(reassemble(&c.chunks, window, c.pad_len).unwrap(), x);
    }
}
