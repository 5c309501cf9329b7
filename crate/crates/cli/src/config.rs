//! `key=value` run configuration shared by every subcommand.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use segan::dataset::SynthSpec;
use segan::model::{GeneratorConfig, CONFIG_KEYS};
use segan::trainer::{TrainConfig, TRAIN_KEYS};
use segan::wiener::WienerConfig;

/// Synthetic corpus settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub utterances: usize,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { utterances: 64, duration_s: 1.0, seed: 0 }
    }
}

impl DataConfig {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec { utterances: self.utterances, duration_s: self.duration_s, seed: self.seed, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Paper,
    Reduced,
}

/// Every tunable of a run, addressable as `section.key`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub model: GeneratorConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub wiener: WienerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Paper,
            model: GeneratorConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            wiener: WienerConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| anyhow::anyhow!("{key}: invalid value '{value}'"))
}

impl RunConfig {
    /// Applies one setting. `model.preset` resets the model section, so it is
    /// applied before any other key regardless of where it appears.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, name) = key.split_once('.').with_context(|| format!("config key '{key}' has no section"))?;
        match (section, name) {
            ("model", "preset") => {
                (self.preset, self.model) = match value.trim() {
                    "paper" => (Preset::Paper, GeneratorConfig::default()),
                    "reduced" => (Preset::Reduced, GeneratorConfig::reduced()),
                    other => bail!("model.preset: expected 'paper' or 'reduced', got '{other}'"),
                }
            }
            ("model", k) if CONFIG_KEYS.contains(&k) => self.model.set(k, value)?,
            ("train", k) if TRAIN_KEYS.contains(&k) => self.train.set(k, value)?,
            ("data", "utterances") => self.data.utterances = parse(key, value)?,
            ("data", "duration_s") => self.data.duration_s = parse(key, value)?,
            ("data", "seed") => self.data.seed = parse(key, value)?,
            ("wiener", "alpha") => self.wiener.alpha = parse(key, value)?,
            ("wiener", "noise_frames") => self.wiener.noise_frames = parse(key, value)?,
            ("wiener", "gain_floor_db") => self.wiener.gain_floor_db = parse(key, value)?,
            _ => bail!("unknown config key '{key}'"),
        }
        Ok(())
    }

    /// Parses config file text: one `key=value` per line, `#` comments.
    pub fn parse_file_text(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').with_context(|| format!("line {}: expected key=value, got '{line}'", i + 1))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    /// Defaults, then the file, then the overrides; each layer puts
    /// `model.preset` first.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        let from_file = match file {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse_file_text(&text).with_context(|| format!("in config {}", p.display()))?
            }
            None => Vec::new(),
        };
        for layer in [&from_file[..], overrides] {
            let (preset, rest): (Vec<_>, Vec<_>) = layer.iter().partition(|(k, _)| k == "model.preset");
            for (k, v) in preset.into_iter().chain(rest) {
                cfg.set(k, v)?;
            }
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        cfg.wiener.validate()?;
        Ok(cfg)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![(
            "model.preset".to_string(),
            match self.preset {
                Preset::Paper => "paper",
                Preset::Reduced => "reduced",
            }
            .to_string(),
        )];
        out.extend(self.model.to_pairs().into_iter().map(|(k, v)| (format!("model.{k}"), v)));
        out.extend(self.train.to_pairs().into_iter().map(|(k, v)| (format!("train.{k}"), v)));
        out.push(("data.utterances".into(), self.data.utterances.to_string()));
        out.push(("data.duration_s".into(), self.data.duration_s.to_string()));
        out.push(("data.seed".into(), self.data.seed.to_string()));
        out.push(("wiener.alpha".into(), self.wiener.alpha.to_string()));
        out.push(("wiener.noise_frames".into(), self.wiener.noise_frames.to_string()));
        out.push(("wiener.gain_floor_db".into(), self.wiener.gain_floor_db.to_string()));
        out
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn precedence_flag_over_file_over_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# desk run\ntrain.lr = 0.001\ntrain.epochs=3 # short\nmodel.preset=reduced\n").unwrap();
        let cfg = RunConfig::resolve(Some(&path), &pairs(&[("train.epochs", "5")])).unwrap();
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.model, GeneratorConfig::reduced());
    }

    #[test]
    fn preset_applies_before_model_keys() {
        let cfg = RunConfig::resolve(None, &pairs(&[("model.window", "2048"), ("model.preset", "reduced")])).unwrap();
        assert_eq!(cfg.model.window, 2048);
        assert_eq!(cfg.model.enc_channels, GeneratorConfig::reduced().enc_channels);
    }

    #[test]
    fn unknown_keys_rejected() {
        for key in ["train.momentum", "lr", "audio.rate"] {
            assert!(RunConfig::resolve(None, &pairs(&[(key, "1")])).is_err(), "{key}");
        }
        assert!(RunConfig::parse_file_text("just words").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("model.preset", "reduced").unwrap();
        cfg.set("wiener.alpha", "0.9").unwrap();
        let back = RunConfig::resolve(None, &RunConfig::parse_file_text(&cfg.to_text()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
