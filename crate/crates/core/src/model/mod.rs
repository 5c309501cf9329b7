//! Generator and discriminator topologies.
//!
//! Both networks are parameterized by one [`GeneratorConfig`]; the paper-scale
//! model (window 16384, eleven encoder stages) and the reduced desk-scale
//! variants share the same code path.

mod discriminator;
mod generator;

use std::fmt;
use std::path::Path;

pub use discriminator::{Discriminator, LEAKY_SLOPE};
pub use generator::{Ablation, Generator, PRELU_INIT};

use crate::error::{Error, Result};
use crate::tensor::{checkpoint, ParamStore, Scalar, Tensor};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub window: usize,
    pub filter_width: usize,
    pub stride: usize,
    pub enc_channels: Vec<usize>,
    pub z_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            window: 16384,
            filter_width: 31,
            stride: 2,
            enc_channels: vec![16, 32, 32, 64, 64, 128, 128, 256, 256, 512, 1024],
            z_channels: 1024,
        }
    }
}

pub const CONFIG_KEYS: [&str; 5] = ["window", "filter_width", "stride", "enc_channels", "z_channels"];

impl GeneratorConfig {
    /// Desk-scale variant: window 1024, four encoder stages.
    pub fn reduced() -> Self {
        Self { window: 1024, filter_width: 31, stride: 2, enc_channels: vec![16, 32, 64, 128], z_channels: 128 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc_channels.is_empty() {
            return Err(Error::Config("enc_channels must not be empty".into()));
        }
        if self.enc_channels.contains(&0) || self.z_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.stride == 0 || self.window == 0 {
            return Err(Error::Config("window and stride must be positive".into()));
        }
        if self.filter_width != 1 && self.filter_width.is_multiple_of(2) {
            return Err(Error::Config(format!("filter_width {} must be odd or 1", self.filter_width)));
        }
        let decimation = self
            .stride
            .checked_pow(self.enc_channels.len() as u32)
            .ok_or_else(|| Error::Config("stride^layers overflows".into()))?;
        if !self.window.is_multiple_of(decimation) {
            return Err(Error::Config(format!(
                "window {} is not divisible by stride^layers = {decimation}",
                self.window
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.enc_channels.len()
    }

    /// Length of the thought vector.
    pub fn bottleneck_len(&self) -> usize {
        self.window / self.stride.pow(self.enc_channels.len() as u32)
    }

    pub fn bottleneck_channels(&self) -> usize {
        *self.enc_channels.last().expect("validated")
    }

    /// Output channels of decoder stage `j` (the last stage emits the waveform).
    pub(crate) fn decoder_out_channels(&self, j: usize) -> usize {
        let n = self.layers();
        if j + 1 == n {
            1
        } else {
            self.enc_channels[n - 2 - j]
        }
    }

    /// Input channels of decoder stage `j`: thought vector ++ z for the first
    /// stage, previous output ++ homologous skip afterwards.
    pub(crate) fn decoder_in_channels(&self, j: usize) -> usize {
        let n = self.layers();
        if j == 0 {
            self.enc_channels[n - 1] + self.z_channels
        } else {
            2 * self.enc_channels[n - 1 - j]
        }
    }

    pub fn conv_layer_count(&self) -> usize {
        2 * self.layers()
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let channels = self.enc_channels.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("window", self.window.to_string()),
            ("filter_width", self.filter_width.to_string()),
            ("stride", self.stride.to_string()),
            ("enc_channels", channels),
            ("z_channels", self.z_channels.to_string()),
        ]
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<usize> {
            v.trim().parse().map_err(|_| Error::Config(format!("{key}: '{v}' is not a non-negative integer")))
        };
        match key {
            "window" => self.window = num(value)?,
            "filter_width" => self.filter_width = num(value)?,
            "stride" => self.stride = num(value)?,
            "z_channels" => self.z_channels = num(value)?,
            "enc_channels" => {
                self.enc_channels = value.split(',').filter(|s| !s.trim().is_empty()).map(num).collect::<Result<_>>()?
            }
            other => return Err(Error::Config(format!("unknown model key '{other}'"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Input,
    Encoder(usize),
    /// Thought vector concatenated with z.
    Bottleneck,
    Decoder(usize),
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Input => write!(f, "input"),
            Stage::Encoder(i) => write!(f, "enc{}", i + 1),
            Stage::Bottleneck => write!(f, "bottleneck+z"),
            Stage::Decoder(j) => write!(f, "dec{}", j + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerEntry {
    pub stage: Stage,
    pub length: usize,
    pub channels: usize,
}

impl fmt::Display for LedgerEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.length, self.channels)
    }
}

/// Per-layer `(length, channels)` of the generator, by arithmetic alone:
/// the input and every encoder output, the bottleneck after the z concat, and
/// every decoder output after its skip concat.
pub fn shape_ledger(cfg: &GeneratorConfig) -> Vec<LedgerEntry> {
    let n = cfg.layers();
    let mut out = vec![LedgerEntry { stage: Stage::Input, length: cfg.window, channels: 1 }];
    let mut len = cfg.window;
    for (i, &c) in cfg.enc_channels.iter().enumerate() {
        len = len.div_ceil(cfg.stride);
        out.push(LedgerEntry { stage: Stage::Encoder(i), length: len, channels: c });
    }
    out.push(LedgerEntry { stage: Stage::Bottleneck, length: len, channels: cfg.bottleneck_channels() + cfg.z_channels });
    for j in 0..n {
        len *= cfg.stride;
        let c = cfg.decoder_out_channels(j);
        let channels = if j + 1 == n { c } else { 2 * c };
        out.push(LedgerEntry { stage: Stage::Decoder(j), length: len, channels });
    }
    out
}

/// The paper-scale encoder ledger, `length x channels`, input first.
pub const PAPER_ENCODER_LEDGER: [(usize, usize); 12] = [
    (16384, 1),
    (8192, 16),
    (4096, 32),
    (2048, 32),
    (1024, 64),
    (512, 64),
    (256, 128),
    (128, 128),
    (64, 256),
    (32, 256),
    (16, 512),
    (8, 1024),
];

/// Generator plus discriminator, as stored in one checkpoint file.
#[derive(Debug, Clone)]
pub struct Segan<T> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
}

impl<T: Scalar> Segan<T> {
    pub fn build(cfg: &GeneratorConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            generator: Generator::build(cfg, seed)?,
            discriminator: Discriminator::build(cfg, seed.wrapping_add(1))?,
        })
    }

    pub fn tensors(&self) -> ParamStore<T> {
        let mut all = self.generator.params.clone();
        for (name, t) in self.discriminator.params.iter().chain(self.discriminator.reference_tensors().iter()) {
            all.insert(name, t.clone());
        }
        all
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(&self.tensors(), path)
    }
}

/// Copies every tensor named in `expected` out of `file`, checking shapes.
fn restore_into<T: Scalar>(expected: &mut ParamStore<T>, file: &ParamStore<f32>) -> Result<()> {
    let names: Vec<String> = expected.names().map(str::to_string).collect();
    for name in names {
        let src = file
            .get(&name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {name}")))?;
        let dst = expected.get_mut(&name).expect("listed above");
        if src.shape() != dst.shape() {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {name} has shape {:?}, model expects {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        *dst = src.cast();
    }
    Ok(())
}

impl Segan<f32> {
    /// Loads a full checkpoint into the topology described by `cfg`.
    pub fn load_checkpoint(cfg: &GeneratorConfig, path: impl AsRef<Path>) -> Result<Self> {
        let file = checkpoint::load(path)?;
        let mut model = Self::build(cfg, 0)?;
        restore_into(&mut model.generator.params, &file)?;
        restore_into(&mut model.discriminator.params, &file)?;
        model.discriminator.restore_reference(&file)?;
        let known = model.generator.params.len() + model.discriminator.params.len() + model.discriminator.reference_tensors().len();
        if known != file.len() {
            let unexpected = file
                .names()
                .find(|n| model.generator.params.get(n).is_none() && model.discriminator.params.get(n).is_none() && !n.contains(".ref_"))
                .unwrap_or("<reference stats>");
            return Err(Error::CorruptCheckpoint(format!("unexpected tensor {unexpected}")));
        }
        Ok(model)
    }
}

impl Generator<f32> {
    /// Loads only the generator tensors of a checkpoint.
    pub fn load_checkpoint(cfg: &GeneratorConfig, path: impl AsRef<Path>) -> Result<Self> {
        let file = checkpoint::load(path)?;
        let mut g = Self::build(cfg, 0)?;
        restore_into(&mut g.params, &file)?;
        Ok(g)
    }
}

pub(crate) fn init_weight<T: Scalar>(shape: &[usize], rng: &mut impl rand::Rng) -> Tensor<T> {
    Tensor::randn_with(shape, INIT_STD, rng)
}
