//! Three-phase least-squares adversarial training with the L1 term, and
//! whole-file enhancement with a trained generator.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio_io::{self, chunk, deemphasis, preemphasis, reassemble, Waveform, PREEMPHASIS};
use crate::dataset::{derive_seed, TrainingPair};
use crate::error::{Error, Result};
use crate::model::{Ablation, Generator, GeneratorConfig, Segan};
use crate::tensor::{cast, sample_z, Graph, ParamStore, RmsProp, RmsPropConfig, Scalar, Tensor};

pub const LOSS_LOG_HEADER: &str = "step,d_real,d_fake,g_adv,g_l1";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Examples per optimizer step.
    pub batch_size: usize,
    /// Examples per forward/backward pass; gradients of the micro-batches are
    /// accumulated into one step. `0` means the whole batch.
    pub micro_batch: usize,
    pub lambda_l1: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// When false, only the generator is trained, on the L1 term alone.
    pub adversarial: bool,
    /// Stops training after this many steps, whatever the epoch count.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 86,
            lr: 2e-4,
            batch_size: 16,
            micro_batch: 0,
            lambda_l1: 100.0,
            seed: 0,
            checkpoint_every: 1000,
            adversarial: true,
            max_steps: None,
        }
    }
}

pub const TRAIN_KEYS: [&str; 9] =
    ["epochs", "lr", "batch_size", "micro_batch", "lambda_l1", "seed", "checkpoint_every", "adversarial", "max_steps"];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("epochs, batch_size and checkpoint_every must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lambda_l1 >= 0.0) || !self.lambda_l1.is_finite() {
            return Err(Error::Config(format!("lambda_l1 must be ≥ 0, got {}", self.lambda_l1)));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }

    fn micro(&self) -> usize {
        if self.micro_batch == 0 {
            self.batch_size
        } else {
            self.micro_batch
        }
    }

    pub fn optimizer(&self) -> RmsPropConfig {
        RmsPropConfig { lr: self.lr, ..RmsPropConfig::default() }
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("micro_batch", self.micro_batch.to_string()),
            ("lambda_l1", self.lambda_l1.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("adversarial", self.adversarial.to_string()),
            ("max_steps", self.max_steps.map_or_else(|| "none".into(), |s| s.to_string())),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = || Error::Config(format!("{key}: invalid value '{value}'"));
        let int = || v.parse::<usize>().map_err(|_| bad());
        let float = || v.parse::<f64>().map_err(|_| bad());
        match key {
            "epochs" => self.epochs = int()?,
            "lr" => self.lr = float()?,
            "batch_size" => self.batch_size = int()?,
            "micro_batch" => self.micro_batch = int()?,
            "lambda_l1" => self.lambda_l1 = float()?,
            "seed" => self.seed = v.parse().map_err(|_| bad())?,
            "checkpoint_every" => self.checkpoint_every = int()?,
            "adversarial" => self.adversarial = v.parse().map_err(|_| bad())?,
            "max_steps" => self.max_steps = if v == "none" { None } else { Some(int()?) },
            other => return Err(Error::Config(format!("unknown train key '{other}'"))),
        }
        Ok(())
    }
}

/// Losses of one training step; phases that did not run report 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub d_real: f64,
    pub d_fake: f64,
    pub g_adv: f64,
    pub g_l1: f64,
}

impl StepReport {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.d_real, self.d_fake, self.g_adv, self.g_l1)
    }
}

/// Points at which [`Trainer::train_step_observed`] reports the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Start,
    DiscriminatorReal,
    DiscriminatorFake,
    Generator,
}

/// `(B, window, 1)` noisy and clean tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub noisy: Tensor<T>,
    pub clean: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_pairs(pairs: &[&TrainingPair]) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::Config("empty batch".into()))?;
        let len = first.noisy.len();
        let mut noisy = Vec::with_capacity(pairs.len() * len);
        let mut clean = Vec::with_capacity(pairs.len() * len);
        for p in pairs {
            if p.noisy.len() != len || p.clean.len() != len {
                return Err(Error::LengthMismatch(len, p.noisy.len().max(p.clean.len())));
            }
            noisy.extend(p.noisy.iter().map(|&v| cast::<T>(v as f64)));
            clean.extend(p.clean.iter().map(|&v| cast::<T>(v as f64)));
        }
        let shape = [pairs.len(), len, 1];
        Ok(Self { noisy: Tensor::from_vec(&shape, noisy)?, clean: Tensor::from_vec(&shape, clean)? })
    }

    pub fn size(&self) -> usize {
        self.noisy.shape()[0]
    }

    /// Consecutive sub-batches of at most `micro` examples.
    pub fn split(&self, micro: usize) -> Vec<Batch<T>> {
        let (b, len, _) = (self.noisy.shape()[0], self.noisy.shape()[1], 1);
        if micro >= b {
            return vec![self.clone()];
        }
        (0..b)
            .step_by(micro)
            .map(|start| {
                let end = (start + micro).min(b);
                let take = |t: &Tensor<T>| {
                    Tensor::from_vec(&[end - start, len, 1], t.data()[start * len..end * len].to_vec()).expect("slice of batch")
                };
                Batch { noisy: take(&self.noisy), clean: take(&self.clean) }
            })
            .collect()
    }
}

fn accumulate<T: Scalar>(acc: &mut Option<ParamStore<T>>, grads: ParamStore<T>, weight: f64) {
    let w: T = cast(weight);
    match acc {
        None => {
            let mut g = grads;
            let names: Vec<String> = g.names().map(str::to_string).collect();
            for n in names {
                g.get_mut(&n).expect("listed").scale_assign(w);
            }
            *acc = Some(g);
        }
        Some(total) => {
            for (name, t) in grads.iter() {
                let mut scaled = t.clone();
                scaled.scale_assign(w);
                total.get_mut(name).expect("same parameter set").add_assign(&scaled);
            }
        }
    }
}

fn finite(step: usize, what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { step, detail: format!("{what} = {v}") })
    }
}

/// Model plus optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub cfg: TrainConfig,
    pub model: Segan<T>,
    g_opt: RmsProp<T>,
    d_opt: RmsProp<T>,
    step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Segan<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = cfg.optimizer();
        Ok(Self { cfg, model, g_opt: RmsProp::new(opt), d_opt: RmsProp::new(opt), step: 0 })
    }

    /// Steps completed so far.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Freezes the discriminator's reference statistics from real pairs.
    pub fn set_reference(&mut self, batch: &Batch<T>) -> Result<()> {
        self.model.discriminator.set_reference(&batch.clean, &batch.noisy)
    }

    /// Latent input for micro-batch `m` of the current step.
    pub fn z_for(&self, batch: usize, micro: usize) -> Tensor<T> {
        let [b, l, c] = self.model.generator.z_shape(batch);
        sample_z(b, l, c, derive_seed(self.cfg.seed, 4, (self.step as u64) << 16 | micro as u64))
    }

    fn generate(&self, noisy: &Tensor<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.model.generator.enhance(noisy, z)
    }

    /// Discriminator loss `½·mean((D(candidate, noisy) − target)²)` and its
    /// parameter gradients.
    fn d_loss(&self, candidate: &Tensor<T>, noisy: &Tensor<T>, target: f64) -> Result<(f64, ParamStore<T>)> {
        let mut g = Graph::new();
        let c = g.constant(candidate.clone());
        let n = g.constant(noisy.clone());
        let (score, bound) = self.model.discriminator.forward(&mut g, c, n, true)?;
        let loss = g.lsq_loss(score, target)?;
        let grads = g.backward(loss)?;
        Ok((g.item(loss).to_f64().unwrap_or(f64::NAN), bound.gradients(&g, &grads)))
    }

    fn d_phase(&mut self, micro: &[Batch<T>], fakes: Option<&[Tensor<T>]>) -> Result<f64> {
        let total: usize = micro.iter().map(Batch::size).sum();
        let mut acc = None;
        let mut loss = 0.0;
        for (m, b) in micro.iter().enumerate() {
            let (candidate, target) = match fakes {
                None => (&b.clean, 1.0),
                Some(f) => (&f[m], 0.0),
            };
            let (l, grads) = self.d_loss(candidate, &b.noisy, target)?;
            let w = b.size() as f64 / total as f64;
            loss += w * l;
            accumulate(&mut acc, grads, w);
        }
        let what = if fakes.is_some() { "d_fake" } else { "d_real" };
        finite(self.step + 1, what, loss)?;
        self.d_opt.step(&mut self.model.discriminator.params, &acc.expect("non-empty batch"));
        Ok(loss)
    }

    /// Phase 1: discriminator toward 1 on `(clean, noisy)`.
    pub fn d_step_real(&mut self, batch: &Batch<T>) -> Result<f64> {
        let micro = batch.split(self.cfg.micro());
        self.d_phase(&micro, None)
    }

    /// Phase 2: discriminator toward 0 on `(G(z, noisy), noisy)`.
    pub fn d_step_fake(&mut self, batch: &Batch<T>) -> Result<f64> {
        let micro = batch.split(self.cfg.micro());
        let fakes = micro
            .iter()
            .enumerate()
            .map(|(m, b)| self.generate(&b.noisy, &self.z_for(b.size(), m)))
            .collect::<Result<Vec<_>>>()?;
        self.d_phase(&micro, Some(&fakes))
    }

    /// Phase 3: generator update on `½·mean((D(G)−1)²) + λ·mean|G − clean|`
    /// with the discriminator frozen; without adversarial training only the L1
    /// term is used. Returns `(g_adv, g_l1)`.
    pub fn g_step(&mut self, batch: &Batch<T>) -> Result<(f64, f64)> {
        let micro = batch.split(self.cfg.micro());
        let total = batch.size();
        let mut acc = None;
        let (mut adv_sum, mut l1_sum) = (0.0, 0.0);
        for (m, b) in micro.iter().enumerate() {
            let mut g = Graph::new();
            let noisy = g.constant(b.noisy.clone());
            let clean = g.constant(b.clean.clone());
            let z = g.constant(self.z_for(b.size(), m));
            let (out, bound) = self.model.generator.forward(&mut g, noisy, z, true, Ablation::default())?;
            let l1 = g.l1_loss(out, clean)?;
            let weighted_l1 = g.scale(l1, self.cfg.lambda_l1)?;
            let (loss, adv) = if self.cfg.adversarial {
                let (score, _) = self.model.discriminator.forward(&mut g, out, noisy, false)?;
                let adv = g.lsq_loss(score, 1.0)?;
                (g.add(adv, weighted_l1)?, Some(adv))
            } else {
                (weighted_l1, None)
            };
            let grads = g.backward(loss)?;
            let w = b.size() as f64 / total as f64;
            l1_sum += w * g.item(l1).to_f64().unwrap_or(f64::NAN);
            if let Some(adv) = adv {
                adv_sum += w * g.item(adv).to_f64().unwrap_or(f64::NAN);
            }
            accumulate(&mut acc, bound.gradients(&g, &grads), w);
        }
        finite(self.step + 1, "g_adv", adv_sum)?;
        finite(self.step + 1, "g_l1", l1_sum)?;
        self.g_opt.step(&mut self.model.generator.params, &acc.expect("non-empty batch"));
        Ok((adv_sum, l1_sum))
    }

    /// One full step: D on real, D on fake, then G (adversarial mode), or the
    /// generator-only L1 step.
    pub fn train_step(&mut self, batch: &Batch<T>) -> Result<StepReport> {
        self.train_step_observed(batch, |_, _| {})
    }

    /// [`Self::train_step`], calling `observe` with the model before the first
    /// phase and after every phase.
    pub fn train_step_observed(&mut self, batch: &Batch<T>, mut observe: impl FnMut(Phase, &Segan<T>)) -> Result<StepReport> {
        observe(Phase::Start, &self.model);
        let (d_real, d_fake) = if self.cfg.adversarial {
            if !self.model.discriminator.has_reference() {
                return Err(Error::MissingRefBatch);
            }
            let real = self.d_step_real(batch)?;
            observe(Phase::DiscriminatorReal, &self.model);
            let fake = self.d_step_fake(batch)?;
            observe(Phase::DiscriminatorFake, &self.model);
            (real, fake)
        } else {
            (0.0, 0.0)
        };
        let (g_adv, g_l1) = self.g_step(batch)?;
        observe(Phase::Generator, &self.model);
        self.step += 1;
        Ok(StepReport { step: self.step, d_real, d_fake, g_adv, g_l1 })
    }

    /// Mean L1 distance between `G(z, noisy)` and clean over `pairs`, with a
    /// fixed latent seed.
    pub fn evaluate_l1(&self, pairs: &[TrainingPair], z_seed: u64) -> Result<f64> {
        let refs: Vec<&TrainingPair> = pairs.iter().collect();
        let mut total = 0.0;
        for (i, group) in refs.chunks(self.cfg.micro().max(1)).enumerate() {
            let b = Batch::<T>::from_pairs(group)?;
            let [n, l, c] = self.model.generator.z_shape(b.size());
            let z = sample_z(n, l, c, derive_seed(z_seed, 7, i as u64));
            let out = self.generate(&b.noisy, &z)?;
            total += out
                .data()
                .iter()
                .zip(b.clean.data())
                .map(|(a, c)| (*a - *c).abs().to_f64().unwrap_or(f64::NAN))
                .sum::<f64>();
        }
        Ok(total / (pairs.len() * pairs.first().map_or(1, |p| p.clean.len())) as f64)
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub reports: Vec<StepReport>,
    pub final_checkpoint: PathBuf,
}

pub fn checkpoint_name(step: usize) -> String {
    format!("ckpt_{step:07}.sgn")
}

pub const FINAL_CHECKPOINT: &str = "final.sgn";

/// Runs epochs of shuffled batches, writing `loss.csv`, `config.txt`,
/// periodic checkpoints and `final.sgn` into `out_dir`.
pub fn train(
    model: Segan<f32>,
    cfg: &TrainConfig,
    pairs: &[TrainingPair],
    out_dir: &Path,
    mut on_step: impl FnMut(&StepReport),
) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if pairs[0].noisy.len() != model.generator.cfg.window {
        return Err(Error::ShapeMismatch {
            op: "train",
            detail: format!("pairs of {} samples, model window {}", pairs[0].noisy.len(), model.generator.cfg.window),
        });
    }
    fs::create_dir_all(out_dir)?;
    let mut config = String::new();
    for (k, v) in model.generator.cfg.to_pairs() {
        writeln!(config, "model.{k}={v}").expect("string write");
    }
    for (k, v) in cfg.to_pairs() {
        writeln!(config, "train.{k}={v}").expect("string write");
    }
    fs::write(out_dir.join("config.txt"), config)?;

    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut log = String::from(LOSS_LOG_HEADER);
    log.push('\n');
    let mut reports = Vec::new();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 5, epoch as u64)));
        for idx in order.chunks(cfg.batch_size) {
            let refs: Vec<&TrainingPair> = idx.iter().map(|&i| &pairs[i]).collect();
            let batch = Batch::from_pairs(&refs)?;
            if cfg.adversarial && !trainer.model.discriminator.has_reference() {
                trainer.set_reference(&batch)?;
            }
            let report = trainer.train_step(&batch)?;
            on_step(&report);
            log.push_str(&report.csv_row());
            log.push('\n');
            reports.push(report);
            if report.step % cfg.checkpoint_every == 0 {
                trainer.model.save_checkpoint(out_dir.join(checkpoint_name(report.step)))?;
            }
            if cfg.max_steps.is_some_and(|m| report.step >= m) {
                break 'epochs;
            }
        }
    }
    fs::write(out_dir.join("loss.csv"), log)?;
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    trainer.model.save_checkpoint(&final_checkpoint)?;
    Ok(TrainOutcome { reports, final_checkpoint })
}

/// Latent input used at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZMode {
    /// Standard normal draws from this seed.
    Seeded(u64),
    Zero,
}

/// Preemphasis, non-overlapping windows through G, reassembly and
/// deemphasis. The output has the input's length and rate.
pub fn enhance_waveform(generator: &Generator<f32>, noisy: &Waveform, z_mode: ZMode) -> Result<Waveform> {
    let window = generator.cfg.window;
    let pre = preemphasis(noisy, PREEMPHASIS);
    let chunks = chunk(&pre.samples, window, window)?;
    let [_, zl, zc] = generator.z_shape(1);
    let outputs = chunks
        .chunks
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let x = Tensor::from_vec(&[1, window, 1], c.iter().map(|&v| v as f32).collect())?;
            let z = match z_mode {
                ZMode::Seeded(seed) => sample_z(1, zl, zc, derive_seed(seed, 6, i as u64)),
                ZMode::Zero => Tensor::zeros(&[1, zl, zc]),
            };
            let y = generator.enhance(&x, &z)?;
            Ok(y.data().iter().map(|&v| v as f64).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let joined = reassemble(&outputs, window, chunks.pad_len)?;
    Ok(deemphasis(&Waveform::new(joined, noisy.sample_rate), PREEMPHASIS))
}

/// Enhances a WAV file (16 kHz, or 48 kHz resampled) with the generator of a
/// checkpoint and writes a 16 kHz WAV.
pub fn enhance_file(checkpoint: &Path, cfg: &GeneratorConfig, in_wav: &Path, out_wav: &Path, z_mode: ZMode) -> Result<()> {
    let generator = Generator::load_checkpoint(cfg, checkpoint)?;
    let noisy = audio_io::read_wav_16k(in_wav)?;
    let out = enhance_waveform(&generator, &noisy, z_mode)?;
    audio_io::write_wav(&out, out_wav)
}
