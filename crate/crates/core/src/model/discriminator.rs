use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{init_weight, GeneratorConfig};
use crate::error::{Error, Result};
use crate::tensor::{cast, Bindings, Graph, ParamStore, Scalar, Tensor, Var, VbnStats, VBN_EPS};

/// Negative-side slope of the discriminator rectifiers.
pub const LEAKY_SLOPE: f64 = 0.3;

/// Conditioned discriminator: the encoder conv stack over a two-channel
/// `(candidate, noisy)` input, virtual batch norm and LeakyReLU per stage, a
/// 1×1 convolution down to one channel and a single linear output neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    pub cfg: GeneratorConfig,
    pub params: ParamStore<T>,
    reference: Option<Vec<VbnStats<T>>>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn build(cfg: &GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut c_in = 2;
        for (i, &c) in cfg.enc_channels.iter().enumerate() {
            params.insert(format!("d.conv{i}.w"), init_weight(&[cfg.filter_width, c_in, c], &mut rng));
            params.insert(format!("d.conv{i}.b"), Tensor::zeros(&[c]));
            params.insert(format!("d.vbn{i}.gamma"), Tensor::full(&[c], T::one()));
            params.insert(format!("d.vbn{i}.beta"), Tensor::zeros(&[c]));
            c_in = c;
        }
        params.insert("d.head.w", init_weight(&[1, c_in, 1], &mut rng));
        params.insert("d.head.b", Tensor::zeros(&[1]));
        params.insert("d.out.w", init_weight(&[cfg.bottleneck_len(), 1], &mut rng));
        params.insert("d.out.b", Tensor::zeros(&[1]));
        Ok(Self { cfg: cfg.clone(), params, reference: None })
    }

    /// Number of inputs of the final linear neuron.
    pub fn linear_inputs(&self) -> usize {
        self.cfg.bottleneck_len()
    }

    pub fn has_reference(&self) -> bool {
        self.reference.is_some()
    }

    pub fn reference(&self) -> Option<&[VbnStats<T>]> {
        self.reference.as_deref()
    }

    /// Freezes the per-layer reference statistics from one batch of
    /// `(candidate, noisy)` pairs. Each stage's statistics are taken over the
    /// whole batch, which is then normalized with them before the next stage.
    pub fn set_reference(&mut self, candidate: &Tensor<T>, noisy: &Tensor<T>) -> Result<()> {
        let mut g = Graph::new();
        let a = g.constant(candidate.clone());
        let b = g.constant(noisy.clone());
        let mut h = g.concat_channels(a, b)?;
        let mut stats = Vec::with_capacity(self.cfg.layers());
        for i in 0..self.cfg.layers() {
            let w = self.params.bind(&mut g, &format!("d.conv{i}.w"), false)?;
            let bias = self.params.bind(&mut g, &format!("d.conv{i}.b"), false)?;
            h = g.conv1d(h, w, bias, self.cfg.stride)?;
            let s = VbnStats::from_batch(g.value(h))?;
            let normalized = batch_normalize(g.value(h), &s, self.params.require(&format!("d.vbn{i}.gamma"))?, self.params.require(&format!("d.vbn{i}.beta"))?);
            h = g.constant(normalized);
            h = g.leaky_relu(h, LEAKY_SLOPE)?;
            stats.push(s);
        }
        self.reference = Some(stats);
        Ok(())
    }

    /// Records `D(candidate, noisy) -> (B, 1)`. Channel 0 of the stacked input
    /// is the candidate (clean or enhanced), channel 1 the noisy condition.
    pub fn forward(&self, g: &mut Graph<T>, candidate: Var, noisy: Var, trainable: bool) -> Result<(Var, Bindings)> {
        let reference = self.reference.as_ref().ok_or(Error::MissingRefBatch)?;
        let mut bound = Bindings::new();
        let mut p = |g: &mut Graph<T>, name: &str| bound.bind(&self.params, g, name, trainable);

        let mut h = g.concat_channels(candidate, noisy)?;
        let (_, len, ch) = g.value(h).dims3("d_forward")?;
        if len != self.cfg.window || ch != 2 {
            return Err(Error::ShapeMismatch {
                op: "d_forward",
                detail: format!("stacked input (_, {len}, {ch}), model expects (_, {}, 2)", self.cfg.window),
            });
        }
        for (i, stats) in reference.iter().enumerate() {
            let (w, b) = (p(g, &format!("d.conv{i}.w"))?, p(g, &format!("d.conv{i}.b"))?);
            let (gamma, beta) = (p(g, &format!("d.vbn{i}.gamma"))?, p(g, &format!("d.vbn{i}.beta"))?);
            h = g.conv1d(h, w, b, self.cfg.stride)?;
            h = g.virtual_batch_norm(h, stats, gamma, beta)?;
            h = g.leaky_relu(h, LEAKY_SLOPE)?;
        }
        let (w, b) = (p(g, "d.head.w")?, p(g, "d.head.b")?);
        h = g.conv1d(h, w, b, 1)?;
        let (w, b) = (p(g, "d.out.w")?, p(g, "d.out.b")?);
        let score = g.linear(h, w, b)?;
        Ok((score, bound))
    }

    /// Graph-free scoring of `(B, window, 1)` candidate/noisy batches.
    pub fn score(&self, candidate: &Tensor<T>, noisy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let a = g.constant(candidate.clone());
        let b = g.constant(noisy.clone());
        let (s, _) = self.forward(&mut g, a, b, false)?;
        Ok(g.value(s).clone())
    }

    /// Reference statistics as named tensors (`d.vbn{i}.ref_mean|ref_var|ref_count`).
    pub fn reference_tensors(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        if let Some(stats) = &self.reference {
            for (i, s) in stats.iter().enumerate() {
                out.insert(format!("d.vbn{i}.ref_mean"), Tensor::from_vec(&[s.mean.len()], s.mean.clone()).expect("1-D"));
                out.insert(format!("d.vbn{i}.ref_var"), Tensor::from_vec(&[s.var.len()], s.var.clone()).expect("1-D"));
                out.insert(format!("d.vbn{i}.ref_count"), Tensor::from_vec(&[1], vec![s.count]).expect("1-D"));
            }
        }
        out
    }

    /// Restores reference statistics stored by [`Self::reference_tensors`]; leaves
    /// them unset if the checkpoint has none.
    pub(crate) fn restore_reference(&mut self, file: &ParamStore<f32>) -> Result<()> {
        if file.get("d.vbn0.ref_mean").is_none() {
            self.reference = None;
            return Ok(());
        }
        let mut stats = Vec::with_capacity(self.cfg.layers());
        for (i, &c) in self.cfg.enc_channels.iter().enumerate() {
            let get = |suffix: &str, len: usize| -> Result<Vec<T>> {
                let name = format!("d.vbn{i}.{suffix}");
                let t = file.get(&name).ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {name}")))?;
                if t.shape() != [len] {
                    return Err(Error::CorruptCheckpoint(format!("tensor {name} has shape {:?}, expected [{len}]", t.shape())));
                }
                Ok(t.cast::<T>().into_data())
            };
            stats.push(VbnStats { mean: get("ref_mean", c)?, var: get("ref_var", c)?, count: get("ref_count", 1)?[0] });
        }
        self.reference = Some(stats);
        Ok(())
    }
}

fn batch_normalize<T: Scalar>(x: &Tensor<T>, s: &VbnStats<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Tensor<T> {
    let c = s.mean.len();
    let eps: T = cast(VBN_EPS);
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        for ch in 0..c {
            row[ch] = gamma.data()[ch] * (row[ch] - s.mean[ch]) / (s.var[ch] + eps).sqrt() + beta.data()[ch];
        }
    }
    out
}
