use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{init_weight, GeneratorConfig};
use crate::error::{Error, Result};
use crate::tensor::{cast, Bindings, Graph, ParamStore, Scalar, Tensor, Var};

/// Initial PReLU slope of every channel.
pub const PRELU_INIT: f64 = 0.25;

/// Test-only path removals used to probe the role of the skip connections and
/// of the thought vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablation {
    /// Multiply every encoder→decoder skip by zero.
    pub zero_skips: bool,
    /// Multiply the thought vector by zero before it meets z.
    pub sever_bottleneck: bool,
}

/// Fully convolutional encoder-decoder with skip connections and a latent
/// input concatenated at the bottleneck.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    pub cfg: GeneratorConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn build(cfg: &GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let w = cfg.filter_width;
        let mut c_in = 1;
        for (i, &c) in cfg.enc_channels.iter().enumerate() {
            params.insert(format!("g.enc{i}.w"), init_weight(&[w, c_in, c], &mut rng));
            params.insert(format!("g.enc{i}.b"), Tensor::zeros(&[c]));
            params.insert(format!("g.enc{i}.alpha"), Tensor::full(&[c], cast(PRELU_INIT)));
            c_in = c;
        }
        for j in 0..cfg.layers() {
            let (cin, cout) = (cfg.decoder_in_channels(j), cfg.decoder_out_channels(j));
            params.insert(format!("g.dec{j}.w"), init_weight(&[w, cout, cin], &mut rng));
            params.insert(format!("g.dec{j}.b"), Tensor::zeros(&[cout]));
            if j + 1 < cfg.layers() {
                params.insert(format!("g.dec{j}.alpha"), Tensor::full(&[cout], cast(PRELU_INIT)));
            }
        }
        Ok(Self { cfg: cfg.clone(), params })
    }

    /// Shape of the latent input for a batch.
    pub fn z_shape(&self, batch: usize) -> [usize; 3] {
        [batch, self.cfg.bottleneck_len(), self.cfg.z_channels]
    }

    /// Records `noisy (B, window, 1), z -> enhanced (B, window, 1)` on `g`.
    /// Parameters are gradient-tracked when `trainable`.
    pub fn forward(&self, g: &mut Graph<T>, noisy: Var, z: Var, trainable: bool, ablation: Ablation) -> Result<(Var, Bindings)> {
        let cfg = &self.cfg;
        let (batch, len, ch) = g.value(noisy).dims3("g_forward")?;
        if len != cfg.window || ch != 1 {
            return Err(Error::ShapeMismatch {
                op: "g_forward",
                detail: format!("input (_, {len}, {ch}), model expects (_, {}, 1)", cfg.window),
            });
        }
        if g.value(z).shape() != self.z_shape(batch) {
            return Err(Error::ShapeMismatch {
                op: "g_forward",
                detail: format!("z {:?}, expected {:?}", g.value(z).shape(), self.z_shape(batch)),
            });
        }
        let mut bound = Bindings::new();
        let mut p = |g: &mut Graph<T>, name: String| bound.bind(&self.params, g, &name, trainable);

        let mut skips = Vec::with_capacity(cfg.layers());
        let mut h = noisy;
        for i in 0..cfg.layers() {
            let (w, b, a) = (p(g, format!("g.enc{i}.w"))?, p(g, format!("g.enc{i}.b"))?, p(g, format!("g.enc{i}.alpha"))?);
            h = g.conv1d(h, w, b, cfg.stride)?;
            h = g.prelu(h, a)?;
            skips.push(h);
        }
        let thought = skips.pop().expect("at least one layer");
        let thought = if ablation.sever_bottleneck { g.scale(thought, 0.0)? } else { thought };
        h = g.concat_channels(thought, z)?;

        for j in 0..cfg.layers() {
            let (w, b) = (p(g, format!("g.dec{j}.w"))?, p(g, format!("g.dec{j}.b"))?);
            h = g.conv1d_transpose(h, w, b, cfg.stride)?;
            if j + 1 < cfg.layers() {
                let a = p(g, format!("g.dec{j}.alpha"))?;
                h = g.prelu(h, a)?;
                let skip = skips.pop().expect("one skip per inner decoder stage");
                let skip = if ablation.zero_skips { g.scale(skip, 0.0)? } else { skip };
                h = g.concat_channels(h, skip)?;
            }
        }
        let out = g.tanh(h)?;
        Ok((out, bound))
    }

    /// Graph-free inference on a `(B, window, 1)` batch.
    pub fn enhance(&self, noisy: &Tensor<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(noisy.clone());
        let z = g.constant(z.clone());
        let (out, _) = self.forward(&mut g, x, z, false, Ablation::default())?;
        Ok(g.value(out).clone())
    }
}
