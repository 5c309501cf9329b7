use indexmap::IndexMap;

use super::params::ParamStore;
use super::{cast, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self { lr: 0.0002, rho: 0.9, eps: 1e-6 }
    }
}

/// One RMSprop update of a flat parameter buffer:
/// `cache ← ρ·cache + (1−ρ)·g²`, `θ ← θ − lr·g / (√cache + ε)`.
pub fn rmsprop_step<T: Scalar>(param: &mut [T], grad: &[T], cache: &mut [T], cfg: &RmsPropConfig) {
    debug_assert_eq!(param.len(), grad.len());
    debug_assert_eq!(param.len(), cache.len());
    let (lr, rho, eps): (T, T, T) = (cast(cfg.lr), cast(cfg.rho), cast(cfg.eps));
    let one_minus_rho = T::one() - rho;
    for ((p, &g), c) in param.iter_mut().zip(grad).zip(cache.iter_mut()) {
        *c = rho * *c + one_minus_rho * g * g;
        *p -= lr * g / (c.sqrt() + eps);
    }
}

/// RMSprop with one zero-initialized cache per named parameter.
#[derive(Debug, Clone)]
pub struct RmsProp<T> {
    pub config: RmsPropConfig,
    cache: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(config: RmsPropConfig) -> Self {
        Self { config, cache: IndexMap::new() }
    }

    /// Updates every parameter that has an entry in `grads`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>) {
        for (name, g) in grads.iter() {
            let Some(p) = params.get_mut(name) else { continue };
            let cache = self
                .cache
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            rmsprop_step(p.data_mut(), g.data(), cache.data_mut(), &self.config);
        }
    }

    pub fn cache(&self, name: &str) -> Option<&Tensor<T>> {
        self.cache.get(name)
    }
}
