//! Central finite-difference verification of the reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var, VbnStats};
use crate::error::Result;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so that coordinates whose true
/// gradient is ~0 are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares backward against `(f(θ+ε) − f(θ−ε)) / 2ε` on up to `max_coords`
/// coordinates sampled across all `inputs`. `build` must return a scalar node.
pub fn grad_check<F>(build: F, inputs: &[Tensor<f64>], eps: f64, max_coords: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok((g, vars, out))
    };
    let (g, vars, out) = eval(inputs)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(&g, v)).collect();

    let offsets: Vec<usize> = inputs
        .iter()
        .scan(0, |acc, t| {
            let start = *acc;
            *acc += t.len();
            Some(start)
        })
        .collect();
    let total: usize = inputs.iter().map(Tensor::len).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if total <= max_coords {
        (0..total).collect()
    } else {
        sample(&mut rng, total, max_coords).into_vec()
    };

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for &flat in &picks {
        let which = offsets.partition_point(|&o| o <= flat) - 1;
        let idx = flat - offsets[which];
        let orig = probe[which].data()[idx];
        probe[which].data_mut()[idx] = orig + eps;
        let (gp, _, op) = eval(&probe)?;
        probe[which].data_mut()[idx] = orig - eps;
        let (gm, _, om) = eval(&probe)?;
        probe[which].data_mut()[idx] = orig;
        let numeric = (gp.item(op) - gm.item(om)) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[which].data()[idx], numeric));
    }
    Ok(GradCheckReport { max_rel_error: worst, coords: picks.len() })
}

/// Random values bounded away from zero, so rectifier kinks are never crossed.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, seed).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

fn probe_for(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, seed ^ 0x9e37_79b9)
}

/// Reduces an op output to a scalar with a fixed random probe.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let probe = probe_for(g.value(y).shape(), seed);
    g.weighted_sum(y, probe)
}

pub const SUITE_COORDS: usize = 128;

/// Finite-difference check of every differentiable op at `eps`.
pub fn op_suite(eps: f64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let n = SUITE_COORDS;
    let mut out = Vec::new();

    out.push((
        "conv1d",
        grad_check(
            |g, v| {
                let y = g.conv1d(v[0], v[1], v[2], 2)?;
                project(g, y, 1)
            },
            &[
                Tensor::randn(&[2, 64, 3], 1.0, 10),
                Tensor::randn(&[31, 3, 4], 0.2, 11),
                Tensor::randn(&[4], 0.2, 12),
            ],
            eps,
            n,
            1,
        )?,
    ));
    out.push((
        "conv1d_transpose",
        grad_check(
            |g, v| {
                let y = g.conv1d_transpose(v[0], v[1], v[2], 2)?;
                project(g, y, 2)
            },
            &[
                Tensor::randn(&[2, 16, 4], 1.0, 20),
                Tensor::randn(&[31, 3, 4], 0.2, 21),
                Tensor::randn(&[3], 0.2, 22),
            ],
            eps,
            n,
            2,
        )?,
    ));
    out.push((
        "prelu",
        grad_check(
            |g, v| {
                let y = g.prelu(v[0], v[1])?;
                project(g, y, 3)
            },
            &[away_from_zero(&[2, 40, 3], 30), Tensor::from_vec(&[3], vec![0.25, -0.1, 0.6])?],
            eps,
            n,
            3,
        )?,
    ));
    out.push((
        "leaky_relu",
        grad_check(
            |g, v| {
                let y = g.leaky_relu(v[0], 0.3)?;
                project(g, y, 4)
            },
            &[away_from_zero(&[2, 40, 3], 40)],
            eps,
            n,
            4,
        )?,
    ));
    let stats = VbnStats { mean: vec![0.2, -0.4, 0.1], var: vec![1.3, 0.7, 2.0], count: 4.0 };
    out.push((
        "virtual_batch_norm",
        grad_check(
            |g, v| {
                let y = g.virtual_batch_norm(v[0], &stats, v[1], v[2])?;
                project(g, y, 5)
            },
            &[
                Tensor::randn(&[2, 30, 3], 1.0, 50),
                Tensor::from_vec(&[3], vec![1.2, 0.8, -0.5])?,
                Tensor::from_vec(&[3], vec![0.1, 0.0, -0.3])?,
            ],
            eps,
            n,
            5,
        )?,
    ));
    out.push((
        "concat_channels",
        grad_check(
            |g, v| {
                let y = g.concat_channels(v[0], v[1])?;
                project(g, y, 6)
            },
            &[Tensor::randn(&[2, 20, 2], 1.0, 60), Tensor::randn(&[2, 20, 3], 1.0, 61)],
            eps,
            n,
            6,
        )?,
    ));
    out.push((
        "linear",
        grad_check(
            |g, v| {
                let y = g.linear(v[0], v[1], v[2])?;
                project(g, y, 7)
            },
            &[Tensor::randn(&[4, 8, 4], 1.0, 70), Tensor::randn(&[32, 1], 0.3, 71), Tensor::randn(&[1], 0.3, 72)],
            eps,
            n,
            7,
        )?,
    ));
    out.push((
        "tanh",
        grad_check(
            |g, v| {
                let y = g.tanh(v[0])?;
                project(g, y, 8)
            },
            &[Tensor::randn(&[2, 64, 2], 1.0, 80)],
            eps,
            n,
            8,
        )?,
    ));
    let l1_a = Tensor::randn(&[2, 64, 1], 1.0, 90);
    let mut l1_b = away_from_zero(&[2, 64, 1], 91);
    l1_b.add_assign(&l1_a);
    out.push((
        "l1_loss",
        grad_check(
            |g, v| g.l1_loss(v[0], v[1]),
            &[l1_a, l1_b],
            eps,
            n,
            9,
        )?,
    ));
    // conv → prelu → least-squares loss, the shape of every encoder stage
    out.push((
        "lsq_loss_composite",
        grad_check(
            |g, v| {
                let h = g.conv1d(v[0], v[1], v[2], 2)?;
                let h = g.prelu(h, v[3])?;
                let h = g.conv1d(h, v[4], v[5], 1)?;
                let d = g.linear(h, v[6], v[7])?;
                g.lsq_loss(d, 1.0)
            },
            &[
                Tensor::randn(&[3, 32, 2], 1.0, 100),
                Tensor::randn(&[31, 2, 4], 0.3, 101),
                Tensor::randn(&[4], 0.3, 102),
                Tensor::from_vec(&[4], vec![0.25, 0.1, -0.2, 0.4])?,
                Tensor::randn(&[1, 4, 1], 0.5, 103),
                Tensor::randn(&[1], 0.3, 104),
                Tensor::randn(&[16, 1], 0.5, 105),
                Tensor::randn(&[1], 0.3, 106),
            ],
            eps,
            n,
            10,
        )?,
    ));
    Ok(out)
}
