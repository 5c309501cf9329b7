use proptest::prelude::*;

use segan::model::{Ablation, Discriminator, Generator, GeneratorConfig, Segan};
use segan::tensor::{Graph, Tensor};
use segan::Error;

fn tiny() -> GeneratorConfig {
    GeneratorConfig { window: 64, filter_width: 5, stride: 2, enc_channels: vec![3, 4], z_channels: 2 }
}

fn forward<T: segan::tensor::Scalar>(gen: &Generator<T>, x: &Tensor<T>, z: &Tensor<T>, ablation: Ablation) -> Tensor<T> {
    let mut g = Graph::new();
    let (xv, zv) = (g.constant(x.clone()), g.constant(z.clone()));
    let (out, _) = gen.forward(&mut g, xv, zv, false, ablation).unwrap();
    g.value(out).clone()
}

#[test]
fn paper_scale_generator_maps_a_window_to_a_window() {
    let cfg = GeneratorConfig::default();
    let gen = Generator::<f32>::build(&cfg, 0).unwrap();
    assert_eq!(gen.z_shape(1), [1, 8, 1024]);
    let x = Tensor::<f32>::randn(&[1, 16384, 1], 0.1, 1);
    let z = Tensor::<f32>::randn(&[1, 8, 1024], 1.0, 2);
    let y = gen.enhance(&x, &z).unwrap();
    assert_eq!(y.shape(), &[1, 16384, 1]);
    assert!(y.data().iter().all(|v| v.abs() < 1.0));
    // 22 conv layers, each with weights and bias
    assert_eq!(cfg.conv_layer_count(), 22);
}

#[test]
fn generator_rejects_wrong_shapes() {
    let gen = Generator::<f64>::build(&tiny(), 0).unwrap();
    let z = Tensor::<f64>::zeros(&gen.z_shape(1));
    assert!(matches!(gen.enhance(&Tensor::zeros(&[1, 32, 1]), &z), Err(Error::ShapeMismatch { .. })));
    assert!(matches!(gen.enhance(&Tensor::zeros(&[1, 64, 1]), &Tensor::zeros(&[1, 8, 2])), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn skips_carry_signal() {
    let gen = Generator::<f64>::build(&GeneratorConfig::reduced(), 3).unwrap();
    let x = Tensor::<f64>::randn(&[1, 1024, 1], 0.3, 4);
    let z = Tensor::<f64>::randn(&gen.z_shape(1), 1.0, 5);
    let full = forward(&gen, &x, &z, Ablation::default());
    let ablated = forward(&gen, &x, &z, Ablation { zero_skips: true, ..Default::default() });
    let diff = full.data().iter().zip(ablated.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-6, "{diff}");
    assert_eq!(forward(&gen, &x, &z, Ablation::default()), full);
}

#[test]
fn gradient_reaches_the_input_through_skips_alone() {
    let gen = Generator::<f64>::build(&tiny(), 6).unwrap();
    let x = Tensor::<f64>::randn(&[1, 64, 1], 0.5, 7);
    let z = Tensor::<f64>::randn(&gen.z_shape(1), 1.0, 8);
    let input_grad = |ablation: Ablation| {
        let mut g = Graph::new();
        let (xv, zv) = (g.variable(x.clone()), g.constant(z.clone()));
        let (out, _) = gen.forward(&mut g, xv, zv, false, ablation).unwrap();
        let loss = g.sum(out).unwrap();
        let grads = g.backward(loss).unwrap();
        grads.get_or_zeros(&g, xv).max_abs()
    };
    assert!(input_grad(Ablation { sever_bottleneck: true, zero_skips: false }) > 1e-8);
    assert_eq!(input_grad(Ablation { sever_bottleneck: true, zero_skips: true }), 0.0);

    let cfg = GeneratorConfig { enc_channels: vec![3, 4, 4], ..tiny() };
    let gen = Generator::<f64>::build(&cfg, 6).unwrap();
    let z = Tensor::<f64>::randn(&gen.z_shape(1), 1.0, 8);
    let mut g = Graph::new();
    let (xv, zv) = (g.constant(x.clone()), g.constant(z));
    let (out, bound) = gen.forward(&mut g, xv, zv, true, Ablation { sever_bottleneck: true, zero_skips: false }).unwrap();
    let loss = g.sum(out).unwrap();
    let grads = bound.gradients(&g, &g.backward(loss).unwrap());
    // every encoder stage with a skip still learns; the deepest feeds only the bottleneck
    for k in 0..cfg.layers() - 1 {
        assert!(grads.get(&format!("g.enc{k}.w")).unwrap().max_abs() > 1e-8, "enc{k}");
    }
    assert_eq!(grads.get(&format!("g.enc{}.w", cfg.layers() - 1)).unwrap().max_abs(), 0.0);
}

#[test]
fn generator_parameter_gradients_match_finite_differences() {
    let cfg = tiny();
    let gen = Generator::<f64>::build(&cfg, 9).unwrap();
    let x = Tensor::<f64>::randn(&[2, 64, 1], 0.5, 10);
    let z = Tensor::<f64>::randn(&gen.z_shape(2), 1.0, 11);
    let target = Tensor::<f64>::randn(&[2, 64, 1], 0.1, 12);
    let loss_of = |gen: &Generator<f64>| -> (f64, segan::tensor::ParamStore<f64>) {
        let mut g = Graph::new();
        let (xv, zv, tv) = (g.constant(x.clone()), g.constant(z.clone()), g.constant(target.clone()));
        let (out, bound) = gen.forward(&mut g, xv, zv, true, Ablation::default()).unwrap();
        let l1 = g.l1_loss(out, tv).unwrap();
        let lsq = g.lsq_loss(out, 0.25).unwrap();
        let loss = g.add(l1, lsq).unwrap();
        let grads = g.backward(loss).unwrap();
        (g.item(loss), bound.gradients(&g, &grads))
    };
    let (_, analytic) = loss_of(&gen);
    let eps = 1e-6;
    let mut checked = 0;
    for (name, grad) in analytic.iter() {
        for idx in (0..grad.len()).step_by((grad.len() / 4).max(1)) {
            let mut plus = gen.clone();
            plus.params.get_mut(name).unwrap().data_mut()[idx] += eps;
            let mut minus = gen.clone();
            minus.params.get_mut(name).unwrap().data_mut()[idx] -= eps;
            let numeric = (loss_of(&plus).0 - loss_of(&minus).0) / (2.0 * eps);
            let a = grad.data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "{name}[{idx}]: analytic {a}, numeric {numeric}");
            checked += 1;
        }
    }
    assert!(checked >= 40, "{checked}");
}

#[test]
fn discriminator_is_conditioned_on_channel_order() {
    let cfg = GeneratorConfig::reduced();
    let mut d = Discriminator::<f64>::build(&cfg, 13).unwrap();
    let a = Tensor::<f64>::randn(&[2, 1024, 1], 0.3, 14);
    let b = Tensor::<f64>::randn(&[2, 1024, 1], 0.3, 15);
    assert!(matches!(d.score(&a, &b), Err(Error::MissingRefBatch)));
    d.set_reference(&a, &b).unwrap();
    let ab = d.score(&a, &b).unwrap();
    let ba = d.score(&b, &a).unwrap();
    assert_eq!(ab.shape(), &[2, 1]);
    assert!(ab.data().iter().zip(ba.data()).any(|(x, y)| (x - y).abs() > 1e-9));

    let names: Vec<String> = d.params.names().filter(|n| n.ends_with(".w") || n.ends_with(".b")).map(str::to_string).collect();
    for n in names {
        let t = d.params.get_mut(&n).unwrap();
        *t = Tensor::zeros(t.shape());
    }
    assert!(d.score(&a, &b).unwrap().data().iter().all(|v| *v == 0.0));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = GeneratorConfig::reduced();
    let mut model = Segan::<f32>::build(&cfg, 16).unwrap();
    let x = Tensor::<f32>::randn(&[3, 1024, 1], 0.3, 17);
    model.discriminator.set_reference(&x, &x).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sgn");
    model.save_checkpoint(&path).unwrap();
    let back = Segan::load_checkpoint(&cfg, &path).unwrap();
    let bits = |m: &Segan<f32>| -> Vec<(String, Vec<u32>)> {
        m.tensors().iter().map(|(n, t)| (n.to_string(), t.data().iter().map(|v| v.to_bits()).collect())).collect()
    };
    assert_eq!(bits(&back), bits(&model));
    assert_eq!(back.discriminator.score(&x, &x).unwrap(), model.discriminator.score(&x, &x).unwrap());

    let other = GeneratorConfig { enc_channels: vec![16, 32, 64, 64], ..cfg.clone() };
    assert!(matches!(Segan::load_checkpoint(&other, &path), Err(Error::CorruptCheckpoint(_))));
    let fewer = GeneratorConfig { enc_channels: vec![16, 32, 64], ..cfg };
    assert!(Segan::load_checkpoint(&fewer, &path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_pair_is_adjoint(
        half_width in 0usize..16,
        stride in 1usize..5,
        short in 1usize..20,
        batch in 1usize..3,
        c_in in 1usize..5,
        c_out in 1usize..5,
        seed in any::<u64>(),
    ) {
        let width = 2 * half_width + 1;
        let x = Tensor::<f64>::randn(&[batch, short * stride, c_in], 1.0, seed);
        let y = Tensor::<f64>::randn(&[batch, short, c_out], 1.0, seed ^ 1);
        let w = Tensor::<f64>::randn(&[width, c_in, c_out], 1.0, seed ^ 2);
        let mut g = Graph::new();
        let (xv, yv, wv) = (g.constant(x.clone()), g.constant(y.clone()), g.constant(w));
        let (bo, bi) = (g.constant(Tensor::zeros(&[c_out])), g.constant(Tensor::zeros(&[c_in])));
        let ax = g.conv1d(xv, wv, bo, stride).unwrap();
        let aty = g.conv1d_transpose(yv, wv, bi, stride).unwrap();
        let (lhs, rhs) = (g.value(ax).dot(&y), x.dot(g.value(aty)));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-12));
    }
}
